import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ossr.synth import GeneratorConfig, generate_splits

settings.register_profile(
    "ossr",
    deadline=None,
    derandomize=True,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ossr")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def small_gen_cfg():
    # short records so fusion and training stay fast
    return GeneratorConfig(seed=11, records_per_class=40, record_length=1024)


@pytest.fixture(scope="session")
def small_splits(small_gen_cfg):
    return generate_splits(small_gen_cfg)


@pytest.fixture(scope="session")
def default_splits():
    return generate_splits(GeneratorConfig(seed=42))


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
