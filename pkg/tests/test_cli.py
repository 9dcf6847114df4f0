import json
import shutil
import subprocess

import pytest

from ossr import __version__
from ossr.cli import DEFAULTS, content_hash, git_blob_hash, main, merge_config
from ossr.errors import UsageError

SMALL = ["--window", "1024", "--time-points", "128", "--hidden", "32,16", "--latent-dim", "4"]


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("OSSR_OUTPUT_ROOT", raising=False)
    return tmp_path


@pytest.fixture
def dataset(workdir):
    assert main(["gen", "--seed", "3", "--records-per-class", "30", "--record-length", "1024", "--out", "data"]) == 0
    return workdir / "data"


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "gen" in capsys.readouterr().out
    assert main(["sweep", "--help"]) == 0


def test_unknown_flag_is_usage_error(capsys):
    assert main(["--bogus"]) == 2
    err = capsys.readouterr().err
    assert "usage:" in err and "--bogus" in err


def test_no_subcommand_is_usage_error():
    assert main([]) == 2


def test_eval_missing_model_names_flag(workdir, capsys):
    assert main(["eval", "--calibration", "x", "--data", "y"]) == 2
    assert "--model" in capsys.readouterr().err


def test_nonexistent_input_path(workdir, capsys):
    assert main(["train", "--data", "nowhere"]) == 2
    assert "--data" in capsys.readouterr().err


def test_config_precedence(workdir, capsys):
    cfg = {"schema_version": 1, "gen": {"seed": 5, "records_per_class": 7}}
    (workdir / "c.json").write_text(json.dumps(cfg))
    assert main(["--config", "c.json", "--print-config", "gen", "--seed", "9"]) == 0
    merged = json.loads(capsys.readouterr().out)["gen"]
    assert merged["seed"] == 9  # CLI beats file
    assert merged["records_per_class"] == 7  # file beats default
    assert merged["record_length"] == DEFAULTS["gen"]["record_length"]


def test_config_file_validation(workdir):
    (workdir / "bad.json").write_text(json.dumps({"schema_version": 1, "gen": {"colour": 1}}))
    assert main(["--config", "bad.json", "gen"]) == 2
    (workdir / "old.json").write_text(json.dumps({"schema_version": 0}))
    assert main(["--config", "old.json", "gen"]) == 2
    assert main(["--config", "missing.json", "gen"]) == 2
    with pytest.raises(UsageError):
        merge_config("gen", {}, {"gen": {"nope": 1}})


def test_git_blob_hash_matches_git(tmp_path):
    p = tmp_path / "f.txt"
    p.write_bytes(b"hello\n")
    assert git_blob_hash(p) == "ce013625030ba8dba906f756967f9e9ca394464a"
    if shutil.which("git"):
        out = subprocess.run(["git", "hash-object", str(p)], capture_output=True, text=True, check=True)
        assert out.stdout.strip() == git_blob_hash(p)


def test_gen_writes_provenance(dataset):
    manifest = json.loads((dataset / "manifest.json").read_text())
    prov = manifest["provenance"]
    assert prov["seed"] == 3 and prov["version"] == __version__
    assert prov["config"]["records_per_class"] == 30


def test_pipeline_and_domain_errors(dataset, capsys):
    assert main(["train", "--data", "data", "--known", "0,1,2", "--epochs", "4", *SMALL, "--out", "m.ckpt"]) == 0
    hist = json.loads((dataset.parent / "m.ckpt.history.json").read_text())
    assert hist["provenance"]["inputs"]["data"] == content_hash(dataset)
    assert len(hist["history"]["val_accuracy"]) == 4

    assert main(["calibrate", "--model", "m.ckpt", "--data", "data", "--out", "d.cal"]) == 0
    cal = json.loads((dataset.parent / "d.cal").read_text())
    assert cal["alpha"] == 5.0 and cal["provenance"]["seed"] is not None
    assert [c["class_id"] for c in cal["classes"]] == [0, 1, 2]

    assert main(["eval", "--model", "m.ckpt", "--calibration", "d.cal", "--data", "data",
                 "--policy", "openness-gated", "--out", "e.json"]) == 0
    ev = json.loads((dataset.parent / "e.json").read_text())
    assert ev["mission"]["id"] == 3
    assert ev["report"]["policy"] == "openness-gated"
    assert ev["report"]["active_policy"] in ("evt", "entropy")
    assert sum(map(sum, ev["report"]["confusion"])) == 18  # 3 test records per class

    # known-class mismatch is a usage problem; a corrupted dataset is a domain error
    assert main(["train", "--data", "data", "--known", "7", *SMALL, "--epochs", "1", "--out", "x.ckpt"]) == 2
    (dataset / "test.csv").write_text("0,1,2\n")
    assert main(["eval", "--model", "m.ckpt", "--calibration", "d.cal", "--data", "data"]) == 1
    assert "checksum" in capsys.readouterr().err


def test_output_root_env(dataset, monkeypatch, tmp_path):
    monkeypatch.setenv("OSSR_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["gen", "--records-per-class", "2", "--record-length", "8", "--out", "d2"]) == 0
    assert (tmp_path / "root" / "d2" / "manifest.json").is_file()


def test_gradcheck_command(workdir, capsys):
    rc = main(["gradcheck", "--window", "128", "--time-points", "32", "--hidden", "16,8", "--latent-dim", "4",
               "--out", "g.json"])
    assert rc == 0
    report = json.loads((workdir / "g.json").read_text())
    assert report["failures"] == 0
    assert set(report["tensors"]) >= {"enc0.weight", "mu.bias", "logvar.weight", "classifier.weight"}


def test_sweep_and_report(dataset, capsys):
    rc = main(["sweep", "--data", "data", "--missions", "1,2", "--epochs", "3", *SMALL, "--report", "rep", "--svg"])
    assert rc == 0
    rep = dataset.parent / "rep"
    table = (rep / "table4.csv").read_text().splitlines()
    assert table[0] == "method,discriminator,mission_1,mission_2"
    assert table[2].split(",")[2] == "/"
    svg = (rep / "a0_vs_openness.svg").read_text()
    assert "<svg" in svg and "dc:date" not in svg
    assert main(["report", "--input", "rep", "--out", "rep2"]) == 0
    assert (dataset.parent / "rep2" / "table4.csv").read_text() == (rep / "table4.csv").read_text()
    assert main(["sweep", "--data", "data", "--policies", "vote"]) == 2
    assert main(["sweep", "--data", "data", "--missions", "9"]) == 2
