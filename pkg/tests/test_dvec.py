import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ossr.dvec import (
    DvecModel,
    TrainConfig,
    center_distances,
    closed_set_accuracy,
    dvec_loss,
    extract_class_stats,
    kl_gaussian,
    lambda_weight,
    omega,
    train,
)
from ossr.errors import DataIntegrityError, FitError
from ossr.nn import cross_entropy, gradcheck
from ossr.signals import FusionConfig, FusionStats

# the schedule as designed: warm-up to 1 with a 0.1 floor
DESIGNED = TrainConfig(omega0=0.1, omega_max=1.0, kl_warmup_epochs=10)
TINY = dict(hidden=(16, 8), latent_dim=4)


def _tiny_model(seed=0, d=6, known=(0, 1, 2), **kw):
    return DvecModel(d, known, TrainConfig(seed=seed, **{**TINY, **kw}))


def test_omega_schedule():
    assert omega(0, 10) == 0.0
    assert omega(5, 10) == 0.5
    assert omega(30, 10) == 1.0
    assert omega(0, 0) == 1.0
    assert omega(5, 10, ceiling=0.01) == pytest.approx(0.005)


def test_lambda_weight_gate():
    assert lambda_weight(3, 1, 2, DESIGNED) == 0.0
    assert lambda_weight(12, 1, 1, DESIGNED) == 1.0
    assert lambda_weight(0, 1, 1, DESIGNED) == 0.1
    assert lambda_weight(5, 0, 0, DESIGNED) == 0.5


@given(epoch=st.integers(0, 200), y=st.integers(0, 3), y_hat=st.integers(0, 3),
       omega0=st.floats(0.001, 1.0), warm=st.integers(0, 30), ceiling=st.floats(0.001, 1.0))
def test_lambda_range(epoch, y, y_hat, omega0, warm, ceiling):
    cfg = TrainConfig(omega0=omega0, omega_max=ceiling, kl_warmup_epochs=warm)
    lam = lambda_weight(epoch, y, y_hat, cfg)
    assert lam == 0.0 if y != y_hat else omega0 <= lam <= 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(omega0=0.0)
    with pytest.raises(ValueError):
        TrainConfig(kl_warmup_epochs=-1)


def test_kl_closed_form_values():
    assert kl_gaussian(np.zeros(5), np.ones(5)) == 0.0
    assert kl_gaussian([1.0], [1.0]) == pytest.approx(0.5)
    with pytest.raises(DataIntegrityError):
        kl_gaussian([0.0], [0.0])


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.01, 10)), min_size=1, max_size=8))
def test_kl_non_negative(pairs):
    mu, var = map(np.array, zip(*pairs))
    assert kl_gaussian(mu, var) >= 0.0


def test_encode_eval_mode_and_determinism(rng):
    m = _tiny_model()
    X = rng.standard_normal((5, 6))
    mu, var, z = m.encode(X)
    assert np.array_equal(z, mu)
    z1 = m.encode(X, rng=np.random.default_rng(1))[2]
    z2 = m.encode(X, rng=np.random.default_rng(1))[2]
    assert np.array_equal(z1, z2) and not np.array_equal(z1, mu)
    assert np.all(var > 0)


def test_zeroed_logvar_head_gives_unit_variance(rng):
    m = _tiny_model()
    m.logvar_head.weight.assign(np.zeros_like(m.logvar_head.weight.values))
    _, var, _ = m.encode(rng.standard_normal((3, 6)))
    assert np.all(var == 1.0)


def test_predict_proba_is_distribution(rng):
    P = _tiny_model().predict_proba(rng.standard_normal((7, 6)))
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-9) and np.all(P > 0)


def test_unknown_label_in_batch_rejected(rng):
    with pytest.raises(DataIntegrityError, match="not a known class"):
        dvec_loss(_tiny_model(), rng.standard_normal((2, 6)), np.array([0, 5]), 0, rng=rng)


def test_lambda_zero_loss_is_cross_entropy(rng):
    m = _tiny_model()
    X, y = rng.standard_normal((6, 6)), np.array([0, 1, 2, 0, 1, 2])
    eps = rng.standard_normal((1, 6, 4))
    res = dvec_loss(m, X, y, 0, eps=eps, lambda_override=0.0, backward=False)
    mu, var, _ = m.encode(X)
    z = mu + np.sqrt(var) * eps[0]
    ce, _ = cross_entropy(m.logits(z), m.label_index(y))
    assert res.loss == ce


def test_prior_posterior_loss_is_cross_entropy(rng):
    m = _tiny_model()
    for head in (m.mu_head, m.logvar_head):
        head.weight.assign(np.zeros_like(head.weight.values))
    X, y = rng.standard_normal((4, 6)), np.array([0, 1, 2, 0])
    eps = rng.standard_normal((1, 4, 4))
    res = dvec_loss(m, X, y, 20, eps=eps, backward=False)
    assert res.kl == 0.0
    assert res.loss == pytest.approx(res.cross_entropy, abs=1e-15)


@pytest.mark.parametrize("epoch", [0, 4, 20])
@pytest.mark.parametrize("class_prior", [False, True])
def test_loss_gradcheck_small(rng, epoch, class_prior):
    m = _tiny_model(seed=3, class_prior=class_prior, n_samples=2, omega0=0.1, omega_max=1.0)
    X, y = rng.standard_normal((6, 6)), np.array([0, 1, 2, 2, 1, 0])
    eps = rng.standard_normal((2, 6, 4))
    dvec_loss(m, X, y, epoch, eps=eps)
    results = gradcheck(lambda: dvec_loss(m, X, y, epoch, eps=eps, backward=False).loss, m.params(), rng=rng)
    bad = [r for r in results if not r[-1]]
    assert not bad, bad[:5]


def test_gate_uses_current_prediction(rng):
    m = _tiny_model(omega0=0.1, omega_max=1.0)
    X, y = rng.standard_normal((8, 6)), np.array([0, 1, 2, 0, 1, 2, 0, 1])
    eps = rng.standard_normal((1, 8, 4))
    res = dvec_loss(m, X, y, 20, eps=eps, backward=False)
    mu, var, _ = m.encode(X)
    pred = np.argmax(m.logits(mu + np.sqrt(var) * eps[0]), axis=1)
    assert np.array_equal(res.lambdas > 0, pred == m.label_index(y))


def _blobs(rng, n_per=30, d=6, classes=(0, 1, 2)):
    centers = 4 * rng.standard_normal((len(classes), d))
    X = np.concatenate([c + 0.3 * rng.standard_normal((n_per, d)) for c in centers])
    y = np.repeat(classes, n_per)
    return X, y


def test_training_learns_and_is_deterministic(rng):
    X, y = _blobs(rng)
    runs = []
    for _ in range(2):
        m = _tiny_model(seed=7, epochs=15, batch_size=16)
        m, hist = train(m, (X, y), (X, y))
        runs.append((m.checksum(), hist.to_dict()))
    assert runs[0] == runs[1]
    assert runs[0][1]["best_epoch"] is not None
    assert closed_set_accuracy(m, X, y) == 1.0


def test_zero_epochs_leaves_model_unchanged(rng):
    m = _tiny_model(epochs=0)
    before = m.checksum()
    X, y = _blobs(rng)
    _, hist = train(m, (X, y), (X, y))
    assert m.checksum() == before and hist.best_epoch is None


def test_save_load_round_trip(tmp_path, rng):
    m = _tiny_model(seed=4)
    m.fusion_cfg = FusionConfig(window=4, time_points=3)
    m.fusion_stats = FusionStats(0.0, 1.0, 0.5, 2.0)
    m.save(tmp_path / "m.ckpt", {"note": "x"})
    m2, header = DvecModel.load(tmp_path / "m.ckpt")
    assert m2.checksum() == m.checksum()
    assert header["note"] == "x" and header["seed"] == 4
    assert header["architecture"]["known_class_ids"] == [0, 1, 2]
    assert m2.fusion_cfg == m.fusion_cfg and m2.fusion_stats == m.fusion_stats
    X = rng.standard_normal((3, 6))
    assert np.array_equal(m.predict_proba(X), m2.predict_proba(X))


def test_center_arithmetic():
    d = center_distances(np.array([[0.0, 0.0], [3.0, 4.0]]), np.array([1.5, 2.0]))
    assert np.allclose(d, [2.5, 2.5])


def test_class_stats_on_trained_model(rng):
    X, y = _blobs(rng)
    m, _ = train(_tiny_model(seed=1, epochs=15, batch_size=16), (X, y), (X, y))
    stats = extract_class_stats(m, (X, y), (X, y))
    assert sorted(stats.centers) == [0, 1, 2]
    within = np.mean([stats.distances[c].mean() for c in stats.centers])
    centers = np.array([stats.centers[c] for c in sorted(stats.centers)])
    between = np.mean([np.linalg.norm(a - b) for i, a in enumerate(centers) for b in centers[i + 1:]])
    assert within < between
    assert all(np.all(v >= 0) for v in stats.distances.values())


def test_class_without_correct_samples_named(rng):
    m = _tiny_model(known=(0, 1))
    X = rng.standard_normal((4, 6))
    y = 1 - m.predict(X)  # every sample misclassified
    with pytest.raises(FitError, match="class 0"):
        extract_class_stats(m, (X, y), (X, y))
