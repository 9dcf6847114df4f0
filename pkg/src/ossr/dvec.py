"""Deep variational encoder-classifier (DVEC).

An encoder maps fused features to a diagonal Gaussian ``N(mu, sigma^2)``
over a latent space; a linear softmax classifier reads a reparameterized
sample ``z = mu + sigma * eps``. Training minimizes

    cross_entropy(classifier(z), y) + lambda(x) * KL(N(mu, sigma^2) || prior)

where ``lambda`` is zero for misclassified samples and otherwise
``max(omega(epoch), omega0)`` with a linear KL warm-up ``omega``. The prior is
a standard normal unless ``class_prior`` is enabled, in which case each class
gets a unit-variance prior centred on a scaled basis vector.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataIntegrityError, DivergenceError, FitError, UsageError
from .nn import Adam, DenseLayer, ParamTensor, load_checkpoint, log_softmax, save_checkpoint, softmax
from .signals import FusionConfig, FusionStats

log = logging.getLogger(__name__)

_INIT_STREAM = 0x1A17
_TRAIN_STREAM = 0x7EA1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    seed: int = 42
    kl_warmup_epochs: int = 10
    omega0: float = 0.01
    omega_max: float = 0.01  # KL ceiling; at 1.0 the posterior collapses onto the prior
    latent_dim: int = 32
    hidden: tuple = (512, 256, 128)
    learning_rate: float = 1e-3
    n_samples: int = 1
    class_prior: bool = False
    prior_scale: float = 3.0

    def __post_init__(self):
        if not 0.0 < self.omega0 <= 1.0:
            raise ValueError("omega0 must lie in (0, 1]")
        if not 0.0 <= self.omega_max <= 1.0:
            raise ValueError("omega_max must lie in [0, 1]")
        if self.kl_warmup_epochs < 0:
            raise ValueError("kl_warmup_epochs must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.latent_dim < 1 or self.n_samples < 1:
            raise ValueError("epochs >= 0, batch_size >= 1, latent_dim >= 1, n_samples >= 1 required")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def omega(epoch: int, warmup: int, ceiling: float = 1.0) -> float:
    """Linear KL warm-up from 0 to ``ceiling`` over ``warmup`` epochs."""
    if warmup == 0:
        return ceiling
    return ceiling * min(1.0, epoch / warmup)


def lambda_weight(epoch: int, y: int, y_hat: int, cfg: TrainConfig) -> float:
    """KL weight for one sample: 0 when misclassified, else max(omega(epoch), omega0)."""
    if y != y_hat:
        return 0.0
    return max(omega(epoch, cfg.kl_warmup_epochs, cfg.omega_max), cfg.omega0)


def kl_gaussian(mu, var, prior_mean=None) -> float:
    """KL(N(mu, diag var) || N(prior_mean, I)), summed over dimensions."""
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0):
        raise DataIntegrityError("variance must be strictly positive")
    if prior_mean is not None:
        mu = mu - prior_mean
    return float(0.5 * np.sum(mu * mu + var - np.log(var) - 1.0))


def _kl_rows(mu, logvar, prior_mean=None):
    d = mu if prior_mean is None else mu - prior_mean
    return 0.5 * np.sum(d * d + np.exp(logvar) - logvar - 1.0, axis=1)


class DvecModel:
    """Encoder (hidden stack + mean/log-variance heads) and a linear classifier."""

    def __init__(self, input_dim: int, known_class_ids: Sequence[int], cfg: TrainConfig):
        self.input_dim = int(input_dim)
        self.known_class_ids = [int(c) for c in known_class_ids]
        if len(set(self.known_class_ids)) != len(self.known_class_ids) or not self.known_class_ids:
            raise ValueError("known_class_ids must be non-empty and unique")
        self.latent_dim = cfg.latent_dim
        self.cfg = cfg
        self.fusion_cfg: Optional[FusionConfig] = None
        self.fusion_stats: Optional[FusionStats] = None
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _INIT_STREAM]))
        widths = [self.input_dim, *cfg.hidden]
        self.hidden = [
            DenseLayer(a, b, "relu", name=f"enc{i}", rng=rng) for i, (a, b) in enumerate(zip(widths, widths[1:]))
        ]
        top = widths[-1]
        self.mu_head = DenseLayer(top, cfg.latent_dim, "identity", name="mu", rng=rng)
        self.logvar_head = DenseLayer(top, cfg.latent_dim, "identity", name="logvar", rng=rng)
        self.classifier = DenseLayer(cfg.latent_dim, self.n_known, "identity", name="classifier", rng=rng)
        self._index = {c: i for i, c in enumerate(self.known_class_ids)}

    @property
    def n_known(self) -> int:
        return len(self.known_class_ids)

    @property
    def layers(self) -> list[DenseLayer]:
        return [*self.hidden, self.mu_head, self.logvar_head, self.classifier]

    def params(self) -> list[ParamTensor]:
        return [p for layer in self.layers for p in layer.params()]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def label_index(self, labels) -> np.ndarray:
        """Map class ids to classifier output indices; unknown ids raise."""
        labels = np.asarray(labels)
        try:
            return np.array([self._index[int(c)] for c in labels], dtype=np.int64)
        except KeyError as exc:
            raise DataIntegrityError(f"label {exc.args[0]} is not a known class {self.known_class_ids}") from None

    def prior_means(self) -> np.ndarray:
        """(K, L) matrix of per-class prior means; zeros unless ``class_prior``."""
        m = np.zeros((self.n_known, self.latent_dim))
        if self.cfg.class_prior:
            for k in range(self.n_known):
                m[k, k % self.latent_dim] = self.cfg.prior_scale
        return m

    def _check_input(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.input_dim:
            raise DataIntegrityError(f"expected {self.input_dim} features, got {X.shape[1]}")
        return X

    def _encode_params(self, X, cache=False):
        h = X
        for layer in self.hidden:
            h = layer.forward(h, cache)
        mu = self.mu_head.forward(h, cache)
        logvar = self.logvar_head.forward(h, cache)
        for head, out in ((self.mu_head, mu), (self.logvar_head, logvar)):
            if not np.all(np.isfinite(out)):
                raise DivergenceError(f"non-finite activations in {head.name}")
        return mu, logvar

    def encode(self, X, rng: Optional[np.random.Generator] = None):
        """Return ``(mu, var, z)``. Without ``rng`` this is evaluation mode and ``z = mu``."""
        X = self._check_input(X)
        mu, logvar = self._encode_params(X)
        var = np.exp(logvar)
        if rng is None:
            return mu, var, mu.copy()
        eps = rng.standard_normal(mu.shape)
        return mu, var, mu + np.exp(0.5 * logvar) * eps

    def logits(self, z):
        return self.classifier.forward(np.atleast_2d(z), cache=False)

    def predict_proba(self, X) -> np.ndarray:
        mu, _, _ = self.encode(X)
        return softmax(self.logits(mu))

    def predict(self, X) -> np.ndarray:
        """Closed-set predictions as class ids."""
        idx = np.argmax(self.predict_proba(X), axis=1)
        return np.asarray(self.known_class_ids)[idx]

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.values.copy() for p in self.params()}

    def load_state(self, state: dict[str, np.ndarray]):
        for p in self.params():
            p.assign(state[p.name])

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.params():
            h.update(p.values.astype("<f8").tobytes())
        return h.hexdigest()

    def save(self, path, extra: Optional[dict] = None):
        header = {
            "kind": "dvec",
            "architecture": {
                "input_dim": self.input_dim,
                "hidden": list(self.cfg.hidden),
                "latent_dim": self.latent_dim,
                "known_class_ids": self.known_class_ids,
                "layers": [
                    {"name": l.name, "in": l.n_in, "out": l.n_out, "activation": l.activation} for l in self.layers
                ],
            },
            "train_config": self.cfg.to_dict(),
            "seed": self.cfg.seed,
            "fusion": None
            if self.fusion_cfg is None
            else {"config": self.fusion_cfg.to_dict(), "stats": self.fusion_stats.to_dict()},
        }
        if extra:
            header.update(extra)
        save_checkpoint(path, header, self.params())

    @classmethod
    def load(cls, path) -> tuple["DvecModel", dict]:
        header, arrays = load_checkpoint(path)
        if header.get("kind") != "dvec":
            raise DataIntegrityError(f"{path}: not a DVEC checkpoint")
        arch = header["architecture"]
        model = cls(arch["input_dim"], arch["known_class_ids"], TrainConfig.from_dict(header["train_config"]))
        model.load_state(arrays)
        if header.get("fusion"):
            model.fusion_cfg = FusionConfig(**header["fusion"]["config"])
            model.fusion_stats = FusionStats.from_dict(header["fusion"]["stats"])
        return model, header


@dataclass
class LossResult:
    loss: float
    cross_entropy: float
    kl: float
    lambdas: np.ndarray
    accuracy: float


def dvec_loss(
    model: DvecModel,
    X,
    y,
    epoch: int,
    eps: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
    lambda_override: Optional[float] = None,
    backward: bool = True,
) -> LossResult:
    """Batch-mean loss; when ``backward`` is set, parameter grads are overwritten.

    ``y`` holds class ids (all must be known classes). Reparameterization noise
    comes from ``eps`` with shape (n_samples, n, L) if given, else from ``rng``.
    """
    cfg = model.cfg
    X = model._check_input(X)
    n = X.shape[0]
    if n == 0:
        raise DataIntegrityError("empty batch")
    target = model.label_index(y)
    S = cfg.n_samples
    if eps is None:
        if rng is None:
            raise UsageError("dvec_loss needs eps or rng")
        eps = rng.standard_normal((S, n, model.latent_dim))
    eps = np.asarray(eps, dtype=np.float64).reshape(S, n, model.latent_dim)

    mu, logvar = model._encode_params(X, cache=backward)
    sigma = np.exp(0.5 * logvar)
    prior = model.prior_means()[target]
    kl = _kl_rows(mu, logvar, prior if cfg.class_prior else None)

    rows = np.arange(n)
    ce_total = 0.0
    d_mu = np.zeros_like(mu)
    d_logvar = np.zeros_like(logvar)
    W, b = model.classifier.weight, model.classifier.bias
    if backward:
        model.zero_grad()
    lambdas = None
    correct = None
    for s in range(S):
        z = mu + sigma * eps[s]
        logits = z @ W.values.T + b.values
        logp = log_softmax(logits)
        ce_total += -logp[rows, target].sum()
        if lambdas is None:
            # gate on the prediction made in this same forward pass
            correct = np.argmax(logits, axis=1) == target
            if lambda_override is None:
                w = max(omega(epoch, cfg.kl_warmup_epochs, cfg.omega_max), cfg.omega0)
                lambdas = np.where(correct, w, 0.0)
            else:
                lambdas = np.full(n, float(lambda_override))
        if backward:
            g = np.exp(logp)
            g[rows, target] -= 1.0
            g /= n * S
            W.grad += g.T @ z
            b.grad += g.sum(axis=0)
            dz = g @ W.values
            d_mu += dz
            d_logvar += dz * 0.5 * sigma * eps[s]
    ce = ce_total / (n * S)
    kl_term = float(np.mean(lambdas * kl))
    loss = ce + kl_term
    if not np.isfinite(loss):
        raise DivergenceError("non-finite loss")
    if backward:
        lam = (lambdas / n)[:, None]
        d_mu += lam * (mu - prior if cfg.class_prior else mu)
        d_logvar += lam * 0.5 * (np.exp(logvar) - 1.0)
        dh = model.mu_head.backward(d_mu) + model.logvar_head.backward(d_logvar)
        for layer in reversed(model.hidden):
            dh = layer.backward(dh)
    return LossResult(float(loss), float(ce), float(np.mean(kl)), lambdas, float(np.mean(correct)))


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: Optional[int] = None

    def to_dict(self):
        return {
            "train_loss": self.train_loss,
            "train_accuracy": self.train_accuracy,
            "val_accuracy": self.val_accuracy,
            "best_epoch": self.best_epoch,
        }


def closed_set_accuracy(model: DvecModel, X, y) -> float:
    return float(np.mean(model.predict(X) == np.asarray(y)))


def train(model: DvecModel, train_split, val_split, cfg: Optional[TrainConfig] = None):
    """Shuffled mini-batch Adam; restores parameters from the best validation epoch.

    ``train_split`` and ``val_split`` are ``(X, y)`` pairs of fused features
    and class ids. Returns ``(model, history)``; the model is updated in place.
    """
    cfg = model.cfg if cfg is None else cfg
    X, y = train_split
    Xv, yv = val_split
    X = model._check_input(X)
    Xv = model._check_input(Xv)
    if len(X) == 0 or len(Xv) == 0:
        raise DataIntegrityError("train and validation splits must be non-empty")
    model.label_index(y)
    model.label_index(yv)
    history = History()
    if cfg.epochs == 0:
        return model, history

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _TRAIN_STREAM]))
    opt = Adam(model.params(), lr=cfg.learning_rate)
    best_acc, best_state = -1.0, None
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses, correct = [], 0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            try:
                res = dvec_loss(model, X[idx], y[idx], epoch, rng=rng)
                opt.step(batch_index=bi)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}, batch {bi}: {exc}") from exc
            losses.append(res.loss * len(idx))
            correct += res.accuracy * len(idx)
        for layer in model.layers:
            layer.clear_cache()
        val_acc = closed_set_accuracy(model, Xv, yv)
        history.train_loss.append(float(np.sum(losses) / n))
        history.train_accuracy.append(float(correct / n))
        history.val_accuracy.append(val_acc)
        log.debug("epoch %d loss %.5f val_acc %.4f", epoch, history.train_loss[-1], val_acc)
        # ties go to the later (longer trained) epoch
        if val_acc >= best_acc:
            best_acc, best_state, history.best_epoch = val_acc, model.state(), epoch
    model.load_state(best_state)
    return model, history


@dataclass
class ClassStats:
    """Latent class centers and validation distances, keyed by class id.

    ``train_distances`` holds the distances of the correctly classified
    training latents that defined each center; the EVT fit falls back on them
    when a class has too few validation samples.
    """

    centers: dict
    distances: dict
    train_distances: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "centers": {str(k): v.tolist() for k, v in self.centers.items()},
            "distances": {str(k): v.tolist() for k, v in self.distances.items()},
            "train_distances": {str(k): v.tolist() for k, v in self.train_distances.items()},
        }


def center_distances(latents, center) -> np.ndarray:
    return np.linalg.norm(np.atleast_2d(latents) - center, axis=1)


def extract_class_stats(model: DvecModel, train_split, val_split) -> ClassStats:
    """Centers from correctly classified training latents (z = mu); val distances by true class."""
    X, y = train_split
    Xv, yv = val_split
    y, yv = np.asarray(y), np.asarray(yv)
    mu, _, _ = model.encode(X)
    pred = np.asarray(model.known_class_ids)[np.argmax(softmax(model.logits(mu)), axis=1)]
    centers, train_distances = {}, {}
    for c in model.known_class_ids:
        sel = (y == c) & (pred == c)
        if not np.any(sel):
            raise FitError(f"class {c} has no correctly classified training samples")
        centers[c] = mu[sel].mean(axis=0)
        train_distances[c] = center_distances(mu[sel], centers[c])
    mu_v, _, _ = model.encode(Xv)
    distances = {c: center_distances(mu_v[yv == c], centers[c]) for c in model.known_class_ids}
    return ClassStats(centers=centers, distances=distances, train_distances=train_distances)
