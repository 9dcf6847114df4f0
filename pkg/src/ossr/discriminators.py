"""Open-set discriminators: Weibull tail models on latent distances and softmax entropy.

Both discriminators set a per-class *dynamic threshold* on validation data:
the boundary of the ``alpha`` % highest scores, using the nearest-rank
quantile so thresholds are exactly reproducible. At test time a sample is
rejected as UNKNOWN when its score is strictly above the threshold of the
class the classifier predicted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataIntegrityError, FitError, NotApplicable
from .nn import softmax

UNKNOWN = -1
POLICIES = ("evt", "entropy", "openness-gated")
DEFAULT_ALPHA = 5.0
DEFAULT_TAIL = 0.10
DEFAULT_GATE = 0.29
MIN_TAIL = 20
CALIBRATION_VERSION = 1


def nearest_rank(values, percentile: float) -> float:
    """Nearest-rank percentile: the smallest value with at least ``percentile`` % of data at or below it."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise FitError("cannot take a quantile of an empty list")
    if not 0.0 <= percentile <= 100.0:
        raise ValueError("percentile must lie in [0, 100]")
    # exact rational arithmetic: 0.95 * 200 must be 190, not 190.00000000000003
    rank = math.ceil(Fraction(str(percentile)) * v.size / 100)
    return float(v[max(rank, 1) - 1])


# --- Weibull / EVT -------------------------------------------------------------


@dataclass(frozen=True)
class WeibullFit:
    tau: float
    kappa: float
    gamma: float
    n_tail: int
    tail_fraction: float


def _shape_equation(k, y, ln_y):
    # d/dk of the profile log-likelihood, divided by n; increasing in k
    yk = (y / y.max()) ** k  # rescaled to avoid overflow; ratio is unchanged
    s0 = yk.sum()
    s1 = (yk * ln_y).sum()
    s2 = (yk * ln_y * ln_y).sum()
    f = s1 / s0 - 1.0 / k - ln_y.mean()
    df = s2 / s0 - (s1 / s0) ** 2 + 1.0 / (k * k)
    return f, df


def weibull_mle(y, tol: float = 1e-10, max_iter: int = 500) -> tuple[float, float]:
    """Two-parameter Weibull MLE ``(shape, scale)`` for strictly positive data.

    Safeguarded Newton on the shape equation: each Newton step that leaves the
    current sign-change bracket is replaced by bisection.
    """
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise FitError("Weibull MLE needs strictly positive data")
    ln_y = np.log(y)
    if np.ptp(ln_y) == 0:
        raise FitError("zero-variance data")
    lo, hi = 1e-3, 1.0
    while _shape_equation(hi, y, ln_y)[0] < 0:
        lo, hi = hi, hi * 2.0
        if hi > 1e6:
            raise FitError("shape parameter diverged")
    while _shape_equation(lo, y, ln_y)[0] > 0:
        lo /= 2.0
        if lo < 1e-12:
            raise FitError("shape parameter collapsed")
    k = 0.5 * (lo + hi)
    for _ in range(max_iter):
        f, df = _shape_equation(k, y, ln_y)
        if f > 0:
            hi = k
        else:
            lo = k
        k_new = k - f / df if df > 0 else 0.5 * (lo + hi)
        if not lo < k_new < hi:
            k_new = 0.5 * (lo + hi)
        if abs(k_new - k) < tol:
            k = k_new
            break
        k = k_new
    else:
        raise FitError("Weibull shape iteration did not converge")
    scale = y.max() * np.mean((y / y.max()) ** k) ** (1.0 / k)
    return float(k), float(scale)


def fit_weibull(
    distances, tail_fraction: float = DEFAULT_TAIL, min_tail: int = MIN_TAIL, location: Optional[float] = None
) -> WeibullFit:
    """Fit a shifted Weibull to the largest ``tail_fraction`` of ``distances``.

    The location ``tau`` sits just below the smallest tail value
    (``tail_min - 1e-6 * tail_range``) unless ``location`` is given; shape and
    scale are the MLE on the shifted tail.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.size < min_tail:
        raise FitError(f"need at least {min_tail} distances, got {d.size}")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise FitError("distances must be finite and non-negative")
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError("tail_fraction must lie in (0, 1]")
    n_tail = min(d.size, max(min_tail, math.ceil(Fraction(str(tail_fraction)) * d.size)))
    tail = np.sort(d)[-n_tail:]
    spread = tail[-1] - tail[0]
    if spread <= 0:
        raise FitError("zero-variance tail: all tail distances are equal")
    tau = tail[0] - 1e-6 * spread if location is None else float(location)
    if tau >= tail[0]:
        raise FitError(f"location {tau} must lie below the smallest tail distance {tail[0]}")
    kappa, gamma = weibull_mle(tail - tau)
    return WeibullFit(float(tau), kappa, gamma, n_tail, float(tail_fraction))


def weibull_outlier_prob(d, tau: float, kappa: float, gamma: float):
    """``1 - exp(-(|d - tau| / gamma) ** kappa)``."""
    d = np.asarray(d, dtype=np.float64)
    p = -np.expm1(-((np.abs(d - tau) / gamma) ** kappa))
    return float(p) if p.ndim == 0 else p


def evt_score(d, fit: WeibullFit):
    """Outlier probability on the fitted support: zero below ``tau``, the Weibull CDF above it."""
    d = np.asarray(d, dtype=np.float64)
    p = np.where(d >= fit.tau, weibull_outlier_prob(d, fit.tau, fit.kappa, fit.gamma), 0.0)
    return float(p) if p.ndim == 0 else p


def evt_hazard(d, fit: WeibullFit):
    """Cumulative hazard ``((d - tau) / gamma) ** kappa`` above ``tau``, zero below.

    Monotone in :func:`evt_score` but free of the float saturation at p = 1, so
    threshold comparisons keep far outliers apart from the calibration tail.
    """
    d = np.asarray(d, dtype=np.float64)
    h = np.where(d >= fit.tau, (np.abs(d - fit.tau) / fit.gamma) ** fit.kappa, 0.0)
    return float(h) if h.ndim == 0 else h


@dataclass
class WeibullModel:
    fits: dict  # class id -> WeibullFit
    tail_fraction: float = DEFAULT_TAIL
    alpha: Optional[float] = None
    thresholds: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)
    hazard_thresholds: dict = field(default_factory=dict)

    def score(self, class_id: int, d):
        return evt_score(d, self.fits[class_id])

    def rejects(self, class_id: int, d) -> bool:
        return bool(evt_hazard(d, self.fits[class_id]) > self.hazard_thresholds[class_id])


def evt_fit_sample(class_stats, class_id: int, min_tail: int = MIN_TAIL) -> tuple[np.ndarray, str]:
    """Distances used to fit one class's Weibull tail, and where they came from.

    Validation distances alone when there are at least ``min_tail`` of them;
    otherwise pooled with the training distances behind the class center.
    """
    val = np.asarray(class_stats.distances.get(class_id, ()), dtype=np.float64)
    if val.size >= min_tail:
        return val, "val"
    train = np.asarray(getattr(class_stats, "train_distances", {}).get(class_id, ()), dtype=np.float64)
    return np.concatenate([val, train]), "val+train"


def fit_evt(class_stats, tail_fraction: float = DEFAULT_TAIL) -> WeibullModel:
    fits, sources = {}, {}
    for c in class_stats.distances:
        dist, sources[c] = evt_fit_sample(class_stats, c)
        try:
            fits[c] = fit_weibull(dist, tail_fraction)
        except FitError as exc:
            raise FitError(f"class {c}: {exc}") from exc
    return WeibullModel(fits=fits, tail_fraction=tail_fraction, sources=sources)


def calibrate_evt(weibull: WeibullModel, class_stats, alpha: float = DEFAULT_ALPHA) -> WeibullModel:
    """Per-class threshold at the (100 - alpha) nearest-rank percentile of validation outlier probabilities."""
    thresholds, hazards = {}, {}
    for c, fit in weibull.fits.items():
        dist = class_stats.distances.get(c)
        if dist is None or len(dist) == 0:
            raise FitError(f"class {c} has no validation distances")
        hazards[c] = nearest_rank(evt_hazard(dist, fit), 100.0 - alpha)
        thresholds[c] = float(-np.expm1(-hazards[c]))
    return WeibullModel(weibull.fits, weibull.tail_fraction, alpha, thresholds, dict(weibull.sources), hazards)


# --- entropy ---------------------------------------------------------------------


def shannon_entropy(probs) -> float:
    """Natural-log entropy of a probability vector, with 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DataIntegrityError("probabilities must be a finite, non-negative vector")
    if abs(p.sum() - 1.0) > 1e-6:
        raise DataIntegrityError(f"probabilities sum to {p.sum()}, not 1")
    return float(entropy_rows(p[None, :])[0])


def entropy_rows(P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0)), 0.0)
    return np.maximum(-terms.sum(axis=1), 0.0)


@dataclass
class EntropyModel:
    entropies: dict  # class id -> sorted validation entropies
    thresholds: dict
    alpha: float


def calibrate_entropy(probs, predicted, known_class_ids: Sequence[int], alpha: float = DEFAULT_ALPHA) -> EntropyModel:
    """Per predicted class, threshold at the (100 - alpha) nearest-rank percentile of validation entropies."""
    known = [int(c) for c in known_class_ids]
    if len(known) < 2:
        raise NotApplicable("entropy discriminator needs at least 2 known classes")
    H = entropy_rows(probs)
    predicted = np.asarray(predicted)
    entropies, thresholds = {}, {}
    for c in known:
        h = np.sort(H[predicted == c])
        if h.size == 0:
            raise FitError(f"no validation samples predicted as class {c}")
        entropies[c] = h
        thresholds[c] = nearest_rank(h, 100.0 - alpha)
    return EntropyModel(entropies, thresholds, alpha)


# --- decisions -------------------------------------------------------------------


@dataclass
class Calibration:
    """Everything needed at test time besides the network itself."""

    centers: dict
    weibull: WeibullModel
    entropy: Optional[EntropyModel]
    alpha: float
    tail_fraction: float
    gate: float = DEFAULT_GATE

    @property
    def known_class_ids(self):
        return sorted(self.centers)

    def to_dict(self):
        classes = []
        for c in self.known_class_ids:
            fit = self.weibull.fits[c]
            classes.append(
                {
                    "class_id": c,
                    "tau": fit.tau,
                    "kappa": fit.kappa,
                    "gamma": fit.gamma,
                    "n_tail": fit.n_tail,
                    "fit_source": self.weibull.sources.get(c),
                    "cdf_threshold": self.weibull.thresholds[c],
                    "hazard_threshold": self.weibull.hazard_thresholds[c],
                    "entropy_threshold": None if self.entropy is None else self.entropy.thresholds[c],
                    "center": self.centers[c].tolist(),
                }
            )
        return {
            "version": CALIBRATION_VERSION,
            "alpha": self.alpha,
            "tail_fraction": self.tail_fraction,
            "gate": self.gate,
            "entropy_applicable": self.entropy is not None,
            "classes": classes,
        }

    def save(self, path, extra: Optional[dict] = None):
        d = self.to_dict()
        if extra:
            d.update(extra)
        Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, d) -> "Calibration":
        if d.get("version") != CALIBRATION_VERSION:
            raise DataIntegrityError(f"unsupported calibration version {d.get('version')}")
        alpha, tail = float(d["alpha"]), float(d["tail_fraction"])
        centers, fits, cdf_t, haz_t, ent_t, sources = {}, {}, {}, {}, {}, {}
        for e in d["classes"]:
            c = int(e["class_id"])
            centers[c] = np.asarray(e["center"], dtype=np.float64)
            fits[c] = WeibullFit(e["tau"], e["kappa"], e["gamma"], int(e["n_tail"]), tail)
            cdf_t[c] = float(e["cdf_threshold"])
            haz_t[c] = float(e["hazard_threshold"])
            sources[c] = e.get("fit_source")
            ent_t[c] = e["entropy_threshold"]
        entropy = EntropyModel({}, {c: float(v) for c, v in ent_t.items()}, alpha) if d["entropy_applicable"] else None
        return cls(centers, WeibullModel(fits, tail, alpha, cdf_t, sources, haz_t), entropy, alpha, tail, float(d.get("gate", DEFAULT_GATE)))

    @classmethod
    def load(cls, path) -> "Calibration":
        return cls.from_dict(json.loads(Path(path).read_text()))


def calibrate(model, class_stats, val_split, alpha: float = DEFAULT_ALPHA, tail_fraction: float = DEFAULT_TAIL,
              gate: float = DEFAULT_GATE) -> Calibration:
    """Fit and threshold both discriminators for a trained DVEC on its validation split."""
    weibull = calibrate_evt(fit_evt(class_stats, tail_fraction), class_stats, alpha)
    Xv, _ = val_split
    entropy = None
    if model.n_known >= 2:
        probs = model.predict_proba(Xv)
        predicted = np.asarray(model.known_class_ids)[np.argmax(probs, axis=1)]
        entropy = calibrate_entropy(probs, predicted, model.known_class_ids, alpha)
    return Calibration(dict(class_stats.centers), weibull, entropy, alpha, tail_fraction, gate)


@dataclass(frozen=True)
class Verdict:
    predicted: int  # known class id or UNKNOWN
    closed_set: int
    evt_outlier_prob: float
    entropy: float
    evt_reject: bool
    entropy_reject: Optional[bool]
    policy: str


def resolve_policy(policy: str, openness: Optional[float], gate: float) -> str:
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}, got {policy!r}")
    if policy != "openness-gated":
        return policy
    if openness is None:
        raise ValueError("openness-gated policy needs the mission openness")
    return "evt" if openness >= gate else "entropy"


def decide(latents, probs, calib: Calibration, policy: str, openness: Optional[float] = None) -> list[Verdict]:
    """Vectorised open-set decisions from eval-mode latents and softmax vectors."""
    latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    active = resolve_policy(policy, openness, calib.gate)
    known = np.asarray(calib.known_class_ids)
    if active == "entropy" and calib.entropy is None:
        raise NotApplicable("entropy discriminator is undefined with a single known class")
    closed = known[np.argmax(probs, axis=1)]
    H = entropy_rows(probs)
    out = []
    for i, c in enumerate(closed):
        c = int(c)
        d = float(np.linalg.norm(latents[i] - calib.centers[c]))
        p = calib.weibull.score(c, d)
        evt_reject = calib.weibull.rejects(c, d)
        ent_reject = None if calib.entropy is None else bool(H[i] > calib.entropy.thresholds[c])
        reject = evt_reject if active == "evt" else ent_reject
        out.append(Verdict(UNKNOWN if reject else c, c, float(p), float(H[i]), bool(evt_reject), ent_reject, active))
    return out


def discriminate(model, calib: Calibration, sample, policy: str, openness: Optional[float] = None) -> Verdict:
    """Classify one fused sample and accept it as a known class or reject it as UNKNOWN."""
    features = getattr(sample, "features", sample)
    mu, _, _ = model.encode(features)
    return decide(mu, softmax(model.logits(mu)), calib, policy, openness)[0]
