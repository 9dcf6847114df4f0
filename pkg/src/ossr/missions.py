"""Open-set missions: known/unknown class splits, openness, end-to-end runs and scoring.

Accuracy ``A0`` is micro accuracy over the K+1 label space in which every
class outside the known set is collapsed into a single UNKNOWN label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .discriminators import (
    DEFAULT_ALPHA,
    DEFAULT_GATE,
    DEFAULT_TAIL,
    POLICIES,
    UNKNOWN,
    Calibration,
    calibrate,
    decide,
    resolve_policy,
)
from .dvec import DvecModel, TrainConfig, extract_class_stats, train
from .errors import DataIntegrityError, DomainError, NotApplicable
from .nn import softmax
from .signals import FusionConfig, RawSignal, fit_standardization, fuse_many

# Known classes per mission, and the openness values printed alongside them.
TABLE3 = {
    1: ((2,), 0.5918),
    2: ((2, 3), 0.4226),
    3: ((0, 1, 2), 0.2929),
    4: ((2, 3, 4, 5), 0.1835),
    5: ((0, 1, 2, 4, 5), 0.0871),
}
TABLE3_CLASSES = 6


def openness(n_training: int, n_testing: int) -> float:
    """``1 - sqrt(n_training / n_testing)`` for class-set sizes."""
    if not 1 <= n_training <= n_testing:
        raise ValueError(f"need 1 <= n_training <= n_testing, got {n_training}, {n_testing}")
    return 1.0 - math.sqrt(n_training / n_testing)


@dataclass(frozen=True)
class Mission:
    id: int
    known_class_ids: tuple
    unknown_class_ids: tuple

    def __post_init__(self):
        if not self.known_class_ids:
            raise ValueError("a mission needs at least one known class")
        if set(self.known_class_ids) & set(self.unknown_class_ids):
            raise ValueError("known and unknown class sets overlap")

    @property
    def openness(self) -> float:
        k = len(self.known_class_ids)
        return openness(k, k + len(self.unknown_class_ids))

    def to_dict(self):
        return {
            "id": self.id,
            "known": list(self.known_class_ids),
            "unknown": list(self.unknown_class_ids),
            "openness": self.openness,
        }


def build_custom_mission(mission_id: int, known: Sequence[int], all_classes: Sequence[int]) -> Mission:
    known = tuple(sorted(int(c) for c in known))
    missing = set(known) - set(all_classes)
    if missing:
        raise ValueError(f"known classes {sorted(missing)} are not in the dataset")
    unknown = tuple(sorted(int(c) for c in all_classes if c not in known))
    return Mission(mission_id, known, unknown)


def build_missions(manifest=None) -> list[Mission]:
    """The five benchmark missions over a six-class dataset."""
    n = TABLE3_CLASSES if manifest is None else manifest.n_classes
    if n != TABLE3_CLASSES:
        raise DataIntegrityError(f"benchmark missions need a {TABLE3_CLASSES}-class dataset, got {n}")
    missions = []
    for mid, (known, printed) in TABLE3.items():
        m = build_custom_mission(mid, known, range(n))
        if round(m.openness, 4) != printed:
            raise AssertionError(f"mission {mid} openness {m.openness:.6f} != {printed}")
        missions.append(m)
    return missions


@dataclass
class MissionReport:
    mission_id: int
    policy: str
    a0: float
    known_accuracy: float
    per_class_accuracy: dict
    unknown_detection_rate: Optional[float]
    false_unknown_rate: float
    labels: list  # confusion-matrix label order: sorted known ids, then UNKNOWN
    confusion: list
    n_known: int = 0
    n_unknown: int = 0
    openness: Optional[float] = None
    active_policy: Optional[str] = None

    def to_dict(self):
        return {
            "mission_id": self.mission_id,
            "policy": self.policy,
            "active_policy": self.active_policy,
            "openness": self.openness,
            "a0": self.a0,
            "known_accuracy": self.known_accuracy,
            "per_class_accuracy": {str(k): v for k, v in self.per_class_accuracy.items()},
            "unknown_detection_rate": self.unknown_detection_rate,
            "false_unknown_rate": self.false_unknown_rate,
            "labels": self.labels,
            "confusion": self.confusion,
            "n_known": self.n_known,
            "n_unknown": self.n_unknown,
        }


def score(predictions, truths, known_ids, mission_id: int = 0, policy: str = "") -> MissionReport:
    """Score open-set predictions; truths outside ``known_ids`` count as UNKNOWN."""
    preds = np.asarray(predictions, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.shape != truths.shape:
        raise ValueError("predictions and truths differ in length")
    known = sorted(int(c) for c in known_ids)
    labels = known + [UNKNOWN]
    pos = {c: i for i, c in enumerate(labels)}
    bad = sorted(set(preds.tolist()) - set(labels))
    if bad:
        raise DataIntegrityError(f"predictions {bad} are neither known classes {known} nor UNKNOWN")
    t = np.where(np.isin(truths, known), truths, UNKNOWN)
    conf = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for a, b in zip(t, preds):
        conf[pos[int(a)], pos[int(b)]] += 1
    n = len(t)
    is_known = t != UNKNOWN
    n_known, n_unknown = int(is_known.sum()), int((~is_known).sum())
    per_class = {c: float(conf[pos[c], pos[c]] / conf[pos[c]].sum()) if conf[pos[c]].sum() else None for c in known}
    return MissionReport(
        mission_id=mission_id,
        policy=policy,
        a0=float(np.trace(conf) / n) if n else 0.0,
        known_accuracy=float(np.mean(preds[is_known] == t[is_known])) if n_known else 0.0,
        per_class_accuracy=per_class,
        unknown_detection_rate=float(np.mean(preds[~is_known] == UNKNOWN)) if n_unknown else None,
        false_unknown_rate=float(np.mean(preds[is_known] == UNKNOWN)) if n_known else 0.0,
        labels=labels,
        confusion=conf.tolist(),
        n_known=n_known,
        n_unknown=n_unknown,
    )


def mission_seed(global_seed: int, mission_id: int) -> int:
    return int(np.random.SeedSequence([global_seed, mission_id]).generate_state(1)[0])


@dataclass
class DiscConfig:
    alpha: float = DEFAULT_ALPHA
    tail_fraction: float = DEFAULT_TAIL
    gate: float = DEFAULT_GATE


@dataclass
class PreparedMission:
    """A trained and calibrated DVEC plus the fused test split for one mission."""

    mission: Mission
    model: DvecModel
    calibration: Calibration
    history: object
    X_test: np.ndarray
    y_test: np.ndarray
    seed: int

    def predictor(self, policy: str) -> Callable[[np.ndarray], np.ndarray]:
        def predict(X):
            mu, _, _ = self.model.encode(X)
            verdicts = decide(mu, softmax(self.model.logits(mu)), self.calibration, policy, self.mission.openness)
            return np.array([v.predicted for v in verdicts], dtype=np.int64)

        return predict


def _select(records: Sequence[RawSignal], classes) -> list[RawSignal]:
    classes = set(classes)
    return [r for r in records if r.label in classes]


def prepare_mission(
    mission: Mission,
    splits: dict,
    train_cfg: TrainConfig,
    disc_cfg: Optional[DiscConfig] = None,
    fusion_cfg: Optional[FusionConfig] = None,
    global_seed: Optional[int] = None,
) -> PreparedMission:
    """Train on known-class training records and calibrate on known-class validation records.

    ``splits`` maps ``train``/``val``/``test`` to raw records. The mission seed
    is derived from ``global_seed`` (default: ``train_cfg.seed``) and the
    mission id, and replaces the training seed.
    """
    disc_cfg = disc_cfg or DiscConfig()
    fusion_cfg = fusion_cfg or FusionConfig()
    seed = mission_seed(train_cfg.seed if global_seed is None else global_seed, mission.id)
    cfg = TrainConfig.from_dict({**train_cfg.to_dict(), "seed": seed})
    present = {r.label for r in splits["test"]}
    missing = (set(mission.known_class_ids) | set(mission.unknown_class_ids)) - present
    if missing:
        raise DataIntegrityError(f"test split lacks mission classes {sorted(missing)}")
    tr = _select(splits["train"], mission.known_class_ids)
    va = _select(splits["val"], mission.known_class_ids)
    te = _select(splits["test"], set(mission.known_class_ids) | set(mission.unknown_class_ids))
    stats = fit_standardization(tr, fusion_cfg)
    Xtr, ytr = fuse_many(tr, fusion_cfg, stats)
    Xva, yva = fuse_many(va, fusion_cfg, stats)
    Xte, yte = fuse_many(te, fusion_cfg, stats)
    model = DvecModel(fusion_cfg.dim, mission.known_class_ids, cfg)
    model.fusion_cfg, model.fusion_stats = fusion_cfg, stats
    model, history = train(model, (Xtr, ytr), (Xva, yva))
    class_stats = extract_class_stats(model, (Xtr, ytr), (Xva, yva))
    calib = calibrate(model, class_stats, (Xva, yva), disc_cfg.alpha, disc_cfg.tail_fraction, disc_cfg.gate)
    return PreparedMission(mission, model, calib, history, Xte, yte, seed)


def evaluate_mission(mission: Mission, predict: Callable, X_test, y_test, policy: str = "") -> MissionReport:
    """Score any predictor (class id or UNKNOWN per row) on a mission's test split."""
    report = score(predict(X_test), y_test, mission.known_class_ids, mission.id, policy)
    report.openness = mission.openness
    return report


def run_mission(mission, splits, train_cfg, disc_cfg=None, policy="evt", fusion_cfg=None, global_seed=None):
    """Train, calibrate and evaluate one mission under one policy."""
    prepared = prepare_mission(mission, splits, train_cfg, disc_cfg, fusion_cfg, global_seed)
    return report_for(prepared, policy)


def report_for(prepared: PreparedMission, policy: str) -> MissionReport:
    report = evaluate_mission(
        prepared.mission, prepared.predictor(policy), prepared.X_test, prepared.y_test, policy
    )
    report.active_policy = resolve_policy(policy, prepared.mission.openness, prepared.calibration.gate)
    return report


def longest_nondecreasing(values: Sequence[float]) -> int:
    best = []
    for i, v in enumerate(values):
        best.append(1 + max((best[j] for j in range(i) if values[j] <= v), default=0))
    return max(best, default=0)


@dataclass
class SweepReport:
    missions: list
    policies: list
    cells: dict = field(default_factory=dict)  # (mission_id, policy) -> MissionReport | status string
    errors: dict = field(default_factory=dict)

    def a0(self, mission_id, policy):
        cell = self.cells.get((mission_id, policy))
        return cell.a0 if isinstance(cell, MissionReport) else None

    def trend(self) -> dict:
        """Entropy-minus-EVT A0 gap per mission, ordered by decreasing openness."""
        ordered = sorted(self.missions, key=lambda m: -m.openness)
        gaps = []
        for m in ordered:
            e, v = self.a0(m.id, "entropy"), self.a0(m.id, "evt")
            gaps.append({"mission_id": m.id, "openness": m.openness,
                         "gap": None if e is None or v is None else e - v})
        comparable = [g["gap"] for g in gaps if g["gap"] is not None]
        return {
            "gaps": gaps,
            "comparable": len(comparable),
            "longest_nondecreasing": longest_nondecreasing(comparable),
        }

    def to_dict(self):
        cells = []
        for m in self.missions:
            for p in self.policies:
                cell = self.cells.get((m.id, p))
                if isinstance(cell, MissionReport):
                    cells.append({"status": "ok", **cell.to_dict()})
                else:
                    cells.append({"mission_id": m.id, "policy": p, "status": cell,
                                  "error": self.errors.get((m.id, p))})
        return {
            "missions": [m.to_dict() for m in self.missions],
            "policies": list(self.policies),
            "cells": cells,
            "trend": self.trend(),
        }


def _inapplicable(policy: str, mission: Mission, disc_cfg: DiscConfig) -> Optional[str]:
    if resolve_policy(policy, mission.openness, disc_cfg.gate) == "entropy" and len(mission.known_class_ids) < 2:
        return "entropy discriminator needs at least 2 known classes"
    return None


def sweep(missions, policies, splits, train_cfg, disc_cfg=None, fusion_cfg=None, global_seed=None,
          progress: Optional[Callable[[str], None]] = None) -> SweepReport:
    """Run every (mission, policy) cell; one trained model per mission is shared across policies."""
    for p in policies:
        if p not in POLICIES:
            raise ValueError(f"unknown policy {p!r}")
    report = SweepReport(list(missions), list(policies))
    for m in missions:
        try:
            prepared = prepare_mission(m, splits, train_cfg, disc_cfg, fusion_cfg, global_seed)
        except DomainError as exc:
            for p in policies:
                # a structurally inapplicable cell stays so whatever went wrong in training
                na = _inapplicable(p, m, disc_cfg or DiscConfig())
                report.cells[(m.id, p)] = "NotApplicable" if na else "Error"
                report.errors[(m.id, p)] = na or str(exc)
            continue
        for p in policies:
            try:
                report.cells[(m.id, p)] = report_for(prepared, p)
            except NotApplicable as exc:
                report.cells[(m.id, p)] = "NotApplicable"
                report.errors[(m.id, p)] = str(exc)
            except DomainError as exc:
                report.cells[(m.id, p)] = "Error"
                report.errors[(m.id, p)] = str(exc)
            if progress:
                cell = report.cells[(m.id, p)]
                progress(f"mission {m.id} {p}: " + (f"A0={cell.a0:.4f}" if isinstance(cell, MissionReport) else cell))
    return report
