"""Command-line entry point for ossr.

Exit codes: 0 on success, 1 on a domain error (bad data, failed fit,
divergence), 2 on a usage error. Settings merge as CLI flags over the
``--config`` file over built-in defaults, and the merged result is written into
every artifact's provenance block together with the tool version, the seed and
git-style content hashes of the inputs.

Relative output paths are resolved against ``$OSSR_OUTPUT_ROOT`` when it is set.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import FORMATS, Manifest, load_splits
from .discriminators import POLICIES, Calibration, calibrate, decide, resolve_policy
from .dvec import DvecModel, TrainConfig, closed_set_accuracy, dvec_loss, extract_class_stats, train
from .errors import DomainError, UsageError
from .missions import (
    TABLE3,
    TABLE3_CLASSES,
    DiscConfig,
    build_custom_mission,
    build_missions,
    evaluate_mission,
    sweep,
)
from .nn import gradcheck, softmax
from .signals import FusionConfig, fit_standardization, fuse_many
from .synth import GeneratorConfig, generate_dataset

log = logging.getLogger("ossr")

CONFIG_SCHEMA_VERSION = 1
ENV_OUTPUT_ROOT = "OSSR_OUTPUT_ROOT"
SUBCOMMANDS = ("gen", "train", "calibrate", "eval", "sweep", "gradcheck", "report")

_TRAIN_KEYS = ("epochs", "batch_size", "seed", "kl_warmup_epochs", "omega0", "omega_max", "latent_dim",
               "hidden", "learning_rate", "n_samples", "class_prior", "prior_scale")


def _train_defaults():
    d = TrainConfig().to_dict()
    d["hidden"] = ",".join(str(h) for h in d["hidden"])
    return d


_FUSION = {"window": FusionConfig().window, "time_points": FusionConfig().time_points}

DEFAULTS = {
    "gen": {"seed": 42, "records_per_class": 100, "record_length": 5000, "sample_rate": 50000.0,
            "format": "csv", "out": "data"},
    "train": {"data": None, "known": None, **_train_defaults(), **_FUSION, "out": "model.ckpt", "history": None},
    "calibrate": {"model": None, "data": None, "alpha": 5.0, "tail": 0.10, "gate": 0.29, "out": "disc.cal"},
    "eval": {"model": None, "calibration": None, "data": None, "policy": "evt", "split": "test",
             "out": "eval.json"},
    "sweep": {"data": None, "missions": "table3", "policies": "evt,entropy", "alpha": 5.0, "tail": 0.10,
              "gate": 0.29, **_train_defaults(), **_FUSION, "report": "report", "svg": False},
    "gradcheck": {"seed": 0, "n_probe": 50, "batch": 8, "n_known": 3, "epoch": 20, **_FUSION,
                  "hidden": _train_defaults()["hidden"], "latent_dim": 32, "out": None},
    "report": {"input": None, "out": None, "svg": False},
}

# flags whose value names an existing input path
_INPUT_FLAGS = {"data": "--data", "model": "--model", "calibration": "--calibration", "input": "--input"}
_REQUIRED = {
    "train": ("data",),
    "calibrate": ("model", "data"),
    "eval": ("model", "calibration", "data"),
    "sweep": ("data",),
    "report": ("input",),
}


# --- argument parsing -------------------------------------------------------------


def _int_list(text):
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add(p, *flags, **kw):
    # absent flags must not shadow config-file values
    p.add_argument(*flags, default=argparse.SUPPRESS, **kw)


def _train_flags(p):
    _add(p, "--epochs", type=int)
    _add(p, "--batch-size", type=int)
    _add(p, "--seed", type=int)
    _add(p, "--latent-dim", type=int)
    _add(p, "--hidden", help="comma-separated hidden widths")
    _add(p, "--learning-rate", type=float)
    _add(p, "--kl-warmup-epochs", type=int)
    _add(p, "--omega0", type=float, help="KL weight floor for correctly classified samples")
    _add(p, "--omega-max", type=float, help="ceiling of the KL warm-up")
    _add(p, "--n-samples", type=int, help="reparameterized samples per input")
    _add(p, "--class-prior", action="store_true", help="class-conditional latent prior means")
    _add(p, "--prior-scale", type=float)
    _add(p, "--window", type=int, help="samples per record fed to the fusion step")
    _add(p, "--time-points", type=int, help="decimated time-domain feature length")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ossr", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"ossr {__version__}")
    parser.add_argument("--config", help="JSON config file (keys grouped by subcommand)")
    parser.add_argument("--threads", type=int, default=1, help="BLAS thread cap (default 1 for reproducibility)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--print-config", action="store_true", help="print the merged config and exit")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")

    p = sub.add_parser("gen", help="generate the synthetic benchmark dataset")
    _add(p, "--seed", type=int)
    _add(p, "--records-per-class", type=int)
    _add(p, "--record-length", type=int)
    _add(p, "--sample-rate", type=float)
    _add(p, "--format", choices=FORMATS)
    _add(p, "--out", help="output directory")

    p = sub.add_parser("train", help="train a DVEC on the known classes of a dataset")
    _add(p, "--data", help="dataset directory")
    _add(p, "--known", help="comma-separated known class ids (default: all)")
    _train_flags(p)
    _add(p, "--out", help="checkpoint path")
    _add(p, "--history", help="training history JSON (default: <out>.history.json)")

    p = sub.add_parser("calibrate", help="fit EVT and entropy discriminators on the validation split")
    _add(p, "--model")
    _add(p, "--data")
    _add(p, "--alpha", type=float, help="percent of validation samples above threshold")
    _add(p, "--tail", type=float, help="tail fraction for the Weibull fit")
    _add(p, "--gate", type=float, help="openness gate for the openness-gated policy")
    _add(p, "--out")

    p = sub.add_parser("eval", help="open-set evaluation of a calibrated model on one split")
    _add(p, "--model")
    _add(p, "--calibration")
    _add(p, "--data")
    _add(p, "--policy", choices=POLICIES)
    _add(p, "--split", choices=("train", "val", "test"))
    _add(p, "--out")

    p = sub.add_parser("sweep", help="train, calibrate and score every mission under every policy")
    _add(p, "--data")
    _add(p, "--missions", help="'table3' or comma-separated mission ids")
    _add(p, "--policies", help=f"comma-separated subset of {','.join(POLICIES)}")
    _add(p, "--alpha", type=float)
    _add(p, "--tail", type=float)
    _add(p, "--gate", type=float)
    _train_flags(p)
    _add(p, "--report", help="report directory")
    _add(p, "--svg", action="store_true", help="also plot A0 against openness")

    p = sub.add_parser("gradcheck", help="finite-difference check of the DVEC loss gradients")
    _add(p, "--seed", type=int)
    _add(p, "--n-probe", type=int, help="probed entries per parameter tensor")
    _add(p, "--batch", type=int)
    _add(p, "--n-known", type=int)
    _add(p, "--epoch", type=int, help="epoch fed to the KL schedule")
    _add(p, "--window", type=int)
    _add(p, "--time-points", type=int)
    _add(p, "--hidden")
    _add(p, "--latent-dim", type=int)
    _add(p, "--out", help="optional JSON report")

    p = sub.add_parser("report", help="re-render the table and plot of an existing sweep report")
    _add(p, "--input", help="report.json written by sweep")
    _add(p, "--out", help="output directory (default: alongside the input)")
    _add(p, "--svg", action="store_true")
    return parser


def _read_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"--config: no such file {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"--config: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise UsageError("--config: top level must be an object")
    version = data.get("schema_version")
    if version != CONFIG_SCHEMA_VERSION:
        raise UsageError(f"--config: schema_version must be {CONFIG_SCHEMA_VERSION}, got {version!r}")
    unknown = set(data) - set(SUBCOMMANDS) - {"schema_version"}
    if unknown:
        raise UsageError(f"--config: unknown sections {sorted(unknown)}")
    return data


def merge_config(command: str, cli: dict, file_cfg: dict | None = None) -> dict:
    """Defaults, overridden by the config-file section, overridden by CLI flags."""
    cfg = dict(DEFAULTS[command])
    section = (file_cfg or {}).get(command, {})
    bad = set(section) - set(cfg)
    if bad:
        raise UsageError(f"--config: unknown keys for {command}: {sorted(bad)}")
    cfg.update(section)
    cfg.update({k: v for k, v in cli.items() if k in cfg})
    return cfg


def _validate_inputs(command: str, cfg: dict):
    for key in _REQUIRED.get(command, ()):
        if cfg.get(key) in (None, ""):
            raise UsageError(f"{command}: {_INPUT_FLAGS[key]} is required")
    for key, flag in _INPUT_FLAGS.items():
        if cfg.get(key) and not Path(cfg[key]).exists():
            raise UsageError(f"{command}: {flag} path does not exist: {cfg[key]}")


# --- provenance -------------------------------------------------------------------


def git_blob_hash(path) -> str:
    """SHA-1 of ``blob <size>\\0<content>``, as ``git hash-object`` computes it."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def content_hash(path) -> str:
    """Blob hash of a file, or a hash over the sorted (name, blob hash) pairs of a directory's files."""
    path = Path(path)
    if path.is_file():
        return git_blob_hash(path)
    h = hashlib.sha1()
    for child in sorted(p for p in path.iterdir() if p.is_file()):
        h.update(f"{child.name} {git_blob_hash(child)}\n".encode())
    return h.hexdigest()


def provenance(command: str, cfg: dict, seed, inputs: dict) -> dict:
    return {
        "tool": "ossr",
        "version": __version__,
        "subcommand": command,
        "seed": seed,
        "config": cfg,
        "inputs": {role: content_hash(p) for role, p in sorted(inputs.items())},
    }


def out_path(path) -> Path:
    path = Path(path)
    root = os.environ.get(ENV_OUTPUT_ROOT)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- helpers ---------------------------------------------------------------------


def _train_config(cfg: dict) -> TrainConfig:
    d = {k: cfg[k] for k in _TRAIN_KEYS if k in cfg}
    d["hidden"] = tuple(_parse_ints(d["hidden"], "--hidden"))
    try:
        return TrainConfig(**d)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _fusion_config(cfg: dict) -> FusionConfig:
    try:
        return FusionConfig(int(cfg["window"]), int(cfg["time_points"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _parse_ints(value, flag) -> list[int]:
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    try:
        return _int_list(value)
    except argparse.ArgumentTypeError as exc:
        raise UsageError(f"{flag}: {exc}") from None


def _known_split(records, known):
    known = set(known)
    return [r for r in records if r.label in known]


def _model_mission(model: DvecModel, manifest: Manifest):
    known = tuple(sorted(model.known_class_ids))
    n = manifest.n_classes
    if n == TABLE3_CLASSES:
        for mid, (k, _) in TABLE3.items():
            if tuple(k) == known:
                return build_custom_mission(mid, known, range(n))
    return build_custom_mission(0, known, range(n))


# --- subcommands -----------------------------------------------------------------


def cmd_gen(cfg: dict) -> int:
    try:
        gcfg = GeneratorConfig(
            seed=cfg["seed"],
            records_per_class=cfg["records_per_class"],
            record_length=cfg["record_length"],
            sample_rate=cfg["sample_rate"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = out_path(cfg["out"])
    prov = provenance("gen", cfg, cfg["seed"], {})
    manifest = generate_dataset(gcfg, out, cfg["format"], provenance=prov)
    print(f"wrote {sum(e['records'] for e in manifest.splits.values())} records to {out} ({manifest.checksum[:12]})")
    return 0


def cmd_train(cfg: dict) -> int:
    tcfg = _train_config(cfg)
    fcfg = _fusion_config(cfg)
    manifest, splits = load_splits(cfg["data"])
    known = sorted(_parse_ints(cfg["known"], "--known")) if cfg["known"] else list(range(manifest.n_classes))
    if not known or any(not 0 <= c < manifest.n_classes for c in known):
        raise UsageError(f"--known must list class ids in 0..{manifest.n_classes - 1}")
    tr, va = _known_split(splits["train"], known), _known_split(splits["val"], known)
    stats = fit_standardization(tr, fcfg)
    Xtr, ytr = fuse_many(tr, fcfg, stats)
    Xva, yva = fuse_many(va, fcfg, stats)
    model = DvecModel(fcfg.dim, known, tcfg)
    model.fusion_cfg, model.fusion_stats = fcfg, stats
    model, history = train(model, (Xtr, ytr), (Xva, yva))
    prov = provenance("train", cfg, tcfg.seed, {"data": cfg["data"]})
    out = out_path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out, {"provenance": prov, "class_names": manifest.class_names})
    hist_path = out_path(cfg["history"]) if cfg["history"] else out.with_name(out.name + ".history.json")
    val_acc = closed_set_accuracy(model, Xva, yva)
    _write_json(hist_path, {"provenance": prov, "history": history.to_dict(), "val_accuracy": val_acc,
                            "checksum": model.checksum()})
    print(f"known={known} best_epoch={history.best_epoch} val_accuracy={val_acc:.4f} -> {out}")
    return 0


def _load_model(path):
    model, header = DvecModel.load(path)
    if model.fusion_cfg is None:
        raise UsageError(f"--model: checkpoint {path} carries no fusion settings")
    return model, header


def cmd_calibrate(cfg: dict) -> int:
    model, header = _load_model(cfg["model"])
    manifest, splits = load_splits(cfg["data"])
    known = model.known_class_ids
    fcfg, stats = model.fusion_cfg, model.fusion_stats
    Xtr, ytr = fuse_many(_known_split(splits["train"], known), fcfg, stats)
    Xva, yva = fuse_many(_known_split(splits["val"], known), fcfg, stats)
    class_stats = extract_class_stats(model, (Xtr, ytr), (Xva, yva))
    calib = calibrate(model, class_stats, (Xva, yva), cfg["alpha"], cfg["tail"], cfg["gate"])
    prov = provenance("calibrate", cfg, header.get("seed"), {"model": cfg["model"], "data": cfg["data"]})
    out = out_path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    calib.save(out, {"provenance": prov})
    print(f"calibrated {len(known)} classes (alpha={cfg['alpha']}, tail={cfg['tail']}) -> {out}")
    return 0


def cmd_eval(cfg: dict) -> int:
    model, header = _load_model(cfg["model"])
    calib = Calibration.load(cfg["calibration"])
    if calib.known_class_ids != sorted(model.known_class_ids):
        raise UsageError("--calibration was fitted for a different set of known classes than --model")
    manifest, splits = load_splits(cfg["data"])
    mission = _model_mission(model, manifest)
    X, y = fuse_many(splits[cfg["split"]], model.fusion_cfg, model.fusion_stats)
    if np.any(y < 0):
        raise DomainError(f"split {cfg['split']} contains unlabeled records; cannot score")

    def predict(X):
        mu, _, _ = model.encode(X)
        return np.array([v.predicted for v in decide(mu, softmax(model.logits(mu)), calib, cfg["policy"],
                                                      mission.openness)], dtype=np.int64)

    report = evaluate_mission(mission, predict, X, y, cfg["policy"])
    report.active_policy = resolve_policy(cfg["policy"], mission.openness, calib.gate)
    prov = provenance("eval", cfg, header.get("seed"),
                      {"model": cfg["model"], "calibration": cfg["calibration"], "data": cfg["data"]})
    _write_json(out_path(cfg["out"]), {"provenance": prov, "mission": mission.to_dict(), "report": report.to_dict()})
    print(f"mission {mission.id} policy={cfg['policy']} A0={report.a0:.4f} known_acc={report.known_accuracy:.4f}"
          f" unknown_detection={report.unknown_detection_rate}")
    return 0


def _select_missions(spec: str, manifest: Manifest):
    missions = build_missions(manifest)
    if spec == "table3":
        return missions
    ids = _parse_ints(spec, "--missions")
    by_id = {m.id: m for m in missions}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise UsageError(f"--missions: unknown mission ids {missing}")
    return [by_id[i] for i in ids]


def table4_rows(sweep_dict: dict) -> list[list[str]]:
    """Rows shaped like the benchmark accuracy table: one per discriminator, one column per mission."""
    mission_ids = [m["id"] for m in sweep_dict["missions"]]
    cells = {(c["mission_id"], c["policy"]): c for c in sweep_dict["cells"]}
    rows = [["method", "discriminator", *[f"mission_{i}" for i in mission_ids]]]
    for p in sweep_dict["policies"]:
        row = ["DVEC", {"evt": "EVT", "entropy": "Entropy"}.get(p, p)]
        for i in mission_ids:
            c = cells[(i, p)]
            if c["status"] == "ok":
                row.append(f"{c['a0']:.4f}")
            else:
                row.append("/" if c["status"] == "NotApplicable" else "error")
        rows.append(row)
    return rows


def write_table(path: Path, sweep_dict: dict):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(table4_rows(sweep_dict))
    path.write_text(buf.getvalue())


def write_svg(path: Path, sweep_dict: dict):
    try:
        import matplotlib
    except ImportError:
        raise UsageError("--svg needs matplotlib (pip install matplotlib)") from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    openness = {m["id"]: m["openness"] for m in sweep_dict["missions"]}
    with matplotlib.rc_context({"svg.hashsalt": "ossr", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for p in sweep_dict["policies"]:
            pts = sorted((openness[c["mission_id"]], c["a0"]) for c in sweep_dict["cells"]
                         if c["policy"] == p and c["status"] == "ok")
            if pts:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, marker="o", label=p)
        ax.set_xlabel("openness")
        ax.set_ylabel("A0")
        ax.set_ylim(0, 1.02)
        ax.grid(alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def _render(report_dir: Path, doc: dict, svg: bool):
    report_dir.mkdir(parents=True, exist_ok=True)
    write_table(report_dir / "table4.csv", doc["sweep"])
    if svg:
        write_svg(report_dir / "a0_vs_openness.svg", doc["sweep"])


def cmd_sweep(cfg: dict) -> int:
    tcfg = _train_config(cfg)
    fcfg = _fusion_config(cfg)
    policies = [p.strip() for p in str(cfg["policies"]).split(",") if p.strip()]
    bad = [p for p in policies if p not in POLICIES]
    if bad or not policies:
        raise UsageError(f"--policies: choose from {','.join(POLICIES)}")
    manifest, splits = load_splits(cfg["data"])
    missions = _select_missions(str(cfg["missions"]), manifest)
    disc = DiscConfig(cfg["alpha"], cfg["tail"], cfg["gate"])
    rep = sweep(missions, policies, splits, tcfg, disc, fcfg, progress=log.info)
    doc = {"provenance": provenance("sweep", cfg, tcfg.seed, {"data": cfg["data"]}), "sweep": rep.to_dict()}
    report_dir = out_path(cfg["report"])
    _write_json(report_dir / "report.json", doc)
    _render(report_dir, doc, cfg["svg"])
    for row in table4_rows(doc["sweep"]):
        print("  ".join(f"{v:>13}" for v in row))
    trend = doc["sweep"]["trend"]
    print(f"trend: longest non-decreasing gap run {trend['longest_nondecreasing']} of {trend['comparable']}")
    return 0


def cmd_gradcheck(cfg: dict) -> int:
    fcfg = _fusion_config(cfg)
    hidden = tuple(_parse_ints(cfg["hidden"], "--hidden"))
    tcfg = TrainConfig(seed=cfg["seed"], hidden=hidden, latent_dim=cfg["latent_dim"])
    rng = np.random.default_rng(np.random.SeedSequence([cfg["seed"], 0x6C4E]))
    known = list(range(cfg["n_known"]))
    model = DvecModel(fcfg.dim, known, tcfg)
    X = rng.standard_normal((cfg["batch"], fcfg.dim))
    y = np.array(known * (cfg["batch"] // len(known) + 1))[: cfg["batch"]]
    eps = rng.standard_normal((tcfg.n_samples, cfg["batch"], tcfg.latent_dim))
    first = dvec_loss(model, X, y, cfg["epoch"], eps=eps)
    lambdas = first.lambdas.copy()

    def loss_fn():
        # a flipped gate means the probe crossed a decision boundary
        res = dvec_loss(model, X, y, cfg["epoch"], eps=eps, backward=False)
        if not np.array_equal(res.lambdas, lambdas):
            log.warning("KL gate flipped during a probe")
        return res.loss

    results = gradcheck(loss_fn, model.params(), n_probe=cfg["n_probe"], rng=rng)
    per_tensor = {}
    for name, _, a, n, ok in results:
        e = per_tensor.setdefault(name, {"probes": 0, "failures": 0, "max_rel_error": 0.0})
        e["probes"] += 1
        e["failures"] += int(not ok)
        denom = max(abs(a), abs(n))
        if denom > 0:
            e["max_rel_error"] = max(e["max_rel_error"], abs(a - n) / denom)
    failures = sum(e["failures"] for e in per_tensor.values())
    for name, e in per_tensor.items():
        print(f"{name:20s} probes={e['probes']:3d} failures={e['failures']} max_rel={e['max_rel_error']:.2e}")
    if cfg["out"]:
        _write_json(out_path(cfg["out"]), {"provenance": provenance("gradcheck", cfg, cfg["seed"], {}),
                                           "tensors": per_tensor, "failures": failures})
    if failures:
        raise DomainError(f"{failures} gradient probes disagree with finite differences")
    print("gradcheck ok")
    return 0


def cmd_report(cfg: dict) -> int:
    src = Path(cfg["input"])
    if src.is_dir():
        src = src / "report.json"
    try:
        doc = json.loads(src.read_text())
        doc["sweep"]["cells"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DomainError(f"{src}: not a sweep report ({exc})") from None
    out = out_path(cfg["out"]) if cfg["out"] else src.parent
    _render(out, doc, cfg["svg"])
    for row in table4_rows(doc["sweep"]):
        print("  ".join(f"{v:>13}" for v in row))
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def _limit_threads(n: int):
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: --help exits 0, bad flags exit 2
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        file_cfg = _read_config_file(args.config) if args.config else None
        cli = {k: v for k, v in vars(args).items()
               if k not in ("command", "config", "threads", "verbose", "print_config")}
        cfg = merge_config(args.command, cli, file_cfg)
        if args.print_config:
            print(json.dumps({"schema_version": CONFIG_SCHEMA_VERSION, args.command: cfg}, indent=2, sort_keys=True))
            return 0
        log.info("effective config: %s", json.dumps(cfg, sort_keys=True))
        _validate_inputs(args.command, cfg)
        with _limit_threads(args.threads):
            return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"ossr: error: {exc}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"ossr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
