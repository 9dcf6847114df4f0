"""On-disk dataset format: a JSON manifest next to CSV or float32 split files.

CSV rows are ``label,v1,...,vN``; an unlabeled record uses the literal label
``unlabeled``. Binary files hold little-endian float32 rows of ``1 + N``
values with the label in column 0 (``-1`` for unlabeled).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataIntegrityError, DatasetParseError
from .signals import RawSignal

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
FORMATS = ("csv", "bin")
SPLITS = ("train", "val", "test")
UNLABELED_TOKEN = "unlabeled"


@dataclass
class Manifest:
    record_length: int
    sample_rate: float
    class_names: list[str]
    format: str = "csv"
    splits: dict = field(default_factory=dict)
    checksum: str = ""
    provenance: dict = field(default_factory=dict)
    version: int = MANIFEST_VERSION

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def to_json(self) -> str:
        d = {
            "version": self.version,
            "record_length": self.record_length,
            "sample_rate": self.sample_rate,
            "class_names": list(self.class_names),
            "format": self.format,
            "splits": self.splits,
            "checksum": self.checksum,
            "provenance": self.provenance,
        }
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d) -> "Manifest":
        try:
            m = cls(
                record_length=int(d["record_length"]),
                sample_rate=float(d["sample_rate"]),
                class_names=list(d["class_names"]),
                format=d.get("format", "csv"),
                splits=dict(d.get("splits", {})),
                checksum=d.get("checksum", ""),
                provenance=dict(d.get("provenance", {})),
                version=int(d.get("version", MANIFEST_VERSION)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetParseError(f"invalid manifest: {exc}") from exc
        if m.format not in FORMATS:
            raise DatasetParseError(f"unknown format {m.format!r}")
        if m.record_length < 1 or m.sample_rate <= 0:
            raise DatasetParseError("record_length and sample_rate must be positive")
        return m

    @classmethod
    def read(cls, path) -> "Manifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise DatasetParseError(f"manifest is not valid JSON: {exc}", path=path) from exc


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def combined_checksum(splits: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(splits):
        h.update(f"{name}:{splits[name]['sha256']}\n".encode())
    return h.hexdigest()


def _as_float32_exact(x: np.ndarray, row: int) -> np.ndarray:
    x32 = x.astype("<f4")
    if not np.array_equal(x32.astype(np.float64), x):
        raise DataIntegrityError(f"record {row} is not exactly representable as float32")
    return x32


def write_split(path, signals: Sequence[RawSignal], fmt: str) -> None:
    """Write records in file order. Samples must already be float32-exact."""
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="\n") as fh:
            for i, s in enumerate(signals):
                _as_float32_exact(s.samples, i)
                label = UNLABELED_TOKEN if s.label is None else str(s.label)
                fh.write(label + "," + ",".join(repr(float(v)) for v in s.samples) + "\n")
    elif fmt == "bin":
        with open(path, "wb") as fh:
            for i, s in enumerate(signals):
                row = np.empty(len(s) + 1, dtype="<f4")
                row[0] = -1.0 if s.label is None else float(s.label)
                row[1:] = _as_float32_exact(s.samples, i)
                fh.write(row.tobytes())
    else:
        raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")


def _check_label(raw: float | str, manifest: Manifest, row: int, path) -> Optional[int]:
    if raw == UNLABELED_TOKEN or raw == -1.0:
        return None
    try:
        val = float(raw)
    except ValueError:
        raise DatasetParseError(f"label {raw!r} is not an integer", row=row, path=path) from None
    if val != int(val) or not 0 <= val < manifest.n_classes:
        raise DatasetParseError(
            f"unknown label {raw!r} (manifest declares {manifest.n_classes} classes)", row=row, path=path
        )
    return int(val)


def _load_csv(path: Path, manifest: Manifest) -> list[RawSignal]:
    out = []
    with open(path) as fh:
        for row, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != manifest.record_length + 1:
                raise DatasetParseError(
                    f"expected {manifest.record_length} values, found {len(fields) - 1}", row=row, path=path
                )
            label = _check_label(fields[0].strip(), manifest, row, path)
            try:
                values = np.array([float(v) for v in fields[1:]])
            except ValueError as exc:
                raise DatasetParseError(f"malformed value: {exc}", row=row, path=path) from None
            if not np.all(np.isfinite(values)):
                raise DatasetParseError("non-finite sample value", row=row, path=path)
            out.append(RawSignal(values, manifest.sample_rate, label))
    return out


def _load_bin(path: Path, manifest: Manifest) -> list[RawSignal]:
    width = manifest.record_length + 1
    data = np.fromfile(path, dtype="<f4")
    n_rows, rem = divmod(data.size, width)
    if rem:
        raise DatasetParseError(
            f"truncated record: {rem} trailing values, expected rows of {width}", row=n_rows, path=path
        )
    data = data.reshape(n_rows, width).astype(np.float64)
    out = []
    for row in range(n_rows):
        label = _check_label(data[row, 0], manifest, row, path)
        values = data[row, 1:]
        if not np.all(np.isfinite(values)):
            raise DatasetParseError("non-finite sample value", row=row, path=path)
        out.append(RawSignal(values, manifest.sample_rate, label))
    return out


def load_dataset(path, fmt: Optional[str] = None, manifest: Optional[Manifest] = None) -> list[RawSignal]:
    """Load one data file, in file order.

    The manifest defaults to ``manifest.json`` in the same directory. When the
    manifest records a checksum for this file, the bytes are verified first.
    """
    path = Path(path)
    if manifest is None:
        manifest = Manifest.read(path.parent / MANIFEST_NAME)
    if fmt is None:
        fmt = path.suffix.lstrip(".") or manifest.format
    if fmt not in FORMATS:
        raise DatasetParseError(f"unknown format {fmt!r}", path=path)
    if not path.is_file():
        raise DatasetParseError("data file not found", path=path)
    for entry in manifest.splits.values():
        if entry.get("file") == path.name and entry.get("sha256"):
            if sha256_file(path) != entry["sha256"]:
                raise DataIntegrityError(f"{path}: checksum does not match manifest")
    return _load_csv(path, manifest) if fmt == "csv" else _load_bin(path, manifest)


def load_splits(directory) -> tuple[Manifest, dict[str, list[RawSignal]]]:
    directory = Path(directory)
    manifest = Manifest.read(directory)
    splits = {}
    for name, entry in manifest.splits.items():
        splits[name] = load_dataset(directory / entry["file"], manifest.format, manifest)
    return manifest, splits


def write_dataset(directory, splits: dict[str, Sequence[RawSignal]], manifest: Manifest) -> Manifest:
    """Write every split plus the manifest; returns the manifest with checksums filled in."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, records in splits.items():
        for i, s in enumerate(records):
            if len(s) != manifest.record_length:
                raise DataIntegrityError(f"split {name} record {i} has length {len(s)}")
        fname = f"{name}.{manifest.format}"
        write_split(directory / fname, records, manifest.format)
        entries[name] = {"file": fname, "records": len(records), "sha256": sha256_file(directory / fname)}
    manifest.splits = entries
    manifest.checksum = combined_checksum(entries)
    (directory / MANIFEST_NAME).write_text(manifest.to_json())
    return manifest
