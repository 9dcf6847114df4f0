import json

import numpy as np
import pytest

from ossr.dataset import Manifest, load_dataset, load_splits, sha256_file, write_dataset, write_split
from ossr.errors import DataIntegrityError, DatasetParseError
from ossr.signals import RawSignal
from ossr.synth import CLASS_NAMES


def _records(rng, n=6, length=16, labels=None):
    labels = list(range(n)) if labels is None else labels
    return [
        RawSignal(rng.standard_normal(length).astype(np.float32).astype(np.float64), 100.0, lab)
        for lab in labels
    ]


def _manifest(fmt, length=16):
    return Manifest(record_length=length, sample_rate=100.0, class_names=list(CLASS_NAMES), format=fmt)


@pytest.mark.parametrize("fmt", ["csv", "bin"])
def test_round_trip_is_bit_exact(tmp_path, rng, fmt):
    recs = _records(rng, labels=[0, 1, 2, 3, 4, 5, None])
    write_dataset(tmp_path, {"train": recs, "val": recs[:2], "test": recs[2:]}, _manifest(fmt))
    manifest, splits = load_splits(tmp_path)
    assert manifest.format == fmt
    assert [r.label for r in splits["train"]] == [0, 1, 2, 3, 4, 5, None]
    for a, b in zip(recs, splits["train"]):
        assert np.array_equal(a.samples, b.samples)
        assert b.sample_rate == 100.0


def test_six_row_file_gives_labels_0_to_5(tmp_path, rng):
    write_dataset(tmp_path, {"test": _records(rng)}, _manifest("csv"))
    assert [r.label for r in load_dataset(tmp_path / "test.csv")] == [0, 1, 2, 3, 4, 5]


def test_manifest_records_checksums(tmp_path, rng):
    m = write_dataset(tmp_path, {"train": _records(rng)}, _manifest("bin"))
    assert m.splits["train"]["sha256"] == sha256_file(tmp_path / "train.bin")
    assert m.splits["train"]["records"] == 6
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk["checksum"] == m.checksum


def test_short_row_names_the_row(tmp_path, rng):
    m = _manifest("csv", length=5000)
    good = ",".join(["0.5"] * 5000)
    bad = ",".join(["0.5"] * 4999)
    (tmp_path / "data.csv").write_text(f"0,{good}\n1,{bad}\n")
    (tmp_path / "manifest.json").write_text(m.to_json())
    with pytest.raises(DatasetParseError, match="row 1") as info:
        load_dataset(tmp_path / "data.csv")
    assert info.value.row == 1


@pytest.mark.parametrize(
    "row, message",
    [("7,1,2,3", "unknown label"), ("x,1,2,3", "not an integer"), ("1,1,nan,3", "non-finite"), ("1,1,a,3", "malformed")],
)
def test_bad_rows(tmp_path, row, message):
    (tmp_path / "manifest.json").write_text(_manifest("csv", length=3).to_json())
    (tmp_path / "d.csv").write_text(f"0,1,2,3\n{row}\n")
    with pytest.raises(DatasetParseError, match=message):
        load_dataset(tmp_path / "d.csv")


def test_truncated_binary(tmp_path, rng):
    write_dataset(tmp_path, {"train": _records(rng)}, _manifest("bin"))
    data = (tmp_path / "train.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(data[:-4])
    with pytest.raises(DatasetParseError, match="truncated"):
        load_dataset(tmp_path / "cut.bin")


def test_checksum_mismatch_detected(tmp_path, rng):
    write_dataset(tmp_path, {"train": _records(rng)}, _manifest("csv"))
    path = tmp_path / "train.csv"
    text = path.read_text()
    path.write_text(text.replace("0,", "1,", 1))
    with pytest.raises(DataIntegrityError, match="checksum"):
        load_dataset(path)


def test_writer_refuses_non_float32_samples(tmp_path):
    with pytest.raises(DataIntegrityError):
        write_split(tmp_path / "x.csv", [RawSignal(np.array([0.1, 0.2]), 1.0, 0)], "csv")


def test_wrong_record_length_rejected_on_write(tmp_path, rng):
    with pytest.raises(DataIntegrityError):
        write_dataset(tmp_path, {"train": _records(rng, length=8)}, _manifest("csv", length=16))


def test_invalid_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(DatasetParseError):
        Manifest.read(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps({"record_length": 4}))
    with pytest.raises(DatasetParseError):
        Manifest.read(tmp_path)
