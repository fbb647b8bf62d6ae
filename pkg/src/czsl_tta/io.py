"""On-disk formats: EMB1 matrices, bundle manifests and record streams.

EMB1 layout: the 4 bytes ``EMB1``, row count and column count as unsigned
32-bit little-endian integers, then rows*cols float32 little-endian values
in row-major order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Optional

import numpy as np

from .space import CompositionSpace, ManifestError, build_composition_space, l2_normalize

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sII")


class FormatError(ValueError):
    pass


class RecordFormatError(FormatError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


def write_matrix(path, m: np.ndarray) -> None:
    m = np.ascontiguousarray(m, dtype="<f4")
    if m.ndim != 2:
        raise FormatError(f"expected a 2-d matrix, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, m.shape[0], m.shape[1]))
        fh.write(m.tobytes(order="C"))


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {rows}x{cols}, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).astype(np.float32)


@dataclass
class Bundle:
    """A dataset as stored on disk (float32 matrices, raw manifest)."""

    manifest: dict
    text: np.ndarray
    train_features: np.ndarray
    train_labels: list
    test_features: np.ndarray
    test_labels: list
    extra: dict = field(default_factory=dict)

    def space(self, world: Optional[str] = None) -> CompositionSpace:
        manifest = dict(self.manifest)
        if world is not None:
            manifest["world"] = world
            if world == "closed":
                manifest["feasibility_mask"] = None
        return build_composition_space(manifest)

    def validate(self) -> CompositionSpace:
        space = self.space()
        d = self.manifest.get("dim", self.text.shape[1])
        for name in ("text", "train_features", "test_features"):
            m = getattr(self, name)
            if m.ndim != 2 or m.shape[1] != d:
                raise FormatError(f"{name} has shape {m.shape}, expected (*, {d})")
            if not np.all(np.isfinite(m)):
                raise FormatError(f"{name} contains non-finite values")
        text_pairs = set(self.text_pairs)
        if len(text_pairs) != self.text.shape[0]:
            raise FormatError(f"text has {self.text.shape[0]} rows but text_pairs lists {len(self.text_pairs)}")
        missing = [p for p in space.seen_pairs + space.unseen_pairs if p not in text_pairs]
        if missing:
            raise FormatError(f"no text embedding for pair {list(missing[0])}")
        if len(self.train_labels) != self.train_features.shape[0]:
            raise FormatError("train label count does not match train feature rows")
        if len(self.test_labels) != self.test_features.shape[0]:
            raise FormatError("test label count does not match test feature rows")
        for lab in self.train_labels:
            if not space.is_seen(lab):
                raise FormatError(f"train label {list(lab)} is not a seen pair")
        for lab in self.test_labels:
            if not (space.is_seen(lab) or space.is_unseen(lab)):
                raise FormatError(f"test label {list(lab)} is neither seen nor unseen")
        return space

    @property
    def text_pairs(self) -> list[tuple[int, int]]:
        raw = self.manifest.get("text_pairs")
        if raw is None:
            raw = self.manifest["seen_pairs"] + self.manifest["unseen_pairs"]
        return [(int(a), int(o)) for a, o in raw]

    def candidate_text(self, space: CompositionSpace) -> np.ndarray:
        """Unit-norm float64 text prototypes in candidate order."""
        row = {p: i for i, p in enumerate(self.text_pairs)}
        missing = [p for p in space.candidates if p not in row]
        if missing:
            raise FormatError(f"no text embedding for candidate {list(missing[0])}")
        return l2_normalize(self.text[[row[p] for p in space.candidates]])


def save_bundle(bundle: Bundle, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "text": "text.emb",
        "train_features": "train.emb",
        "test_features": "test.emb",
        "labels": "labels.json",
    }
    write_matrix(out / files["text"], bundle.text)
    write_matrix(out / files["train_features"], bundle.train_features)
    write_matrix(out / files["test_features"], bundle.test_features)
    (out / files["labels"]).write_text(
        json.dumps({"train": bundle.train_labels, "test": bundle.test_labels}) + "\n"
    )
    manifest = dict(bundle.manifest, files=files)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return out


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from None


def load_bundle(bundle_dir) -> Bundle:
    root = Path(bundle_dir)
    manifest = load_manifest(root)
    files = manifest.get("files", {})
    try:
        text = read_matrix(root / files.get("text", "text.emb"))
        train = read_matrix(root / files.get("train_features", "train.emb"))
        test = read_matrix(root / files.get("test_features", "test.emb"))
        labels = json.loads((root / files.get("labels", "labels.json")).read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"bundle file missing: {exc.filename}") from None
    if "feasibility_mask" in files:
        manifest = dict(manifest, feasibility_mask=json.loads((root / files["feasibility_mask"]).read_text()))
    bundle = Bundle(manifest, text, train, labels["train"], test, labels["test"])
    bundle.validate()
    return bundle


# -- prediction records ---------------------------------------------------

RECORD_FIELDS = (
    "sample_index",
    "true_pair",
    "pseudo_pair",
    "pred_pair",
    "entropy",
    "queued",
    "best_seen_pair",
    "best_seen_logit",
    "best_unseen_pair",
    "best_unseen_logit",
    "loss_pe",
    "loss_mcrl",
    "loss_total",
    "step_failed",
)


def dump_record(fh: IO[str], record) -> None:
    data = record if isinstance(record, dict) else record.to_dict()
    fh.write(json.dumps(data, allow_nan=False) + "\n")
    fh.flush()


def write_records(path, records: Iterable) -> None:
    with open(path, "w") as fh:
        for rec in records:
            dump_record(fh, rec)


def read_records(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.endswith("\n"):
                raise RecordFormatError(lineno, "truncated record (no line terminator)")
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordFormatError(lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise RecordFormatError(lineno, "record is not an object")
            missing = [k for k in RECORD_FIELDS if k not in rec]
            if missing:
                raise RecordFormatError(lineno, f"missing field {missing[0]!r}")
            out.append(rec)
    return out
