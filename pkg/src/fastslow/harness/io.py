"""On-disk formats: FTRS feature files, JSONL manifests, JSON checkpoints."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from fastslow.encoder import DTYPE, FeatureMatrix

MAGIC = b"FTRS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIf")
CHECKPOINT_VERSION = 1


class FeatureFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


def features_to_bytes(features: FeatureMatrix) -> bytes:
    n, d = features.data.shape
    header = _HEADER.pack(MAGIC, VERSION, n, d, features.frame_shift_ms)
    return header + features.data.astype("<f4", copy=False).tobytes(order="C")


def features_from_bytes(raw: bytes) -> FeatureMatrix:
    if len(raw) < _HEADER.size:
        raise FeatureFormatError(f"truncated header: {len(raw)} of {_HEADER.size} bytes", len(raw))
    magic, version, frames, dims, shift = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FeatureFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FeatureFormatError(f"unsupported version {version}", 4)
    if not math.isfinite(shift) or shift <= 0:
        raise FeatureFormatError(f"invalid frame shift {shift}", 16)
    expected = frames * dims * 4
    payload = len(raw) - _HEADER.size
    if payload < expected:
        raise FeatureFormatError(
            f"truncated payload: header declares {frames}x{dims} floats ({expected} bytes), found {payload}",
            len(raw),
        )
    if payload > expected:
        raise FeatureFormatError(f"{payload - expected} trailing bytes after payload", _HEADER.size + expected)
    data = np.frombuffer(raw, dtype="<f4", count=frames * dims, offset=_HEADER.size)
    return FeatureMatrix(data.reshape(frames, dims).astype(DTYPE), float(shift))


def save_features(path: str | Path, features: FeatureMatrix) -> None:
    Path(path).write_bytes(features_to_bytes(features))


def load_features(path: str | Path) -> FeatureMatrix:
    return features_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    features: Path
    text: str
    alignment_ms: tuple[float, ...] | None = None
    table: Path | None = None

    def to_json(self, base: Path | None = None) -> dict:
        rel = lambda p: str(p.relative_to(base)) if base is not None else str(p)  # noqa: E731
        d = {"id": self.id, "features": rel(self.features), "text": self.text}
        if self.alignment_ms is not None:
            d["alignment_ms"] = list(self.alignment_ms)
        if self.table is not None:
            d["table"] = rel(self.table)
        return d


def load_manifest(path: str | Path, check_files: bool = True) -> list[ManifestRecord]:
    path = Path(path)
    base = path.parent
    records, seen = [], set()
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as err:
            raise ValueError(f"{path}:{lineno}: invalid JSON ({err.msg})") from None
        for key in ("id", "features", "text"):
            if key not in d:
                raise ValueError(f"{path}:{lineno}: missing field {key!r}")
        if d["id"] in seen:
            raise ValueError(f"{path}:{lineno}: duplicate id {d['id']!r}")
        seen.add(d["id"])
        rec = ManifestRecord(
            id=str(d["id"]),
            features=base / d["features"],
            text=d["text"],
            alignment_ms=None if d.get("alignment_ms") is None else tuple(float(x) for x in d["alignment_ms"]),
            table=None if d.get("table") is None else base / d["table"],
        )
        if check_files:
            for p in (rec.features, rec.table):
                if p is not None and not p.exists():
                    raise ValueError(f"{path}:{lineno}: file not found: {p}")
        records.append(rec)
    return records


def write_manifest(path: str | Path, records: Iterable[ManifestRecord]) -> None:
    path = Path(path)
    lines = [json.dumps(r.to_json(path.parent), sort_keys=True) for r in records]
    path.write_text("".join(line + "\n" for line in lines))


# ---------------------------------------------------------------------------
# json helpers
# ---------------------------------------------------------------------------


def dump_json(obj, path: str | Path | None = None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float32)
    return {"shape": list(arr.shape), "data": [float(x) for x in arr.ravel()]}


def decode_array(d: dict) -> np.ndarray:
    shape = tuple(d["shape"])
    data = np.asarray(d["data"], dtype=np.float32)
    if data.size != int(np.prod(shape)):
        raise ValueError(f"array of shape {shape} has {data.size} values")
    return data.reshape(shape)
