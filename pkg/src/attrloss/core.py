"""Shared domain types, attribute encoding and the ATTRSET1 dataset container."""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

DATASET_MAGIC = b"ATTRSET1"
AGE_CAP = 100.0
ATTRIBUTE_NAMES = ("gender", "ethnicity", "age")


class DimensionError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class DatasetFormatError(ValueError):
    """Malformed dataset file; ``record`` is the offending record index if any."""

    def __init__(self, message: str, record: int | None = None):
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)
        self.record = record


class Gender(str, enum.Enum):
    MALE = "male"
    FEMALE = "female"


class Ethnicity(str, enum.Enum):
    ASIAN = "asian"
    CAUCASIAN = "caucasian"


def encode_age(age_years: float) -> float:
    if age_years < 0:
        raise ValueError(f"age must be non-negative, got {age_years}")
    return 2.0 * min(float(age_years), AGE_CAP) / AGE_CAP - 1.0


def encode_attributes(gender, ethnicity, age_years: float) -> np.ndarray:
    """Encode (gender, ethnicity, age) as a vector in [-1, 1]^3.

    Male and Asian map to +1, female and Caucasian to -1; age is truncated at
    100 years and mapped linearly from [0, 100] to [-1, 1]. Categories other
    than the two listed for each field raise ``ValueError``.
    """
    g = Gender(gender)
    e = Ethnicity(ethnicity)
    return np.array(
        [
            1.0 if g is Gender.MALE else -1.0,
            1.0 if e is Ethnicity.ASIAN else -1.0,
            encode_age(age_years),
        ]
    )


def attribute_distance(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"attribute vectors differ in shape: {p.shape} vs {q.shape}")
    return float(np.linalg.norm(p - q))


def _frozen(a, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Sample:
    input: np.ndarray
    label: int
    attributes: np.ndarray


@dataclass(frozen=True, eq=False)
class Dataset:
    """N samples stored column-wise: ``inputs`` (N, D), ``labels`` (N,), ``attributes`` (N, H).

    Labels are dense in ``[0, C)`` and every class occurs at least once.
    Arrays are made read-only on construction.
    """

    inputs: np.ndarray
    labels: np.ndarray
    attributes: np.ndarray
    num_classes: int
    name: str = "dataset"
    provenance: str = ""

    def __post_init__(self):
        x = _frozen(self.inputs)
        y = _frozen(self.labels, np.int64)
        p = _frozen(self.attributes)
        if x.ndim != 2 or y.ndim != 1 or p.ndim != 2:
            raise DimensionError("inputs and attributes must be 2-D, labels 1-D")
        if not (len(x) == len(y) == len(p)):
            raise DimensionError("inputs, labels and attributes differ in length")
        if len(y) == 0:
            raise DatasetFormatError("dataset has no samples")
        if np.any(y < 0) or np.any(y >= self.num_classes):
            bad = int(np.flatnonzero((y < 0) | (y >= self.num_classes))[0])
            raise DatasetFormatError(f"label {y[bad]} outside [0, {self.num_classes})", bad)
        missing = np.setdiff1d(np.arange(self.num_classes), y)
        if missing.size:
            raise DatasetFormatError(f"classes without samples: {missing[:5].tolist()}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
            bad = int(np.flatnonzero(~(np.isfinite(x).all(1) & np.isfinite(p).all(1)))[0])
            raise DatasetFormatError("non-finite value", bad)
        if np.any(np.abs(p) > 1.0):
            bad = int(np.flatnonzero(np.any(np.abs(p) > 1.0, axis=1))[0])
            raise DatasetFormatError("attribute outside [-1, 1]", bad)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "attributes", p)

    @classmethod
    def from_records(cls, inputs, raw_labels, attributes, **kw) -> "Dataset":
        """Build a dataset, remapping arbitrary labels to ``0..C-1`` in sorted order."""
        uniq, dense = np.unique(np.asarray(raw_labels), return_inverse=True)
        return cls(inputs, dense.reshape(-1), attributes, num_classes=len(uniq), **kw)

    @property
    def N(self) -> int:
        return self.inputs.shape[0]

    @property
    def D(self) -> int:
        return self.inputs.shape[1]

    @property
    def C(self) -> int:
        return self.num_classes

    @property
    def H(self) -> int:
        return self.attributes.shape[1]

    def __len__(self) -> int:
        return self.N

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.inputs[i], int(self.labels[i]), self.attributes[i])

    def __iter__(self) -> Iterator[Sample]:
        return (self[i] for i in range(self.N))

    @property
    def samples(self) -> list[Sample]:
        return list(self)

    def subset(self, indices, *, relabel: bool = True, name: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        kw = dict(name=name or self.name, provenance=self.provenance)
        if relabel:
            return Dataset.from_records(self.inputs[idx], self.labels[idx], self.attributes[idx], **kw)
        return Dataset(self.inputs[idx], self.labels[idx], self.attributes[idx], self.num_classes, **kw)

    def with_attribute_columns(self, columns: Sequence[int]) -> "Dataset":
        """Keep only the given attribute columns (controlled-attribute experiments).

        Sub-vectors are kept raw, without re-normalization.
        """
        return replace(self, attributes=self.attributes[:, list(columns)])


ATTRIBUTE_SUBSETS = {
    "g+e+a": (0, 1, 2),
    "e+a": (1, 2),
    "g+a": (0, 2),
    "g+e": (0, 1),
}


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Backbone layers ``theta`` [(W_l, b_l), ...], classifier ``W`` (K, C), ``b`` (C,),
    attribute map ``G`` (K, H) and class ``centers`` (C, K)."""

    theta: tuple
    W: np.ndarray
    b: np.ndarray
    G: np.ndarray
    centers: np.ndarray
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        K, C = self.W.shape
        if self.b.shape != (C,):
            raise DimensionError(f"b has shape {self.b.shape}, expected ({C},)")
        if self.G.shape[0] != K:
            raise DimensionError(f"G has {self.G.shape[0]} rows, expected {K}")
        if self.centers.shape != (C, K):
            raise DimensionError(f"centers have shape {self.centers.shape}, expected {(C, K)}")
        if self.theta and self.theta[-1][0].shape[1] != K:
            raise DimensionError("backbone output width does not match W")

    @property
    def K(self) -> int:
        return self.W.shape[0]

    @property
    def C(self) -> int:
        return self.W.shape[1]

    @property
    def H(self) -> int:
        return self.G.shape[1]

    def all_finite(self) -> bool:
        arrays = [self.W, self.b, self.G, self.centers]
        arrays += [a for layer in self.theta for a in layer]
        return all(np.all(np.isfinite(a)) for a in arrays)

    def equal(self, other: "ModelParams") -> bool:
        """Bitwise equality of every parameter block."""
        mine = [self.W, self.b, self.G, self.centers] + [a for l in self.theta for a in l]
        theirs = [other.W, other.b, other.G, other.centers] + [a for l in other.theta for a in l]
        return len(mine) == len(theirs) and all(
            a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(mine, theirs)
        )


# --- ATTRSET1 container -----------------------------------------------------

_HEADER = struct.Struct("<8sIIII")


def _record_dtype(D: int, H: int) -> np.dtype:
    return np.dtype([("label", "<u4"), ("attr", "<f8", (H,)), ("x", "<f8", (D,))])


def manifest_path(path) -> Path:
    return Path(str(path) + ".manifest")


def write_manifest(path, entries: dict) -> None:
    lines = [f"{k} = {str(v).replace(chr(10), ' ')}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DatasetFormatError(f"{path}:{lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def dataset_to_bytes(ds: Dataset) -> bytes:
    rec = np.zeros(ds.N, dtype=_record_dtype(ds.D, ds.H))
    rec["label"] = ds.labels
    rec["attr"] = ds.attributes
    rec["x"] = ds.inputs
    return _HEADER.pack(DATASET_MAGIC, ds.N, ds.D, ds.C, ds.H) + rec.tobytes()


def dataset_from_bytes(blob: bytes, name: str = "dataset", provenance: str = "") -> Dataset:
    if len(blob) < _HEADER.size:
        raise DatasetFormatError("file shorter than header")
    magic, N, D, C, H = _HEADER.unpack_from(blob)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}")
    if N == 0:
        raise DatasetFormatError("no samples; cannot cover declared classes")
    if D == 0 or C == 0:
        raise DatasetFormatError(f"invalid dimensions D={D}, C={C}")
    dt = _record_dtype(D, H)
    body = blob[_HEADER.size:]
    if len(body) != N * dt.itemsize:
        full = len(body) // dt.itemsize
        raise DatasetFormatError(
            f"payload holds {len(body)} bytes, expected {N * dt.itemsize} for N={N}",
            min(full, N - 1),
        )
    rec = np.frombuffer(body, dtype=dt, count=N)
    bad_label = np.flatnonzero(rec["label"] >= C)
    if bad_label.size:
        i = int(bad_label[0])
        raise DatasetFormatError(f"label {rec['label'][i]} >= C={C}", i)
    finite = np.isfinite(rec["x"]).all(axis=1) & np.isfinite(rec["attr"]).reshape(N, H).all(axis=1)
    if not finite.all():
        raise DatasetFormatError("NaN or infinite payload", int(np.flatnonzero(~finite)[0]))
    return Dataset(
        rec["x"].reshape(N, D),
        rec["label"].astype(np.int64),
        rec["attr"].reshape(N, H),
        num_classes=C,
        name=name,
        provenance=provenance,
    )


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dataset_to_bytes(ds))
    os.replace(tmp, path)
    write_manifest(manifest_path(path), {"name": ds.name, "provenance": ds.provenance})


def load_dataset(path) -> Dataset:
    path = Path(path)
    meta = {}
    if manifest_path(path).exists():
        meta = read_manifest(manifest_path(path))
    return dataset_from_bytes(
        path.read_bytes(),
        name=meta.get("name", path.stem),
        provenance=meta.get("provenance", ""),
    )
