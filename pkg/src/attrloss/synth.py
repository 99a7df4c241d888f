"""Seeded synthetic identity datasets whose structure depends on the attributes."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .core import Dataset, encode_attributes
from .rng import XorShift64Star, derive_seed

_BUCKET = re.compile(r"^\s*(male|female)\s*(?:(asian|caucasian)\s*)?([\(\[])\s*(\d+(?:\.\d+)?)\s*,\s*(\d+(?:\.\d+)?)\s*([\)\]])\s*$")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class Group:
    gender: str
    ethnicity: str
    age_low: float
    age_high: float

    def __post_init__(self):
        if self.age_low < 0 or self.age_high < self.age_low:
            raise ValueError(f"invalid age bucket [{self.age_low}, {self.age_high}]")


@dataclass
class SynthSpec:
    """Recipe for :func:`generate`.

    ``groups`` maps :class:`Group` to an identity count and is iterated in
    insertion order, which fixes identity labels and the random stream.
    """

    groups: dict
    D: int = 16
    samples_per_identity: int = 10
    attr_signal: float = 1.0
    identity_noise: float = 1.0
    observation_noise: float = 0.3
    nuisance: float = 0.0
    seed: int = 0
    name: str = "synthetic"
    mixing_seed: int | None = None
    degenerate: bool = field(default=False, init=False)

    def __post_init__(self):
        if any(c < 0 for c in self.groups.values()):
            raise ValueError("identity counts must be non-negative")
        if sum(self.groups.values()) < 2:
            raise ValueError("need at least two identities")
        if self.D < 1 or self.samples_per_identity < 1:
            raise ValueError("D and samples_per_identity must be positive")
        for g in self.groups:
            if not isinstance(g, Group):
                raise TypeError(f"group keys must be Group, got {g!r}")
        self.degenerate = self.attr_signal == 0 and self.identity_noise == 0


def generate(spec: SynthSpec) -> Dataset:
    """Draw a dataset.

    Each identity's prototype is ``attr_signal * A @ p + identity_noise * xi``
    for a fixed D x H mixing matrix ``A`` and standard normal ``xi``. Each
    sample adds ``observation_noise * eta`` and, if ``nuisance > 0``, a
    per-sample constant offset ``nuisance * z`` on every coordinate. Draw
    order: ``A`` (row-major) from stream "synth/mixing" (seeded by
    ``mixing_seed`` when given, so several datasets can share one ``A``); per identity its age
    then ``xi`` from "synth/identity"; per sample ``eta`` then ``z`` from
    "synth/samples".
    """
    mixing_seed = spec.seed if spec.mixing_seed is None else spec.mixing_seed
    mix_rng = XorShift64Star(derive_seed(mixing_seed, "synth/mixing"))
    id_rng = XorShift64Star(derive_seed(spec.seed, "synth/identity"))
    smp_rng = XorShift64Star(derive_seed(spec.seed, "synth/samples"))
    H = 3
    D = spec.D
    A = mix_rng.normal_array((D, H))

    protos, attrs = [], []
    for group, count in spec.groups.items():
        for _ in range(count):
            # (low, high]: 1 - u lies in (0, 1]
            age = group.age_low + (group.age_high - group.age_low) * (1.0 - id_rng.uniform())
            p = encode_attributes(group.gender, group.ethnicity, age)
            xi = id_rng.normal_array(D)
            protos.append(spec.attr_signal * (A @ p) + spec.identity_noise * xi)
            attrs.append(p)

    S = spec.samples_per_identity
    n_id = len(protos)
    X = np.empty((n_id * S, D))
    for k, proto in enumerate(protos):
        for s in range(S):
            x = proto + spec.observation_noise * smp_rng.normal_array(D)
            if spec.nuisance > 0:
                x = x + spec.nuisance * smp_rng.normal()
            X[k * S + s] = x
    labels = np.repeat(np.arange(n_id), S)
    P = np.repeat(np.array(attrs), S, axis=0)
    provenance = (
        f"synth seed={spec.seed} D={D} S={S} attr_signal={spec.attr_signal} "
        f"identity_noise={spec.identity_noise} observation_noise={spec.observation_noise} "
        f"nuisance={spec.nuisance}"
    )
    return Dataset(X, labels, P, num_classes=n_id, name=spec.name, provenance=provenance)


def identities_per_group(ds: Dataset) -> dict:
    """Count identities per (gender, ethnicity) code and encoded age, for reporting."""
    first = np.unique(ds.labels, return_index=True)[1]
    out: dict = {}
    for i in first:
        g, e = ds.attributes[i, 0], ds.attributes[i, 1]
        key = ("male" if g > 0 else "female", "asian" if e > 0 else "caucasian")
        out[key] = out.get(key, 0) + 1
    return out


TOY_AGES = (28, 50, 70)


def make_toy_age_set(
    seed: int = 0,
    samples_per_identity: int = 40,
    D: int = 8,
    attr_signal: float = 1.0,
    identity_noise: float = 0.35,
    observation_noise: float = 0.25,
) -> Dataset:
    """Nine identities of one gender and ethnicity: three each aged 28, 50 and 70."""
    groups = {Group("male", "caucasian", a, a): 3 for a in TOY_AGES}
    spec = SynthSpec(
        groups,
        D=D,
        samples_per_identity=samples_per_identity,
        attr_signal=attr_signal,
        identity_noise=identity_noise,
        observation_noise=observation_noise,
        seed=seed,
        name="toy_ages",
    )
    return generate(spec)


# --- presets ------------------------------------------------------------------


@dataclass
class Preset:
    name: str
    scale_divisor: float
    asian_fraction: float
    counts: dict  # (gender, ethnicity or None, low, high) -> raw count

    def groups(self, scale: float | None = None) -> dict:
        """Scaled identity counts per :class:`Group`, rounded half up."""
        div = self.scale_divisor if scale is None else scale
        out = {}
        for (gender, eth, lo, hi), raw in self.counts.items():
            n = round_half_up(raw / div)
            if eth is not None:
                out[Group(gender, eth, lo, hi)] = n
                continue
            n_asian = round_half_up(n * self.asian_fraction)
            out[Group(gender, "caucasian", lo, hi)] = n - n_asian
            out[Group(gender, "asian", lo, hi)] = n_asian
        return out


def parse_preset(text: str, source: str = "<preset>") -> Preset:
    meta = {}
    counts = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]") and "=" not in line:
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.rsplit("=", 1))
        if section == "groups":
            m = _BUCKET.match(key)
            if not m:
                raise ValueError(f"{source}:{lineno}: cannot parse group {key!r}")
            gender, eth, _, lo, hi, _ = m.groups()
            counts[(gender, eth, float(lo), float(hi))] = int(value)
        else:
            meta[key] = value
    return Preset(
        name=meta.get("name", source),
        scale_divisor=float(meta.get("scale_divisor", 1)),
        asian_fraction=float(meta.get("asian_fraction", 0.0)),
        counts=counts,
    )


def load_preset(name_or_path) -> Preset:
    """Load a shipped preset ("set1", "set2") or a preset file path."""
    path = Path(str(name_or_path))
    if path.exists():
        return parse_preset(path.read_text(encoding="utf-8"), str(path))
    res = resources.files("attrloss") / "presets" / f"{name_or_path}.preset"
    if not res.is_file():
        raise FileNotFoundError(f"unknown preset {name_or_path!r}")
    return parse_preset(res.read_text(encoding="utf-8"), f"{name_or_path}.preset")
