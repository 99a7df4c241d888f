"""Cosine-similarity identification/verification metrics and the feature-distance
bound verifier for trained attribute-aware models.

Scores are cosine *similarities* (larger is closer) sorted in descending
order; reports label them as such.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .core import DegenerateInputError, DimensionError
from .rng import XorShift64Star


# cosine similarities closer than this are ties (parallel vectors differ only by round-off)
TIE_TOLERANCE = 1e-12


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("cosine similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def concat_paired_features(f1, f2) -> np.ndarray:
    """Concatenate a feature with the feature of its paired view (e.g. a flipped image)."""
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    if f1.shape != f2.shape:
        raise DimensionError(f"shape mismatch {f1.shape} vs {f2.shape}")
    return np.concatenate([f1, f2], axis=-1)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(n == 0):
        raise DegenerateInputError("zero feature vector")
    return x / n


@dataclass(frozen=True, eq=False)
class GallerySplit:
    gallery_features: np.ndarray
    gallery_labels: np.ndarray
    probe_features: np.ndarray
    probe_labels: np.ndarray

    def __post_init__(self):
        gl = np.asarray(self.gallery_labels)
        if len(np.unique(gl)) != len(gl):
            raise ValueError("gallery labels must be unique")
        missing = np.setdiff1d(self.probe_labels, gl)
        if missing.size:
            raise ValueError(f"probe labels missing from gallery: {missing[:5].tolist()}")

    @classmethod
    def first_per_identity(cls, features, labels) -> "GallerySplit":
        """The first sample of each identity goes to the gallery, the rest are probes."""
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels)
        _, first = np.unique(labels, return_index=True)
        first = np.sort(first)
        is_gallery = np.zeros(len(labels), dtype=bool)
        is_gallery[first] = True
        return cls(features[first], labels[first], features[~is_gallery], labels[~is_gallery])

    def similarities(self) -> np.ndarray:
        """(probes, gallery) cosine similarity matrix."""
        return _unit_rows(self.probe_features) @ _unit_rows(self.gallery_features).T

    def true_ranks(self) -> np.ndarray:
        """1-based rank of each probe's true identity; ties (within
        ``TIE_TOLERANCE``) go to the lower gallery index."""
        if len(self.probe_labels) == 0:
            raise ValueError("no probes")
        S = self.similarities()
        pos = {int(l): i for i, l in enumerate(self.gallery_labels)}
        t = np.array([pos[int(l)] for l in self.probe_labels])
        s_true = S[np.arange(len(t)), t][:, None]
        cols = np.arange(S.shape[1])[None, :]
        tied = np.abs(S - s_true) <= TIE_TOLERANCE
        better = ((S > s_true) & ~tied) | (tied & (cols < t[:, None]))
        return better.sum(axis=1) + 1


def rank_k_identification(split: GallerySplit, k: int) -> float:
    n_gallery = len(split.gallery_labels)
    if not 1 <= k <= n_gallery:
        raise ValueError(f"k must be in [1, {n_gallery}]")
    return float(np.mean(split.true_ranks() <= k))


def cmc_curve(split: GallerySplit) -> np.ndarray:
    ranks = split.true_ranks()
    n_gallery = len(split.gallery_labels)
    counts = np.bincount(ranks, minlength=n_gallery + 1)[1:]
    return np.cumsum(counts) / len(ranks)


def verification_accuracy(similarities, same) -> tuple[float, float]:
    """Best accuracy of the rule ``similarity > threshold`` => same identity.

    Candidate thresholds are the midpoints between consecutive distinct
    sorted similarities plus one value below and one above the range.
    Returns ``(accuracy, threshold)``; the lowest threshold wins ties.
    """
    s = np.asarray(similarities, dtype=np.float64).reshape(-1)
    y = np.asarray(same, dtype=bool).reshape(-1)
    if s.size == 0 or s.shape != y.shape:
        raise ValueError("need equally many similarities and labels, at least one")
    u = np.unique(s)
    thresholds = np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2.0, [u[-1] + 1.0]])
    order = np.argsort(s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    # number of samples with s <= t, and positives among them
    below = np.searchsorted(s_sorted, thresholds, side="right")
    pos_below = np.concatenate([[0], np.cumsum(y_sorted)])[below]
    n_pos = y.sum()
    correct = (below - pos_below) + (n_pos - pos_below)
    best = int(np.argmax(correct))
    return float(correct[best] / s.size), float(thresholds[best])


def verification_pairs(split: GallerySplit):
    """All probe-gallery pairs as (similarity, same-identity) arrays."""
    S = split.similarities()
    same = split.probe_labels[:, None] == split.gallery_labels[None, :]
    return S.reshape(-1), same.reshape(-1)


@dataclass
class EvalReport:
    rank1: float
    cmc: np.ndarray
    verification_accuracy: float
    verification_threshold: float
    n_gallery: int
    n_probes: int

    @classmethod
    def from_split(cls, split: GallerySplit) -> "EvalReport":
        cmc = cmc_curve(split)
        acc, thr = verification_accuracy(*verification_pairs(split))
        return cls(float(cmc[0]), cmc, acc, thr, len(split.gallery_labels), len(split.probe_labels))

    def rank(self, k: int) -> float:
        return float(self.cmc[k - 1])

    def cmc_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "rate"])
        for k, r in enumerate(self.cmc, 1):
            w.writerow([k, repr(float(r))])
        return buf.getvalue()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["rank1", repr(self.rank1)])
        for k in (5, 10):
            if k <= len(self.cmc):
                w.writerow([f"rank{k}", repr(self.rank(k))])
        w.writerow(["verification_accuracy", repr(self.verification_accuracy)])
        w.writerow(["verification_threshold_cosine_similarity", repr(self.verification_threshold)])
        w.writerow(["n_gallery", self.n_gallery])
        w.writerow(["n_probes", self.n_probes])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [
            "score = cosine similarity (higher is closer)",
            f"gallery = {self.n_gallery}",
            f"probes = {self.n_probes}",
            f"rank1 = {self.rank1:.6f}",
            f"verification_accuracy = {self.verification_accuracy:.6f}",
            f"verification_threshold = {self.verification_threshold:.6f}",
        ]
        return "\n".join(lines) + "\n"


# --- feature-distance bounds ------------------------------------------------------


def spectral_norm(G, tol: float = 1e-10, max_iter: int = 10000, seed: int = 0) -> float:
    """Largest singular value of ``G`` by power iteration on ``G^T G``."""
    G = np.asarray(G, dtype=np.float64)
    if G.size == 0 or not np.any(G):
        return 0.0
    rng = XorShift64Star(seed)
    v = rng.normal_array(G.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        w = G.T @ (G @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        new_sigma = float(np.linalg.norm(G @ v))
        if abs(new_sigma - sigma) <= tol * new_sigma:
            return new_sigma
        sigma = new_sigma
    return sigma


def _qualifying_pairs(labels, attributes, tau, chunk: int = 512):
    """Yield (i, j) index arrays for cross-label pairs i < j with attribute distance < tau."""
    n = len(labels)
    for start in range(0, n, chunk):
        rows = np.arange(start, min(start + chunk, n))
        d = np.sqrt(((attributes[rows, None, :] - attributes[None, :, :]) ** 2).sum(-1))
        ok = (d < tau) & (labels[rows, None] != labels[None, :]) & (np.arange(n)[None, :] > rows[:, None])
        ii, jj = np.nonzero(ok)
        yield rows[ii], jj


def max_residual(features, labels, attributes, G, tau) -> float | None:
    """Largest ``|(f_i - f_j) - G (p_i - p_j)|`` over qualifying pairs, or None if none qualify."""
    f = np.asarray(features, dtype=np.float64)
    p = np.asarray(attributes, dtype=np.float64)
    y = np.asarray(labels)
    G = np.asarray(G, dtype=np.float64)
    eps = None
    for i, j in _qualifying_pairs(y, p, tau):
        if len(i) == 0:
            continue
        r = (f[i] - f[j]) - (p[i] - p[j]) @ G.T
        m = float(np.sqrt((r * r).sum(axis=1)).max())
        eps = m if eps is None else max(eps, m)
    return eps


# relative slack absorbing round-off between the computed distances and bounds
BOUND_RTOL = 1e-12


@dataclass
class DistanceBoundReport:
    epsilon: float | None
    spectral_norm_G: float
    tau_used: float
    min_singular_value_G: float
    intra_class_max: dict  # label -> max pairwise feature distance
    intra_bound: float | None
    qualifying_classes: list  # classes with a cross-label tau-neighbor for all their samples
    excluded_classes: list
    intra_violations: list
    centroid_pairs: list = field(default_factory=list)  # (k1, k2, distance, bound, satisfied)

    @property
    def centroid_bound(self) -> float | None:
        if self.epsilon is None:
            return None
        return self.spectral_norm_G * self.tau_used + self.epsilon

    @property
    def violations(self) -> int:
        return len(self.intra_violations) + sum(1 for *_, ok in self.centroid_pairs if not ok)

    @property
    def nonsingular(self) -> bool:
        return self.min_singular_value_G > 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "class_a", "class_b", "distance", "bound", "satisfied"])
        for k in self.qualifying_classes:
            d = self.intra_class_max[k]
            w.writerow(["intra", k, "", repr(d), repr(self.intra_bound), k not in self.intra_violations])
        for k1, k2, d, bound, ok in self.centroid_pairs:
            w.writerow(["centroid", k1, k2, repr(d), repr(bound), ok])
        return buf.getvalue()

    def summary(self) -> str:
        eps = "undefined (no qualifying pairs)" if self.epsilon is None else repr(self.epsilon)
        lines = [
            f"tau = {self.tau_used!r}",
            f"epsilon = {eps}",
            f"spectral_norm_G = {self.spectral_norm_G!r}",
            f"min_singular_value_G = {self.min_singular_value_G!r}",
            f"G_nonsingular = {self.nonsingular}",
            f"intra_bound = {self.intra_bound!r}",
            f"centroid_bound = {self.centroid_bound!r}",
            f"qualifying_classes = {len(self.qualifying_classes)}",
            f"excluded_classes = {' '.join(map(str, self.excluded_classes))}",
            f"centroid_pairs_checked = {len(self.centroid_pairs)}",
            f"violations = {self.violations}",
        ]
        return "\n".join(lines) + "\n"


def _within(d: float, bound: float) -> bool:
    return d <= bound * (1.0 + BOUND_RTOL) + BOUND_RTOL


def verify_distance_bounds(features, labels, attributes, G, tau: float) -> DistanceBoundReport:
    """Check the intra-class and centroid distance bounds implied by the
    maximum attribute-loss residual ``epsilon`` and ``|G|_2``.

    The intra-class bound, ``max intra-class distance <= 2 (|G| tau + eps)``, is checked
    for classes that have one sample of another class within ``tau`` of all
    of their samples. The centroid bound, ``centroid distance <= |G| tau + eps``, is
    checked for class pairs whose attribute vectors are all within ``tau``.
    The bounds hold by the triangle inequality, so any violation means the
    features, ``epsilon`` or the norm were computed inconsistently.
    """
    f = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    p = np.asarray(attributes, dtype=np.float64)
    if p.ndim == 1:
        p = p.reshape(len(p), -1)
    G = np.asarray(G, dtype=np.float64)
    if G.shape != (f.shape[1], p.shape[1]):
        raise DimensionError(f"G has shape {G.shape}, expected {(f.shape[1], p.shape[1])}")

    eps = max_residual(f, y, p, G, tau)
    M = spectral_norm(G)
    svals = np.linalg.svd(G, compute_uv=False)
    smin = float(svals.min()) if svals.size else 0.0
    classes = np.unique(y)
    members = {int(k): np.flatnonzero(y == k) for k in classes}

    intra_max = {}
    for k, idx in members.items():
        fk = f[idx]
        d = np.sqrt(((fk[:, None, :] - fk[None, :, :]) ** 2).sum(-1))
        intra_max[k] = float(d.max())

    qualifying, excluded = [], []
    for k, idx in members.items():
        others = np.flatnonzero(y != k)
        if len(others) == 0:
            excluded.append(k)
            continue
        d = np.sqrt(((p[idx][:, None, :] - p[others][None, :, :]) ** 2).sum(-1))
        # one common neighbor gamma for every sample of class k
        (qualifying if np.any(np.all(d < tau, axis=0)) else excluded).append(k)

    report = DistanceBoundReport(
        epsilon=eps,
        spectral_norm_G=M,
        tau_used=float(tau),
        min_singular_value_G=smin,
        intra_class_max=intra_max,
        intra_bound=None if eps is None else 2.0 * (M * tau + eps),
        qualifying_classes=qualifying if eps is not None else [],
        excluded_classes=excluded if eps is not None else sorted(members),
        intra_violations=[],
    )
    if eps is None:
        return report

    report.intra_violations = [k for k in qualifying if not _within(intra_max[k], report.intra_bound)]
    centroids = {k: f[idx].mean(axis=0) for k, idx in members.items()}
    bound = report.centroid_bound
    keys = sorted(members)
    constant = all(np.all(p[idx] == p[idx[0]]) for idx in members.values())
    if constant:
        # one attribute vector per class: compare class representatives directly
        rep = np.array([p[members[k][0]] for k in keys])
        close = np.sqrt(((rep[:, None, :] - rep[None, :, :]) ** 2).sum(-1)) < tau
    for a_pos, k1 in enumerate(keys):
        for b_pos in range(a_pos + 1, len(keys)):
            k2 = keys[b_pos]
            if constant:
                if not close[a_pos, b_pos]:
                    continue
            else:
                d_attr = np.sqrt(((p[members[k1]][:, None, :] - p[members[k2]][None, :, :]) ** 2).sum(-1))
                if not np.all(d_attr < tau):
                    continue
            dist = float(np.linalg.norm(centroids[k1] - centroids[k2]))
            report.centroid_pairs.append((k1, k2, dist, bound, _within(dist, bound)))
    return report
