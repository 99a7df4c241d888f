"""Softmax, center and angular-softmax losses with analytic gradients.

All losses are sums over the batch, not means; the 1/M factor is applied by
the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DegenerateInputError, DimensionError, NumericError


@dataclass(frozen=True, eq=False)
class BatchFeatures:
    features: np.ndarray  # (M, K)
    labels: np.ndarray  # (M,)
    attributes: np.ndarray  # (M, H)

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        p = np.asarray(self.attributes, dtype=np.float64)
        if p.ndim == 1:
            p = p.reshape(len(p), -1)
        if f.ndim != 2 or len(f) < 1:
            raise DimensionError("features must be a non-empty (M, K) matrix")
        if y.shape != (len(f),) or len(p) != len(f):
            raise DimensionError("labels/attributes do not match the number of features")
        if np.any(y < 0):
            raise DimensionError("labels must be non-negative")
        if np.isnan(f).any() or np.isnan(p).any():
            raise NumericError("NaN in batch")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "attributes", p)

    @property
    def M(self) -> int:
        return self.features.shape[0]

    @property
    def K(self) -> int:
        return self.features.shape[1]

    def with_features(self, features) -> "BatchFeatures":
        return BatchFeatures(features, self.labels, self.attributes)


@dataclass(eq=False)
class LossOutput:
    value: float
    grad_features: np.ndarray
    grad_params: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)


def _check_labels(batch: BatchFeatures, C: int):
    if batch.labels.max() >= C:
        raise DimensionError(f"label {batch.labels.max()} >= number of classes {C}")


def _softmax_from_logits(logits: np.ndarray, labels: np.ndarray):
    """Return (sum of -log p_y, softmax - onehot)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(shifted)):
        raise NumericError("non-finite logits")
    expz = np.exp(shifted)
    denom = expz.sum(axis=1)
    rows = np.arange(len(labels))
    value = float(np.sum(np.log(denom) - shifted[rows, labels]))
    dz = expz / denom[:, None]
    dz[rows, labels] -= 1.0
    return value, dz


def softmax_loss(batch: BatchFeatures, W: np.ndarray, b: np.ndarray) -> LossOutput:
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if W.shape[0] != batch.K or b.shape != (W.shape[1],):
        raise DimensionError(f"W {W.shape} / b {b.shape} incompatible with K={batch.K}")
    _check_labels(batch, W.shape[1])
    f = batch.features
    value, dz = _softmax_from_logits(f @ W + b, batch.labels)
    return LossOutput(
        value=value,
        grad_features=dz @ W.T,
        grad_params={"W": f.T @ dz, "b": dz.sum(axis=0)},
    )


def center_loss(batch: BatchFeatures, centers: np.ndarray) -> LossOutput:
    """Half the summed squared distance of each feature to its class center.

    ``grad_params["centers"]`` is the exact gradient; ``info["center_delta"]``
    is the averaged update direction ``sum_i (c_j - f_i) / (1 + n_j)`` used
    by the trainer to move the centers.
    """
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[1] != batch.K:
        raise DimensionError(f"centers {centers.shape} incompatible with K={batch.K}")
    C = centers.shape[0]
    _check_labels(batch, C)
    y = batch.labels
    diff = batch.features - centers[y]
    value = 0.5 * float(np.sum(diff * diff))

    summed = np.zeros_like(centers)
    np.add.at(summed, y, -diff)
    counts = np.bincount(y, minlength=C).astype(np.float64)
    delta = summed / (1.0 + counts)[:, None]
    return LossOutput(
        value=value,
        grad_features=diff.copy(),
        grad_params={"centers": summed},
        info={"center_delta": delta},
    )


def chebyshev(m: int, x: np.ndarray):
    """Return ``(T_m(x), T_m'(x))`` so that ``cos(m*theta) = T_m(cos(theta))``."""
    t_prev, t = np.ones_like(x), x.copy()
    # U_{k-1} gives T_k' = k * U_{k-1}
    u_prev, u = np.zeros_like(x), np.ones_like(x)
    if m == 0:
        return t_prev, u_prev
    for _ in range(1, m):
        t_prev, t = t, 2.0 * x * t - t_prev
        u_prev, u = u, 2.0 * x * u - u_prev
    return t, m * u


def angular_softmax_loss(batch: BatchFeatures, W: np.ndarray, margin: int) -> LossOutput:
    """Multiplicative angular-margin softmax.

    The target logit is ``|f_i| cos(margin * theta)`` and the others are
    ``|f_i| cos(theta_j)``; only the directions of W's columns enter. The
    margin cosine is evaluated as the Chebyshev polynomial of the clamped
    cosine, which is identical to ``cos(margin * arccos(c))`` on [-1, 1] and
    has a bounded derivative, so no arccos guard is needed.

    ``info["beyond_pi"]`` counts samples with ``margin * theta > pi``, where
    the target logit is no longer monotone in the angle.
    """
    margin = int(margin)
    if margin < 1:
        raise ValueError("margin must be a positive integer")
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != batch.K:
        raise DimensionError(f"W {W.shape} incompatible with K={batch.K}")
    C = W.shape[1]
    _check_labels(batch, C)

    f = batch.features
    y = batch.labels
    rows = np.arange(batch.M)
    wnorm = np.linalg.norm(W, axis=0)
    fnorm = np.linalg.norm(f, axis=1)
    if np.any(wnorm == 0) or np.any(fnorm == 0):
        raise DegenerateInputError("zero-norm feature or weight column")
    U = W / wnorm  # unit columns
    proj = f @ U  # |f| cos(theta_j)
    cos_y = np.clip(proj[rows, y] / fnorm, -1.0, 1.0)
    t, dt = chebyshev(margin, cos_y)

    logits = proj.copy()
    if margin > 1:
        logits[rows, y] = fnorm * t
    value, dz = _softmax_from_logits(logits, y)

    # non-target logits: d/df = u_j, d/du_j = f
    dz_other = dz.copy()
    dz_other[rows, y] = 0.0
    grad_f = dz_other @ U.T
    grad_U = f.T @ dz_other

    fhat = f / fnorm[:, None]
    uy = U[:, y].T  # (M, K)
    # target logit: |f| T(c), c = u.f/|f|
    dzy = dz[rows, y]
    if margin > 1:
        grad_f += dzy[:, None] * (t[:, None] * fhat + dt[:, None] * (uy - cos_y[:, None] * fhat))
        target_u = (dzy * dt)[:, None] * f
    else:
        grad_f += dzy[:, None] * uy
        target_u = dzy[:, None] * f
    np.add.at(grad_U.T, y, target_u)

    # project through column normalization u = w/|w|
    radial = np.sum(U * grad_U, axis=0)
    grad_W = (grad_U - U * radial) / wnorm

    beyond = int(np.sum(margin * np.arccos(cos_y) > np.pi)) if margin > 1 else 0
    return LossOutput(value=value, grad_features=grad_f, grad_params={"W": grad_W}, info={"beyond_pi": beyond})
