"""Attribute-aware loss: in-batch pair selection, forward/backward, and the
combined objective used for joint supervision."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import DimensionError
from .losses import BatchFeatures, LossOutput, center_loss, softmax_loss
from .rng import XorShift64Star


@dataclass(frozen=True, eq=False)
class PairSelection:
    """Index pairs ``(i, j)`` with ``i < j`` into a batch, in lexicographic order."""

    pairs: np.ndarray  # (P, 2) int64
    tau: float
    cap: int | None = None
    candidates: int = 0  # pair count before capping

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def first(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def second(self) -> np.ndarray:
        return self.pairs[:, 1]

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.pairs}


def select_pairs(batch: BatchFeatures, tau: float, cap: int | None = None, rng_seed: int = 0) -> PairSelection:
    """All cross-label pairs whose attribute distance is strictly below ``tau``.

    When more than ``cap`` pairs qualify, a uniform subset of size ``cap`` is
    drawn with a partial Fisher-Yates shuffle seeded by ``rng_seed``; the
    kept pairs stay in lexicographic order.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if cap is not None and cap < 1:
        raise ValueError(f"cap must be a positive integer, got {cap}")
    p = batch.attributes
    y = batch.labels
    i, j = np.triu_indices(batch.M, k=1)  # row-major, i.e. lexicographic
    dist = np.sqrt(np.sum((p[i] - p[j]) ** 2, axis=1))
    keep = (y[i] != y[j]) & (dist < tau)
    pairs = np.stack([i[keep], j[keep]], axis=1).astype(np.int64)
    n = len(pairs)
    if cap is not None and n > cap:
        pairs = pairs[XorShift64Star(rng_seed).sample_indices(n, cap)]
    return PairSelection(pairs=pairs.reshape(-1, 2), tau=float(tau), cap=cap, candidates=n)


def _residuals(batch: BatchFeatures, sel: PairSelection, G: np.ndarray):
    G = np.asarray(G, dtype=np.float64)
    H = batch.attributes.shape[1]
    if G.shape != (batch.K, H):
        raise DimensionError(f"G has shape {G.shape}, expected {(batch.K, H)}")
    a, b = sel.first, sel.second
    df = batch.features[a] - batch.features[b]
    dp = batch.attributes[a] - batch.attributes[b]
    return df - dp @ G.T, dp


def attribute_loss_forward(batch: BatchFeatures, sel: PairSelection, G: np.ndarray) -> float:
    r, _ = _residuals(batch, sel, G)
    return 0.5 * float(np.sum(r * r))


def attribute_loss_backward(batch: BatchFeatures, sel: PairSelection, G: np.ndarray):
    """Return ``(grad_features, grad_G)`` restricted to the selected pairs."""
    r, dp = _residuals(batch, sel, G)
    grad_f = np.zeros_like(batch.features)
    np.add.at(grad_f, sel.first, r)
    np.add.at(grad_f, sel.second, -r)
    grad_G = -(r.T @ dp)
    return grad_f, grad_G


def attribute_loss(batch: BatchFeatures, sel: PairSelection, G: np.ndarray) -> LossOutput:
    r, dp = _residuals(batch, sel, G)
    grad_f, grad_G = attribute_loss_backward(batch, sel, G)
    return LossOutput(
        value=0.5 * float(np.sum(r * r)),
        grad_features=grad_f,
        grad_params={"G": grad_G},
        info={"pairs": len(sel)},
    )


class LossCombo(str, enum.Enum):
    """The four loss combinations compared in the ablation."""

    SOFTMAX = "a"
    SOFTMAX_ATTR = "b"
    SOFTMAX_CENTER = "c"
    SOFTMAX_CENTER_ATTR = "d"

    @classmethod
    def parse(cls, value) -> "LossCombo":
        if isinstance(value, cls):
            return value
        aliases = {
            "softmax": "a",
            "softmax+attr": "b",
            "softmax+center": "c",
            "softmax+center+attr": "d",
        }
        return cls(aliases.get(str(value).lower(), str(value).lower()))

    @property
    def uses_attr(self) -> bool:
        return self in (LossCombo.SOFTMAX_ATTR, LossCombo.SOFTMAX_CENTER_ATTR)

    @property
    def uses_center(self) -> bool:
        return self in (LossCombo.SOFTMAX_CENTER, LossCombo.SOFTMAX_CENTER_ATTR)


@dataclass(frozen=True)
class LossConfig:
    combo: LossCombo = LossCombo.SOFTMAX_ATTR
    lam: float = 1e-4
    lam_center: float = 1e-3
    tau: float = 0.01
    pair_cap: int | None = None
    seed: int = 0


def combined_loss(batch: BatchFeatures, params, config: LossConfig) -> LossOutput:
    """``L_s + lam * L_a (+ lam_center * L_c)`` with gradients.

    ``grad_params`` holds the true gradients of the combined value. The
    unweighted constituent outputs are kept in ``info["parts"]`` because the
    trainer updates ``G`` with the raw attribute-loss gradient and moves
    centers with their own rule. The attribute term is skipped entirely when
    ``lam == 0`` and the center term when ``lam_center == 0``.
    """
    combo = LossCombo.parse(config.combo)
    soft = softmax_loss(batch, params.W, params.b)
    value = soft.value
    grad_f = soft.grad_features.copy()
    grads = {"W": soft.grad_params["W"], "b": soft.grad_params["b"], "G": np.zeros_like(params.G)}
    parts = {"softmax": soft}
    components = {"softmax": soft.value, "center": 0.0, "attr": 0.0}
    n_pairs = 0

    if combo.uses_attr and config.lam > 0:
        sel = select_pairs(batch, config.tau, config.pair_cap, config.seed)
        attr = attribute_loss(batch, sel, params.G)
        value += config.lam * attr.value
        grad_f += config.lam * attr.grad_features
        grads["G"] = config.lam * attr.grad_params["G"]
        parts["attr"] = attr
        components["attr"] = attr.value
        n_pairs = len(sel)

    if combo.uses_center and config.lam_center > 0:
        cen = center_loss(batch, params.centers)
        value += config.lam_center * cen.value
        grad_f += config.lam_center * cen.grad_features
        grads["centers"] = config.lam_center * cen.grad_params["centers"]
        parts["center"] = cen
        components["center"] = cen.value

    return LossOutput(
        value=value,
        grad_features=grad_f,
        grad_params=grads,
        info={"parts": parts, "components": components, "pairs": n_pairs},
    )
