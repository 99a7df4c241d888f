"""Central finite-difference checks of every analytic gradient in the package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backbone
from .attribute_loss import LossCombo, LossConfig, attribute_loss, combined_loss, select_pairs
from .backbone import Activation
from .core import ModelParams
from .losses import BatchFeatures, angular_softmax_loss, center_loss, softmax_loss
from .rng import XorShift64Star, derive_seed

STEP = 1e-5
TOLERANCE = 1e-5
CHECKS = ("softmax", "center", "angular", "attribute", "combined", "backbone")


def numerical_gradient(fn, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of scalar ``fn(x)`` w.r.t. every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn(x)
        flat[i] = orig - step
        down = fn(x)
        flat[i] = orig
        g[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``max|a - n| / max(max|a|, max|n|)``; 0 when both are identically zero."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


@dataclass(frozen=True)
class CheckResult:
    check: str
    instance: int
    block: str
    error: float

    @property
    def passed(self) -> bool:
        return self.error < TOLERANCE


class _Instance:
    """Random small problem: M <= max_m samples, K <= max_k, C <= max_c."""

    def __init__(self, rng: XorShift64Star, max_m: int, max_k: int, max_c: int, H: int = 3):
        self.M = 2 + rng.randbelow(max_m - 1)
        self.K = 2 + rng.randbelow(max_k - 1)
        self.C = 2 + rng.randbelow(max_c - 1)
        self.H = H
        self.f = rng.normal_array((self.M, self.K))
        labels = [rng.randbelow(self.C) for _ in range(self.M)]
        self.y = np.array(labels, dtype=np.int64)
        # attribute rows from a small pool so that some pairs fall under tau
        pool = rng.uniform_array((3, H), -1.0, 1.0)
        self.p = np.array([pool[rng.randbelow(3)] + 0.01 * rng.normal_array(H) for _ in range(self.M)])
        self.W = rng.normal_array((self.K, self.C))
        self.b = rng.normal_array(self.C)
        self.G = rng.normal_array((self.K, H))
        self.centers = rng.normal_array((self.C, self.K))
        self.tau = 0.1
        self.margin = 1 + rng.randbelow(4)

    def batch(self, f=None) -> BatchFeatures:
        return BatchFeatures(self.f if f is None else f, self.y, self.p)


def _check_softmax(inst: _Instance):
    out = softmax_loss(inst.batch(), inst.W, inst.b)
    yield "features", out.grad_features, numerical_gradient(lambda f: softmax_loss(inst.batch(f), inst.W, inst.b).value, inst.f)
    yield "W", out.grad_params["W"], numerical_gradient(lambda W: softmax_loss(inst.batch(), W, inst.b).value, inst.W)
    yield "b", out.grad_params["b"], numerical_gradient(lambda b: softmax_loss(inst.batch(), inst.W, b).value, inst.b)


def _check_center(inst: _Instance):
    out = center_loss(inst.batch(), inst.centers)
    yield "features", out.grad_features, numerical_gradient(lambda f: center_loss(inst.batch(f), inst.centers).value, inst.f)
    yield "centers", out.grad_params["centers"], numerical_gradient(lambda c: center_loss(inst.batch(), c).value, inst.centers)


def _check_angular(inst: _Instance):
    m = inst.margin
    out = angular_softmax_loss(inst.batch(), inst.W, m)
    yield f"features(m={m})", out.grad_features, numerical_gradient(lambda f: angular_softmax_loss(inst.batch(f), inst.W, m).value, inst.f)
    yield f"W(m={m})", out.grad_params["W"], numerical_gradient(lambda W: angular_softmax_loss(inst.batch(), W, m).value, inst.W)


def _check_attribute(inst: _Instance):
    sel = select_pairs(inst.batch(), inst.tau)
    out = attribute_loss(inst.batch(), sel, inst.G)
    yield "features", out.grad_features, numerical_gradient(lambda f: attribute_loss(inst.batch(f), sel, inst.G).value, inst.f)
    yield "G", out.grad_params["G"], numerical_gradient(lambda G: attribute_loss(inst.batch(), sel, G).value, inst.G)


def _check_combined(inst: _Instance):
    cfg = LossConfig(LossCombo.SOFTMAX_CENTER_ATTR, lam=0.3, lam_center=0.2, tau=inst.tau)
    theta = ((np.eye(inst.K), np.zeros(inst.K)),)

    def params(W=inst.W, b=inst.b, G=inst.G, centers=inst.centers):
        return ModelParams(theta, W, b, G, centers)

    def value(f=inst.f, **kw):
        return combined_loss(inst.batch(f), params(**kw), cfg).value

    out = combined_loss(inst.batch(), params(), cfg)
    yield "features", out.grad_features, numerical_gradient(lambda f: value(f=f), inst.f)
    for key, x in (("W", inst.W), ("b", inst.b), ("G", inst.G), ("centers", inst.centers)):
        yield key, out.grad_params[key], numerical_gradient(lambda v, key=key: value(**{key: v}), x)


def _check_backbone(inst: _Instance, rng: XorShift64Star):
    act = (Activation.RELU, Activation.TANH, Activation.IDENTITY)[rng.randbelow(3)]
    dims = (inst.K + 1, 2 + rng.randbelow(5), inst.K)
    spec = backbone.MlpSpec(dims, act)
    theta = tuple((W * 1.0, rng.normal_array(b.shape) * 0.1) for W, b in backbone.init_theta(spec, rng.next_u64()))
    x = rng.normal_array((inst.M, dims[0]))
    R = rng.normal_array((inst.M, inst.K))
    _, cache = backbone.forward(theta, x, act)
    if act is Activation.RELU and min(np.abs(a).min() for a in cache.preacts[:-1]) < 10 * STEP:
        return  # too close to a kink for finite differences to be meaningful
    grads = backbone.backward(theta, cache, R, act)

    def objective(l, which):
        def fn(v):
            layers = list(theta)
            W, b = layers[l]
            layers[l] = (v, b) if which == 0 else (W, v)
            return float(np.sum(R * backbone.forward(tuple(layers), x, act)[0]))
        return fn

    for l, (W, b) in enumerate(theta):
        yield f"{act.value}:W{l}", grads[l][0], numerical_gradient(objective(l, 0), W)
        yield f"{act.value}:b{l}", grads[l][1], numerical_gradient(objective(l, 1), b)


def run_gradcheck(
    seed: int = 0,
    instances: int = 100,
    max_m: int = 8,
    max_k: int = 6,
    max_c: int = 5,
    checks=CHECKS,
    corrupt: str | None = None,
) -> list[CheckResult]:
    """Check every analytic gradient on ``instances`` random problems per loss.

    ``corrupt`` names a check whose analytic gradients are perturbed before
    comparison; it exists to show that the harness does flag errors.
    """
    results = []
    for name in checks:
        rng = XorShift64Star(derive_seed(seed, f"gradcheck/{name}"))
        for n in range(instances):
            inst = _Instance(rng, max_m, max_k, max_c)
            if name == "backbone":
                gen = _check_backbone(inst, rng)
            else:
                gen = {"softmax": _check_softmax, "center": _check_center, "angular": _check_angular,
                       "attribute": _check_attribute, "combined": _check_combined}[name](inst)
            for block, analytic, numeric in gen:
                if corrupt == name:
                    analytic = analytic * 1.001 + 1e-3
                results.append(CheckResult(name, n, block, relative_error(analytic, numeric)))
    return results


def summarize(results: list[CheckResult]) -> list[tuple[str, int, float, bool]]:
    """Per check: (name, blocks checked, max relative error, passed)."""
    rows = []
    for name in dict.fromkeys(r.check for r in results):
        errs = [r.error for r in results if r.check == name]
        rows.append((name, len(errs), max(errs), max(errs) < TOLERANCE))
    return rows


def format_table(results: list[CheckResult]) -> str:
    lines = [f"{'check':<10} {'blocks':>6} {'max_rel_err':>12}  result"]
    for name, n, err, ok in summarize(results):
        lines.append(f"{name:<10} {n:>6} {err:>12.3e}  {'PASS' if ok else 'FAIL'}")
    return "\n".join(lines) + "\n"
