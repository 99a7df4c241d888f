"""Jointly supervised mini-batch training and the 2-D toy experiment."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import backbone
from .attribute_loss import LossCombo, LossConfig, combined_loss
from .backbone import LrSchedule, MlpSpec
from .core import Dataset, DimensionError, ModelParams
from .losses import BatchFeatures
from .rng import XorShift64Star, derive_seed

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iter", "lr", "loss", "loss_softmax", "loss_center", "loss_attr", "pairs")


@dataclass(frozen=True)
class TrainConfig:
    combo: LossCombo = LossCombo.SOFTMAX_ATTR
    lam: float = 1e-4
    lam_center: float = 1e-3
    tau: float = 0.01
    pair_cap: int | None = None
    schedule: LrSchedule = field(default_factory=LrSchedule)
    batch_size: int = 200
    total_iterations: int = 1000
    seed: int = 0
    center_rate: float = 0.5
    fine_tune_from: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "combo", LossCombo.parse(self.combo))
        if self.lam < 0 or self.lam_center < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.batch_size < 1 or self.total_iterations < 0:
            raise ValueError("batch_size must be positive and total_iterations non-negative")
        if self.pair_cap is not None and self.pair_cap < 1:
            raise ValueError("pair_cap must be positive")

    def loss_config(self, pair_seed: int) -> LossConfig:
        return LossConfig(self.combo, self.lam, self.lam_center, self.tau, self.pair_cap, pair_seed)


@dataclass(frozen=True)
class TrainRecord:
    iteration: int
    lr: float
    loss: float
    loss_softmax: float
    loss_center: float
    loss_attr: float
    pairs: int


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    params: ModelParams | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.records:
            w.writerow([r.iteration, repr(r.lr), repr(r.loss), repr(r.loss_softmax),
                        repr(r.loss_center), repr(r.loss_attr), r.pairs])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


class TrainingAborted(RuntimeError):
    """Loss became non-finite; ``params`` are the last parameters with a finite loss."""

    def __init__(self, iteration: int, params: ModelParams, log: TrainLog):
        super().__init__(f"non-finite loss at iteration {iteration}")
        self.iteration = iteration
        self.params = params
        self.log = log


def class_means(features: np.ndarray, labels: np.ndarray, C: int) -> np.ndarray:
    sums = np.zeros((C, features.shape[1]))
    np.add.at(sums, labels, features)
    counts = np.bincount(labels, minlength=C)
    return sums / np.maximum(counts, 1)[:, None]


def init_params(ds: Dataset, spec: MlpSpec, seed: int) -> ModelParams:
    """Seeded backbone and classifier weights, zero biases and G, centers at class means."""
    if spec.input_dim != ds.D:
        raise DimensionError(f"network expects D={spec.input_dim}, dataset has D={ds.D}")
    theta = backbone.init_theta(spec, derive_seed(seed, "backbone"))
    K = spec.feature_dim
    bound = 1.0 / np.sqrt(K)
    W = XorShift64Star(derive_seed(seed, "classifier")).uniform_array((K, ds.C), -bound, bound)
    params = ModelParams(theta, W, np.zeros(ds.C), np.zeros((K, ds.H)), np.zeros((ds.C, K)))
    return with_class_centers(params, ds, spec)


def with_class_centers(params: ModelParams, ds: Dataset, spec: MlpSpec) -> ModelParams:
    feats = backbone.extract_features(params, ds.inputs, spec)
    return replace(params, centers=class_means(feats, ds.labels, ds.C))


def batch_indices(n: int, batch_size: int, seed: int):
    """Endless stream of mini-batches: a fresh seeded permutation per epoch,
    trailing partial batch kept."""
    rng = XorShift64Star(derive_seed(seed, "batches"))
    while True:
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            yield order[s : s + batch_size]


def train(ds: Dataset, spec: MlpSpec, cfg: TrainConfig, params: ModelParams | None = None):
    """Run ``cfg.total_iterations`` SGD steps; returns ``(params, TrainLog)``.

    Each step computes the combined loss on a mini-batch, backpropagates
    ``dL/df`` through the backbone, and moves W, b and Theta by
    ``-(rate / M) * gradient`` of the combined loss. G moves by
    ``-(rate / M) * dL_a/dG`` (the attribute loss alone, unweighted) and
    centers by ``-center_rate * delta``.
    """
    if cfg.batch_size > ds.N:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {ds.N}")
    if params is None:
        if cfg.fine_tune_from:
            params, ck_spec, _ = backbone.load_checkpoint(cfg.fine_tune_from)
            if ck_spec != spec:
                raise DimensionError(f"checkpoint network {ck_spec} differs from {spec}")
            if params.C != ds.C or params.H != ds.H:
                raise DimensionError("checkpoint classes/attributes do not match the dataset")
            params = with_class_centers(params, ds, spec)
        else:
            params = init_params(ds, spec, cfg.seed)

    tlog = TrainLog(params=params)
    batches = batch_indices(ds.N, cfg.batch_size, cfg.seed)
    pair_rng = XorShift64Star(derive_seed(cfg.seed, "pairs"))
    X, Y, P = ds.inputs, ds.labels, ds.attributes

    for t in range(cfg.total_iterations):
        idx = next(batches)
        pair_seed = pair_rng.next_u64()
        feats, cache = backbone.forward(params.theta, X[idx], spec.activation)
        batch = BatchFeatures(feats, Y[idx], P[idx])
        try:
            out = combined_loss(batch, params, cfg.loss_config(pair_seed))
            finite = np.isfinite(out.value)
        except (ArithmeticError, FloatingPointError):
            finite = False
        if not finite:
            raise TrainingAborted(t, params, tlog)

        grads = {
            "theta": backbone.backward(params.theta, cache, out.grad_features, spec.activation),
            "W": out.grad_params["W"],
            "b": out.grad_params["b"],
        }
        parts = out.info["parts"]
        if "attr" in parts:
            grads["G"] = parts["attr"].grad_params["G"]
        rate = cfg.schedule.rate(t)
        new = backbone.sgd_step(params, grads, cfg.schedule, t, len(idx))
        if "center" in parts:
            new = replace(new, centers=params.centers - cfg.center_rate * parts["center"].info["center_delta"])
        params = new

        comp = out.info["components"]
        tlog.records.append(
            TrainRecord(t, rate, out.value, comp["softmax"], comp["center"], comp["attr"], out.info["pairs"])
        )
        if t % 1000 == 0:
            log.debug("iter %d lr %g loss %.6g pairs %d", t, rate, out.value, out.info["pairs"])

    tlog.params = params
    return params, tlog


# --- toy experiment -------------------------------------------------------------------


@dataclass
class ToyRun:
    log: TrainLog
    params: ModelParams
    features: np.ndarray  # (N, 2)
    span: float
    same_age_distance: float
    different_age_distance: float

    @property
    def age_ratio(self) -> float:
        return self.same_age_distance / self.different_age_distance


@dataclass
class ToyResult:
    dataset: Dataset
    softmax: ToyRun
    attribute_aware: ToyRun

    def features_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "sample", "label", "age_code", "f0", "f1"])
        for name, run in (("softmax", self.softmax), ("softmax+attr", self.attribute_aware)):
            for i, f in enumerate(run.features):
                w.writerow([name, i, int(self.dataset.labels[i]), repr(float(self.dataset.attributes[i, 2])),
                            repr(float(f[0])), repr(float(f[1]))])
        return buf.getvalue()

    def summary(self) -> str:
        rows = []
        for name, run in (("softmax", self.softmax), ("softmax+attr", self.attribute_aware)):
            rows.append(
                f"{name}: mean identity span {run.span:.6g}, same-age centroid distance "
                f"{run.same_age_distance:.6g}, different-age {run.different_age_distance:.6g}, "
                f"ratio {run.age_ratio:.6g}"
            )
        return "\n".join(rows) + "\n"


def identity_span(features: np.ndarray, labels: np.ndarray) -> float:
    """Mean over identities of the diagonal of their features' bounding box."""
    spans = [np.linalg.norm(features[labels == k].max(0) - features[labels == k].min(0)) for k in np.unique(labels)]
    return float(np.mean(spans))


def age_centroid_distances(features: np.ndarray, labels: np.ndarray, attributes: np.ndarray):
    """Mean centroid distance among identity pairs with equal vs different attribute vectors."""
    keys = np.unique(labels)
    cents = np.array([features[labels == k].mean(0) for k in keys])
    attrs = np.array([attributes[labels == k][0] for k in keys])
    same, diff = [], []
    for a in range(len(keys)):
        for b in range(a + 1, len(keys)):
            d = float(np.linalg.norm(cents[a] - cents[b]))
            (same if np.array_equal(attrs[a], attrs[b]) else diff).append(d)
    return float(np.mean(same)), float(np.mean(diff))


TOY_HIDDEN = 32


def toy_experiment(
    seed: int = 0,
    iterations: int = 3000,
    lam: float = 1e-4,
    tau: float = 0.01,
    batch_size: int = 60,
    schedule: LrSchedule | None = None,
    hidden: int = TOY_HIDDEN,
    dataset: Dataset | None = None,
) -> ToyResult:
    """Train softmax-only and softmax+attribute models with 2-D features on the
    nine-identity toy set, sharing the seed (hence the batch sequence)."""
    from .synth import make_toy_age_set

    ds = dataset if dataset is not None else make_toy_age_set(seed)
    spec = MlpSpec((ds.D, hidden, 2), "relu")
    if schedule is None:
        schedule = LrSchedule(0.1, (int(iterations * 4 / 7), int(iterations * 6 / 7)), 10.0)
    runs = {}
    for combo in (LossCombo.SOFTMAX, LossCombo.SOFTMAX_ATTR):
        cfg = TrainConfig(combo=combo, lam=lam, tau=tau, schedule=schedule, batch_size=batch_size,
                          total_iterations=iterations, seed=seed)
        params, tlog = train(ds, spec, cfg)
        feats = backbone.extract_features(params, ds.inputs, spec)
        same, diff = age_centroid_distances(feats, ds.labels, ds.attributes)
        runs[combo] = ToyRun(tlog, params, feats, identity_span(feats, ds.labels), same, diff)
    return ToyResult(ds, runs[LossCombo.SOFTMAX], runs[LossCombo.SOFTMAX_ATTR])
