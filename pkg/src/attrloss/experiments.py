"""Desk-scale experiment drivers: uneven-sampling comparison and lambda/tau sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field

from .attribute_loss import LossCombo
from .backbone import LrSchedule, MlpSpec, extract_features
from .core import Dataset
from .evaluation import EvalReport, GallerySplit
from .synth import SynthSpec, generate, load_preset
from .trainer import TrainConfig, train


@dataclass(frozen=True)
class UnevenSetup:
    """Fixed recipe for comparing loss combinations on preset-shaped synthetic data.

    Training identities follow a preset's group proportions (divided by
    ``scale``); the held-out test identities are a separate, balanced draw
    (set1 proportions at ``2 * scale``) that shares the attribute mixing
    matrix. Evaluation uses the first sample of each test identity as gallery.
    """

    scale: float = 200
    D: int = 16
    samples_per_identity: int = 6
    attr_signal: float = 2.0
    identity_noise: float = 1.0
    observation_noise: float = 0.6
    nuisance: float = 0.0
    hidden: int = 64
    feature_dim: int = 16
    batch_size: int = 100
    iterations: int = 1500
    base_rate: float = 0.1
    lam: float = 1e-4
    tau: float = 0.01

    def synth_spec(self, groups: dict, seed: int, mixing_seed: int, name: str) -> SynthSpec:
        return SynthSpec(
            groups,
            D=self.D,
            samples_per_identity=self.samples_per_identity,
            attr_signal=self.attr_signal,
            identity_noise=self.identity_noise,
            observation_noise=self.observation_noise,
            nuisance=self.nuisance,
            seed=seed,
            mixing_seed=mixing_seed,
            name=name,
        )

    def datasets(self, preset: str, seed: int) -> tuple[Dataset, Dataset]:
        train_groups = load_preset(preset).groups(self.scale)
        test_groups = load_preset("set1").groups(2 * self.scale)
        train_ds = generate(self.synth_spec(train_groups, 10 * seed + 1, seed, f"{preset}-train"))
        test_ds = generate(self.synth_spec(test_groups, 10 * seed + 2, seed, "heldout"))
        return train_ds, test_ds

    def train_config(self, combo, seed: int, lam: float | None = None, tau: float | None = None) -> TrainConfig:
        n = self.iterations
        return TrainConfig(
            combo=combo,
            lam=self.lam if lam is None else lam,
            tau=self.tau if tau is None else tau,
            batch_size=self.batch_size,
            total_iterations=n,
            seed=seed,
            schedule=LrSchedule(self.base_rate, (n * 4 // 7, n * 6 // 7), 10.0),
        )

    def mlp(self) -> MlpSpec:
        return MlpSpec((self.D, self.hidden, self.feature_dim), "relu")


def evaluate_model(params, spec: MlpSpec, test_ds: Dataset) -> EvalReport:
    feats = extract_features(params, test_ds.inputs, spec)
    return EvalReport.from_split(GallerySplit.first_per_identity(feats, test_ds.labels))


@dataclass
class ComboComparison:
    preset: str
    seed: int
    rank1: dict = field(default_factory=dict)  # combo letter -> rank-1 rate


def compare_combos(preset: str, seed: int, combos=("a", "b"), setup: UnevenSetup | None = None) -> ComboComparison:
    setup = setup or UnevenSetup()
    train_ds, test_ds = setup.datasets(preset, seed)
    spec = setup.mlp()
    out = ComboComparison(preset, seed)
    for combo in combos:
        params, _ = train(train_ds, spec, setup.train_config(LossCombo.parse(combo), seed))
        out.rank1[LossCombo.parse(combo).value] = evaluate_model(params, spec, test_ds).rank1
    return out


def lambda_sweep(train_ds: Dataset, test_ds: Dataset, spec: MlpSpec, base: TrainConfig, lambdas) -> list:
    """Rank-1 and verification accuracy for combo (b) at each lambda; returns
    ``[(lambda, EvalReport), ...]``."""
    rows = []
    for lam in lambdas:
        cfg = TrainConfig(
            combo=LossCombo.SOFTMAX_ATTR, lam=float(lam), lam_center=base.lam_center, tau=base.tau,
            pair_cap=base.pair_cap, schedule=base.schedule, batch_size=base.batch_size,
            total_iterations=base.total_iterations, seed=base.seed, center_rate=base.center_rate,
        )
        params, _ = train(train_ds, spec, cfg)
        rows.append((float(lam), evaluate_model(params, spec, test_ds)))
    return rows
