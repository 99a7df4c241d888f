"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 numeric abort or failed
check, 3 I/O error.
"""

from __future__ import annotations

import os

# BLAS thread counts must be fixed before numpy loads; an explicit
# ATTRLOSS_THREADS wins over inherited BLAS settings
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    if "ATTRLOSS_THREADS" in os.environ:
        os.environ[_var] = os.environ["ATTRLOSS_THREADS"]
    else:
        os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import backbone, core, evaluation, gradcheck, rgbd, synth, trainer  # noqa: E402
from .attribute_loss import LossCombo  # noqa: E402
from .backbone import LrSchedule, MlpSpec  # noqa: E402

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
RESOLVED_NAME = "config.resolved"


class ConfigError(Exception):
    pass


# --- config files -----------------------------------------------------------------


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse ``[section]`` headers and ``key = value`` lines into
    ``{section: {key: (value, lineno)}}``; keys before any header go to "general"."""
    out: dict = {"general": {}}
    section = "general"
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[section][key.replace("-", "_")] = (value, lineno)
    return out


def _convert(action: argparse.Action, value: str, where: str):
    if isinstance(action, argparse._StoreTrueAction):
        low = value.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return low in ("true", "1", "yes")
    try:
        v = action.type(value) if action.type else value
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    if action.choices is not None and v not in action.choices:
        raise ConfigError(f"{where}: {v!r} not in {sorted(action.choices)}")
    return v


def apply_config(parser: argparse.ArgumentParser, command: str, path: str) -> None:
    """Use the config's [general] and [<command>] sections as parser defaults.

    Unknown keys and unknown sections are rejected with their line number.
    """
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    sections = parse_config(p.read_text(encoding="utf-8"), str(p))
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config")}
    known = set(COMMANDS) | {"general"}
    defaults = {}
    for name, entries in sections.items():
        if name not in known:
            line = min((ln for _, ln in entries.values()), default=0)
            raise ConfigError(f"{path}: unknown section [{name}] (first key on line {line})")
        if name not in ("general", command):
            continue
        for key, (value, lineno) in entries.items():
            where = f"{path}:{lineno}"
            if key not in actions:
                if name == "general":
                    continue  # general keys may target other commands
                raise ConfigError(f"{where}: unknown key {key!r} for command {command!r}")
            defaults[key] = _convert(actions[key], value, where)
    for key, (_, lineno) in sections["general"].items():
        if not any(key in {a.dest for a in sp._actions} for sp in _SUBPARSERS.values()):
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    parser.set_defaults(**defaults)


def write_resolved(outdir: Path, command: str, args: argparse.Namespace) -> None:
    lines = [f"[{command}]"]
    for key, value in sorted(vars(args).items()):
        if key in ("func", "command", "config") or value is None:
            continue
        lines.append(f"{key} = {value}")
    (outdir / RESOLVED_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _require_file(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"missing {what}")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _float_list(text: str) -> list[float]:
    return [float(t) for t in str(text).replace(",", " ").split()]


def _int_list(text: str) -> list[int]:
    return [int(t) for t in str(text).replace(",", " ").split()]


def _vector3(text: str) -> np.ndarray:
    v = _float_list(text)
    if len(v) != 3:
        raise ValueError(f"expected three comma-separated numbers, got {text!r}")
    return np.array(v)


def _optional_int(text: str):
    return None if str(text).lower() in ("", "none", "off", "0") else int(text)


# --- commands ----------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.preset == "toy":
        ds = synth.make_toy_age_set(args.seed)
    else:
        preset = synth.load_preset(args.preset)
        spec = synth.SynthSpec(
            preset.groups(args.scale),
            D=args.dim,
            samples_per_identity=args.samples_per_identity,
            attr_signal=args.attr_signal,
            identity_noise=args.identity_noise,
            observation_noise=args.observation_noise,
            nuisance=args.nuisance,
            seed=args.seed,
            mixing_seed=args.mixing_seed,
            name=preset.name,
        )
        if spec.degenerate:
            print("warning: attr_signal = identity_noise = 0, all prototypes identical", file=sys.stderr)
        ds = synth.generate(spec)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    core.save_dataset(ds, out)
    _write_snapshot_next_to(out, "synth", args)
    print(f"{'gender':<8} {'ethnicity':<10} {'identities':>10}")
    for (g, e), n in sorted(synth.identities_per_group(ds).items()):
        print(f"{g:<8} {e:<10} {n:>10}")
    print(f"total: {ds.C} identities, {ds.N} samples, D={ds.D} -> {out}")
    return EXIT_OK


def _write_snapshot_next_to(path: Path, command: str, args) -> None:
    lines = [f"[{command}]"] + [
        f"{k} = {v}" for k, v in sorted(vars(args).items()) if k not in ("func", "command", "config") and v is not None
    ]
    Path(str(path) + ".config").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _mlp_spec(args, D: int) -> MlpSpec:
    return MlpSpec((D, *_int_list(args.hidden), args.feature_dim), args.activation)


def _schedule(args) -> LrSchedule:
    """Default: 0.1 decayed at 40K/60K; fine-tuning: 0.01 at 20K/30K; both divided by --schedule-scale."""
    if args.milestones is None:
        make = LrSchedule.fine_tune if args.fine_tune_from else LrSchedule.standard
        sched = make(args.schedule_scale)
        if args.base_rate is not None:
            sched = LrSchedule(args.base_rate, sched.milestones, args.decay)
        return sched
    base = args.base_rate if args.base_rate is not None else (0.01 if args.fine_tune_from else 0.1)
    return LrSchedule(base, tuple(_int_list(args.milestones)), args.decay)


def _load_training_data(args) -> core.Dataset:
    ds = core.load_dataset(_require_file(args.dataset, "dataset"))
    if args.attributes:
        ds = ds.with_attribute_columns(core.ATTRIBUTE_SUBSETS[args.attributes])
    return ds


def cmd_train(args) -> int:
    ds = _load_training_data(args)
    if args.fine_tune_from:
        _require_file(args.fine_tune_from, "fine-tune checkpoint")
    spec = _mlp_spec(args, ds.D)
    cfg = trainer.TrainConfig(
        combo=args.combo,
        lam=args.lam,
        lam_center=args.lambda_center,
        tau=args.tau,
        pair_cap=args.pair_cap,
        schedule=_schedule(args),
        batch_size=min(args.batch_size, ds.N),
        total_iterations=args.iterations,
        seed=args.seed,
        center_rate=args.center_rate,
        fine_tune_from=args.fine_tune_from,
    )
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_resolved(outdir, "train", args)
    try:
        params, tlog = trainer.train(ds, spec, cfg)
    except trainer.TrainingAborted as exc:
        backbone.save_checkpoint(outdir / "model.last_good.ckpt", exc.params, spec, exc.iteration)
        exc.log.write_csv(outdir / "train_log.csv")
        print(f"error: {exc}; last good parameters saved to {outdir / 'model.last_good.ckpt'}", file=sys.stderr)
        return EXIT_NUMERIC
    backbone.save_checkpoint(outdir / "model.ckpt", params, spec, args.iterations)
    tlog.write_csv(outdir / "train_log.csv")
    last = tlog.records[-1] if tlog.records else None
    msg = f"trained {args.iterations} iterations"
    if last:
        msg += f", final loss {last.loss:.6g} (softmax {last.loss_softmax:.6g}, pairs {last.pairs})"
    print(f"{msg} -> {outdir}")
    return EXIT_OK


def _features_for(ckpt: Path, ds: core.Dataset):
    params, spec, _ = backbone.load_checkpoint(ckpt)
    if spec.input_dim != ds.D:
        raise ConfigError(f"checkpoint expects D={spec.input_dim}, dataset has D={ds.D}")
    return params, spec, backbone.extract_features(params, ds.inputs, spec)


def cmd_eval(args) -> int:
    ds = core.load_dataset(_require_file(args.dataset, "dataset"))
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_resolved(outdir, "eval", args)
    if args.sweep_lambdas:
        from .experiments import lambda_sweep

        train_ds = core.load_dataset(_require_file(args.train_dataset, "training dataset"))
        spec = MlpSpec((train_ds.D, *_int_list(args.hidden), args.feature_dim), args.activation)
        n = args.iterations
        base = trainer.TrainConfig(
            tau=args.tau, batch_size=min(args.batch_size, train_ds.N), total_iterations=n, seed=args.seed,
            schedule=LrSchedule(args.base_rate, (n * 4 // 7, n * 6 // 7), 10.0),
        )
        rows = lambda_sweep(train_ds, ds, spec, base, _float_list(args.sweep_lambdas))
        lines = ["lambda,rank1,verification_accuracy"]
        lines += [f"{lam!r},{rep.rank1!r},{rep.verification_accuracy!r}" for lam, rep in rows]
        (outdir / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        for lam, rep in rows:
            print(f"lambda={lam:<8g} rank1={rep.rank1:.4f} verification={rep.verification_accuracy:.4f}")
        return EXIT_OK

    _, _, feats = _features_for(_require_file(args.checkpoint, "checkpoint"), ds)
    if args.concat_flipped:
        feats = evaluation.concat_paired_features(feats, feats)
    report = evaluation.EvalReport.from_split(evaluation.GallerySplit.first_per_identity(feats, ds.labels))
    (outdir / "eval.csv").write_text(report.to_csv(), encoding="utf-8")
    (outdir / "cmc.csv").write_text(report.cmc_csv(), encoding="utf-8")
    (outdir / "eval_summary.txt").write_text(report.summary(), encoding="utf-8")
    print(report.summary(), end="")
    return EXIT_OK


def cmd_check(args) -> int:
    ds = core.load_dataset(_require_file(args.dataset, "dataset"))
    params, _, feats = _features_for(_require_file(args.checkpoint, "checkpoint"), ds)
    rep = evaluation.verify_distance_bounds(feats, ds.labels, ds.attributes, params.G, args.tau)
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_resolved(outdir, "check", args)
    (outdir / "bounds.csv").write_text(rep.to_csv(), encoding="utf-8")
    (outdir / "bounds_summary.txt").write_text(rep.summary(), encoding="utf-8")
    print(rep.summary(), end="")
    return EXIT_OK if rep.violations == 0 else EXIT_NUMERIC


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_gradcheck(
        seed=args.seed, instances=args.instances, max_m=args.max_m, max_k=args.max_k, max_c=args.max_c,
        corrupt=args.corrupt,
    )
    table = gradcheck.format_table(results)
    print(table, end="")
    if args.output_dir:
        outdir = Path(args.output_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "gradcheck.txt").write_text(table, encoding="utf-8")
        write_resolved(outdir, "gradcheck", args)
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def cmd_preprocess(args) -> int:
    intr = None
    if args.fx is not None:
        intr = rgbd.Intrinsics(args.fx, args.fy if args.fy is not None else args.fx, args.cx, args.cy)
    depth = rgbd.read_depth(_require_file(args.depth, "depth raster"), intr)
    rgb = rgbd.read_rgb(_require_file(args.rgb, "rgb raster"))
    tensor = rgbd.preprocess(depth, rgb, args.nose_tip, args.radius)
    attrs = core.encode_attributes(args.gender, args.ethnicity, args.age)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = rgbd.append_record(out, tensor.flatten(), args.label, attrs)
    print(f"appended record {n - 1} (D={tensor.data.size}, valid pixels {int(tensor.mask.sum())}) -> {out}")
    return EXIT_OK


def cmd_toy(args) -> int:
    result = trainer.toy_experiment(seed=args.seed, iterations=args.iterations, lam=args.lam, tau=args.tau)
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_resolved(outdir, "toy", args)
    (outdir / "toy_features.csv").write_text(result.features_csv(), encoding="utf-8")
    (outdir / "toy_summary.txt").write_text(result.summary(), encoding="utf-8")
    result.softmax.log.write_csv(outdir / "train_log_softmax.csv")
    result.attribute_aware.log.write_csv(outdir / "train_log_attr.csv")
    print(result.summary(), end="")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "check": cmd_check,
    "gradcheck": cmd_gradcheck,
    "preprocess": cmd_preprocess,
    "toy": cmd_toy,
}
_SUBPARSERS: dict = {}


def _add_model_args(p):
    p.add_argument("--hidden", default="64", help="comma-separated hidden widths")
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--activation", choices=["relu", "tanh", "identity"], default="relu")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attrloss", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value config file with [general] and [%s] sections" % name)
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=COMMANDS[name])
        _SUBPARSERS[name] = p
        return p

    p = add("synth", "generate a synthetic attributed dataset")
    p.add_argument("--preset", default="set1", help="toy, set1, set2 or a preset file")
    p.add_argument("--scale", type=float, default=None, help="identity-count divisor (default: preset's)")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--samples-per-identity", type=int, default=10)
    p.add_argument("--attr-signal", type=float, default=2.0)
    p.add_argument("--identity-noise", type=float, default=1.0)
    p.add_argument("--observation-noise", type=float, default=0.6)
    p.add_argument("--nuisance", type=float, default=0.0)
    p.add_argument("--mixing-seed", type=int, default=None)
    p.add_argument("-o", "--output", default="synth.attrset")

    p = add("train", "train a feature extractor with the chosen loss combination")
    p.add_argument("--dataset")
    p.add_argument("--output-dir", default="run")
    _add_model_args(p)
    p.add_argument("--combo", choices=[c.value for c in LossCombo], default="b",
                   help="a softmax, b +attribute, c +center, d +center+attribute")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    p.add_argument("--lambda-center", type=float, default=1e-3)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--pair-cap", type=_optional_int, default=None)
    p.add_argument("--attributes", choices=sorted(core.ATTRIBUTE_SUBSETS), default=None,
                   help="train on a subset of attribute columns")
    p.add_argument("--batch-size", type=int, default=200)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--base-rate", type=float, default=None)
    p.add_argument("--milestones", default=None, help="comma-separated iteration counts")
    p.add_argument("--decay", type=float, default=10.0)
    p.add_argument("--schedule-scale", type=float, default=100.0,
                   help="divide the default 40K/60K (fine-tune 20K/30K) milestones by this")
    p.add_argument("--center-rate", type=float, default=0.5)
    p.add_argument("--fine-tune-from", default=None)

    p = add("eval", "rank-k / CMC / verification on the first-sample gallery split")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--output-dir", default="eval")
    p.add_argument("--concat-flipped", action="store_true",
                   help="concatenate each feature with itself (paired-view stand-in)")
    p.add_argument("--sweep-lambdas", default=None, help="train combo b per lambda on --train-dataset")
    p.add_argument("--train-dataset", default=None)
    _add_model_args(p)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--iterations", type=int, default=1500)
    p.add_argument("--base-rate", type=float, default=0.1)

    p = add("check", "verify the intra-class and centroid feature-distance bounds")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--output-dir", default="check")

    p = add("gradcheck", "finite-difference check of all analytic gradients")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--max-m", type=int, default=8)
    p.add_argument("--max-k", type=int, default=6)
    p.add_argument("--max-c", type=int, default=5)
    p.add_argument("--corrupt", choices=gradcheck.CHECKS, default=None, help=argparse.SUPPRESS)
    p.add_argument("--output-dir", default=None)

    p = add("preprocess", "crop, reproject and normalize one RGB-D face into an ATTRSET1 file")
    p.add_argument("--depth", help="uint16 millimetre raster with a .header sidecar")
    p.add_argument("--rgb", help="raw 112x96x3 uint8 raster")
    p.add_argument("--nose-tip", type=_vector3, required=False, help="x,y,z in millimetres")
    p.add_argument("--radius", type=float, default=rgbd.DEFAULT_RADIUS_MM)
    p.add_argument("--fx", type=float, default=None)
    p.add_argument("--fy", type=float, default=None)
    p.add_argument("--cx", type=float, default=None)
    p.add_argument("--cy", type=float, default=None)
    p.add_argument("--label", type=int, default=0)
    p.add_argument("--gender", choices=["male", "female"], default="male")
    p.add_argument("--ethnicity", choices=["asian", "caucasian"], default="caucasian")
    p.add_argument("--age", type=float, default=30.0)
    p.add_argument("-o", "--output", default="faces.attrset")

    p = add("toy", "nine-identity 2-D feature experiment, softmax vs softmax+attribute")
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--output-dir", default="toy")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.config:
            apply_config(_SUBPARSERS[args.command], args.command, args.config)
            args = parser.parse_args(argv)
        if args.command == "preprocess" and args.nose_tip is None:
            raise ConfigError("--nose-tip is required")
        if args.command == "preprocess" and args.fx is not None and (args.cx is None or args.cy is None):
            raise ConfigError("--fx needs --cx and --cy")
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (core.DegenerateInputError, ArithmeticError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except core.DatasetFormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc, OSError) else EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
