"""Command-line harness: ``train``, ``eval``, ``sweep``, ``bench``, ``report``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .cells import Tape
from .datasets import (SCENES, DataError, WindowSpec, fit_norm, gen_masks, gen_synthetic_cv,
                       leave_one_out)
from .kalman import FilterError
from .metrics import (AGGREGATIONS, METRICS_HEADER, RATIO_GRID, evaluate, read_csv, ratio_label,
                      write_de, write_metrics)
from .model import MODEL_KINDS, BaselineModel, ModelConfig, build_model, canonical_kind, load_model
from .numkit import Rng, TrainingError
from .svg import line_chart
from .training import STREAM_EVAL, STREAM_INIT, TrainConfig, train

log = logging.getLogger("twoblock")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
SYNTHETIC = "synthetic"
SYN_TEST_HORIZON = 20


class UsageError(Exception):
    pass


class CompatibilityError(UsageError):
    pass


# configuration -----------------------------------------------------------------

def _ratio(s: str):
    if s == "uniform":
        return None
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'uniform' or a number, got {s!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"miss ratio must be in [0, 1], got {v}")
    return v


def _horizons(s: str):
    try:
        hs = [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad horizon list {s!r}") from None
    if not hs or min(hs) < 1:
        raise argparse.ArgumentTypeError("horizons must be positive integers")
    return hs


def _model_tag(s: str):
    try:
        return canonical_kind(s)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat 'key = value' file; command-line flags win")
    p.add_argument("--data-dir", default="data", help="directory with ETH/UCY scene files")
    p.add_argument("--test-scene", default="zara2",
                   help=f"held-out scene: {', '.join(SCENES)} or '{SYNTHETIC}'")
    p.add_argument("--obs-len", type=int, default=8)
    p.add_argument("--pred-len", type=int, default=8)
    p.add_argument("--hidden", type=int, default=32, help="baseline encoder width")
    p.add_argument("--block-hidden", type=int, default=16, help="width of each two-block cell")
    p.add_argument("--decoder-hidden", type=int, default=32)
    p.add_argument("--noise-dim", type=int, default=None,
                   help="decoder noise width (default 8 when --samples > 1, else 0)")
    p.add_argument("--samples", type=int, default=1, help="k for the variety loss / evaluation")
    p.add_argument("--agg", choices=AGGREGATIONS, default="best")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-final", type=float, default=None,
                   help="decay the learning rate geometrically to this value by the last epoch")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--miss-ratio", type=_ratio, default=None, metavar="{uniform|<float>}",
                   help="U(0.2, 0.8) per sequence, or a fixed ratio")
    p.add_argument("--resample-masks", action="store_true", help="draw fresh training masks every epoch")
    p.add_argument("--zero-space", choices=("normalized", "raw"), default="normalized")
    p.add_argument("--stride", type=int, default=1, help="training window stride")
    p.add_argument("--eval-stride", type=int, default=1, help="evaluation window stride")
    p.add_argument("--horizons", type=_horizons, default=None, help="e.g. 12,16,20")
    p.add_argument("--out-dir", default="runs")
    p.add_argument("--run-tag", default="", help="suffix distinguishing otherwise equal runs")
    p.add_argument("--data-seed", type=int, default=0, help="synthetic data seed")
    p.add_argument("--syn-train", type=int, default=1000)
    p.add_argument("--syn-test", type=int, default=200)
    p.add_argument("--meas-noise", type=float, default=0.1)
    p.add_argument("--process-noise", type=float, default=0.05)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twoblock", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", help="train one model on a leave-one-out split")
    _common(p)
    p.add_argument("--model", type=_model_tag, required=True, metavar="{" + ",".join(MODEL_KINDS) + "}")
    p = sub.add_parser("eval", help="evaluate a trained model")
    _common(p)
    p.add_argument("--model", type=_model_tag, required=True, metavar="{" + ",".join(MODEL_KINDS) + "}")
    p.add_argument("--model-file", default=None, help="explicit weights file")
    p.add_argument("--timing", action="store_true", help="fill the *_ms columns (not byte-stable)")
    p = sub.add_parser("sweep", help="miss-ratio grid, per-step DE and horizon extension for all models")
    _common(p)
    p = sub.add_parser("bench", help="fill/encode/predict timing per window")
    _common(p)
    p.add_argument("--reps", type=int, default=1000)
    p = sub.add_parser("report", help="collect evaluation CSVs into a summary table")
    _common(p)
    return parser


def load_config_file(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            if "=" not in s:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            k, v = (x.strip() for x in s.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = load_config_file(args.config)
        except OSError as e:
            raise UsageError(f"cannot read config file: {e}") from None
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in cfg.items():
            if k not in known or k in ("help", "config"):
                raise UsageError(f"unknown config key {k!r}")
            act = known[k]
            if act.type is not None:
                try:
                    v = act.type(v)
                except (argparse.ArgumentTypeError, ValueError) as e:
                    raise UsageError(f"config key {k!r}: {e}") from None
            elif isinstance(act, argparse._StoreTrueAction):
                v = v.lower() in ("1", "true", "yes", "on")
            defaults[k] = v
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    _validate(args)
    return args


def _validate(args):
    for name in ("obs_len", "pred_len", "hidden", "block_hidden", "decoder_hidden", "samples",
                 "batch", "stride", "eval_stride"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be positive")
    if args.epochs < 0:
        raise UsageError("--epochs must be non-negative")
    if args.obs_len < 2:
        raise UsageError("--obs-len must be at least 2")
    scene = args.test_scene.lower()
    if scene not in SCENES + (SYNTHETIC,):
        raise UsageError(f"--test-scene must be one of {', '.join(SCENES + (SYNTHETIC,))}")
    args.test_scene = scene
    if args.command in ("train", "eval", "sweep", "bench") and args.seed is None:
        raise UsageError("--seed is required")


def config_dict(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)}


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# data and runs -------------------------------------------------------------------

def load_data(args, test_pred_len: int):
    """Returns ``(train windows, test windows, norm stats)``."""
    if args.test_scene == SYNTHETIC:
        kw = dict(meas_std=args.meas_noise, process_noise=args.process_noise)
        tr = gen_synthetic_cv(args.syn_train, args.obs_len, args.pred_len,
                              Rng(args.data_seed, 0), **kw)
        horizon = max(test_pred_len, SYN_TEST_HORIZON)
        te = gen_synthetic_cv(args.syn_test, args.obs_len, horizon, Rng(args.data_seed, 1), **kw)
        train_w = tr.windows
        norm = fit_norm(np.concatenate([train_w.obs.reshape(-1, 2), train_w.future.reshape(-1, 2)]),
                        source=SYNTHETIC)
        return train_w, te.windows.truncate_future(test_pred_len), norm
    split = leave_one_out(args.data_dir, args.test_scene,
                          WindowSpec(args.obs_len, args.pred_len, args.stride),
                          WindowSpec(args.obs_len, test_pred_len, args.eval_stride))
    return split.train, split.test, split.norm


def run_dir(args, kind: str) -> Path:
    name = f"{kind}-{args.test_scene}-p{args.pred_len}-s{args.seed}"
    if args.run_tag:
        name += f"-{args.run_tag}"
    return Path(args.out_dir) / name


def model_config(args, kind: str, noise_dim=None) -> ModelConfig:
    if noise_dim is None:
        noise_dim = args.noise_dim if args.noise_dim is not None else (8 if args.samples > 1 else 0)
    return ModelConfig(kind=kind, obs_len=args.obs_len,
                       enc_hidden=args.block_hidden if kind == "twoblock" else args.hidden,
                       dec_hidden=args.decoder_hidden, noise_dim=noise_dim,
                       zero_space=args.zero_space)


def open_model(args, kind: str, path=None):
    path = Path(path) if path else run_dir(args, kind) / "model.npz"
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    model, meta = load_model(path)
    expected = model_config(args, kind, noise_dim=model.config.noise_dim)
    if expected.fingerprint() != model.config.fingerprint():
        raise CompatibilityError(
            f"{path} was trained with {meta['config']}, incompatible with the requested "
            f"configuration; check --model/--obs-len/--hidden/--block-hidden/--decoder-hidden")
    return model, meta


def eval_masks(args, n: int, ratio):
    """Masks depend only on (seed, ratio), so every model sees the same ones."""
    stream = STREAM_EVAL if ratio is None else 1000 + int(round(ratio * 1000))
    masks, _ = gen_masks(n, args.obs_len, Rng(args.seed, stream), ratio)
    return masks


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# commands ------------------------------------------------------------------------

def cmd_train(args) -> Path:
    kind = args.model
    train_w, _, norm = load_data(args, args.pred_len)
    if len(train_w) == 0:
        raise DataError("no training windows")
    config = model_config(args, kind)
    model = build_model(config, norm, Rng(args.seed, STREAM_INIT))
    tcfg = TrainConfig(epochs=args.epochs, batch=args.batch, lr=args.lr, k=args.samples,
                       seed=args.seed, miss_ratio=args.miss_ratio, resample_masks=args.resample_masks,
                       lr_final=args.lr_final)
    t0 = time.perf_counter()
    result = train(model, train_w, tcfg)
    elapsed = time.perf_counter() - t0
    out = run_dir(args, kind)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.npz", {"pred_len": args.pred_len, "seed": args.seed})
    with open(out / "loss_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for e, loss in enumerate(result.losses, 1):
            w.writerow([e, repr(float(loss))])
    _write_json(out / "manifest.json", {
        "command": "train", "config": config_dict(args), "version": version_string(),
        "seed": args.seed, "fingerprint": config.fingerprint(), "backend": backend(),
        "n_train_windows": len(train_w), "clamped_masks": result.clamped_masks,
        "norm": norm.to_dict(), "train_seconds": round(elapsed, 3),
    })
    print(f"trained {kind} on {len(train_w)} windows -> {out}")
    return out


def cmd_eval(args) -> Path:
    kind = args.model
    model, _ = open_model(args, kind, args.model_file)
    _, test_w, _ = load_data(args, args.pred_len)
    if len(test_w) == 0:
        raise DataError(f"no evaluation windows in scene {args.test_scene}")
    masks = eval_masks(args, len(test_w), args.miss_ratio)
    row = evaluate(model, kind, args.test_scene, test_w.obs, masks, test_w.future,
                   args.miss_ratio, args.samples, args.agg, args.seed,
                   Rng(args.seed, STREAM_EVAL + 100), timing=args.timing)
    out = run_dir(args, kind) / f"eval-{ratio_label(args.miss_ratio)}"
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "metrics.csv", [row])
    write_de(out / "de_per_step.csv", [row])
    _write_json(out / "summary.json", {
        "gi_steps": row.gi_steps, "n_windows": row.n_windows, "ade_m": row.ade_m,
        "fde_m": row.fde_m, "config": config_dict(args), "version": version_string()})
    print(f"{kind} {args.test_scene} ratio={row.miss_ratio}: ADE {row.ade_m:.4f} m  "
          f"FDE {row.fde_m:.4f} m  ({row.n_windows} windows)")
    return out


def _load_all(args):
    models, missing = {}, []
    for kind in MODEL_KINDS:
        try:
            models[kind] = open_model(args, kind)[0]
        except FileNotFoundError:
            missing.append(kind)
    if missing:
        raise FileNotFoundError(f"missing trained models for: {', '.join(missing)} "
                                f"(expected under {args.out_dir})")
    return models


def cmd_sweep(args) -> Path:
    models = _load_all(args)
    horizons = args.horizons or [args.pred_len]
    out = Path(args.out_dir) / f"sweep-{args.test_scene}-p{args.pred_len}-s{args.seed}"
    out.mkdir(parents=True, exist_ok=True)
    rows, de_rows, horizon_rows = [], {}, []
    for hi, steps in enumerate(horizons):
        _, test_w, _ = load_data(args, steps)
        if len(test_w) == 0:
            raise DataError(f"no {steps}-step evaluation windows in {args.test_scene}")
        for ratio in (None,) + RATIO_GRID:
            masks = eval_masks(args, len(test_w), ratio)
            for kind, model in models.items():
                row = evaluate(model, kind, args.test_scene, test_w.obs, masks, test_w.future,
                               ratio, args.samples, args.agg, args.seed,
                               Rng(args.seed, STREAM_EVAL + 100), timing=False)
                if ratio is None:
                    de_rows.setdefault(steps, []).append(row)
                    horizon_rows.append(row)
                else:
                    rows.append(row)
    write_metrics(out / "sweep_metrics.csv", rows)
    write_metrics(out / "horizon_metrics.csv", horizon_rows)
    for hi, steps in enumerate(horizons):
        name = "de_per_step.csv" if hi == 0 else f"de_per_step_h{steps}.csv"
        write_de(out / name, de_rows[steps])

    first = horizons[0]
    for metric in ("ade_m", "fde_m"):
        series = {k: ([float(r.miss_ratio) for r in rows if r.model == k and r.pred_len == first],
                      [getattr(r, metric) for r in rows if r.model == k and r.pred_len == first])
                  for k in MODEL_KINDS}
        label = metric[:3].upper()
        (out / f"sweep_{metric[:3]}.svg").write_text(line_chart(
            series, f"{label} vs miss-detection ratio ({args.test_scene}, {first} steps)",
            "miss-detection ratio", f"{label} (m)"))
    series = {r.model: (list(range(1, len(r.de) + 1)), list(r.de)) for r in de_rows[first]}
    (out / "de_per_step.svg").write_text(line_chart(
        series, f"Displacement error per step ({args.test_scene})", "prediction step", "DE (m)"))
    if len(horizons) > 1:
        series = {k: (horizons, [r.ade_m for r in horizon_rows if r.model == k]) for k in MODEL_KINDS}
        (out / "horizons.svg").write_text(line_chart(
            series, f"ADE vs prediction length ({args.test_scene})", "steps", "ADE (m)"))
    _write_json(out / "manifest.json", {"command": "sweep", "config": config_dict(args),
                                        "version": version_string()})
    print(f"sweep written to {out}")
    return out


BENCH_HEADER = ("model", "n_reps", "fill_ms_mean", "fill_ms_std", "encode_ms_mean", "encode_ms_std",
                "predict_ms_mean", "predict_ms_std", "total_ms_mean", "total_ms_std")


def bench_model(model, obs_n, masks, steps: int, reps: int):
    """Per-window wall-clock (ms) of each phase, cycling through the windows."""
    n = len(obs_n)
    times = np.zeros((reps, 3))
    baseline = isinstance(model, BaselineModel)
    perf = time.perf_counter
    for r in range(reps):
        o, m = obs_n[r % n][None], masks[r % n][None]
        tape = Tape(record=False)
        t0 = perf()
        if baseline:
            filled = model.fill(o, m)
            t1 = perf()
            h, _, _ = model.encode_batch(tape, o, m, filled=filled)
        else:
            t1 = perf()
            h, _, _ = model.encode_batch(tape, o, m)
        t2 = perf()
        model.decode_batch(tape, h, steps)
        t3 = perf()
        times[r] = (t1 - t0, t2 - t1, t3 - t2)
    return times * 1000.0


def cmd_bench(args) -> Path:
    if args.reps < 1:
        raise UsageError("--reps must be positive")
    models = _load_all(args)
    _, test_w, _ = load_data(args, args.pred_len)
    if len(test_w) == 0:
        raise DataError("no evaluation windows to time")
    test_w = test_w.subset(np.arange(min(100, len(test_w))))
    masks = eval_masks(args, len(test_w), args.miss_ratio)
    out = Path(args.out_dir) / f"bench-{args.test_scene}-p{args.pred_len}-s{args.seed}"
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for kind, model in models.items():
        obs_n = model.normalize(np.where(masks[..., None], test_w.obs, np.nan))
        bench_model(model, obs_n, masks, args.pred_len, min(20, args.reps))  # warm-up
        t = bench_model(model, obs_n, masks, args.pred_len, args.reps)
        total = t.sum(axis=1)

        def f(v):
            return f"{v:.6f}"

        fill = ["", ""] if kind == "twoblock" else [f(t[:, 0].mean()), f(t[:, 0].std())]
        rows.append([kind, args.reps, *fill, f(t[:, 1].mean()), f(t[:, 1].std()),
                     f(t[:, 2].mean()), f(t[:, 2].std()), f(total.mean()), f(total.std())])
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        w.writerows(rows)
    _write_json(out / "manifest.json", {"command": "bench", "config": config_dict(args),
                                        "version": version_string(), "backend": backend()})
    for r in rows:
        print(f"{r[0]:>9}: fill {r[2] or '-':>10}  encode {r[4]:>10}  predict {r[6]:>10}  total {r[8]:>10} ms")
    return out


def cmd_report(args) -> Path:
    root = Path(args.out_dir)
    files = sorted(root.glob("*/eval-*/metrics.csv"))
    if not files:
        raise FileNotFoundError(f"no evaluation results under {root}")
    rows = [r for f in files for r in read_csv(f)]
    with open(root / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRICS_HEADER, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    lines = []
    groups = sorted({(r["pred_len"], r["miss_ratio"], r["agg"]) for r in rows})
    for pred_len, ratio, agg in groups:
        sel = [r for r in rows if (r["pred_len"], r["miss_ratio"], r["agg"]) == (pred_len, ratio, agg)]
        scenes = sorted({r["scene"] for r in sel})
        kinds = [k for k in MODEL_KINDS if any(r["model"] == k for r in sel)]
        for metric in ("ade_m", "fde_m"):
            lines.append(f"### {metric[:3].upper()} (m), {pred_len} steps, miss ratio {ratio}, {agg}")
            lines.append("")
            lines.append("| scene | " + " | ".join(kinds) + " |")
            lines.append("|---" * (len(kinds) + 1) + "|")
            for s in scenes:
                cells = []
                for k in kinds:
                    vals = [float(r[metric]) for r in sel if r["scene"] == s and r["model"] == k]
                    cells.append(f"{np.mean(vals):.3f}" if vals else "")
                lines.append(f"| {s} | " + " | ".join(cells) + " |")
            lines.append("")
    (root / "report.md").write_text("\n".join(lines))
    print(f"{len(rows)} rows from {len(files)} evaluations -> {root / 'report.md'}")
    return root / "report.md"


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "bench": cmd_bench,
            "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # argparse
        return int(e.code) if e.code is not None else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, FilterError, FloatingPointError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
