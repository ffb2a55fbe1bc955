"""Command-line experiment runner.

Subcommands: train, sweep, range-test, sb-scan, quadcheck. Every command
reads one JSON run config and writes CSV/JSON artifacts into the output
directory. Exit status: 0 success, 1 config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from typing import Optional

from .config import RunConfig
from .errors import ConfigError, InvalidArgumentError, QuadtuneError
from .quadprobe import LossSample, epsilon_bound, fit_quadratic, probe_points, propose_epsilon
from .runner import CSV_COLUMNS, RunRecord, TrainingRun, run_all_seeds
from .schedules import lr_range_test
from .stats import summarize


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: str, header: list[str], rows: list[list[str]]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def write_trace(path: str, records: list[RunRecord]) -> None:
    _write_csv(path, CSV_COLUMNS, [r.to_csv_row() for r in records])


def _write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_json_file(args.config)
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    traces, summary = run_all_seeds(cfg)
    for seed, records in traces.items():
        write_trace(os.path.join(cfg.out_dir, f"trace_seed{seed}.csv"), records)
    _write_json(os.path.join(cfg.out_dir, "summary.json"), summary)
    if not args.quiet:
        for metric, agg in summary["aggregate"].items():
            print(f"{metric}: mean={agg['mean']:.6g} stddev={agg['stddev']:.3g} (n={agg['n']})")
        print(f"wrote {os.path.join(cfg.out_dir, 'summary.json')}")
    return 0


def _sweep_metric(per_seed: list[dict]) -> list[float]:
    for metric in ("final_test_acc", "final_test_loss", "final_train_loss"):
        values = [s[metric] for s in per_seed if s.get(metric) is not None]
        if values:
            return values
    raise QuadtuneError("no metric available for sweep aggregation")


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    if args.field != "seed_lr":
        raise ConfigError("only --field seed_lr sweeps are supported")
    if cfg.lr_policy.get("kind") != "tuner":
        raise ConfigError("seed_lr sweeps require a tuner lr policy")
    values = [float(v) for v in args.values.split(",") if v]
    if not values or any(v <= 0 for v in values):
        raise ConfigError("sweep values must be positive numbers")

    rows = []
    for value in values:
        sub_cfg = RunConfig.from_dict(cfg.to_dict())
        sub_cfg.lr_policy["seed_lr"] = value
        sub_cfg.out_dir = os.path.join(cfg.out_dir, f"seed_lr_{value:g}")
        traces, summary = run_all_seeds(sub_cfg)
        for seed, records in traces.items():
            write_trace(os.path.join(sub_cfg.out_dir, f"trace_seed{seed}.csv"), records)
        _write_json(os.path.join(sub_cfg.out_dir, "summary.json"), summary)
        stats = summarize(_sweep_metric(summary["per_seed"]))
        rows.append([_fmt(value), _fmt(stats.mean), _fmt(stats.stddev)])
        if not args.quiet:
            print(f"seed_lr={value:g}: mean={stats.mean:.6g} stddev={stats.stddev:.3g}")

    _write_csv(os.path.join(cfg.out_dir, "sweep.csv"), ["value", "mean", "stddev"], rows)
    return 0


def cmd_range_test(args) -> int:
    cfg = _load_config(args)
    seed = cfg.seeds[0]
    run = TrainingRun(cfg, seed)
    result = lr_range_test(run.engine, run.optimizer, args.lr_min, args.lr_max, args.steps)
    rows = [[_fmt(lr), _fmt(loss)] for lr, loss in result.curve]
    _write_csv(os.path.join(cfg.out_dir, "range_test.csv"), ["lr", "smoothed_loss"], rows)
    print(f"suggested_max_lr: {result.suggested_max_lr!r}")
    if result.exploded_at_lr is not None and not args.quiet:
        print(f"loss exploded at lr {result.exploded_at_lr!r}")
    return 0


def cmd_sb_scan(args) -> int:
    cfg = _load_config(args)
    seed = cfg.seeds[0]
    sizes = [int(s) for s in args.sizes.split(",") if s]
    if not sizes or any(s < 1 for s in sizes):
        raise ConfigError("sizes must be positive integers")
    run = TrainingRun(cfg, seed)
    engine = run.engine
    rows = []
    for size in sizes:
        if size > engine.batches_per_epoch:
            raise InvalidArgumentError(
                f"superbatch size {size} x minibatch {engine.minibatch_size} exceeds the dataset"
            )
        losses = [engine.superbatch_loss(engine.draw_superbatch(size)) for _ in range(args.trials)]
        rows.append([str(size), _fmt(summarize(losses).stddev)])
        if not args.quiet:
            print(f"size={size}: stddev={rows[-1][1]}")
    _write_csv(os.path.join(cfg.out_dir, "sb_scan.csv"), ["size", "loss_stddev"], rows)
    return 0


def cmd_quadcheck(args) -> int:
    cfg = _load_config(args)
    seed = cfg.seeds[0]
    run = TrainingRun(cfg, seed)
    if not 0 <= args.at_step < run.total_steps:
        raise ConfigError("at_step must lie within the configured run")
    run.advance_to(args.at_step)

    policy = cfg.lr_policy
    if run.tuner is not None:
        tc = run.tuner.cfg
        eta = run.tuner.state.current_lr
        r, n, span, sb_size = tc.epsilon_threshold_r, tc.n_probes, tc.span_fraction, tc.superbatch_size
    else:
        from .schedules import lr_at

        eta = lr_at(run.schedule, args.at_step, run.total_steps)
        r = float(policy.get("epsilon_threshold", 1e-3))
        n = int(policy.get("n_probes", 5))
        span = float(policy.get("span_fraction", 0.5))
        sb_size = min(100, run.engine.batches_per_epoch)

    engine = run.engine
    x, y = engine.batch_for_step(args.at_step)
    _, grads = engine.loss_and_gradient(x, y)
    pending = run.optimizer.compute_direction(run.model.params, grads)
    direction = pending.direction
    sb = engine.draw_superbatch(sb_size)

    loss_at_zero = engine.perturbed_loss(direction, eta, sb)
    if not math.isfinite(loss_at_zero):
        raise QuadtuneError("loss at the current lr is non-finite; cannot probe")
    bound = epsilon_bound(r, max(loss_at_zero, 0.0))
    if bound <= 0.0:
        raise QuadtuneError("epsilon bound is zero (loss is zero); nothing to probe")

    grid = probe_points(eta, bound, n, span)
    samples = []
    for eps in grid:
        loss = loss_at_zero if eps == 0.0 else engine.perturbed_loss(direction, eta + eps, sb)
        samples.append(LossSample(epsilon=eps, loss=loss))
    fit = fit_quadratic(samples)

    half_width = max(abs(e) for e in grid)
    held_out = [-2.0 * half_width, -1.5 * half_width, 1.5 * half_width, 2.0 * half_width]
    rows = []
    for s in samples:
        rows.append([_fmt(s.epsilon), _fmt(s.loss), _fmt(fit.predict(s.epsilon)), "0"])
    for eps in held_out:
        measured = engine.perturbed_loss(direction, eta + eps, sb)
        rows.append([_fmt(eps), _fmt(measured), _fmt(fit.predict(eps)), "1"])
    _write_csv(
        os.path.join(cfg.out_dir, "quadcheck.csv"),
        ["epsilon", "measured_loss", "fitted_loss", "held_out"],
        rows,
    )

    proposal = propose_epsilon(fit, bound)
    if proposal.epsilon is not None:
        eps_min = proposal.epsilon
        true_at_min = engine.perturbed_loss(direction, eta + eps_min, sb)
        print(
            f"quad_min: epsilon={eps_min!r} predicted={fit.predict(eps_min)!r} measured={true_at_min!r}"
        )
    if not args.quiet:
        print(f"wrote {os.path.join(cfg.out_dir, 'quadcheck.csv')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadtune", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="single seed override")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")

    p_train = sub.add_parser("train", help="run every configured seed and write traces + summary")
    add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="sweep the tuner seed learning rate")
    add_common(p_sweep)
    p_sweep.add_argument("--field", default="seed_lr")
    p_sweep.add_argument("--values", required=True, help="comma-separated positive values")
    p_sweep.set_defaults(func=cmd_sweep)

    p_range = sub.add_parser("range-test", help="exponential lr ramp to locate the explosion point")
    add_common(p_range)
    p_range.add_argument("--lr-min", type=float, required=True, dest="lr_min")
    p_range.add_argument("--lr-max", type=float, required=True, dest="lr_max")
    p_range.add_argument("--steps", type=int, default=100)
    p_range.set_defaults(func=cmd_range_test)

    p_scan = sub.add_parser("sb-scan", help="loss stddev as a function of superbatch size")
    add_common(p_scan)
    p_scan.add_argument("--sizes", required=True, help="comma-separated superbatch sizes")
    p_scan.add_argument("--trials", type=int, default=10)
    p_scan.set_defaults(func=cmd_sb_scan)

    p_quad = sub.add_parser("quadcheck", help="emit fit vs held-out probe losses at a step")
    add_common(p_quad)
    p_quad.add_argument("--at-step", type=int, required=True, dest="at_step")
    p_quad.set_defaults(func=cmd_quadcheck)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except QuadtuneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
