"""Run orchestration: wire config pieces together and drive the step loop."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .config import RunConfig
from .datasets import Dataset, make_dataset
from .engine import RngStream, TrainingEngine
from .errors import ConfigError, InvalidArgumentError
from .models import (
    TASK_CLASSIFICATION,
    TASK_REGRESSION,
    LinearRegression,
    LogisticRegression,
    Mlp,
    Model,
    QuadraticBowl,
)
from .optim import Adam, AdamW, Momentum, Optimizer, Sgd
from .schedules import (
    Constant,
    CosineDecay,
    InverseSqrt,
    LinearDecay,
    OneCycle,
    ScheduleSpec,
    StepSchedule,
    Trapezoid,
    lr_at,
    momentum_at,
)
from .stats import summarize
from .tuner import LearningRateTuner, TunerConfig

CSV_COLUMNS = [
    "step",
    "epoch",
    "lr",
    "train_loss",
    "superbatch_loss",
    "test_loss",
    "test_acc",
    "probe_fwd",
    "event",
]


@dataclass
class RunRecord:
    """One per-step log row of a training trace."""

    step: int
    epoch: int
    lr: float
    train_loss: float
    superbatch_loss: Optional[float]
    test_loss: Optional[float]
    test_acc: Optional[float]
    probe_fwd: int
    event: str

    def to_csv_row(self) -> list[str]:
        def fmt(value):
            if value is None:
                return ""
            if isinstance(value, float):
                return repr(value)
            return str(value)

        return [
            str(self.step),
            str(self.epoch),
            fmt(self.lr),
            fmt(self.train_loss),
            fmt(self.superbatch_loss),
            fmt(self.test_loss),
            fmt(self.test_acc),
            str(self.probe_fwd),
            self.event,
        ]


def build_model(spec: dict[str, Any], dataset: Dataset, rng: np.random.Generator) -> Model:
    kind = spec.get("kind")
    if kind == "linreg":
        return LinearRegression(dataset.n_features)
    if kind == "logreg":
        if dataset.num_classes is None:
            raise ConfigError("logreg model requires a classification dataset")
        return LogisticRegression(dataset.n_features, dataset.num_classes)
    if kind == "mlp":
        hidden = [int(h) for h in spec.get("hidden", [32])]
        task = spec.get("task") or dataset.task
        if task == TASK_CLASSIFICATION:
            if dataset.num_classes is None:
                raise ConfigError("classification mlp requires a classification dataset")
            sizes = [dataset.n_features] + hidden + [dataset.num_classes]
        elif task == TASK_REGRESSION:
            sizes = [dataset.n_features] + hidden + [1]
        else:
            raise ConfigError(f"mlp cannot train on task {task!r}")
        return Mlp(sizes, task=task, rng=rng)
    if kind == "bowl":
        matrix = spec.get("matrix", spec.get("diag"))
        if matrix is None:
            raise ConfigError("bowl model requires 'matrix' or 'diag'")
        theta0 = spec.get("theta0")
        return QuadraticBowl(np.asarray(matrix, dtype=np.float64), theta0=theta0)
    raise ConfigError(f"unknown model kind {kind!r}")


def build_optimizer(spec: dict[str, Any]) -> Optimizer:
    kind = spec.get("kind")
    wd = float(spec.get("weight_decay", 0.0))
    if kind == "sgd":
        return Sgd(weight_decay=wd)
    if kind == "momentum":
        return Momentum(mu=float(spec.get("momentum", 0.9)), weight_decay=wd)
    if kind in ("adam", "adamw"):
        cls = Adam if kind == "adam" else AdamW
        return cls(
            beta1=float(spec.get("beta1", 0.9)),
            beta2=float(spec.get("beta2", 0.999)),
            eps_stab=float(spec.get("eps_stab", 1e-8)),
            weight_decay=wd,
        )
    raise ConfigError(f"unknown optimizer kind {kind!r}")


def tuner_config_from_policy(policy: dict[str, Any], total_steps: int, batches_per_epoch: int) -> TunerConfig:
    if "explore_steps" in policy:
        explore = float(policy["explore_steps"])
    elif "explore_epochs" in policy:
        explore = float(policy["explore_epochs"]) * batches_per_epoch
    else:
        explore = float(policy.get("explore_fraction", 0.25))
    return TunerConfig(
        seed_lr=float(policy["seed_lr"]),
        total_steps=total_steps,
        explore_budget=explore,
        recompute_window=int(policy.get("recompute_window", 50)),
        superbatch_size=int(policy.get("superbatch_size", 100)),
        n_probes=int(policy.get("n_probes", 5)),
        epsilon_threshold_r=float(policy.get("epsilon_threshold", 1e-3)),
        saturation_threshold_rel=float(policy.get("saturation_threshold", 100.0)),
        span_fraction=float(policy.get("span_fraction", 0.5)),
        rollback_enabled=bool(policy.get("rollback", True)),
        rollback_factor=float(policy.get("rollback_factor", 0.5)),
    )


def schedule_from_policy(policy: dict[str, Any], batches_per_epoch: int) -> ScheduleSpec:
    variant = policy.get("variant")

    def warmup_steps():
        if "warmup_epochs" in policy:
            return int(round(float(policy["warmup_epochs"]) * batches_per_epoch))
        return int(policy.get("warmup_steps", 0))

    if variant == "constant":
        return Constant(lr=float(policy["lr"]))
    if variant == "step":
        if "boundaries_epochs" in policy:
            boundaries = tuple(int(round(float(b) * batches_per_epoch)) for b in policy["boundaries_epochs"])
        else:
            boundaries = tuple(int(b) for b in policy["boundaries"])
        return StepSchedule(lrs=tuple(float(v) for v in policy["lrs"]), boundaries=boundaries)
    if variant == "cosine":
        return CosineDecay(seed_lr=float(policy["seed_lr"]), warmup_steps=warmup_steps())
    if variant == "linear":
        return LinearDecay(seed_lr=float(policy["seed_lr"]), warmup_steps=warmup_steps())
    if variant == "inverse_sqrt":
        return InverseSqrt(
            peak_lr=float(policy["peak_lr"]),
            warmup_steps=max(1, warmup_steps()),
            floor_lr=float(policy.get("floor_lr", 0.0)),
        )
    if variant == "one_cycle":
        momentum_range = policy.get("momentum_range")
        return OneCycle(
            max_lr=float(policy["max_lr"]),
            div_factor=float(policy.get("div_factor", 10.0)),
            final_div=float(policy.get("final_div", 10.0)),
            up_frac=float(policy.get("up_frac", 0.45)),
            down_frac=float(policy.get("down_frac", 0.45)),
            final_frac=float(policy.get("final_frac", 0.10)),
            momentum_range=tuple(momentum_range) if momentum_range else None,
        )
    if variant == "trapezoid":
        return Trapezoid(
            max_lr=float(policy["max_lr"]),
            warm_frac=float(policy.get("warm_frac", 0.10)),
            flat_frac=float(policy.get("flat_frac", 0.80)),
            decay_frac=float(policy.get("decay_frac", 0.10)),
        )
    raise ConfigError(f"unknown schedule variant {variant!r}")


class TrainingRun:
    """One seeded training run: builds all components and steps to completion."""

    def __init__(self, cfg: RunConfig, seed: int):
        self.cfg = cfg
        self.seed = int(seed)
        self.dataset = make_dataset(cfg.dataset)
        minibatch_size = int(cfg.optimizer.get("minibatch_size", 32))
        init_stream = RngStream(self.seed, "init")
        self.model = build_model(cfg.model, self.dataset, init_stream.generator)
        self.engine = TrainingEngine(self.model, self.dataset, minibatch_size, self.seed)
        self.optimizer = build_optimizer(cfg.optimizer)
        self.total_steps = cfg.epochs * self.engine.batches_per_epoch
        if self.total_steps < 1:
            raise InvalidArgumentError("run has no steps; dataset smaller than one minibatch?")
        self.eval_every = cfg.eval_every or self.engine.batches_per_epoch

        policy = cfg.lr_policy
        self.tuner: Optional[LearningRateTuner] = None
        self.schedule: Optional[ScheduleSpec] = None
        if policy["kind"] == "tuner":
            tuner_cfg = tuner_config_from_policy(policy, self.total_steps, self.engine.batches_per_epoch)
            self.tuner = LearningRateTuner(tuner_cfg, self.engine, self.optimizer)
        else:
            self.schedule = schedule_from_policy(policy, self.engine.batches_per_epoch)

        self.records: list[RunRecord] = []
        self._step = 0

    def step_once(self) -> RunRecord:
        step = self._step
        x, y = self.engine.batch_for_step(step)
        if self.tuner is not None:
            outcome = self.tuner.run_step(step, x, y)
            lr = outcome.lr
            train_loss = outcome.train_loss
            sb_loss = outcome.superbatch_loss
            event = outcome.event
            probe_fwd = self.tuner.state.counters.probe_forward_passes
        else:
            lr = lr_at(self.schedule, step, self.total_steps)
            mom = momentum_at(self.schedule, step, self.total_steps)
            if mom is not None and isinstance(self.optimizer, Momentum):
                self.optimizer.mu = mom
            train_loss, grads = self.engine.loss_and_gradient(x, y)
            pending = self.optimizer.compute_direction(self.model.params, grads)
            self.engine.commit(self.optimizer, pending, lr)
            sb_loss, event, probe_fwd = None, "", 0

        test_loss = test_acc = None
        if (step + 1) % self.eval_every == 0 or step == self.total_steps - 1:
            test_loss, test_acc = self.engine.test_metrics()

        record = RunRecord(
            step=step,
            epoch=step // self.engine.batches_per_epoch,
            lr=lr,
            train_loss=train_loss,
            superbatch_loss=sb_loss,
            test_loss=test_loss,
            test_acc=test_acc,
            probe_fwd=probe_fwd,
            event=event,
        )
        self.records.append(record)
        self._step += 1
        return record

    @property
    def current_step(self) -> int:
        return self._step

    def advance_to(self, step: int) -> None:
        while self._step < step:
            self.step_once()

    def run(self) -> list[RunRecord]:
        while self._step < self.total_steps:
            self.step_once()
        return self.records

    def summary(self) -> dict[str, Any]:
        """Final metrics for this seed; train loss is averaged over the last epoch."""
        last_epoch = self.records[-1].epoch
        last_epoch_losses = [r.train_loss for r in self.records if r.epoch == last_epoch]
        evals = [r for r in self.records if r.test_loss is not None]
        accs = [r.test_acc for r in evals if r.test_acc is not None]
        out: dict[str, Any] = {
            "seed": self.seed,
            "total_steps": self.total_steps,
            "final_lr": self.records[-1].lr,
            "final_train_loss": float(np.mean(last_epoch_losses)),
            "final_test_loss": evals[-1].test_loss if evals else None,
            "final_test_acc": evals[-1].test_acc if evals else None,
            "best_test_acc": max(accs) if accs else None,
            "engine_forward_passes": self.engine.forward_passes,
            "engine_backward_passes": self.engine.backward_passes,
        }
        if self.tuner is not None:
            out["tuner_counters"] = self.tuner.state.counters.to_dict()
        return out


_AGGREGATE_METRICS = ["final_train_loss", "final_test_loss", "final_test_acc", "best_test_acc", "final_lr"]


def aggregate_summaries(per_seed: list[dict[str, Any]]) -> dict[str, Any]:
    """Mean and population standard deviation of each metric across seeds."""
    aggregate: dict[str, Any] = {}
    for metric in _AGGREGATE_METRICS:
        values = [s[metric] for s in per_seed if s.get(metric) is not None]
        if not values:
            continue
        stats = summarize(values)
        aggregate[metric] = {"mean": stats.mean, "stddev": stats.stddev, "n": stats.n}
    return aggregate


def run_all_seeds(cfg: RunConfig) -> tuple[dict[int, list[RunRecord]], dict[str, Any]]:
    """Run every configured seed; returns traces plus the cross-seed summary."""
    traces: dict[int, list[RunRecord]] = {}
    per_seed: list[dict[str, Any]] = []
    for seed in cfg.seeds:
        run = TrainingRun(cfg, seed)
        traces[seed] = run.run()
        per_seed.append(run.summary())
    summary = {
        "config": cfg.to_dict(),
        "per_seed": per_seed,
        "aggregate": aggregate_summaries(per_seed),
    }
    return traces, summary
