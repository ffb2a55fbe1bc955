"""Closed-form baseline learning-rate schedules and the LR range test."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Optional, Union

from .engine import TrainingEngine
from .errors import InvalidArgumentError, RangeTestError
from .optim import Optimizer

_FRACTION_TOL = 1e-9


@dataclass(frozen=True)
class Constant:
    lr: float


@dataclass(frozen=True)
class StepSchedule:
    """Piecewise-constant lrs; boundaries are the step indices where lr drops."""

    lrs: tuple[float, ...]
    boundaries: tuple[int, ...]

    def __post_init__(self):
        if len(self.boundaries) != len(self.lrs) - 1:
            raise InvalidArgumentError("need exactly len(lrs) - 1 boundaries")
        if any(b2 <= b1 for b1, b2 in zip(self.boundaries, self.boundaries[1:])):
            raise InvalidArgumentError("boundaries must be strictly increasing")


@dataclass(frozen=True)
class CosineDecay:
    seed_lr: float
    warmup_steps: int = 0
    total: Optional[int] = None


@dataclass(frozen=True)
class LinearDecay:
    seed_lr: float
    warmup_steps: int = 0
    total: Optional[int] = None


@dataclass(frozen=True)
class InverseSqrt:
    peak_lr: float
    warmup_steps: int
    floor_lr: float = 0.0

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise InvalidArgumentError("inverse-sqrt decay requires warmup_steps >= 1")


@dataclass(frozen=True)
class OneCycle:
    """Linear ramp max/div -> max -> max/div, then a final linear drop by final_div."""

    max_lr: float
    div_factor: float = 10.0
    final_div: float = 10.0
    up_frac: float = 0.45
    down_frac: float = 0.45
    final_frac: float = 0.10
    momentum_range: Optional[tuple[float, float]] = None  # (max_momentum, min_momentum)

    def __post_init__(self):
        if abs(self.up_frac + self.down_frac + self.final_frac - 1.0) > _FRACTION_TOL:
            raise InvalidArgumentError("one-cycle fractions must sum to 1")


@dataclass(frozen=True)
class Trapezoid:
    """Linear warmup to max, long flat top, linear decay to zero."""

    max_lr: float
    warm_frac: float = 0.10
    flat_frac: float = 0.80
    decay_frac: float = 0.10

    def __post_init__(self):
        if abs(self.warm_frac + self.flat_frac + self.decay_frac - 1.0) > _FRACTION_TOL:
            raise InvalidArgumentError("trapezoid fractions must sum to 1")


ScheduleSpec = Union[Constant, StepSchedule, CosineDecay, LinearDecay, InverseSqrt, OneCycle, Trapezoid]


def _warmup_lr(step: int, warmup_steps: int, peak: float) -> float:
    # First step gets peak/warmup_steps, reaching peak on the last warmup step.
    return peak * (step + 1) / warmup_steps


def lr_at(spec: ScheduleSpec, step: int, total_steps: int) -> float:
    """Closed-form learning rate at a step index in [0, total_steps)."""
    if not 0 <= step < total_steps:
        raise InvalidArgumentError("step out of range")

    if isinstance(spec, Constant):
        return spec.lr

    if isinstance(spec, StepSchedule):
        return spec.lrs[bisect.bisect_right(spec.boundaries, step)]

    if isinstance(spec, (CosineDecay, LinearDecay)):
        total = spec.total if spec.total is not None else total_steps
        w = spec.warmup_steps
        if step < w:
            return _warmup_lr(step, w, spec.seed_lr)
        progress = (step - w) / (total - w)
        if isinstance(spec, CosineDecay):
            return spec.seed_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
        return spec.seed_lr * (1.0 - progress)

    if isinstance(spec, InverseSqrt):
        if step < spec.warmup_steps:
            return _warmup_lr(step, spec.warmup_steps, spec.peak_lr)
        return max(spec.peak_lr * math.sqrt(spec.warmup_steps / step), spec.floor_lr)

    if isinstance(spec, OneCycle):
        p = step / total_steps
        start = spec.max_lr / spec.div_factor
        if p < spec.up_frac:
            return start + (spec.max_lr - start) * (p / spec.up_frac)
        if p < spec.up_frac + spec.down_frac:
            t = (p - spec.up_frac) / spec.down_frac
            return spec.max_lr - (spec.max_lr - start) * t
        t = (p - spec.up_frac - spec.down_frac) / spec.final_frac
        end = start / spec.final_div
        return start - (start - end) * t

    if isinstance(spec, Trapezoid):
        warm_steps = max(1, round(spec.warm_frac * total_steps))
        decay_steps = max(1, round(spec.decay_frac * total_steps))
        if step < warm_steps:
            return _warmup_lr(step, warm_steps, spec.max_lr)
        if step < total_steps - decay_steps:
            return spec.max_lr
        return spec.max_lr * (total_steps - step) / decay_steps

    raise InvalidArgumentError(f"unknown schedule spec {type(spec).__name__}")


def momentum_at(spec: ScheduleSpec, step: int, total_steps: int) -> Optional[float]:
    """Cycled momentum for one-cycle runs: low when lr is high, and vice versa."""
    if not isinstance(spec, OneCycle) or spec.momentum_range is None:
        return None
    max_m, min_m = spec.momentum_range
    p = step / total_steps
    if p < spec.up_frac:
        return max_m - (max_m - min_m) * (p / spec.up_frac)
    if p < spec.up_frac + spec.down_frac:
        t = (p - spec.up_frac) / spec.down_frac
        return min_m + (max_m - min_m) * t
    return max_m


@dataclass
class RangeTestResult:
    curve: list[tuple[float, float]]  # (lr, smoothed loss)
    suggested_max_lr: float
    exploded_at_lr: Optional[float]


def lr_range_test(
    engine: TrainingEngine,
    optimizer: Optimizer,
    lr_min: float,
    lr_max: float,
    steps: int,
    smoothing: float = 0.98,
    explosion_factor: float = 4.0,
    suggestion_div: float = 10.0,
) -> RangeTestResult:
    """Ramp lr exponentially from lr_min to lr_max, stopping once the loss explodes.

    The curve records exponentially smoothed loss per lr; training stops when
    the smoothed loss exceeds explosion_factor times the best smoothed loss
    seen so far. The suggested maximum lr is the lr at the smoothed-loss
    minimum divided by suggestion_div.
    """
    if not 0.0 < lr_min < lr_max:
        raise InvalidArgumentError("need 0 < lr_min < lr_max")
    if steps < 2:
        raise InvalidArgumentError("steps must be >= 2")

    ratio = lr_max / lr_min
    curve: list[tuple[float, float]] = []
    smoothed = None
    best = math.inf
    exploded_at = None

    for i in range(steps):
        lr = lr_min * ratio ** (i / (steps - 1))
        x, y = engine.batch_for_step(i)
        loss, grads = engine.loss_and_gradient(x, y)
        if not math.isfinite(loss):
            if i <= 1:
                raise RangeTestError("loss diverged immediately; use a smaller lr_min")
            exploded_at = lr
            break
        smoothed = loss if smoothed is None else smoothing * smoothed + (1.0 - smoothing) * loss
        curve.append((lr, smoothed))
        if smoothed > explosion_factor * best:
            if i <= 1:
                raise RangeTestError("loss diverged immediately; use a smaller lr_min")
            exploded_at = lr
            break
        best = min(best, smoothed)
        pending = optimizer.compute_direction(engine.model.params, grads)
        engine.commit(optimizer, pending, lr)

    if not curve:
        raise RangeTestError("no finite losses recorded; use a smaller lr_min")
    best_lr = min(curve, key=lambda pair: pair[1])[0]
    return RangeTestResult(curve=curve, suggested_max_lr=best_lr / suggestion_div, exploded_at_lr=exploded_at)
