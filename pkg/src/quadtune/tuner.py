"""Learning-rate controller: probing, phase filtering, saturation gating, rollback.

Every ``recompute_window`` steps the controller probes the loss at a few
perturbations of the current learning rate (same superbatch for every probe),
fits a quadratic, and applies the bounded minimizing perturbation if the
current phase admits it: the explore phase only accepts increases, the
exploit phase only decreases, and decreases are additionally gated on the
loss-drop rate having saturated. Accepted changes are snapshotted and rolled
back if the drop rate degrades over the following window.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

from .engine import Superbatch, TrainingEngine
from .errors import InvalidArgumentError
from .optim import Optimizer, Snapshot, restore_snapshot, take_snapshot
from .quadprobe import (
    EpsilonProposal,
    LossSample,
    ProposalKind,
    QuadFit,
    epsilon_bound,
    fit_quadratic,
    probe_points,
    propose_epsilon,
)

logger = logging.getLogger(__name__)

# Floor for drop rates used as denominators / frozen absolute thresholds.
_TINY_RATE = 1e-12

EVENT_NONE = ""
EVENT_ACCEPT = "recompute_accept"
EVENT_REJECT_PHASE = "recompute_reject_phase"
EVENT_REJECT_SATURATION = "recompute_reject_saturation"
EVENT_REJECT_OTHER = "recompute_reject_other"
EVENT_ROLLBACK = "rollback"
EVENT_PHASE_SWITCH = "phase_switch"

# When several events coincide on one step, the trace keeps the first match.
EVENT_PRIORITY = [
    EVENT_ROLLBACK,
    EVENT_ACCEPT,
    EVENT_REJECT_PHASE,
    EVENT_REJECT_SATURATION,
    EVENT_REJECT_OTHER,
    EVENT_PHASE_SWITCH,
]


class Phase(enum.Enum):
    EXPLORE = "explore"
    EXPLOIT = "exploit"


class SaturationMode(enum.Enum):
    RELATIVE = "relative"
    ABSOLUTE = "absolute"


@dataclass(frozen=True)
class SaturationState:
    """Relative mode compares against the rate when the current lr began;
    absolute mode compares against a threshold frozen at the first crossing."""

    mode: SaturationMode = SaturationMode.RELATIVE
    reference_rate: Optional[float] = None


@dataclass
class TunerConfig:
    """All controller hyperparameters.

    ``explore_budget`` < 1 is a fraction of total steps; >= 1 is an absolute
    step count. ``n_probes`` must be odd so the zero-perturbation probe sits
    on the grid and one recompute costs exactly superbatch_size * n_probes
    forward passes.
    """

    seed_lr: float
    total_steps: int
    explore_budget: float = 0.25
    recompute_window: int = 50
    superbatch_size: int = 100
    n_probes: int = 5
    epsilon_threshold_r: float = 1e-3
    saturation_threshold_rel: float = 100.0
    span_fraction: float = 0.5
    rollback_enabled: bool = True
    rollback_factor: float = 0.5

    def __post_init__(self):
        if self.seed_lr <= 0.0:
            raise InvalidArgumentError("seed_lr must be positive")
        if self.total_steps < 1:
            raise InvalidArgumentError("total_steps must be >= 1")
        if self.explore_budget < 0.0:
            raise InvalidArgumentError("explore_budget must be nonnegative")
        if self.recompute_window < 1:
            raise InvalidArgumentError("recompute_window must be >= 1")
        if self.superbatch_size < 1:
            raise InvalidArgumentError("superbatch_size must be >= 1")
        if self.n_probes < 3:
            raise InvalidArgumentError("n_probes must be >= 3")
        if self.n_probes % 2 == 0:
            raise InvalidArgumentError("n_probes must be odd")
        if self.epsilon_threshold_r <= 0.0:
            raise InvalidArgumentError("epsilon_threshold_r must be positive")
        if self.saturation_threshold_rel <= 1.0:
            raise InvalidArgumentError("saturation_threshold_rel must exceed 1")
        if not 0.0 < self.span_fraction <= 1.0:
            raise InvalidArgumentError("span_fraction must be in (0, 1]")
        if self.explore_steps() >= self.total_steps:
            raise InvalidArgumentError("explore budget must leave room for the exploit phase")

    def explore_steps(self) -> int:
        if self.explore_budget < 1.0:
            return int(self.explore_budget * self.total_steps)
        return int(self.explore_budget)


@dataclass
class Counters:
    recomputes: int = 0
    accepts: int = 0
    rejects_phase: int = 0
    rejects_saturation: int = 0
    rejects_other: int = 0
    rollbacks: int = 0
    probe_forward_passes: int = 0
    window_forward_passes: int = 0

    def to_dict(self) -> dict[str, int]:
        return dict(self.__dict__)


@dataclass
class TunerState:
    phase: Phase
    current_lr: float
    saturation: SaturationState = field(default_factory=SaturationState)
    last_change_snapshot: Optional[Snapshot] = None
    drop_rate_before_change: Optional[float] = None
    counters: Counters = field(default_factory=Counters)


@dataclass
class RecomputeRecord:
    """Debug/inspection record for one probe round."""

    step: int
    superbatch: Superbatch
    eta: float
    bound: float
    samples: list[LossSample]
    fit: Optional[QuadFit]
    proposal: Optional[EpsilonProposal]
    filtered: Optional[EpsilonProposal]
    applied_epsilon: Optional[float]


@dataclass
class StepOutcome:
    events: list[str]
    lr: float
    train_loss: float
    superbatch_loss: Optional[float]

    @property
    def event(self) -> str:
        for tag in EVENT_PRIORITY:
            if tag in self.events:
                return tag
        return EVENT_NONE


def phase_at(step: int, cfg: TunerConfig) -> Phase:
    if not 0 <= step < cfg.total_steps:
        raise InvalidArgumentError("step out of range")
    return Phase.EXPLORE if step < cfg.explore_steps() else Phase.EXPLOIT


def phase_filter(phase: Phase, proposal: EpsilonProposal) -> EpsilonProposal:
    """Reject direction-inconsistent proposals; zero perturbations always pass."""
    if not proposal.is_applicable:
        return proposal
    eps = proposal.epsilon
    if phase is Phase.EXPLORE and eps < 0.0:
        return EpsilonProposal(ProposalKind.REJECT_PHASE_FILTER)
    if phase is Phase.EXPLOIT and eps > 0.0:
        return EpsilonProposal(ProposalKind.REJECT_PHASE_FILTER)
    return proposal


def drop_rate(loss_start: float, loss_end: float, steps: int) -> float:
    """Loss drop per step over a window; negative when the loss rose."""
    if steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    return (loss_start - loss_end) / steps


def saturation_check(
    state: SaturationState, current_rate: float, cfg: TunerConfig
) -> tuple[bool, SaturationState]:
    """Has the current lr stopped making progress?

    Relative mode: saturated when the rate has degraded by the configured
    factor since this lr began (or turned nonpositive); the first crossing
    freezes the current rate as an absolute threshold for the rest of the
    run. Absolute mode: saturated when at or below the frozen threshold.
    """
    if state.mode is SaturationMode.RELATIVE:
        if state.reference_rate is None:
            raise InvalidArgumentError("relative saturation state has no reference rate")
        degraded = state.reference_rate / max(current_rate, _TINY_RATE) >= cfg.saturation_threshold_rel
        saturated = degraded or current_rate <= 0.0
        if saturated:
            return True, SaturationState(SaturationMode.ABSOLUTE, max(current_rate, _TINY_RATE))
        return False, state
    return current_rate <= state.reference_rate, state


@dataclass
class _Window:
    superbatch: Superbatch
    start_loss: float
    start_step: int


class LearningRateTuner:
    """Drives training steps for one run, adjusting the learning rate in place."""

    def __init__(self, cfg: TunerConfig, engine: TrainingEngine, optimizer: Optimizer):
        if cfg.superbatch_size > engine.batches_per_epoch:
            raise InvalidArgumentError(
                "superbatch_size exceeds the number of minibatches per epoch"
            )
        self.cfg = cfg
        self.engine = engine
        self.optimizer = optimizer
        self.state = TunerState(phase=phase_at(0, cfg), current_lr=cfg.seed_lr)
        self.recompute_log: list[RecomputeRecord] = []
        self._window: Optional[_Window] = None
        self._pending_rollback = False
        self._last_rate: Optional[float] = None

    # -- window bookkeeping ----------------------------------------------------

    def _window_superbatch_loss(self, sb: Superbatch) -> float:
        loss = self.engine.superbatch_loss(sb)
        self.state.counters.window_forward_passes += sb.size_in_minibatches
        return loss

    def _open_window(self, step: int) -> float:
        sb = self.engine.draw_superbatch(self.cfg.superbatch_size)
        start_loss = self._window_superbatch_loss(sb)
        self._window = _Window(superbatch=sb, start_loss=start_loss, start_step=step)
        return start_loss

    def _close_window(self, step: int) -> float:
        end_loss = self._window_superbatch_loss(self._window.superbatch)
        return drop_rate(self._window.start_loss, end_loss, step - self._window.start_step)

    # -- rollback ----------------------------------------------------------------

    def maybe_rollback(self, rate_after: float) -> bool:
        """Revert the last accepted lr change if it degraded the drop rate."""
        st = self.state
        if st.last_change_snapshot is None or not self.cfg.rollback_enabled:
            return False
        if st.drop_rate_before_change is None:
            return False
        if rate_after >= self.cfg.rollback_factor * st.drop_rate_before_change:
            return False
        snap = st.last_change_snapshot
        restore_snapshot(snap, self.engine.model.params, self.optimizer)
        self.engine.restore_data_state(snap.rng_cursor)
        st.current_lr = snap.lr
        st.last_change_snapshot = None
        st.drop_rate_before_change = None
        st.counters.rollbacks += 1
        # Remeasure the reference rate at the restored lr before gating again.
        if st.saturation.mode is SaturationMode.RELATIVE:
            st.saturation = replace(st.saturation, reference_rate=None)
        return True

    # -- the probe round -----------------------------------------------------------

    def recompute(self, step: int, direction, rate_before: Optional[float]) -> str:
        """One probe round at the current lr; returns the resulting event tag."""
        cfg, st = self.cfg, self.state
        sb = self.engine.draw_superbatch(cfg.superbatch_size)
        eta = st.current_lr

        loss_at_zero = self.engine.perturbed_loss(direction, eta, sb)
        st.counters.probe_forward_passes += sb.size_in_minibatches
        if not math.isfinite(loss_at_zero):
            st.counters.rejects_other += 1
            logger.warning("step %d: probe at current lr is non-finite; keeping lr", step)
            self._log_recompute(step, sb, eta, 0.0, [], None, None, None)
            return EVENT_REJECT_OTHER

        bound = epsilon_bound(cfg.epsilon_threshold_r, max(loss_at_zero, 0.0))
        if bound <= 0.0:
            st.counters.rejects_other += 1
            self._log_recompute(step, sb, eta, bound, [], None, None, None)
            return EVENT_REJECT_OTHER

        samples = []
        for eps in probe_points(eta, bound, cfg.n_probes, cfg.span_fraction):
            if eps == 0.0:
                loss = loss_at_zero
            else:
                loss = self.engine.perturbed_loss(direction, eta + eps, sb)
                st.counters.probe_forward_passes += sb.size_in_minibatches
            if math.isfinite(loss):
                samples.append(LossSample(epsilon=eps, loss=loss))
        st.counters.recomputes += 1

        if len({s.epsilon for s in samples}) < 3:
            st.counters.rejects_other += 1
            logger.warning("step %d: too few finite probes for a fit; keeping lr", step)
            no_minimum = EpsilonProposal(ProposalKind.REJECT_NO_MINIMUM)
            self._log_recompute(step, sb, eta, bound, samples, None, no_minimum, no_minimum)
            return EVENT_REJECT_OTHER

        fit = fit_quadratic(samples)
        proposal = propose_epsilon(fit, bound)
        filtered = phase_filter(st.phase, proposal)

        if not filtered.is_applicable:
            st.counters.rejects_phase += 1
            self._log_recompute(step, sb, eta, bound, samples, fit, proposal, filtered)
            return EVENT_REJECT_PHASE

        eps = filtered.epsilon
        if eta + eps <= 0.0:
            st.counters.rejects_other += 1
            logger.debug("step %d: proposal would drive lr nonpositive; rejected", step)
            self._log_recompute(step, sb, eta, bound, samples, fit, proposal, filtered)
            return EVENT_REJECT_OTHER

        st.last_change_snapshot = take_snapshot(
            self.engine.model.params,
            self.optimizer,
            lr=eta,
            step_index=step,
            rng_cursor=self.engine.data_state(),
        )
        st.drop_rate_before_change = rate_before
        st.current_lr = eta + eps
        if st.saturation.mode is SaturationMode.RELATIVE:
            st.saturation = replace(st.saturation, reference_rate=None)
        self._pending_rollback = self.cfg.rollback_enabled
        st.counters.accepts += 1
        self._log_recompute(step, sb, eta, bound, samples, fit, proposal, filtered, applied=eps)
        return EVENT_ACCEPT

    def _log_recompute(self, step, sb, eta, bound, samples, fit, proposal, filtered, applied=None):
        self.recompute_log.append(
            RecomputeRecord(
                step=step,
                superbatch=sb,
                eta=eta,
                bound=bound,
                samples=list(samples),
                fit=fit,
                proposal=proposal,
                filtered=filtered,
                applied_epsilon=applied,
            )
        )

    # -- one training step ------------------------------------------------------------

    def run_step(self, step: int, x, y) -> StepOutcome:
        """Advance training by one committed step, recomputing lr at window boundaries."""
        cfg, st = self.cfg, self.state
        events: list[str] = []
        boundary = step % cfg.recompute_window == 0
        rolled_back = False

        if boundary and self._window is not None:
            rate = self._close_window(step)
            if self._pending_rollback:
                self._pending_rollback = False
                if self.maybe_rollback(rate):
                    events.append(EVENT_ROLLBACK)
                    rolled_back = True
                else:
                    # The change survived its one-shot review.
                    st.last_change_snapshot = None
                    st.drop_rate_before_change = None
            if not rolled_back:
                self._last_rate = rate
                if st.saturation.reference_rate is None:
                    st.saturation = replace(st.saturation, reference_rate=rate)

        phase = phase_at(step, cfg)
        if phase is not st.phase:
            st.phase = phase
            events.append(EVENT_PHASE_SWITCH)

        train_loss, grads = self.engine.loss_and_gradient(x, y)
        pending = self.optimizer.compute_direction(self.engine.model.params, grads)

        if boundary and self._window is not None and not rolled_back:
            eligible = True
            if st.phase is Phase.EXPLOIT:
                saturated, next_state = saturation_check(st.saturation, self._last_rate, cfg)
                st.saturation = next_state
                if not saturated:
                    eligible = False
                    st.counters.rejects_saturation += 1
                    events.append(EVENT_REJECT_SATURATION)
            if eligible:
                events.append(self.recompute(step, pending.direction, self._last_rate))

        window_loss = None
        if boundary or self._window is None:
            window_loss = self._open_window(step)

        self.engine.commit(self.optimizer, pending, st.current_lr)
        return StepOutcome(
            events=events,
            lr=st.current_lr,
            train_loss=train_loss,
            superbatch_loss=window_loss,
        )
