"""Streaming lock / check / refit loop.

A tracker collects a window of samples, identifies a model for it, and from
then on only compares the model's prediction with each new observation.
After ``consecutive_k`` misses in a row the model is dropped and a new
window is collected, starting at the first sample of the miss run.

:func:`observe` is a pure transition function on an immutable
:class:`TrackerState`; :class:`Tracker` wraps it for sequential use.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .basis import Library, expand_terms
from .errors import OrderingError, TrackerStateError
from .fit import FitConfig, ModelDescriptor, fit_trajectory
from .scenario import Trajectory

__all__ = [
    "Phase",
    "TrackEvent",
    "TrackerConfig",
    "TrackerState",
    "Tracker",
    "observe",
    "predict_at",
    "events_to_jsonl",
    "events_from_jsonl",
]


class Phase(enum.Enum):
    COLLECTING = "Collecting"
    LOCKED = "Locked"
    REFITTING = "Refitting"


LOCK_ACQUIRED = "LockAcquired"
CHECKED = "Checked"
MISMATCH_DETECTED = "MismatchDetected"
REFIT_TRIGGERED = "RefitTriggered"
EVENT_KINDS = (LOCK_ACQUIRED, CHECKED, MISMATCH_DETECTED, REFIT_TRIGGERED)


@dataclass(frozen=True)
class TrackEvent:
    kind: str
    t: float
    detail: Mapping = field(default_factory=dict)

    @property
    def residual(self):
        return self.detail.get("residual")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "t": float(self.t)}
        out.update(self.detail)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrackEvent":
        data = dict(data)
        kind = data.pop("kind")
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        return cls(kind, float(data.pop("t")), data)


def events_to_jsonl(events: Iterable[TrackEvent]) -> str:
    return "".join(json.dumps(e.to_dict()) + "\n" for e in events)


def events_from_jsonl(text: str) -> list[TrackEvent]:
    return [TrackEvent.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


def _min_samples(library: Library, config: FitConfig) -> int:
    widths = sorted((len(expand_terms([t])) for t in library.terms), reverse=True)
    return max(4, 2 * sum(widths[: config.max_terms]))


@dataclass(frozen=True)
class TrackerConfig:
    """Settings for the tracking loop.

    ``check_eps`` is relative to each channel's data scale from the locked
    fit.  ``mass`` only feeds force reports; identification ignores it.
    """

    window: int = 100
    check_eps: float = 1e-4
    consecutive_k: int = 3
    fit_config: FitConfig = field(default_factory=FitConfig)
    mass: float = 1.0
    library: Library = field(default_factory=Library.full)

    def __post_init__(self):
        if self.window < _min_samples(self.library, self.fit_config):
            raise ValueError("window is smaller than the fit needs")
        if self.consecutive_k < 1:
            raise ValueError("consecutive_k must be >= 1")
        if not self.check_eps > 0:
            raise ValueError("check_eps must be > 0")
        if not self.mass > 0:
            raise ValueError("mass must be > 0")


Sample = tuple  # (t, values tuple)


@dataclass(frozen=True)
class TrackerState:
    channel_names: tuple[str, ...]
    phase: Phase = Phase.COLLECTING
    buffer: tuple[Sample, ...] = ()
    locked_model: ModelDescriptor | None = None
    mismatch_count: int = 0
    pending: tuple[Sample, ...] = ()
    event_log: tuple[TrackEvent, ...] = ()
    last_t: float | None = None
    fits_run: int = 0
    samples_fitted: int = 0

    @classmethod
    def initial(cls, channel_names: Sequence[str]) -> "TrackerState":
        return cls(tuple(channel_names))


def _try_lock(state: TrackerState, config: TrackerConfig):
    if len(state.buffer) < config.window:
        return state, []
    times = [s[0] for s in state.buffer]
    values = [s[1] for s in state.buffer]
    traj = Trajectory(state.channel_names, times, values)
    model = fit_trajectory(traj, config.library, config.fit_config)
    state = replace(
        state, fits_run=state.fits_run + 1, samples_fitted=state.samples_fitted + len(state.buffer)
    )
    t = times[-1]
    if model.accepted:
        detail = {
            "support": {
                name: [str(term) for term in r.model.terms] for name, r in model.channels.items()
            },
            "rmse": max(r.model.rmse for r in model.channels.values()),
        }
        event = TrackEvent(LOCK_ACQUIRED, t, detail)
        return replace(state, phase=Phase.LOCKED, buffer=(), locked_model=model), [event]
    # failed lock: slide the window and keep collecting
    return replace(state, buffer=state.buffer[1:]), []


def observe(state: TrackerState, sample, config: TrackerConfig):
    """Advance the tracker by one sample ``(t, values)``.

    Returns the new state and the events emitted by this sample.  The new
    state's ``event_log`` already includes them.

    Raises
    ------
    OrderingError
        If ``t`` does not exceed every previously observed time.
    """
    t, values = sample
    t = float(t)
    values = tuple(float(v) for v in np.atleast_1d(values))
    if len(values) != len(state.channel_names):
        raise ValueError("sample does not match the tracker's channels")
    if state.last_t is not None and not t > state.last_t:
        raise OrderingError(f"sample time {t} does not follow {state.last_t}")
    state = replace(state, last_t=t)
    events: list[TrackEvent] = []

    if state.phase is Phase.LOCKED:
        model = state.locked_model
        pred = model.predict_values(t)
        err = np.abs(pred - np.asarray(values))
        scales = np.array([r.data_scale for r in model.channels.values()])
        residual = float(err.max())
        if np.all(err <= config.check_eps * scales):
            events.append(TrackEvent(CHECKED, t, {"residual": residual}))
            state = replace(state, mismatch_count=0, pending=())
        else:
            count = state.mismatch_count + 1
            pending = state.pending + ((t, values),)
            if count < config.consecutive_k:
                state = replace(state, mismatch_count=count, pending=pending)
            else:
                events.append(TrackEvent(MISMATCH_DETECTED, t, {"residual": residual}))
                events.append(TrackEvent(REFIT_TRIGGERED, t, {"restart_t": pending[0][0]}))
                state = replace(
                    state,
                    phase=Phase.REFITTING,
                    locked_model=None,
                    mismatch_count=0,
                    pending=(),
                    buffer=pending,
                )
                state, more = _try_lock(state, config)
                events.extend(more)
    else:
        state = replace(state, buffer=state.buffer + ((t, values),))
        state, more = _try_lock(state, config)
        events.extend(more)

    return replace(state, event_log=state.event_log + tuple(events)), events


def predict_at(state: TrackerState, t) -> np.ndarray:
    """Locked-model values at ``t``, one per channel."""
    if state.phase is not Phase.LOCKED:
        raise TrackerStateError(f"tracker is {state.phase.value}, not Locked")
    return state.locked_model.predict_values(float(t))


class Tracker:
    """Mutable convenience wrapper around :func:`observe`."""

    def __init__(self, channel_names: Sequence[str], config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.state = TrackerState.initial(channel_names)

    def observe(self, t, values) -> list[TrackEvent]:
        self.state, events = observe(self.state, (t, values), self.config)
        return events

    def predict(self, t) -> np.ndarray:
        return predict_at(self.state, t)

    def run(self, traj: Trajectory) -> list[TrackEvent]:
        """Feed every sample of ``traj``; returns all events emitted."""
        out = []
        for t, row in zip(traj.times, traj.values):
            out.extend(self.observe(t, row))
        return out

    @property
    def events(self) -> tuple[TrackEvent, ...]:
        return self.state.event_log

    @property
    def phase(self) -> Phase:
        return self.state.phase
