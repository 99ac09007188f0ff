import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newtonscheme.basis import COS, EXP, BasisTerm, CONST
from newtonscheme.errors import OrderingError, TrackerStateError
from newtonscheme.fit import CandidateModel, FitConfig, FitResult, ModelDescriptor
from newtonscheme.scenario import DampedPendulum, FreeFall, ScenarioSpec, generate, gen_piecewise
from newtonscheme.track import (
    Phase,
    TrackEvent,
    Tracker,
    TrackerConfig,
    TrackerState,
    events_from_jsonl,
    events_to_jsonl,
    observe,
    predict_at,
)


def kinds(events):
    return [e.kind for e in events]


def locked_state(terms, params, coefficients):
    model = CandidateModel(terms, params, coefficients, 0.0, 1.0)
    desc = ModelDescriptor({"x": FitResult(model, 1.0, 1, True, 1e-8)})
    return TrackerState(("x",), Phase.LOCKED, locked_model=desc)


def regime_switch(switch=5.0, total=10.0, v=1.0, accel=-9.8):
    return gen_piecewise(
        [
            (ScenarioSpec(FreeFall(0.0, v, 0.0), 0, switch, 100), switch),
            (ScenarioSpec(FreeFall(0.0, v, accel), 0, total - switch, 100), total - switch),
        ]
    )


@pytest.fixture(scope="module")
def switch_run():
    traj = regime_switch()
    tracker = Tracker(("x",), TrackerConfig(window=100, consecutive_k=3, check_eps=1e-4))
    tracker.run(traj)
    return traj, tracker


# -- observe ---------------------------------------------------------------------


def test_below_window_stays_collecting():
    traj = generate(ScenarioSpec(FreeFall(), 0, 2, 100))
    state, config = TrackerState.initial(("x",)), TrackerConfig(window=100)
    for t, row in zip(traj.times[:99], traj.values[:99]):
        state, events = observe(state, (t, row), config)
        assert events == []
    assert state.phase is Phase.COLLECTING
    assert len(state.buffer) == 99 and state.event_log == ()


def test_self_consistent_stream_only_checks():
    traj = generate(ScenarioSpec(FreeFall(10, 0, -9.8), 0, 3, 100))
    tracker = Tracker(("x",))
    tracker.run(traj.slice(0, 100))
    assert tracker.phase is Phase.LOCKED
    # feed the locked model's own predictions
    events = []
    for t in 1.0 + np.arange(200) / 100:
        events += tracker.observe(t, tracker.predict(t))
    assert set(kinds(events)) == {"Checked"}


def test_regime_switch_detection(switch_run):
    traj, tracker = switch_run
    events = tracker.events
    assert kinds(events).count("RefitTriggered") == 1
    refit = next(e for e in events if e.kind == "RefitTriggered")
    mismatch = next(e for e in events if e.kind == "MismatchDetected")
    assert mismatch.t == refit.t

    # first sample whose error against the first lock's model passes the threshold
    first_lock = next(e for e in events if e.kind == "LockAcquired")
    v = 1.0
    later = traj.times > first_lock.t
    err = np.abs(v * traj.times[later] - traj.channel("x")[later])
    first_bad = traj.times[later][np.argmax(err > 1e-4 * max(1.0, first_lock.t))]
    step = 1 / 100
    assert refit.t - first_bad <= 2 * step + 1e-9
    assert refit.detail["restart_t"] == pytest.approx(first_bad)

    model = tracker.state.locked_model.channels["x"].model
    assert tracker.phase is Phase.LOCKED
    quad = model.coefficients[[str(c) for c in model.columns].index("t^2")]
    assert 2 * quad == pytest.approx(-9.8, rel=1e-6)


def test_events_time_ordered(switch_run):
    times = [e.t for e in switch_run[1].events]
    assert times == sorted(times)


def test_fractional_data_use():
    traj = generate(ScenarioSpec(FreeFall(10, 0, -9.8), 0, 10, 100))
    tracker = Tracker(("x",), TrackerConfig(window=100))
    tracker.run(traj)
    state = tracker.state
    assert state.fits_run == 1
    assert state.samples_fitted == 100
    lock = tracker.events[0]
    assert lock.kind == "LockAcquired" and lock.t == traj.times[99]
    assert kinds(tracker.events).count("Checked") == 900


def test_failed_lock_slides_window():
    # a kink at the 50th sample spoils every window that straddles it
    t = np.arange(300) / 100
    x = np.where(t < 0.5, 0.0, (t - 0.5) ** 3)
    tracker = Tracker(("x",), TrackerConfig(window=100, fit_config=FitConfig(max_terms=1)))
    for ti, xi in zip(t[:150], x[:150]):
        tracker.observe(ti, [xi])
    assert tracker.phase is Phase.COLLECTING
    assert len(tracker.state.buffer) == 99
    assert tracker.state.buffer[0][0] == pytest.approx(t[51])


def test_ordering_error():
    tracker = Tracker(("x",))
    tracker.observe(1.0, [0.0])
    with pytest.raises(OrderingError):
        tracker.observe(1.0, [0.0])
    with pytest.raises(OrderingError):
        tracker.observe(0.5, [0.0])


def test_wrong_channel_count():
    with pytest.raises(ValueError):
        Tracker(("x",)).observe(0.0, [1.0, 2.0])


def test_config_validation():
    with pytest.raises(ValueError):
        TrackerConfig(window=3)
    with pytest.raises(ValueError):
        TrackerConfig(consecutive_k=0)
    with pytest.raises(ValueError):
        TrackerConfig(check_eps=0)
    with pytest.raises(ValueError):
        TrackerConfig(mass=-1)


# -- predict_at ------------------------------------------------------------------


def test_predict_free_fall_far_out():
    traj = generate(ScenarioSpec(FreeFall(10, 0, -9.8), 0, 1, 100))
    tracker = Tracker(("x",))
    tracker.run(traj)
    assert tracker.predict(20.0)[0] == pytest.approx(-1950.0, rel=1e-12)


def test_predict_constant():
    state = locked_state((BasisTerm.of(CONST),), {}, [3.0])
    assert predict_at(state, 123.0)[0] == 3.0


def test_predict_damped_cosine():
    state = locked_state((BasisTerm.of(EXP, COS),), {"gamma": 0.1, "omega": 2 * math.pi}, [1.0])
    assert predict_at(state, 10.0)[0] == pytest.approx(math.exp(-1), rel=1e-12)


def test_predict_requires_lock():
    with pytest.raises(TrackerStateError):
        predict_at(TrackerState.initial(("x",)), 1.0)


def test_predict_is_pure():
    state = locked_state((BasisTerm.of(CONST),), {}, [3.0])
    predict_at(state, 1.0)
    assert state.event_log == () and state.last_t is None


# -- properties ------------------------------------------------------------------


def test_determinism(switch_run):
    traj, first = switch_run
    again = Tracker(("x",), first.config)
    again.run(traj)
    assert events_to_jsonl(again.events) == events_to_jsonl(first.events)
    assert again.state.locked_model.to_json() == first.state.locked_model.to_json()
    assert again.state.buffer == first.state.buffer
    assert again.state.fits_run == first.state.fits_run


@settings(max_examples=15)
@given(
    x0=st.floats(-100, 100),
    v0=st.floats(-20, 20),
    accel=st.floats(-20, 20),
)
def test_no_false_refits_free_fall(x0, v0, accel):
    traj = generate(ScenarioSpec(FreeFall(x0, v0, accel), 0, 6, 100))
    tracker = Tracker(("x",))
    tracker.run(traj)
    assert "RefitTriggered" not in kinds(tracker.events)
    assert tracker.phase is Phase.LOCKED


@pytest.mark.parametrize("params", [DampedPendulum(), DampedPendulum(2.0, 0.3, 3.0, 1.0)])
def test_no_false_refits_pendulum(params):
    traj = generate(ScenarioSpec(params, 0, 6, 100))
    tracker = Tracker(("x",), TrackerConfig(window=200))
    tracker.run(traj)
    assert "RefitTriggered" not in kinds(tracker.events)
    assert kinds(tracker.events).count("LockAcquired") == 1


@given(st.lists(st.tuples(st.sampled_from(["Checked", "MismatchDetected"]), st.floats(0, 100), st.floats(0, 1))))
def test_event_log_round_trip(items):
    events = [TrackEvent(k, t, {"residual": r}) for k, t, r in items]
    assert events_from_jsonl(events_to_jsonl(events)) == events


def test_unknown_event_kind():
    with pytest.raises(ValueError):
        events_from_jsonl('{"kind": "Bogus", "t": 0}\n')
