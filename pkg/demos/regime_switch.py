"""
Tracking through a regime switch
================================

A body moves at constant velocity for five seconds and is then released
into free fall.  The tracker locks onto the first regime, checks each new
sample against the prediction, and refits once the checks keep failing.
"""

from collections import Counter

from newtonscheme import FreeFall, ScenarioSpec, Tracker, TrackerConfig, gen_piecewise

segments = [
    (ScenarioSpec(FreeFall(0.0, 1.0, 0.0), 0.0, 5.0, 100.0), 5.0),
    (ScenarioSpec(FreeFall(0.0, 1.0, -9.8), 0.0, 5.0, 100.0), 5.0),
]
traj = gen_piecewise(segments)
print("switch at", traj.switch_times)

tracker = Tracker(("x",), TrackerConfig(window=100, consecutive_k=3, check_eps=1e-4))
tracker.run(traj)

for event in tracker.events:
    if event.kind != "Checked":
        print(f"{event.t:6.2f} s  {event.kind:<17} {dict(event.detail)}")
print(Counter(e.kind for e in tracker.events))

# the second lock has found the acceleration
model = tracker.state.locked_model.channels["x"].model
for label, c in zip(model.column_labels, model.coefficients):
    print(f"  {c:+.12f} * {label}")
print(f"samples used for fitting: {tracker.state.samples_fitted} of {len(traj)}")
