"""
Free fall: fit ten seconds, predict the next ten
=================================================

A 10 mg sphere is dropped from 10 m and observed at 100 Hz.  The first
ten seconds are the fitting window; the fitted model is then asked where
the sphere is at t = 20 s.
"""

import numpy as np

from newtonscheme import evaluate, fit_trajectory, force_of, generate
from newtonscheme.scenario import free_fall_experiment

spec = free_fall_experiment()
traj = generate(spec)
window = traj.window(0.0, 10.0)
print(f"{len(traj)} samples, fitting the first {len(window)}")

# identify the support from the simplest candidates upward
model = fit_trajectory(window)
result = model.channels["x"]
print("accepted:", result.accepted, "after", result.candidates_evaluated, "candidates")
for label, c in zip(result.model.column_labels, result.model.coefficients):
    print(f"  {c:+.12f} * {label}")

# extrapolate past the window and compare with the generator
t_far = np.array([12.0, 15.0, 20.0])
truth = evaluate(spec, t_far).channel("x")
print("prediction error:", np.abs(model.predict(t_far).channel("x") - truth))

# the force follows from the second derivative and the mass
total, _ = force_of(result.model, spec.mass, 0.0)
print(f"force on the sphere: {total:.3e} N")
