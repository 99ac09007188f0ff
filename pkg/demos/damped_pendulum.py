"""
Damped pendulum and the limits of a polynomial library
=======================================================

``x(t) = exp(-0.1 t) cos(2 pi t - pi/6)`` is fit on [0, 10] s twice: once
with the full library and once with polynomial terms only.
"""

import math

import numpy as np

from newtonscheme import DampedPendulum, Library, ScenarioSpec, evaluate, generate, select_model

params = DampedPendulum(a=1.0, gamma=0.1, omega=2 * math.pi, phi=math.pi / 6)
traj = generate(ScenarioSpec(params, 0.0, 10.0, 100.0))
t, x = traj.times, traj.channel("x")

full = select_model(t, x)
m = full.model
print("full library:", [str(term) for term in m.terms])
print(f"  gamma={m.params['gamma']:.12f} omega={m.params['omega']:.12f}")

# the cos/sin pair carries amplitude and phase
for label, (a, phi) in m.amplitude_phase().items():
    print(f"  {a:.12f} * {label} with phi={phi:.12f} (pi/6={math.pi / 6:.12f})")

poly = select_model(t, x, Library.polynomial_only())
print("polynomial library:", [str(term) for term in poly.model.terms],
      f"accepted={poly.accepted} rmse={poly.model.rmse:.3f}")

later = np.linspace(10.0, 20.0, 1001)
truth = evaluate(params, later).channel("x")
for name, r in (("full", full), ("poly", poly)):
    err = r.model(later) - truth
    print(f"{name:>5}: RMSE on [10, 20] = {np.sqrt(np.mean(err**2)):.3e}")
