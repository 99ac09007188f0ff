"""
Curve ball: arc length and heading
==================================

A spinning ball's horizontal path is described by its arc length
``s(t) = L log(t/tau + 1)`` and a heading that turns at a constant rate.
Both channels are identified, and the planar path is rebuilt from the
fitted models.
"""

import math

from newtonscheme import CurveBall, ScenarioSpec, fit_trajectory, generate, planar_path

params = CurveBall(L=20.0, tau=1.0, lam=1.2, R=0.11, omega0=50.0, v0xy=25.0)
print(f"spin parameter {params.spin_parameter:.3f}, turn rate {params.turn_rate:.3f} rad/s")

traj = generate(ScenarioSpec(params, 0.0, 3.0, 100.0))
model = fit_trajectory(traj, channels=("s", "theta"))
s_fit, theta_fit = model.channels["s"].model, model.channels["theta"].model
print("s:", [str(t) for t in s_fit.terms], s_fit.params, s_fit.coefficients)
print("theta:", [str(t) for t in theta_fit.terms], theta_fit.coefficients)

# rebuild x, y at 1 kHz from the fitted speed and heading
fine = generate(ScenarioSpec(params, 0.0, 3.0, 1000.0))
x, y = planar_path(lambda u: s_fit.derivative(u, 1), theta_fit, fine.times)
ox, oy = fine.channel("x")[-1], fine.channel("y")[-1]
print(f"endpoint ({x[-1]:.6f}, {y[-1]:.6f}) vs oracle ({ox:.6f}, {oy:.6f})")
print(f"relative gap {math.hypot(x[-1] - ox, y[-1] - oy) / math.hypot(ox, oy):.2e}")
