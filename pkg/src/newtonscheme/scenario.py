"""Closed-form trajectory generators.

Every generator evaluates an analytic motion law at the sample times, so the
outputs double as exact oracles for fitting and tracking tests.

Sampling convention: sample ``k`` sits at ``t_start + k / sample_rate`` and
samples run while ``t < t_end``; a 20 s scenario at 100 Hz has 2000 samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, Union

import numpy as np

__all__ = [
    "STANDARD_GRAVITY",
    "FreeFall",
    "DampedPendulum",
    "CurveBall",
    "ScenarioSpec",
    "Trajectory",
    "NoiseSpec",
    "sample_times",
    "evaluate",
    "generate",
    "gen_free_fall",
    "gen_damped_pendulum",
    "gen_curve_ball",
    "gen_piecewise",
    "evaluate_piecewise",
    "add_noise",
    "planar_path",
    "lambda_from_coefficients",
    "free_fall_experiment",
]

STANDARD_GRAVITY = 9.80665


@dataclass(frozen=True)
class FreeFall:
    """``x(t) = x0 + v0 t + accel t^2 / 2``."""

    x0: float = 10.0
    v0: float = 0.0
    accel: float = -9.8

    kind = "free_fall"
    channels = ("x",)

    def validate(self):
        for name in ("x0", "v0", "accel"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class DampedPendulum:
    """``x(t) = a exp(-gamma t) cos(omega t - phi)``."""

    a: float = 1.0
    gamma: float = 0.1
    omega: float = 2.0 * math.pi
    phi: float = 0.0

    kind = "damped_pendulum"
    channels = ("x",)

    def validate(self):
        if not all(math.isfinite(v) for v in (self.a, self.gamma, self.omega, self.phi)):
            raise ValueError("pendulum parameters must be finite")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.omega <= 0:
            raise ValueError("omega must be > 0")


@dataclass(frozen=True)
class CurveBall:
    """Spinning-ball spiral in the horizontal plane.

    Arc length ``s(t) = L log(t/tau + 1)`` and heading
    ``theta(t) = theta0 + lam * S_spin / tau * t`` with
    ``S_spin = R * omega0 / v0xy``.  With ``with_gravity`` a vertical
    channel ``z(t) = z0 - g t^2 / 2`` is added.
    """

    theta0: float = 0.0
    lam: float = 1.0
    R: float = 0.11
    omega0: float = 50.0
    v0xy: float = 25.0
    tau: float = 1.0
    L: float = 20.0
    with_gravity: bool = False
    z0: float = 0.0
    g: float = STANDARD_GRAVITY
    x0: float = 0.0
    y0: float = 0.0

    kind = "curve_ball"

    @property
    def channels(self):
        return ("s", "theta", "x", "y", "z") if self.with_gravity else ("s", "theta", "x", "y")

    @property
    def spin_parameter(self) -> float:
        return self.R * self.omega0 / self.v0xy

    @property
    def turn_rate(self) -> float:
        return self.lam * self.spin_parameter / self.tau

    def validate(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.L <= 0:
            raise ValueError("L must be > 0")
        if self.v0xy <= 0:
            raise ValueError("v0xy must be > 0")
        if self.g < 0:
            raise ValueError("g must be >= 0")


Params = Union[FreeFall, DampedPendulum, CurveBall]
PARAM_TYPES = {cls.kind: cls for cls in (FreeFall, DampedPendulum, CurveBall)}


def lambda_from_coefficients(c_n: float, c_d: float) -> float:
    """Spiral coefficient from the normal and drag coefficients, ``4 C_n / C_D``."""
    if c_d <= 0:
        raise ValueError("drag coefficient must be > 0")
    return 4.0 * c_n / c_d


@dataclass(frozen=True)
class ScenarioSpec:
    params: Params
    t_start: float = 0.0
    t_end: float = 10.0
    sample_rate: float = 100.0
    mass: float = 1.0

    def __post_init__(self):
        if not isinstance(self.params, tuple(PARAM_TYPES.values())):
            raise ValueError(f"unsupported scenario parameters {self.params!r}")
        if not (math.isfinite(self.t_start) and math.isfinite(self.t_end)):
            raise ValueError("time bounds must be finite")
        if self.t_end <= self.t_start:
            raise ValueError("t_end must exceed t_start")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be > 0")
        if not self.mass > 0:
            raise ValueError("mass must be > 0")
        if isinstance(self.params, CurveBall) and self.t_start < 0:
            raise ValueError("curve ball scenarios start at t >= 0")
        self.params.validate()

    @property
    def kind(self) -> str:
        return self.params.kind

    @property
    def channels(self) -> tuple[str, ...]:
        return tuple(self.params.channels)

    def to_dict(self) -> dict:
        """Flat key-value form; see docs/FORMATS.md for the keys of each kind."""
        out = {"kind": self.kind}
        for name in self.params.__dataclass_fields__:
            out[name] = getattr(self.params, name)
        out.update(
            t_start=self.t_start, t_end=self.t_end, sample_rate=self.sample_rate, mass=self.mass
        )
        return out

    @classmethod
    def from_dict(cls, data) -> "ScenarioSpec":
        data = dict(data)
        kind = data.pop("kind")
        try:
            ptype = PARAM_TYPES[kind]
        except KeyError:
            raise ValueError(f"unknown scenario kind {kind!r}") from None
        common = {k: float(data.pop(k)) for k in ("t_start", "t_end", "sample_rate", "mass") if k in data}
        unknown = set(data) - set(ptype.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown keys for {kind}: {sorted(unknown)}")
        kwargs = {}
        for k, v in data.items():
            kwargs[k] = bool(v) if k == "with_gravity" else float(v)
        return cls(ptype(**kwargs), **common)


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered multi-channel samples.

    ``values`` has shape ``(n_samples, n_channels)``.  ``switch_times`` lists
    regime boundaries for piecewise scenarios and is empty otherwise.
    """

    channel_names: tuple[str, ...]
    times: np.ndarray
    values: np.ndarray
    switch_times: tuple[float, ...] = field(default=())

    def __post_init__(self):
        names = tuple(self.channel_names)
        times = np.array(self.times, dtype=float)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or values.shape != (times.size, len(names)):
            raise ValueError("values must have one row per time and one column per channel")
        if len(set(names)) != len(names):
            raise ValueError("duplicate channel names")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise ValueError("trajectory contains non-finite values")
        times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "switch_times", tuple(float(s) for s in self.switch_times))

    def __len__(self):
        return self.times.size

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, self.channel_names.index(name)]

    def select(self, names: Sequence[str]) -> "Trajectory":
        idx = [self.channel_names.index(n) for n in names]
        return replace(self, channel_names=tuple(names), values=self.values[:, idx])

    def slice(self, start: int = 0, stop: int | None = None) -> "Trajectory":
        return replace(self, times=self.times[start:stop], values=self.values[start:stop])

    def window(self, t0: float, t1: float) -> "Trajectory":
        """Samples with ``t0 <= t < t1``."""
        mask = (self.times >= t0) & (self.times < t1)
        return replace(self, times=self.times[mask], values=self.values[mask])

    @property
    def sample_rate(self) -> float:
        if self.times.size < 2:
            raise ValueError("sample rate needs at least two samples")
        return (self.times.size - 1) / (self.times[-1] - self.times[0])


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be >= 0")


def sample_times(t_start: float, t_end: float, sample_rate: float) -> np.ndarray:
    # guard against (t_end - t_start) * rate landing a hair above an integer
    n = math.ceil((t_end - t_start) * sample_rate - 1e-9)
    return t_start + np.arange(n) / sample_rate


def _cumulative_simpson(f: Callable, t: np.ndarray, t0: float) -> np.ndarray:
    # panel-wise Simpson with the closed-form integrand evaluated at midpoints
    nodes = np.concatenate(([t0], t)) if t[0] != t0 else t
    a, b = nodes[:-1], nodes[1:]
    h = b - a
    panels = h / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    total = np.concatenate(([0.0], np.cumsum(panels)))
    return total[1:] if t[0] != t0 else total


def planar_path(speed: Callable, heading: Callable, times, origin=(0.0, 0.0), t0: float = 0.0):
    """Integrate ``speed(u) * (cos heading(u), sin heading(u))`` from ``t0``.

    Returns ``(x, y)`` arrays at ``times`` by composite Simpson quadrature
    with one panel per consecutive sample pair.
    """
    t = np.asarray(times, dtype=float)
    x = origin[0] + _cumulative_simpson(lambda u: speed(u) * np.cos(heading(u)), t, t0)
    y = origin[1] + _cumulative_simpson(lambda u: speed(u) * np.sin(heading(u)), t, t0)
    return x, y


def _closed_form(params: Params, t: np.ndarray) -> np.ndarray:
    if isinstance(params, FreeFall):
        x = params.x0 + params.v0 * t + 0.5 * params.accel * t * t
        return x[:, None]
    if isinstance(params, DampedPendulum):
        x = params.a * np.exp(-params.gamma * t) * np.cos(params.omega * t - params.phi)
        return x[:, None]
    p = params
    if np.any(t < 0):
        raise ValueError("curve ball is defined for t >= 0")
    s = p.L * np.log1p(t / p.tau)
    rate = p.turn_rate
    theta = p.theta0 + rate * t
    x, y = planar_path(
        lambda u: p.L / (u + p.tau), lambda u: p.theta0 + rate * u, t, (p.x0, p.y0)
    )
    cols = [s, theta, x, y]
    if p.with_gravity:
        cols.append(p.z0 - 0.5 * p.g * t * t)
    return np.column_stack(cols)


def evaluate(spec: ScenarioSpec | Params, times) -> Trajectory:
    """Closed-form scenario values at arbitrary increasing ``times``."""
    params = spec.params if isinstance(spec, ScenarioSpec) else spec
    t = np.asarray(times, dtype=float)
    return Trajectory(tuple(params.channels), t, _closed_form(params, t))


def generate(spec: ScenarioSpec) -> Trajectory:
    return evaluate(spec, sample_times(spec.t_start, spec.t_end, spec.sample_rate))


def _expect(spec: ScenarioSpec, ptype) -> ScenarioSpec:
    if not isinstance(spec, ScenarioSpec) or not isinstance(spec.params, ptype):
        raise ValueError(f"expected a {ptype.kind} scenario")
    return spec


def gen_free_fall(spec: ScenarioSpec) -> Trajectory:
    return generate(_expect(spec, FreeFall))


def gen_damped_pendulum(spec: ScenarioSpec) -> Trajectory:
    return generate(_expect(spec, DampedPendulum))


def gen_curve_ball(spec: ScenarioSpec) -> Trajectory:
    return generate(_expect(spec, CurveBall))


def _piecewise_values(segments, t):
    starts = [segments[0][0].t_start]
    for _, duration in segments[:-1]:
        starts.append(starts[-1] + duration)
    out = np.empty((t.size, len(segments[0][0].channels)))
    which = np.searchsorted(np.asarray(starts[1:]), t, side="right")
    offset = None
    for i, (spec, duration) in enumerate(segments):
        mask = which == i
        local = np.concatenate((t[mask] - starts[i], [duration]))
        vals = _closed_form(spec.params, local)
        if i > 0:
            vals = vals + offset
        out[mask] = vals[:-1]
        if i + 1 < len(segments):
            start_next = _closed_form(segments[i + 1][0].params, np.array([0.0]))[0]
            offset = vals[-1] - start_next
    return out, tuple(starts[1:])


def gen_piecewise(segments: Sequence[tuple[ScenarioSpec, float]]) -> Trajectory:
    """Concatenate scenario segments into one position-continuous trajectory.

    Each segment runs on its own local clock starting at zero and is shifted
    by a constant so it begins where the previous segment ended.  Sample
    times and rate come from the first segment's spec.
    """
    segments = list(segments)
    if not segments:
        raise ValueError("at least one segment is required")
    channels = segments[0][0].channels
    for spec, duration in segments:
        if spec.channels != channels:
            raise ValueError("all segments must share the same channels")
        if not duration > 0:
            raise ValueError("segment durations must be > 0")
    first = segments[0][0]
    total = sum(d for _, d in segments)
    t = sample_times(first.t_start, first.t_start + total, first.sample_rate)
    values, switches = _piecewise_values(segments, t)
    return Trajectory(channels, t, values, switches)


def evaluate_piecewise(segments, times) -> Trajectory:
    segments = list(segments)
    t = np.asarray(times, dtype=float)
    values, switches = _piecewise_values(segments, t)
    return Trajectory(segments[0][0].channels, t, values, switches)


def add_noise(traj: Trajectory, noise: NoiseSpec) -> Trajectory:
    """Add i.i.d. Gaussian noise to every value; times are left untouched."""
    if noise.sigma == 0:
        return traj
    rng = np.random.default_rng(noise.seed)
    noisy = traj.values + rng.normal(0.0, noise.sigma, size=traj.values.shape)
    return replace(traj, values=noisy)


def free_fall_experiment() -> ScenarioSpec:
    """Iron sphere of 10 mg dropped from 10 m, observed for 20 s at 100 Hz.

    The first 10 s are the fitting window.
    """
    return ScenarioSpec(FreeFall(x0=10.0, v0=0.0, accel=-9.8), 0.0, 20.0, 100.0, mass=1e-5)
