"""Sparse identification over the basis library.

For a candidate subset of basis terms the linear coefficients are eliminated
exactly by an orthogonal least-squares solve, leaving a small problem over
the shared nonlinear parameters (``gamma``, ``omega``, ``tau``).  That outer
problem is solved by a damped Gauss-Newton (Levenberg-Marquardt) iteration
with central-difference Jacobians of the projected residual.

Candidate subsets are visited in library ranking order and the first whose
RMSE falls below ``rmse_accept * data_scale`` is accepted.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .basis import (
    BasisTerm,
    Library,
    LibraryMode,
    amplitude_phase,
    _design_rows,
    check_params,
    enumerate_candidates,
    eval_derivative,
    eval_term,
    expand_terms,
)
from .errors import DegenerateDesignError, DomainError, ParameterError
from .scenario import Trajectory

__all__ = [
    "FitConfig",
    "CandidateModel",
    "FitResult",
    "ModelDescriptor",
    "solve_linear",
    "init_params",
    "refine_nonlinear",
    "select_model",
    "fit_trajectory",
    "force_of",
    "MODEL_FORMAT",
    "MODEL_VERSION",
]

MODEL_FORMAT = "newtonscheme-model"
MODEL_VERSION = 1

_PARAM_ORDER = ("gamma", "omega", "tau")


@dataclass(frozen=True)
class FitConfig:
    """Model-selection settings.

    ``rmse_accept`` is relative: a candidate is accepted when its RMSE is at
    most ``rmse_accept * data_scale`` with ``data_scale = max(1, max|obs|)``.
    The data themselves are never rescaled.
    """

    rmse_accept: float = 1e-8
    nonlinear_tol: float = 1e-8
    max_terms: int = 3
    omega_starts: int = 3
    gamma_starts: int = 3
    tau_starts: int = 5
    max_starts: int = 4
    max_outer_iters: int = 200
    max_condition: float = 1e8
    exhaustive: bool = False

    def __post_init__(self):
        for name in ("rmse_accept", "nonlinear_tol", "max_condition"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("max_terms", "omega_starts", "gamma_starts", "tau_starts", "max_starts",
                     "max_outer_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def grid_size(self, name: str) -> int:
        return {"omega": self.omega_starts, "gamma": self.gamma_starts, "tau": self.tau_starts}[name]


@dataclass(frozen=True)
class CandidateModel:
    """A fitted subset: terms, shared nonlinear parameters and coefficients.

    ``coefficients`` holds one entry per expanded design column, in the
    order produced by :func:`newtonscheme.basis.expand_terms`.
    """

    terms: tuple[BasisTerm, ...]
    params: Mapping[str, float]
    coefficients: np.ndarray
    rmse: float
    condition_estimate: float
    converged: bool = True

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float).copy()
        coef.flags.writeable = False
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "coefficients", coef)
        if coef.size not in (0, len(self.columns)):
            raise ValueError("one coefficient per expanded column is required")

    @property
    def columns(self) -> list[BasisTerm]:
        return expand_terms(self.terms)

    @property
    def column_labels(self) -> list[str]:
        return [c.label for c in self.columns]

    @property
    def n_nonlinear(self) -> int:
        return len(self.params)

    def __call__(self, t):
        return self.derivative(t, 0)

    def derivative(self, t, order: int = 1):
        """Model value (``order=0``) or its analytic time derivative."""
        tt = np.asarray(t, dtype=float)
        total = np.zeros_like(tt)
        for coef, col in zip(self.coefficients, self.columns):
            if order == 0:
                total = total + coef * eval_term(col, self.params, tt)
            else:
                total = total + coef * eval_derivative(col, self.params, tt, order)
        return float(total) if total.ndim == 0 else total

    def amplitude_phase(self) -> dict[str, tuple[float, float]]:
        """``(a, phi)`` for every matched cos/sin column pair sharing a prefactor."""
        out = {}
        labels = self.column_labels
        for i, lab in enumerate(labels):
            if "cos(omega*t)" not in lab:
                continue
            partner = lab.replace("cos(omega*t)", "sin(omega*t)")
            if partner in labels:
                j = labels.index(partner)
                out[lab.replace("cos(omega*t)", "cos(omega*t-phi)")] = amplitude_phase(
                    self.coefficients[i], self.coefficients[j]
                )
        return out

    def to_dict(self) -> dict:
        terms = []
        coef_iter = iter(self.coefficients.tolist())
        for term in self.terms:
            d = term.to_dict(self.params)
            d["coefficients"] = [next(coef_iter) for _ in expand_terms([term])]
            terms.append(d)
        return {
            "terms": terms,
            "params": {k: float(self.params[k]) for k in _PARAM_ORDER if k in self.params},
            "rmse": float(self.rmse),
            "condition_estimate": float(self.condition_estimate),
            "converged": bool(self.converged),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CandidateModel":
        terms = tuple(BasisTerm.from_dict(t) for t in data["terms"])
        coefs = [c for t in data["terms"] for c in t["coefficients"]]
        return cls(
            terms,
            {k: float(v) for k, v in data["params"].items()},
            np.array(coefs, dtype=float),
            float(data["rmse"]),
            float(data["condition_estimate"]),
            bool(data.get("converged", True)),
        )


@dataclass(frozen=True)
class FitResult:
    """Outcome of model selection on one channel."""

    model: CandidateModel
    data_scale: float
    candidates_evaluated: int
    accepted: bool
    rmse_threshold: float

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "data_scale": float(self.data_scale),
            "rmse_threshold": float(self.rmse_threshold),
            "candidates_evaluated": int(self.candidates_evaluated),
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "FitResult":
        return cls(
            CandidateModel.from_dict(data["model"]),
            float(data["data_scale"]),
            int(data["candidates_evaluated"]),
            bool(data["accepted"]),
            float(data["rmse_threshold"]),
        )


# -- linear solve ------------------------------------------------------------


def _singular_extremes(r):
    k = r.shape[0]
    if k == 1:
        return abs(r[0, 0]), abs(r[0, 0])
    if k == 2:
        fro2 = float(np.sum(r * r))
        det = abs(r[0, 0] * r[1, 1] - r[0, 1] * r[1, 0])
        smax = math.sqrt(0.5 * (fro2 + math.sqrt(max(fro2 * fro2 - 4.0 * det * det, 0.0))))
        return smax, det / smax
    sv = np.linalg.svd(r, compute_uv=False)
    return sv[0], sv[-1]


def _lstsq_rows(cols, y, max_condition):
    """Least squares with the design stored as rows (one row per column).

    Columns are normalized to unit length, then factorized by classical
    Gram-Schmidt with a second orthogonalization pass, which keeps ``Q``
    orthogonal to working precision for the handful of columns used here.
    The condition estimate is that of the normalized design.

    Returns ``(coef, residual, condition)``; raises DegenerateDesignError.
    """
    k = cols.shape[0]
    q = np.empty_like(cols)
    r = np.zeros((k, k))
    norms = np.empty(k)
    for j in range(k):
        v = cols[j]
        nrm = math.sqrt(float(v @ v))
        if not (math.isfinite(nrm) and nrm > 0.0):
            raise DegenerateDesignError(math.inf)
        norms[j] = nrm
        v = v / nrm
        if j:
            qj = q[:j]
            for _ in range(2):
                c = qj @ v
                v = v - c @ qj
                r[:j, j] += c
        rjj = math.sqrt(float(v @ v))
        if rjj == 0.0:
            raise DegenerateDesignError(math.inf)
        r[j, j] = rjj
        q[j] = v / rjj
    smax, smin = _singular_extremes(r)
    cond = smax / smin if smin > 0 else math.inf
    if not cond <= max_condition:
        raise DegenerateDesignError(cond)
    qty = q @ y
    c = np.empty(k)
    for i in range(k - 1, -1, -1):
        c[i] = (qty[i] - r[i, i + 1:] @ c[i + 1:]) / r[i, i]
    coef = c / norms
    return coef, y - coef @ cols, cond


def _lstsq(design, obs, max_condition):
    return _lstsq_rows(np.ascontiguousarray(design.T), obs, max_condition)


def solve_linear(design, observations, max_condition: float = 1e8):
    """Least-squares coefficients and RMSE by orthogonal factorization.

    Parameters
    ----------
    design : (n, k) array_like
        Design matrix with ``n >= k``.
    observations : (n,) array_like

    Returns
    -------
    coefficients : ndarray
    rmse : float
        ``||residual||_2 / sqrt(n)``.

    Raises
    ------
    DegenerateDesignError
        If the condition estimate of the column-normalized design exceeds
        ``max_condition``.
    """
    a = np.asarray(design, dtype=float)
    y = np.asarray(observations, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] != y.size:
        raise ValueError("design and observations disagree on sample count")
    if a.shape[0] < a.shape[1]:
        raise ValueError("need at least as many rows as columns")
    coef, resid, _ = _lstsq(a, y, max_condition)
    return coef, float(np.linalg.norm(resid) / math.sqrt(y.size))


# -- starting points ---------------------------------------------------------


def _subset_params(subset) -> list[str]:
    names = {n for term in subset for n in term.param_names}
    return [n for n in _PARAM_ORDER if n in names]


def _zero_crossings(y):
    s = np.sign(y)
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def _decay_rate(t, y):
    a = np.abs(y)
    if a.size < 3:
        return None
    peaks = np.flatnonzero((a[1:-1] > a[:-2]) & (a[1:-1] >= a[2:])) + 1
    peaks = peaks[a[peaks] > 0]
    if peaks.size < 2:
        return None
    slope = np.polyfit(t[peaks], np.log(a[peaks]), 1)[0]
    return max(0.0, -float(slope))


def init_params(subset: Sequence[BasisTerm], times, obs, config: FitConfig | None = None):
    """Multistart grid of nonlinear-parameter starting points.

    ``omega`` starts from the zero-crossing count of the mean-removed signal,
    ``gamma`` from the log-slope of its peak envelope, and ``tau`` from a
    logarithmic grid spanning a tenth to ten times the window.  Each grid is
    ordered best guess first; the cross product is ordered by summed grid
    position and truncated to ``config.max_starts``.
    """
    config = config or FitConfig()
    t = np.asarray(times, dtype=float)
    y = np.asarray(obs, dtype=float)
    if t.size < 4 or y.size != t.size:
        raise ValueError("at least 4 samples are required")
    names = _subset_params(subset)
    if not names:
        return [{}]
    duration = float(t[-1] - t[0])
    centred = y - y.mean()
    grids = {}
    if "omega" in names:
        n = max(1, _zero_crossings(centred))
        w = math.pi * n / duration
        grids["omega"] = [w, 0.8 * w, 1.2 * w]
    if "gamma" in names:
        g = _decay_rate(t, centred)
        if g is None or g == 0.0:
            grids["gamma"] = [g or 0.0, 0.1 / duration, 1.0 / duration]
        else:
            grids["gamma"] = [g, 0.5 * g, 2.0 * g]
    if "tau" in names:
        k = config.tau_starts
        exps = np.linspace(-1.0, 1.0, k) if k > 1 else np.zeros(1)
        order = np.argsort(np.abs(exps), kind="stable")
        grids["tau"] = [duration * 10.0 ** exps[i] for i in order]
    for name in names:
        grids[name] = grids[name][: config.grid_size(name)]
    combos = sorted(
        itertools.product(*(range(len(grids[n])) for n in names)), key=lambda idx: sum(idx)
    )[: config.max_starts]
    return [{n: float(grids[n][i]) for n, i in zip(names, idx)} for idx in combos]


# -- nonlinear refinement ----------------------------------------------------


class _Projected:
    """Variable-projection residual for a fixed subset and data set.

    The search runs in ``z`` coordinates inside a box: ``gamma`` as is on
    ``[0, 100/T]``, ``omega`` as ``log(omega)`` on ``[1e-3/T, pi/dt]`` and
    ``tau`` as ``log(tau)`` on ``[1e-4 T, 1e4 T]``, where ``T`` is the window
    length and ``dt`` the smallest sample spacing.
    """

    def __init__(self, subset, times, obs, max_condition):
        self.subset = tuple(subset)
        self.columns = expand_terms(self.subset)
        self.names = _subset_params(subset)
        self.t = times
        self.y = obs
        self.max_condition = max_condition
        span = max(float(times[-1] - times[0]), 1e-12)
        dt = float(np.min(np.diff(times))) if times.size > 1 else span
        self.box = {
            "gamma": (0.0, 100.0 / span),
            "omega": (math.log(1e-3 / span), math.log(math.pi / dt)),
            "tau": (math.log(1e-4 * span), math.log(1e4 * span)),
        }
        self.lo = np.array([self.box[n][0] for n in self.names])
        self.hi = np.array([self.box[n][1] for n in self.names])

    def to_z(self, params):
        return np.array(
            [float(params[n]) if n == "gamma" else math.log(params[n]) for n in self.names]
        )

    def params(self, z):
        return {n: (float(v) if n == "gamma" else math.exp(v)) for n, v in zip(self.names, z)}

    def __call__(self, z):
        """Return ``(residual, coef, cond)`` or ``None`` when infeasible."""
        if not np.all(np.isfinite(z)):
            return None
        try:
            rows = _design_rows(self.columns, self.params(z), self.t)
            coef, resid, cond = _lstsq_rows(rows, self.y, self.max_condition)
        except (DomainError, ParameterError, DegenerateDesignError, np.linalg.LinAlgError):
            return None
        return resid, coef, cond

    def project(self, z, step):
        """Trial point ``z + step`` clipped back into the search box."""
        return np.minimum(np.maximum(z + step, self.lo), self.hi)


def _jacobian(fun, z, r0):
    jac = np.empty((r0.size, z.size))
    for k in range(z.size):
        h = 1e-6 * max(1.0, abs(z[k]))
        up, dn = z.copy(), z.copy()
        up[k] += h
        dn[k] -= h
        fu = fun(up) if up[k] <= fun.hi[k] else None
        fd = fun(dn) if dn[k] >= fun.lo[k] else None
        if fu is not None and fd is not None:
            jac[:, k] = (fu[0] - fd[0]) / (2 * h)
        elif fu is not None:
            jac[:, k] = (fu[0] - r0) / h
        elif fd is not None:
            jac[:, k] = (r0 - fd[0]) / h
        else:
            return None
    return jac


def _model(fun, z, ev, converged):
    resid, coef, cond = ev
    rmse = float(np.linalg.norm(resid) / math.sqrt(resid.size))
    return CandidateModel(fun.subset, fun.params(z), coef, rmse, cond, converged)


def refine_nonlinear(subset, start: Mapping[str, float], times, obs, config: FitConfig | None = None):
    """Minimize the projected RMSE over the subset's nonlinear parameters.

    The returned model never has a larger RMSE than the evaluation at
    ``start``.  A start that cannot be evaluated yields a model with infinite
    RMSE, flagged not converged.
    """
    config = config or FitConfig()
    t = np.asarray(times, dtype=float)
    y = np.asarray(obs, dtype=float)
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    fun = _Projected(subset, t, y, config.max_condition)
    names = fun.names
    start = {n: float(start[n]) for n in names}
    try:
        check_params(names, start)
    except ParameterError:
        ev = None
    else:
        z = np.minimum(np.maximum(fun.to_z(start), fun.lo), fun.hi)
        ev = fun(z)
    if ev is None:
        ncol = len(fun.columns)
        return CandidateModel(fun.subset, start, np.full(ncol, np.nan), math.inf, math.inf, False)
    if not names:
        return _model(fun, z, ev, True)

    ssr = float(ev[0] @ ev[0])
    mu = 1e-3
    improved = False
    converged = False
    for _ in range(config.max_outer_iters):
        if ssr == 0.0:
            converged = True
            break
        jac = _jacobian(fun, z, ev[0])
        if jac is None:
            break
        # parameters pinned on a bound with the gradient pushing outward
        # are frozen for this step
        grad = jac.T @ ev[0]
        free = ~(((z <= fun.lo) & (grad > 0)) | ((z >= fun.hi) & (grad < 0)))
        if not free.any():
            converged = improved
            break
        jf = jac[:, free]
        scale = np.sqrt(np.maximum(np.einsum("ij,ij->j", jf, jf), 1e-30))
        rhs = np.concatenate([-ev[0], np.zeros(jf.shape[1])])
        accepted = False
        while mu < 1e16:
            aug = np.vstack([jf, np.diag(math.sqrt(mu) * scale)])
            step = np.zeros(z.size)
            step[free] = np.linalg.lstsq(aug, rhs, rcond=None)[0]
            trial = fun.project(z, step)
            ev_t = fun(trial)
            if ev_t is not None:
                ssr_t = float(ev_t[0] @ ev_t[0])
                if ssr_t < ssr:
                    accepted = True
                    break
            mu *= 4.0
        if not accepted:
            # no descent direction left: a stationary point
            converged = improved
            break
        rel = (math.sqrt(ssr) - math.sqrt(ssr_t)) / math.sqrt(ssr)
        z, ev, ssr = trial, ev_t, ssr_t
        improved = True
        mu = max(mu / 3.0, 1e-12)
        if rel < config.nonlinear_tol:
            converged = True
            break
    return _model(fun, z, ev, converged)


# -- model selection ---------------------------------------------------------


def _fit_subset(subset, t, y, config):
    best = None
    for start in init_params(subset, t, y, config):
        cand = refine_nonlinear(subset, start, t, y, config)
        if best is None or cand.rmse < best.rmse:
            best = cand
    return best


def select_model(times, obs, library: Library | None = None, config: FitConfig | None = None) -> FitResult:
    """Identify the simplest library subset that reproduces one channel.

    Subsets are tried in :func:`~newtonscheme.basis.enumerate_candidates`
    order and the first with ``rmse <= config.rmse_accept * data_scale`` is
    returned.  When none qualifies, the lowest-RMSE candidate is returned
    with ``accepted=False``; ties go to fewer terms, then fewer nonlinear
    parameters, then enumeration order.
    """
    library = library or Library.full()
    config = config or FitConfig()
    t = np.asarray(times, dtype=float)
    y = np.asarray(obs, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("times and observations must be 1-D and equally long")
    widths = sorted((len(expand_terms([term])) for term in library.terms), reverse=True)
    needed = max(4, 2 * sum(widths[: config.max_terms]))
    if t.size < needed:
        raise ValueError(f"need at least {needed} samples, got {t.size}")
    data_scale = max(1.0, float(np.max(np.abs(y))))
    threshold = config.rmse_accept * data_scale

    evaluated = 0
    first_accept = None
    best_key, best = None, None
    for index, subset in enumerate(enumerate_candidates(library, config.max_terms)):
        cand = _fit_subset(subset, t, y, config)
        evaluated += 1
        if cand.rmse <= threshold and first_accept is None:
            first_accept = cand
            if not config.exhaustive:
                break
        key = (cand.rmse, len(subset), cand.n_nonlinear, index)
        if best_key is None or key < best_key:
            best_key, best = key, cand
    if first_accept is not None:
        return FitResult(first_accept, data_scale, evaluated, True, threshold)
    return FitResult(best, data_scale, evaluated, False, threshold)


def force_of(model: CandidateModel, mass: float, t):
    """Force ``m x''(t)`` implied by a fitted displacement model.

    Returns
    -------
    total : float or ndarray
    per_column : ndarray
        One contribution per expanded design column; sums to ``total``.
    """
    if not mass > 0:
        raise ValueError("mass must be > 0")
    tt = np.asarray(t, dtype=float)
    parts = np.array(
        [mass * c * eval_derivative(col, model.params, tt, 2) for c, col in zip(model.coefficients, model.columns)]
    )
    total = parts.sum(axis=0)
    return (float(total) if total.ndim == 0 else total), parts


# -- multi-channel descriptor ------------------------------------------------


@dataclass(frozen=True)
class ModelDescriptor:
    """Per-channel fits of one trajectory window, serializable as JSON."""

    channels: Mapping[str, FitResult]
    library: LibraryMode = LibraryMode.FULL
    fit_window: tuple[float, float] = (0.0, 0.0)
    sample_rate: float | None = None
    provenance: Mapping | None = None
    extra: Mapping = field(default_factory=dict)

    @property
    def channel_names(self) -> tuple[str, ...]:
        return tuple(self.channels)

    @property
    def accepted(self) -> bool:
        return all(r.accepted for r in self.channels.values())

    def predict(self, times) -> Trajectory:
        t = np.asarray(times, dtype=float)
        cols = [np.atleast_1d(r.model(t)) for r in self.channels.values()]
        return Trajectory(self.channel_names, np.atleast_1d(t), np.column_stack(cols))

    def predict_values(self, t: float) -> np.ndarray:
        return np.array([r.model(t) for r in self.channels.values()], dtype=float)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "library": self.library.value,
            "fit_window": [float(self.fit_window[0]), float(self.fit_window[1])],
            "sample_rate": None if self.sample_rate is None else float(self.sample_rate),
            "accepted": self.accepted,
            "channels": {name: r.to_dict() for name, r in self.channels.items()},
            "provenance": self.provenance,
            "extra": dict(self.extra),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelDescriptor":
        if data.get("format") != MODEL_FORMAT:
            raise ValueError("not a model descriptor")
        if data.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model descriptor version {data.get('version')!r}")
        return cls(
            {name: FitResult.from_dict(r) for name, r in data["channels"].items()},
            LibraryMode(data["library"]),
            tuple(data["fit_window"]),
            data.get("sample_rate"),
            data.get("provenance"),
            dict(data.get("extra") or {}),
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelDescriptor":
        return cls.from_dict(json.loads(text))


def fit_trajectory(
    traj: Trajectory,
    library: Library | None = None,
    config: FitConfig | None = None,
    channels: Sequence[str] | None = None,
    provenance: Mapping | None = None,
) -> ModelDescriptor:
    """Run :func:`select_model` on each channel of ``traj``."""
    library = library or Library.full()
    names = tuple(channels) if channels is not None else traj.channel_names
    results = {n: select_model(traj.times, traj.channel(n), library, config) for n in names}
    rate = traj.sample_rate if len(traj) > 1 else None
    end = traj.times[-1] + (1.0 / rate if rate else 0.0)
    return ModelDescriptor(results, library.mode, (float(traj.times[0]), float(end)), rate, provenance)
