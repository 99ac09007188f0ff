"""Physics-derived basis terms and the candidate library.

A basis term is a product of one or two primitive time functions.  Three
primitives carry a nonlinear parameter that is shared across every term of a
candidate subset:

==========  ===================  =========
primitive   value                parameter
==========  ===================  =========
Constant    1                    -
Linear      t                    -
Quadratic   t**2                 -
Harmonic    cos(w t) / sin(w t)  omega > 0
ExpDecay    exp(-g t)            gamma >= 0
LogShift    log(t/tau + 1)       tau > 0
==========  ===================  =========

A phase-shifted oscillation ``a cos(w t - phi)`` is never fit with ``phi``
as a free parameter.  It is carried by a cos/sin pair with linear
coefficients ``(a cos phi, a sin phi)``; see :func:`amplitude_phase`.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import DomainError, ParameterError

__all__ = [
    "PrimitiveKind",
    "Primitive",
    "BasisTerm",
    "Library",
    "LibraryMode",
    "eval_term",
    "eval_derivative",
    "build_design_matrix",
    "expand_terms",
    "enumerate_candidates",
    "count_candidates",
    "amplitude_phase",
    "harmonic_coefficients",
    "check_params",
    "PARAM_BOUNDS",
]


class PrimitiveKind(enum.Enum):
    CONSTANT = "Constant"
    LINEAR = "Linear"
    QUADRATIC = "Quadratic"
    HARMONIC = "Harmonic"
    EXP_DECAY = "ExpDecay"
    LOG_SHIFT = "LogShift"


_PARAM_OF = {
    PrimitiveKind.HARMONIC: "omega",
    PrimitiveKind.EXP_DECAY: "gamma",
    PrimitiveKind.LOG_SHIFT: "tau",
}
_DEGREE_OF = {
    PrimitiveKind.CONSTANT: 0,
    PrimitiveKind.LINEAR: 1,
    PrimitiveKind.QUADRATIC: 2,
}

# (lower bound, lower bound inclusive) for each nonlinear parameter
PARAM_BOUNDS = {
    "gamma": (0.0, True),
    "omega": (0.0, False),
    "tau": (0.0, False),
}


@dataclass(frozen=True)
class Primitive:
    """One factor of a basis term.

    ``component`` selects ``"cos"`` or ``"sin"`` for a Harmonic factor.
    ``None`` on a Harmonic factor means the cos/sin pair, which
    :func:`expand_terms` splits into two columns.
    """

    kind: PrimitiveKind
    component: str | None = None

    def __post_init__(self):
        if self.kind is PrimitiveKind.HARMONIC:
            if self.component not in (None, "cos", "sin"):
                raise ValueError(f"unknown harmonic component {self.component!r}")
        elif self.component is not None:
            raise ValueError(f"{self.kind.value} takes no component")

    @property
    def param_name(self) -> str | None:
        return _PARAM_OF.get(self.kind)

    @property
    def degree(self) -> int:
        return _DEGREE_OF.get(self.kind, 0)

    @property
    def label(self) -> str:
        k = self.kind
        if k is PrimitiveKind.CONSTANT:
            return "1"
        if k is PrimitiveKind.LINEAR:
            return "t"
        if k is PrimitiveKind.QUADRATIC:
            return "t^2"
        if k is PrimitiveKind.HARMONIC:
            return f"{self.component or 'cos|sin'}(omega*t)"
        if k is PrimitiveKind.EXP_DECAY:
            return "exp(-gamma*t)"
        return "log(t/tau+1)"

    def value(self, params, t):
        """Value only; cheaper than :meth:`values` inside fitting loops."""
        k = self.kind
        if k is PrimitiveKind.CONSTANT:
            return np.ones_like(t)
        if k is PrimitiveKind.LINEAR:
            return t * 1.0
        if k is PrimitiveKind.QUADRATIC:
            return t * t
        if k is PrimitiveKind.HARMONIC:
            if self.component == "cos":
                return np.cos(params["omega"] * t)
            if self.component == "sin":
                return np.sin(params["omega"] * t)
            raise ValueError("harmonic pair must be expanded before evaluation")
        if k is PrimitiveKind.EXP_DECAY:
            return np.exp(-params["gamma"] * t)
        tau = params["tau"]
        arg = t / tau + 1.0
        if np.any(arg <= 0.0):
            raise DomainError(f"LogShift requires t/tau + 1 > 0 (tau={tau})")
        return np.log(arg)

    def values(self, params, t):
        """Return ``(f, f', f'')`` evaluated at ``t``."""
        k = self.kind
        if k is PrimitiveKind.CONSTANT:
            one = np.ones_like(t)
            return one, np.zeros_like(t), np.zeros_like(t)
        if k is PrimitiveKind.LINEAR:
            return t * 1.0, np.ones_like(t), np.zeros_like(t)
        if k is PrimitiveKind.QUADRATIC:
            return t * t, 2.0 * t, np.full_like(t, 2.0)
        if k is PrimitiveKind.HARMONIC:
            w = params["omega"]
            c = np.cos(w * t)
            s = np.sin(w * t)
            if self.component == "cos":
                return c, -w * s, -w * w * c
            if self.component == "sin":
                return s, w * c, -w * w * s
            raise ValueError("harmonic pair must be expanded before evaluation")
        if k is PrimitiveKind.EXP_DECAY:
            g = params["gamma"]
            e = np.exp(-g * t)
            return e, -g * e, g * g * e
        tau = params["tau"]
        arg = t / tau + 1.0
        if np.any(arg <= 0.0):
            raise DomainError(f"LogShift requires t/tau + 1 > 0 (tau={tau})")
        inv = 1.0 / (t + tau)
        return np.log(arg), inv, -inv * inv


@dataclass(frozen=True)
class BasisTerm:
    """A product of one or two primitives."""

    factors: tuple[Primitive, ...]

    def __post_init__(self):
        factors = tuple(self.factors)
        object.__setattr__(self, "factors", factors)
        if not 1 <= len(factors) <= 2:
            raise ValueError("a basis term has one or two factors")
        families = [f.param_name for f in factors if f.param_name is not None]
        if len(families) != len(set(families)):
            raise ValueError("at most one factor per nonlinear family")

    @classmethod
    def of(cls, *factors: Primitive) -> "BasisTerm":
        return cls(tuple(factors))

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(f.param_name for f in self.factors if f.param_name is not None)

    @property
    def degree(self) -> int:
        return sum(f.degree for f in self.factors)

    @property
    def complexity_rank(self) -> int:
        return 10 * len(self.factors) + 5 * len(self.param_names) + self.degree

    @property
    def is_pair(self) -> bool:
        return any(
            f.kind is PrimitiveKind.HARMONIC and f.component is None for f in self.factors
        )

    @property
    def label(self) -> str:
        return "*".join(f.label for f in self.factors)

    def __str__(self):
        return self.label

    def to_dict(self, params: Mapping[str, float] | None = None) -> dict:
        out = []
        for f in self.factors:
            d = {"kind": f.kind.value}
            if f.component is not None:
                d["component"] = f.component
            if f.param_name is not None and params is not None:
                d[f.param_name] = float(params[f.param_name])
            out.append(d)
        return {"factors": out}

    @classmethod
    def from_dict(cls, data: Mapping) -> "BasisTerm":
        factors = []
        for d in data["factors"]:
            factors.append(Primitive(PrimitiveKind(d["kind"]), d.get("component")))
        return cls(tuple(factors))


# shorthand primitives
CONST = Primitive(PrimitiveKind.CONSTANT)
LIN = Primitive(PrimitiveKind.LINEAR)
QUAD = Primitive(PrimitiveKind.QUADRATIC)
COS = Primitive(PrimitiveKind.HARMONIC, "cos")
SIN = Primitive(PrimitiveKind.HARMONIC, "sin")
HARM = Primitive(PrimitiveKind.HARMONIC)
EXP = Primitive(PrimitiveKind.EXP_DECAY)
LOG = Primitive(PrimitiveKind.LOG_SHIFT)


class LibraryMode(enum.Enum):
    FULL = "full"
    POLYNOMIAL_ONLY = "poly"


@dataclass(frozen=True)
class Library:
    """Ordered candidate terms, ascending by complexity rank."""

    terms: tuple[BasisTerm, ...]
    mode: LibraryMode

    def __post_init__(self):
        # stable sort keeps declaration order among equal ranks
        terms = tuple(sorted(self.terms, key=lambda term: term.complexity_rank))
        object.__setattr__(self, "terms", terms)

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    @classmethod
    def full(cls) -> "Library":
        terms = [
            BasisTerm.of(CONST),
            BasisTerm.of(LIN),
            BasisTerm.of(QUAD),
            BasisTerm.of(COS),
            BasisTerm.of(SIN),
            BasisTerm.of(EXP),
            BasisTerm.of(LOG),
            BasisTerm.of(EXP, COS),
            BasisTerm.of(EXP, SIN),
            BasisTerm.of(LIN, COS),
        ]
        return cls(tuple(terms), LibraryMode.FULL)

    @classmethod
    def polynomial_only(cls) -> "Library":
        # t*t duplicates t^2 and is left out
        terms = [
            BasisTerm.of(CONST),
            BasisTerm.of(LIN),
            BasisTerm.of(QUAD),
            BasisTerm.of(LIN, QUAD),
            BasisTerm.of(QUAD, QUAD),
        ]
        return cls(tuple(terms), LibraryMode.POLYNOMIAL_ONLY)

    @classmethod
    def from_mode(cls, mode) -> "Library":
        mode = LibraryMode(mode)
        return cls.full() if mode is LibraryMode.FULL else cls.polynomial_only()

    def index(self, term: BasisTerm) -> int:
        return self.terms.index(term)

    def to_json(self) -> str:
        doc = {"mode": self.mode.value, "terms": [t.to_dict() for t in self.terms]}
        return json.dumps(doc, separators=(",", ":"))


def check_params(names, params: Mapping[str, float]) -> None:
    """Raise :class:`ParameterError` unless every named parameter is admissible."""
    for name in names:
        if name not in params or params[name] is None:
            raise ParameterError(f"missing nonlinear parameter {name!r}")
        value = float(params[name])
        lo, inclusive = PARAM_BOUNDS[name]
        if not math.isfinite(value) or value < lo or (value == lo and not inclusive):
            raise ParameterError(f"{name}={value} out of bounds")


def _as_times(t):
    return np.asarray(t, dtype=float)


def _term_values(term: BasisTerm, params, t):
    check_params(term.param_names, params)
    parts = [f.values(params, t) for f in term.factors]
    if len(parts) == 1:
        return parts[0]
    (f, f1, f2), (g, g1, g2) = parts
    return f * g, f1 * g + f * g1, f2 * g + 2.0 * f1 * g1 + f * g2


def _term_value(term: BasisTerm, params, t):
    check_params(term.param_names, params)
    value = term.factors[0].value(params, t)
    for f in term.factors[1:]:
        value = value * f.value(params, t)
    return value


def eval_term(term: BasisTerm, params: Mapping[str, float], t):
    """Evaluate a concrete basis term at time(s) ``t``.

    Raises
    ------
    DomainError
        If a LogShift factor is evaluated at ``t <= -tau``.
    ParameterError
        If a required nonlinear parameter is missing or out of bounds.
    """
    tt = _as_times(t)
    value = _term_value(term, params, tt)
    return float(value) if np.ndim(value) == 0 else value


def eval_derivative(term: BasisTerm, params: Mapping[str, float], t, order: int):
    """Analytic first or second time derivative of ``term`` at ``t``."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    tt = _as_times(t)
    value = _term_values(term, params, tt)[order]
    return float(value) if np.ndim(value) == 0 else value


def expand_terms(subset: Sequence[BasisTerm]) -> list[BasisTerm]:
    """Split harmonic pair terms into their cos and sin columns."""
    out = []
    for term in subset:
        if not term.is_pair:
            out.append(term)
            continue
        for comp in ("cos", "sin"):
            out.append(
                BasisTerm(
                    tuple(
                        Primitive(f.kind, comp) if f.kind is PrimitiveKind.HARMONIC else f
                        for f in term.factors
                    )
                )
            )
    return out


def build_design_matrix(
    library_subset: Sequence[BasisTerm], params: Mapping[str, float], times
) -> np.ndarray:
    """Columns of expanded term values, one row per sample time."""
    if len(library_subset) == 0:
        raise ValueError("empty term subset")
    t = _as_times(times)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("times must be a non-empty 1-D sequence")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    return _design_rows(expand_terms(library_subset), params, t).T


def _design_rows(columns, params, t):
    """Transposed design, one contiguous row per column; shared factors evaluated once."""
    names = {n for term in columns for n in term.param_names}
    check_params(names, params)
    cache = {}
    out = np.empty((len(columns), t.size))
    for j, term in enumerate(columns):
        value = None
        for f in term.factors:
            fv = cache.get(f)
            if fv is None:
                fv = cache[f] = f.value(params, t)
            value = fv if value is None else value * fv
        out[j] = value
    return out


def count_candidates(n: int, max_terms: int) -> int:
    return sum(math.comb(n, k) for k in range(1, max_terms + 1))


def enumerate_candidates(library: Library, max_terms: int) -> Iterator[tuple[BasisTerm, ...]]:
    """Yield every non-empty subset of at most ``max_terms`` library terms.

    Order: subset size, then summed complexity rank, then library index.
    """
    n = len(library)
    if not 1 <= max_terms <= n:
        raise ValueError(f"max_terms must be in [1, {n}], got {max_terms}")
    ranks = [t.complexity_rank for t in library.terms]
    for k in range(1, max_terms + 1):
        combos = sorted(
            itertools.combinations(range(n), k),
            key=lambda idx: (sum(ranks[i] for i in idx), idx),
        )
        for idx in combos:
            yield tuple(library.terms[i] for i in idx)


def amplitude_phase(cos_coef: float, sin_coef: float) -> tuple[float, float]:
    """Convert ``A cos(wt) + B sin(wt)`` to ``a cos(wt - phi)``; phi in (-pi, pi]."""
    return math.hypot(cos_coef, sin_coef), math.atan2(sin_coef, cos_coef)


def harmonic_coefficients(amplitude: float, phase: float) -> tuple[float, float]:
    return amplitude * math.cos(phase), amplitude * math.sin(phase)
