"""Potentials Q = [[q1, q2], [q3, q4]] on [0, pi], L^p norms and gauge changes."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .quadrature import PI, Antiderivative, adaptive_integrate

Fn = Callable[[np.ndarray], np.ndarray]

_EXPR_NAMES = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "sinh", "cosh",
                 "tanh", "arctan", "sign", "where", "heaviside", "minimum", "maximum",
                 "real", "imag", "conj")
}
_EXPR_NAMES.update(pi=np.pi, e=np.e, j=1j, I=1j)


def _expression(src: str) -> Fn:
    code = compile(src, "<potential>", "eval")
    names = set(code.co_names) - set(_EXPR_NAMES) - {"x"}
    if names:
        raise ValueError(f"unknown names in expression {src!r}: {sorted(names)}")

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.asarray(eval(code, {"__builtins__": {}}, {**_EXPR_NAMES, "x": x}),
                          dtype=complex) * np.ones_like(x)
    f.source = src
    return f


def _as_fn(q) -> Fn:
    if isinstance(q, str):
        return _expression(q)
    if callable(q):
        return lambda x, q=q: np.asarray(q(np.asarray(x, dtype=float)), dtype=complex) \
            * np.ones(np.shape(x))
    c = complex(q)
    f = (lambda x: np.full(np.shape(x), c, dtype=complex))
    f.source = repr(c)
    return f


def _zero(x):
    return np.zeros(np.shape(x), dtype=complex)


@dataclass(frozen=True)
class GridFunction:
    """Samples of a scalar or 2-vector function on a grid covering [0, pi].

    ``values`` has shape (n,) or (n, 2). Between grid points the function is the
    piecewise linear interpolant; ``weights`` (if given) is a quadrature rule on
    the same grid used for inner products and norms.
    """

    grid: np.ndarray
    values: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
        if not (np.isclose(g[0], 0.0) and np.isclose(g[-1], PI)):
            raise ValueError("grid must contain both endpoints 0 and pi")
        v = np.asarray(self.values)
        if v.shape[0] != g.size:
            raise ValueError("values do not match grid")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)
        if self.weights is None:
            w = np.zeros_like(g)
            d = np.diff(g)
            w[:-1] += d / 2
            w[1:] += d / 2
            object.__setattr__(self, "weights", w)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.values.ndim == 1:
            return np.interp(x, self.grid, self.values.real) + 1j * np.interp(
                x, self.grid, self.values.imag)
        return np.stack([GridFunction(self.grid, self.values[:, k])(x)
                         for k in range(self.values.shape[1])], axis=-1)

    def pointwise_abs(self) -> np.ndarray:
        v = self.values
        return np.abs(v) if v.ndim == 1 else np.linalg.norm(v, axis=1)

    def norm(self, p: float = 2.0) -> float:
        a = self.pointwise_abs()
        if np.isinf(p):
            return float(np.max(a))
        return float(np.sum(self.weights * a ** p) ** (1.0 / p))

    def inner(self, other: "GridFunction") -> complex:
        """<self, other> = integral of self . conj(other)."""
        u, v = self.values, other.values
        prod = u * np.conj(v)
        if prod.ndim == 2:
            prod = prod.sum(axis=1)
        return complex(np.sum(self.weights * prod))

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, np.asarray(values), self.weights)

    def __add__(self, other):
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        return self.with_values(self.values - other.values)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Potential:
    """Matrix potential with entries in L^p(0, pi).

    Entries are vectorized callables. ``breakpoints`` lists interior points where
    the entries may jump and ``singular`` lists points (usually 0 or pi) with
    integrable singularities; meshes refine toward both.
    """

    q1: Fn = _zero
    q2: Fn = _zero
    q3: Fn = _zero
    q4: Fn = _zero
    p_class: float = 2.0
    breakpoints: tuple = ()
    singular: tuple = ()
    kind: str = "expression"
    is_zero: bool = False
    R_given: float | None = None
    label: str = ""
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not (1.0 <= self.p_class <= np.inf):
            raise ValueError("p_class must lie in [1, inf]")
        for name in ("q1", "q2", "q3", "q4"):
            object.__setattr__(self, name, _as_fn(getattr(self, name)))
        object.__setattr__(self, "breakpoints", tuple(sorted(float(b) for b in self.breakpoints)))
        object.__setattr__(self, "singular", tuple(float(s) for s in self.singular))

    # constructors -----------------------------------------------------------

    @classmethod
    def zero(cls) -> "Potential":
        return cls(is_zero=True, label="0")

    @classmethod
    def from_expressions(cls, q1=0, q2=0, q3=0, q4=0, **kw) -> "Potential":
        """Entries as callables, constants or numpy expression strings in ``x``."""
        return cls(q1, q2, q3, q4, **kw)

    @classmethod
    def from_grid(cls, x, q1=0, q2=0, q3=0, q4=0, **kw) -> "Potential":
        """Piecewise linear potential through samples on the grid ``x``."""
        x = np.asarray(x, dtype=float)
        if not (np.isclose(x[0], 0) and np.isclose(x[-1], PI)) or np.any(np.diff(x) <= 0):
            raise ValueError("grid must increase from 0 to pi")

        def lin(v):
            v = np.broadcast_to(np.asarray(v, dtype=complex), x.shape)
            return lambda t: np.interp(t, x, v.real) + 1j * np.interp(t, x, v.imag)
        kw.setdefault("breakpoints", tuple(x[1:-1]))
        return cls(lin(q1), lin(q2), lin(q3), lin(q4), kind="grid", **kw)

    @classmethod
    def piecewise(cls, edges: Sequence[float], pieces: Sequence[dict], **kw) -> "Potential":
        """Entries given piece by piece: ``pieces[k]`` holds q1..q4 on [edges[k], edges[k+1])."""
        edges = np.asarray(edges, dtype=float)
        if len(pieces) != edges.size - 1:
            raise ValueError("need one piece per interval")
        fns = [{k: _as_fn(pc.get(k, 0)) for k in ("q1", "q2", "q3", "q4")} for pc in pieces]

        def entry(name):
            def f(x):
                x = np.asarray(x, dtype=float)
                k = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(fns) - 1)
                out = np.zeros(x.shape, dtype=complex)
                for j, fn in enumerate(fns):
                    sel = k == j
                    if np.any(sel):
                        out[sel] = fn[name](x[sel])
                return out
            return f
        kw.setdefault("breakpoints", tuple(edges[1:-1]))
        return cls(entry("q1"), entry("q2"), entry("q3"), entry("q4"), kind="piecewise", **kw)

    # evaluation ---------------------------------------------------------------

    def entries(self, x) -> tuple[np.ndarray, ...]:
        return self.q1(x), self.q2(x), self.q3(x), self.q4(x)

    def matrix(self, x) -> np.ndarray:
        """Q(x) with shape x.shape + (2, 2)."""
        a, b, c, d = self.entries(x)
        return np.stack([np.stack([a, b], -1), np.stack([c, d], -1)], -2)

    @property
    def R(self) -> float:
        """Bound with ||q1||_p, ||q2 + q3||_p <= R."""
        if self.R_given is not None:
            return float(self.R_given)
        if "R" not in self._cache:
            if self.is_zero:
                r = 0.0
            else:
                r = max(lp_norm(self.q1, self.p_class, self),
                        lp_norm(lambda x: self.q2(x) + self.q3(x), self.p_class, self))
            self._cache["R"] = r
        return self._cache["R"]

    def with_p(self, p: float) -> "Potential":
        return replace(self, p_class=p, R_given=None, _cache={})

    def adjoint(self) -> "Potential":
        """Potential of the formal adjoint: the conjugate transpose Q^*."""
        c = lambda f: (lambda x: np.conj(f(x)))
        return replace(self, q1=c(self.q1), q2=c(self.q3), q3=c(self.q2), q4=c(self.q4),
                       label=f"({self.label})*", _cache={})

    def scaled(self, t: complex) -> "Potential":
        s = lambda f: (lambda x: t * f(x))
        return replace(self, q1=s(self.q1), q2=s(self.q2), q3=s(self.q3), q4=s(self.q4),
                       is_zero=self.is_zero or t == 0, R_given=None, _cache={})


def lp_norm(f, p: float, like: Potential | None = None, rtol: float = 1e-10) -> float:
    """||f||_{L^p(0, pi)}; p = inf is a sampled maximum.

    ``like`` supplies breakpoints and singular points for the quadrature mesh.
    """
    f = _as_fn(f)
    bp = like.breakpoints if like is not None else ()
    sing = like.singular if like is not None else ()
    if np.isinf(p):
        x = np.unique(np.concatenate([np.linspace(0, PI, 20001), np.asarray(bp, float)]))
        if sing:
            x = x[~np.isin(x, sing)]
        return float(np.max(np.abs(f(x))))
    val = adaptive_integrate(lambda x: np.abs(f(x)) ** p, bp, sing, rtol=rtol)
    return float(np.real(val) ** (1.0 / p))


def gauge_transform(Q: Potential, phi: Fn, dphi: Fn | None = None) -> Potential:
    """Conjugate L_Q by the rotation R(phi) = [[cos, -sin], [sin, cos]].

    Returns Q~ = R^{-1} Q R - phi' I, so that L_{Q~} = R^{-1} L_Q R. When
    phi(0) = phi(pi) = 0 the boundary conditions are untouched and eigenfunctions
    map as y~ = R^{-1} y.
    """
    if dphi is None:
        h = 1e-4

        def dphi(x):
            x = np.asarray(x, dtype=float)
            return (-phi(x + 2 * h) + 8 * phi(x + h) - 8 * phi(x - h) + phi(x - 2 * h)) / (12 * h)

    def parts(x):
        ph = np.asarray(phi(x), dtype=complex)
        c, s = np.cos(ph), np.sin(ph)
        q1, q2, q3, q4 = Q.entries(x)
        return c, s, q1, q2, q3, q4, np.asarray(dphi(x), dtype=complex)

    def t1(x):
        c, s, q1, q2, q3, q4, d = parts(x)
        return -d + q1 * c * c + (q2 + q3) * s * c + q4 * s * s

    def t2(x):
        c, s, q1, q2, q3, q4, d = parts(x)
        return q2 * c * c - (q1 - q4) * s * c - q3 * s * s

    def t3(x):
        c, s, q1, q2, q3, q4, d = parts(x)
        return q3 * c * c - (q1 - q4) * s * c - q2 * s * s

    def t4(x):
        c, s, q1, q2, q3, q4, d = parts(x)
        return -d + q4 * c * c - (q2 + q3) * s * c + q1 * s * s

    return Potential(t1, t2, t3, t4, p_class=Q.p_class, breakpoints=Q.breakpoints,
                     singular=Q.singular, kind="expression", label=f"gauge({Q.label})")


def trace_shift(Q: Potential) -> complex:
    """(1/2pi) int_0^pi (q1 + q4): the spectral shift removed by normalize_trace."""
    if Q.is_zero:
        return 0j
    f = lambda x: Q.q1(x) + Q.q4(x)
    return complex(adaptive_integrate(f, Q.breakpoints, Q.singular)) / (2 * PI)


def normalize_trace(Q: Potential) -> tuple[Potential, complex]:
    """Gauge Q to a traceless potential Q^ plus a scalar shift.

    With phi = (1/2) int_0^x (q1 + q4) and c = phi(pi)/pi the rotation by
    phi - c x fixes the boundary values, and spec(L_Q) = spec(L_{Q^}) + c.
    """
    half_trace = lambda x: 0.5 * (Q.q1(x) + Q.q4(x))
    phi = Antiderivative(half_trace, Q.breakpoints, Q.singular)
    shift = phi.total / PI
    Qt = gauge_transform(Q, lambda x: phi(x) - shift * np.asarray(x),
                         lambda x: half_trace(x) - shift)
    Qhat = replace(Qt, q1=lambda x: Qt.q1(x) - shift, q4=lambda x: Qt.q4(x) - shift,
                   label=f"traceless({Q.label})")
    return Qhat, complex(shift)


def weight_E(Q: Potential, x, literal: bool = False) -> np.ndarray:
    """Amplitude weight E(x) = exp((1/2) int_0^x (q2 - q3)).

    This is the square root of the Wronskian of the fundamental pair, which is
    what multiplies the free eigenfunctions at leading order. ``literal=True``
    instead returns (1/2) exp((1/2) int_0^x (q3 - q2)), the alternative
    normalization kept for comparison.
    """
    x = np.asarray(x, dtype=float)
    if Q.is_zero:
        return np.ones(x.shape, dtype=complex)
    key = "E_antiderivative"
    if key not in Q._cache:
        Q._cache[key] = Antiderivative(lambda t: 0.5 * (Q.q2(t) - Q.q3(t)),
                                       Q.breakpoints, Q.singular)
    I = Q._cache[key](x)
    if literal:
        return 0.5 * np.exp(-I)
    return np.exp(I)
