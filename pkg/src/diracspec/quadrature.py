"""Composite Gauss-Legendre meshes on [0, pi] and the integrals built on them."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre

PI = np.pi

# geometric grading toward an integrable endpoint singularity
GRADING_RATIO = 0.15
GRADING_LEVELS = 24


@lru_cache(maxsize=None)
def gauss_legendre(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the m-point Gauss-Legendre rule on [-1, 1]."""
    x, w = legendre.leggauss(m)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def integration_matrix(m: int) -> np.ndarray:
    """S[i, j] = integral over [-1, xi_i] of the j-th Lagrange polynomial on the GL nodes."""
    xi, _ = gauss_legendre(m)
    V = legendre.legvander(xi, m - 1)
    Vint = np.empty_like(V)
    for k in range(m):
        c = np.zeros(m)
        c[k] = 1.0
        Vint[:, k] = legendre.legval(xi, legendre.legint(c, lbnd=-1))
    S = np.linalg.solve(V.T, Vint.T).T
    S.setflags(write=False)
    return S


def graded_edges(breakpoints=(), singular=(), n_uniform: int = 8) -> np.ndarray:
    """Panel edges: uniform panels, forced breakpoints, geometric grading at singular ends."""
    edges = [np.linspace(0.0, PI, n_uniform + 1)]
    bp = np.asarray([b for b in breakpoints if 0.0 < b < PI], dtype=float)
    if bp.size:
        edges.append(bp)
    h0 = PI / n_uniform
    levels = h0 * GRADING_RATIO ** np.arange(1, GRADING_LEVELS + 1)
    for s in singular:
        if np.isclose(s, 0.0):
            edges.append(levels)
        elif np.isclose(s, PI):
            edges.append(PI - levels)
        else:
            # interior singular point: grade from both sides
            edges.append(np.array([s]))
            edges.append(s - levels[s - levels > 0])
            edges.append(s + levels[s + levels < PI])
    e = np.unique(np.concatenate(edges))
    # merge panels that are numerically empty
    keep = np.concatenate([[True], np.diff(e) > 1e-14 * PI])
    e = e[keep]
    e[0], e[-1] = 0.0, PI
    return e


class Mesh:
    """Composite Gauss-Legendre mesh on [0, pi].

    The point set ``x`` interleaves panel edges with the m interior nodes of
    every panel: ``x = [e0, n(0,0..m-1), e1, n(1,0..m-1), ..., eP]``.
    Quadrature weights vanish on the edges, so ``weights @ f(x)`` is the
    composite GL rule while ``x`` still contains both endpoints.
    """

    def __init__(self, edges, m: int = 16):
        edges = np.asarray(edges, dtype=float)
        if edges[0] != 0.0 or edges[-1] != PI or np.any(np.diff(edges) <= 0):
            raise ValueError("panel edges must increase strictly from 0 to pi")
        self.edges = edges
        self.m = int(m)
        xi, wi = gauss_legendre(self.m)
        a, b = edges[:-1], edges[1:]
        self.half = 0.5 * (b - a)
        self.nodes = 0.5 * (a + b)[:, None] + self.half[:, None] * xi[None, :]
        self.node_weights = self.half[:, None] * wi[None, :]
        P = self.n_panels
        x = np.empty(P * (m + 1) + 1)
        w = np.zeros_like(x)
        x[:: m + 1] = edges
        idx = (np.arange(P)[:, None] * (m + 1) + 1 + np.arange(m)[None, :]).ravel()
        x[idx] = self.nodes.ravel()
        w[idx] = self.node_weights.ravel()
        self.x = x
        self.weights = w
        self.gl_index = idx
        self.edge_index = np.arange(P + 1) * (m + 1)

    @classmethod
    def for_frequency(cls, scale: float, breakpoints=(), singular=(), m: int = 16,
                      density: float = 2.0, min_panels: int = 8) -> "Mesh":
        """Mesh resolving oscillations exp(2i*scale*x): about ``density*scale`` panels."""
        n = max(min_panels, int(np.ceil(density * abs(scale))))
        return cls(graded_edges(breakpoints, singular, n), m)

    @property
    def n_panels(self) -> int:
        return self.edges.size - 1

    @property
    def size(self) -> int:
        return self.x.size

    def integrate(self, f_nodes: np.ndarray) -> np.ndarray:
        """Integral over [0, pi] of values given at the GL nodes (shape (..., P, m))."""
        return np.sum(f_nodes * self.node_weights, axis=(-2, -1))

    def cumulative(self, f_nodes: np.ndarray) -> np.ndarray:
        """Running integral from 0, returned on every point of ``x`` (shape (..., N))."""
        f_nodes = np.asarray(f_nodes)
        S = integration_matrix(self.m)
        lead = f_nodes.shape[:-2]
        panel = np.sum(f_nodes * self.node_weights, axis=-1)
        offsets = np.concatenate([np.zeros(lead + (1,), dtype=panel.dtype),
                                  np.cumsum(panel, axis=-1)], axis=-1)
        inner = (f_nodes @ S.T) * self.half[:, None]
        out = np.empty(lead + (self.size,), dtype=np.result_type(f_nodes, float))
        out[..., self.edge_index] = offsets
        out[..., self.gl_index] = (inner + offsets[..., :-1, None]).reshape(lead + (-1,))
        return out

    def cumulative_matrix(self) -> np.ndarray:
        """Dense matrix mapping GL-node values to running integrals at the GL nodes."""
        n = self.n_panels * self.m
        eye = np.eye(n).reshape(n, self.n_panels, self.m)
        return self.cumulative(eye)[:, self.gl_index].T

    def at_nodes(self, values_x: np.ndarray) -> np.ndarray:
        """Restrict values on ``x`` to the GL nodes, shaped (..., P, m)."""
        v = np.asarray(values_x)[..., self.gl_index]
        return v.reshape(v.shape[:-1] + (self.n_panels, self.m))


def adaptive_integrate(f, breakpoints=(), singular=(), rtol: float = 1e-10,
                       m: int = 8, max_rounds: int = 60, atol: float = 1e-14,
                       max_panels: int = 1 << 16) -> complex:
    """Integral of f over [0, pi] by composite m-point GL with adaptive panel halving.

    A panel is accepted once its GL value agrees with the sum over its two halves
    within a share of ``rtol`` (or ``atol``) proportional to the panel length.
    """
    xi, wi = gauss_legendre(m)
    edges = graded_edges(breakpoints, singular, 8)
    a, b = edges[:-1], edges[1:]

    def rule(a, b):
        h = 0.5 * (b - a)
        pts = 0.5 * (a + b)[:, None] + h[:, None] * xi[None, :]
        return np.sum(np.asarray(f(pts)) * wi[None, :], axis=1) * h

    whole = rule(a, b)
    total = 0.0
    scale = max(np.sum(np.abs(whole)), 1e-300)
    for _ in range(max_rounds):
        mid = 0.5 * (a + b)
        left, right = rule(a, mid), rule(mid, b)
        refined = left + right
        err = np.abs(refined - whole)
        scale = max(scale, abs(total + np.sum(refined)))
        ok = err <= max(rtol * scale, atol) * (b - a) / PI
        total = total + np.sum(refined[ok])
        if np.all(ok) or 2 * np.count_nonzero(~ok) > max_panels:
            return total + np.sum(refined[~ok])
        a2 = np.concatenate([a[~ok], mid[~ok]])
        b2 = np.concatenate([mid[~ok], b[~ok]])
        whole = np.concatenate([left[~ok], right[~ok]])
        a, b = a2, b2
    return total + np.sum(whole)


class Antiderivative:
    """x -> integral_0^x f(t) dt from panelwise Legendre expansions of f."""

    def __init__(self, f, breakpoints=(), singular=(), n_panels: int = 32, m: int = 20):
        self.edges = graded_edges(breakpoints, singular, n_panels)
        xi, wi = gauss_legendre(m)
        a, b = self.edges[:-1], self.edges[1:]
        h = 0.5 * (b - a)
        pts = 0.5 * (a + b)[:, None] + h[:, None] * xi[None, :]
        vals = np.asarray(f(pts), dtype=complex) * np.ones_like(pts)
        # Legendre coefficients by exact GL projection
        P = legendre.legvander(xi, m - 1)
        norms = (2 * np.arange(m) + 1) / 2.0
        coef = (vals * wi[None, :]) @ P * norms[None, :]
        icoef = np.stack([legendre.legint(c, lbnd=-1) for c in coef]) * h[:, None]
        totals = legendre.legval(1.0, icoef.T)
        self._icoef = icoef
        self._offsets = np.concatenate([[0.0], np.cumsum(totals)])
        self._a, self._h = a, h
        self.total = complex(self._offsets[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self._a.size - 1)
        t = (x - self._a[k]) / self._h[k] - 1.0
        # evaluate each point's own panel series
        c = self._icoef[k]
        out = np.zeros(x.shape, dtype=complex)
        T0, T1 = np.ones_like(t), t
        out += c[..., 0] * T0
        if c.shape[-1] > 1:
            out += c[..., 1] * T1
        for n in range(2, c.shape[-1]):
            T0, T1 = T1, ((2 * n - 1) * t * T1 - (n - 1) * T0) / n
            out += c[..., n] * T1
        return out + self._offsets[k]
