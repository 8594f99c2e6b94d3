"""Boundary forms U(y) = A y(0) + B y(pi) and the free operator L_0 = -B d/dx.

The free fundamental pair is c0 = (cos lx, -sin lx), s0 = (sin lx, cos lx), and
everything about L_{0,U} follows from the 2x2 minors J_ab of the 2x4 matrix U.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .potential import GridFunction
from .quadrature import PI, Mesh

# relative thresholds for "zero" witnesses and a vanishing discriminant
WITNESS_TOL = 1e-12
DISCRIMINANT_TOL = 1e-9
NEAR_EIGEN_TOL = 1e-10


class RegularityClass(enum.Enum):
    STRONGLY_REGULAR = "StronglyRegular"
    REGULAR_NOT_STRONG = "RegularNotStrong"
    NONDEGENERATE_ONLY = "NondegenerateOnly"
    DEGENERATE = "Degenerate"

    @property
    def is_regular(self) -> bool:
        return self in (RegularityClass.STRONGLY_REGULAR, RegularityClass.REGULAR_NOT_STRONG)


class BoundaryError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryForm:
    """Two boundary conditions given by the rows of a 2x4 complex matrix."""

    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        U = np.array(self.matrix, dtype=complex)
        if U.shape != (2, 4):
            raise BoundaryError(f"boundary matrix must be 2x4, got shape {U.shape}")
        if not np.all(np.isfinite(U)):
            raise BoundaryError("boundary matrix has non-finite entries")
        U.setflags(write=False)
        object.__setattr__(self, "matrix", U)

    @property
    def A(self) -> np.ndarray:
        return self.matrix[:, :2]

    @property
    def B(self) -> np.ndarray:
        return self.matrix[:, 2:]

    @property
    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.matrix))

    def apply(self, y0: np.ndarray, ypi: np.ndarray) -> np.ndarray:
        """U(y) from the boundary values y(0), y(pi)."""
        return self.A @ np.asarray(y0) + self.B @ np.asarray(ypi)

    @classmethod
    def preset(cls, name: str, alpha: float = 0.5) -> "BoundaryForm":
        name = name.lower().replace("_", "-")
        if name == "dirichlet":
            rows = [[1, 0, 0, 0], [0, 0, 1, 0]]
        elif name == "dirichlet-neumann":
            rows = [[1, 0, 0, 0], [0, 0, 0, 1]]
        elif name == "periodic":
            rows = [[1, 0, -1, 0], [0, 1, 0, -1]]
        elif name == "antiperiodic":
            rows = [[1, 0, 1, 0], [0, 1, 0, 1]]
        elif name == "quasiperiodic":
            # y(pi) = exp(i pi alpha) y(0)
            e = np.exp(1j * PI * alpha)
            rows = [[e, 0, -1, 0], [0, e, 0, -1]]
            name = f"quasiperiodic({alpha:g})"
        else:
            raise BoundaryError(f"unknown boundary preset {name!r}")
        return cls(np.array(rows, dtype=complex), label=name)


PRESETS = ("dirichlet", "dirichlet-neumann", "periodic", "antiperiodic", "quasiperiodic")


def minors(U: BoundaryForm) -> dict[tuple[int, int], complex]:
    """All ordered 2x2 minors J_ab (1-based columns); J_ba = -J_ab."""
    M = U.matrix
    J = {}
    for a in range(4):
        for b in range(4):
            if a != b:
                J[(a + 1, b + 1)] = complex(M[0, a] * M[1, b] - M[0, b] * M[1, a])
    return J


def associated_form(U: BoundaryForm, E: complex) -> BoundaryForm:
    """U' whose columns 3 and 4 are multiplied by E = E(pi)."""
    M = np.array(U.matrix)
    M[:, 2:] *= E
    return BoundaryForm(M, label=f"{U.label}'" if U.label else "")


def quadratic(U: BoundaryForm, E: complex = 1.0) -> tuple[complex, complex, complex]:
    """Coefficients (a, 2b, c) of a z^2 + 2b z + c, z = exp(i pi lambda), for L_{0,U'}."""
    J = minors(associated_form(U, E) if E != 1 else U)
    a = J[(1, 4)] - J[(2, 3)] - 1j * (J[(1, 3)] + J[(2, 4)])
    c = J[(1, 4)] - J[(2, 3)] + 1j * (J[(1, 3)] + J[(2, 4)])
    b = J[(1, 2)] + J[(3, 4)]
    return a, 2 * b, c


@dataclass(frozen=True)
class Classification:
    regularity: RegularityClass
    witnesses: tuple[complex, complex]
    coefficients: tuple[complex, complex, complex]
    discriminant: complex
    near_degenerate: bool = False

    def as_dict(self) -> dict:
        pair = lambda z: [float(np.real(z)), float(np.imag(z))]
        return {
            "class": self.regularity.value,
            "witnesses": [pair(w) for w in self.witnesses],
            "quadratic": [pair(c) for c in self.coefficients],
            "discriminant": pair(self.discriminant),
            "near_degenerate": self.near_degenerate,
        }


def classify(U: BoundaryForm, E: complex = 1.0) -> Classification:
    """Regularity class of U; strong regularity is judged for the form U'."""
    if E == 0:
        raise BoundaryError("the weight E(pi) must be nonzero")
    a, b2, c = quadratic(U, E)
    b = b2 / 2
    J = minors(U)
    scale = max([abs(v) for v in J.values()] + [abs(E), 1e-300])
    zero = lambda w: abs(w) <= WITNESS_TOL * scale * max(1.0, abs(E)) ** 2
    disc = b * b - a * c
    witnesses = (a, c)
    nonzero = sum(not zero(w) for w in (a, b, c))
    if nonzero < 2:
        cls = RegularityClass.DEGENERATE
    elif zero(a) or zero(c):
        cls = RegularityClass.NONDEGENERATE_ONLY
    else:
        dscale = max(abs(a), abs(b), abs(c)) ** 2
        near = abs(disc) <= DISCRIMINANT_TOL * dscale
        cls = RegularityClass.REGULAR_NOT_STRONG if near else RegularityClass.STRONGLY_REGULAR
        return Classification(cls, witnesses, (a, b2, c), disc,
                              near_degenerate=near and disc != 0)
    return Classification(cls, witnesses, (a, b2, c), disc)


def delta0(U: BoundaryForm, lam) -> np.ndarray:
    """Characteristic determinant of L_{0,U}."""
    lam = np.asarray(lam, dtype=complex)
    a, b2, c = quadratic(U)
    z = np.exp(1j * PI * lam)
    return 0.5 * a * z + 0.5 * b2 + 0.5 * c / z


def free_fundamental(lam, x) -> np.ndarray:
    """[c0 s0](x) = exp(lam x B) with shape broadcast(lam, x) + (2, 2)."""
    t = np.asarray(lam, dtype=complex) * np.asarray(x)
    co, si = np.cos(t), np.sin(t)
    return np.stack([np.stack([co, si], -1), np.stack([-si, co], -1)], -2)


def boundary_matrix(U: BoundaryForm, Y_pi: np.ndarray) -> np.ndarray:
    """M = A + B Y(pi) acting on the coefficients of y = g1 c + g2 s."""
    return U.A + U.B @ Y_pi


def m0_matrix(U: BoundaryForm, lam) -> np.ndarray:
    return boundary_matrix(U, free_fundamental(lam, PI))


# free spectrum --------------------------------------------------------------


def _normalize_re(k: complex) -> complex:
    """Shift by an even integer so that Re k lies in (-1, 1]."""
    r = np.real(k)
    m = np.ceil((r - 1.0) / 2.0)
    k = k - 2 * m
    if np.real(k) <= -1.0:
        k += 2
    return complex(k)


@dataclass(frozen=True)
class UnperturbedSpectrum:
    """Eigenvalues of L_{0,U'}: lambda_n = kappa_{n mod 2} + n (two series), or clusters.

    kind is 'two-series' (strongly regular), 'double' (regular, coinciding
    roots; points kappa_0 + 2m of multiplicity 2), 'single' (one root only,
    points kappa_0 + 2m) or 'empty'.
    """

    kind: str
    roots: tuple[complex, ...]
    kappa: tuple[complex, ...]
    classification: Classification

    def eigenvalue(self, n: int) -> complex:
        if self.kind == "two-series":
            return self.kappa[n % 2] + n
        if self.kind in ("double", "single"):
            return self.kappa[0] + 2 * n
        raise BoundaryError("the free problem has no eigenvalues")

    @property
    def multiplicity(self) -> int:
        return 2 if self.kind == "double" else 1

    def points(self, n_range: Iterable[int]) -> list[tuple[int, complex, int]]:
        """(index, eigenvalue, multiplicity) for each index in ``n_range``."""
        return [(int(n), self.eigenvalue(int(n)), self.multiplicity) for n in n_range]

    @property
    def strip_halfwidth(self) -> float:
        return float(max(abs(np.imag(k)) for k in self.kappa)) if self.kappa else 0.0

    def separation(self) -> float:
        """Minimal distance between distinct points of the free spectrum."""
        if self.kind == "two-series":
            pts = [self.kappa[0], self.kappa[1] + 1, self.kappa[0] + 2]
            d = [abs(pts[0] - pts[1]), abs(pts[1] - pts[2])]
            return float(min(d))
        return 2.0


def _mu(z: complex) -> complex:
    """-(i/pi) Log z with Re in (-1, 1]."""
    return _normalize_re(complex(-1j / PI * np.log(complex(z))))


def unperturbed_spectrum(U: BoundaryForm, E: complex = 1.0) -> UnperturbedSpectrum:
    """Spectrum of L_{0,U'} from the roots of a z^2 + 2b z + c = 0."""
    cl = classify(U, E)
    a, b2, c = cl.coefficients
    if cl.regularity is RegularityClass.DEGENERATE:
        raise BoundaryError("degenerate boundary form: the free determinant vanishes identically "
                            "or has no zeros")
    if cl.regularity is RegularityClass.NONDEGENERATE_ONLY:
        z = -b2 / a if abs(a) > abs(c) else -c / b2
        return UnperturbedSpectrum("single", (z,), (_normalize_re(_mu(z)),), cl)
    sq = np.sqrt(complex(b2 * b2 - 4 * a * c))
    # stable quadratic roots
    q = -0.5 * (b2 + (sq if np.real(np.conj(b2) * sq) >= 0 else -sq))
    if q == 0:
        r1 = r2 = 0.0
    else:
        r1, r2 = q / a, c / q
    if cl.regularity is RegularityClass.REGULAR_NOT_STRONG:
        # the double root is -b/a; use it rather than the noisy individual roots
        z = -b2 / (2 * a)
        k0 = _normalize_re(_mu(z))
        return UnperturbedSpectrum("double", (z, z), (k0, _normalize_re(1 + k0)), cl)
    mus = sorted([(r1, _mu(r1)), (r2, _mu(r2))], key=lambda t: (np.real(t[1]), np.imag(t[1])))
    (z0, m0), (z1, m1) = mus
    return UnperturbedSpectrum("two-series", (z0, z1),
                               (_normalize_re(m0), _normalize_re(1 + m1)), cl)


# free eigenfunctions ---------------------------------------------------------


@dataclass(frozen=True)
class FreeFunction:
    """y(x) = (a0 + a1 x) c0(x) + (b0 + b1 x) s0(x) for the free pair at ``lam``."""

    lam: complex
    a0: complex
    b0: complex
    a1: complex = 0.0
    b1: complex = 0.0
    kind: str = "eigen"

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        F = free_fundamental(self.lam, x)
        ca = self.a0 + self.a1 * x
        cb = self.b0 + self.b1 * x
        return F[..., :, 0] * ca[..., None] + F[..., :, 1] * cb[..., None]

    def derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        F = free_fundamental(self.lam, x)
        c, s = F[..., :, 0], F[..., :, 1]
        ca = self.a0 + self.a1 * x
        cb = self.b0 + self.b1 * x
        return (self.a1 * c - self.lam * ca[..., None] * s
                + self.b1 * s + self.lam * cb[..., None] * c)

    def combine(self, other: "FreeFunction", t: complex) -> "FreeFunction":
        """self + t * other (same lambda)."""
        return FreeFunction(self.lam, self.a0 + t * other.a0, self.b0 + t * other.b0,
                            self.a1 + t * other.a1, self.b1 + t * other.b1, self.kind)

    def scaled(self, t: complex) -> "FreeFunction":
        return FreeFunction(self.lam, t * self.a0, t * self.b0, t * self.a1, t * self.b1,
                            self.kind)

    def sample(self, mesh: Mesh | None = None) -> GridFunction:
        if mesh is None:
            mesh = Mesh.for_frequency(abs(self.lam) + 1)
        return GridFunction(mesh.x, self(mesh.x), mesh.weights)


def _fine_mesh(lam) -> Mesh:
    return Mesh.for_frequency(abs(np.real(lam)) + abs(np.imag(lam)) + 2, density=2.0)


def _free_inner(f: FreeFunction, g: FreeFunction) -> complex:
    mesh = _fine_mesh(max(abs(f.lam), abs(g.lam)))
    return f.sample(mesh).inner(g.sample(mesh))


def _null_vectors(M: np.ndarray, tol: float = 1e-8) -> list[np.ndarray]:
    _, s, vh = np.linalg.svd(M)
    scale = max(s[0], 1.0)
    return [np.conj(vh[k]) for k in range(2) if s[k] <= tol * scale]


def unperturbed_eigenfunctions(U: BoundaryForm, n: int, E: complex = 1.0) -> list[FreeFunction]:
    """Unit eigenfunctions of L_{0,U'} at the n-th point, with a Jordan partner if needed.

    For a double point with a one-dimensional eigenspace the second entry is the
    associated function y1 with (L_0 - lambda) y1 = y0 and <y1, y0> = 0.
    """
    Up = associated_form(U, E) if E != 1 else U
    sp = unperturbed_spectrum(Up)
    lam = sp.eigenvalue(n)
    M = m0_matrix(Up, lam)
    nulls = _null_vectors(M)
    if not nulls:
        raise BoundaryError(f"no free eigenfunction found at lambda = {lam}")
    out = []
    for g in nulls:
        y = FreeFunction(lam, g[0], g[1])
        for prev in out:
            y = y.combine(prev, -_free_inner(y, prev))
        y = y.scaled(1 / np.sqrt(_free_inner(y, y).real))
        out.append(y)
    if sp.kind == "double" and len(out) == 1:
        y0 = out[0]
        g1, g2 = y0.a0, y0.b0
        # x-dependent part g2 x c0 - g1 x s0 solves (L_0 - lam) w = y0 without the boundary terms
        w = FreeFunction(lam, 0, 0, g2, -g1)
        rhs = -Up.B @ w(PI)
        beta, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        y1 = FreeFunction(lam, beta[0], beta[1], g2, -g1, kind="associated")
        y1 = y1.combine(y0, -_free_inner(y1, y0))
        out.append(y1)
    return out


# free resolvent ----------------------------------------------------------------

_VP = np.array([1, 1j]) / np.sqrt(2)   # B v+ = i v+
_VM = np.array([1, -1j]) / np.sqrt(2)  # B v- = -i v-


def _phi12(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """phi1 = int_0^1 e^{zu} du and phi2 = int_0^1 u e^{zu} du, stable near 0."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 0.5
    p1 = np.empty_like(z)
    p2 = np.empty_like(z)
    zs = z[small]
    t1 = np.zeros_like(zs)
    t2 = np.zeros_like(zs)
    term = np.ones_like(zs)
    for k in range(22):
        if k:
            term = term * zs / k
        t1 += term / (k + 1)
        t2 += term / (k + 2)
    p1[small], p2[small] = t1, t2
    zb = z[~small]
    ez = np.exp(zb)
    p1[~small] = (ez - 1) / zb
    p2[~small] = (ez * (zb - 1) + 1) / zb ** 2
    return p1, p2


def _exp_convolution(x: np.ndarray, f: np.ndarray, omega: complex, forward: bool) -> np.ndarray:
    """Exact running integrals of exp(omega (x - t)) f(t) for piecewise linear f.

    forward: int_0^x (requires Re omega <= 0); backward: int_x^pi (Re omega >= 0).
    ``f`` has shape (n, ...) and the recursion is vectorized over trailing axes.
    """
    h = np.diff(x)
    out = np.zeros(f.shape, dtype=complex)
    shape = (-1,) + (1,) * (f.ndim - 1)
    if forward:
        p1, p2 = _phi12(omega * h)
        dec = np.exp(omega * h).reshape(shape)
        a = (h * (p1 - p2)).reshape(shape)  # weight of f_{k+1}
        b = (h * p2).reshape(shape)         # weight of f_k
        for k in range(h.size):
            out[k + 1] = dec[k] * out[k] + a[k] * f[k + 1] + b[k] * f[k]
    else:
        p1, p2 = _phi12(-omega * h)
        dec = np.exp(-omega * h).reshape(shape)
        a = (h * (p1 - p2)).reshape(shape)  # weight of f_k
        b = (h * p2).reshape(shape)         # weight of f_{k+1}
        for k in range(h.size - 1, -1, -1):
            out[k] = dec[k] * out[k + 1] + a[k] * f[k] + b[k] * f[k + 1]
    return out


def green0_apply(U: BoundaryForm, lam: complex, f: GridFunction) -> GridFunction:
    """(L_{0,U} - lam)^{-1} f for the piecewise linear interpolant of f.

    Each eigen-direction of B is integrated from the end where its exponential
    decays, so large |Im lam| causes no cancellation.
    """
    lam = complex(lam)
    x = f.grid
    F = np.asarray(f.values, dtype=complex)
    if F.ndim == 1 or F.shape[1] != 2:
        raise ValueError("f must be a 2-vector function")
    extra = F.shape[2:]
    h_vals, p_vals = [], []
    for v, sigma in ((_VP, 1), (_VM, -1)):
        omega = sigma * 1j * lam
        fs = np.einsum("i,ni...->n...", np.conj(v), F)
        forward = np.real(omega) <= 0
        if forward:
            p = 1j * sigma * _exp_convolution(x, fs, omega, True)
            h = np.exp(omega * x)
        else:
            p = -1j * sigma * _exp_convolution(x, fs, omega, False)
            h = np.exp(omega * (x - PI))
        h_vals.append(h)
        p_vals.append(p)
    V = np.stack([_VP, _VM], 1)  # columns v+, v-
    H0 = V * np.array([h_vals[0][0], h_vals[1][0]])
    Hpi = V * np.array([h_vals[0][-1], h_vals[1][-1]])
    S = U.A @ H0 + U.B @ Hpi
    P0 = np.einsum("is,s...->i...", V, np.stack([p_vals[0][0], p_vals[1][0]]))
    Ppi = np.einsum("is,s...->i...", V, np.stack([p_vals[0][-1], p_vals[1][-1]]))
    rhs = -(np.einsum("ij,j...->i...", U.A, P0) + np.einsum("ij,j...->i...", U.B, Ppi))
    sv = np.linalg.svd(S, compute_uv=False)
    if sv[-1] <= NEAR_EIGEN_TOL * max(sv[0], np.abs(U.matrix).max()):
        raise BoundaryError(f"lambda = {lam} is (numerically) an eigenvalue of the free problem")
    coef = np.linalg.solve(S, rhs.reshape(2, -1)).reshape((2,) + extra)
    ys = [h_vals[k].reshape((-1,) + (1,) * len(extra)) * coef[k] + p_vals[k] for k in range(2)]
    y = np.einsum("is,ns...->ni...", V, np.stack(ys, 1))
    return GridFunction(x, y, f.weights)


@dataclass
class ResolventScan:
    taus: np.ndarray
    norms: np.ndarray
    slope: float
    p: float
    q: float
    expected_slope: float = field(init=False)

    def __post_init__(self):
        self.expected_slope = -1.0 + 1.0 / self.p - (0.0 if np.isinf(self.q) else 1.0 / self.q)


def _vector_norm(y: np.ndarray, w: np.ndarray, p: float) -> np.ndarray:
    a = np.linalg.norm(y, axis=1)
    if np.isinf(p):
        return a.max(axis=0)
    return (w[:, None] * a ** p).sum(axis=0) ** (1 / p)


def resolvent0_norm_scan(U: BoundaryForm, taus=(4, 8, 16, 32), p: float = 2.0,
                         q: float = 2.0, n_probes: int = 64, seed: int = 0,
                         grid_size: int = 4097) -> ResolventScan:
    """Lower estimates of ||R_0(i tau)||_{L^p -> L^q} by maximizing over probe functions.

    Half of the probes are narrow hat functions (near-extremal for p = 1), half
    are random low-degree trigonometric polynomials (near-extremal for p = 2).
    """
    sp = unperturbed_spectrum(U)
    taus = np.asarray(taus, dtype=float)
    if np.any(np.abs(taus) <= sp.strip_halfwidth):
        raise BoundaryError(f"|tau| must exceed the spectral strip half-width "
                            f"{sp.strip_halfwidth:.3g}")
    x = np.linspace(0.0, PI, grid_size)
    h = x[1] - x[0]
    rng = np.random.default_rng(seed)
    n_bump = n_probes // 2
    directions = [np.array([1, 0]), np.array([0, 1]), _VP, _VM]
    centers = np.linspace(0, PI, n_bump // len(directions) + 2)[1:-1]
    probes = []
    for t in centers:
        hat = np.clip(1 - np.abs(x - t) / (2 * h), 0, None)
        probes.extend(hat[:, None] * d[None, :] for d in directions)
    for k in range(n_probes - len(probes)):
        deg = k % 5
        coef = rng.normal(size=(2, deg + 1, 2)) + 1j * rng.normal(size=(2, deg + 1, 2))
        m = np.arange(deg + 1)
        basis = np.stack([np.cos(np.outer(x, m)), np.sin(np.outer(x, m))], 0)  # (2, n, deg+1)
        probes.append(np.einsum("knm,kmi->ni", basis, coef))
    F = np.stack(probes, -1)  # (n, 2, probes)
    w = GridFunction(x, x).weights
    fn = _vector_norm(F, w, p)
    norms = []
    for tau in taus:
        y = green0_apply(U, 1j * tau, GridFunction(x, F, w)).values
        norms.append(np.max(_vector_norm(y, w, q) / fn))
    norms = np.asarray(norms)
    slope = float(np.polyfit(np.log(np.abs(taus)), np.log(norms), 1)[0])
    return ResolventScan(taus, norms, slope, p, q)
