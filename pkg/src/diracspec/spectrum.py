"""Eigenvalues and eigenfunctions of L_{Q,U} from the characteristic determinant.

Each eigenvalue is located in the disk of radius eps around the corresponding
free eigenvalue of L_{0,U'}: the winding number of Delta around the circle
gives the multiplicity, contour moments give the zeros, and Muller's method
polishes simple zeros.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .boundary import (BoundaryError, BoundaryForm, UnperturbedSpectrum, associated_form,
                       boundary_matrix, unperturbed_spectrum)
from .potential import GridFunction, Potential, trace_shift, weight_E
from .quadrature import PI, Mesh
from .solutions import (default_mesh, endpoint_matrix, fundamental_path, integrate_system,
                        step_partition)

MIN_SAMPLES = 256
MAX_SAMPLES = 4096
# largest phase step between neighbouring samples accepted as resolved
MAX_PHASE_STEP = np.pi / 4
MULLER_TOL = 1e-14
DOUBLE_SPLIT = 1e-7
NULL_TOL = 1e-6


class SpectrumError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpectralPoint:
    """A located eigenvalue (or a cluster of total multiplicity > 1)."""

    n: int
    lam: complex
    anchor: complex
    radius: float
    multiplicity: int
    residual: float
    members: tuple[complex, ...] = ()
    scale: float = 1.0
    expected: int = 1

    @property
    def deviation(self) -> float:
        return abs(self.lam - self.anchor)

    @property
    def ok(self) -> bool:
        return self.multiplicity == self.expected


def char_det(Q: Potential, U: BoundaryForm, lams, x=None) -> np.ndarray:
    """Delta(lam) = det(A + B [c s](pi, lam)) for an array of lam."""
    Y = endpoint_matrix(Q, lams, x)
    return np.linalg.det(boundary_matrix(U, Y))


def free_reference(Q: Potential, U: BoundaryForm) -> tuple[BoundaryForm, UnperturbedSpectrum]:
    """The associated form U' (columns 3-4 scaled by E(pi)) and its free spectrum."""
    E = complex(weight_E(Q, PI))
    Up = associated_form(U, E)
    return Up, unperturbed_spectrum(Up)


def _winding(vals: np.ndarray) -> tuple[int, float, np.ndarray]:
    """Winding number of a closed sampled curve (last sample != first), max step, steps."""
    steps = np.angle(np.roll(vals, -1) / vals)
    return int(np.rint(steps.sum() / (2 * np.pi))), float(np.max(np.abs(steps))), steps


def _moments(center: complex, radius: float, vals: np.ndarray, steps: np.ndarray,
             m: int, orders=(1, 2)) -> list[complex]:
    """Power sums S_k of the zeros inside the circle from sampled Delta.

    With L = log Delta continued along the circle and L~ = L - i m theta
    periodic, S_k = m c^k - k/(2 pi i) * int L~ lam^{k-1} dlam, computed by the
    trapezoid rule (spectrally accurate for periodic analytic integrands).
    """
    K = vals.size
    th = 2 * np.pi * np.arange(K) / K
    phase = np.angle(vals[0]) + np.concatenate([[0.0], np.cumsum(steps[:-1])])
    Lt = np.log(np.abs(vals)) + 1j * (phase - m * th)
    lam = center + radius * np.exp(1j * th)
    dlam = 1j * radius * np.exp(1j * th)
    out = []
    for k in orders:
        T = np.mean(Lt * lam ** (k - 1) * dlam) * 2 * np.pi
        out.append(m * center ** k - k * T / (2j * np.pi))
    return out


def muller(f, x0: complex, x1: complex, x2: complex, tol: float, max_iter: int = 40) -> complex:
    """Muller's method from three starting points; stops when |f| <= tol."""
    f0, f1, f2 = f(x0), f(x1), f(x2)
    for _ in range(max_iter):
        if abs(f2) <= tol:
            break
        h1, h2 = x1 - x0, x2 - x1
        if h1 == 0 or h2 == 0 or h1 + h2 == 0:
            break
        d1, d2 = (f1 - f0) / h1, (f2 - f1) / h2
        a = (d2 - d1) / (h2 + h1)
        b = a * h2 + d2
        disc = np.sqrt(b * b - 4 * f2 * a + 0j)
        den = b + disc if abs(b + disc) >= abs(b - disc) else b - disc
        if den == 0:
            break
        dx = -2 * f2 / den
        x0, x1, x2 = x1, x2, x2 + dx
        f0, f1, f2 = f1, f2, f(x2)
        if abs(dx) <= 1e-15 * max(1.0, abs(x2)):
            break
    return complex(x2)


def _circle(center, radius, K):
    return center + radius * np.exp(2j * np.pi * np.arange(K) / K)


def localize(Q: Potential, U: BoundaryForm, n_range: Iterable[int], eps: float = 0.4,
             samples: int = MIN_SAMPLES) -> list[SpectralPoint]:
    """Eigenvalues in the disks |lam - lam_n^0| < eps around the free spectrum of U'.

    For a double free spectrum the index counts clusters (anchor kappa + 2n)
    whose total multiplicity is 2; the two zeros are reported in ``members``
    and ``lam`` is their barycenter. Anchors include the trace shift
    (1/2pi) int (q1 + q4), which vanishes when q4 = -q1.
    """
    Up, sp = free_reference(Q, U)
    if not sp.classification.regularity.is_regular:
        raise BoundaryError(f"boundary form is {sp.classification.regularity.value}; "
                            "eigenvalue localization needs a regular form")
    if 2 * eps >= sp.separation():
        raise SpectrumError(f"eps = {eps} is too large: disks around the free spectrum overlap "
                            f"(minimal separation {sp.separation():.3g})")
    pts = sp.points(n_range)
    if not pts:
        return []
    anchors = np.array([p[1] for p in pts]) + trace_shift(Q)
    scale = float(np.max(np.abs(anchors.real)) + eps + np.max(np.abs(anchors.imag)) + 1)
    x = None if Q.is_zero else _partition(Q, scale)
    f = lambda lam: char_det(Q, U, lam, x)
    g = lambda z: complex(f(np.array([z]))[0])

    out = []
    radii = np.full(anchors.size, float(eps))
    K = np.full(anchors.size, samples)
    todo = list(range(anchors.size))
    results: dict[int, tuple] = {}
    attempts = np.zeros(anchors.size, int)
    while todo:
        lam_all = np.concatenate([_circle(anchors[i], radii[i], K[i]) for i in todo])
        vals_all = f(lam_all)
        nxt = []
        pos = 0
        for i in todo:
            vals = vals_all[pos:pos + K[i]]
            pos += K[i]
            m, step, steps = _winding(vals)
            near_zero = np.min(np.abs(vals)) <= 1e-9 * np.max(np.abs(vals))
            if (step > MAX_PHASE_STEP or near_zero) and attempts[i] < 8:
                attempts[i] += 1
                if step > MAX_PHASE_STEP and K[i] < MAX_SAMPLES:
                    K[i] *= 2
                else:
                    radii[i] *= 0.9
                nxt.append(i)
                continue
            results[i] = (vals, steps, m)
        todo = nxt

    for i, (n, _, expected) in enumerate(pts):
        anchor = anchors[i]
        vals, steps, m = results[i]
        scale_i = float(np.max(np.abs(vals)))
        tol = MULLER_TOL * scale_i
        members: tuple[complex, ...] = ()
        if m <= 0:
            lam = complex(anchor)
        elif m == 1:
            (s1,) = _moments(anchor, radii[i], vals, steps, 1, (1,))
            d = 1e-4 * radii[i]
            lam = muller(g, s1 - d, s1 + d, s1, tol)
            if abs(lam - anchor) > radii[i]:
                lam = s1
            members = (lam,)
        else:
            s1, s2 = _moments(anchor, radii[i], vals, steps, m)
            lam = s1 / m
            if m == 2:
                disc = np.sqrt(2 * s2 - s1 * s1 + 0j)
                z1, z2 = (s1 + disc) / 2, (s1 - disc) / 2
                d = 1e-4 * max(abs(z1 - z2), 1e-6)
                z1 = muller(g, z1 - d, z1 + d, z1, tol)
                z2 = muller(g, z2 - d, z2 + d, z2, tol)
                if abs(z1 - z2) > DOUBLE_SPLIT:
                    lam = 0.5 * (z1 + z2)
                else:
                    # below ~sqrt(machine eps) a double zero and a tiny split are indistinguishable
                    z1 = z2 = lam
                members = (complex(z1), complex(z2))
        probe = np.array(members) if members else np.array([lam])
        res = float(np.max(np.abs(f(probe)))) / scale_i
        out.append(SpectralPoint(int(n), complex(lam), complex(anchor), float(radii[i]), int(m),
                                 res, members, scale_i, expected))
    return out


def _partition(Q: Potential, scale: float):
    return step_partition(Q, scale)


@dataclass(frozen=True)
class GlobalCount:
    count: int
    rect: tuple[float, float, float, float]
    samples: int


def global_count_check(Q: Potential, U: BoundaryForm,
                       rect: Sequence[float] = (-5.5, 5.5, -1.0, 1.0),
                       spacing: float = 0.02, max_rounds: int = 14) -> GlobalCount:
    """Number of zeros of Delta inside the rectangle (xmin, xmax, ymin, ymax)."""
    x0, x1, y0, y1 = map(float, rect)
    for attempt in range(4):
        corners = [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)]
        path = []
        for a, b in zip(corners, corners[1:] + corners[:1]):
            k = max(8, int(np.ceil(abs(b - a) / spacing)))
            path.append(a + (b - a) * np.arange(k) / k)
        lam = np.concatenate(path)
        scale = float(max(abs(x0), abs(x1)) + max(abs(y0), abs(y1)) + 1)
        xs = None if Q.is_zero else _partition(Q, scale)
        vals = char_det(Q, U, lam, xs)
        for _ in range(max_rounds):
            steps = np.angle(np.roll(vals, -1) / vals)
            bad = np.abs(steps) > np.pi / 6
            if not np.any(bad):
                break
            idx = np.nonzero(bad)[0]
            mids = 0.5 * (lam[idx] + np.roll(lam, -1)[idx])
            mvals = char_det(Q, U, mids, xs)
            lam = np.insert(lam, idx + 1, mids)
            vals = np.insert(vals, idx + 1, mvals)
        if np.min(np.abs(vals)) > 1e-9 * np.max(np.abs(vals)):
            m, _, _ = _winding(vals)
            return GlobalCount(m, (x0, x1, y0, y1), lam.size)
        # a zero sits on the contour: enlarge the rectangle by 5 %
        cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        x0, x1 = cx + 1.05 * (x0 - cx), cx + 1.05 * (x1 - cx)
        y0, y1 = cy + 1.05 * (y0 - cy), cy + 1.05 * (y1 - cy)
    raise SpectrumError("could not keep the contour away from zeros of Delta")


# eigenfunctions ------------------------------------------------------------------


def _unit(y: GridFunction) -> GridFunction:
    nrm = y.norm(2)
    # fix the phase: the largest sample is real positive
    v = y.values
    k = np.unravel_index(np.argmax(np.abs(v)), v.shape)
    ph = v[k] / abs(v[k])
    return y.with_values(v / (nrm * ph))


def eigenfunction(Q: Potential, U: BoundaryForm, point: SpectralPoint | complex,
                  mesh: Mesh | None = None) -> list[GridFunction]:
    """Unit eigenfunctions for a spectral point (a basis of its root subspace).

    For a cluster with two distinct zeros both eigenfunctions are returned; a
    genuinely double zero with a one-dimensional eigenspace contributes the
    eigenfunction and an associated function y1, (L - lam) y1 = y0, <y1, y0> = 0.
    """
    if isinstance(point, SpectralPoint):
        lams = list(point.members) or [point.lam]
    else:
        lams = [complex(point)]
    mesh = mesh or default_mesh(Q, np.array(lams))
    out: list[GridFunction] = []
    for i, lam in enumerate(lams):
        if any(abs(lam - other) <= 1e-6 for other in lams[:i]):
            continue
        Y = fundamental_path(Q, lam, mesh)
        M = boundary_matrix(U, Y[-1])
        _, s, vh = np.linalg.svd(M)
        if s[1] > NULL_TOL * max(s[0], 1.0):
            raise SpectrumError(f"lambda = {lam} is not an eigenvalue "
                                f"(smallest singular value {s[1]:.2e} of the boundary matrix)")
        nulls = [np.conj(vh[k]) for k in range(2) if s[k] <= NULL_TOL * max(s[0], 1.0)]
        for g in nulls:
            y = GridFunction(mesh.x, Y @ g, mesh.weights)
            for prev in out:
                y = y - prev * y.inner(prev)
            out.append(_unit(y))
    want = point.multiplicity if isinstance(point, SpectralPoint) else 1
    if len(out) < want:
        # Jordan chain: solve (L - lam) y1 = y0 with the boundary conditions
        lam = lams[0]
        y0 = out[0]
        part = integrate_system(Q, lam, [0, 0], forcing=y0, mesh=mesh)
        Y = fundamental_path(Q, lam, mesh)
        M = boundary_matrix(U, Y[-1])
        rhs = -U.apply(part.values[0], part.values[-1])
        beta, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        y1 = part.with_values(part.values + Y @ beta)
        y1 = y1 - y0 * y1.inner(y0)
        out.append(y1)
    return out


# adjoint problem --------------------------------------------------------------------

_S = np.array([[0.0, -1.0], [1.0, 0.0]])
# [f, g] = G^H K F with F = (f(0), f(pi)) for the Lagrange bracket f1 g2* - f2 g1* |_0^pi
_K = scipy.linalg.block_diag(-_S, _S)


@dataclass(frozen=True)
class AdjointProblem:
    Q: Potential
    U: BoundaryForm
    relation_residual: float
    literal_relation_holds: bool


def adjoint_problem(Q: Potential, U: BoundaryForm) -> AdjointProblem:
    """The adjoint operator L* = L_{Q*, U*} with Q* the conjugate transpose.

    U* annihilates K F for every boundary vector F allowed by U, where K
    represents the Lagrange bracket; equivalently A S A*^H = B S B*^H with
    S = [[0, -1], [1, 0]]. Whether the relation with S replaced by the flip
    J = [[0, 1], [1, 0]] holds is reported as ``literal_relation_holds``.
    """
    N = scipy.linalg.null_space(U.matrix)
    if N.shape[1] != 2:
        raise BoundaryError("boundary form must have rank 2")
    Ustar = (_K @ N).conj().T
    # tidy the representation: row-reduce so the form is comparable across calls
    Ah, Bh = Ustar[:, :2], Ustar[:, 2:]
    rel = U.A @ _S @ Ah.conj().T - U.B @ _S @ Bh.conj().T
    J = np.array([[0.0, 1.0], [1.0, 0.0]])
    lit = U.A @ J @ Ah.conj().T - U.B @ J @ Bh.conj().T
    sc = max(1.0, float(np.abs(U.matrix).max()))
    return AdjointProblem(Q.adjoint(), BoundaryForm(Ustar, label=f"{U.label}*"),
                          float(np.abs(rel).max()) / sc, bool(np.abs(lit).max() <= 1e-10 * sc))


@dataclass
class Eigenpair:
    """Eigen- (or root-) functions y of L and z of L* with <y_i, z_j> = delta_ij."""

    point: SpectralPoint
    y: list[GridFunction]
    z: list[GridFunction]
    alpha: complex = field(default=1.0)


def adjoint_eigenfunctions(Q: Potential, U: BoundaryForm, points: Sequence[SpectralPoint],
                           mesh: Mesh | None = None) -> list[Eigenpair]:
    """Eigenpairs (y_n, z_n) with z_n rescaled so that <y_n, z_n> = 1.

    ``alpha`` records <y_n, z_n> for unit y_n and unit z_n before rescaling.
    """
    adj = adjoint_problem(Q, U)
    if mesh is None:
        mesh = default_mesh(Q, np.array([p.lam for p in points]))
    out = []
    for p in points:
        ys = eigenfunction(Q, U, p, mesh)
        members = tuple(np.conj(m) for m in p.members)
        pa = SpectralPoint(p.n, np.conj(p.lam), np.conj(p.anchor), p.radius, p.multiplicity,
                           p.residual, members, p.scale, p.expected)
        zs = eigenfunction(adj.Q, adj.U, pa, mesh)
        G = np.array([[y.inner(z) for z in zs] for y in ys])
        alpha = G[0, 0] if G.size == 1 else complex(np.linalg.det(G))
        C = np.conj(np.linalg.inv(G))
        Z = np.stack([z.values for z in zs], -1) @ C
        zs = [zs[0].with_values(Z[..., k]) for k in range(Z.shape[-1])]
        out.append(Eigenpair(p, ys, zs, complex(alpha)))
    return out
