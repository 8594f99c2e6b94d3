"""Checks of the asymptotic theory against computed spectra and eigenfunctions.

* eigenvalue deviations |lam_n - lam_n^0| against the Rouche radius r_n and the
  bound (M / c1) s_n(eps) built from the remainder integrals;
* eigenfunction remainders y_n - E y_n^0 and the adjoint analogue;
* Riesz-basis indicators: Gram conditioning, biorthogonality, Bessel constants;
* the Bessel-type inequality for exponentials exp(i lam_n x) with lam_n near 2n.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .boundary import BoundaryForm, delta0, unperturbed_eigenfunctions
from .potential import GridFunction, Potential, lp_norm, normalize_trace, weight_E
from .quadrature import PI, Mesh
from .solutions import conjugate_exponent, default_mesh, step_partition, upsilon_summary
from .spectrum import (SpectralPoint, adjoint_eigenfunctions, adjoint_problem, char_det,
                       eigenfunction, free_reference, localize)

N_BOUNDARY = 48
N_INTERIOR = 16
FIXED_POINT_STEPS = 4
BISECTION_STEPS = 4


class PreconditionError(ValueError):
    pass


def traceless(Q: Potential, tol: float = 1e-13) -> tuple[Potential, complex]:
    """Q itself when q4 = -q1 already, otherwise the gauge-normalized potential and shift."""
    if Q.is_zero or lp_norm(lambda x: Q.q1(x) + Q.q4(x), 1, like=Q) <= tol:
        return Q, 0.0
    return normalize_trace(Q)


def _disk_offsets(r: float) -> np.ndarray:
    """48 points on the circle of radius r and 16 inside (center and two rings)."""
    bd = r * np.exp(2j * np.pi * np.arange(N_BOUNDARY) / N_BOUNDARY)
    inner = np.concatenate([[0.0],
                            (r / 3) * np.exp(2j * np.pi * (np.arange(7) + 0.5) / 7),
                            (2 * r / 3) * np.exp(2j * np.pi * np.arange(8) / 8)])
    return np.concatenate([bd, inner])


def partial_sums(n: np.ndarray, values: np.ndarray, power: float) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative sums of |values|^power over |n| <= N for every N present."""
    N = np.unique(np.abs(n))
    vals = np.abs(values)
    if np.isinf(power):
        sums = np.array([vals[np.abs(n) <= k].max() for k in N])
    else:
        sums = np.array([np.sum(vals[np.abs(n) <= k] ** power) for k in N])
    return N, sums


def loglog_slope(n: np.ndarray, values: np.ndarray) -> float:
    sel = (np.abs(n) > 0) & (values > 0)
    if sel.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(np.abs(n[sel])), np.log(values[sel]), 1)[0])


@dataclass
class AsymptoticsReport:
    n: np.ndarray
    lam: np.ndarray
    anchor: np.ndarray
    deviation: np.ndarray
    s_eps: np.ndarray
    r: np.ndarray
    bound: np.ndarray
    c: np.ndarray
    M: float
    eps: float
    nu: float
    strong: bool
    points: list[SpectralPoint] = field(repr=False)

    @property
    def resolved(self) -> np.ndarray:
        """Indices where a Rouche radius r_n <= eps exists."""
        return np.isfinite(self.r)

    @property
    def within_r(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return self.deviation <= self.r * (1 + 1e-9) + 1e-12

    @property
    def within_bound(self) -> np.ndarray:
        return self.deviation <= self.bound * (1 + 1e-9) + 1e-12

    @property
    def multiplicities_ok(self) -> bool:
        return all(p.ok for p in self.points)

    def slope(self, nmin: int = 1) -> float:
        sel = np.abs(self.n) >= nmin
        return loglog_slope(self.n[sel], self.deviation[sel])

    def partial_sums(self, which: str = "s_eps"):
        return partial_sums(self.n, getattr(self, which), self.nu)

    def rows(self) -> list[list]:
        return [[int(k), l.real, l.imag, a.real, a.imag, d, s, r, b]
                for k, l, a, d, s, r, b in zip(self.n, self.lam, self.anchor, self.deviation,
                                               self.s_eps, self.r, self.bound)]

    HEADER = ["n", "re_lambda", "im_lambda", "re_lambda0", "im_lambda0", "deviation",
              "s_eps", "r_n", "bound"]


def _s_values(Q: Potential, centers: np.ndarray, r: np.ndarray, nu: float,
              mesh: Mesh) -> np.ndarray:
    """s_n(r) = max over the disk samples of Upsilon(pi, lam) + Upsilon_nu(lam)."""
    lam = centers[:, None] + r[:, None] * _disk_offsets(1.0)[None, :]
    u = upsilon_summary(Q, lam, nu, mesh)
    return (u["at_pi"] + u["Upsilon_nu"]).max(axis=1)


def asymptotics_report(Q: Potential, U: BoundaryForm, n_range: Iterable[int],
                       eps: float = 0.4, p: float | None = None,
                       M: float | None = None) -> AsymptoticsReport:
    """Deviations of the eigenvalues from the free spectrum of U' and their bounds.

    c1 = min over the eps-circle of |Delta^0(lam)| / |lam - lam_n^0| (squared
    distance when the free spectrum is double). Unless given, M is fitted as
    the largest ratio |Delta - Delta^0| / (Upsilon(pi, .) + Upsilon_nu) over all
    disk samples. r_n is the smallest radius where M s_n(r) < c1 r (resp. c2 r^2).

    A potential with q1 + q4 != 0 is first gauge-normalized; the reported
    eigenvalues and anchors include the spectral shift.
    """
    Q, shift = traceless(Q)
    p = Q.p_class if p is None else p
    nu = conjugate_exponent(p)
    points = localize(Q, U, n_range, eps)
    Up, sp = free_reference(Q, U)
    strong = sp.kind == "two-series"
    power = 1 if strong else 2
    n = np.array([pt.n for pt in points])
    anchors = np.array([pt.anchor for pt in points])
    lam = np.array([pt.lam for pt in points])
    dev = np.array([max(abs(m - pt.anchor) for m in (pt.members or (pt.lam,)))
                    for pt in points])
    eps_used = np.array([pt.radius for pt in points])

    offs = _disk_offsets(1.0)
    samples = anchors[:, None] + eps_used[:, None] * offs[None, :]
    mesh = default_mesh(Q, samples)
    ups = upsilon_summary(Q, samples, nu, mesh)
    sval = ups["at_pi"] + ups["Upsilon_nu"]
    s_eps = sval.max(axis=1)
    scale = float(np.max(np.abs(samples.real)) + np.max(np.abs(samples.imag)) + 1)
    x = None if Q.is_zero else step_partition(Q, scale)
    D = char_det(Q, U, samples, x)
    D0 = delta0(Up, samples)
    bd = slice(0, N_BOUNDARY)
    c = np.min(np.abs(D0[:, bd]) / np.abs(samples[:, bd] - anchors[:, None]) ** power, axis=1)
    if M is None:
        live = sval > 1e-300
        M = float(np.max(np.abs(D - D0)[live] / sval[live])) if live.any() else 0.0
    bound = (M / c) * s_eps if strong else np.sqrt(M * s_eps / c)

    # Rouche radius: s_n(r) >= s_n(0), so the iteration r <- (M s_n(r) / c)^(1/power)
    # increases monotonically to the smallest root of g(r) = M s_n(r) - c r^power
    # from below; a short bisection then certifies a radius where g < 0.
    def g(r):
        return M * _s_values(Q, anchors, r, nu, mesh) - c * r ** power

    lo = np.zeros(n.size)
    for _ in range(FIXED_POINT_STEPS):
        lo = np.minimum(eps_used, (M * _s_values(Q, anchors, lo, nu, mesh) / c) ** (1 / power))
    hi = np.minimum(eps_used, lo * (1 + 1e-2) + 1e-12)
    bad = g(hi) >= 0
    hi[bad] = eps_used[bad]
    resolved = ~bad | (M * s_eps - c * eps_used ** power < 0)
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        neg = g(mid) < 0
        hi = np.where(neg, mid, hi)
        lo = np.where(neg, lo, mid)
    r = np.where(resolved, hi, np.nan)
    return AsymptoticsReport(n, lam + shift, anchors + shift, dev, s_eps, r, bound, c, M, eps, nu,
                             strong, points)


@dataclass
class EigenfunctionReport:
    n: np.ndarray
    b: np.ndarray
    b_adjoint: np.ndarray
    nu: float
    flags: list[str] = field(default_factory=list)

    def partial_sums(self, adjoint: bool = False):
        return partial_sums(self.n, self.b_adjoint if adjoint else self.b, self.nu)


ALIGN_TOL = 1e-6


def _remainder(y: GridFunction, target: np.ndarray, nu: float) -> tuple[float, bool]:
    """||a y - target||_nu with a from L2 projection; flag when <y, target> is tiny."""
    t = y.with_values(target)
    overlap = t.inner(y)
    a = overlap / y.inner(y)
    return (y * a - t).norm(nu), abs(overlap) <= ALIGN_TOL * y.norm(2) * t.norm(2)


def eigenfunction_asymptotics(Q: Potential, U: BoundaryForm, n_range: Iterable[int],
                              eps: float = 0.4, p: float | None = None) -> EigenfunctionReport:
    """b_n = ||y_n - E y_n^0||_nu and the adjoint analogue with z_n^0 / conj(E).

    The eigenfunction scale is fixed by projecting onto E y_n^0 (resp. the
    weighted free adjoint eigenfunction), so b_n measures the shape error only.
    Eigenfunctions are those of the gauge-normalized operator when q1 + q4 != 0.
    """
    Q, _ = traceless(Q)
    p = Q.p_class if p is None else p
    nu = conjugate_exponent(p)
    points = localize(Q, U, n_range, eps)
    Up, sp = free_reference(Q, U)
    Epi = complex(weight_E(Q, PI))
    mesh = default_mesh(Q, np.array([pt.lam for pt in points]))
    E = weight_E(Q, mesh.x)
    Estar = weight_E(Q.adjoint(), mesh.x)
    pairs = adjoint_eigenfunctions(Q, U, points, mesh)
    Z = Potential.zero()
    adj0 = adjoint_problem(Z, Up)
    b, bs, flags = [], [], []
    for pt, pair in zip(points, pairs):
        y0 = unperturbed_eigenfunctions(U, pt.n, Epi)[0].sample(mesh)
        z0 = eigenfunction(Z, adj0.U, np.conj(pt.anchor), mesh)[0]
        rb, fb = _remainder(pair.y[0], E[:, None] * y0.values, nu)
        rs, fs = _remainder(pair.z[0], Estar[:, None] * z0.values, nu)
        b.append(rb)
        bs.append(rs)
        if fb or fs:
            flags.append(f"n={pt.n}: degenerate phase alignment")
    return EigenfunctionReport(np.array([pt.n for pt in points]), np.array(b), np.array(bs), nu,
                               flags)


@dataclass
class BasisReport:
    N: int
    mode: str
    n_functions: int
    gram_cond: float
    biorthogonality_error: float
    bessel_constant: float
    alpha: np.ndarray

    def as_dict(self) -> dict:
        return {"N": self.N, "mode": self.mode, "n_functions": self.n_functions,
                "gram_cond": self.gram_cond,
                "biorthogonality_error": self.biorthogonality_error,
                "bessel_constant": self.bessel_constant,
                "alpha_min": float(np.min(np.abs(self.alpha))),
                "alpha_max": float(np.max(np.abs(self.alpha)))}


def _weighted_qr(V: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Orthonormalize the columns of V (shape (N, 2, k)) in the weighted L2 product."""
    sw = np.sqrt(w)[:, None, None]
    flat = (V * sw).reshape(-1, V.shape[-1])
    q, _ = np.linalg.qr(flat)
    return q.reshape(V.shape) / np.where(sw == 0, 1, sw)


def basis_report(Q: Potential, U: BoundaryForm, N: int, mode: str = "plain",
                 eps: float = 0.4, n_probes: int = 32, seed: int = 0) -> BasisReport:
    """Riesz-basis indicators for the root functions with indices |n| <= N.

    In ``bracket`` mode each cluster's root subspace is orthonormalized first,
    so the Gram matrix measures how the subspaces (not the individual, possibly
    nearly parallel, eigenfunctions) sit relative to each other.
    """
    if mode not in ("plain", "bracket"):
        raise ValueError("mode must be 'plain' or 'bracket'")
    Up, sp = free_reference(Q, U)
    half = N if sp.kind == "two-series" else max(1, N // 2)
    points = localize(Q, U, range(-half, half + 1), eps)
    mesh = default_mesh(Q, np.array([pt.lam for pt in points]))
    pairs = adjoint_eigenfunctions(Q, U, points, mesh)
    w = mesh.weights
    blocks = [np.stack([y.values for y in pr.y], -1) for pr in pairs]
    if mode == "bracket":
        blocks = [_weighted_qr(b, w) for b in blocks]
    Y = np.concatenate(blocks, -1)                                 # (N, 2, k)
    Zs = np.concatenate([np.stack([z.values for z in pr.z], -1) for pr in pairs], -1)
    G = np.einsum("x,xik,xil->kl", w, Y.conj(), Y)
    ev = np.linalg.eigvalsh(0.5 * (G + G.conj().T))
    cond = float(ev[-1] / ev[0])
    Yr = np.concatenate([np.stack([y.values for y in pr.y], -1) for pr in pairs], -1)
    H = np.einsum("x,xik,xil->kl", w, Yr, Zs.conj())
    biorth = float(np.abs(H - np.eye(H.shape[0])).max())
    # Bessel constant sup_f sum |<f, y_k>|^2 / ||f||^2 over random probes
    rng = np.random.default_rng(seed)
    x = mesh.x
    best = 0.0
    kmax = 2 * N
    for j in range(n_probes):
        if j % 4 == 3:
            cuts = np.sort(rng.uniform(0, PI, 4))
            level = rng.normal(size=(5, 2)) + 1j * rng.normal(size=(5, 2))
            f = level[np.searchsorted(cuts, x)]
        else:
            m = np.arange(-kmax, kmax + 1)
            coef = (rng.normal(size=(m.size, 2)) + 1j * rng.normal(size=(m.size, 2)))
            coef /= (1 + np.abs(m))[:, None]
            f = np.exp(1j * np.outer(x, m)) @ coef
        nf = np.einsum("x,xi,xi->", w, f, f.conj()).real
        c = np.einsum("x,xi,xik->k", w, f, Y.conj())
        best = max(best, float(np.sum(np.abs(c) ** 2) / nf))
    alpha = np.array([pr.alpha for pr in pairs])
    return BasisReport(N, mode, Y.shape[-1], cond, biorth, best, alpha)


@dataclass
class KadecReport:
    constant: float
    max_offset: float
    p: float
    per_probe: np.ndarray


def bessel_kadec_check(lams: Sequence[complex], p: float,
                       probes: Sequence[Callable[[np.ndarray], np.ndarray]],
                       indices: Sequence[int] | None = None) -> KadecReport:
    """Largest (sum_n |int_0^pi f e^{i lam_n x}|^{p'})^{1/p'} / ||f||_p over the probes.

    Requires |lam_n - 2n| < 1/(2p) for every n; the index n defaults to the
    integer nearest to Re(lam)/2.
    """
    lams = np.asarray(lams, dtype=complex)
    n = np.rint(lams.real / 2).astype(int) if indices is None else np.asarray(indices)
    off = np.abs(lams - 2 * n)
    if np.any(off >= 1 / (2 * p)):
        bad = int(n[np.argmax(off)])
        raise PreconditionError(f"|lam_n - 2n| = {off.max():.3g} >= 1/(2p) at n = {bad}")
    mesh = Mesh.for_frequency(float(np.max(np.abs(lams))) + 1, density=1.5)
    xn = mesh.nodes.ravel()
    w = mesh.node_weights.ravel()
    E = np.exp(1j * np.outer(lams, xn))
    pc = conjugate_exponent(p)
    ratios = []
    for f in probes:
        fv = np.asarray(f(xn), dtype=complex)
        coef = E @ (w * fv)
        num = np.max(np.abs(coef)) if np.isinf(pc) else np.sum(np.abs(coef) ** pc) ** (1 / pc)
        den = np.max(np.abs(fv)) if np.isinf(p) else np.sum(w * np.abs(fv) ** p) ** (1 / p)
        ratios.append(num / den)
    ratios = np.array(ratios)
    return KadecReport(float(ratios.max()), float(off.max()), p, ratios)
