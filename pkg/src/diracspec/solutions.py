"""Solutions of -B y' + Q y = lam y: fundamental pair, Pruefer form, remainder integrals.

The direct solver is a sixth-order Magnus integrator. Because the coefficient
matrix is lam*B - B Q(x), the Magnus exponent of every step is a cubic
polynomial in lam whose matrix coefficients are computed once per partition;
evaluating many lam values then costs a polynomial evaluation, a closed-form
2x2 exponential and a product per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
import scipy.linalg

from .boundary import free_fundamental
from .potential import GridFunction, Potential, lp_norm, weight_E
from .quadrature import PI, Mesh, graded_edges

B = np.array([[0.0, 1.0], [-1.0, 0.0]])

# sixth-order Magnus: three Gauss points per step
_GAUSS3 = np.array([0.5 - np.sqrt(15) / 10, 0.5, 0.5 + np.sqrt(15) / 10])

PICARD_TOL = 1e-12
PICARD_MAX_ITER = 50
PICARD_FALLBACK_RATIO = 0.9


class DomainError(ValueError):
    """lam lies outside the region where the Pruefer construction is certified."""


def _comm(X, Y):
    return X @ Y - Y @ X


def expm2(M: np.ndarray) -> np.ndarray:
    """exp of a stack of 2x2 matrices in closed form."""
    a, b = M[..., 0, 0], M[..., 0, 1]
    c, d = M[..., 1, 0], M[..., 1, 1]
    t = 0.5 * (a + d)
    mu2 = 0.25 * (a - d) ** 2 + b * c
    mu = np.sqrt(mu2 + 0j)
    small = np.abs(mu) < 1e-3
    safe = np.where(small, 1.0, mu)
    ch = np.where(small, 1 + mu2 / 2 + mu2 ** 2 / 24 + mu2 ** 3 / 720, np.cosh(safe))
    sh = np.where(small, 1 + mu2 / 6 + mu2 ** 2 / 120 + mu2 ** 3 / 5040, np.sinh(safe) / safe)
    et = np.exp(t)
    out = np.empty(M.shape, dtype=complex)
    out[..., 0, 0] = et * (ch + sh * (a - t))
    out[..., 1, 1] = et * (ch + sh * (d - t))
    out[..., 0, 1] = et * sh * b
    out[..., 1, 0] = et * sh * c
    return out


def _tree_product(P: np.ndarray) -> np.ndarray:
    """P[..., n-1, :, :] @ ... @ P[..., 0, :, :] by pairwise reduction."""
    while P.shape[-3] > 1:
        if P.shape[-3] % 2:
            eye = np.broadcast_to(np.eye(2, dtype=P.dtype), P.shape[:-3] + (1, 2, 2))
            P = np.concatenate([P, eye], axis=-3)
        P = P[..., 1::2, :, :] @ P[..., 0::2, :, :]
    return P[..., 0, :, :]


class Propagator:
    """Step propagators of y' = (lam B - B Q(x)) y on the partition ``x``."""

    def __init__(self, Q: Potential, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        self.x = x
        h = np.diff(x)
        pts = x[:-1, None] + h[:, None] * _GAUSS3[None, :]
        K = -B @ Q.matrix(pts)  # (n, 3, 2, 2)
        K1, K2, K3 = K[:, 0], K[:, 1], K[:, 2]
        hh = h[:, None, None]
        P = hh * B
        a1q = hh * K2
        a2 = (np.sqrt(15) * hh / 3) * (K3 - K1)
        a3 = (10 * hh / 3) * (K3 - 2 * K2 + K1)
        X = _comm(P, a2)
        Y = _comm(a1q, a2)
        U1 = -20 * P + X
        U0 = -20 * a1q - a3 + Y
        V2 = -_comm(P, X) / 60
        V1 = -(_comm(P, 2 * a3 + Y) + _comm(a1q, X)) / 60
        V0 = a2 - _comm(a1q, 2 * a3 + Y) / 60
        self.omega = np.stack([
            a1q + a3 / 12 + _comm(U0, V0) / 240,
            P + (_comm(U1, V0) + _comm(U0, V1)) / 240,
            (_comm(U1, V1) + _comm(U0, V2)) / 240,
            _comm(U1, V2) / 240,
        ])  # (4, n, 2, 2)

    @property
    def n_steps(self) -> int:
        return self.x.size - 1

    def steps(self, lams) -> np.ndarray:
        """exp(Omega_k(lam)) with shape lams.shape + (n_steps, 2, 2)."""
        lams = np.asarray(lams, dtype=complex)
        L = lams[..., None, None, None]
        W = self.omega
        Om = W[0] + L * (W[1] + L * (W[2] + L * W[3]))
        return expm2(Om)

    def endpoint(self, lams, chunk: int = 200_000) -> np.ndarray:
        """Fundamental matrix Y(pi, lam) = [c s](pi) for an array of lam."""
        lams = np.atleast_1d(np.asarray(lams, dtype=complex))
        flat = lams.ravel()
        per = max(1, chunk // max(1, self.n_steps))
        out = np.empty((flat.size, 2, 2), dtype=complex)
        for i in range(0, flat.size, per):
            out[i:i + per] = _tree_product(self.steps(flat[i:i + per]))
        return out.reshape(lams.shape + (2, 2))

    def path(self, lam: complex, Y0=None) -> np.ndarray:
        """Y(x_k, lam) @ Y0 at every partition point, shape (N, 2, 2)."""
        S = self.steps(complex(lam))
        out = np.empty((self.x.size, 2, 2), dtype=complex)
        out[0] = np.eye(2) if Y0 is None else Y0
        for k in range(self.n_steps):
            out[k + 1] = S[k] @ out[k]
        return out


def _propagator(Q: Potential, x: np.ndarray) -> Propagator:
    # Potentials hash by identity of their (frozen) fields; cache by partition too
    store = Q._cache.setdefault("propagators", {})
    key = (x.size, float(x[1]), float(x[-2]), float(x.sum()))
    if key not in store:
        if len(store) > 16:
            store.clear()
        store[key] = Propagator(Q, x)
    return store[key]


def step_partition(Q: Potential, scale: float, steps_per_unit: float = 3.0,
                   min_steps: int = 96) -> np.ndarray:
    """Uniform partition with about ``steps_per_unit * scale * pi`` steps, plus breakpoints."""
    n = max(min_steps, int(np.ceil(steps_per_unit * abs(scale) * PI)))
    # round up to a power of two so nearby lam values share one partition
    n = 1 << int(np.ceil(np.log2(n)))
    return graded_edges(Q.breakpoints, Q.singular, n)


def endpoint_matrix(Q: Potential, lams, x: np.ndarray | None = None) -> np.ndarray:
    """[c s](pi, lam) for every lam; closed form when Q = 0."""
    lams = np.asarray(lams, dtype=complex)
    if Q.is_zero:
        return free_fundamental(lams, PI)
    if x is None:
        scale = float(np.max(np.abs(lams.real)) + np.max(np.abs(lams.imag)) + 1) \
            if lams.size else 1.0
        x = step_partition(Q, scale)
    return _propagator(Q, x).endpoint(lams)


def default_mesh(Q: Potential, lam, density: float = 2.0) -> Mesh:
    lam = np.asarray(lam, dtype=complex)
    scale = float(np.max(np.abs(lam.real)) + np.max(np.abs(lam.imag)) + 1)
    return Mesh.for_frequency(scale, Q.breakpoints, Q.singular, density=density)


def fundamental_path(Q: Potential, lam: complex, mesh: Mesh) -> np.ndarray:
    """[c s](x, lam) on every point of ``mesh.x``, shape (N, 2, 2)."""
    if Q.is_zero:
        return free_fundamental(lam, mesh.x)
    return _propagator(Q, mesh.x).path(lam)


def integrate_system(Q: Potential, lam: complex, y0, forcing: GridFunction | None = None,
                     mesh: Mesh | None = None) -> GridFunction:
    """Solve -B y' + Q y = lam y + f with y(0) = y0 on a composite GL mesh.

    The homogeneous part uses the Magnus fundamental matrix; a forcing term is
    added by variation of constants with spectral quadrature on the mesh.
    """
    mesh = mesh or default_mesh(Q, lam)
    Y = fundamental_path(Q, lam, mesh)
    y = Y @ np.asarray(y0, dtype=complex)
    if forcing is not None:
        f = forcing(mesh.nodes) if not isinstance(forcing, GridFunction) or \
            forcing.grid.size != mesh.size or not np.allclose(forcing.grid, mesh.x) \
            else mesh.at_nodes(forcing.values.T).transpose(1, 2, 0)
        Yn = Y[mesh.gl_index].reshape(mesh.n_panels, mesh.m, 2, 2)
        integrand = np.linalg.solve(Yn, (B @ f[..., None]))[..., 0]  # Y^{-1} B f
        I = mesh.cumulative(np.moveaxis(integrand, -1, 0))  # (2, N)
        y = y + (Y @ I.T[..., None])[..., 0]
    return GridFunction(mesh.x, y, mesh.weights)


@dataclass
class FundamentalPair:
    """c(x, lam), s(x, lam) with c(0) = (1, 0), s(0) = (0, 1) on a mesh."""

    lam: complex
    mesh: Mesh
    c: np.ndarray
    s: np.ndarray
    method: str
    err_estimate: float

    @property
    def x(self) -> np.ndarray:
        return self.mesh.x

    def matrix(self) -> np.ndarray:
        return np.stack([self.c, self.s], -1)

    def at_pi(self) -> np.ndarray:
        return self.matrix()[-1]

    def wronskian(self) -> np.ndarray:
        return self.c[:, 0] * self.s[:, 1] - self.c[:, 1] * self.s[:, 0]

    def c_function(self) -> GridFunction:
        return GridFunction(self.mesh.x, self.c, self.mesh.weights)

    def s_function(self) -> GridFunction:
        return GridFunction(self.mesh.x, self.s, self.mesh.weights)


def fundamental_pair(Q: Potential, lam: complex, method: str = "direct",
                     mesh: Mesh | None = None, alpha: float = 1.0,
                     strict: bool = True) -> FundamentalPair:
    """The normalized solutions c, s by Magnus integration or by the Pruefer construction."""
    lam = complex(lam)
    mesh = mesh or default_mesh(Q, lam)
    if method == "direct":
        Y = fundamental_path(Q, lam, mesh)
        if Q.is_zero:
            err = 0.0
        else:
            fine = step_partition(Q, abs(lam.real) + abs(lam.imag) + 1, steps_per_unit=6.0)
            err = float(np.max(np.abs(Y[-1] - endpoint_matrix(Q, lam, fine))))
        return FundamentalPair(lam, mesh, Y[:, :, 0], Y[:, :, 1], "direct", err)
    if method == "pruefer":
        ps = pruefer_solve(Q, lam, alpha, kind="s", mesh=mesh, strict=strict)
        pc = pruefer_solve(Q, lam, alpha, kind="c", mesh=mesh, strict=strict)
        err = max(ps.residual, pc.residual)
        return FundamentalPair(lam, mesh, pc.y, ps.y, "pruefer", err)
    raise ValueError(f"unknown method {method!r}")


# remainder integrals -------------------------------------------------------------


def conjugate_exponent(p: float) -> float:
    if p == 1:
        return np.inf
    if np.isinf(p):
        return 1.0
    return p / (p - 1)


def domain_constants(Q: Potential, alpha: float) -> tuple[float, float]:
    """k = 2 + 12 R cosh(2 pi alpha + 1) and the threshold 1/(8 k^4) defining D_{Q,alpha}."""
    k = 2 + 12 * Q.R * np.cosh(2 * PI * alpha + 1)
    return float(k), float(1.0 / (8 * k ** 4))


def _upsilon_integrands(Q: Potential, lams: np.ndarray, mesh: Mesh) -> np.ndarray:
    t = mesh.nodes
    q1 = Q.q1(t)
    qs = 0.5 * (Q.q2(t) + Q.q3(t))
    e = np.exp(2j * lams[..., None, None] * t)
    ei = 1 / e
    sn, cs = (e - ei) / 2j, (e + ei) / 2
    return np.stack([q1 * sn, q1 * cs, qs * sn, qs * cs], axis=-3)  # (..., 4, P, m)


def upsilon_values(Q: Potential, lams, mesh: Mesh) -> np.ndarray:
    """upsilon_1..4(x, lam) on mesh.x, shape lams.shape + (4, N)."""
    lams = np.asarray(lams, dtype=complex)
    return mesh.cumulative(_upsilon_integrands(Q, lams, mesh))


def _lnorm(vals: np.ndarray, mesh: Mesh, nu: float) -> np.ndarray:
    a = np.abs(vals)
    if np.isinf(nu):
        return a.max(axis=-1)
    return (a[..., mesh.gl_index] ** nu @ mesh.weights[mesh.gl_index]) ** (1 / nu)


def upsilon_summary(Q: Potential, lams, nu: float | None = None,
                    mesh: Mesh | None = None, chunk: int = 64) -> dict[str, np.ndarray]:
    """Upsilon(pi, lam), sup_x Upsilon(x, lam), Upsilon_inf and Upsilon_nu for many lam."""
    lams = np.atleast_1d(np.asarray(lams, dtype=complex))
    nu = conjugate_exponent(Q.p_class) if nu is None else nu
    mesh = mesh or default_mesh(Q, lams)
    out = {k: np.empty(lams.shape) for k in ("at_pi", "sup_x", "Upsilon", "Upsilon_nu")}
    flat = lams.ravel()
    for i in range(0, flat.size, chunk):
        u = upsilon_values(Q, flat[i:i + chunk], mesh)
        sl = np.unravel_index(np.arange(i, min(i + chunk, flat.size)), lams.shape)
        out["at_pi"][sl] = np.abs(u[..., -1]).sum(-1)
        out["sup_x"][sl] = np.abs(u).sum(-2).max(-1)
        out["Upsilon"][sl] = np.abs(u).max(-1).sum(-1)
        out["Upsilon_nu"][sl] = _lnorm(u, mesh, nu).sum(-1)
    return out


@dataclass
class RemainderProfile:
    lam: complex
    mesh: Mesh
    upsilon: np.ndarray        # (4, N) on mesh.x
    nu: float
    alpha: float

    @property
    def Upsilon_x(self) -> np.ndarray:
        """Upsilon(x, lam) = sum_j |upsilon_j(x, lam)|."""
        return np.abs(self.upsilon).sum(0)

    @property
    def Upsilon_sup(self) -> float:
        """Upsilon(lam) = sum_j ||upsilon_j||_inf."""
        return float(np.abs(self.upsilon).max(-1).sum())

    @property
    def Upsilon_nu(self) -> float:
        return float(_lnorm(self.upsilon, self.mesh, self.nu).sum())

    def component(self, j: int) -> GridFunction:
        return GridFunction(self.mesh.x, self.upsilon[j - 1], self.mesh.weights)


def remainder_profile(Q: Potential, lam: complex, alpha: float = 1.0,
                      nu: float | None = None, mesh: Mesh | None = None) -> RemainderProfile:
    """The oscillatory integrals upsilon_1..4 controlling all remainder terms."""
    lam = complex(lam)
    if abs(lam.imag) >= alpha:
        raise DomainError(f"|Im lam| = {abs(lam.imag):.3g} must be below alpha = {alpha}")
    nu = conjugate_exponent(Q.p_class) if nu is None else nu
    mesh = mesh or default_mesh(Q, lam)
    return RemainderProfile(lam, mesh, upsilon_values(Q, lam, mesh), nu, alpha)


# Pruefer construction ----------------------------------------------------------


@dataclass
class PrueferSolution:
    """theta = lam x + eta and amplitude r = E (1 + rho) for s (or c).

    s = r (sin theta, cos theta); c = r (cos theta, -sin theta).
    """

    lam: complex
    kind: str
    mesh: Mesh
    eta: np.ndarray
    f0: np.ndarray
    rho: np.ndarray
    E: np.ndarray
    iterations: int
    ratios: list[float]
    method: str
    k: float
    threshold: float
    contraction_bound: float
    residual: float
    in_domain: bool
    Upsilon: float = 0.0
    Upsilon_nu: float = 0.0
    zeta: np.ndarray = field(init=False)

    def __post_init__(self):
        self.zeta = self.eta - self.f0

    @property
    def theta(self) -> np.ndarray:
        return self.lam * self.mesh.x + self.eta

    @property
    def r(self) -> np.ndarray:
        return self.E * (1 + self.rho)

    @property
    def y(self) -> np.ndarray:
        th, r = self.theta, self.r
        if self.kind == "s":
            return np.stack([r * np.sin(th), r * np.cos(th)], -1)
        return np.stack([r * np.cos(th), -r * np.sin(th)], -1)

    @property
    def observed_contraction(self) -> float:
        return float(max(self.ratios)) if self.ratios else 0.0


def _traceless(Q: Potential, tol: float = 1e-10) -> bool:
    if Q.is_zero:
        return True
    if "traceless" not in Q._cache:
        tr = lp_norm(lambda x: Q.q1(x) + Q.q4(x), 1, like=Q)
        Q._cache["traceless"] = tr <= tol * (1 + lp_norm(Q.q1, 1, like=Q))
    return Q._cache["traceless"]


def pruefer_solve(Q: Potential, lam: complex, alpha: float = 1.0, kind: str = "s",
                  mesh: Mesh | None = None, tol: float = PICARD_TOL,
                  max_iter: int = PICARD_MAX_ITER, strict: bool = True) -> PrueferSolution:
    """Phase and amplitude of s (or c) from the integral equation for eta.

    eta = int_0^x a cos(2 lam t + 2 eta) - b sin(2 lam t + 2 eta) with
    (a, b) = (q1, (q2+q3)/2) for s and (-q1, -(q2+q3)/2) for c, solved by Picard
    iteration from f0 = eta with eta = 0 inside; if successive differences stop
    contracting the linearized (Newton-chord) form takes over.
    """
    lam = complex(lam)
    if kind not in ("s", "c"):
        raise ValueError("kind must be 's' or 'c'")
    if not _traceless(Q):
        raise ValueError("the Pruefer form needs q4 = -q1; apply normalize_trace first")
    mesh = mesh or default_mesh(Q, lam)
    k, thr = domain_constants(Q, alpha)
    nu = conjugate_exponent(Q.p_class)
    prof = upsilon_values(Q, lam, mesh)
    Ups = float(np.abs(prof).max(-1).sum())
    Ups_nu = float(_lnorm(prof, mesh, nu).sum())
    inside = abs(lam.imag) < alpha and Ups < thr
    if strict and not inside:
        raise DomainError(f"lam = {lam} is outside D_(Q, alpha): Upsilon = {Ups:.3e}, "
                          f"threshold 1/(8k^4) = {thr:.3e}, |Im lam| vs alpha = {alpha}")
    t = mesh.nodes
    sign = 1.0 if kind == "s" else -1.0
    a = sign * Q.q1(t)
    b = sign * 0.5 * (Q.q2(t) + Q.q3(t))
    two_lt = 2 * lam * t

    def F(eta_n):
        ph = two_lt + 2 * eta_n
        return mesh.cumulative(a * np.cos(ph) - b * np.sin(ph))

    f0 = F(np.zeros_like(t))
    eta = f0
    ratios: list[float] = []
    diffs: list[float] = []
    method = "picard"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = F(mesh.at_nodes(eta))
        d = float(np.max(np.abs(new - eta)))
        eta = new
        if diffs and diffs[-1] > 0:
            ratios.append(d / diffs[-1])
        diffs.append(d)
        if d <= tol * max(1.0, float(np.max(np.abs(eta)))):
            converged = True
            break
        if len(ratios) >= 2 and ratios[-1] > PICARD_FALLBACK_RATIO:
            break
    if not converged:
        method = "phi"
        f0n = mesh.at_nodes(f0).ravel()
        ph0 = (two_lt + 2 * mesh.at_nodes(f0)).ravel()
        kern = -2 * a.ravel() * np.sin(ph0) - 2 * b.ravel() * np.cos(ph0)
        G1 = mesh.cumulative_matrix() * kern[None, :]
        lu = scipy.linalg.lu_factor(np.eye(G1.shape[0]) - G1)
        en = mesh.at_nodes(eta).ravel()
        for j in range(1, max_iter + 1):
            Fe = mesh.at_nodes(F(en.reshape(t.shape))).ravel()
            new = f0n + scipy.linalg.lu_solve(lu, Fe - f0n - G1 @ (en - f0n))
            d = float(np.max(np.abs(new - en)))
            en = new
            if d <= tol * max(1.0, float(np.max(np.abs(en)))):
                break
        it += j
        eta = F(en.reshape(t.shape))
    eta_n = mesh.at_nodes(eta)
    th2 = 2 * (lam * t + eta_n)
    H = mesh.cumulative(a * np.sin(th2) + b * np.cos(th2))
    E = np.exp(mesh.cumulative(0.5 * (Q.q2(t) - Q.q3(t))))
    residual = float(np.max(np.abs(F(eta_n) - eta)))
    return PrueferSolution(lam, kind, mesh, eta, f0, np.expm1(H), E, it, ratios, method,
                           k, thr, 2 * k ** 4 * Ups_nu, residual, inside, Ups, Ups_nu)


def weight_on_mesh(Q: Potential, mesh: Mesh) -> np.ndarray:
    return weight_E(Q, mesh.x)
