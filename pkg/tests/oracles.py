"""Independent reference solvers used only by the tests."""

from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp

B = np.array([[0.0, 1.0], [-1.0, 0.0]])


def _cheb(N):
    s = np.cos(np.pi * np.arange(N + 1) / N)
    c = np.ones(N + 1)
    c[0] = c[-1] = 2
    c *= (-1) ** np.arange(N + 1)
    dS = s[:, None] - s[None, :]
    D = np.outer(c, 1 / c) / (dS + np.eye(N + 1))
    D -= np.diag(D.sum(axis=1))
    return s, D


def collocation_eigenvalues(Q, U, N=256):
    """Eigenvalues of -B y' + Q y with U(y) = 0 by rectangular Chebyshev collocation.

    Unknowns live on N+1 Chebyshev extreme points, the equations are imposed on
    N first-kind points (resampled by barycentric interpolation) and the two
    boundary rows close the square pencil.
    """
    s, Ds = _cheb(N)
    D = Ds * (2 / np.pi)
    t_s = np.cos((2 * np.arange(N) + 1) * np.pi / (2 * N))
    t = np.pi * (1 + t_s) / 2
    w = (-1.0) ** np.arange(N + 1)
    w[0] *= 0.5
    w[-1] *= 0.5
    K = w[None, :] / (t_s[:, None] - s[None, :])
    P = K / K.sum(axis=1, keepdims=True)
    q1, q2, q3, q4 = (np.diag(f(t)) for f in (Q.q1, Q.q2, Q.q3, Q.q4))
    PD = P @ D
    A = np.block([[q1 @ P, -PD + q2 @ P], [PD + q3 @ P, q4 @ P]]).astype(complex)
    M = np.block([[P, 0 * P], [0 * P, P]]).astype(complex)
    i0, ipi = N, 0  # x = 0 at s = -1, x = pi at s = 1
    bc = np.zeros((2, 2 * (N + 1)), dtype=complex)
    for r in range(2):
        u = U.matrix[r]
        bc[r, i0], bc[r, N + 1 + i0] = u[0], u[1]
        bc[r, ipi], bc[r, N + 1 + ipi] = u[2], u[3]
    A = np.vstack([A, bc])
    M = np.vstack([M, np.zeros_like(bc)])
    ev = scipy.linalg.eigvals(A, M)
    return ev[np.isfinite(ev)]


def nearest(ev, lam):
    return ev[np.argmin(np.abs(ev - lam))]


def shoot(Q, lam, y0, f=None, x_eval=None, rtol=1e-12):
    """y' = B((lam - Q) y + f) from y(0) = y0 with an adaptive RK method."""
    def rhs(x, y):
        r = (lam * np.eye(2) - Q.matrix(x)) @ y
        if f is not None:
            r = r + f(x)
        return B @ r
    sol = solve_ivp(rhs, (0, np.pi), np.asarray(y0, dtype=complex), method="DOP853",
                    rtol=rtol, atol=rtol * 1e-2, t_eval=x_eval)
    return sol.y.T


def bvp_free(U, lam, f, x_eval):
    """(L_0 - lam)^{-1} f by shooting: particular solution plus boundary correction."""
    from diracspec.potential import Potential
    Z = Potential.zero()
    # -B y' - lam y = f  <=>  y' = B(lam y + f)
    yp = shoot(Z, lam, [0, 0], f=f, x_eval=x_eval)
    h1 = shoot(Z, lam, [1, 0], x_eval=x_eval)
    h2 = shoot(Z, lam, [0, 1], x_eval=x_eval)
    M = np.stack([U.apply(h[0], h[-1]) for h in (h1, h2)], 1)
    g = np.linalg.solve(M, -U.apply(yp[0], yp[-1]))
    return yp + g[0] * h1 + g[1] * h2


def phase_ode(Q, lam, x_eval, kind="s"):
    """theta' = lam + a cos 2 theta - b sin 2 theta, theta(0) = 0, by DOP853."""
    sgn = 1.0 if kind == "s" else -1.0

    def rhs(x, th):
        a = sgn * Q.q1(np.array([x]))[0]
        b = sgn * 0.5 * (Q.q2(np.array([x]))[0] + Q.q3(np.array([x]))[0])
        return [lam + a * np.cos(2 * th[0]) - b * np.sin(2 * th[0])]
    sol = solve_ivp(rhs, (0, np.pi), [0j], method="DOP853", rtol=1e-13, atol=1e-14,
                    t_eval=x_eval)
    return sol.y[0]
