import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from diracspec.boundary import BoundaryForm
from diracspec.potential import GridFunction, Potential
from diracspec.quadrature import Mesh
from diracspec.solutions import default_mesh
from diracspec.spectrum import (SpectrumError, adjoint_eigenfunctions, adjoint_problem,
                                char_det, eigenfunction, global_count_check, localize, muller)

from oracles import collocation_eigenvalues, nearest, shoot

PI = np.pi
B = np.array([[0.0, 1.0], [-1.0, 0.0]])

Q_NSA = Potential.from_expressions(q1="0.5*cos(x)+0.3j", q2="0.4*exp(1j*x)", q3="0.2*x",
                                   q4="-0.5*cos(x)-0.3j")
Q_SYM = Potential.from_expressions(q1="0.6*cos(2*x)", q2="0.3*sin(x)", q3="0.3*sin(x)",
                                   q4="-0.6*cos(2*x)")
DIR = BoundaryForm.preset("dirichlet")
PER = BoundaryForm.preset("periodic")


def test_muller_finds_polynomial_root():
    f = lambda z: (z - 1.5 + 0.2j) * (z + 3)
    z = muller(f, 1.0, 1.2, 1.4, 1e-14)
    assert abs(z - (1.5 - 0.2j)) < 1e-12


def test_localize_matches_collocation():
    pts = localize(Q_NSA, DIR, range(-8, 9))
    ev = collocation_eigenvalues(Q_NSA, DIR, N=160)
    for p in pts:
        assert p.ok
        assert abs(p.lam - nearest(ev, p.lam)) < 1e-8
        assert p.residual < 1e-8


def test_eps_too_large():
    with pytest.raises(SpectrumError):
        localize(Q_NSA, DIR, range(2), eps=0.6)


def test_conjugation_symmetry():
    adj = adjoint_problem(Q_NSA, DIR)
    a = localize(Q_NSA, DIR, range(-6, 7))
    b = localize(adj.Q, adj.U, range(-6, 7))
    lam_a = np.array([p.lam for p in a])
    for p in b:
        assert np.min(np.abs(lam_a - np.conj(p.lam))) < 1e-8


def test_disk_windings_exhaust_rectangle():
    N = 5
    pts = localize(Q_NSA, DIR, range(-N, N + 1))
    anchors = np.array([p.anchor for p in pts])
    rect = (anchors.real.min() - 0.5, anchors.real.max() + 0.5, -1.0, 1.0)
    total = global_count_check(Q_NSA, DIR, rect)
    assert sum(p.multiplicity for p in pts) == total.count == 2 * N + 1


def test_off_strip_empty():
    for rect in [(-8.5, 8.5, 1.5, 3.0), (-8.5, 8.5, -3.0, -1.5)]:
        assert global_count_check(Q_NSA, DIR, rect).count == 0


def test_periodic_clusters():
    pts = localize(Q_SYM, PER, range(-4, 5))
    ev = collocation_eigenvalues(Q_SYM, PER, N=160)
    for p in pts:
        assert p.multiplicity == 2 and len(p.members) == 2
        for m in p.members:
            assert abs(m - nearest(ev, m)) < 1e-7


def _spline(y: GridFunction):
    return CubicSpline(y.grid, y.values, axis=0)


def _shoot_error(Q, lam, y: GridFunction, rhs=None):
    """Distance from y to the oracle solution of (L - lam) y = rhs with the same initial value."""
    f = None if rhs is None else _spline(rhs)
    ref = shoot(Q, lam, y.values[0], f=f, x_eval=y.grid)
    return np.abs(ref - y.values).max()


def test_eigenfunction_solves_problem():
    (p,) = localize(Q_NSA, DIR, [4])
    mesh = Mesh.for_frequency(40.0)
    (y,) = eigenfunction(Q_NSA, DIR, p, mesh)
    assert y.norm(2) == pytest.approx(1.0, abs=1e-12)
    assert _shoot_error(Q_NSA, p.lam, y) < 1e-8
    assert np.abs(DIR.apply(y.values[0], y.values[-1])).max() < 1e-10


def test_not_an_eigenvalue():
    with pytest.raises(SpectrumError):
        eigenfunction(Q_NSA, DIR, 3.3 + 0.1j)


def test_jordan_chain_free():
    U = BoundaryForm(np.array([[1, 0, -2, 0], [0, 1, 0, -1]], dtype=complex))
    Z = Potential.zero()
    (p,) = localize(Z, U, [1])
    assert p.multiplicity == 2
    mesh = Mesh.for_frequency(40.0)
    y0, y1 = eigenfunction(Z, U, p, mesh)
    assert _shoot_error(Z, p.lam, y1, rhs=y0) < 1e-8
    assert abs(y1.inner(y0)) < 1e-10


def test_self_adjoint_case():
    adj = adjoint_problem(Q_SYM, DIR)
    x = np.linspace(0, PI, 9)
    assert np.allclose(adj.Q.matrix(x), Q_SYM.matrix(x))
    # the adjoint form describes the same conditions: same row space
    M = np.vstack([adj.U.matrix, DIR.matrix])
    assert np.linalg.matrix_rank(M, tol=1e-10) == 2
    pts = localize(Q_SYM, DIR, range(-3, 4))
    for pr in adjoint_eigenfunctions(Q_SYM, DIR, pts):
        y, z = pr.y[0], pr.z[0]
        assert np.abs(y.values - z.values).max() < 1e-8


def test_periodic_adjoint_is_periodic():
    adj = adjoint_problem(Potential.zero(), PER)
    M = np.vstack([adj.U.matrix, PER.matrix])
    assert np.linalg.matrix_rank(M, tol=1e-10) == 2
    assert adj.relation_residual < 1e-12


def _domain_function(U, rng, deg=4):
    """Random smooth f with U(f) = 0, returned with its derivative as callables."""
    k = np.arange(-deg, deg + 1)
    C = rng.normal(size=(k.size, 2)) + 1j * rng.normal(size=(k.size, 2))
    base = lambda x: np.exp(1j * np.outer(x, k)) @ C
    dbase = lambda x: (np.exp(1j * np.outer(x, k)) * (1j * k)) @ C
    # correction a + b x with U(f) = 0 (minimum norm)
    Ucorr = np.hstack([U.A + U.B, PI * U.B])
    coef, *_ = np.linalg.lstsq(Ucorr, -U.apply(base(np.array([0.0]))[0],
                                               base(np.array([PI]))[0]), rcond=None)
    a, b = coef[:2], coef[2:]
    f = lambda x: base(x) + a + np.outer(x, b)
    df = lambda x: dbase(x) + b
    return f, df


def test_lagrange_identity():
    rng = np.random.default_rng(7)
    U = BoundaryForm(np.array([[1, 0.5j, -0.3, 0], [0.2, 1, 1j, -1]], dtype=complex))
    adj = adjoint_problem(Q_NSA, U)
    mesh = Mesh.for_frequency(10.0)
    x, w = mesh.x, mesh.weights
    L = lambda Q, f, df: -df(x) @ B.T + np.einsum("nij,nj->ni", Q.matrix(x), f(x))
    for _ in range(10):
        f, df = _domain_function(U, rng)
        g, dg = _domain_function(adj.U, rng)
        assert np.abs(U.apply(f(np.array([0.0]))[0], f(np.array([PI]))[0])).max() < 1e-12
        lhs = np.sum(w * np.sum(L(Q_NSA, f, df) * np.conj(g(x)), 1))
        rhs = np.sum(w * np.sum(f(x) * np.conj(L(adj.Q, g, dg)), 1))
        assert abs(lhs - rhs) < 1e-8 * max(1, abs(lhs))


def test_biorthogonality():
    pts = localize(Q_NSA, DIR, range(-6, 7))
    mesh = default_mesh(Q_NSA, np.array([p.lam for p in pts]))
    pairs = adjoint_eigenfunctions(Q_NSA, DIR, pts, mesh)
    G = np.array([[pi.y[0].inner(pj.z[0]) for pj in pairs] for pi in pairs])
    assert np.abs(G - np.eye(len(pairs))).max() < 1e-8


def test_alpha_tends_to_one():
    pts = localize(Q_NSA, DIR, [2, 8, 32])
    pairs = adjoint_eigenfunctions(Q_NSA, DIR, pts)
    dev = [abs(p.alpha - 1) for p in pairs]
    assert dev[2] < dev[1] < dev[0]


def test_char_det_free_is_delta0():
    from diracspec.boundary import delta0
    lams = np.array([0.3, 2.2 - 0.4j, 11.7])
    assert np.allclose(char_det(Potential.zero(), DIR, lams), delta0(DIR, lams))
