import numpy as np
import pytest

from diracspec.boundary import BoundaryForm
from diracspec.diagnostics import (PreconditionError, asymptotics_report, basis_report,
                                   bessel_kadec_check, eigenfunction_asymptotics, loglog_slope,
                                   partial_sums, traceless)
from diracspec.potential import Potential

PI = np.pi
DIR = BoundaryForm.preset("dirichlet")
Q = Potential.from_expressions(q1="0.3*cos(x)+0.1j", q2="0.4*sin(2*x)", q3="0.2*x",
                               q4="0.1*exp(x/3)")


def test_partial_sums_and_slope():
    n = np.arange(-3, 4)
    v = np.abs(n) + 1.0
    N, s = partial_sums(n, v, 2)
    assert list(N) == [0, 1, 2, 3]
    assert s[-1] == pytest.approx(np.sum(v ** 2))
    N, s = partial_sums(n, v, np.inf)
    assert s[-1] == 4
    k = np.arange(1, 20)
    assert loglog_slope(k, 3.0 / k ** 1.5) == pytest.approx(-1.5)


def test_traceless_passthrough():
    Z = Potential.zero()
    Qh, shift = traceless(Z)
    assert Qh is Z and shift == 0
    _, shift = traceless(Q)
    assert abs(shift) > 0.01


def test_free_problem_is_exact():
    rep = asymptotics_report(Potential.zero(), DIR, range(-5, 6))
    assert np.all(rep.deviation < 1e-12)
    assert np.all(rep.s_eps == 0) and rep.M == 0
    assert np.all(rep.r < 1e-10)
    ef = eigenfunction_asymptotics(Potential.zero(), DIR, range(-5, 6))
    assert np.all(ef.b < 1e-10) and np.all(ef.b_adjoint < 1e-10)
    bs = basis_report(Potential.zero(), DIR, 16)
    assert bs.gram_cond == pytest.approx(1.0, abs=1e-8)
    assert bs.biorthogonality_error < 1e-10


def test_asymptotics_bounds_hold():
    rep = asymptotics_report(Q, DIR, range(10, 21))
    assert rep.strong and rep.multiplicities_ok
    assert rep.resolved.all() and rep.within_r.all() and rep.within_bound.all()
    # anchors include the mean trace shift
    assert np.allclose(rep.anchor - rep.n, rep.anchor[0] - rep.n[0])


def test_eigenfunction_remainders_decay():
    ef = eigenfunction_asymptotics(Q, DIR, [4, 8, 16, 32])
    assert np.all(np.diff(ef.b) < 0)
    assert np.all(np.diff(ef.b_adjoint) < 0)
    assert not ef.flags


def test_basis_report_modes():
    with pytest.raises(ValueError):
        basis_report(Q, DIR, 4, mode="other")
    a = basis_report(Q, DIR, 6)
    assert a.n_functions == 13
    assert a.biorthogonality_error < 1e-8
    assert 1 <= a.gram_cond < 5
    assert set(a.as_dict()) >= {"gram_cond", "bessel_constant", "alpha_min"}


def test_kadec_exact_lattice():
    # lam_n = 2n, f = e^{2imx}: the only surviving coefficient is pi, ||f||_2 = sqrt(pi)
    lams = 2.0 * np.arange(-10, 11)
    rep = bessel_kadec_check(lams, 2.0, [lambda x: np.exp(-6j * x)])
    assert rep.constant == pytest.approx(np.sqrt(PI), rel=1e-10)


def test_kadec_p1_bound():
    # p = 1: sup_n |int f e^{i lam x}| <= ||f||_1
    rng = np.random.default_rng(1)
    lams = 2.0 * np.arange(-8, 9) + rng.uniform(-0.3, 0.3, 17)
    probes = [lambda x, k=k: np.cos(k * x) + 0.5j * x for k in range(5)]
    rep = bessel_kadec_check(lams, 1.0, probes)
    assert rep.constant <= 1 + 1e-12


def test_kadec_precondition():
    with pytest.raises(PreconditionError):
        bessel_kadec_check([0.0, 2.3], 2.0, [np.ones_like])
