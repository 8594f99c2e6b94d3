import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diracspec.boundary import (BoundaryError, BoundaryForm, RegularityClass, associated_form,
                                classify, delta0, free_fundamental, green0_apply, m0_matrix,
                                minors, unperturbed_eigenfunctions, unperturbed_spectrum)
from diracspec.potential import GridFunction

from oracles import bvp_free

PI = np.pi
cplx = st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False)


def _form(entries):
    return BoundaryForm(np.array(entries, dtype=complex).reshape(2, 4))


def test_validation():
    with pytest.raises(BoundaryError):
        BoundaryForm(np.ones((2, 3)))
    with pytest.raises(BoundaryError):
        BoundaryForm(np.array([[1, 0, np.nan, 0], [0, 1, 0, 0]]))
    with pytest.raises(BoundaryError):
        BoundaryForm.preset("robin")


def test_minors_by_hand():
    J = minors(BoundaryForm.preset("dirichlet"))
    assert J[(1, 3)] == 1
    assert all(J[k] == 0 for k in [(1, 2), (1, 4), (2, 3), (2, 4), (3, 4)])
    J = minors(BoundaryForm.preset("periodic"))
    assert (J[(1, 2)], J[(3, 4)], J[(1, 4)], J[(2, 3)], J[(1, 3)], J[(2, 4)]) == (1, 1, -1, 1, 0, 0)
    assert J[(3, 2)] == -J[(2, 3)]
    J = minors(_form([1, 2, 3, 4, 0, 0, 0, 0]))
    assert all(v == 0 for v in J.values())


def test_classify_examples():
    c = classify(BoundaryForm.preset("dirichlet"))
    assert c.regularity is RegularityClass.STRONGLY_REGULAR
    assert c.as_dict()["witnesses"] == [[0.0, -1.0], [0.0, 1.0]]
    c = classify(BoundaryForm.preset("periodic"))
    assert c.regularity is RegularityClass.REGULAR_NOT_STRONG
    assert c.witnesses == (-2, -2)
    beta = 0.7
    c = classify(_form([1, 1, -1, -1, beta, -beta, beta, -beta]))
    assert c.regularity is RegularityClass.DEGENERATE
    with pytest.raises(BoundaryError):
        classify(BoundaryForm.preset("dirichlet"), E=0)


def test_periodic_with_weight_is_strongly_regular():
    # the weight breaks the double root unless E^2 = 1
    U = BoundaryForm.preset("periodic")
    assert classify(U, 1.3).regularity is RegularityClass.STRONGLY_REGULAR
    assert classify(U, -1.0).regularity is RegularityClass.REGULAR_NOT_STRONG


def test_associated_form():
    U = BoundaryForm.preset("dirichlet")
    assert np.array_equal(associated_form(U, 1).matrix, U.matrix)
    assert np.array_equal(associated_form(U, 2).matrix, [[1, 0, 0, 0], [0, 0, 2, 0]])
    P = associated_form(BoundaryForm.preset("periodic"), np.e)
    assert np.allclose(P.matrix, [[1, 0, -np.e, 0], [0, 1, 0, -np.e]])


@pytest.mark.parametrize("name, expected, mult", [
    ("dirichlet", lambda n: n, 1),
    ("dirichlet-neumann", lambda n: n - 0.5, 1),
    ("periodic", lambda n: 2 * n, 2),
    ("antiperiodic", lambda n: 2 * n + 1, 2),
])
def test_free_spectrum_closed_forms(name, expected, mult):
    sp = unperturbed_spectrum(BoundaryForm.preset(name))
    assert sp.multiplicity == mult
    for n in range(-7, 8):
        assert abs(sp.eigenvalue(n) - expected(n)) < 1e-12


def test_dirichlet_neumann_pattern():
    sp = unperturbed_spectrum(BoundaryForm.preset("dirichlet-neumann"))
    pts = sorted(sp.eigenvalue(n).real for n in range(-6, 6))
    assert np.allclose(np.diff(pts), 1.0)
    assert np.allclose(np.mod(pts, 1), 0.5)


def test_branch_consistency():
    U = _form([1, 0.3j, 0.2, 0, 0.5, 1, 0, 1 - 1j])
    sp = unperturbed_spectrum(U)
    assert sp.kind == "two-series"
    for j, (z, k) in enumerate(zip(sp.roots, sp.kappa)):
        assert abs(np.exp(1j * PI * (k - j)) - z) < 1e-12
        assert -1 < k.real <= 1


@settings(max_examples=40, deadline=None)
@given(st.lists(cplx, min_size=8, max_size=8), cplx)
def test_delta0_is_det_m0(entries, lam):
    U = _form(entries)
    assert abs(delta0(U, lam) - np.linalg.det(m0_matrix(U, lam))) <= 1e-10 * (
        1 + np.abs(U.matrix).max() ** 2 * np.exp(PI * abs(lam.imag)))


@settings(max_examples=30, deadline=None)
@given(st.lists(cplx, min_size=8, max_size=8))
def test_free_spectrum_are_zeros(entries):
    U = _form(entries)
    cl = classify(U)
    if not cl.regularity.is_regular or cl.near_degenerate:
        return
    sp = unperturbed_spectrum(U)
    scale = np.abs(U.matrix).max() ** 2
    for n in range(-3, 4):
        lam = sp.eigenvalue(n)
        assert abs(delta0(U, lam)) <= 1e-8 * scale * np.exp(PI * abs(lam.imag))


def test_free_fundamental_is_rotation():
    lam, x = 1.3 - 0.2j, np.linspace(0, PI, 5)
    F = free_fundamental(lam, x)
    assert np.allclose(np.linalg.det(F), 1)
    assert np.allclose(F[0], np.eye(2))


def test_dirichlet_eigenfunction_n3():
    (y,) = unperturbed_eigenfunctions(BoundaryForm.preset("dirichlet"), 3)
    x = np.linspace(0, PI, 9)
    ref = np.stack([np.sin(3 * x), np.cos(3 * x)], -1) / np.sqrt(PI)
    v = y(x)
    k = np.argmax(np.abs(ref[:, 1]))
    ph = v[k, 1] / ref[k, 1]
    assert abs(abs(ph) - 1) < 1e-12
    assert np.allclose(v, ph * ref, atol=1e-12)


def test_periodic_eigenfunctions_span_c_and_s():
    ys = unperturbed_eigenfunctions(BoundaryForm.preset("periodic"), 2)
    assert len(ys) == 2
    x = np.linspace(0, PI, 7)
    F = free_fundamental(4.0, x)
    for y in ys:
        assert y.a1 == 0 and y.b1 == 0
        assert np.allclose(y(x), F[..., :, 0] * y.a0 + F[..., :, 1] * y.b0)
    # two independent coefficient vectors
    G = np.array([[y.a0, y.b0] for y in ys])
    assert abs(np.linalg.det(G)) > 0.1


def test_jordan_chain():
    # y1(0) = 2 y1(pi), y2(0) = y2(pi): only s0 is an eigenfunction
    U = _form([1, 0, -2, 0, 0, 1, 0, -1])
    sp = unperturbed_spectrum(U)
    assert sp.kind == "double"
    y0, y1 = unperturbed_eigenfunctions(U, 1)
    lam = y0.lam
    x = np.linspace(0, PI, 41)
    B = np.array([[0, 1], [-1, 0]])
    chain = -(y1.derivative(x) @ B.T) - lam * y1(x) - y0(x)
    assert np.abs(chain).max() < 1e-12
    assert np.abs(U.apply(y1(0.0), y1(PI))).max() < 1e-12
    assert abs(y0.a0) < 1e-12  # proportional to s0


def test_green0_against_bvp_oracle():
    U = BoundaryForm.preset("dirichlet")
    x = np.linspace(0, PI, 2049)
    f = GridFunction(x, np.stack([np.ones_like(x), np.zeros_like(x)], -1))
    y = green0_apply(U, 1j, f)
    ref = bvp_free(U, 1j, lambda t: np.stack([np.ones_like(t), np.zeros_like(t)]), x)
    assert np.abs(y.values - ref).max() < 1e-8
    assert np.abs(U.apply(y.values[0], y.values[-1])).max() < 1e-8


def test_green0_rejects_eigenvalue():
    x = np.linspace(0, PI, 65)
    f = GridFunction(x, np.ones((65, 2)))
    with pytest.raises(BoundaryError):
        green0_apply(BoundaryForm.preset("dirichlet"), 2.0, f)
