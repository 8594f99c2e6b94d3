import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diracspec.potential import (GridFunction, Potential, gauge_transform, lp_norm,
                                 normalize_trace, trace_shift, weight_E)

PI = np.pi


def test_lp_norm_constant():
    assert lp_norm(1.0, 1) == pytest.approx(PI, rel=1e-12)
    assert lp_norm(1.0, 2) == pytest.approx(np.sqrt(PI), rel=1e-12)
    assert lp_norm(lambda x: np.sin(x), np.inf) == pytest.approx(1.0, abs=1e-8)


def test_lp_norm_endpoint_singularity():
    # antiderivative 2 sqrt(x) at pi
    Q = Potential.from_expressions(q1="x**-0.5", singular=(0.0,), p_class=1.0)
    assert lp_norm(Q.q1, 1, like=Q) == pytest.approx(2 * np.sqrt(PI), rel=1e-8)


def test_expression_rejects_unknown_names():
    with pytest.raises(ValueError):
        Potential.from_expressions(q1="os.system('x')")


def test_p_class_range():
    with pytest.raises(ValueError):
        Potential.from_expressions(q1=1.0, p_class=0.5)


def test_grid_and_piecewise_constructors():
    x = np.linspace(0, PI, 11)
    Q = Potential.from_grid(x, q1=x ** 2)
    assert Q.q1(np.array([x[3]]))[0] == pytest.approx(x[3] ** 2)
    P = Potential.piecewise([0, 1, PI], [{"q1": 1.0}, {"q1": "2*x"}])
    vals = P.q1(np.array([0.5, 2.0]))
    assert np.allclose(vals, [1.0, 4.0])
    assert P.breakpoints == (1.0,)
    with pytest.raises(ValueError):
        Potential.from_grid(np.linspace(0, 3, 5), q1=np.ones(5))


def test_matrix_layout_and_adjoint():
    Q = Potential.from_expressions(q1="1+2j", q2="3j", q3="x", q4=4)
    M = Q.matrix(np.array([0.5]))[0]
    assert np.allclose(M, [[1 + 2j, 3j], [0.5, 4]])
    A = Q.adjoint().matrix(np.array([0.5]))[0]
    assert np.allclose(A, M.conj().T)


def test_weight_E_closed_form():
    # det[c s] = exp(int (q2 - q3)); E is its square root
    Q = Potential.from_expressions(q3=2.0)
    assert complex(weight_E(Q, PI)) == pytest.approx(np.exp(-PI), rel=1e-12)
    assert complex(weight_E(Q, PI, literal=True)) == pytest.approx(0.5 * np.exp(PI), rel=1e-12)
    assert complex(weight_E(Potential.zero(), PI)) == 1


def test_normalize_trace_constant():
    Q = Potential.from_expressions(q1=1.0, q4=1.0)
    Qh, shift = normalize_trace(Q)
    assert shift == pytest.approx(1.0, abs=1e-12)
    x = np.linspace(0, PI, 7)
    for q in Qh.entries(x):
        assert np.allclose(q, 0, atol=1e-12)


def test_normalize_trace_removes_trace():
    Q = Potential.from_expressions(q1="0.3*cos(x)+0.2j", q2="sin(x)", q3="0.5", q4="x/3")
    Qh, shift = normalize_trace(Q)
    assert lp_norm(lambda x: Qh.q1(x) + Qh.q4(x), 1) < 1e-8
    assert shift == pytest.approx(trace_shift(Q), abs=1e-12)


def test_gauge_trace_identity():
    Q = Potential.from_expressions(q1="cos(x)", q2="x", q3="1j", q4="0.2*x**2")
    phi = lambda x: 0.3 * np.sin(2 * x)
    dphi = lambda x: 0.6 * np.cos(2 * x)
    Qt = gauge_transform(Q, phi, dphi)
    x = np.linspace(0, PI, 50)
    lhs = Qt.q1(x) + Qt.q4(x)
    rhs = -2 * dphi(x) + Q.q1(x) + Q.q4(x)
    assert np.allclose(lhs, rhs, atol=1e-13)
    # q2 - q3 is rotation invariant, so the weight E is unchanged
    assert np.allclose(Qt.q2(x) - Qt.q3(x), Q.q2(x) - Q.q3(x), atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 3))
def test_gauge_round_trip(a, b, k):
    Q = Potential.from_expressions(q1="cos(x)", q2="x+1j", q3="sin(2*x)", q4="0.5")
    phi = lambda x: a * np.sin(k * x) + b * x
    dphi = lambda x: a * k * np.cos(k * x) + b
    back = gauge_transform(gauge_transform(Q, phi, dphi), lambda x: -phi(x), lambda x: -dphi(x))
    x = np.linspace(0, PI, 40)
    for q0, q1 in zip(Q.entries(x), back.entries(x)):
        assert np.allclose(q0, q1, atol=1e-12)


def test_gridfunction_norms():
    x = np.linspace(0, PI, 2001)
    f = GridFunction(x, np.stack([np.sin(x), np.cos(x)], -1))
    # pointwise Euclidean norm is 1
    assert f.norm(2) == pytest.approx(np.sqrt(PI), rel=1e-6)
    assert f.norm(np.inf) == pytest.approx(1.0)
    assert f.inner(f) == pytest.approx(PI, rel=1e-6)
