import numpy as np
import pytest
from scipy import integrate

from kinetrate import DomainError, make_domain
from kinetrate.chv import (boundary_integral, c2_bound_constant, chv_identity_residual,
                           cofv_residual, delta_shell_integral, jacobian, jacobian_values)


def random_pairs(dom, n, rng):
    if dom.d == 2:
        s, t = rng.uniform(0, 2 * np.pi, (2, n))
        return dom.chart(s), dom.chart(t)
    u = rng.normal(size=(2, n, 3))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    return dom.snap(u[0] * dom.axes), dom.snap(u[1] * dom.axes)


def test_jacobian_circle_values():
    dom = make_domain("disk")
    assert jacobian(dom, np.array([1.0, 0.0]), np.array([-1.0, 0.0])).value == pytest.approx(0.5, abs=1e-15)
    phi = np.linspace(0.01, 2 * np.pi - 0.01, 100)
    y = np.stack([np.cos(phi), np.sin(phi)], 1)
    x = np.broadcast_to([1.0, 0.0], y.shape)
    J = jacobian(dom, x, y)
    np.testing.assert_allclose(J.value, np.sqrt(1 - np.cos(phi)) / 2**1.5, rtol=1e-12)
    assert np.all(J.indicator)


def test_jacobian_singular():
    dom = make_domain("disk")
    with pytest.raises(DomainError):
        jacobian(dom, np.array([1.0, 0.0]), np.array([1.0, 0.0]))


def test_indicator_forced_off():
    # convex shapes never truncate; the branch is exercised with an explicit flag
    dom = make_domain("ellipse", [2.0, 1.0])
    x, y = random_pairs(dom, 50, np.random.default_rng(0))
    val, ind = jacobian_values(dom, x, y, indicator=np.zeros(50, bool))
    assert np.all(val == 0) and not np.any(ind)
    val, ind = jacobian_values(dom, x, y)
    assert np.all(ind) and np.all(val > 0)


@pytest.mark.parametrize("shape,axes", [("disk", None), ("ellipse", [2.0, 1.0]), ("ball", None),
                                         ("ball", [1.5, 1.0, 0.7])])
def test_symmetry_and_bounds(shape, axes):
    dom = make_domain(shape, axes)
    x, y = random_pairs(dom, 10**4, np.random.default_rng(1))
    jxy, _ = jacobian_values(dom, x, y)
    jyx, _ = jacobian_values(dom, y, x)
    assert np.max(np.abs(jxy - jyx)) <= 1e-12
    r = np.linalg.norm(x - y, axis=1)
    d = dom.d
    C = c2_bound_constant(dom, 4096, seed=2)
    assert np.all(jxy <= r ** (1 - d) * (1 + 1e-12))
    assert np.all(jxy <= C**2 * r ** (3 - d) * (1 + 1e-9))


def test_c2_constant():
    assert c2_bound_constant(make_domain("disk")) == pytest.approx(0.5, abs=1e-10)
    assert c2_bound_constant(make_domain("ball")) == pytest.approx(0.5, abs=1e-10)
    ell = make_domain("ellipse", [2.0, 1.0])
    vals = [c2_bound_constant(ell, 4096, seed=s) for s in range(4)]
    # osculating limit at the tips: curvature a/b^2 = 2, half of it
    assert vals[0] == pytest.approx(1.0, rel=0.05)
    assert (max(vals) - min(vals)) / np.mean(vals) <= 0.05


def test_identity_circle():
    dom = make_domain("disk")
    x = np.array([np.cos(0.3), np.sin(0.3)])
    lhs, rhs, res = chv_identity_residual(dom, x, lambda s: np.ones(len(s)))
    # analytic oracle for the boundary side on the circle
    ref, _ = integrate.quad(lambda p: np.sqrt(1 - np.cos(p)), 0, 2 * np.pi, epsabs=1e-14)
    assert lhs == pytest.approx(2.0, abs=1e-12)
    assert ref / 2**1.5 == pytest.approx(2.0, abs=1e-12)
    assert abs(rhs - 2.0) <= 1e-8 and res <= 1e-8
    nx = dom.outward_normal(x)
    lhs, rhs, res = chv_identity_residual(dom, x, lambda s: (s @ nx) ** 2)
    assert lhs == pytest.approx(4 / 3, abs=1e-12)
    assert res <= 1e-8


def test_identity_ellipse_and_ball():
    ell = make_domain("ellipse", [2.0, 1.0])
    for s in np.linspace(0, 2 * np.pi, 7)[:-1]:
        lhs, rhs, res = chv_identity_residual(ell, ell.chart(s), lambda g: np.ones(len(g)))
        assert lhs == pytest.approx(2.0, abs=1e-12)
        assert res <= 1e-6
    ball = make_domain("ball")
    lhs, rhs, res = chv_identity_residual(ball, np.array([0.0, 0.6, 0.8]), lambda g: np.ones(len(g)))
    assert lhs == pytest.approx(np.pi, rel=1e-10)
    assert res <= 1e-6


def test_identity_refinement_order():
    ell = make_domain("ellipse", [2.0, 1.0])
    x = ell.chart(0.7)
    g = lambda s: np.exp(s[:, 0]) * (1 + s[:, 1] ** 2)
    ref = chv_identity_residual(ell, x, g)[0]
    errs = [abs(boundary_integral(ell, x, g, panels=p, order=2) - ref) for p in (8, 16, 32, 64)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 2.0)


def test_cofv_composite():
    ell = make_domain("ellipse", [2.0, 1.0])
    x = ell.chart(1.1)
    lhs, rhs, res = cofv_residual(ell, x, lambda t: np.exp(-t), lambda y: 1 + y[:, 0] ** 2)
    assert res <= 1e-6 * abs(lhs)


def test_delta_shell_circle():
    dom = make_domain("disk")
    y = np.array([0.0, 1.0])
    vals = []
    for delta in (0.4, 0.2, 0.1, 0.05):
        exact = 2 * (1 - np.sqrt(1 - delta**2 / 4))
        v = delta_shell_integral(dom, y, delta)
        assert v == pytest.approx(exact, abs=1e-8)
        vals.append(v)
    ratios = np.array(vals[:-1]) / np.array(vals[1:])
    np.testing.assert_allclose(ratios, 4.0, rtol=0.02)
    # o(delta) on C^2 shapes
    assert vals[-1] / 0.05 < vals[0] / 0.4


def test_delta_shell_ellipse_monotone():
    ell = make_domain("ellipse", [2.0, 1.0])
    ys = ell.chart(np.linspace(0, 2 * np.pi, 17)[:-1])
    deltas = [0.4, 0.2, 0.1, 0.05, 0.025]
    sup = [max(delta_shell_integral(ell, y, dl) for y in ys) for dl in deltas]
    assert np.all(np.diff(sup) < 0)
    assert sup[-1] / deltas[-1] < sup[0] / deltas[0]
    with pytest.raises(DomainError):
        delta_shell_integral(make_domain("ball"), np.array([0.0, 0.0, 1.0]), 0.1)
