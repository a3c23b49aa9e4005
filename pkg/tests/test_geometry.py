import numpy as np
import pytest
from scipy import integrate, optimize

from kinetrate import DomainError, make_domain


def random_interior(dom, n, rng):
    u = rng.normal(size=(n, dom.d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    rad = rng.uniform(0, 1, n) ** (1 / dom.d) * 0.999
    return u * rad[:, None] * dom.axes


def test_exit_time_examples():
    dom = make_domain("disk")
    assert dom.exit_time(np.array([0.0, 0.0]), np.array([1.0, 0.0]), "backward") == pytest.approx(1.0, abs=1e-14)
    assert dom.exit_time(np.array([1.0, 0.0]), np.array([-1.0, 0.0]), "forward") == pytest.approx(2.0, abs=1e-14)
    w = np.array([-1.0, 1.0]) / np.sqrt(2)
    t = dom.exit_time(np.array([1.0, 0.0]), w, "forward")
    # bisection on the implicit equation as an independent oracle
    tb = optimize.brentq(lambda s: np.sum((np.array([1.0, 0.0]) + s * w) ** 2) - 1, 0.1, 3.0, xtol=1e-15)
    assert t == pytest.approx(np.sqrt(2), abs=1e-13)
    assert t == pytest.approx(tb, abs=1e-12)


def test_exit_time_boundary_zero_side():
    dom = make_domain("disk")
    # leaving immediately in the backward direction from a boundary point
    assert dom.exit_time(np.array([1.0, 0.0]), np.array([-1.0, 0.0]), "backward") == pytest.approx(0.0, abs=1e-12)


def test_exit_time_errors():
    dom = make_domain("disk")
    with pytest.raises(DomainError):
        dom.exit_time(np.array([0.0, 0.0]), np.array([0.0, 0.0]))
    with pytest.raises(DomainError):
        dom.exit_time(np.array([2.0, 0.0]), np.array([1.0, 0.0]))


@pytest.mark.parametrize("shape", ["disk", "ellipse", "ball"])
def test_exit_points_on_surface_and_homogeneity(shape):
    dom = make_domain(shape)
    rng = np.random.default_rng(1)
    x = random_interior(dom, 10000, rng)
    v = rng.normal(size=x.shape)
    tp = dom.exit_time(x, v, "forward")
    tm = dom.exit_time(x, v, "backward")
    assert np.all(tp > 0) and np.all(tm > 0)
    assert np.max(np.abs(dom.level(x + tp[:, None] * v))) < 1e-10
    assert np.max(np.abs(dom.level(x - tm[:, None] * v))) < 1e-10
    assert np.all((tp + tm) * np.linalg.norm(v, axis=1) <= dom.diameter * (1 + 1e-12))
    for s in (0.5, 2.0, 10.0):
        ts = dom.exit_time(x, s * v, "forward")
        assert np.max(np.abs(ts - tp / s) / tp) <= 1e-12


def test_convexity_segments_inside():
    dom = make_domain("ellipse")
    rng = np.random.default_rng(2)
    x = random_interior(dom, 100, rng)
    v = rng.normal(size=x.shape)
    tm = dom.exit_time(x, v, "backward")
    for frac in np.linspace(0, 1, 11):
        assert np.all(dom.contains(x - frac * tm[:, None] * v))


def test_normals():
    disk = make_domain("disk")
    np.testing.assert_allclose(disk.outward_normal(np.array([1.0, 0.0])), [1, 0], atol=1e-15)
    np.testing.assert_allclose(disk.outward_normal(np.array([0.0, -1.0])), [0, -1], atol=1e-15)
    ell = make_domain("ellipse")
    np.testing.assert_allclose(ell.outward_normal(np.array([2.0, 0.0])), [1, 0], atol=1e-15)
    # normalised gradient of x^2/4 + y^2 - 1 at a generic point
    s = 0.7
    p = ell.chart(np.array([s]))[0]
    g = np.array([p[0] / 2, 2 * p[1]])
    np.testing.assert_allclose(ell.outward_normal(p), g / np.linalg.norm(g), atol=1e-14)
    with pytest.raises(DomainError):
        disk.outward_normal(np.array([0.5, 0.0]))


@pytest.mark.parametrize("shape", ["disk", "ellipse", "ball"])
def test_chart_points_on_surface(shape):
    dom = make_domain(shape)
    x, s, w = dom.boundary_quadrature(64)
    assert np.max(np.abs(dom.level(x))) < 1e-12
    n = dom.outward_normal(x)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-14)
    assert np.all(np.sum(n * x, axis=1) > 0)


def test_surface_measures():
    assert make_domain("disk").surface_measure() == pytest.approx(2 * np.pi, rel=1e-13)
    # independent oracle: adaptive quadrature of the perimeter integral
    per = integrate.quad(lambda t: np.sqrt(4 * np.sin(t) ** 2 + np.cos(t) ** 2), 0, 2 * np.pi,
                         epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    assert per == pytest.approx(9.688448220547675, rel=1e-12)
    assert make_domain("ellipse").surface_measure() == pytest.approx(per, rel=1e-10)
    assert make_domain("ball").surface_measure(64) == pytest.approx(4 * np.pi, rel=1e-10)


def test_diameters():
    assert make_domain("disk").diameter == 2.0
    assert make_domain("ellipse").diameter == 4.0
    assert make_domain("ball").diameter == 2.0


def test_chart_param_inverse():
    dom = make_domain("ellipse")
    s = np.linspace(0, 2 * np.pi, 50, endpoint=False)
    np.testing.assert_allclose(dom.chart_param(dom.chart(s)), s, atol=1e-12)


def test_unknown_shape():
    with pytest.raises(DomainError):
        make_domain("square")
