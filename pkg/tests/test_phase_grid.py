import numpy as np
import pytest

from kinetrate import (BoundaryGrid, PhaseDensity, PhaseGrid, StateError, VelocityMeasure,
                       make_domain, weighted_norm)
from kinetrate.phase_grid import integrate_formula_check, zero_mean_projected


@pytest.fixture(scope="module")
def annulus_grid():
    dom = make_domain("disk")
    vm = VelocityMeasure(0.5, n_speeds=6, n_angles=16)
    return PhaseGrid(BoundaryGrid(dom, vm, 48))


def test_velocity_measure_mass():
    for rule in ("linear", "log"):
        vm = VelocityMeasure(0.25, n_speeds=12, n_angles=16, speed_rule=rule)
        # annulus area pi (1/c^2 - c^2)
        exact = np.pi * (16 - 1 / 16)
        assert vm.total_mass() == pytest.approx(exact, rel=1e-12)
        assert vm.grid_mass() == pytest.approx(exact, rel=1e-10)
        assert np.all((vm.speeds > 0.25) & (vm.speeds < 4))
    vm = VelocityMeasure(0.5, "power:1")
    # int r * r dr over (0.5, 2) times 2 pi
    assert vm.total_mass() == pytest.approx(2 * np.pi * (8 - 0.125) / 3, rel=1e-12)


def test_velocity_measure_errors():
    with pytest.raises(ValueError):
        VelocityMeasure(1.5)
    with pytest.raises(ValueError):
        VelocityMeasure(0.25, "gaussian")


def test_weighted_norm_examples(annulus_grid):
    pg = annulus_grid
    assert weighted_norm(PhaseDensity(pg, np.zeros(pg.shape))) == 0.0
    one = PhaseDensity(pg, np.ones(pg.shape))
    # |disk| * |annulus| = pi * pi (4 - 1/4)
    assert one.norm(0) == pytest.approx(np.pi**2 * 3.75, rel=1e-9)
    # pi * 2 pi * (int_0.5^1 1 dr + int_1^2 r dr) = 4 pi^2
    assert one.norm(1) == pytest.approx(4 * np.pi**2, rel=1e-3)


def test_norm_monotone(disk):
    rng = np.random.default_rng(0)
    f = PhaseDensity(disk.pgrid, rng.normal(size=disk.pgrid.shape))
    n = [f.norm(k) for k in range(4)]
    assert all(n[i] <= n[i + 1] for i in range(3))


def test_flux_norm_tuple(disk):
    bg = disk.bgrid
    vals = np.ones(bg.size)
    assert weighted_norm((bg, vals)) == pytest.approx(np.sum(bg.mu))


def test_integrate_formula(disk):
    bg = disk.bgrid
    dom, vm = bg.domain, bg.vm
    a, b = integrate_formula_check(bg, lambda x, v: np.ones(len(x)))
    exact = dom.volume * vm.total_mass()
    assert a == pytest.approx(exact, rel=1e-9)
    assert b == pytest.approx(exact, rel=1e-9)
    a, b = integrate_formula_check(bg, lambda x, v: np.linalg.norm(v, axis=-1))
    assert abs(a - b) <= 1e-6 * a
    a, b = integrate_formula_check(bg, lambda x, v: (x[:, 0] > 0).astype(float))
    assert abs(a - b) <= 2e-3 * a


def test_flux_identity(ellipse):
    psi = lambda x, v: np.exp(-np.sum(v**2, -1) / 2) * (1 + 0.3 * x[..., 0])
    a, b = ellipse.bgrid.flux_identity(psi)
    assert abs(a - b) <= 1e-6 * a


def test_flat_and_padded_layouts(disk):
    pg = disk.pgrid
    assert pg.total_bins == int(pg.mask.sum())
    np.testing.assert_array_equal(pg.h[pg.mask], pg.flat_h)
    np.testing.assert_array_equal(pg.vol[pg.mask], pg.flat_vol)
    # bins tile each chord exactly
    np.testing.assert_allclose(pg.h.sum(axis=1), disk.bgrid.tau, rtol=1e-13)
    f = lambda x, v: x[..., 0] + v[..., 1]
    np.testing.assert_allclose(pg.flat_eval(f, chunk=1000),
                               PhaseDensity.from_function(pg, f).values[pg.mask])


def test_mass_of_constant(disk):
    pg = disk.pgrid
    f = PhaseDensity(pg, 2.5 * np.ones(pg.shape))
    exact = 2.5 * disk.domain.volume * disk.vm.total_mass()
    assert f.mass() == pytest.approx(exact, rel=1e-9)


def test_zero_mean_projection(disk):
    pg = disk.pgrid
    with pytest.raises(StateError):
        zero_mean_projected(PhaseDensity(pg, np.ones(pg.shape)), None)
    psi = disk.res.invariant_density()
    assert zero_mean_projected(psi, psi).norm(0) <= 1e-10
    rng = np.random.default_rng(3)
    f = PhaseDensity(pg, rng.normal(size=pg.shape) + 0.3)
    g = zero_mean_projected(f, psi)
    assert abs(g.mass()) <= 1e-12 * f.norm(0)


def test_density_shape_check(disk):
    with pytest.raises(ValueError):
        PhaseDensity(disk.pgrid, np.zeros((3, 3)))
