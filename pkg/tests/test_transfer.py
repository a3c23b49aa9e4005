import numpy as np
import pytest

from kinetrate import BoundaryOperator, SpectralSeparationError
from kinetrate.transfer import SingularSystemError, high_frequency_decay, power_radius

from conftest import Setup


def l1(bg, x):
    return float(np.sum(bg.mu * np.abs(x)))


def test_radius_at_zero(disk, disk_fine):
    assert abs(disk.op.spectral_radius(0.0) - 1) <= 5e-3
    assert abs(disk_fine.op.spectral_radius(0.0) - 1) <= 2e-3
    assert disk.op.spectral_radius(0.0, "dense") == pytest.approx(disk.op.spectral_radius(0.0), abs=1e-10)
    assert disk.op.spectral_radius(0.0, "power") == pytest.approx(1.0, abs=1e-8)


def test_power_radius_trivial():
    assert power_radius(lambda x: 0.5 * x, 1) == pytest.approx(0.5)


def test_matrix_nonnegative_stochastic(ellipse):
    op, bg = ellipse.op, ellipse.bgrid
    M0 = op.dense(0.0)
    assert np.all(M0 >= 0)
    # column flux masses are one
    np.testing.assert_allclose(bg.mu @ M0 / bg.mu, 1.0, atol=1e-12)
    assert np.all(np.abs(op.dense(1.0)) <= M0 + 1e-15)
    assert np.all(np.abs(op.dense(0.3 + 2j)) <= M0 + 1e-15)


def test_lambda_domain(disk):
    with pytest.raises(ValueError):
        disk.op.A(-0.1)


def test_epsilon_lipschitz(disk):
    op, bg = disk.op, disk.bgrid
    D = disk.domain.diameter
    C = op.weighted_H_norm()
    eps = 0.01
    for eta in np.linspace(0, 10, 20):
        diff = op.l1_norm(op.dense(eps + 1j * eta) - op.dense(1j * eta))
        assert diff <= eps * D * C * (1 + 1e-12)


def test_continuity_in_eta(disk):
    op = disk.op
    rng = np.random.default_rng(0)
    for eta in rng.uniform(-5, 5, 5):
        d = [op.l1_norm(op.dense(1j * (eta + h)) - op.dense(1j * eta)) for h in (1e-2, 1e-3, 1e-4)]
        assert d[0] > d[1] > d[2]
        assert d[2] < 1e-3


def test_eta_derivatives(disk):
    op = disk.op
    tau = op.tau[:, None]
    eta, h = 0.7, 1e-4
    for k in (1, 2):
        exact = (-1j * tau) ** k * op.dense(1j * eta)
        if k == 1:
            fd = (op.dense(1j * (eta + h)) - op.dense(1j * (eta - h))) / (2 * h)
        else:
            fd = (op.dense(1j * (eta + h)) - 2 * op.dense(1j * eta) + op.dense(1j * (eta - h))) / h**2
        h = 1e-3
        assert np.linalg.norm(fd - exact) <= 1e-6 * np.linalg.norm(exact) * (1 if k == 1 else 10)


def test_radius_margin(disk):
    for eta in (0.25, 0.5, 1.0, 2.0, 4.0):
        assert disk.op.spectral_radius(1j * eta) <= 1 - 1e-3


def test_leading_eigenpair_zero(disk, ellipse):
    for s in (disk, ellipse):
        rep = s.op.leading_eigenpair(0.0)
        bg = s.bgrid
        assert rep.nu == pytest.approx(1.0, abs=1e-12)
        assert np.all(rep.phi > 0)
        assert np.sum(bg.mu * rep.phi) == pytest.approx(1.0, abs=1e-13)
        assert rep.residual <= 1e-10
        assert np.sum(bg.mu * rep.phi * rep.phi_star.conj()) == pytest.approx(1.0, abs=1e-12)
        # wall Maxwellian flux, independent of x
        M = np.exp(-bg.speed**2 / 2)
        ratio = rep.phi / M
        assert np.ptp(ratio) <= 1e-10 * ratio.mean()


def test_nu_taylor(disk):
    op = disk.op
    nup = op.nu_prime_zero()
    assert nup < 0
    nu = op.leading_eigenpair(0.01).nu
    assert abs(nu - (1 + 0.01 * nup)) <= 3e-4
    # Richardson table: second differences are consistent with a smooth path
    n1, n2, n4 = (op.leading_eigenpair(e).nu.real for e in (0.005, 0.01, 0.02))
    assert abs((n4 - 1) / 0.02 - 2 * (n2 - 1) / 0.01 + (n1 - 1) / 0.005) < 0.05


def test_nu_prime_fd(disk, ellipse):
    for s in (disk, ellipse):
        nup = s.op.nu_prime_zero()
        fd = (s.op.leading_eigenpair(1e-3).nu.real - 1) / 1e-3
        assert abs(nup - fd) <= 0.02 * abs(fd)


def test_separation_error(disk):
    with pytest.raises(SpectralSeparationError):
        disk.op.leading_eigenpair(0.0, r0=1.5)


def test_projection(disk):
    op, bg, res = disk.op, disk.bgrid, disk.res
    P = op.projection(0.0)
    phi = op.leading_eigenpair(0.0).phi
    assert np.linalg.norm(P.apply(phi) - phi) <= 1e-8 * np.linalg.norm(phi)
    Pd = P.dense()
    assert np.linalg.norm(Pd @ Pd - Pd) <= 1e-8 * np.linalg.norm(Pd)
    sv = np.linalg.svd(Pd, compute_uv=False)
    assert sv[1] <= 1e-8 * sv[0]
    from conftest import smooth_zero_mean
    f = smooth_zero_mean(disk)
    G0 = res.trace_G(0.0, f)
    assert np.linalg.norm(P.apply(G0)) <= 1e-8 * max(np.linalg.norm(G0), 1)


def test_projection_derivative(disk):
    op = disk.op
    phi = op.leading_eigenpair(0.0).phi
    d = op.projection_derivative_zero(phi)
    fd = (op.projection(1e-3).apply(phi) - op.projection(0.0).apply(phi)) / 1e-3
    assert np.linalg.norm(d - fd) <= 1e-2 * np.linalg.norm(fd)
    rng = np.random.default_rng(1)
    psi = rng.normal(size=op.size)
    np.testing.assert_allclose(op.projection_derivative_zero(2.5 * psi),
                               2.5 * op.projection_derivative_zero(psi), rtol=1e-10, atol=1e-12)


def test_constant_travel_time_synthetic():
    s = Setup(phase=False)
    op = s.op
    T0 = 1.3
    op.tau = np.full(op.size, T0)
    # M_lambda H = exp(-lambda T0) M_0 H: P is constant and nu = exp(-lambda T0)
    assert op.nu_prime_zero() == pytest.approx(-T0, rel=1e-13)
    rng = np.random.default_rng(2)
    psi = rng.normal(size=op.size)
    assert np.linalg.norm(op.projection_derivative_zero(psi)) <= 1e-10 * np.linalg.norm(psi)
    assert op.leading_eigenpair(0.1).nu == pytest.approx(np.exp(-0.1 * T0), abs=1e-12)


def test_solve(disk):
    op, bg = disk.op, disk.bgrid
    assert np.all(op.solve(1.0, np.zeros(op.size)) == 0)
    rng = np.random.default_rng(3)
    psi = rng.normal(size=op.size)
    x = op.solve(1.0, psi)
    assert l1(bg, x - op.apply(1.0, x) - psi) <= 1e-10 * l1(bg, psi)
    r = op.l1_norm(op.dense(1.0))
    assert r < 1
    assert l1(bg, x) <= l1(bg, psi) / (1 - r)
    xn = op.neumann_solve(1.0, psi)
    assert l1(bg, xn - x) <= 1e-10 * l1(bg, x)
    with pytest.raises(SingularSystemError):
        op.solve(0.0, np.abs(psi))
    psi0 = psi - np.sum(bg.mu * psi) / np.sum(bg.mu) * np.ones(op.size)
    y = op.solve(0.0, psi0)
    assert l1(bg, y - op.apply(0.0, y) - psi0) <= 1e-10 * l1(bg, psi0)


def test_high_frequency_decay(disk):
    rows = high_frequency_decay(disk.op, [0.0, 4.0, 64.0])
    assert rows[0][1] == pytest.approx(1.0, abs=1e-12)
    assert rows[2][2] <= 0.5 * rows[1][2]
    # the grid column cannot decay: finitely many velocities
    assert rows[2][1] > 0.1


def test_square_norm_epsilon_consistency(disk):
    op = disk.op
    C = op.weighted_H_norm()
    D = disk.domain.diameter
    for eta in (1.0, 4.0, 16.0):
        a = op.square_norm(0.01 + 1j * eta)
        b = op.square_norm(1j * eta)
        assert a <= b + 0.01 * D * C * 2


def test_boundary_operator_matches_grid(disk, disk_fine):
    errs = []
    for s in (disk, disk_fine):
        bg = s.bgrid
        L = BoundaryOperator(bg, s.kernel).matrix(0.0)
        K = s.op.K(0.0)
        rng = np.random.default_rng(4)
        e = 0
        for _ in range(5):
            a = rng.normal(size=2)
            F = 1 + 0.3 * np.cos(bg.s + a[0]) + 0.2 * np.sin(2 * bg.s + a[1])
            e = max(e, np.sum(bg.w * np.abs(K @ F - L @ F)) / np.sum(bg.w * np.abs(F)))
        errs.append(e)
    assert errs[0] <= 5e-4
    assert errs[1] <= 1e-4
    assert errs[0] / errs[1] >= 2 ** 1.8
