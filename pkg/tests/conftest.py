import numpy as np
import pytest

from kinetrate import (BoundaryGrid, PhaseGrid, Resolvent, TransferOperator, VelocityMeasure,
                       make_domain, make_kernel)


class Setup:
    def __init__(self, shape="disk", n_nodes=48, n_speeds=6, n_angles=16, c=0.25,
                 family="maxwellian", theta=1.0, exponent_a=2.0, semi_axes=None,
                 weight="lebesgue", phase=True):
        self.domain = make_domain(shape, semi_axes)
        self.vm = VelocityMeasure(c, weight, 2, n_speeds, n_angles)
        self.bgrid = BoundaryGrid(self.domain, self.vm, n_nodes)
        self.kernel = make_kernel(self.domain, self.vm, family, theta, exponent_a)
        self.op = TransferOperator(self.bgrid, self.kernel)
        if phase:
            self.pgrid = PhaseGrid(self.bgrid)
            self.res = Resolvent(self.pgrid, self.op)


@pytest.fixture(scope="session")
def disk():
    return Setup("disk")


@pytest.fixture(scope="session")
def ellipse():
    return Setup("ellipse")


@pytest.fixture(scope="session")
def disk_fine():
    return Setup("disk", n_nodes=96, n_speeds=12, n_angles=32, phase=False)


@pytest.fixture(scope="session")
def power_disk():
    return Setup("disk", family="power", exponent_a=2.0)


def smooth_zero_mean(s, seed=0):
    """Smooth signed density with zero mass on the phase grid of ``s``."""
    from kinetrate import PhaseDensity
    rng = np.random.default_rng(seed)
    a, b, p = rng.normal(size=3)

    def f(x, v):
        r = np.linalg.norm(v, axis=-1)
        return (1 + 0.5 * np.tanh(a * x[..., 0] + b * x[..., 1] + p * v[..., 0])) * np.exp(-r**2 / 2)

    g = PhaseDensity.from_function(s.pgrid, f)
    psi = s.res.invariant_density()
    return g - psi * (g.mass() / psi.mass())


FIXTURE_FILE = __import__("os").path.join(__import__("os").path.dirname(__file__),
                                           "fixtures", "regression.json")


def pinned(name, values, rtol=1e-6, config=None):
    """Check ``values`` against the pinned regression fixture ``name``.

    With ``KINETRATE_RECORD_FIXTURES=1`` the values are (re)recorded instead.
    """
    import os

    from kinetrate.config import parse_config
    from kinetrate.fixtures import check_fixture, record_fixture

    h = (config or parse_config(None)).digest()
    if os.environ.get("KINETRATE_RECORD_FIXTURES") == "1":
        os.makedirs(os.path.dirname(FIXTURE_FILE), exist_ok=True)
        record_fixture(FIXTURE_FILE, name, h, values)
        return True
    return check_fixture(FIXTURE_FILE, name, h, values, rtol=rtol)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
