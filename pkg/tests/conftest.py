import numpy as np
import pytest

from shellseg.distance import build_distance_field
from shellseg.phantoms import PhantomSpec, analytic_field, generate_phantom
from shellseg.sphere import build_direction_grid


@pytest.fixture(scope="session")
def sphere_case():
    """Default sphere phantom (radius 30 in 128^3) with its mask-derived field."""
    spec = PhantomSpec()
    vol, mask = generate_phantom(spec)
    return spec, vol, mask, build_distance_field(mask)


@pytest.fixture(scope="session")
def small_sphere():
    """Radius-10 sphere in 40^3, quick enough for per-test rollouts."""
    spec = PhantomSpec(dims=(40, 40, 40), radius=10.0)
    vol, mask = generate_phantom(spec)
    return spec, vol, mask, build_distance_field(mask), analytic_field(spec)


@pytest.fixture(scope="session")
def grid16():
    return build_direction_grid(16, 16)


def random_mask(rng, shape, p=0.5, smooth=True):
    m = rng.random(shape) < p
    if smooth:
        from scipy import ndimage
        m = ndimage.binary_opening(m)
    return m


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import summary_lines
    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
