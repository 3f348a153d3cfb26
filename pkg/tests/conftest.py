import os

import numpy as np
import pytest

from dysonmc import (CorrelationProfile, FilterSpec, LimitGrid, density_curve,
                     profile_from_filter)

MODELS_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "models")


def m_semicircle(z):
    """Stieltjes transform of the semicircle law, upper-half-plane branch."""
    z = complex(z)
    return (-z + np.sqrt(z - 2.0) * np.sqrt(z + 2.0)) / 2.0


def center_tap_filter(value=1.0, r=1):
    c = np.zeros((1, 1, 2 * r + 1, 2 * r + 1))
    c[0, 0, r, r] = value
    return FilterSpec(radius_r=r, kind="constant", coefficients=c)


def two_tap_spec(floor=0.1):
    c = np.zeros((1, 1, 3, 3))
    c[0, 0, 1, 1] = c[0, 0, 2, 1] = 2.0 ** -0.5
    return FilterSpec(radius_r=1, kind="constant", coefficients=c,
                      iid_floor=floor)


def constant_table(center=1.0, side=0.0, K=1):
    v = np.zeros((1, 1, 2 * K + 1, 2 * K + 1))
    v[0, 0, K, K] = center
    if side:
        v[0, 0, K + 1, K] = v[0, 0, K - 1, K] = side
    return CorrelationProfile(range_K=K, kind="constant", values=v)


@pytest.fixture(scope="session")
def models_dir():
    return os.path.abspath(MODELS_DIR)


@pytest.fixture(scope="session")
def wigner_filter():
    return center_tap_filter()


@pytest.fixture(scope="session")
def wigner_profile(wigner_filter):
    return profile_from_filter(wigner_filter)


@pytest.fixture(scope="session")
def two_tap_filter():
    return two_tap_spec()


@pytest.fixture(scope="session")
def two_tap_profile(two_tap_filter):
    return profile_from_filter(two_tap_filter)


@pytest.fixture(scope="session")
def two_tap_grid(two_tap_profile):
    # small-eta coefficient decay for this kernel needs the wider band
    return LimitGrid.for_profile(two_tap_profile, K_trunc=64)


@pytest.fixture(scope="session")
def v34_profile():
    return constant_table(center=0.75)


@pytest.fixture(scope="session")
def bilinear_profile():
    v = np.zeros((2, 2, 3, 3))
    v[:, :, 1, 1] = [[0.5, 0.8], [0.8, 1.0]]
    return CorrelationProfile(range_K=1, kind="bilinear", values=v)


@pytest.fixture(scope="session")
def two_tap_curve(two_tap_profile, two_tap_grid):
    E = np.linspace(-3.5, 3.5, 141)
    return density_curve(two_tap_profile, E, 1e-3, grid=two_tap_grid)


@pytest.fixture(scope="session")
def wigner_curve(wigner_profile):
    E = np.linspace(-2.6, 2.6, 209)
    return density_curve(wigner_profile, E, 1e-3)
