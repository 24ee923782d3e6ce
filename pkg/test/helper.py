"""copulapde test helpers."""

import logging
import shutil
import tempfile
import unittest
import numpy as np
import pandas as pd
from copulapde.market_pipeline import ReturnTable

# The 7 x 7 x 5 interior grid of (u, v, rho) points.
GRID_U = np.linspace(0.2, 0.8, 7)
GRID_RHO = np.array([-0.75, -0.35, 0.0, 0.35, 0.75])


def grid_points():
    """Return broadcast (u, v, rho) arrays over the interior grid."""
    return np.meshgrid(GRID_U, GRID_U, GRID_RHO, indexing='ij')


def random_points(seed, count=100):
    """Return ``count`` random interior (u, v, rho) triples."""
    rng = np.random.default_rng(seed)
    return (rng.uniform(0.15, 0.85, count), rng.uniform(0.15, 0.85, count),
            rng.uniform(-0.8, 0.8, count))


def random_system_inputs(seed, n, m, batch=()):
    """Return random ``(u, d, rho)`` of shapes (..., n), (..., m), (..., n, m).

    """
    rng = np.random.default_rng(seed)
    return (rng.uniform(0.15, 0.85, batch + (n,)),
            rng.uniform(0.15, 0.85, batch + (m,)),
            rng.uniform(-0.8, 0.8, batch + (n, m)))


def random_covariance(seed, m, scale=0.04):
    """Return a random positive definite ``m x m`` covariance."""
    rng = np.random.default_rng(seed)
    factor = rng.normal(size=(m, m))
    return scale * (factor.dot(factor.T) / m + 0.1 * np.eye(m))


def make_table(values, columns, start='2001-01-01'):
    """Return a ReturnTable over business days starting at ``start``."""
    values = np.asarray(values, dtype=float)
    dates = pd.bdate_range(start, periods=values.shape[0])
    return ReturnTable(pd.DataFrame(values,
                                    index=pd.DatetimeIndex(dates, name='date'),
                                    columns=columns))


def relative_error(actual, expected):
    """Return ``|actual - expected| / max(1, |actual|)`` elementwise."""
    actual = np.asarray(actual, dtype=float)
    return (np.abs(actual - np.asarray(expected, dtype=float)) /
            np.maximum(1.0, np.abs(actual)))


class TempDirTestCase(unittest.TestCase):
    """A test case with a fresh temporary directory and no log output."""

    def setUp(self):
        logging.disable(logging.CRITICAL)
        self.tmpdir = tempfile.mkdtemp(prefix='copulapde-test-')
        self.addCleanup(shutil.rmtree, self.tmpdir, True)

    def tearDown(self):
        logging.disable(logging.NOTSET)
