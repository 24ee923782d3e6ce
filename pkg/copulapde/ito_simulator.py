"""Euler-Maruyama simulation of the portfolio, driver and correlation systems.

Brownian draws come from a ``numpy.random.SeedSequence`` split into one
substream per block of ``PATH_BLOCK`` paths. Every block draws a full block,
so path ``k`` is identical whatever the number of paths requested and
whatever the number of workers.

"""

from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
import logging
import numpy as np
import pandas as pd
from .const import EPS_RHO
from .exceptions import ContractError
from .helpers import plural
from .market_pipeline import ReturnTable
from .pde_residuals import ito_consistency

log = logging.getLogger(__name__)

PATH_BLOCK = 256
DYNAMICS = ('geometric', 'arithmetic')
JITTER = 1e-12

PathSet = namedtuple('PathSet', ['p', 'D', 'rho', 'dt'])
OrderErrors = namedtuple('OrderErrors', ['dts', 'strong', 'weak'])
ConsistencyStudy = namedtuple('ConsistencyStudy', ['dts', 'errors', 'ratios',
                                                   'slope'])
SyntheticMarket = namedtuple('SyntheticMarket', [
    'table', 'loadings', 'rho', 'constituents', 'drivers', 'implanted'])


class ItoParams(namedtuple('ItoParams', [
        'n', 'mu_p', 'sigma_p', 'mu_D', 'sigma_D', 'corr_D', 'mu_rho',
        'sigma_rho', 'dt', 'steps', 'seed', 'a0', 'p0', 'D0', 'rho0',
        'corr_pD', 'dynamics'])):
    """Parameters of the three coupled stochastic systems.

    The portfolio coordinate ``p`` is an arithmetic Brownian motion, the
    drivers follow ``dynamics`` (geometric by default) and the ``n * m``
    correlations, stored row-major by constituent, follow a geometric
    Brownian motion reflected inside ``|rho| <= 1 - EPS_RHO``.

    """

    __slots__ = ()

    @classmethod
    def create(cls, n, m, **overrides):
        """Return validated parameters, defaults overridden by keyword."""
        values = {'n': n, 'mu_p': 0.0, 'sigma_p': 0.1,
                  'mu_D': np.zeros(m), 'sigma_D': np.full(m, 0.2),
                  'corr_D': np.eye(m), 'mu_rho': np.zeros(n * m),
                  'sigma_rho': np.zeros(n * m), 'dt': 1.0 / 252,
                  'steps': 252, 'seed': 0, 'a0': np.full(n, 0.5), 'p0': 0.0,
                  'D0': np.ones(m), 'rho0': np.full(n * m, 0.3),
                  'corr_pD': np.zeros(m), 'dynamics': 'geometric'}
        unknown = set(overrides) - set(values)
        if unknown:
            raise ContractError('Unknown parameters: {0}'.format(
                ', '.join(sorted(unknown))))
        values.update(overrides)
        return cls(**values).validated()

    @property
    def m(self):
        """Return the number of drivers."""
        return len(self.sigma_D)

    def replace(self, **changes):
        """Return a validated copy with ``changes`` applied."""
        return self._replace(**changes).validated()

    def validated(self):
        """Return a copy with array fields coerced, or raise ContractError."""
        n = int(self.n)
        arrays = dict((name, np.atleast_1d(np.asarray(getattr(self, name),
                                                      dtype=float)))
                      for name in ('mu_D', 'sigma_D', 'mu_rho', 'sigma_rho',
                                   'a0', 'D0', 'rho0', 'corr_pD'))
        m = arrays['sigma_D'].shape[0]
        corr_D = np.asarray(self.corr_D, dtype=float)
        expected = {'mu_D': m, 'sigma_D': m, 'D0': m, 'corr_pD': m, 'a0': n,
                    'mu_rho': n * m, 'sigma_rho': n * m, 'rho0': n * m}
        for name, size in expected.items():
            if arrays[name].shape != (size,):
                raise ContractError('{0} must have {1} entries'.format(
                    name, size))
        if corr_D.shape != (m, m) or not np.allclose(corr_D, corr_D.T):
            raise ContractError('corr_D must be a symmetric {0}x{0} matrix'
                                .format(m))
        if not np.allclose(np.diag(corr_D), 1.0):
            raise ContractError('corr_D must have a unit diagonal')
        if (self.sigma_p < 0 or np.any(arrays['sigma_D'] < 0) or
                np.any(arrays['sigma_rho'] < 0)):
            raise ContractError('Volatilities must be non-negative')
        if not self.dt > 0:
            raise ContractError('dt must be positive')
        if int(self.steps) < 1:
            raise ContractError('steps must be at least 1')
        if self.dynamics not in DYNAMICS:
            raise ContractError('Unknown driver dynamics: {0!r}'
                                .format(self.dynamics))
        if np.any(np.abs(arrays['rho0']) > 1 - EPS_RHO):
            raise ContractError('rho0 must lie inside the correlation clamp')
        arrays.update(n=n, corr_D=corr_D, steps=int(self.steps),
                      seed=int(self.seed), dt=float(self.dt),
                      mu_p=float(self.mu_p), sigma_p=float(self.sigma_p),
                      p0=float(self.p0))
        return self._replace(**arrays)

    @property
    def horizon(self):
        """Return ``dt * steps``."""
        return self.dt * self.steps


def brownian_factor(params):
    """Return the lower Cholesky factor of the joint (p, D) correlation.

    A negative eigenvalue raises ContractError naming it. Positive
    semidefinite but singular matrices are factored with a small jitter.

    """
    m = params.m
    joint = np.eye(1 + m)
    joint[0, 1:] = joint[1:, 0] = params.corr_pD
    joint[1:, 1:] = params.corr_D
    smallest = np.linalg.eigvalsh(joint).min()
    if smallest < -1e-10:
        raise ContractError(
            'Brownian correlation is not positive semidefinite '
            '(eigenvalue {0:.3g})'.format(smallest))
    try:
        return np.linalg.cholesky(joint)
    except np.linalg.LinAlgError:
        log.debug('Singular Brownian correlation, factoring with jitter')
        return np.linalg.cholesky(joint + JITTER * np.eye(1 + m))


def brownian_increments(params, n_paths, workers=1):
    """Return correlated Brownian increments of shape (steps, dim, n_paths).

    ``dim`` is ``1 + m + n * m``: the portfolio, the drivers and the
    correlations, in that order. Only the portfolio and driver increments are
    correlated with each other.

    """
    if n_paths < 1:
        raise ContractError('At least one path is required')
    factor = brownian_factor(params)
    m = params.m
    dim = 1 + m + params.n * m
    blocks = -(-n_paths // PATH_BLOCK)
    sequences = np.random.SeedSequence(params.seed).spawn(blocks)
    scale = np.sqrt(params.dt)

    def draw(index):
        rng = np.random.default_rng(sequences[index])
        normals = rng.standard_normal((params.steps, dim, PATH_BLOCK))
        normals[:, :1 + m] = np.einsum('ab,sbp->sap', factor,
                                       normals[:, :1 + m])
        return scale * normals

    if workers > 1 and blocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(draw, range(blocks)))
    else:
        parts = [draw(index) for index in range(blocks)]
    return np.concatenate(parts, axis=2)[:, :, :n_paths]


def _reflect(rho):
    bound = 1.0 - EPS_RHO
    rho = np.where(rho > bound, 2.0 * bound - rho, rho)
    rho = np.where(rho < -bound, -2.0 * bound - rho, rho)
    return np.clip(rho, -bound, bound)


def euler_maruyama(params, increments):
    """Return the PathSet driven by ``increments``.

    The step count and path count come from ``increments``; the step size is
    ``params.dt``. Paths include the initial state.

    """
    steps, dim, n_paths = increments.shape
    m = params.m
    if dim != 1 + m + params.n * m:
        raise ContractError('Increments have {0}, expected {1}'.format(
            plural(dim, 'dimension'), 1 + m + params.n * m))
    dt = params.dt
    p = np.empty((steps + 1, n_paths))
    D = np.empty((steps + 1, m, n_paths))
    rho = np.empty((steps + 1, params.n * m, n_paths))
    p[0] = params.p0
    D[0] = params.D0[:, None]
    rho[0] = params.rho0[:, None]
    mu_D, sigma_D = params.mu_D[:, None], params.sigma_D[:, None]
    mu_rho, sigma_rho = params.mu_rho[:, None], params.sigma_rho[:, None]
    geometric = params.dynamics == 'geometric'
    for t in range(steps):
        dW = increments[t]
        p[t + 1] = p[t] + params.mu_p * dt + params.sigma_p * dW[0]
        level = D[t] if geometric else 1.0
        D[t + 1] = D[t] + level * (mu_D * dt + sigma_D * dW[1:1 + m])
        rho[t + 1] = _reflect(rho[t] + rho[t] * (mu_rho * dt +
                                                 sigma_rho * dW[1 + m:]))
    return PathSet(p, D, rho, dt)


def simulate(params, n_paths, workers=1):
    """Return ``n_paths`` Euler-Maruyama paths for ``params``."""
    log.debug('Simulating {0} of {1}'.format(
        plural(n_paths, 'path'), plural(params.steps, 'step')))
    return euler_maruyama(params,
                          brownian_increments(params, n_paths, workers))


def coarsen(increments):
    """Return increments for twice the step size by summing pairs."""
    if increments.shape[0] % 2:
        raise ContractError('Cannot coarsen an odd number of steps')
    return increments[0::2] + increments[1::2]


def _refinement(params, levels, n_paths, workers=1):
    """Yield ``(params, increments)`` from the coarsest to the finest level.

    All levels share the Brownian path of the finest one.

    """
    factor = 2 ** levels
    fine = params.replace(dt=params.dt / factor, steps=params.steps * factor)
    increments = brownian_increments(fine, n_paths, workers)
    runs = [(fine, increments)]
    for level in range(levels):
        factor //= 2
        increments = coarsen(increments)
        runs.append((params.replace(dt=params.dt / factor,
                                    steps=params.steps * factor),
                     increments))
    return list(reversed(runs))


def strong_weak_errors(params, n_paths, levels=3, workers=1):
    """Return Euler errors of the first driver against a half-step reference.

    Level ``l`` uses ``dt / 2**l``. Its strong error is the mean absolute
    pathwise difference at the horizon against level ``l + 1``; its weak
    error is the absolute difference of the means.

    """
    runs = _refinement(params, levels, n_paths, workers)
    finals = [euler_maruyama(p, inc).D[-1, 0] for p, inc in runs]
    strong = [float(np.mean(np.abs(a - b)))
              for a, b in zip(finals[:-1], finals[1:])]
    weak = [float(abs(a.mean() - b.mean()))
            for a, b in zip(finals[:-1], finals[1:])]
    return OrderErrors([p.dt for p, _ in runs[:-1]], strong, weak)


def ito_consistency_study(ps, params, levels=3, n_paths=64, workers=1):
    """Return the Ito consistency error over ``levels`` halvings of dt.

    The first level uses ``params.dt``; the horizon is fixed. ``slope`` is
    the least squares slope of log error against log dt.

    """
    runs = _refinement(params, levels - 1, n_paths, workers)
    errors = [ito_consistency(ps, euler_maruyama(p, inc), p)
              for p, inc in runs]
    dts = [p.dt for p, _ in runs]
    ratios = [a / b for a, b in zip(errors[:-1], errors[1:])]
    slope = float(np.polyfit(np.log(dts), np.log(errors), 1)[0])
    log.info('Ito consistency errors {0}, slope {1:.3f}'.format(
        ', '.join('{0:.3g}'.format(x) for x in errors), slope))
    return ConsistencyStudy(dts, errors, ratios, slope)


def gbm_covariance(mu_k, mu_q, rho_kq, sigma_k, sigma_q, t):
    """Return ``exp((mu_k + mu_q)(t - 1)) (exp(rho sigma_k sigma_q t) - 1)``.

    This is the covariance of two lagged unit-start driver GBMs as used by
    the pipeline's lag-one convention.

    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ContractError('t must be non-negative')
    value = (np.exp((mu_k + mu_q) * (t - 1.0)) *
             (np.exp(rho_kq * sigma_k * sigma_q * t) - 1.0))
    return value[()] if np.ndim(value) == 0 else value


def constituent_covariance(mu_v, mu_z, sigma_v, sigma_z, t, same=True):
    """Return the covariance of two constituents; zero when distinct."""
    if t < 0:
        raise ContractError('t must be non-negative')
    if not same:
        return 0.0
    return float(np.exp((mu_v + mu_z) * t) *
                 (np.exp(sigma_v * sigma_z * t) - 1.0))


def gbm_mean(D0, mu, t):
    """Return the mean of a geometric Brownian motion at time ``t``."""
    return np.asarray(D0, dtype=float) * np.exp(np.asarray(mu) * t)


def gen_synthetic_market(n, m, steps, params=None, seed=0, extra_drivers=0,
                         noise=0.2, loadings=None, start='2000-01-03',
                         event=None):
    """Return a synthetic market whose common drivers are known.

    Driver returns are correlated normal draws with annualized drift
    ``params.mu_D`` and volatility ``params.sigma_D``; ``extra_drivers``
    independent candidates share the first driver's volatility. Constituent
    ``i`` at date ``t`` is ``sum_j loadings[i, j] * D_j(t - 1)`` plus
    independent noise of annualized volatility ``noise``.

    ``event`` is an optional ``(driver, row, size)`` triple. It adds
    ``size`` standard deviations to the driver innovation reported at
    ``row``, so the constituents loaded on that driver inherit the shock at
    ``row + 1``.

    """
    if n < 1 or m < 1:
        raise ContractError('At least one constituent and one driver are '
                            'required')
    if params is None:
        params = ItoParams.create(n, m)
    if params.m != m:
        raise ContractError('params describe {0}, expected {1}'.format(
            plural(params.m, 'driver'), m))
    loadings = (np.ones((n, m)) if loadings is None
                else np.asarray(loadings, dtype=float))
    if loadings.shape != (n, m):
        raise ContractError('loadings must have shape ({0}, {1})'
                            .format(n, m))
    total = m + extra_drivers
    dt = params.dt
    rng = np.random.default_rng(seed)
    factor = np.linalg.cholesky(params.corr_D + JITTER * np.eye(m))
    shocks = rng.standard_normal((steps + 1, total))
    shocks[:, :m] = shocks[:, :m].dot(factor.T)
    sigma = np.concatenate([params.sigma_D,
                            np.full(extra_drivers, params.sigma_D[0])])
    mu = np.concatenate([params.mu_D, np.zeros(extra_drivers)])
    drivers = mu * dt + sigma * np.sqrt(dt) * shocks
    if event is not None:
        column, row, size = event
        if not 0 <= column < total or not 0 <= row < steps - 1:
            raise ContractError('event {0} is outside the market'
                                .format(event))
        drivers[row + 1, column] += size * sigma[column] * np.sqrt(dt)
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (n,))
    idiosyncratic = (noise * np.sqrt(dt) *
                     rng.standard_normal((steps, n)))
    constituents = drivers[:-1, :m].dot(loadings.T) + idiosyncratic

    covariance = (np.outer(params.sigma_D, params.sigma_D) * params.corr_D)
    loaded = loadings.dot(covariance)
    variance = np.einsum('ij,ij->i', loaded, loadings) + noise ** 2
    rho = np.zeros((n, total))
    rho[:, :m] = loaded / np.sqrt(np.outer(variance, np.diag(covariance)))

    names_a = ['A{0}'.format(i + 1) for i in range(n)]
    names_d = ['D{0}'.format(j + 1) for j in range(total)]
    dates = pd.bdate_range(start, periods=steps)
    frame = pd.DataFrame(np.hstack([constituents, drivers[1:]]),
                         index=pd.DatetimeIndex(dates, name='date'),
                         columns=names_a + names_d)
    log.debug('Generated {0} of {1} and {2}'.format(
        plural(steps, 'date'), plural(n, 'constituent'),
        plural(total, 'driver')))
    return SyntheticMarket(ReturnTable(frame), loadings, rho, names_a,
                           names_d, names_d[:m])


def consistency_params(n=2, m=2, seed=0, dt=1e-2, steps=50):
    """Return parameters for Ito consistency studies in probability space.

    Drivers are arithmetic and start inside the unit interval so simulated
    states stay valid constituent and driver probabilities.

    """
    corr_D = np.full((m, m), 0.3)
    np.fill_diagonal(corr_D, 1.0)
    return ItoParams.create(
        n, m, mu_p=0.01, sigma_p=0.1, mu_D=np.full(m, 0.02),
        sigma_D=np.full(m, 0.1), corr_D=corr_D, mu_rho=np.zeros(n * m),
        sigma_rho=np.full(n * m, 0.2), dt=dt, steps=steps, seed=seed,
        a0=np.linspace(0.4, 0.6, n), p0=0.0, D0=np.linspace(0.45, 0.6, m),
        rho0=np.linspace(0.3, 0.5, n * m), corr_pD=np.full(m, 0.2),
        dynamics='arithmetic')


def monte_carlo_covariance(mu, sigma, rho, t=1.0, n_paths=10 ** 5, steps=20,
                           seed=0, workers=1):
    """Return the simulated covariance of two unit-start driver GBMs at t.

    Returns ``(covariance, standard_error)``.

    """
    corr_D = np.array([[1.0, rho], [rho, 1.0]])
    params = ItoParams.create(1, 2, mu_D=np.full(2, mu),
                              sigma_D=np.full(2, sigma), corr_D=corr_D,
                              dt=t / steps, steps=steps, seed=seed)
    final = simulate(params, n_paths, workers).D[-1]
    product = ((final[0] - final[0].mean()) * (final[1] - final[1].mean()))
    return (float(product.sum() / (n_paths - 1)),
            float(product.std(ddof=1) / np.sqrt(n_paths)))


def covariance_check(sigmas=(0.1, 0.2, 0.3), rhos=(-0.5, 0.3, 0.9), t=1.0,
                     n_paths=10 ** 5, seed=0, bands=3.0, workers=1):
    """Compare gbm_covariance against simulation over a parameter grid.

    Returns one dict per grid point with the closed form, the simulated
    value, its standard error and whether they agree within ``bands``
    standard errors.

    """
    rows = []
    for sigma in sigmas:
        for rho in rhos:
            expected = gbm_covariance(0.0, 0.0, rho, sigma, sigma, t)
            value, error = monte_carlo_covariance(0.0, sigma, rho, t,
                                                  n_paths, seed=seed,
                                                  workers=workers)
            rows.append({'sigma': sigma, 'rho': rho,
                         'closed_form': float(expected),
                         'simulated': value, 'standard_error': error,
                         'agrees': abs(value - expected) <= bands * error})
    return rows
