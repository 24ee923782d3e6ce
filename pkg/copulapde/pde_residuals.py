"""Risk-neutral drift and Brownian residuals of the conditional system.

The drift residual of driver ``j`` is::

    delta_j = 1/2 (beta_j d2P/dp2 sigma_p^2 + (d2P/dD2 Sigma_D)_j)
              + sigma_p (R_D d2P/dpdD)_j - mu_Dj P

where ``R_D`` is the principal square root of ``Sigma_D`` and ``beta`` spreads
the scalar portfolio term over the drivers. The same residual is available per
pair, before summing over constituents, through ``weightless_pde_residual``;
its weighted sum over constituents reproduces ``drift_residual`` exactly.

"""

from collections import namedtuple
import logging
import numpy as np
from .const import BROADCAST_MODES
from .exceptions import ContractError, NumericError
from .helpers import plural
from .pi_system import (DriverState, PiSystem, _check, as_driver_state,
                        conditional_prob, first_partials, kron_contract,
                        second_partials)

log = logging.getLogger(__name__)

PSD_TOLERANCE = 1e-10

DriftResidual = namedtuple('DriftResidual', ['delta', 'aggregate', 'total'])
BrownianResidual = namedtuple('BrownianResidual', ['residual', 'aggregate'])
PDEBlocks = namedtuple('PDEBlocks', ['variance', 'volatility', 'free'])
ResidualReport = namedtuple('ResidualReport', [
    'delta', 'delta_aggregate', 'delta_total', 'brownian',
    'brownian_aggregate', 'per_pair'])
ImpliedSystem = namedtuple('ImpliedSystem', ['A', 'b', 'dates'])
ImpliedSolution = namedtuple('ImpliedSolution', [
    'x', 'rank', 'degenerate', 'residual_norm', 'weights', 'variances'])


class VolParams(namedtuple('VolParams', ['sigma_p', 'Sigma_D', 'mu_D',
                                         'Sigma_p', 'mu_rho', 'sigma_rho'])):
    """Volatility and drift parameters of the portfolio and the drivers.

    ``sigma_p`` is a scalar (or one per batch entry), ``Sigma_D`` is the
    ``m x m`` driver covariance and ``mu_D`` the driver drifts. ``Sigma_p``
    is the optional diagonal constituent covariance used by the implied
    solve.

    """

    __slots__ = ()

    @classmethod
    def create(cls, sigma_p, Sigma_D, mu_D, Sigma_p=None, mu_rho=None,
               sigma_rho=None):
        """Return validated VolParams."""
        sigma_p = np.asarray(sigma_p, dtype=float)
        Sigma_D = np.asarray(Sigma_D, dtype=float)
        mu_D = np.asarray(mu_D, dtype=float)
        if np.any(sigma_p < 0):
            raise ContractError('sigma_p must be non-negative')
        if Sigma_D.ndim < 2 or Sigma_D.shape[-1] != Sigma_D.shape[-2]:
            raise ContractError('Sigma_D must be square')
        if not np.allclose(Sigma_D, np.swapaxes(Sigma_D, -1, -2)):
            raise ContractError('Sigma_D must be symmetric')
        if mu_D.shape[-1] != Sigma_D.shape[-1]:
            raise ContractError('mu_D must have one entry per driver')
        if Sigma_p is not None:
            Sigma_p = np.asarray(Sigma_p, dtype=float)
            off = Sigma_p - np.diag(np.diag(Sigma_p))
            if Sigma_p.ndim != 2 or np.any(off != 0):
                raise ContractError('Sigma_p must be a diagonal matrix')
        return cls(sigma_p, Sigma_D, mu_D, Sigma_p, mu_rho, sigma_rho)


def principal_sqrt(matrix):
    """Return the principal square root of a symmetric PSD matrix.

    Eigenvalues below ``-PSD_TOLERANCE`` times the spectral scale raise
    ContractError; smaller negative round-off is clipped to zero.

    """
    matrix = np.asarray(matrix, dtype=float)
    values, vectors = np.linalg.eigh(matrix)
    scale = np.maximum(1.0, np.abs(values).max(axis=-1, keepdims=True))
    if np.any(values < -PSD_TOLERANCE * scale):
        raise ContractError(
            'Covariance is not positive semidefinite (eigenvalue {0:.3g})'
            .format(values.min()))
    roots = np.sqrt(np.clip(values, 0.0, None))
    return np.einsum('...ik,...k,...jk->...ij', vectors, roots, vectors)


def broadcast_weights(d, mode='uniform'):
    """Return the weights spreading the scalar portfolio term over drivers.

    ``'uniform'`` gives every driver ``1 / m``. ``'proportional'`` uses
    ``|d_j| / sum |d|`` and falls back to uniform when the sum is zero.

    """
    if mode not in BROADCAST_MODES:
        raise ContractError('Unknown broadcast mode: {0!r}'.format(mode))
    d = np.asarray(as_driver_state(d).d)
    uniform = np.full(d.shape, 1.0 / d.shape[-1])
    if mode == 'uniform':
        return uniform
    magnitude = np.abs(d)
    total = magnitude.sum(axis=-1, keepdims=True)
    with np.errstate(divide='ignore', invalid='ignore'):
        share = magnitude / total
    return np.where(total > 0, share, uniform)


def drift_residual(ps, sys, d, vp, broadcast='uniform'):
    """Return the per-driver drift residual, its L2 norm and its sum."""
    d = _check(ps, sys, d)
    second = second_partials(ps, sys, d)
    prob = conditional_prob(ps, sys, d)
    sigma_p = np.asarray(vp.sigma_p, dtype=float)
    root = principal_sqrt(vp.Sigma_D)
    beta = broadcast_weights(d, broadcast)
    delta = (0.5 * (beta * (second.d2P_dp2 * sigma_p ** 2)[..., None] +
                    np.einsum('...k,...kj->...j', second.d2P_dD2,
                              vp.Sigma_D)) +
             sigma_p[..., None] * np.einsum('...jk,...k->...j', root,
                                            second.d2P_dpdD) -
             np.asarray(vp.mu_D) * prob[..., None])
    return DriftResidual(delta, np.linalg.norm(delta, axis=-1),
                         delta.sum(axis=-1))


def pde_blocks(sys, d, Sigma_D, mu_D, broadcast='uniform'):
    """Return the pairwise blocks of the drift residual.

    ``variance[i, j]`` multiplies constituent ``i``'s variance loading,
    ``volatility[i, j]`` its volatility loading and ``free[i, j]`` holds the
    terms with no portfolio loading. A normalized driver state couples
    every driver through its multipliers and has no pairwise split.

    """
    d = as_driver_state(d)
    if d.normalized:
        raise ContractError('Pairwise blocks need unnormalized drivers')
    dj = d.jeffrey
    n = sys.n
    root = principal_sqrt(Sigma_D)
    beta = broadcast_weights(d, broadcast)
    # Kronecker contraction against unit loadings, one row per constituent.
    unit = kron_contract(sys.d2Pi_da2[..., None, :, :], dj[..., None, :],
                         np.eye(n))
    curvature = unit.sum(axis=-1)
    variance = -0.5 * beta[..., None, :] * curvature[..., :, None]
    mixed = sys.dPi_da + sys.d2Pi_dadD * dj[..., None, :]
    volatility = -np.einsum('...ik,...kj->...ij', mixed, root)
    driver = sys.d2Pi_dD2 * dj[..., None, :] + 2.0 * sys.dPi_dD
    weighted = np.einsum('...ik,...k->...i', sys.pi, dj)
    free = (-0.5 * np.einsum('...ik,...kj->...ij', driver, Sigma_D) +
            np.asarray(mu_D)[..., None, :] * weighted[..., :, None])
    return PDEBlocks(variance, volatility, free)


def weightless_pde_residual(sys, d, var_loading, Sigma_D, mu_D,
                            vol_loading=None, broadcast='uniform'):
    """Return the ``(n, m)`` drift residual before weighting constituents.

    :param var_loading: Per-constituent loading of the variance block.
    :param vol_loading: Per-constituent loading of the volatility block,
        defaulting to ``var_loading``.

    With ``var_loading = sigma_p^2`` and ``vol_loading = sigma_p`` the
    weighted sum over constituents equals ``drift_residual``.

    """
    blocks = pde_blocks(sys, d, Sigma_D, mu_D, broadcast)
    var_loading = np.broadcast_to(np.asarray(var_loading, dtype=float),
                                  blocks.variance.shape[:-1])
    if vol_loading is None:
        vol_loading = var_loading
    vol_loading = np.broadcast_to(np.asarray(vol_loading, dtype=float),
                                  blocks.variance.shape[:-1])
    return (var_loading[..., None] * blocks.variance +
            vol_loading[..., None] * blocks.volatility + blocks.free)


def pair_deviation(ps, sys, d, vp, broadcast='uniform'):
    """Return ``w_i`` times the weightless residual of each pair."""
    d = _check(ps, sys, d)
    sigma_p = np.asarray(vp.sigma_p, dtype=float)
    residual = weightless_pde_residual(
        sys, d, (sigma_p ** 2)[..., None], vp.Sigma_D, vp.mu_D,
        vol_loading=sigma_p[..., None], broadcast=broadcast)
    return ps.weights[:, None] * residual


def brownian_condition_residual(ps, sys, d):
    """Return ``sum_j dPi/drho_ij D_j`` per constituent and its L2 norm."""
    d = _check(ps, sys, d)
    residual = np.einsum('...ij,...j->...i', sys.dPi_drho, d.jeffrey)
    return BrownianResidual(residual, np.linalg.norm(residual, axis=-1))


def residual_report(ps, sys, d, vp, broadcast='uniform'):
    """Return the drift, Brownian and per-pair residuals in one report."""
    drift = drift_residual(ps, sys, d, vp, broadcast)
    brownian = brownian_condition_residual(ps, sys, d)
    return ResidualReport(drift.delta, drift.aggregate, drift.total,
                          brownian.residual, brownian.aggregate,
                          pair_deviation(ps, sys, d, vp, broadcast))


def assemble_implied_system(sys, d, Sigma_D, mu_D, broadcast='uniform',
                            dates=None):
    """Return the linear system for the implied portfolio loadings.

    ``sys`` and ``d`` carry one leading axis of ``k`` dates. Each date adds
    one row per driver: the loading of constituent ``i`` on row ``(t, j)`` is
    the sum of its variance and volatility blocks, and the right hand side is
    the free block summed over constituents. The unknown is ``x = Sigma_p w``.

    """
    d = as_driver_state(d)
    if sys.pi.ndim != 3:
        raise ContractError('The implied system needs a (k, n, m) system')
    blocks = pde_blocks(sys, d, Sigma_D, mu_D, broadcast)
    loadings = blocks.variance + blocks.volatility
    k, n, m = loadings.shape
    A = np.swapaxes(loadings, -1, -2).reshape(k * m, n)
    b = blocks.free.sum(axis=-2).reshape(k * m)
    return ImpliedSystem(A, b, dates)


def solve_implied(system, Sigma_p=None, weights=None):
    """Return the minimum-norm least squares solution of ``A x = -b``.

    When ``Sigma_p`` is given the implied weights are ``x / diag(Sigma_p)``;
    when ``weights`` are given the implied variances are ``x / w``.

    """
    A, b = np.asarray(system.A, dtype=float), np.asarray(system.b,
                                                         dtype=float)
    if A.shape[0] != b.shape[0]:
        raise ContractError('A has {0}, b has {1}'.format(
            plural(A.shape[0], 'row'), b.shape[0]))
    n = A.shape[1]
    x, _, rank, _ = np.linalg.lstsq(A, -b, rcond=None)
    degenerate = rank < n
    if degenerate:
        log.warning('Implied system has rank {0} of {1}; returning the '
                    'minimum norm solution'.format(rank, n))
    residual_norm = float(np.linalg.norm(A.dot(x) + b))
    implied_weights = implied_variances = None
    if Sigma_p is not None:
        variances = np.diag(np.asarray(Sigma_p, dtype=float))
        if np.any(variances == 0):
            raise NumericError('Cannot imply weights from a zero variance')
        implied_weights = x / variances
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if np.any(weights == 0):
            raise NumericError('Cannot imply variances for a zero weight')
        implied_variances = x / weights
    return ImpliedSolution(x, int(rank), bool(degenerate), residual_norm,
                           implied_weights, implied_variances)


def implied_solve(sys, d, Sigma_D, mu_D, Sigma_p=None, weights=None,
                  broadcast='uniform', dates=None):
    """Assemble the implied system over ``k`` dates and solve it.

    Needs at least as many equations, ``m * k``, as constituents.

    """
    system = assemble_implied_system(sys, d, Sigma_D, mu_D, broadcast, dates)
    if system.A.shape[0] < system.A.shape[1]:
        log.warning('{0} for {1}; the solution is not unique'.format(
            plural(system.A.shape[0], 'equation'),
            plural(system.A.shape[1], 'unknown')))
    return solve_implied(system, Sigma_p=Sigma_p, weights=weights)


def ito_consistency(ps, paths, params):
    """Return the mean one-step error of the Ito expansion of P.

    Each simulated state is mapped to ``u = a0 + p``, ``d = D`` and
    ``rho`` reshaped to ``(n, m)``. The predicted increment of P is the
    first-order term against the realized increments plus the Ito
    corrections of the diffusion coefficients over ``dt``.

    """
    steps = paths.p.shape[0] - 1
    if steps < 10:
        raise ContractError('Ito consistency needs at least 10 steps, got {0}'
                            .format(steps))
    n, m = params.n, params.m
    u = np.asarray(params.a0)[None, None, :] + paths.p[..., None]
    d = np.swapaxes(paths.D, 1, 2)
    rho = np.swapaxes(paths.rho, 1, 2).reshape(
        paths.rho.shape[0], paths.rho.shape[2], n, m)
    if (np.any((u <= 0) | (u >= 1)) or np.any((d <= 0) | (d >= 1))):
        raise ContractError('Trajectory leaves the open unit interval')
    sys = PiSystem.build(u, DriverState.create(d), rho)
    prob = conditional_prob(ps, sys, d)
    first = first_partials(ps, sys, d)
    second = second_partials(ps, sys, d)

    dp = np.diff(paths.p, axis=0)
    dD = np.diff(d, axis=0)
    drho = np.diff(rho, axis=0)
    linear = (first.dP_dp[:-1] * dp +
              (first.dP_dD[:-1] * dD).sum(axis=-1) +
              (first.dP_drho[:-1] * drho).sum(axis=(-2, -1)))

    level = d[:-1] if params.dynamics == 'geometric' else 1.0
    sigma_D = np.asarray(params.sigma_D) * level
    sigma_rho = np.asarray(params.sigma_rho).reshape(n, m) * rho[:-1]
    ito = (0.5 * second.d2P_dp2[:-1] * params.sigma_p ** 2 +
           0.5 * (second.d2P_dD2[:-1] * sigma_D ** 2).sum(axis=-1) +
           (second.d2P_dpdD[:-1] * params.sigma_p * sigma_D *
            np.asarray(params.corr_pD)).sum(axis=-1) +
           0.5 * (second.d2P_drho2[:-1] * sigma_rho ** 2).sum(axis=(-2, -1)))
    error = np.abs(np.diff(prob, axis=0) - (linear + ito * params.dt))
    return float(error.mean())
