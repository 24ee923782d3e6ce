"""The conditional probability system P = -w^T Pi D and its partials.

Arrays may carry leading batch axes (dates, paths); the trailing axes are
always ``(n,)`` for constituents, ``(m,)`` for drivers and ``(n, m)`` for
pairs. Every pairwise quantity is computed elementwise, so a derivative of
entry ``(i, j)`` with respect to any other pair's variables is exactly zero.

"""

from collections import namedtuple
import logging
import numpy as np
from .copula_core import (CopulaPoint, clamp_corr, partials,
                          pi_entry, std_normal_pdf, std_normal_quantile)
from .exceptions import ContractError, NumericError
from .helpers import plural

log = logging.getLogger(__name__)

FirstPartials = namedtuple('FirstPartials', ['dP_dp', 'dP_dD', 'dP_drho'])
SecondPartials = namedtuple('SecondPartials', ['d2P_dp2', 'd2P_dD2',
                                               'd2P_dpdD', 'd2P_drho2'])


class PortfolioSpec(namedtuple('PortfolioSpec', ['weights'])):
    """Portfolio weights over the constituents, in column order."""

    __slots__ = ()

    @classmethod
    def create(cls, weights):
        """Return a PortfolioSpec for an explicit weight vector."""
        weights = np.asarray(weights, dtype=float)
        if weights.ndim != 1 or weights.size == 0:
            raise ContractError('Weights must be a non-empty vector')
        if not np.all(np.isfinite(weights)):
            raise ContractError('Weights must be finite')
        return cls(weights)

    @classmethod
    def equal(cls, n):
        """Return an equally weighted PortfolioSpec over ``n`` constituents."""
        if n < 1:
            raise ContractError('A portfolio needs at least one constituent')
        return cls(np.full(n, 1.0 / n))

    @property
    def n(self):
        """Return the number of constituents."""
        return self.weights.shape[0]


class DriverState(namedtuple('DriverState', ['d', 'jeffrey', 'total'])):
    """Driver probabilities and the Jeffrey multipliers used in the sums.

    ``jeffrey`` equals ``d`` unless the state was created with
    ``normalize=True``, in which case the multipliers sum to one over the
    drivers and ``total`` holds the sum they were divided by.

    """

    __slots__ = ()

    @classmethod
    def create(cls, d, normalize=False):
        """Return a validated DriverState."""
        d = np.asarray(d, dtype=float)
        if d.ndim < 1 or d.shape[-1] == 0:
            raise ContractError('At least one driver is required')
        if np.any(np.isnan(d)) or np.any((d < 0) | (d > 1)):
            raise ContractError('Driver probabilities must lie in [0, 1]')
        jeffrey, total = d, None
        if normalize:
            total = d.sum(axis=-1, keepdims=True)
            if np.any(total == 0):
                raise ContractError('Cannot normalize all-zero drivers')
            jeffrey = d / total
        return cls(d, jeffrey, total)

    @property
    def m(self):
        """Return the number of drivers."""
        return self.d.shape[-1]

    @property
    def normalized(self):
        """Return whether the multipliers were normalized."""
        return self.total is not None

    def own_slope(self):
        """Return ``d jeffrey_j / d D_j``."""
        if not self.normalized:
            return np.ones(self.d.shape)
        return (1.0 - self.jeffrey) / self.total

    def pull_back(self, b):
        """Return ``sum_k b_k`` times the first and second D_j derivatives.

        ``b`` has a trailing driver axis. With ``c = D / sum(D)`` the
        derivatives are ``(delta_kj - c_k) / S`` and ``-2 (delta_kj - c_k) /
        S^2``; without normalization they are ``delta_kj`` and zero.

        """
        b = np.asarray(b, dtype=float)
        if not self.normalized:
            return b, np.zeros(b.shape)
        centered = b - np.sum(b * self.jeffrey, axis=-1, keepdims=True)
        return (centered / self.total,
                -2.0 * centered / self.total ** 2)


class RhoMatrix(namedtuple('RhoMatrix', ['rho', 'clamped'])):
    """Constituent to driver correlations of shape ``(..., n, m)``."""

    __slots__ = ()

    @classmethod
    def create(cls, rho):
        """Return a RhoMatrix clamped into the open interval (-1, 1)."""
        rho, clamped = clamp_corr(rho)
        rho = np.asarray(rho, dtype=float)
        if rho.ndim < 2:
            raise ContractError('Correlations must have shape (..., n, m)')
        return cls(rho, np.asarray(clamped, dtype=bool))


class PiSystem(namedtuple('PiSystem', [
        'pi', 'dPi_da', 'dPi_dD', 'dPi_drho', 'd2Pi_da2', 'd2Pi_dD2',
        'd2Pi_dadD', 'd2Pi_drho2', 'near_singular'])):
    """All ``(n, m)`` slices of Pi and its pairwise partial derivatives."""

    __slots__ = ()

    SLICES = ('pi', 'dPi_da', 'dPi_dD', 'dPi_drho', 'd2Pi_da2', 'd2Pi_dD2',
              'd2Pi_dadD', 'd2Pi_drho2')

    @classmethod
    def build(cls, u, d, rho):
        """Return the PiSystem at constituent uniforms ``u``.

        :param u: Constituent probabilities of shape ``(..., n)``.
        :param d: A DriverState or driver probabilities of shape ``(..., m)``.
        :param rho: A RhoMatrix or correlations of shape ``(..., n, m)``.

        """
        d = as_driver_state(d)
        u = np.asarray(u, dtype=float)
        if not isinstance(rho, RhoMatrix):
            rho = RhoMatrix.create(rho)
        if np.any(rho.clamped):
            log.debug('Clamped {0}'.format(plural(
                int(np.count_nonzero(rho.clamped)), 'correlation')))
        rho = rho.rho
        if rho.ndim < 2 or rho.shape[-2:] != (u.shape[-1], d.m):
            raise ContractError(
                'Correlation shape {0} does not match {1} and {2}'.format(
                    rho.shape, plural(u.shape[-1], 'constituent'),
                    plural(d.m, 'driver')))
        point = CopulaPoint.create(u[..., :, None], d.d[..., None, :], rho)
        slices = [pi_entry(point), partials(point, 'u'),
                  partials(point, 'v'), partials(point, 'rho'),
                  partials(point, 'uu'), partials(point, 'vv'),
                  partials(point, 'uv'), partials(point, 'rhorho')]
        for name, value in zip(cls.SLICES, slices):
            bad = np.argwhere(~np.isfinite(value))
            if len(bad):
                i, j = bad[0][-2:]
                raise NumericError('Non-finite {0} at (i, j) = ({1}, {2})'
                                   .format(name, i, j))
        slices = [np.asarray(x, dtype=float) for x in slices]
        return cls(*(slices + [np.asarray(point.near_singular)]))

    @property
    def n(self):
        """Return the number of constituents."""
        return self.pi.shape[-2]

    @property
    def m(self):
        """Return the number of drivers."""
        return self.pi.shape[-1]

    def masked(self, mask):
        """Return a copy whose slices are zero wherever ``mask`` is true.

        Zeroed pairs drop out of every sum, which is how undefined pairs are
        excluded without changing any array shape.

        """
        mask = np.asarray(mask, dtype=bool)
        values = [np.where(mask, 0.0, getattr(self, name))
                  for name in self.SLICES]
        return self.__class__(*(values + [self.near_singular]))


def as_driver_state(d):
    """Return ``d`` as a DriverState."""
    return d if isinstance(d, DriverState) else DriverState.create(d)


def _check(ps, sys, d):
    d = as_driver_state(d)
    if ps.n != sys.n:
        raise ContractError('Portfolio has {0}, system has {1}'.format(
            plural(ps.n, 'constituent'), sys.n))
    if d.m != sys.m:
        raise ContractError('Driver state has {0}, system has {1}'.format(
            plural(d.m, 'driver'), sys.m))
    return d


def conditional_prob(ps, sys, d):
    """Return P = -w^T Pi D."""
    d = _check(ps, sys, d)
    return -np.einsum('i,...ij,...j->...', ps.weights, sys.pi, d.jeffrey)


def pair_probabilities(ps, sys, d):
    """Return the per-pair terms ``-w_i Pi_ij D_j`` that sum to P."""
    d = _check(ps, sys, d)
    return -ps.weights[:, None] * sys.pi * d.jeffrey[..., None, :]


def jeffrey_double_sum(ps, u, d, rho):
    """Return the literal Jeffrey double sum over constituents and drivers.

    Each summand is written out from the Gaussian copula formula instead of
    going through pi_entry. The double sum equals ``+w^T Pi D``, so
    ``conditional_prob == -jeffrey_double_sum``.

    """
    d = as_driver_state(d)
    x1 = np.asarray(std_normal_quantile(np.asarray(u, dtype=float)))
    x2 = np.asarray(std_normal_quantile(d.d))
    r, _ = clamp_corr(rho)
    x1, x2 = x1[..., :, None], x2[..., None, :]
    s = 1.0 - r * r
    exponent = (-r * r * (x1 * x1 + x2 * x2) + 2.0 * r * x1 * x2) / (2.0 * s)
    phi2 = std_normal_pdf(x2)
    summand = (-np.exp(exponent) *
               (2.0 * r * r * x2 / phi2 - 2.0 * r * x1 / phi2) /
               (2.0 * s ** 1.5))
    return np.einsum('i,...ij,...j->...', ps.weights, summand, d.jeffrey)


def first_partials(ps, sys, d):
    """Return the first partials of P in p, each D_j and each rho_ij.

    A move in the portfolio coordinate ``p`` shifts every constituent uniform
    by the same amount, so ``dP/dp`` sums the ``dPi/da`` slice. On a
    normalized state the multipliers move with every ``D_j`` and ``dP/dD``
    carries that Jacobian.

    """
    d = _check(ps, sys, d)
    w, dj = ps.weights, d.jeffrey
    dP_dp = -np.einsum('i,...ij,...j->...', w, sys.dPi_da, dj)
    through_pi = np.einsum('i,...ij->...j', w, sys.dPi_dD) * dj
    through_jeffrey, _ = d.pull_back(np.einsum('i,...ij->...j', w, sys.pi))
    dP_dD = -(through_pi + through_jeffrey)
    dP_drho = -w[:, None] * sys.dPi_drho * dj[..., None, :]
    return FirstPartials(dP_dp, dP_dD, dP_drho)


def second_partials(ps, sys, d):
    """Return the pure and mixed second partials of P.

    Cross terms between different correlations are identically zero and are
    not materialized, and so are those between different drivers unless the
    state is normalized.

    """
    d = _check(ps, sys, d)
    w, dj = ps.weights, d.jeffrey
    d2P_dp2 = -np.einsum('i,...ij,...j->...', w, sys.d2Pi_da2, dj)
    _, curve = d.pull_back(np.einsum('i,...ij->...j', w, sys.pi))
    d2P_dD2 = -(np.einsum('i,...ij->...j', w, sys.d2Pi_dD2) * dj +
                2.0 * np.einsum('i,...ij->...j', w, sys.dPi_dD) *
                d.own_slope() + curve)
    slope, _ = d.pull_back(np.einsum('i,...ij->...j', w, sys.dPi_da))
    d2P_dpdD = -(np.einsum('i,...ij->...j', w, sys.d2Pi_dadD) * dj + slope)
    d2P_drho2 = -w[:, None] * sys.d2Pi_drho2 * dj[..., None, :]
    return SecondPartials(d2P_dp2, d2P_dD2, d2P_dpdD, d2P_drho2)


def kron_contract(d2Pi_da2, jeffrey, sigma_p_w):
    """Return ``jeffrey_j * sum_i d2Pi_da2[i, j] * sigma_p_w[i]``."""
    return np.einsum('...ij,...i,...j->...j', d2Pi_da2, sigma_p_w, jeffrey)


def kron_assemble(ps, sys, d, sigma_p_w):
    """Return the Kronecker-structured second order term, one per driver.

    The term is the product of a block matrix selecting the ``(j, j)``
    diagonal of the fourth order tensor of second derivatives with the
    vector ``vec(D (x) diag(Sigma_p w))``. Only that block diagonal is
    non-zero, so the contraction reduces to ``kron_contract``.

    """
    d = _check(ps, sys, d)
    sigma_p_w = np.asarray(sigma_p_w, dtype=float)
    if sigma_p_w.shape[-1] != sys.n:
        raise ContractError('Sigma_p w must have {0} entries'.format(sys.n))
    return kron_contract(sys.d2Pi_da2, d.jeffrey, sigma_p_w)


def dense_kron_assemble(ps, sys, d, sigma_p_w):
    """Return kron_assemble through explicit np.kron products.

    Materializes the ``m x (m n^2)`` block matrix, so it is only meant to
    check kron_assemble on small, unbatched systems.

    """
    d = _check(ps, sys, d)
    if sys.pi.ndim != 2:
        raise ContractError('dense_kron_assemble needs an unbatched system')
    n, m = sys.n, sys.m
    sigma_p_w = np.asarray(sigma_p_w, dtype=float)
    blocks = np.zeros((m, m * n * n))
    for j in range(m):
        unit = np.zeros(m)
        unit[j] = 1.0
        blocks[j] = np.kron(unit, np.diag(sys.d2Pi_da2[:, j]).ravel())
    vector = np.kron(d.jeffrey, np.diag(sigma_p_w).ravel())
    return blocks.dot(vector)
