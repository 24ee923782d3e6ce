"""Gaussian copula calculus used by the conditional probability system.

Every function is elementwise: scalars and broadcastable numpy arrays are
both accepted, and 0-d results are returned as numpy scalars.

The quantity called ``pi_entry`` is the derivative with respect to the driver
uniform ``v`` of the bivariate Gaussian copula density ``c(u, v; rho)``. Its
analytic partial derivatives are written as ``F = A * exp(L)`` in the normal
scores ``x1 = Phi^-1(u)``, ``x2 = Phi^-1(v)`` with::

    A = rho * (x1 - rho * x2) / (1 - rho ** 2)
    exp(L) = c(u, v; rho) / phi(x2)

and mapped back to the uniforms with ``d/du = (1 / phi(x1)) d/dx1``.

"""

from collections import namedtuple
import logging
import numpy as np
from scipy.special import ndtr, ndtri
from .const import EPS_RHO, EPS_U, FD_STEP_FIRST, FD_STEP_SECOND
from .exceptions import ContractError, DomainError
from .helpers import plural

log = logging.getLogger(__name__)

SQRT_2PI = np.sqrt(2.0 * np.pi)

SELECTORS = ('u', 'v', 'rho', 'uu', 'vv', 'rhorho', 'uv', 'vuu')
SELECTOR_ALIASES = {'vuu': 'uu'}


def _out(value):
    """Return 0-d arrays as numpy scalars and leave other arrays alone."""
    value = np.asarray(value)
    return value[()] if value.ndim == 0 else value


def _selector(which):
    if which not in SELECTORS:
        raise ContractError('Unsupported derivative selector: {0!r}'
                            .format(which))
    return SELECTOR_ALIASES.get(which, which)


def clamp_prob(u):
    """Return ``(clamped, mask)`` for probabilities ``u``.

    Values are clamped into ``[EPS_U, 1 - EPS_U]``; ``mask`` marks the entries
    that were moved. Values outside of ``[0, 1]`` raise ContractError.

    """
    u = np.asarray(u, dtype=float)
    if np.any(np.isnan(u)) or np.any((u < 0) | (u > 1)):
        raise ContractError('Probabilities must lie in [0, 1]')
    clamped = np.clip(u, EPS_U, 1.0 - EPS_U)
    return clamped, clamped != u


def clamp_corr(rho):
    """Return ``(clamped, mask)`` for correlations ``rho``.

    Values are clamped into ``[-1 + EPS_RHO, 1 - EPS_RHO]``; raw values
    outside of ``[-1, 1]`` raise ContractError.

    """
    rho = np.asarray(rho, dtype=float)
    if np.any(np.isnan(rho)) or np.any(np.abs(rho) > 1):
        raise ContractError('Correlations must lie in [-1, 1]')
    bound = 1.0 - EPS_RHO
    clamped = np.clip(rho, -bound, bound)
    return clamped, clamped != rho


def std_normal_cdf(x):
    """Return the standard normal CDF at ``x``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError('std_normal_cdf requires finite input')
    return _out(ndtr(x))


def std_normal_pdf(x):
    """Return the standard normal density at ``x``."""
    x = np.asarray(x, dtype=float)
    return _out(np.exp(-0.5 * x * x) / SQRT_2PI)


def std_normal_quantile(u):
    """Return the standard normal quantile of ``u``.

    ``scipy.special.ndtri`` provides the rational approximation; one Newton
    step against the CDF polishes it. The step is taken on the smaller tail
    so the CDF difference keeps its relative precision.

    """
    value, flagged = clamp_prob(u)
    if np.any(flagged):
        log.debug('Clamped {0} into [{1}, 1 - {1}]'.format(
            plural(int(np.count_nonzero(flagged)), 'uniform'), EPS_U))
    upper = value > 0.5
    tail = np.where(upper, 1.0 - value, value)
    x = ndtri(tail)
    x = x - (ndtr(x) - tail) / np.exp(-0.5 * x * x) * SQRT_2PI
    return _out(np.where(upper, -x, x))


class CopulaPoint(namedtuple('CopulaPoint', ['u', 'v', 'rho', 'x1', 'x2',
                                             'clamped', 'near_singular'])):
    """A constituent uniform, a driver uniform and their correlation.

    Use :meth:`create`; it validates, clamps and precomputes the normal
    scores ``x1`` and ``x2``.

    """

    __slots__ = ()

    @classmethod
    def create(cls, u, v, rho):
        """Return a validated, clamped CopulaPoint."""
        u, u_flag = clamp_prob(u)
        v, v_flag = clamp_prob(v)
        rho, rho_flag = clamp_corr(rho)
        u, v, rho = np.broadcast_arrays(u, v, rho)
        clamped = np.broadcast_to(u_flag | v_flag | rho_flag, u.shape)
        near_singular = np.abs(rho) >= 1.0 - EPS_RHO
        if np.any(near_singular):
            log.debug('{0} at the clamp boundary'.format(
                plural(int(np.count_nonzero(near_singular)),
                       'near-singular correlation')))
        return cls(_out(u), _out(v), _out(rho), std_normal_quantile(u),
                   std_normal_quantile(v), _out(clamped),
                   _out(near_singular))


def copula_density(p):
    """Return the Gaussian copula density at ``p``."""
    rho = np.asarray(p.rho)
    s = 1.0 - rho * rho
    q = rho * rho * (p.x1 * p.x1 + p.x2 * p.x2) - 2.0 * rho * p.x1 * p.x2
    return _out(np.exp(-q / (2.0 * s)) / np.sqrt(s))


def h_function(p):
    """Return the conditional CDF of ``u`` given ``v``."""
    rho = np.asarray(p.rho)
    return _out(ndtr((p.x1 - rho * p.x2) / np.sqrt(1.0 - rho * rho)))


def pi_entry(p):
    """Return the signed derivative of the copula density in ``v``."""
    rho = np.asarray(p.rho)
    s = 1.0 - rho * rho
    return _out(-copula_density(p) * rho * (rho * p.x2 - p.x1) /
                (s * std_normal_pdf(p.x2)))


def _score_derivatives(p):
    """Return the derivatives of pi_entry in (x1, x2, rho) coordinates."""
    x1, x2 = np.asarray(p.x1), np.asarray(p.x2)
    r = np.asarray(p.rho)
    s = 1.0 - r * r
    ratio = copula_density(p) / std_normal_pdf(x2)

    a = r * (x1 - r * x2) / s
    a_1 = r / s
    a_2 = -r * r / s
    l_1 = r * (x2 - r * x1) / s
    l_2 = a + x2
    l_11 = -r * r / s
    l_22 = (1.0 - 2.0 * r * r) / s
    l_12 = r / s

    n = x1 * (1.0 + r * r) - 2.0 * r * x2
    a_r = n / (s * s)
    a_rr = ((2.0 * r * x1 - 2.0 * x2) * s + 4.0 * r * n) / s ** 3
    sq = x1 * x1 + x2 * x2
    q = r * r * sq - 2.0 * r * x1 * x2
    k = (2.0 * r * sq - 2.0 * x1 * x2) * s + 2.0 * r * q
    k_r = 2.0 * sq * s + 2.0 * q
    l_r = r / s - k / (2.0 * s * s)
    l_rr = ((1.0 + r * r) / (s * s) - k_r / (2.0 * s * s) -
            2.0 * r * k / s ** 3)

    return {
        '1': ratio * (a_1 + a * l_1),
        '2': ratio * (a_2 + a * l_2),
        '11': ratio * (2.0 * a_1 * l_1 + a * l_11 + a * l_1 * l_1),
        '22': ratio * (2.0 * a_2 * l_2 + a * l_22 + a * l_2 * l_2),
        '12': ratio * (a_1 * l_2 + a_2 * l_1 + a * l_12 + a * l_1 * l_2),
        'r': ratio * (a_r + a * l_r),
        'rr': ratio * (a_rr + 2.0 * a_r * l_r + a * l_rr + a * l_r * l_r)}


def partials(p, which):
    """Return an analytic partial derivative of pi_entry at ``p``.

    :param which: One of ``'u'``, ``'v'``, ``'rho'``, ``'uu'``, ``'vv'``,
        ``'rhorho'``, ``'uv'`` or ``'vuu'``. ``'vuu'`` is the third derivative
        of the copula expression, once in ``v`` and twice in ``u``, which is
        the same quantity as ``'uu'`` applied to pi_entry.

    """
    which = _selector(which)
    deriv = _score_derivatives(p)
    x1, x2 = np.asarray(p.x1), np.asarray(p.x2)
    phi1, phi2 = std_normal_pdf(x1), std_normal_pdf(x2)
    if which == 'u':
        value = deriv['1'] / phi1
    elif which == 'v':
        value = deriv['2'] / phi2
    elif which == 'rho':
        value = deriv['r']
    elif which == 'uu':
        value = (deriv['11'] + x1 * deriv['1']) / (phi1 * phi1)
    elif which == 'vv':
        value = (deriv['22'] + x2 * deriv['2']) / (phi2 * phi2)
    elif which == 'uv':
        value = deriv['12'] / (phi1 * phi2)
    else:
        value = deriv['rr']
    return _out(value)


def finite_difference(p, which):
    """Return the central finite-difference estimate of ``partials(p, which)``.

    First derivatives use ``h = FD_STEP_FIRST * max(1, |x|)``. Second
    derivatives use ``h = FD_STEP_SECOND`` with one Richardson extrapolation
    against ``h / 2``. The mixed ``'uv'`` derivative uses the four point cross
    stencil. Only interior points whose stencil stays inside the domain are
    supported.

    """
    which = _selector(which)
    u, v, rho = (np.asarray(x, dtype=float) for x in (p.u, p.v, p.rho))

    def f(du=0.0, dv=0.0, drho=0.0):
        return np.asarray(pi_entry(CopulaPoint.create(u + du, v + dv,
                                                      rho + drho)))

    def shifted(key, step):
        return f(**{key: step})

    keys = {'u': 'du', 'v': 'dv', 'rho': 'drho',
            'uu': 'du', 'vv': 'dv', 'rhorho': 'drho'}
    if which in ('u', 'v', 'rho'):
        base = {'u': u, 'v': v, 'rho': rho}[which]
        h = FD_STEP_FIRST * np.maximum(1.0, np.abs(base))
        return _out((shifted(keys[which], h) - shifted(keys[which], -h)) /
                    (2.0 * h))

    def second(h):
        if which == 'uv':
            return (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h)
        return (shifted(keys[which], h) - 2.0 * f() +
                shifted(keys[which], -h)) / (h * h)

    coarse = second(FD_STEP_SECOND)
    fine = second(FD_STEP_SECOND / 2.0)
    return _out((4.0 * fine - coarse) / 3.0)
