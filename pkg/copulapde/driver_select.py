"""Common driver selection by minimizing the drift residual loss."""

from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
import logging
import warnings
import numpy as np
import pandas as pd
from scipy.special import comb
from .const import DEFAULT_SCREEN, EXHAUSTIVE_LIMIT, PROXY_LABEL
from .exceptions import ContractError, DataError
from .helpers import plural
from .market_pipeline import (deviation_level, residual_series,
                              rolling_estimates)

log = logging.getLogger(__name__)

LOSSES = ('mean-abs-delta', 'mean-sq-delta', 'sum-abs-pair')
SEARCHES = ('exhaustive', 'greedy-forward')

RevisionSignal = namedtuple('RevisionSignal', ['signal', 'diagnostics'])


class SelectionProblem(namedtuple('SelectionProblem', [
        'candidates', 'm', 'start', 'end', 'search', 'loss', 'screen'])):
    """Choose ``m`` of ``candidates`` over the ``[start, end]`` window.

    ``screen`` admits a candidate only when its mean absolute correlation
    with the constituents exceeds ``screen / sqrt(window)``; one over
    ``sqrt(window)`` is the standard error of the correlation of independent
    columns. ``None`` or ``0`` admits every candidate.

    """

    __slots__ = ()

    @classmethod
    def create(cls, candidates, m, start=None, end=None,
               search='exhaustive', loss='mean-abs-delta',
               screen=DEFAULT_SCREEN):
        """Return a validated SelectionProblem."""
        candidates = list(candidates)
        if len(set(candidates)) != len(candidates):
            raise ContractError('Duplicate candidate drivers')
        if not 1 <= m <= len(candidates):
            raise ContractError('Cannot choose {0} from {1}'.format(
                plural(m, 'driver'), plural(candidates, 'candidate')))
        if search not in SEARCHES:
            raise ContractError('Unknown search: {0!r}'.format(search))
        if loss not in LOSSES:
            raise ContractError('Unknown loss: {0!r}'.format(loss))
        if search == 'exhaustive' and comb(len(candidates), m,
                                           exact=True) > EXHAUSTIVE_LIMIT:
            raise ContractError('{0} subsets exceed the exhaustive limit of '
                                '{1}; use greedy-forward'.format(
                                    comb(len(candidates), m, exact=True),
                                    EXHAUSTIVE_LIMIT))
        if screen is not None and not screen >= 0:
            raise ContractError('screen must be non-negative')
        return cls(candidates, int(m), start, end, search, loss,
                   float(screen or 0.0))


class SelectionResult(namedtuple('SelectionResult', [
        'chosen', 'loss', 'marginal', 'trail', 'search', 'loss_name',
        'relevance', 'eligible'])):
    """The chosen drivers, their loss and the audit trail of the search."""

    __slots__ = ()

    def as_dict(self):
        """Return a JSON serializable dict of the result."""
        return {'chosen': list(self.chosen), 'loss': _number(self.loss),
                'loss_name': self.loss_name, 'search': self.search,
                'marginal': dict((k, _number(v))
                                 for k, v in self.marginal.items()),
                'trail': [{'subset': list(subset), 'loss': _number(loss)}
                          for subset, loss in self.trail],
                'relevance': dict((k, _number(v))
                                  for k, v in self.relevance.items()),
                'eligible': list(self.eligible), 'label': PROXY_LABEL}


class RevisionPolicy(namedtuple('RevisionPolicy', [
        'trailing', 'quantile', 'consecutive', 'baseline'])):
    """When a residual series signals that the driver set needs revision."""

    __slots__ = ()

    @classmethod
    def create(cls, trailing=20, quantile=0.95, consecutive=5, baseline=60):
        """Return a validated RevisionPolicy."""
        if trailing < 1 or consecutive < 1 or baseline < 2:
            raise ContractError('Invalid revision policy windows')
        if not 0 < quantile < 1:
            raise ContractError('quantile must lie in (0, 1)')
        return cls(int(trailing), float(quantile), int(consecutive),
                   int(baseline))


def _number(value):
    return None if value is None or not np.isfinite(value) else float(value)


def subset_loss(rs, loss, start=None, end=None):
    """Return the loss of a residual series over ``[start, end]``."""
    mask = np.ones(len(rs.dates), dtype=bool)
    if start is not None:
        mask &= rs.dates >= pd.Timestamp(start)
    if end is not None:
        mask &= rs.dates <= pd.Timestamp(end)
    aggregate = np.asarray(rs.delta_aggregate)[mask]
    defined = np.isfinite(aggregate)
    if not defined.any():
        raise DataError('Empty objective window: {0} to {1}'.format(
            start or 'start', end or 'end'))
    if loss == 'mean-abs-delta':
        return float(np.mean(np.abs(aggregate[defined])))
    if loss == 'mean-sq-delta':
        return float(np.mean(aggregate[defined] ** 2))
    if loss == 'sum-abs-pair':
        return float(np.nansum(np.abs(rs.deviation[mask])))
    raise ContractError('Unknown loss: {0!r}'.format(loss))


def evaluate_subset(subset, table, wc, ps, loss='mean-abs-delta', start=None,
                    end=None, constituents=None, estimates=None):
    """Return the loss of driver ``subset`` through the residual series."""
    rs = residual_series(table, wc, ps, list(subset),
                         constituents=constituents, estimates=estimates)
    return subset_loss(rs, loss, start, end)


def _key(loss, subset):
    return (loss if np.isfinite(loss) else np.inf, tuple(subset))


def relevance(estimates):
    """Return each driver's mean absolute correlation with the constituents.

    Undefined pairs are skipped; a driver with no defined pair scores 0.

    """
    rho = np.where(estimates.undefined, np.nan, np.abs(estimates.rho))
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', RuntimeWarning)
        score = np.nanmean(rho, axis=(0, 1))
    return dict((name, float(value) if np.isfinite(value) else 0.0)
                for name, value in zip(estimates.drivers, score))


def screen_candidates(scores, m, bound):
    """Return the sorted candidates whose score exceeds ``bound``.

    When fewer than ``m`` pass, the best scoring candidates fill the set up
    to ``m``.

    """
    ranked = sorted(scores, key=lambda x: (-scores[x], x))
    eligible = [x for x in ranked if bound <= 0 or scores[x] > bound]
    if len(eligible) < m:
        log.warning('{0} above the screen of {1:.3g}; keeping the best {2}'
                    .format(plural(eligible, 'candidate'), bound, m))
        eligible = ranked[:m]
    return sorted(eligible)


def select(problem, table, wc, ps, constituents=None, workers=1):
    """Return the SelectionResult of ``problem``.

    Candidates uncorrelated with the constituents leave every pair of the
    residual at zero, so they are screened out before the search. Exhaustive
    search returns the minimizer over the eligible subsets, ties broken by
    the sorted name tuple. Greedy forward search adds the eligible candidate
    with the smallest loss each round. The estimation pass is shared by all
    subsets.

    """
    missing = [x for x in problem.candidates if x not in table.columns]
    if missing:
        raise DataError('Candidates not in table: {0}'.format(
            ', '.join(missing)))
    everyone = sorted(problem.candidates)
    if constituents is None:
        constituents = [x for x in table.columns if x not in everyone]
    estimates = rolling_estimates(table, wc, constituents, everyone)
    scores = relevance(estimates)
    candidates = screen_candidates(scores, problem.m,
                                   problem.screen / np.sqrt(wc.length))
    if len(candidates) < len(everyone):
        log.info('Screened out {0}'.format(', '.join(
            x for x in everyone if x not in candidates)))
    cache = {}

    def evaluate(subsets):
        pending = [x for x in subsets if x not in cache]
        evaluate_one = (lambda x: evaluate_subset(
            x, table, wc, ps, problem.loss, problem.start, problem.end,
            constituents, estimates))
        if workers > 1 and len(pending) > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                losses = list(executor.map(evaluate_one, pending))
        else:
            losses = [evaluate_one(x) for x in pending]
        cache.update(zip(pending, losses))
        return [(x, cache[x]) for x in subsets]

    trail = []
    if problem.search == 'exhaustive':
        scored = evaluate(list(combinations(candidates, problem.m)))
        trail.extend(scored)
        chosen = min(scored, key=lambda x: _key(x[1], x[0]))[0]
    else:
        chosen = ()
        while len(chosen) < problem.m:
            options = [tuple(sorted(chosen + (x,)))
                       for x in candidates if x not in chosen]
            scored = evaluate(options)
            trail.extend(scored)
            chosen = min(scored, key=lambda x: _key(x[1], x[0]))[0]
            log.debug('Greedy round {0}: {1}'.format(len(chosen),
                                                     ', '.join(chosen)))
    marginal = dict((x[0][0], x[1])
                    for x in evaluate([(c,) for c in everyone]))
    log.info('Selected {0} with {1} {2:.6g}'.format(
        ', '.join(chosen), problem.loss, cache[chosen]))
    return SelectionResult(list(chosen), cache[chosen], marginal, trail,
                           problem.search, problem.loss, scores, candidates)


def revision_signal(rs, policy=None):
    """Return whether the driver set of ``rs`` needs revision.

    The first ``baseline`` defined dates are frozen as the reference. After
    them the signal fires when the trailing mean of ``log|delta|`` exceeds
    the ``quantile`` of the reference values on ``consecutive`` dates in a
    row. The trailing window never overlaps the reference. Diagnostics list
    each date on which a run reaches that length.

    """
    policy = policy or RevisionPolicy.create()
    series = pd.Series(deviation_level(rs.delta_aggregate),
                       index=rs.dates).dropna()
    if len(series) < policy.baseline:
        raise DataError('Insufficient history: {0} of {1} required'.format(
            plural(len(series), 'date'), policy.baseline))
    reference = series.iloc[:policy.baseline]
    threshold = float(reference.quantile(policy.quantile))
    trailing = series.iloc[policy.baseline:].rolling(policy.trailing).mean()
    exceed = (trailing > threshold).to_numpy()
    diagnostics = []
    run = 0
    for position, flag in enumerate(exceed):
        run = run + 1 if flag else 0
        if run == policy.consecutive:
            diagnostics.append({
                'date': trailing.index[position].strftime('%Y-%m-%d'),
                'trailing_mean': float(trailing.iloc[position]),
                'threshold': threshold})
    if diagnostics:
        log.warning('Driver set revision signalled on {0}'.format(
            plural(diagnostics, 'date')))
    return RevisionSignal(bool(diagnostics), diagnostics)
