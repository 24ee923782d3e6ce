"""Return tables, rolling-window estimation and residual series over time."""

from collections import namedtuple
import logging
import os
import warnings
from dateutil.parser import isoparse
import numpy as np
import pandas as pd
from scipy.stats import rankdata, spearmanr
from .const import (BROADCAST_MODES, DEFAULT_ANNUALIZATION,
                    DEFAULT_EVENT_RADIUS, DEFAULT_FLAG_K,
                    DEFAULT_LEVEL_SPAN, DEFAULT_MAD_BASELINE,
                    DEFAULT_MAD_MIN_HISTORY, DEFAULT_WINDOW,
                    MAD_CONSISTENCY, MIN_WINDOW, MISSING_POLICIES,
                    PIT_METHODS)
from .copula_core import clamp_corr, std_normal_cdf
from .exceptions import ContractError, DataError
from .helpers import atomic_write, plural
from .pde_residuals import (VolParams, brownian_condition_residual,
                            drift_residual, implied_solve, pair_deviation)
from .pi_system import DriverState, PiSystem, pair_probabilities

log = logging.getLogger(__name__)

UNDEFINED_RHO = 'zero variance in window'
DEGENERATE = 'all pairs undefined'

PeriodSum = namedtuple('PeriodSum', ['per_pair', 'total', 'dates'])
ResidualSeries = namedtuple('ResidualSeries', [
    'dates', 'constituents', 'drivers', 'weights', 'deviation', 'mismatch',
    'delta', 'delta_aggregate', 'delta_total', 'brownian',
    'brownian_aggregate', 'realized_vol', 'flags', 'mismatch_flags',
    'aggregate_flags', 'date_flags', 'reasons', 'skipped'])


class ReturnTable(object):
    """Dated return series, one column per constituent or driver."""

    def __init__(self, frame, frequency='B'):
        """Wrap ``frame``, a DataFrame indexed by strictly increasing dates."""
        if not isinstance(frame.index, pd.DatetimeIndex):
            raise DataError('Return tables must be indexed by date')
        if not frame.index.is_unique:
            raise DataError('Duplicate dates in return table')
        if not frame.index.is_monotonic_increasing:
            raise DataError('Dates must be strictly increasing')
        if not frame.columns.is_unique:
            raise DataError('Duplicate column names in return table')
        self.frame = frame.astype(float)
        self.frequency = frequency

    def __len__(self):
        """Return the number of dates."""
        return len(self.frame)

    def __repr__(self):
        """Return the representation of the table."""
        return 'ReturnTable({0} x {1})'.format(
            plural(len(self), 'date'), plural(len(self.columns), 'column'))

    @property
    def columns(self):
        """Return the column names in file order."""
        return list(self.frame.columns)

    @property
    def dates(self):
        """Return the DatetimeIndex of the table."""
        return self.frame.index

    def values(self, columns):
        """Return a float array of ``columns``, raising DataError if absent."""
        missing = [x for x in columns if x not in self.frame.columns]
        if missing:
            raise DataError('Unknown columns: {0}'.format(', '.join(missing)))
        return self.frame[list(columns)].to_numpy(dtype=float)


class WindowConfig(namedtuple('WindowConfig', [
        'length', 'pit', 'min_periods', 'annualization', 'flag_k',
        'mad_baseline', 'mad_min_history', 'broadcast'])):
    """Rolling window, transform and event flag settings."""

    __slots__ = ()

    @classmethod
    def create(cls, length=DEFAULT_WINDOW, pit='empirical-rank',
               min_periods=None, annualization=DEFAULT_ANNUALIZATION,
               flag_k=DEFAULT_FLAG_K, mad_baseline=DEFAULT_MAD_BASELINE,
               mad_min_history=DEFAULT_MAD_MIN_HISTORY, broadcast='uniform'):
        """Return a validated WindowConfig."""
        if min_periods is None:
            min_periods = length
        if length < MIN_WINDOW:
            raise ContractError('Window length must be at least {0}'
                                .format(MIN_WINDOW))
        if not 2 <= min_periods <= length:
            raise ContractError('min_periods must lie in [2, {0}]'
                                .format(length))
        if pit not in PIT_METHODS:
            raise ContractError('Unknown PIT method: {0!r}'.format(pit))
        if broadcast not in BROADCAST_MODES:
            raise ContractError('Unknown broadcast mode: {0!r}'
                                .format(broadcast))
        if not flag_k > 0 or not annualization > 0:
            raise ContractError('flag_k and annualization must be positive')
        if not 1 <= mad_min_history <= mad_baseline:
            raise ContractError('mad_min_history must lie in [1, {0}]'
                                .format(mad_baseline))
        return cls(int(length), pit, int(min_periods), float(annualization),
                   float(flag_k), int(mad_baseline), int(mad_min_history),
                   broadcast)


class EstimateSet(namedtuple('EstimateSet', [
        'dates', 'constituents', 'drivers', 'u', 'd', 'rho', 'undefined',
        'mu_a', 'sigma_a', 'cov_a', 'mu_D', 'sigma_D', 'Sigma_D',
        'skipped'])):
    """Per-date window estimates; arrays have a leading date axis.

    ``rho[t, i, j]`` pairs constituent ``i`` at ``t`` with driver ``j`` at
    ``t - 1`` over the trailing window. Drifts and covariances are
    annualized.

    """

    __slots__ = ()

    def subset(self, drivers):
        """Return the estimates restricted to ``drivers``, in that order."""
        missing = [x for x in drivers if x not in self.drivers]
        if missing:
            raise DataError('No estimates for drivers: {0}'
                            .format(', '.join(missing)))
        index = [self.drivers.index(x) for x in drivers]
        return self._replace(
            drivers=list(drivers), d=self.d[:, index],
            rho=self.rho[:, :, index], undefined=self.undefined[:, :, index],
            mu_D=self.mu_D[:, index], sigma_D=self.sigma_D[:, index],
            Sigma_D=self.Sigma_D[:, index][:, :, index])


def load_returns(path, missing='strict', frequency='B'):
    """Return the ReturnTable stored in the CSV file at ``path``.

    The header is ``date,<name>...``. Rows whose date does not parse are
    rejected with a warning naming their line numbers. Blank or non-numeric
    cells raise DataError under the ``strict`` policy; under ``drop-row`` the
    row is dropped with a warning.

    """
    if missing not in MISSING_POLICIES:
        raise ContractError('Unknown missing value policy: {0!r}'
                            .format(missing))
    try:
        raw = pd.read_csv(path, header=None, dtype=str,
                          keep_default_na=False, skip_blank_lines=False)
    except (IOError, OSError):
        raise DataError('Cannot read {0}'.format(path))
    except pd.errors.EmptyDataError:
        raise DataError('Empty file: {0}'.format(path))
    except pd.errors.ParserError as exc:
        raise DataError('Malformed CSV {0}: {1}'.format(path, exc))
    raw = raw.fillna('')

    header = [str(x).strip() for x in raw.iloc[0]]
    if header[0].lower() != 'date':
        raise DataError("Expected 'date' as the first column of {0}, found "
                        '{1!r}'.format(path, header[0]))
    names = header[1:]
    if not names or not all(names):
        raise DataError('Missing column names in {0}'.format(path))
    duplicated = sorted(set(x for x in names if names.count(x) > 1))
    if duplicated:
        raise DataError('Duplicate column names: {0}'.format(
            ', '.join(duplicated)))

    lines, dates, cells, rejected = [], [], [], []
    for line, row in enumerate(raw.iloc[1:].itertuples(index=False), 2):
        row = [str(x).strip() for x in row]
        if not any(row):
            continue
        try:
            date = isoparse(row[0])
        except (ValueError, OverflowError):
            rejected.append(line)
            continue
        lines.append(line)
        dates.append(date)
        cells.append(row[1:])
    if rejected:
        log.warning('Rejected {0} with unparseable dates in {1}: lines {2}'
                    .format(plural(rejected, 'row'), path,
                            ', '.join(str(x) for x in rejected)))
    if not dates:
        raise DataError('No data rows in {0}'.format(path))

    text = pd.DataFrame(cells, columns=names)
    numbers = text.apply(pd.to_numeric, errors='coerce')
    invalid = (numbers.isna() | ~np.isfinite(numbers)).to_numpy()
    if invalid.any():
        rows, columns = np.nonzero(invalid)
        if missing == 'strict':
            cell = text.iat[rows[0], columns[0]]
            raise DataError('{0} value {1!r} in column {2} on line {3}'
                            .format('Non-numeric' if cell else 'Missing',
                                    cell, names[columns[0]],
                                    lines[rows[0]]))
        bad = sorted(set(rows))
        log.warning('Dropped {0} with missing values in {1}: lines {2}'
                    .format(plural(bad, 'row'), path,
                            ', '.join(str(lines[x]) for x in bad)))
        keep = ~invalid.any(axis=1)
        numbers = numbers[keep]
        dates = [x for x, flag in zip(dates, keep) if flag]
        lines = [x for x, flag in zip(lines, keep) if flag]
        if not dates:
            raise DataError('No complete rows in {0}'.format(path))

    index = pd.DatetimeIndex(dates, name='date')
    for position in range(1, len(index)):
        if index[position] == index[position - 1]:
            raise DataError('Duplicate date {0} on line {1}'.format(
                index[position].date(), lines[position]))
        if index[position] < index[position - 1]:
            raise DataError('Dates must be strictly increasing (line {0})'
                            .format(lines[position]))
    frame = pd.DataFrame(numbers.to_numpy(dtype=float), index=index,
                         columns=names)
    log.debug('Loaded {0} of {1} from {2}'.format(
        plural(len(frame), 'date'), plural(names, 'column'), path))
    return ReturnTable(frame, frequency)


def returns_csv(table):
    """Return the CSV text of ``table``; floats round-trip exactly."""
    return table.frame.to_csv(index_label='date', date_format='%Y-%m-%d',
                              float_format='%.17g', na_rep='')


def write_returns(table, path):
    """Atomically write ``table`` to ``path`` as CSV."""
    return atomic_write(path, returns_csv(table))


def inject_jump(table, column, position, size=10.0):
    """Return a copy of ``table`` with a jump added to one return.

    The jump is ``size`` times the sample standard deviation of ``column``.

    """
    if column not in table.columns:
        raise DataError('Unknown column: {0}'.format(column))
    frame = table.frame.copy()
    frame.iloc[position, frame.columns.get_loc(column)] += (
        size * frame[column].std())
    return ReturnTable(frame, table.frequency)


def _pit(window, method):
    """Return the transform of the last row of ``window`` per column."""
    if method == 'empirical-rank':
        return rankdata(window, axis=0)[-1] / (window.shape[0] + 1.0)
    mean = window.mean(axis=0)
    std = window.std(axis=0, ddof=1)
    spread = np.where(std > 0, std, 1.0)
    return np.where(std > 0, std_normal_cdf((window[-1] - mean) / spread),
                    0.5)


def rolling_estimates(table, wc, constituents, drivers):
    """Return the per-date EstimateSet over trailing windows.

    At date ``t`` the window holds constituent returns up to ``t`` paired
    with driver returns up to ``t - 1``, so no estimate looks ahead. Pairs
    with a constant column in the window have undefined ``rho`` (NaN) and
    are marked in ``undefined``.

    """
    a = table.values(constituents)
    D = table.values(drivers)
    n, count = a.shape[1], len(table)
    ann = wc.annualization
    rows = []
    skipped = []
    if count:
        skipped.append((table.dates[0], 'no lagged driver observation'))
    for t in range(1, count):
        start = max(1, t - wc.length + 1)
        size = t - start + 1
        if size < wc.min_periods:
            skipped.append((table.dates[t], 'insufficient history ({0} of {1})'
                            .format(size, plural(wc.min_periods,
                                                 'observation'))))
            continue
        window = np.hstack([a[start:t + 1], D[start - 1:t]])
        mean = window.mean(axis=0)
        centered = window - mean
        cov = centered.T.dot(centered) / (size - 1)
        std = np.sqrt(np.diag(cov))
        constant = np.ptp(window, axis=0) == 0
        undefined = constant[:n, None] | constant[None, n:]
        with np.errstate(divide='ignore', invalid='ignore'):
            raw = cov[:n, n:] / np.outer(std[:n], std[n:])
        raw = np.where(undefined, 0.0, np.clip(raw, -1.0, 1.0))
        rho = np.where(undefined, np.nan, clamp_corr(raw)[0])
        pit = _pit(window, wc.pit)
        rows.append((table.dates[t], pit[:n], pit[n:], rho, undefined,
                     mean[:n] * ann, std[:n] * np.sqrt(ann),
                     cov[:n, :n] * ann, mean[n:] * ann,
                     std[n:] * np.sqrt(ann), cov[n:, n:] * ann))
    if skipped:
        log.debug('Skipped {0} while filling the first window'.format(
            plural(skipped, 'date')))
    if not rows:
        m = len(drivers)
        return EstimateSet(
            pd.DatetimeIndex([], name='date'), list(constituents),
            list(drivers), np.empty((0, n)), np.empty((0, m)),
            np.empty((0, n, m)), np.empty((0, n, m), dtype=bool),
            np.empty((0, n)), np.empty((0, n)), np.empty((0, n, n)),
            np.empty((0, m)), np.empty((0, m)), np.empty((0, m, m)), skipped)
    columns = list(zip(*rows))
    return EstimateSet(pd.DatetimeIndex(columns[0], name='date'),
                       list(constituents), list(drivers),
                       *[np.array(x) for x in columns[1:]],
                       skipped=skipped)


def mad_flags(values, k=DEFAULT_FLAG_K, baseline=DEFAULT_MAD_BASELINE,
              min_history=DEFAULT_MAD_MIN_HISTORY):
    """Return where ``values`` leave their trailing median by k scaled MADs.

    ``values`` has a leading date axis. At date ``t`` the history is the
    finite values of the previous ``baseline`` dates; at least
    ``min_history`` of them are needed to flag. A value is flagged when
    ``|x - median| > k * 1.4826 * MAD``.

    """
    values = np.asarray(values, dtype=float)
    flags = np.zeros(values.shape, dtype=bool)
    for t in range(values.shape[0]):
        history = values[max(0, t - baseline):t]
        enough = np.isfinite(history).sum(axis=0) >= min_history
        if not np.any(enough):
            continue
        with warnings.catch_warnings():
            warnings.simplefilter('ignore', RuntimeWarning)
            median = np.nanmedian(history, axis=0)
            mad = np.nanmedian(np.abs(history - median), axis=0)
        with np.errstate(invalid='ignore'):
            flags[t] = (enough & np.isfinite(values[t]) &
                        (np.abs(values[t] - median) >
                         k * MAD_CONSISTENCY * mad))
    return flags


def deviation_level(values):
    """Return ``log|values|``, the scale event flags are computed on.

    Residuals are products of copula derivatives and are heavy tailed in
    the PIT values, so a MAD band on the raw scale fires on ordinary
    dates. Exact zeros and undefined entries map to NaN.

    """
    values = np.abs(np.asarray(values, dtype=float))
    with np.errstate(divide='ignore', invalid='ignore'):
        level = np.log(values)
    return np.where(np.isfinite(level), level, np.nan)


def _mismatch(ps, sys, state, u, rho):
    """Return the one-step change of each pair term minus its prediction."""
    pair = pair_probabilities(ps, sys, state)
    w = ps.weights[:, None]
    dj = state.jeffrey[..., None, :]
    by_u = -w * sys.dPi_da * dj
    by_d = -w * (sys.dPi_dD * dj + sys.pi)
    by_rho = -w * sys.dPi_drho * dj
    mismatch = np.full(pair.shape, np.nan)
    mismatch[1:] = (np.diff(pair, axis=0) -
                    by_u[:-1] * np.diff(u, axis=0)[:, :, None] -
                    by_d[:-1] * np.diff(state.d, axis=0)[:, None, :] -
                    by_rho[:-1] * np.diff(rho, axis=0))
    return mismatch


def residual_series(table, wc, ps, drivers, constituents=None, pinned=None,
                    estimates=None):
    """Return the ResidualSeries of the portfolio against ``drivers``.

    :param constituents: Constituent columns; defaults to every column that
        is not a driver.
    :param pinned: Optional dict with ``sigma_p`` and/or ``mu_d`` overriding
        the realized window estimates.
    :param estimates: A precomputed EstimateSet covering ``drivers``.

    """
    drivers = list(drivers)
    if constituents is None:
        constituents = [x for x in table.columns if x not in drivers]
    if ps.n != len(constituents):
        raise ContractError('Portfolio has {0}, table selection has {1}'
                            .format(plural(ps.n, 'weight'),
                                    len(constituents)))
    if estimates is None:
        estimates = rolling_estimates(table, wc, constituents, drivers)
    elif list(estimates.constituents) != list(constituents):
        raise ContractError('Estimates cover other constituents')
    est = estimates.subset(drivers)
    if not len(est.dates):
        raise DataError('Insufficient history: no date has {0}'.format(
            plural(wc.min_periods, 'observation')))

    undefined = est.undefined
    rho = np.where(undefined, 0.0, est.rho)
    state = DriverState.create(est.d)
    sys = PiSystem.build(est.u, state, rho).masked(undefined)
    realized = np.sqrt(np.clip(np.einsum('i,tij,j->t', ps.weights, est.cov_a,
                                         ps.weights), 0.0, None))
    pinned = pinned or {}
    sigma_p = realized
    if pinned.get('sigma_p') is not None:
        sigma_p = np.full(realized.shape, float(pinned['sigma_p']))
    mu_D = est.mu_D
    if pinned.get('mu_d') is not None:
        mu_D = np.broadcast_to(np.asarray(pinned['mu_d'], dtype=float),
                               est.mu_D.shape)
    vp = VolParams.create(sigma_p, est.Sigma_D, mu_D)

    drift = drift_residual(ps, sys, state, vp, wc.broadcast)
    deviation = np.where(undefined, np.nan,
                         pair_deviation(ps, sys, state, vp, wc.broadcast))
    brownian = brownian_condition_residual(ps, sys, state)
    mismatch = _mismatch(ps, sys, state, est.u, rho)
    stale = undefined.copy()
    stale[1:] |= undefined[:-1]
    mismatch = np.where(stale, np.nan, mismatch)

    degenerate = undefined.all(axis=(1, 2))
    delta = np.where(degenerate[:, None], np.nan, drift.delta)
    aggregate = np.where(degenerate, np.nan, drift.aggregate)
    total = np.where(degenerate, np.nan, drift.total)
    reasons = np.where(undefined, UNDEFINED_RHO, '').astype(object)
    reasons[degenerate] = DEGENERATE
    if np.any(undefined):
        log.warning('{0} undefined over {1}'.format(
            plural(int(np.count_nonzero(undefined)), 'pair-date'),
            plural(len(est.dates), 'date')))

    args = (wc.flag_k, wc.mad_baseline, wc.mad_min_history)
    flags = mad_flags(deviation_level(deviation), *args)
    aggregate_flags = mad_flags(deviation_level(aggregate), *args)
    # Pair flags stay per pair; a date is an event when the aggregate is.
    date_flags = aggregate_flags.copy()
    if np.any(date_flags):
        log.info('Flagged {0}'.format(plural(int(date_flags.sum()), 'date')))
    return ResidualSeries(
        est.dates, list(constituents), drivers, ps.weights, deviation,
        mismatch, delta, aggregate, total, brownian.residual,
        brownian.aggregate, realized, flags,
        mad_flags(deviation_level(mismatch), *args), aggregate_flags,
        date_flags, reasons, est.skipped)


def _period(rs, start=None, end=None):
    mask = np.ones(len(rs.dates), dtype=bool)
    if start is not None:
        mask &= rs.dates >= pd.Timestamp(start)
    if end is not None:
        mask &= rs.dates <= pd.Timestamp(end)
    if not mask.any():
        raise DataError('Empty period: {0} to {1}'.format(
            start or 'start', end or 'end'))
    return mask


def sum_series(rs, start=None, end=None):
    """Return the per-pair and total deviation sums over a date period."""
    mask = _period(rs, start, end)
    per_pair = np.nansum(rs.deviation[mask], axis=0)
    return PeriodSum(per_pair, float(per_pair.sum()), rs.dates[mask])


def flag_rate(rs):
    """Return the fraction of defined dates carrying an event flag."""
    defined = np.isfinite(rs.delta_aggregate)
    if not defined.any():
        raise DataError('No defined dates in residual series')
    return float(rs.date_flags[defined].mean())


def deviation_trend(rs, span=DEFAULT_LEVEL_SPAN):
    """Return the trailing ``span``-date mean of the aggregate's level."""
    level = pd.Series(deviation_level(rs.delta_aggregate))
    return level.rolling(span, min_periods=1).mean().values


def event_rank_correlation(rs, date, radius=DEFAULT_EVENT_RADIUS,
                           span=DEFAULT_LEVEL_SPAN):
    """Return the rank correlation of deviation and volatility near ``date``.

    The neighbourhood spans ``radius`` dates on both sides of the first date
    on or after ``date``. Deviation is the trailing ``span``-date mean of
    ``log|delta|``, matching the trailing window realized volatility is
    estimated over.

    """
    center = int(rs.dates.searchsorted(pd.Timestamp(date)))
    if center >= len(rs.dates):
        raise DataError('Event date {0} is after the series'.format(date))
    window = slice(max(0, center - radius), center + radius + 1)
    magnitude = deviation_trend(rs, span)[window]
    volatility = np.asarray(rs.realized_vol)[window]
    correlation, _ = spearmanr(magnitude, volatility, nan_policy='omit')
    return float(correlation)


def _long_frame(rs, values, flags):
    n, m = len(rs.constituents), len(rs.drivers)
    count = len(rs.dates)
    return pd.DataFrame({
        'date': np.repeat(rs.dates.strftime('%Y-%m-%d'), n * m),
        'constituent': np.tile(np.repeat(rs.constituents, m), count),
        'driver': np.tile(rs.drivers, count * n),
        'value': np.asarray(values).reshape(-1),
        'flag': np.asarray(flags).reshape(-1).astype(int),
        'reason': np.asarray(rs.reasons).reshape(-1)},
        columns=['date', 'constituent', 'driver', 'value', 'flag', 'reason'])


def write_residual_series(rs, directory):
    """Write the residual series as CSV files and return their names.

    ``deviations.csv`` and ``mismatch.csv`` are long format, one row per
    date and pair; ``aggregates.csv`` has one row per date.

    """
    options = {'index': False, 'float_format': '%.17g', 'na_rep': ''}
    aggregates = pd.DataFrame({
        'date': rs.dates.strftime('%Y-%m-%d'),
        'delta_aggregate': rs.delta_aggregate,
        'delta_total': rs.delta_total,
        'brownian_aggregate': rs.brownian_aggregate,
        'realized_vol': rs.realized_vol,
        'flag': np.asarray(rs.date_flags).astype(int)},
        columns=['date', 'delta_aggregate', 'delta_total',
                 'brownian_aggregate', 'realized_vol', 'flag'])
    for j, name in enumerate(rs.drivers):
        aggregates['delta_{0}'.format(name)] = rs.delta[:, j]
    outputs = [
        ('deviations.csv', _long_frame(rs, rs.deviation, rs.flags)),
        ('mismatch.csv', _long_frame(rs, rs.mismatch, rs.mismatch_flags)),
        ('aggregates.csv', aggregates)]
    for name, frame in outputs:
        atomic_write(os.path.join(directory, name), frame.to_csv(**options))
    return [name for name, _ in outputs]


def implied_solution(table, wc, ps, drivers, constituents=None, start=None,
                     end=None, variances=None):
    """Solve the implied system over the estimated dates in a period.

    Without ``variances`` the portfolio weights are taken as known and the
    implied constituent variances are returned; with a variance per
    constituent the implied weights are returned.

    """
    drivers = list(drivers)
    if constituents is None:
        constituents = [x for x in table.columns if x not in drivers]
    if ps.n != len(constituents):
        raise ContractError('Portfolio has {0}, table selection has {1}'
                            .format(plural(ps.n, 'weight'),
                                    len(constituents)))
    est = rolling_estimates(table, wc, constituents, drivers)
    if not len(est.dates):
        raise DataError('Insufficient history: no date has {0}'.format(
            plural(wc.min_periods, 'observation')))
    mask = _period(est, start, end)
    undefined = est.undefined[mask]
    state = DriverState.create(est.d[mask])
    sys = PiSystem.build(est.u[mask], state,
                         np.where(undefined, 0.0, est.rho[mask]))
    sys = sys.masked(undefined)
    options = {'broadcast': wc.broadcast, 'dates': est.dates[mask]}
    if variances is None:
        options['weights'] = ps.weights
    else:
        variances = np.asarray(variances, dtype=float)
        if variances.shape != (ps.n,):
            raise ContractError('Expected {0}'.format(
                plural(ps.n, 'variance')))
        options['Sigma_p'] = np.diag(variances)
    return implied_solve(sys, state, est.Sigma_D[mask], est.mu_D[mask],
                         **options)
