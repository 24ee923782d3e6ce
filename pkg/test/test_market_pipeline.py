"""market_pipeline test file."""

from copulapde import market_pipeline as mp
from copulapde.const import EPS_RHO
from copulapde.exceptions import ContractError, DataError
from copulapde.ito_simulator import gen_synthetic_market
from copulapde.pi_system import PortfolioSpec
from mock import patch
import numpy as np
import os
import unittest
from .helper import TempDirTestCase, make_table

CSV = ('date,A1,D1\n'
       '2001-01-01,0.1,0.2\n'
       '2001-01-02,{0},0.3\n'
       '2001-01-03,0.2,0.1\n')


def lagged_table(count=100, seed=0):
    """Return a table whose constituent repeats the driver one date later."""
    driver = np.random.default_rng(seed).normal(0, 0.01, count)
    constituent = np.concatenate([[0.0], driver[:-1]])
    return make_table(np.column_stack([constituent, driver]), ['A1', 'D1'])


class LoadReturnsTest(TempDirTestCase):
    def _write(self, text, name='returns.csv'):
        path = os.path.join(self.tmpdir, name)
        with open(path, 'w') as fp:
            fp.write(text)
        return path

    def test_load_returns__round_trip(self):
        values = np.random.default_rng(1).normal(0, 0.01, (30, 3))
        table = make_table(values, ['A1', 'A2', 'D1'])
        path = os.path.join(self.tmpdir, 'out.csv')
        mp.write_returns(table, path)
        loaded = mp.load_returns(path)
        self.assertEqual(['A1', 'A2', 'D1'], loaded.columns)
        self.assertTrue(np.array_equal(values, loaded.values(loaded.columns)))
        self.assertEqual(list(table.dates.strftime('%Y-%m-%d')),
                         list(loaded.dates.strftime('%Y-%m-%d')))

    def test_load_returns__synthetic_round_trip(self):
        market = gen_synthetic_market(3, 2, 120, seed=8, extra_drivers=1)
        path = os.path.join(self.tmpdir, 'market.csv')
        mp.write_returns(market.table, path)
        loaded = mp.load_returns(path)
        self.assertEqual(market.constituents + market.drivers,
                         loaded.columns)
        self.assertTrue(market.table.dates.equals(loaded.dates))
        self.assertTrue(np.array_equal(market.table.frame.values,
                                       loaded.frame.values))

    def test_load_returns__strict_missing(self):
        with self.assertRaises(DataError) as context:
            mp.load_returns(self._write(CSV.format('')))
        self.assertIn('line 3', str(context.exception))

    def test_load_returns__strict_non_numeric(self):
        with self.assertRaises(DataError) as context:
            mp.load_returns(self._write(CSV.format('abc')))
        self.assertIn('Non-numeric', str(context.exception))

    @patch('copulapde.market_pipeline.log')
    def test_load_returns__drop_row(self, mock_log):
        table = mp.load_returns(self._write(CSV.format('')),
                                missing='drop-row')
        self.assertEqual(2, len(table))
        self.assertTrue(mock_log.warning.called)
        self.assertEqual(['2001-01-01', '2001-01-03'],
                         list(table.dates.strftime('%Y-%m-%d')))

    @patch('copulapde.market_pipeline.log')
    def test_load_returns__rejects_bad_date(self, mock_log):
        text = CSV.format('0.5').replace('2001-01-02', 'notadate')
        table = mp.load_returns(self._write(text))
        self.assertEqual(2, len(table))
        self.assertTrue(mock_log.warning.called)
        self.assertIn('lines 3', mock_log.warning.call_args[0][0])

    def test_load_returns__duplicate_date(self):
        text = CSV.format('0.5').replace('2001-01-02', '2001-01-01')
        with self.assertRaises(DataError):
            mp.load_returns(self._write(text))

    def test_load_returns__decreasing_dates(self):
        text = CSV.format('0.5').replace('2001-01-03', '2000-12-31')
        with self.assertRaises(DataError):
            mp.load_returns(self._write(text))

    def test_load_returns__bad_header(self):
        with self.assertRaises(DataError):
            mp.load_returns(self._write(CSV.format('0.5').replace(
                'date', 'day')))

    def test_load_returns__duplicate_column(self):
        with self.assertRaises(DataError):
            mp.load_returns(self._write(CSV.format('0.5').replace(
                'A1', 'D1')))

    def test_load_returns__missing_file(self):
        with self.assertRaises(DataError):
            mp.load_returns(os.path.join(self.tmpdir, 'absent.csv'))

    def test_load_returns__unknown_policy(self):
        with self.assertRaises(ContractError):
            mp.load_returns(self._write(CSV.format('0.5')), missing='fill')


class ReturnTableTest(unittest.TestCase):
    def test_values__unknown_column(self):
        table = make_table(np.zeros((3, 1)), ['A1'])
        with self.assertRaises(DataError):
            table.values(['A2'])

    def test_repr(self):
        table = make_table(np.zeros((3, 2)), ['A1', 'D1'])
        self.assertEqual('ReturnTable(3 dates x 2 columns)', repr(table))

    def test_inject_jump(self):
        table = lagged_table(40)
        jumped = mp.inject_jump(table, 'D1', 10, size=4.0)
        delta = jumped.frame['D1'] - table.frame['D1']
        self.assertAlmostEqual(4.0 * table.frame['D1'].std(), delta.iloc[10],
                               places=15)
        self.assertEqual(1, int((delta != 0).sum()))
        with self.assertRaises(DataError):
            mp.inject_jump(table, 'X', 1)


class WindowConfigTest(unittest.TestCase):
    def test_create__defaults(self):
        wc = mp.WindowConfig.create()
        self.assertEqual(60, wc.length)
        self.assertEqual(60, wc.min_periods)

    def test_create__short_window(self):
        with self.assertRaises(ContractError):
            mp.WindowConfig.create(10)

    def test_create__invalid_values(self):
        for options in ({'pit': 'kernel'}, {'min_periods': 1},
                        {'broadcast': 'other'}, {'flag_k': 0}):
            with self.assertRaises(ContractError):
                mp.WindowConfig.create(20, **options)


class RollingEstimatesTest(unittest.TestCase):
    def setUp(self):
        self.wc = mp.WindowConfig.create(20)

    def test_rolling_estimates__lagged_copy(self):
        est = mp.rolling_estimates(lagged_table(), self.wc, ['A1'], ['D1'])
        self.assertEqual(80, len(est.dates))
        self.assertTrue(np.all(est.rho == 1.0 - EPS_RHO))
        self.assertFalse(est.undefined.any())

    def test_rolling_estimates__first_date(self):
        table = lagged_table()
        est = mp.rolling_estimates(table, self.wc, ['A1'], ['D1'])
        self.assertEqual(table.dates[20], est.dates[0])
        self.assertEqual(20, len(est.skipped))

    def test_rolling_estimates__constant_column(self):
        values = np.column_stack([np.zeros(50),
                                  np.random.default_rng(2).normal(size=50)])
        est = mp.rolling_estimates(make_table(values, ['A1', 'D1']),
                                   self.wc, ['A1'], ['D1'])
        self.assertTrue(est.undefined.all())
        self.assertTrue(np.all(np.isnan(est.rho)))

    def test_rolling_estimates__independent_columns(self):
        values = np.random.default_rng(3).normal(size=(400, 2))
        wc = mp.WindowConfig.create(60)
        est = mp.rolling_estimates(make_table(values, ['A1', 'D1']), wc,
                                   ['A1'], ['D1'])
        self.assertLessEqual(np.mean(np.abs(est.rho)), 3.0 / np.sqrt(60))

    def test_rolling_estimates__no_lookahead(self):
        values = np.random.default_rng(4).normal(size=(120, 3))
        shuffled = values.copy()
        shuffled[80:] = np.random.default_rng(5).permutation(values[80:])
        names = ['A1', 'A2', 'D1']
        first = mp.rolling_estimates(make_table(values, names), self.wc,
                                     ['A1', 'A2'], ['D1'])
        second = mp.rolling_estimates(make_table(shuffled, names), self.wc,
                                      ['A1', 'A2'], ['D1'])
        before = first.dates < make_table(values, names).dates[80]
        for name in ('u', 'd', 'rho', 'cov_a', 'Sigma_D'):
            self.assertTrue(np.array_equal(getattr(first, name)[before],
                                           getattr(second, name)[before]),
                            name)

    def test_subset__unknown_driver(self):
        est = mp.rolling_estimates(lagged_table(), self.wc, ['A1'], ['D1'])
        with self.assertRaises(DataError):
            est.subset(['D2'])


class MadFlagsTest(unittest.TestCase):
    def setUp(self):
        self.values = np.random.default_rng(6).normal(size=200)
        self.values[120] = 50.0

    def test_mad_flags__spike(self):
        flags = mp.mad_flags(self.values, 5.0, 250, 30)
        self.assertTrue(flags[120])
        self.assertFalse(flags[:30].any())

    def test_mad_flags__monotone_in_k(self):
        strict = mp.mad_flags(self.values, 6.0, 250, 30)
        loose = mp.mad_flags(self.values, 3.0, 250, 30)
        self.assertFalse(np.any(strict & ~loose))

    def test_deviation_level(self):
        level = mp.deviation_level([0.0, -np.e, 1.0, np.nan, np.inf])
        self.assertTrue(np.isnan(level[0]))
        self.assertAlmostEqual(1.0, level[1])
        self.assertEqual(0.0, level[2])
        self.assertTrue(np.all(np.isnan(level[3:])))

    def test_mad_flags__ignores_nan(self):
        values = self.values.copy()
        values[50:60] = np.nan
        flags = mp.mad_flags(values, 5.0, 250, 30)
        self.assertFalse(flags[50:60].any())
        self.assertTrue(flags[120])


class ResidualSeriesTest(TempDirTestCase):
    def setUp(self):
        super(ResidualSeriesTest, self).setUp()
        self.market = gen_synthetic_market(2, 1, 400, seed=1)
        self.ps = PortfolioSpec.equal(2)
        self.wc = mp.WindowConfig.create(60)

    def _series(self, table=None, wc=None, **kwargs):
        if table is None:
            table = self.market.table
        return mp.residual_series(table, wc or self.wc, self.ps, ['D1'],
                                  **kwargs)

    def test_residual_series__shapes(self):
        rs = self._series()
        self.assertEqual(['A1', 'A2'], rs.constituents)
        self.assertEqual(340, len(rs.dates))
        self.assertEqual((340, 2, 1), rs.deviation.shape)
        self.assertEqual((340,), rs.delta_aggregate.shape)
        self.assertTrue(np.all(np.isnan(rs.mismatch[0])))
        self.assertTrue(np.all(np.isfinite(rs.delta_aggregate)))

    def test_residual_series__deterministic(self):
        first, second = self._series(), self._series()
        for name in ('deviation', 'mismatch', 'delta', 'date_flags'):
            self.assertTrue(np.array_equal(
                np.asarray(getattr(first, name), dtype=float),
                np.asarray(getattr(second, name), dtype=float),
                equal_nan=True), name)

    def test_residual_series__two_paths(self):
        rs = self._series()
        self.assertTrue(np.allclose(rs.deviation.sum(axis=1), rs.delta,
                                    rtol=1e-9, atol=1e-12))

    def test_residual_series__no_lookahead(self):
        frame = self.market.table.frame.copy()
        cut = 250
        frame.iloc[cut:] = frame.iloc[cut:].sample(
            frac=1.0, random_state=0).to_numpy()
        shuffled = self._series(mp.ReturnTable(frame))
        rs = self._series()
        before = rs.dates < frame.index[cut]
        for name in ('deviation', 'mismatch', 'delta_aggregate', 'flags',
                     'date_flags'):
            self.assertTrue(np.array_equal(
                np.asarray(getattr(rs, name)[before], dtype=float),
                np.asarray(getattr(shuffled, name)[before], dtype=float),
                equal_nan=True), name)

    def test_residual_series__event_is_flagged(self):
        market = gen_synthetic_market(2, 1, 400, seed=1, event=(0, 300, 10))
        rs = self._series(market.table,
                          mp.WindowConfig.create(60, 'gaussian-fit'))
        flagged = set(rs.dates[rs.date_flags])
        self.assertTrue(flagged & set(market.table.dates[300:303]))

    def test_residual_series__pair_flags_do_not_mark_dates(self):
        rs = self._series()
        self.assertTrue(np.array_equal(
            rs.date_flags,
            mp.mad_flags(mp.deviation_level(rs.delta_aggregate))))

    def test_residual_series__higher_k_flags_less(self):
        low = self._series(wc=mp.WindowConfig.create(60, flag_k=3.0))
        high = self._series(wc=mp.WindowConfig.create(60, flag_k=6.0))
        self.assertFalse(np.any(high.date_flags & ~low.date_flags))

    def test_residual_series__pinned(self):
        rs = self._series(pinned={'sigma_p': 0.0, 'mu_d': [0.0]})
        self.assertTrue(np.all(np.isfinite(rs.delta)))
        self.assertFalse(np.array_equal(rs.delta, self._series().delta))

    def test_residual_series__zero_returns(self):
        table = make_table(np.zeros((80, 3)), ['A1', 'A2', 'D1'])
        rs = self._series(table, mp.WindowConfig.create(20))
        self.assertTrue(np.all(np.isnan(rs.delta_aggregate)))
        self.assertTrue(np.all(rs.reasons == mp.DEGENERATE))
        self.assertFalse(rs.date_flags.any())
        with self.assertRaises(DataError):
            mp.flag_rate(rs)

    def test_residual_series__weight_mismatch(self):
        with self.assertRaises(ContractError):
            mp.residual_series(self.market.table, self.wc,
                               PortfolioSpec.equal(3), ['D1'])

    def test_residual_series__insufficient_history(self):
        table = make_table(np.ones((30, 3)), ['A1', 'A2', 'D1'])
        with self.assertRaises(DataError):
            self._series(table)

    def test_sum_series__single_date(self):
        rs = self._series()
        date = rs.dates[10]
        period = mp.sum_series(rs, date, date)
        self.assertEqual(1, len(period.dates))
        self.assertTrue(np.array_equal(rs.deviation[10], period.per_pair))

    def test_sum_series__additive(self):
        rs = self._series()
        whole = mp.sum_series(rs, rs.dates[0], rs.dates[99])
        head = mp.sum_series(rs, rs.dates[0], rs.dates[49])
        tail = mp.sum_series(rs, rs.dates[50], rs.dates[99])
        self.assertTrue(np.allclose(head.per_pair + tail.per_pair,
                                    whole.per_pair, rtol=1e-12, atol=1e-15))
        self.assertAlmostEqual(head.total + tail.total, whole.total,
                               places=10)

    def test_sum_series__empty_period(self):
        rs = self._series()
        with self.assertRaises(DataError):
            mp.sum_series(rs, rs.dates[20], rs.dates[10])

    def test_flag_rate__range(self):
        rate = mp.flag_rate(self._series())
        self.assertGreaterEqual(rate, 0.0)
        self.assertLessEqual(rate, 1.0)

    def test_event_rank_correlation(self):
        rs = self._series()
        value = mp.event_rank_correlation(rs, rs.dates[100])
        self.assertGreaterEqual(value, -1.0)
        self.assertLessEqual(value, 1.0)
        with self.assertRaises(DataError):
            mp.event_rank_correlation(rs, '2100-01-01')

    def test_write_residual_series(self):
        rs = self._series()
        names = mp.write_residual_series(rs, self.tmpdir)
        self.assertEqual(['deviations.csv', 'mismatch.csv', 'aggregates.csv'],
                         names)
        with open(os.path.join(self.tmpdir, 'deviations.csv')) as fp:
            lines = fp.read().splitlines()
        self.assertEqual('date,constituent,driver,value,flag,reason',
                         lines[0])
        self.assertEqual(1 + 340 * 2, len(lines))
        with open(os.path.join(self.tmpdir, 'aggregates.csv')) as fp:
            self.assertIn('delta_D1', fp.readline())


class SyntheticEventTest(unittest.TestCase):
    STEPS, ROW = 2300, 1500

    def setUp(self):
        self.ps = PortfolioSpec.equal(2)

    def _series(self, seed, event=None, pit='empirical-rank'):
        market = gen_synthetic_market(2, 1, self.STEPS, seed=seed,
                                      event=event)
        rs = mp.residual_series(market.table, mp.WindowConfig.create(pit=pit),
                                self.ps, ['D1'])
        return market.table, rs

    def _detected(self, pit):
        detected = 0
        for seed in range(10):
            table, rs = self._series(seed, (0, self.ROW, 10), pit)
            flagged = set(rs.dates[rs.date_flags])
            detected += bool(flagged & set(table.dates[self.ROW:self.ROW + 3]))
        return detected

    def test_flag_rate__null(self):
        for seed in range(10):
            _, rs = self._series(seed)
            self.assertLessEqual(mp.flag_rate(rs), 0.01, seed)

    def test_residual_series__event_detected(self):
        self.assertGreaterEqual(self._detected('empirical-rank'), 9)

    def test_residual_series__event_detected_gaussian_fit(self):
        self.assertEqual(10, self._detected('gaussian-fit'))

    def test_event_rank_correlation__event(self):
        correlated = 0
        for seed in range(10):
            table, rs = self._series(seed, (0, self.ROW, 10))
            value = mp.event_rank_correlation(rs, table.dates[self.ROW + 1])
            correlated += value >= 0.2
        self.assertGreaterEqual(correlated, 8)


class ImpliedSolutionTest(unittest.TestCase):
    def setUp(self):
        self.market = gen_synthetic_market(3, 2, 200, seed=2)
        self.ps = PortfolioSpec.create([0.5, 0.3, 0.2])
        self.wc = mp.WindowConfig.create(60)

    def test_implied_solution__variances(self):
        solution = mp.implied_solution(self.market.table, self.wc, self.ps,
                                       ['D1', 'D2'])
        self.assertEqual((3,), solution.x.shape)
        self.assertTrue(np.allclose(solution.variances,
                                    solution.x / self.ps.weights))
        self.assertIsNone(solution.weights)
        self.assertTrue(np.isfinite(solution.residual_norm))

    def test_implied_solution__weights(self):
        solution = mp.implied_solution(self.market.table, self.wc, self.ps,
                                       ['D1', 'D2'],
                                       variances=[0.04, 0.05, 0.06])
        self.assertTrue(np.allclose(solution.weights,
                                    solution.x / [0.04, 0.05, 0.06]))

    def test_implied_solution__period(self):
        dates = self.market.table.dates
        solution = mp.implied_solution(self.market.table, self.wc, self.ps,
                                       ['D1', 'D2'], start=dates[100],
                                       end=dates[119])
        self.assertEqual(3, solution.x.shape[0])
        with self.assertRaises(DataError):
            mp.implied_solution(self.market.table, self.wc, self.ps,
                                ['D1', 'D2'], start=dates[120],
                                end=dates[100])

    def test_implied_solution__variance_count(self):
        with self.assertRaises(ContractError):
            mp.implied_solution(self.market.table, self.wc, self.ps,
                                ['D1', 'D2'], variances=[0.04])
