"""driver_select test file."""

from collections import namedtuple
from copulapde import driver_select as ds
from copulapde.const import PROXY_LABEL
from copulapde.exceptions import ContractError, DataError
from copulapde.ito_simulator import gen_synthetic_market
from copulapde.market_pipeline import WindowConfig, residual_series
from copulapde.pi_system import PortfolioSpec
from itertools import combinations
from mock import patch
import logging
import numpy as np
import pandas as pd
import unittest

Series = namedtuple('Series', ['dates', 'delta_aggregate'])

CANDIDATES = ['D1', 'D2', 'D3', 'D4']
CONSTITUENTS = ['A1', 'A2', 'A3']


def series(values):
    return Series(pd.bdate_range('2001-01-01', periods=len(values)),
                  np.asarray(values, dtype=float))


class SelectionProblemTest(unittest.TestCase):
    def test_create__too_many_subsets(self):
        names = ['D{0}'.format(i) for i in range(30)]
        with self.assertRaises(ContractError) as context:
            ds.SelectionProblem.create(names, 10)
        self.assertIn('greedy-forward', str(context.exception))
        problem = ds.SelectionProblem.create(names, 10,
                                             search='greedy-forward')
        self.assertEqual(10, problem.m)

    def test_create__invalid(self):
        for args, kwargs in ((([], 1), {}), ((['D1', 'D1'], 1), {}),
                             ((['D1'], 0), {}), ((['D1'], 2), {}),
                             ((['D1'], 1), {'search': 'random'}),
                             ((['D1'], 1), {'loss': 'max'})):
            with self.assertRaises(ContractError):
                ds.SelectionProblem.create(*args, **kwargs)


class SelectTest(unittest.TestCase):
    def setUp(self):
        logging.disable(logging.CRITICAL)
        market = gen_synthetic_market(3, 2, 150, seed=5, extra_drivers=2)
        self.table = market.table
        self.wc = WindowConfig.create(40)
        self.ps = PortfolioSpec.equal(3)

    def tearDown(self):
        logging.disable(logging.NOTSET)

    def _select(self, m, **kwargs):
        workers = kwargs.pop('workers', 1)
        problem = ds.SelectionProblem.create(CANDIDATES, m, **kwargs)
        return ds.select(problem, self.table, self.wc, self.ps,
                         constituents=CONSTITUENTS, workers=workers)

    def test_select__all_candidates(self):
        result = self._select(4)
        self.assertEqual(CANDIDATES, result.chosen)
        self.assertEqual(1, len(result.trail))

    def test_select__exhaustive_is_global_minimum(self):
        result = self._select(2, screen=None)
        losses = dict((subset, ds.evaluate_subset(
            subset, self.table, self.wc, self.ps,
            constituents=CONSTITUENTS))
            for subset in combinations(CANDIDATES, 2))
        best = min(losses, key=lambda x: (losses[x], x))
        self.assertEqual(list(best), result.chosen)
        self.assertLessEqual(abs(losses[best] - result.loss),
                             1e-9 * max(1.0, abs(result.loss)))
        self.assertEqual(6, len(result.trail))
        self.assertEqual(set(CANDIDATES), set(result.marginal))

    def test_select__workers(self):
        serial = self._select(2, loss='sum-abs-pair')
        threaded = self._select(2, loss='sum-abs-pair', workers=3)
        self.assertEqual(serial.chosen, threaded.chosen)
        self.assertEqual(serial.loss, threaded.loss)

    def test_select__screen_drops_uncorrelated(self):
        result = self._select(2, screen=2.5)
        self.assertEqual(['D1', 'D2'], result.eligible)
        self.assertEqual(['D1', 'D2'], result.chosen)
        self.assertLess(result.relevance['D3'], result.relevance['D1'])
        data = result.as_dict()
        self.assertEqual(['D1', 'D2'], data['eligible'])
        self.assertEqual(set(CANDIDATES), set(data['relevance']))

    def test_screen_candidates__fills_to_m(self):
        scores = {'D1': 0.5, 'D2': 0.1, 'D3': 0.05}
        self.assertEqual(['D1'], ds.screen_candidates(scores, 1, 0.3))
        self.assertEqual(['D1', 'D2'], ds.screen_candidates(scores, 2, 0.3))
        self.assertEqual(['D1', 'D2', 'D3'],
                         ds.screen_candidates(scores, 1, 0.0))

    @patch('copulapde.driver_select.evaluate_subset')
    def test_select__greedy_matches_exhaustive_when_additive(self, mock_eval):
        costs = {'D1': 0.3, 'D2': 0.1, 'D3': 0.4, 'D4': 0.2}
        mock_eval.side_effect = lambda subset, *args: sum(costs[x]
                                                          for x in subset)
        exhaustive = self._select(2, screen=None)
        greedy = self._select(2, search='greedy-forward', screen=None)
        self.assertEqual(['D2', 'D4'], exhaustive.chosen)
        self.assertEqual(exhaustive.chosen, greedy.chosen)
        self.assertAlmostEqual(exhaustive.loss, greedy.loss)
        self.assertEqual(6, len(greedy.trail))

    def test_select__unknown_candidate(self):
        problem = ds.SelectionProblem.create(['D1', 'D9'], 1)
        with self.assertRaises(DataError):
            ds.select(problem, self.table, self.wc, self.ps)

    def test_as_dict__label(self):
        result = self._select(4)
        data = result.as_dict()
        self.assertEqual(PROXY_LABEL, data['label'])
        self.assertEqual(CANDIDATES, data['chosen'])
        self.assertEqual('mean-abs-delta', data['loss_name'])

    def test_subset_loss__empty_window(self):
        with self.assertRaises(DataError):
            ds.subset_loss(series([np.nan, np.nan]), 'mean-abs-delta')

    def test_subset_loss__values(self):
        rs = series([1.0, -3.0, np.nan])
        self.assertEqual(2.0, ds.subset_loss(rs, 'mean-abs-delta'))
        self.assertEqual(5.0, ds.subset_loss(rs, 'mean-sq-delta'))


class RecoveryTest(unittest.TestCase):
    def setUp(self):
        logging.disable(logging.CRITICAL)

    def tearDown(self):
        logging.disable(logging.NOTSET)

    def test_select__recovers_implanted_drivers(self):
        wc = WindowConfig.create()
        ps = PortfolioSpec.equal(3)
        recovered = 0
        for seed in range(10):
            market = gen_synthetic_market(3, 2, 2000, seed=seed,
                                          extra_drivers=3, noise=0.2)
            problem = ds.SelectionProblem.create(market.drivers, 2)
            result = ds.select(problem, market.table, wc, ps,
                               constituents=market.constituents)
            recovered += result.chosen == sorted(market.implanted)
        self.assertGreaterEqual(recovered, 8)


class RevisionSignalTest(unittest.TestCase):
    def setUp(self):
        logging.disable(logging.CRITICAL)

    def tearDown(self):
        logging.disable(logging.NOTSET)

    def test_revision_signal__stable(self):
        signal = ds.revision_signal(series(np.ones(200)))
        self.assertFalse(signal.signal)
        self.assertEqual([], signal.diagnostics)

    def test_revision_signal__level_shift(self):
        values = np.concatenate([np.ones(150), np.full(50, 2.0)])
        rs = series(values)
        signal = ds.revision_signal(rs)
        self.assertTrue(signal.signal)
        first = signal.diagnostics[0]['date']
        self.assertGreaterEqual(first, rs.dates[150].strftime('%Y-%m-%d'))
        self.assertLessEqual(first, rs.dates[159].strftime('%Y-%m-%d'))

    def test_revision_signal__stationary_null(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            values = np.abs(rng.standard_normal(500))
            signal = ds.revision_signal(series(values))
            self.assertFalse(signal.signal, seed)

    def test_revision_signal__doubling(self):
        rng = np.random.default_rng(3)
        values = 1.0 + 0.05 * rng.standard_normal(300)
        values[200:] *= 2.0
        rs = series(values)
        signal = ds.revision_signal(rs)
        self.assertTrue(signal.signal)
        first = signal.diagnostics[0]['date']
        self.assertGreaterEqual(first, rs.dates[200].strftime('%Y-%m-%d'))
        self.assertLessEqual(first, rs.dates[209].strftime('%Y-%m-%d'))

    def test_revision_signal__null_residual_series(self):
        wc = WindowConfig.create()
        ps = PortfolioSpec.equal(2)
        for seed in range(3):
            market = gen_synthetic_market(2, 1, 1000, seed=seed)
            rs = residual_series(market.table, wc, ps, ['D1'])
            self.assertFalse(ds.revision_signal(rs).signal, seed)

    def test_revision_signal__insufficient_history(self):
        with self.assertRaises(DataError):
            ds.revision_signal(series(np.ones(30)))

    def test_revision_policy__invalid(self):
        with self.assertRaises(ContractError):
            ds.RevisionPolicy.create(quantile=1.0)
        with self.assertRaises(ContractError):
            ds.RevisionPolicy.create(baseline=1)
