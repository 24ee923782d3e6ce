"""copulapde, risk-neutral PDE residuals of copula driven portfolios.

Usage: copulapde gen --n=N --m=M --steps=STEPS --out=PATH [--extra=K]
                 [--noise=SIGMA] [--jump=SPEC] [--event=SPEC] [options]
       copulapde estimate --in=PATH --drivers=NAMES --out=DIR [options]
       copulapde residuals --in=PATH --drivers=NAMES --out=DIR [options]
       copulapde sum --in=PATH --drivers=NAMES --out=DIR [--start=DATE]
                 [--end=DATE] [options]
       copulapde select --in=PATH --candidates=NAMES --count=M --out=DIR
                 [--search=MODE] [--loss=LOSS] [--start=DATE] [--end=DATE]
                 [--screen=Z] [options]
       copulapde implied --in=PATH --drivers=NAMES --out=DIR
                 [--variances=VALUES] [--start=DATE] [--end=DATE] [options]
       copulapde simulate-check --out=DIR [--n=N] [--m=M] [--paths=P]
                 [options]
       copulapde -h | --help
       copulapde --version

Options:
  -c PATH, --config=PATH  Read configuration from PATH instead of
                          ~/.config/copulapde/copulapde.conf.
  -D, --debug             Enable debugging mode. Enables all logging output.
  --logging=LEVEL         Specify the log level* to output.
  --seed=SEED             Seed of every random number generator.
  --window=LENGTH         Rolling window length in observations.
  --pit=METHOD            Probability integral transform: empirical-rank or
                          gaussian-fit.
  --k=K                   Event flag threshold in robust standard
                          deviations.
  --constituents=NAMES    Comma separated constituent columns. Defaults to
                          every column that is not a driver.
  --weights=WEIGHTS       Portfolio weights: equal or comma separated
                          values.
  --missing=POLICY        Missing value policy: strict or drop-row.
  --workers=N             Worker threads for simulations and searches.
  -h, --help              Show this screen.
  --version               Show the program's version.

Jumps are given as COLUMN:ROW[:SIZE], SIZE in standard deviations of the
column (default 10). An event DRIVER:ROW[:SIZE] shocks a driver at ROW and
the constituents loaded on it at the next row.

The selection screen Z admits candidates whose mean absolute correlation
with the constituents exceeds Z / sqrt(window) (default 3, 0 disables).

* Available log levels:
    https://docs.python.org/3/library/logging.html#logging-levels

"""

from dateutil.parser import isoparse
from docopt import docopt, DocoptExit
import json
import logging
import os
import sys
import numpy as np
from .const import __version__, DEFAULT_SCREEN, PROXY_LABEL
from .driver_select import (LOSSES, SEARCHES, SelectionProblem,
                            revision_signal, select)
from .exceptions import ConfigError, ContractError, CopulaPDEException, \
    DataError, NumericError
from .helpers import dump_json, file_sha256, parse_floats, parse_names, \
    plural
from .ito_simulator import (consistency_params, covariance_check,
                            gen_synthetic_market, ito_consistency_study,
                            ItoParams)
from .market_pipeline import (flag_rate, implied_solution, inject_jump,
                              load_returns, residual_series, rolling_estimates,
                              sum_series, write_residual_series, write_returns)
from .objects import Config
from .pi_system import PortfolioSpec

COMMANDS = ('gen', 'estimate', 'residuals', 'sum', 'select', 'implied',
            'simulate-check')


def _date(value, option):
    if value is None:
        return None
    try:
        return isoparse(value).strftime('%Y-%m-%d')
    except ValueError:
        raise ConfigError('Invalid {0}: {1!r}'.format(option, value))


def _int(value, option, minimum=1):
    try:
        number = int(value)
    except (TypeError, ValueError):
        raise ConfigError('Invalid {0}: {1!r}'.format(option, value))
    if number < minimum:
        raise ConfigError('Invalid {0}: {1} (minimum {2})'.format(
            option, number, minimum))
    return number


def _jump(spec, option='--jump'):
    parts = spec.split(':')
    if len(parts) not in (2, 3) or not parts[0]:
        raise ConfigError('Invalid {0}: {1!r}'.format(option, spec))
    size = parse_floats(parts[2:] or ['10'], 1, option + ' size')[0]
    return parts[0], _int(parts[1], option + ' row', 0), size


def _screen(value):
    if value is None:
        return DEFAULT_SCREEN
    return parse_floats(value, 1, '--screen')[0]


def _number(value):
    return float(value) if np.isfinite(value) else None


class Runner(object):
    """Runs one copulapde command and records its artifacts."""

    def __init__(self, config, args):
        """Initialize a runner for the command named in ``config``."""
        # Configure logging
        self.config = config
        self.args = args
        self.log = logging.getLogger(__name__)
        self.log.setLevel(config.log_level_int)

        # Prepare logging
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(
            '%(asctime)s %(levelname)8s %(message)s', '%Y/%m/%d %H:%M:%S'))
        for existing in list(self.log.handlers):
            self.log.removeHandler(existing)
        self.log.addHandler(handler)
        self.log.info('Logging enabled at level {0}'.format(config.log_level))

        self.inputs = {}
        self.outputs = []

    @property
    def out(self):
        """Return the --out path."""
        return self.args['--out']

    def _constituents(self, table, drivers):
        constituents = self.config.constituents or [
            x for x in table.columns if x not in drivers]
        overlap = [x for x in constituents if x in drivers]
        if overlap:
            raise ConfigError('Columns are both constituents and drivers: {0}'
                              .format(', '.join(overlap)))
        if not constituents:
            raise ConfigError('No constituent columns')
        return constituents

    def _drivers(self, option='--drivers'):
        drivers = parse_names(self.args[option])
        if not drivers:
            raise ConfigError('No drivers given with {0}'.format(option))
        return drivers

    def _load(self):
        path = self.config.resolve_input(self.args['--in'])
        table = load_returns(path, self.config.missing)
        self.inputs[path] = file_sha256(path)
        self.log.info('Loaded {0!r} from {1}'.format(table, path))
        return table

    def _portfolio(self, n):
        try:
            return self.config.portfolio(n)
        except ContractError as exc:
            raise ConfigError(str(exc))

    def _write(self, name, data):
        path = os.path.join(self.out, name)
        dump_json(path, data)
        self.outputs.append(name)
        return path

    def manifest(self, directory, extra=None):
        """Write manifest.json into ``directory`` and return its path."""
        data = {'command': self.config.command, 'version': __version__,
                'config': self.config.as_dict(), 'inputs': self.inputs,
                'outputs': self.outputs}
        data.update(extra or {})
        return dump_json(os.path.join(directory, 'manifest.json'), data)

    def run(self):
        """Run the configured command."""
        command = self.config.command
        method = getattr(self, 'run_' + command.replace('-', '_'))
        self.log.debug('Running {0} with {1!r}'.format(command, self.config))
        extra, failure = method()
        directory = (os.path.dirname(os.path.abspath(self.out))
                     if command == 'gen' else self.out)
        self.manifest(directory, extra)
        if failure:
            raise NumericError(failure)

    def run_gen(self):
        """Generate a synthetic market with known common drivers."""
        n = _int(self.args['--n'], '--n')
        m = _int(self.args['--m'], '--m')
        steps = _int(self.args['--steps'], '--steps', 2)
        extra = _int(self.args['--extra'] or 0, '--extra', 0)
        noise = parse_floats(self.args['--noise'] or '0.2', 1, 'noise')[0]
        params = ItoParams.create(n, m, seed=self.config.seed)
        event = None
        if self.args['--event']:
            name, row, size = _jump(self.args['--event'], '--event')
            names = ['D{0}'.format(j + 1) for j in range(m + extra)]
            if name not in names:
                raise ConfigError('Unknown event driver: {0}'.format(name))
            event = (names.index(name), row, size)
        try:
            market = gen_synthetic_market(n, m, steps, params,
                                          seed=self.config.seed,
                                          extra_drivers=extra, noise=noise,
                                          event=event)
        except ContractError as exc:
            raise ConfigError(str(exc))
        table = market.table
        jump = None
        if self.args['--jump']:
            column, row, size = _jump(self.args['--jump'])
            if row >= len(table):
                raise ConfigError('Jump row {0} is beyond {1}'.format(
                    row, plural(len(table), 'date')))
            table = inject_jump(table, column, row, size)
            jump = {'column': column, 'row': row, 'size': size,
                    'date': table.dates[row].strftime('%Y-%m-%d')}
        write_returns(table, self.out)
        self.outputs.append(os.path.basename(self.out))
        return {'truth': {'constituents': market.constituents,
                          'drivers': market.drivers,
                          'implanted': market.implanted,
                          'loadings': market.loadings.tolist(),
                          'rho': market.rho.tolist(), 'jump': jump,
                          'event': self.args['--event']}}, None

    def run_estimate(self):
        """Write the rolling window estimates."""
        table = self._load()
        drivers = self._drivers()
        constituents = self._constituents(table, drivers)
        est = rolling_estimates(table, self.config.window_config(),
                                constituents, drivers)
        if not len(est.dates):
            raise DataError('Insufficient history: no date has a full window')
        self._write('estimates.json', {
            'dates': list(est.dates.strftime('%Y-%m-%d')),
            'constituents': est.constituents, 'drivers': est.drivers,
            'u': est.u.tolist(), 'd': est.d.tolist(),
            'rho': np.where(est.undefined, None, est.rho).tolist(),
            'mu_a': est.mu_a.tolist(), 'sigma_a': est.sigma_a.tolist(),
            'mu_D': est.mu_D.tolist(), 'sigma_D': est.sigma_D.tolist(),
            'Sigma_D': est.Sigma_D.tolist()})
        return {'skipped': len(est.skipped)}, None

    def _residuals(self):
        table = self._load()
        drivers = self._drivers()
        constituents = self._constituents(table, drivers)
        return residual_series(table, self.config.window_config(),
                               self._portfolio(len(constituents)), drivers,
                               constituents, pinned=self.config.pinned())

    def run_residuals(self):
        """Write the residual series and its event flags."""
        rs = self._residuals()
        if not np.isfinite(rs.delta_aggregate).any():
            raise DataError('No date has a defined residual')
        self.outputs.extend(write_residual_series(rs, self.out))
        flagged = rs.dates[rs.date_flags].strftime('%Y-%m-%d')
        return {'flag_rate': flag_rate(rs),
                'flagged_dates': list(flagged)}, None

    def run_sum(self):
        """Write the per-pair sums of the deviations over a period."""
        rs = self._residuals()
        summed = sum_series(rs, _date(self.args['--start'], '--start'),
                            _date(self.args['--end'], '--end'))
        per_pair = dict(
            (a, dict((d, float(summed.per_pair[i, j]))
                     for j, d in enumerate(rs.drivers)))
            for i, a in enumerate(rs.constituents))
        self._write('sum.json', {
            'per_pair': per_pair, 'total': summed.total,
            'dates': len(summed.dates),
            'start': summed.dates[0].strftime('%Y-%m-%d'),
            'end': summed.dates[-1].strftime('%Y-%m-%d')})
        return {}, None

    def run_select(self):
        """Choose the common drivers minimizing the residual loss."""
        table = self._load()
        candidates = self._drivers('--candidates')
        constituents = self._constituents(table, candidates)
        try:
            problem = SelectionProblem.create(
                candidates, _int(self.args['--count'], '--count'),
                _date(self.args['--start'], '--start'),
                _date(self.args['--end'], '--end'),
                self.args['--search'] or SEARCHES[0],
                self.args['--loss'] or LOSSES[0],
                _screen(self.args['--screen']))
        except ContractError as exc:
            raise ConfigError(str(exc))
        wc = self.config.window_config()
        ps = self._portfolio(len(constituents))
        result = select(problem, table, wc, ps, constituents,
                        self.config.workers)
        data = result.as_dict()
        rs = residual_series(table, wc, ps, result.chosen, constituents)
        try:
            revision = revision_signal(rs)
            data['revision'] = {'signal': revision.signal,
                                'diagnostics': revision.diagnostics}
        except DataError as exc:
            self.log.warning('No revision signal: {0}'.format(exc))
            data['revision'] = None
        self._write('selection.json', data)
        return {'label': PROXY_LABEL}, None

    def run_implied(self):
        """Solve the implied system for variances or weights."""
        table = self._load()
        drivers = self._drivers()
        constituents = self._constituents(table, drivers)
        ps = self._portfolio(len(constituents))
        variances = None
        if self.args['--variances']:
            variances = parse_floats(self.args['--variances'],
                                     len(constituents), 'variance')
        solution = implied_solution(
            table, self.config.window_config(), ps, drivers, constituents,
            _date(self.args['--start'], '--start'),
            _date(self.args['--end'], '--end'), variances)
        solved = 'variances' if variances is None else 'weights'
        values = getattr(solution, solved)
        self._write('implied.json', {
            'constituents': constituents, 'solved_for': solved,
            solved: dict((a, _number(v))
                         for a, v in zip(constituents, values)),
            'x': [float(v) for v in solution.x], 'rank': solution.rank,
            'degenerate': solution.degenerate,
            'residual_norm': _number(solution.residual_norm)})
        return {}, None

    def run_simulate_check(self):
        """Run the simulation checks and record whether they pass."""
        n = _int(self.args['--n'] or 2, '--n')
        m = _int(self.args['--m'] or 2, '--m')
        n_paths = _int(self.args['--paths'] or 64, '--paths')
        seed, workers = self.config.seed, self.config.workers
        study = ito_consistency_study(
            PortfolioSpec.equal(n), consistency_params(n, m, seed),
            levels=3, n_paths=n_paths, workers=workers)
        covariance = covariance_check(n_paths=10 ** 5, seed=seed, bands=3.0,
                                      workers=workers)
        failures = []
        if not 0.8 <= study.slope <= 1.2:
            failures.append('consistency slope {0:.3f}'.format(study.slope))
        if not all(1.6 <= x <= 2.4 for x in study.ratios):
            failures.append('consistency ratios {0}'.format(', '.join(
                '{0:.3f}'.format(x) for x in study.ratios)))
        disagree = [x for x in covariance if not x['agrees']]
        if disagree:
            failures.append('{0} off the closed form'.format(
                plural(disagree, 'covariance')))
        self._write('simulate_check.json', {
            'consistency': {'dts': study.dts, 'errors': study.errors,
                            'ratios': study.ratios, 'slope': study.slope},
            'covariance': covariance, 'passed': not failures})
        failure = None
        if failures:
            failure = 'Simulation checks failed: {0}'.format(
                '; '.join(failures))
        return {'passed': not failures}, failure


def _error(exc, command):
    sys.stderr.write(json.dumps({'error': exc.__class__.__name__,
                                 'message': str(exc),
                                 'command': command}) + '\n')


def main(argv=None):
    """Provide an entry point into copulapde."""
    try:
        args = docopt(__doc__, argv=argv,
                      version='copulapde v{0}'.format(__version__))
    except DocoptExit as exc:
        sys.stderr.write('{0}\n'.format(exc))
        return 2
    command = next(x for x in COMMANDS if args[x])

    try:
        config = Config(command, path=args['--config'], debug=args['--debug'],
                        constituents=args['--constituents'],
                        flag_k=args['--k'], log_level=args['--logging'],
                        missing=args['--missing'], pit=args['--pit'],
                        seed=args['--seed'], weights=args['--weights'],
                        window=args['--window'], workers=args['--workers'])
        Runner(config, args).run()
    except ConfigError as exc:
        _error(exc, command)
        return 2
    except CopulaPDEException as exc:
        _error(exc, command)
        return 1
    except KeyboardInterrupt:
        sys.stderr.write('copulapde interrupted\n')
        return 1
    return 0
