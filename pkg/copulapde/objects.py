"""copulapde objects."""

from configparser import ConfigParser
import logging
import os
from .const import (BROADCAST_MODES, CONFIG_DIR, DATA_DIR_ENV,
                    DEFAULT_ANNUALIZATION, DEFAULT_FLAG_K,
                    DEFAULT_MAD_BASELINE, DEFAULT_MAD_MIN_HISTORY,
                    DEFAULT_WINDOW, MIN_WINDOW, MISSING_POLICIES, PIT_METHODS)
from .exceptions import ConfigError, ContractError
from .helpers import parse_bool, parse_floats, parse_names, parse_weights
from .market_pipeline import WindowConfig
from .pi_system import PortfolioSpec


class Config(object):
    """Holds configuration for a copulapde run."""

    ATTRIBUTES = {'annualization', 'broadcast', 'constituents', 'debug',
                  'flag_k', 'log_level', 'mad_baseline', 'mad_min_history',
                  'min_periods', 'missing', 'mu_d', 'pit', 'seed', 'sigma_p',
                  'weights', 'window', 'workers'}
    INT_ATTRS = {'mad_baseline', 'mad_min_history', 'min_periods', 'seed',
                 'window', 'workers'}
    FLOAT_ATTRS = {'annualization', 'flag_k', 'sigma_p'}
    CHOICES = {'broadcast': BROADCAST_MODES, 'missing': MISSING_POLICIES,
               'pit': PIT_METHODS}
    LOG_LEVELS = {'CRITICAL', 'ERROR', 'WARNING', 'INFO', 'DEBUG', 'NOTSET'}
    PATH = os.path.join(CONFIG_DIR, 'copulapde.conf')

    @property
    def log_level_int(self):
        """Int value of the log level."""
        return getattr(logging, self.log_level)

    def __init__(self, command, path=None, **overrides):
        """Initialize a config with default, file and flag values."""
        self.command = command
        self.path = path or self.PATH
        self.set_defaults()
        self.load_config_file()
        self.override(**overrides)

    def __repr__(self):
        """String representation of the config."""
        keys = sorted(x for x in self.__dict__ if x in self.ATTRIBUTES)
        arg_fmt = ', '.join(['{0}={1!r}'.format(key, getattr(self, key))
                             for key in keys])
        return 'Config({0!r}, {1})'.format(self.command, arg_fmt)

    def __setattr__(self, attr, value):
        """
        Set new config attribute.

        Validates new attribute values and converts them to their types.

        """
        if attr == 'debug':
            value = parse_bool(value)
            if value:
                # Force log level when in debug mode
                setattr(self, 'log_level', 'DEBUG')
        elif attr == 'constituents':
            value = parse_names(value)
        elif attr == 'weights':
            value = parse_weights(value)
        elif attr == 'mu_d' and value is not None:
            value = parse_floats(value, name='driver drift')
        elif attr == 'log_level' and getattr(self, 'debug', False):
            return  # Don't change level in debug mode
        elif attr == 'log_level' and value is not None:
            value = value.upper()
            if value not in self.LOG_LEVELS:
                raise ConfigError('Invalid log level: {0}'.format(value))
        elif attr in self.CHOICES and value is not None:
            if value not in self.CHOICES[attr]:
                raise ConfigError('Invalid {0}: {1} (expected one of {2})'
                                  .format(attr, value,
                                          ', '.join(self.CHOICES[attr])))
        elif attr in self.INT_ATTRS and value is not None:
            value = self._convert(attr, value, int)
            if attr == 'window' and value < MIN_WINDOW:
                raise ConfigError('Invalid window: {0} (minimum {1})'
                                  .format(value, MIN_WINDOW))
            if attr == 'workers' and value < 1:
                raise ConfigError('Invalid workers: {0}'.format(value))
        elif attr in self.FLOAT_ATTRS and value is not None:
            value = self._convert(attr, value, float)
        super(Config, self).__setattr__(attr, value)

    @staticmethod
    def _convert(attr, value, kind):
        try:
            return kind(value)
        except (TypeError, ValueError):
            raise ConfigError('Invalid {0}: {1!r}'.format(attr, value))

    def as_dict(self):
        """Return the resolved configuration values."""
        return dict((key, getattr(self, key)) for key in sorted(
            self.ATTRIBUTES))

    def load_config_file(self):
        """Load value overrides from configuration file."""
        if not os.path.isfile(self.path):
            return

        config_file = ConfigParser()
        config_file.read(self.path)

        self.override(**dict(config_file.items(
            self.command if config_file.has_section(self.command)
            else 'DEFAULT')))

    def override(self, **overrides):
        """Override the config values passed as keyword arguments."""
        for attr, value in overrides.items():
            if attr in self.ATTRIBUTES and value is not None:
                setattr(self, attr, value)

    def pinned(self):
        """Return the pinned volatility parameters, if any."""
        return {'sigma_p': self.sigma_p, 'mu_d': self.mu_d}

    def portfolio(self, n):
        """Return the PortfolioSpec over ``n`` constituents."""
        if self.weights == 'equal':
            return PortfolioSpec.equal(n)
        return PortfolioSpec.create(parse_floats(self.weights, n, 'weight'))

    def resolve_input(self, path):
        """Return ``path``, falling back to the data directory if unset."""
        data_dir = os.environ.get(DATA_DIR_ENV)
        if os.path.exists(path) or os.path.isabs(path) or not data_dir:
            return path
        return os.path.join(data_dir, path)

    def set_defaults(self):
        """Set the default config values."""
        self.annualization = DEFAULT_ANNUALIZATION
        self.broadcast = 'uniform'
        self.constituents = None
        self.debug = False
        self.flag_k = DEFAULT_FLAG_K
        self.log_level = 'WARNING'
        self.mad_baseline = DEFAULT_MAD_BASELINE
        self.mad_min_history = DEFAULT_MAD_MIN_HISTORY
        self.min_periods = None
        self.missing = 'strict'
        self.mu_d = None
        self.pit = 'empirical-rank'
        self.seed = 0
        self.sigma_p = None
        self.weights = 'equal'
        self.window = DEFAULT_WINDOW
        self.workers = 1

    def window_config(self):
        """Return the WindowConfig, raising ConfigError if inconsistent."""
        try:
            return WindowConfig.create(
                self.window, self.pit, self.min_periods, self.annualization,
                self.flag_k, self.mad_baseline, self.mad_min_history,
                self.broadcast)
        except ContractError as exc:
            raise ConfigError(str(exc))
