"""Constants used throughout copulapde."""
import os

__version__ = '0.1.0'

CONFIG_DIR = os.path.expanduser('~/.config/copulapde')

DATA_DIR_ENV = 'COPULAPDE_DATA_DIR'

# Clamping tolerances for probability integral transforms and correlations.
EPS_U = 1e-9
EPS_RHO = 1e-6

# Central finite-difference steps.
FD_STEP_FIRST = 1e-6
FD_STEP_SECOND = 1e-4

# Scales a median absolute deviation to a normal standard deviation.
MAD_CONSISTENCY = 1.4826

DEFAULT_WINDOW = 60
MIN_WINDOW = 20
DEFAULT_FLAG_K = 5.0
DEFAULT_MAD_BASELINE = 250
DEFAULT_MAD_MIN_HISTORY = 30
DEFAULT_EVENT_RADIUS = 20
DEFAULT_LEVEL_SPAN = 20
DEFAULT_ANNUALIZATION = 252.0

PIT_METHODS = ('empirical-rank', 'gaussian-fit')
BROADCAST_MODES = ('uniform', 'proportional')
MISSING_POLICIES = ('strict', 'drop-row')

EXHAUSTIVE_LIMIT = 10 ** 5
# Candidate screen in units of 1 / sqrt(window).
DEFAULT_SCREEN = 3.0

PROXY_LABEL = ('delta-loss proxy for common cause screening '
               '(conditional risk-neutral drift residual)')
