'''
Some helper constants
'''

ANSI_RST = '\033[0m'
ANSI_RED = '\033[91m'
ANSI_LT_CYAN = '\033[96m'
ANSI_GREEN = '\033[32m'
ANSI_YELLOW = '\033[93m'
ANSI_BROWN = '\033[33m'

SUPPORTED_DIMS = (2, 3)

# Numerical defaults
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 60
BACKTRACK_FACTOR = 0.5
MIN_STEP = 1e-6
CONVEX_FLOOR = 1e-8
LINEAR_RTOL = 1e-12
LINEAR_ACCEPT_RTOL = 1e-10
UNDERFLOW = 1e-14
# growth exponent gap of the section envelope |x|^(2 - tau)
TAU = 0.1

# Run configuration
CONFIG_SCHEMA = 1
LOG_NAME = 'halfma-lab.log'

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILURE = 2

COMMANDS = ('solve', 'verify', 'barrier', 'linear', 'sections', 'liouville', 'suite')

# Per-command defaults, merged under the user's JSON config
DEFAULTS = {
    'solve': {
        'grid': {'dim': 2, 'L': 2.0, 'L_n': 2.0, 'h': 1 / 32},
        'boundary': 'remark',
        'source': {'amplitude': 0.0, 'radius': 0.5, 'sampling': 'node'},
        'quadratic': None,
        'solver': {},
    },
    'verify': {
        'dim': 2,
        'source': {'amplitude': 5.0, 'radius': 0.5, 'sampling': 'node'},
        'quadratic': None,
        'radii': [4.0, 8.0, 16.0, 32.0],
        'cells': 64,
        'h_max': 0.125,
        'levels': [4.0, 8.0, 16.0, 32.0, 64.0],
        'solver': {},
    },
    'barrier': {
        'dim': 2,
        's': 0.5,
        'delta': 0.2,
        'lambda': 0.5,
        'Lambda': 2.0,
        'fields': 20,
        'radii': 160,
        'angles': 64,
        'r_max': 1e8,
    },
    'linear': {
        'dim': 2,
        'spacings': [0.25, 0.125, 0.0625],
        'fields': 20,
        's': 0.5,
        'lambda': 0.5,
        'Lambda': 2.0,
        'R0': 1.0,
        'beta': 0.0,
        'schedule': [4.0, 8.0, 16.0],
        'h': 0.25,
    },
    'sections': {
        'dim': 2,
        'field': 'kernel',
        'quadratic': None,
        'L': 24.0,
        'h': 0.25,
        # the kernel spike x_n/|x|^n reaches 1/h next to the origin
        'levels': [8.0, 16.0, 32.0, 64.0, 128.0],
        'slack': 0.05,
        'source': {'amplitude': 5.0, 'radius': 0.5, 'sampling': 'node'},
        # an empty list skips the comparison-function scaling study
        'xi_levels': [],
        'xi_h': 0.25,
    },
    'liouville': {
        'dim': 2,
        'R': 8.0,
        'h': 0.125,
        'quadratics': [
            [[1.0, 0.0], [0.0, 1.0]],
            [[2.0, 0.0], [0.0, 0.5]],
            [[1.0, 1.0], [1.0, 2.0]],
        ],
        'tolerance': 1e-8,
        'solver': {},
    },
}
