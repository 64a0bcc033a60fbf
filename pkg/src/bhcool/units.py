"""Unit conventions.

Everything user-facing (configs, tables) is in cyclic units: GHz for
frequencies, MHz for Rabi rates, microseconds for times.  Rate and tensor
formulas are evaluated in angular units, rad/us, so that a rate computed from
them is directly a probability per microsecond.
"""

import numpy as np

TWO_PI = 2.0 * np.pi

#: cyclic GHz -> rad/us
GHZ_TO_RAD_PER_US = TWO_PI * 1e3
#: cyclic MHz -> rad/us
MHZ_TO_RAD_PER_US = TWO_PI


def _scale(x, factor):
    out = np.asarray(x, dtype=float) * factor
    return float(out) if out.ndim == 0 else out


def ghz_to_angular(f_ghz):
    """Cyclic GHz to angular rad/us."""
    return _scale(f_ghz, GHZ_TO_RAD_PER_US)


def angular_to_ghz(w):
    """Angular rad/us to cyclic GHz."""
    return _scale(w, 1.0 / GHZ_TO_RAD_PER_US)


def mhz_to_angular(f_mhz):
    return _scale(f_mhz, MHZ_TO_RAD_PER_US)


def angular_to_mhz(w):
    return _scale(w, 1.0 / MHZ_TO_RAD_PER_US)
