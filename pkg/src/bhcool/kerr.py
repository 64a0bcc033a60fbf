"""Quartic tensors in the dressed basis.

With ``M`` the bare-in-dressed matrix and ``alpha`` the site anharmonicities:

* ``mu[l,p,q,s] = sum_j alpha_j M[j,l] M[j,p] M[j,q] M[j,s]`` (qubit self-Kerr)
* ``eta[l,p]    = sum_j alpha_j M[j,0]^2 M[j,l] M[j,p]``      (cross-Kerr)
* ``pi0         = sum_j alpha_j M[j,0]^4``                      (cavity self-Kerr)

Indices run over the qubit-like modes.  Values are angular, rad/us.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .modes import ModeBasis, presentation_order
from .units import angular_to_mhz, ghz_to_angular

_CACHE: "weakref.WeakKeyDictionary[ModeBasis, dict]" = weakref.WeakKeyDictionary()


@dataclass(frozen=True, eq=False)
class KerrTensors:
    mu: np.ndarray
    eta: np.ndarray
    pi0: float

    @property
    def eta_mhz(self) -> np.ndarray:
        """eta as cyclic MHz (the number multiplying 2 pi x MHz)."""
        return angular_to_mhz(self.eta)

    def eta_presented(self) -> np.ndarray:
        """eta in cyclic MHz, rows/columns in highest-first presentation order."""
        p = [k - 1 for k in presentation_order(len(self.eta))[1:]]
        return self.eta_mhz[np.ix_(p, p)]


def compute_kerr(mode_basis: ModeBasis, anharmonicities=None) -> KerrTensors:
    """Evaluate mu, eta and pi0 from a mode basis and site anharmonicities (GHz).

    Results are cached per (mode basis, anharmonicity) pair.
    """
    alpha = mode_basis.alpha if anharmonicities is None else anharmonicities
    if alpha is None:
        raise ValueError("anharmonicities are required")
    alpha = np.asarray(alpha, dtype=float)
    key = tuple(alpha)
    slot = _CACHE.setdefault(mode_basis, {})
    if key in slot:
        return slot[key]
    a = ghz_to_angular(alpha)
    Mb = mode_basis.M[1:]  # bare sites x dressed modes
    Mq, Mc = Mb[:, 1:], Mb[:, 0]
    mu = np.einsum("j,jl,jp,jq,js->lpqs", a, Mq, Mq, Mq, Mq)
    eta = np.einsum("j,jl,jp->lp", a * Mc**2, Mq, Mq)
    pi0 = float(np.sum(a * Mc**4))
    out = KerrTensors(mu=mu, eta=0.5 * (eta + eta.T), pi0=pi0)
    slot[key] = out
    return out
