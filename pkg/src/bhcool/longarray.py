"""Long uniform chains: tight-binding modes, cavity couplings and cascade cooling.

Modes are ``B_n = sqrt(2/(L+1)) sum_j sin(k_n j) b_j`` with
``k_n = pi n / (L+1)`` and energies ``omega0 + 2 J cos k_n``; ``n = 1`` is
the top of the band for ``J > 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import CapacityError, ValidationError
from .kerr import compute_kerr
from .modes import modes_from_params
from .params import DeviceParams
from .units import angular_to_mhz

MAX_DENSE_L = 30


@dataclass(frozen=True, eq=False)
class TightBindingChain:
    """Uniform chain, all frequencies cyclic GHz."""

    L: int
    omega0: float
    J: float
    g: np.ndarray
    alpha: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.L < 2:
            raise ValidationError("L must be >= 2")
        g = np.broadcast_to(np.asarray(self.g, dtype=float), (self.L,)).copy()
        object.__setattr__(self, "g", g)
        if self.alpha is not None:
            object.__setattr__(self, "alpha", np.broadcast_to(np.asarray(self.alpha, dtype=float), (self.L,)).copy())

    @property
    def k(self) -> np.ndarray:
        return np.pi * np.arange(1, self.L + 1) / (self.L + 1)

    @property
    def mode_energies(self) -> np.ndarray:
        return self.omega0 + 2.0 * self.J * np.cos(self.k)

    def transform(self) -> np.ndarray:
        """``S[n, j] = sqrt(2/(L+1)) sin(k_n j)`` (modes by sites, orthogonal and symmetric)."""
        j = np.arange(1, self.L + 1)
        return np.sqrt(2.0 / (self.L + 1)) * np.sin(np.outer(self.k, j))

    def coolable(self, kappa: float) -> bool:
        """Lowest band gap ``J (pi/(L+1))^2`` exceeds ``kappa``."""
        return bool(abs(self.J) * (np.pi / (self.L + 1)) ** 2 > kappa)

    def to_device(self, cavity_freq: float, kappa: float) -> DeviceParams:
        alpha = self.alpha if self.alpha is not None else np.full(self.L, -0.2)
        return DeviceParams(np.full(self.L, self.omega0), alpha, cavity_freq, kappa, self.g, self.J, 0.0)


def tb_modes(chain: TightBindingChain):
    """``(k, energies, S)`` for the chain."""
    return chain.k, chain.mode_energies, chain.transform()


def xi_couplings(chain: TightBindingChain) -> np.ndarray:
    """Mode-resolved cavity couplings ``xi_m = sqrt(2/(L+1)) sum_j g_j sin(k_m j)`` (GHz)."""
    return chain.transform() @ chain.g


def xi_element(chain: TightBindingChain, alpha, m, n, p, q) -> float:
    """Single entry of the quartic tensor (1-based mode indices)."""
    j = np.arange(1, chain.L + 1)
    s = [np.sin(np.pi * x * j / (chain.L + 1)) for x in (m, n, p, q)]
    a = np.broadcast_to(np.asarray(alpha, dtype=float), (chain.L,))
    return float(2.0 / (chain.L + 1) ** 2 * np.sum(a * s[0] * s[1] * s[2] * s[3]))


def xi_quartic(chain: TightBindingChain, alpha=None) -> np.ndarray:
    """``Xi_mnpq = 2/(L+1)^2 sum_j alpha_j sin sin sin sin`` (units of alpha).

    Chains longer than 30 sites raise CapacityError; use :func:`xi_element`.
    """
    if chain.L > MAX_DENSE_L:
        raise CapacityError(f"dense Xi for L={chain.L} needs {chain.L ** 4} entries; use xi_element")
    a = chain.alpha if alpha is None else np.broadcast_to(np.asarray(alpha, dtype=float), (chain.L,))
    if a is None:
        raise ValidationError("anharmonicities are required")
    s = np.sin(np.outer(chain.k, np.arange(1, chain.L + 1)))
    return 2.0 / (chain.L + 1) ** 2 * np.einsum("j,mj,nj,pj,qj->mnpq", a, s, s, s, s)


@dataclass(frozen=True)
class CascadeStep:
    detuning: float  # GHz
    initial: int  # energy rank, 1 = lowest
    final: int
    drop: float  # GHz
    matrix_element: float  # |eta_if|, cyclic MHz


@dataclass(frozen=True)
class CascadeReport:
    schedule: tuple
    steps: tuple
    visited: tuple  # energy ranks
    energies: tuple  # GHz along the cascade
    final_energy: float
    reached_ground: bool
    coolable: bool
    trapped_state: Optional[int] = None
    note: str = ""


def default_schedule(chain: TightBindingChain, kappa: float) -> np.ndarray:
    """Detunings from ``4J`` down to ``kappa`` in steps of ``kappa/2`` (GHz)."""
    top = 4.0 * abs(chain.J)
    n = int(np.floor((top - kappa) / (0.5 * kappa))) + 1
    return top - 0.5 * kappa * np.arange(n)


def cascade_plan(chain: TightBindingChain, kappa: float, start_state: Optional[int] = None,
                 sweep: Optional[Sequence[float]] = None, cavity_detuning: float = 2.0,
                 rel_tol: float = 1e-9) -> CascadeReport:
    """Greedy single-excitation cascade under a descending cooling-drive sweep.

    At each detuning, transitions ``i -> f`` with
    ``|omega_i - omega_f - Delta_c| < kappa/2`` and a non-vanishing cross-Kerr
    element are taken, largest ``|eta_if|`` first, until
    none fit; then the sweep moves on.  The cross-Kerr elements come from the
    dressed modes of the chain coupled to a cavity ``cavity_detuning`` GHz
    above ``omega0``.

    Parameters
    ----------
    kappa : float
        Cavity linewidth, GHz.
    start_state : int, optional
        Energy rank to start from (1 = band bottom); default the band top.
    """
    if kappa <= 0:
        raise ValidationError("kappa must be positive")
    mb = modes_from_params(chain.to_device(chain.omega0 + cavity_detuning, kappa))
    eta = np.abs(angular_to_mhz(compute_kerr(mb).eta))
    energies = mb.lam[1:]
    L = chain.L
    state = L if start_state is None else int(start_state)
    if not 1 <= state <= L:
        raise ValidationError(f"start_state must lie in 1..{L}")
    sweep = default_schedule(chain, kappa) if sweep is None else np.asarray(sweep, dtype=float)
    floor = rel_tol * eta.max()
    steps, visited, path = [], [state], [float(energies[state - 1])]
    for dc in sweep:
        while True:
            i = state - 1
            drops = energies[i] - energies[:i]
            ok = np.flatnonzero((np.abs(drops - dc) < 0.5 * kappa) & (eta[i, :i] > floor))
            if not len(ok):
                break
            f = int(ok[np.argmax(eta[i, ok])])
            steps.append(CascadeStep(float(dc), state, f + 1, float(drops[f]), float(eta[i, f])))
            state = f + 1
            visited.append(state)
            path.append(float(energies[f]))
    coolable = chain.coolable(kappa)
    note = "" if coolable else f"lowest gap J(pi/(L+1))^2 = {abs(chain.J) * (np.pi / (L + 1)) ** 2 * 1e3:.3g} MHz < kappa; effective temperature ~ kappa"
    trapped = None
    if state != 1:
        trapped = state
        note = (note + "; " if note else "") + (
            f"trapped in rank {state}: repeat the detuning sweep down and up to escape vanishing matrix elements")
    return CascadeReport(tuple(map(float, sweep)), tuple(steps), tuple(visited), tuple(path), path[-1],
                         state == 1, coolable, trapped, note)
