"""Bath-induced quantities: cooling rates, Purcell decay, dispersive shifts, brightness.

Rates are returned in 1/us.  A resonant cooling rate per photon,
``16 |M_if|^2 / kappa`` with both in rad/us, is numerically the value a
rate table quotes in MHz: with ``eta`` quoted as ``2 pi x eta_cyc`` MHz and
``kappa_cyc`` in MHz it equals ``16 (2 pi) eta_cyc^2 / kappa_cyc``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import DomainError, ValidationError
from .fock import annihilation_matrices, pair_annihilation_matrices
from .manifolds import ManifoldSystem, manifold_of
from .modes import ModeBasis, modes_from_params
from .units import angular_to_ghz, ghz_to_angular


def sdd(omega, delta_c, kappa):
    """Cavity shot-noise spectral density ``kappa / ((omega - delta_c)^2 + (kappa/2)^2)``."""
    if not np.all(np.asarray(kappa) > 0):
        raise ValidationError("kappa must be positive")
    omega = np.asarray(omega, dtype=float)
    out = kappa / ((omega - delta_c) ** 2 + 0.25 * kappa**2)
    return float(out) if out.ndim == 0 else out


class CoolingRate(NamedTuple):
    rate: float  # 1/us
    valid: bool  # Golden-Rule regime, rate < kappa


@dataclass(frozen=True)
class CoolingTransition:
    initial: str
    final: str
    matrix_element: float  # |<f|O_B|i>|, rad/us
    resonant_detuning: float  # omega_i - omega_f, GHz
    rate_per_photon: float  # 1/us per photon at resonance


def _kappa(manifold, kappa):
    kap = kappa if kappa is not None else manifold.kappa
    if kap is None:
        raise ValidationError("kappa is not known for this manifold; pass it explicitly (rad/us)")
    return kap


def _check_pair(manifold, i, f):
    for s in (i, f):
        if manifold_of(s) != manifold.n_excitations:
            raise DomainError(f"{s} is outside the N={manifold.n_excitations} manifold; O_B conserves excitation number")


def matrix_element(manifold: ManifoldSystem, i: str, f: str) -> float:
    _check_pair(manifold, i, f)
    return abs(manifold.ob_element(f, i))


def cooling_rate(i: str, f: str, nbar: float, delta_c: float, manifold: ManifoldSystem,
                 kappa: Optional[float] = None) -> CoolingRate:
    """Golden-Rule rate ``4 nbar |M_if|^2 S_DD(omega_i - omega_f)`` for ``i -> f``.

    Parameters
    ----------
    i, f : str
        State labels in the same manifold.
    nbar : float
        Drive photon number; energies and eigenstates are Stark shifted to it.
    delta_c : float
        Drive detuning from the cavity, cyclic GHz, positive to the red.
    kappa : float, optional
        Cavity linewidth in rad/us (defaults to the manifold's).
    """
    _check_pair(manifold, i, f)
    if nbar < 0:
        raise ValidationError("nbar must be >= 0")
    kap = _kappa(manifold, kappa)
    if nbar == 0:
        return CoolingRate(0.0, True)
    m = manifold.at_nbar(nbar)
    w = m.energy(i) - m.energy(f)
    rate = 4.0 * nbar * m.ob_element(f, i) ** 2 * sdd(w, ghz_to_angular(delta_c), kap)
    return CoolingRate(float(rate), bool(rate < kap))


def resonant_rate_per_photon(i: str, f: str, manifold: ManifoldSystem, kappa: Optional[float] = None) -> float:
    """``16 |M_if|^2 / kappa`` in 1/us, the small-nbar resonant rate divided by nbar."""
    kap = _kappa(manifold, kappa)
    return float(16.0 * matrix_element(manifold.at_nbar(0.0), i, f) ** 2 / kap)


def cooling_table(manifold: ManifoldSystem, kappa: Optional[float] = None) -> list:
    """All downward transitions of a manifold at zero photons, highest initial state first."""
    m = manifold.at_nbar(0.0)
    out = []
    for a in range(len(m.labels) - 1, -1, -1):
        for b in range(a - 1, -1, -1):
            i, f = m.labels[a], m.labels[b]
            out.append(CoolingTransition(
                i, f, matrix_element(m, i, f), float(angular_to_ghz(m.energy(i) - m.energy(f))),
                resonant_rate_per_photon(i, f, m, kappa)))
    return out


# --------------------------------------------------------------------------- Purcell


@dataclass(frozen=True)
class PurcellTable:
    rates: dict  # (initial, final) -> 1/us
    states: tuple

    def total_rate(self, state: str) -> float:
        return sum(r for (i, _), r in self.rates.items() if i == state)

    def t1(self, state: str) -> float:
        tot = self.total_rate(state)
        return float("inf") if tot == 0 else 1.0 / tot

    def partial_t1(self, state: str, final: str) -> float:
        r = self.rates.get((state, final), 0.0)
        return float("inf") if r == 0 else 1.0 / r


def purcell_rates(upper: ManifoldSystem, lowers, mode_basis: Optional[ModeBasis] = None,
                  kappa: Optional[float] = None) -> PurcellTable:
    """Photon-loss rates ``|<f| a |i>|^2 kappa`` from ``upper`` into each manifold in ``lowers``.

    The bare cavity operator is expanded in dressed modes with the photon part
    dropped, ``a -> sum_l M_0l B_l``.  A manifold two quanta down is reached
    through ``a^2``.
    """
    mb = mode_basis or upper.mode_basis
    if mb is None:
        raise ValidationError("a mode basis is needed for the cavity admixture")
    kap = _kappa(upper, kappa)
    m0 = mb.M[0, 1:]
    up = upper.at_nbar(0.0)
    rates = {}
    for low in lowers:
        low = low.at_nbar(0.0)
        drop = up.n_excitations - low.n_excitations
        if drop == 1:
            op = np.tensordot(m0, annihilation_matrices(up.basis, low.basis), axes=(0, 0))
        elif drop == 2:
            op = np.einsum("l,p,lpki->ki", m0, m0, pair_annihilation_matrices(up.basis, low.basis))
        else:
            raise DomainError("Purcell channels connect manifolds one or two quanta apart")
        amp = low.vectors.T @ op @ up.vectors
        for a, i in enumerate(up.labels):
            for b, f in enumerate(low.labels):
                rates[(i, f)] = float(kap * amp[b, a] ** 2)
    return PurcellTable(rates, up.labels)


# --------------------------------------------------------------------------- dispersive shift


class ChiShift(NamedTuple):
    chi: float  # rad/us, signed
    chi_over_kappa: float
    theta: float  # reflected phase, rad


def chi_shift(state: str, manifold: ManifoldSystem, kappa: Optional[float] = None) -> ChiShift:
    """Cavity pull ``chi = 2 <O_B>`` and reflected phase ``theta = 2 atan(2 chi / kappa)``."""
    kap = _kappa(manifold, kappa)
    m = manifold.at_nbar(0.0)
    v = m.vector(state)
    chi = 2.0 * float(v @ m.o_b @ v)
    return ChiShift(chi, chi / kap, float(2.0 * np.arctan(2.0 * chi / kap)))


def chi_from_phase(theta, kappa=1.0):
    """Inverse phase relation ``chi = kappa/2 tan(theta/2)``."""
    return 0.5 * kappa * np.tan(0.5 * np.asarray(theta, dtype=float))


# --------------------------------------------------------------------------- brightness


def _mode_index(state):
    if manifold_of(state) != 1:
        raise DomainError("brightness is defined for one-excitation states")
    return int(state[1:])


def signed_brightness(state: str, params, flux_map=None, current=None, ref=None):
    """Signed ``sum_j g_j N_Sj`` (GHz) and the dressed vector used, sign-aligned to ``ref``."""
    k = _mode_index(state)
    mb = modes_from_params(params, current, flux_map)
    vec = mb.N[k].copy()
    if ref is not None and vec @ ref < 0:
        vec = -vec
    return float(np.asarray(params.coupling) @ vec[1:]), vec


def brightness(state: str, params, flux_map=None, current=None) -> float:
    """Dipole coupling ``|<S| sum_j g_j b_j^+ |G>|`` of a one-excitation state, GHz."""
    return abs(signed_brightness(state, params, flux_map, current)[0])


@dataclass(frozen=True)
class BrightnessScan:
    state: str
    currents: np.ndarray
    d_sg: np.ndarray
    signed: np.ndarray = field(repr=False)
    dark_points: tuple


def dark_scan(state: str, params, flux_map, currents=None, tol: float = 0.01) -> BrightnessScan:
    """Brightness of ``state`` over a current grid plus bisected zeros (mA, to ``tol``)."""
    currents = np.linspace(2.0, 17.0, 301) if currents is None else np.asarray(currents, dtype=float)
    amps, vecs = [], []
    ref = None
    for c in currents:
        a, ref = signed_brightness(state, params, flux_map, c, ref)
        amps.append(a)
        vecs.append(ref)
    amps = np.array(amps)
    roots = []
    for n in np.flatnonzero(np.sign(amps[:-1]) * np.sign(amps[1:]) < 0):
        lo, hi, a_lo, v_lo = currents[n], currents[n + 1], amps[n], vecs[n]
        a_hi = amps[n + 1]
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            a_mid, v_mid = signed_brightness(state, params, flux_map, mid, v_lo)
            if np.sign(a_mid) == np.sign(a_lo):
                lo, a_lo, v_lo = mid, a_mid, v_mid
            else:
                hi, a_hi = mid, a_mid
        roots.append(float(lo + (hi - lo) * a_lo / (a_lo - a_hi)))
    roots += [float(c) for c, a in zip(currents, amps) if a == 0.0]
    return BrightnessScan(state, currents, np.abs(amps), amps, tuple(sorted(roots)))


# --------------------------------------------------------------------------- drive calibration


class DriveCalibration(NamedTuple):
    chi: float
    nbar_per_power: float


def drive_calibration(stark_slope: float, dephasing_slope: float, kappa: float) -> DriveCalibration:
    """Recover ``chi`` and the photon-number scale from measured slopes versus drive power.

    With Stark shift ``2 chi nbar`` and measurement dephasing ``8 chi^2 nbar / kappa``
    per unit power, ``chi = (kappa/4) dephasing/stark`` and
    ``nbar/power = stark / (2 chi)``.  All frequency arguments share one unit.
    """
    if stark_slope == 0:
        raise ZeroDivisionError("stark_slope is zero")
    if stark_slope < 0 or dephasing_slope <= 0 or kappa <= 0:
        raise ValidationError("slopes and kappa must be positive")
    chi = 0.25 * kappa * dephasing_slope / stark_slope
    return DriveCalibration(chi, stark_slope / (2.0 * chi))
