"""Quadratic cavity+array matrix and its dressed normal modes.

Mode 0 is the cavity-like mode; modes 1..L are qubit-like, stored by
ascending frequency so that mode ``k`` is the one-excitation state ``E_k``.
Printed tables conventionally list the qubit-like modes highest first;
:func:`presentation_order` gives that permutation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegeneracyError, NumericalError, ValidationError
from .params import DeviceParams, FluxMap, qubit_freq_at_flux

DEGENERACY_GHZ = 1e-6  # 1 kHz


@dataclass(frozen=True, eq=False)
class ModeBasis:
    """Dressed normal modes.

    Attributes
    ----------
    lam : ndarray
        Eigenfrequencies, cyclic GHz, index 0 cavity-like.
    M : ndarray
        ``M[j, l]``: bare mode ``j`` (0 = cavity) in terms of dressed mode ``l``.
    N : ndarray
        Inverse (= transpose) of ``M``; rows are dressed modes in the bare basis.
    frame : str
        ``"lab"`` or ``"rotating"``.
    drive_freq : float or None
        Frame frequency (GHz) for the rotating frame.
    kappa, alpha, coupling : optional
        Device data carried along for downstream rate formulas (GHz).
    """

    lam: np.ndarray
    M: np.ndarray
    N: np.ndarray
    frame: str = "lab"
    drive_freq: Optional[float] = None
    kappa: Optional[float] = None
    alpha: Optional[np.ndarray] = None
    coupling: Optional[np.ndarray] = None
    bare_freqs: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_sites(self) -> int:
        return len(self.lam) - 1

    @property
    def labels(self) -> list:
        return ["A"] + [f"E{k}" for k in range(1, self.n_sites + 1)]

    def presented(self):
        """``(lam, M, N)`` permuted into the highest-first presentation order."""
        p = presentation_order(self.n_sites)
        return self.lam[p], self.M[:, p], self.N[p, :]


def presentation_order(L: int) -> list:
    return [0] + list(range(L, 0, -1))


def build_h0(params: DeviceParams, current: Optional[float] = None, flux_map: Optional[FluxMap] = None,
             frame: str = "lab", drive_freq: Optional[float] = None, site_freqs=None) -> np.ndarray:
    """Symmetric (L+1)x(L+1) quadratic matrix in GHz, ordered ``(a, b_1, ..., b_L)``.

    Site frequencies come from ``site_freqs`` if given, else from the flux map
    at ``current``, else the stored zero-flux values.  In the rotating frame
    ``drive_freq`` is subtracted from the diagonal.
    """
    if site_freqs is None:
        if current is not None and flux_map is None:
            raise ValidationError("a current was given but the device has no flux map")
        site_freqs = qubit_freq_at_flux(params, flux_map, current if current is not None else 0.0) \
            if flux_map is not None else np.asarray(params.site_freq_zero_flux)
    w = np.asarray(site_freqs, dtype=float)
    L = params.n_sites
    if w.shape != (L,):
        raise ValidationError("site_freqs: length does not match the device")
    H = np.zeros((L + 1, L + 1))
    H[0, 0] = params.cavity_freq_bare
    H[0, 1:] = H[1:, 0] = params.coupling
    H[1:, 1:] = params.hopping_matrix() + np.diag(w)
    if frame == "rotating":
        if drive_freq is None:
            raise ValidationError("rotating frame needs drive_freq")
        H -= drive_freq * np.eye(L + 1)
    elif frame != "lab":
        raise ValidationError(f"frame must be 'lab' or 'rotating', got {frame!r}")
    return H


def _fix_signs(V):
    idx = np.argmax(np.abs(V), axis=0)
    return V * np.sign(V[idx, np.arange(V.shape[1])])


def diagonalize_modes(h0, frame: str = "lab", drive_freq=None, **extra) -> ModeBasis:
    """Eigen-decompose ``h0`` into a :class:`ModeBasis`.

    The cavity-like mode is the eigenvector with the largest bare-cavity
    weight; each eigenvector's largest component is made positive.
    """
    h0 = np.asarray(h0, dtype=float)
    if not np.allclose(h0, h0.T, rtol=0, atol=1e-12 * max(1.0, np.abs(h0).max())):
        raise ValidationError("h0 must be symmetric")
    e, v = np.linalg.eigh(h0)
    weights = v[0] ** 2
    cav = int(np.argmax(weights))
    if np.sum(weights >= weights[cav] - 1e-12) > 1:
        raise NumericalError("no unique cavity-like mode")
    qubit = [k for k in np.argsort(e) if k != cav]
    gaps = np.diff(e[qubit])
    if len(gaps) and gaps.min() < DEGENERACY_GHZ:
        k = int(np.argmin(gaps))
        raise DegeneracyError(f"modes E{k + 1} and E{k + 2} are degenerate within 1 kHz ({gaps[k] * 1e6:.3g} kHz apart)")
    order = [cav] + qubit
    M = _fix_signs(v[:, order])
    return ModeBasis(lam=e[order], M=M, N=M.T.copy(), frame=frame, drive_freq=drive_freq, **extra)


def modes_from_params(params: DeviceParams, current=None, flux_map=None, frame="lab", drive_freq=None,
                      site_freqs=None) -> ModeBasis:
    """Build and diagonalize in one step, carrying kappa/alpha/g along."""
    h0 = build_h0(params, current, flux_map, frame, drive_freq, site_freqs)
    bare = np.diag(h0)[1:] + (drive_freq if frame == "rotating" else 0.0)
    params.check_dispersive(bare)
    return diagonalize_modes(
        h0, frame, drive_freq,
        kappa=params.cavity_kappa, alpha=np.asarray(params.anharmonicity),
        coupling=np.asarray(params.coupling), bare_freqs=bare,
    )


def stationary_cavity_amplitude(mode_basis: ModeBasis, drive_strength: float, kappa: float):
    """Steady driven amplitude ``A = -eps M00 / (lam0 - i kappa M00 / 2)`` and ``nbar = |A|^2``.

    ``lam0`` is the cavity-like frequency in the drive frame; all three
    quantities share one unit.
    """
    if mode_basis.frame != "rotating":
        raise ValidationError("stationary amplitude needs a rotating-frame mode basis")
    lam0 = mode_basis.lam[0]
    m00 = mode_basis.M[0, 0]
    den = lam0 - 0.5j * kappa * m00
    if den == 0:
        raise NumericalError("resonant drive with zero linewidth: amplitude diverges")
    amp = -drive_strength * m00 / den
    return complex(amp), float(abs(amp) ** 2)


def drive_for_nbar(mode_basis: ModeBasis, nbar: float, kappa: float) -> float:
    """Drive strength giving a stationary photon number ``nbar``."""
    if nbar < 0:
        raise ValidationError("nbar must be >= 0")
    lam0, m00 = mode_basis.lam[0], mode_basis.M[0, 0]
    return float(np.sqrt(nbar) * abs(lam0 - 0.5j * kappa * m00) / abs(m00))
