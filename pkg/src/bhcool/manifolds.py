"""Excitation-number manifolds of the dressed qubit-like modes.

A manifold holds ``H_B = sum lam_l n_l + 1/2 sum mu B^+B^+BB``, the readout
operator ``O_B = sum eta_lp B_l^+ B_p``, and the eigenstates of
``H_B + 2 nbar O_B``.  Matrices are angular (rad/us); ``energies_ghz`` gives
cyclic frequencies.  States are labelled ``G`` (N=0), ``E1..`` (N=1),
``F1..`` (N=2) and ``N3_1..`` beyond, in ascending energy at ``nbar = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegeneracyError, DomainError, TrackingError, ValidationError
from .fock import FockBasis, build_number_conserving_op, enumerate_basis
from .kerr import KerrTensors
from .modes import ModeBasis
from .units import GHZ_TO_RAD_PER_US, angular_to_ghz, ghz_to_angular

DEGENERACY = 1e-6 * GHZ_TO_RAD_PER_US  # 1 kHz in rad/us
MIN_OVERLAP = 0.6


def state_prefix(N: int) -> str:
    return {0: "G", 1: "E", 2: "F"}.get(N, f"N{N}_")


def manifold_of(label: str) -> int:
    if label == "G":
        return 0
    if label[0] in "EF" and label[1:].isdigit():
        return 1 if label[0] == "E" else 2
    if label.startswith("N") and "_" in label:
        return int(label[1:label.index("_")])
    raise ValidationError(f"unrecognised state label {label!r}")


@dataclass(frozen=True, eq=False)
class ManifoldSystem:
    basis: FockBasis
    h_b: np.ndarray
    o_b: np.ndarray
    nbar: float
    energies: np.ndarray  # rad/us, label order
    vectors: np.ndarray  # columns, label order
    labels: tuple
    kappa: Optional[float] = None  # rad/us
    mode_basis: Optional[ModeBasis] = field(default=None, repr=False)
    ref_vectors: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_excitations(self) -> int:
        return self.basis.n_excitations

    @property
    def energies_ghz(self) -> np.ndarray:
        return angular_to_ghz(self.energies)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DomainError(f"state {label!r} is not in the N={self.n_excitations} manifold") from None

    def vector(self, label: str) -> np.ndarray:
        return self.vectors[:, self.index(label)]

    def energy(self, label: str) -> float:
        return float(self.energies[self.index(label)])

    def ob_element(self, final: str, initial: str) -> float:
        return float(self.vector(final) @ self.o_b @ self.vector(initial))

    def ob_expectation(self) -> np.ndarray:
        return np.einsum("ik,ij,jk->k", self.vectors, self.o_b, self.vectors)

    def at_nbar(self, nbar: float) -> "ManifoldSystem":
        """Same manifold re-diagonalized at another photon number, labels tracked by overlap."""
        if nbar == self.nbar:
            return self
        return _solve(self.basis, self.h_b, self.o_b, nbar, self.kappa, self.mode_basis, self.ref_vectors)


def lift_ob(basis: FockBasis, eta) -> np.ndarray:
    """Manifold matrix of ``sum eta_lp B_l^+ B_p``."""
    return build_number_conserving_op(basis, np.asarray(eta))


def _solve(basis, h_b, o_b, nbar, kappa, mode_basis, ref=None):
    e0, v0 = np.linalg.eigh(h_b) if ref is None else (None, ref)
    if ref is None:
        gaps = np.diff(e0)
        if len(gaps) and gaps.min() < DEGENERACY:
            k = int(np.argmin(gaps))
            p = state_prefix(basis.n_excitations)
            raise DegeneracyError(f"states {p}{k + 1} and {p}{k + 2} are degenerate within 1 kHz")
        v0 = v0 * np.sign(v0[np.argmax(np.abs(v0), axis=0), np.arange(v0.shape[1])])
    prefix = state_prefix(basis.n_excitations)
    labels = ("G",) if basis.n_excitations == 0 else tuple(f"{prefix}{k + 1}" for k in range(basis.dim))
    if nbar == 0:
        e = np.einsum("ik,ij,jk->k", v0, h_b, v0)
        return ManifoldSystem(basis, h_b, o_b, 0.0, e, v0, labels, kappa, mode_basis, v0)
    e, v = np.linalg.eigh(h_b + 2.0 * nbar * o_b)
    ov = (v0.T @ v) ** 2
    rows, cols = linear_sum_assignment(-ov)
    worst = ov[rows, cols].min()
    if worst < MIN_OVERLAP:
        k = int(rows[np.argmin(ov[rows, cols])])
        raise TrackingError(f"state {labels[k]} lost at nbar={nbar}: best overlap {worst:.3f} < {MIN_OVERLAP}")
    v = v[:, cols]
    v = v * np.sign(np.sum(v * v0, axis=0))
    return ManifoldSystem(basis, h_b, o_b, float(nbar), e[cols], v, labels, kappa, mode_basis, v0)


def build_manifold(mode_basis: ModeBasis, kerr: KerrTensors, N: int, nbar: float = 0.0,
                   kappa: Optional[float] = None) -> ManifoldSystem:
    """Manifold with ``N`` qubit-like excitations, Stark shifted by ``nbar`` photons.

    ``kappa`` (GHz) defaults to the value carried by ``mode_basis``.
    """
    if N < 0:
        raise ValidationError("N must be >= 0")
    if not nbar >= 0:
        raise ValidationError("nbar must be >= 0")
    L = mode_basis.n_sites
    basis = enumerate_basis(L, N)
    lam = ghz_to_angular(mode_basis.lam[1:])
    h_b = build_number_conserving_op(basis, np.diag(lam), kerr.mu)
    o_b = lift_ob(basis, kerr.eta)
    kap = kappa if kappa is not None else mode_basis.kappa
    kap = None if kap is None else ghz_to_angular(kap)
    return _solve(basis, h_b, o_b, float(nbar), kap, mode_basis)


def build_ladder(mode_basis: ModeBasis, kerr: KerrTensors, n_max: int = 2, nbar: float = 0.0) -> dict:
    return {N: build_manifold(mode_basis, kerr, N, nbar) for N in range(n_max + 1)}


def stark_shifted_frequency(manifold: ManifoldSystem, state: str, nbar: float, mode: str = "rediagonalize") -> float:
    """Cyclic frequency (GHz) of ``state`` with ``nbar`` photons in the cavity.

    ``perturbative`` uses ``omega_i + 2 nbar <O_B>_i`` with the zero-photon
    eigenstate; ``rediagonalize`` tracks the eigenvalue of
    ``H_B + 2 nbar O_B`` by overlap.
    """
    base = manifold.at_nbar(0.0)
    if mode == "perturbative":
        v = base.vector(state)
        return float(angular_to_ghz(base.energy(state) + 2.0 * nbar * (v @ base.o_b @ v)))
    if mode == "rediagonalize":
        return float(angular_to_ghz(base.at_nbar(nbar).energy(state)))
    raise ValidationError(f"mode must be 'perturbative' or 'rediagonalize', got {mode!r}")
