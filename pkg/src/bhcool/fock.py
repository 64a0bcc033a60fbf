"""Number-conserving Fock bases and ladder-operator matrices.

States are occupation tuples ``(n_1, ..., n_L)``.  Operators are dense and
restricted to a single excitation-number manifold.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb, sqrt

import numpy as np

from .errors import CapacityError, ValidationError

MAX_STATES = 10**6
HERMITIAN_RTOL = 1e-12

# conventional listing of the three-mode, two-excitation manifold
_THREE_MODE_PAIR_ORDER = ((2, 0, 0), (0, 2, 0), (0, 0, 2), (1, 1, 0), (0, 1, 1), (1, 0, 1))


@dataclass(frozen=True, eq=False)
class FockBasis:
    n_modes: int
    n_excitations: int
    states: tuple
    index: dict = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return len(self.states)

    def occupations(self) -> np.ndarray:
        return np.array(self.states, dtype=float).reshape(self.dim, self.n_modes)


def _lex_descending(L, N):
    if L == 1:
        yield (N,)
        return
    for first in range(N, -1, -1):
        for rest in _lex_descending(L - 1, N - first):
            yield (first,) + rest


def enumerate_basis(L: int, N: int) -> FockBasis:
    """All occupation vectors of ``L`` modes holding ``N`` quanta.

    Ordering is lexicographic descending, except for ``L=3, N=2`` which uses
    the conventional listing ``|200>, |020>, |002>, |110>, |011>, |101>``.
    """
    if L < 1 or N < 0:
        raise ValidationError(f"need L >= 1 and N >= 0, got L={L}, N={N}")
    dim = comb(N + L - 1, N)
    if dim > MAX_STATES:
        raise CapacityError(f"manifold L={L}, N={N} has {dim} states (limit {MAX_STATES})")
    states = _THREE_MODE_PAIR_ORDER if (L, N) == (3, 2) else tuple(_lex_descending(L, N))
    return FockBasis(L, N, states, {s: k for k, s in enumerate(states)})


def annihilation_matrices(basis: FockBasis, lower: FockBasis | None = None) -> np.ndarray:
    """``A[p, k, i] = <k| b_p |i>`` mapping ``basis`` into the manifold one quantum down."""
    if basis.n_excitations == 0:
        raise ValidationError("cannot lower the vacuum manifold")
    if lower is None and "A" in basis._cache:
        return basis._cache["A"]
    key = "A" if lower is None else None
    lower = lower or enumerate_basis(basis.n_modes, basis.n_excitations - 1)
    A = np.zeros((basis.n_modes, lower.dim, basis.dim))
    for i, s in enumerate(basis.states):
        for p, n in enumerate(s):
            if n:
                t = list(s)
                t[p] -= 1
                A[p, lower.index[tuple(t)], i] = sqrt(n)
    if key:
        A.flags.writeable = False
        basis._cache[key] = A
    return A


def pair_annihilation_matrices(basis: FockBasis, lower2: FockBasis | None = None) -> np.ndarray:
    """``P[q, s, k, i] = <k| b_q b_s |i>`` into the manifold two quanta down."""
    if basis.n_excitations < 2:
        raise ValidationError("need at least two quanta to remove a pair")
    if lower2 is None and "P" in basis._cache:
        return basis._cache["P"]
    key = "P" if lower2 is None else None
    L = basis.n_modes
    lower2 = lower2 or enumerate_basis(L, basis.n_excitations - 2)
    P = np.zeros((L, L, lower2.dim, basis.dim))
    for i, s in enumerate(basis.states):
        for q, r in itertools.product(range(L), repeat=2):
            t = list(s)
            amp = sqrt(t[r]) if t[r] else 0.0
            if not amp:
                continue
            t[r] -= 1
            if not t[q]:
                continue
            amp *= sqrt(t[q])
            t[q] -= 1
            P[q, r, lower2.index[tuple(t)], i] = amp
    if key:
        P.flags.writeable = False
        basis._cache[key] = P
    return P


def _check_hermitian_coeffs(h, u):
    scale = np.abs(h).max(initial=0.0)
    if u is not None:
        scale = max(scale, np.abs(u).max(initial=0.0))
    tol = HERMITIAN_RTOL * scale
    if np.abs(h - h.conj().T).max(initial=0.0) > tol:
        raise ValidationError("quadratic coefficients are not Hermitian")
    if u is None:
        return
    checks = (
        ("l<->p", u.transpose(1, 0, 2, 3)),
        ("q<->s", u.transpose(0, 1, 3, 2)),
        ("(lp)<->(qs)*", u.transpose(2, 3, 0, 1).conj()),
    )
    for name, other in checks:
        if np.abs(u - other).max(initial=0.0) > tol:
            raise ValidationError(f"quartic coefficients violate the {name} symmetry")


def build_number_conserving_op(basis: FockBasis, h=None, u=None, check: bool = True) -> np.ndarray:
    """Matrix of ``sum h_lp b_l^+ b_p + 1/2 sum u_lpqs b_l^+ b_p^+ b_q b_s`` on ``basis``.

    Parameters
    ----------
    basis : FockBasis
    h : (L, L) array_like, optional
        Hermitian single-particle coefficients.
    u : (L, L, L, L) array_like, optional
        Two-body coefficients, symmetric in ``l<->p``, ``q<->s`` and with
        ``u_lpqs = conj(u_qslp)``.
    check : bool
        Validate the coefficient symmetries.

    Returns
    -------
    ndarray
        Dense ``(dim, dim)`` matrix in the order of ``basis.states``.
    """
    L, D = basis.n_modes, basis.dim
    h = np.zeros((L, L)) if h is None else np.asarray(h)
    if h.shape != (L, L):
        raise ValidationError(f"h must have shape {(L, L)}, got {h.shape}")
    if u is not None:
        u = np.asarray(u)
        if u.shape != (L,) * 4:
            raise ValidationError(f"u must have shape {(L,) * 4}, got {u.shape}")
    if check:
        _check_hermitian_coeffs(h, u)
    dtype = np.result_type(h, u if u is not None else 0.0, float)
    out = np.zeros((D, D), dtype=dtype)
    if basis.n_excitations >= 1 and np.any(h):
        A = annihilation_matrices(basis)
        out += np.einsum("lp,lki,pkj->ij", h, A, A)
    if basis.n_excitations >= 2 and u is not None and np.any(u):
        P = pair_annihilation_matrices(basis).reshape(L * L, -1, D)
        # <i'| b_l^+ b_p^+ b_q b_s |i> = sum_k <k|b_p b_l|i'> <k|b_q b_s|i>
        UP = np.tensordot(u.reshape(L * L, L * L), P, axes=(1, 0))
        out += 0.5 * np.einsum("aki,akj->ij", P, UP)
    return out


def number_operator(basis: FockBasis) -> np.ndarray:
    return np.diag(basis.occupations().sum(axis=1))


# --------------------------------------------------------------------------- brute-force oracle


@dataclass(frozen=True)
class JointSpectrum:
    """Eigenpairs of the truncated cavity+array Hamiltonian, grouped by total excitation number.

    ``energies`` are cyclic GHz, ``vectors`` columns in the product basis
    ``|n_cavity, n_1, ..., n_L>`` and ``numbers`` the excitation number of
    each eigenpair.
    """

    energies: np.ndarray
    vectors: np.ndarray
    numbers: np.ndarray
    cutoffs: tuple

    def manifold(self, n: int) -> np.ndarray:
        return self.energies[self.numbers == n]


def _ladder(n_levels):
    return np.diag(np.sqrt(np.arange(1, n_levels)), 1)


def exact_joint_diagonalization(params, max_photons: int = 3, max_level_per_site: int = 3, site_freqs=None) -> JointSpectrum:
    """Diagonalize the full cavity + Bose-Hubbard array Hamiltonian on a truncated product space.

    ``max_photons`` and ``max_level_per_site`` are maximal occupation numbers.
    The excitation-number-conserving form is used, so eigenstates are
    grouped by total quanta; sectors with more quanta than the smallest
    truncation are affected by the cutoff.
    """
    if max_photons < 2 or max_level_per_site < 2:
        raise ValidationError("truncations must be >= 2")
    L = params.n_sites
    dims = [max_photons + 1] + [max_level_per_site + 1] * L
    total = int(np.prod(dims))
    if total > 4096:
        raise CapacityError(f"product space of {total} states exceeds the dense limit 4096")
    w = np.asarray(params.site_freq_zero_flux if site_freqs is None else site_freqs, dtype=float)

    def embed(op, k):
        mats = [np.eye(d) for d in dims]
        mats[k] = op
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    lowers = [embed(_ladder(d), k) for k, d in enumerate(dims)]
    nums = [lo.T @ lo for lo in lowers]
    H = params.cavity_freq_bare * nums[0]
    T = params.hopping_matrix()
    for j in range(L):
        b = lowers[j + 1]
        H += w[j] * nums[j + 1] + 0.5 * params.anharmonicity[j] * (b.T @ b.T @ b @ b)
        H += params.coupling[j] * (lowers[0].T @ b + b.T @ lowers[0])
        for k in range(j + 1, L):
            if T[j, k]:
                H += T[j, k] * (b.T @ lowers[k + 1] + lowers[k + 1].T @ b)
    ntot = np.rint(np.diag(sum(nums))).astype(int)
    energies, vectors, numbers = [], [], []
    for n in np.unique(ntot):
        sel = np.flatnonzero(ntot == n)
        e, v = np.linalg.eigh(H[np.ix_(sel, sel)])
        full = np.zeros((total, len(e)))
        full[sel] = v
        energies.append(e)
        vectors.append(full)
        numbers.append(np.full(len(e), n))
    return JointSpectrum(np.concatenate(energies), np.hstack(vectors), np.concatenate(numbers), tuple(dims))
