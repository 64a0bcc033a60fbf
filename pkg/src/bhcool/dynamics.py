"""Classical rate-equation dynamics over array eigenstates.

Generators follow ``dc/dt = Gamma c`` with ``Gamma[f, i]`` the rate
``i -> f`` (1/us) and each column summing to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import expm, null_space
from scipy.sparse.csgraph import connected_components

from .errors import DegeneracyError, ValidationError
from .manifolds import manifold_of
from .params import DriveSpec
from .units import mhz_to_angular

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class RateMatrix:
    states: tuple
    gamma: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        n = len(self.states)
        if g.shape != (n, n):
            raise ValidationError(f"generator shape {g.shape} does not match {n} states")
        off = g - np.diag(np.diag(g))
        if np.any(off < 0):
            raise ValidationError("off-diagonal rates must be >= 0")
        if len(set(self.states)) != n:
            raise ValidationError("duplicate state labels")
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "gamma", g)

    def index(self, label):
        try:
            return self.states.index(label)
        except ValueError:
            raise ValidationError(f"unknown state {label!r}") from None

    def rate(self, i, f) -> float:
        return float(self.gamma[self.index(f), self.index(i)])


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    populations: np.ndarray  # (n_times, n_states)
    states: tuple
    protocol: tuple = ()

    def of(self, label) -> np.ndarray:
        return self.populations[:, self.states.index(label)]


@dataclass(frozen=True)
class ProtocolStage:
    drives: tuple = ()
    duration: Optional[float] = None  # us; None means steady state
    name: str = ""


def default_states(L: int = 3) -> tuple:
    """``G``, the ``L`` E-states and the ``L(L+1)/2`` F-states."""
    return ("G",) + tuple(f"E{k}" for k in range(1, L + 1)) + tuple(f"F{k}" for k in range(1, L * (L + 1) // 2 + 1))


def allowed_natural(i: str, f: str) -> bool:
    """Natural-decay fit model: no two-quanta jumps, no intramanifold transitions."""
    return abs(manifold_of(i) - manifold_of(f)) == 1


def table_rates(t1_table: dict, upward: bool = False) -> dict:
    """Convert ``{state: {other: T (us)}}`` into ``{(i, f): rate}``.

    Downward tables give ``state -> other``; upward tables give the
    excitation ``other -> state``.
    """
    out = {}
    for s, row in t1_table.items():
        for o, t in row.items():
            if t is None:
                continue
            if t <= 0:
                raise ValidationError(f"time {t} for {s}/{o} must be positive")
            out[(o, s) if upward else (s, o)] = 1.0 / t
    return out


def coherent_transfer_rate(drive: DriveSpec, factor: float = 0.5) -> float:
    """Symmetric incoherent rate standing in for a resonant Rabi drive, ``factor * Omega_R``."""
    return factor * mhz_to_angular(drive.rabi)


def assemble_rates(states: Sequence[str], natural: dict | None = None, cooling=(), coherent=(),
                   thermal_up: dict | None = None, coherent_factor: float = 0.5,
                   enforce_natural_model: bool = True) -> RateMatrix:
    """Build a generator from rate dictionaries and drives.

    Parameters
    ----------
    natural, thermal_up : dict
        ``{(i, f): rate}`` in 1/us.
    cooling : iterable
        ``(i, f, rate)`` triples, ``CoolingTransition``-like objects with
        ``initial``, ``final`` and ``rate``, or cooling ``DriveSpec`` with a
        direct ``rate``.
    coherent : iterable of DriveSpec
        Coherent drives, inserted as symmetric transfer ``coherent_factor * Omega_R``.
    enforce_natural_model : bool
        Drop natural rates the decay model excludes (two-quanta jumps and
        intramanifold transitions).
    """
    states = tuple(states)
    ix = {s: k for k, s in enumerate(states)}
    G = np.zeros((len(states), len(states)))

    def add(i, f, r):
        if i not in ix or f not in ix:
            raise ValidationError(f"transition {i}->{f} references an unknown state")
        if i == f:
            raise ValidationError(f"self transition {i}->{i}")
        if not r >= 0:
            raise ValidationError(f"rate {i}->{f} is negative ({r})")
        G[ix[f], ix[i]] += r

    for table in (natural or {}), (thermal_up or {}):
        for (i, f), r in table.items():
            if enforce_natural_model and not allowed_natural(i, f):
                continue
            add(i, f, r)
    for c in cooling:
        if isinstance(c, DriveSpec):
            if c.rate is None:
                raise ValidationError("cooling drive needs a resolved rate; use simulate_protocol with a resolver")
            add(*c.pair, c.rate)
        elif isinstance(c, tuple):
            add(*c)
        else:
            add(c.initial, c.final, c.rate)
    for d in coherent:
        if d.kind != "coherent":
            raise ValidationError("coherent list holds a non-coherent drive")
        r = coherent_transfer_rate(d, coherent_factor)
        add(d.pair[0], d.pair[1], r)
        add(d.pair[1], d.pair[0], r)
    G -= np.diag(G.sum(axis=0))
    return RateMatrix(states, G)


def _check_simplex(p0, n):
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (n,) or np.any(p0 < -SIMPLEX_TOL) or abs(p0.sum() - 1) > SIMPLEX_TOL:
        raise ValidationError("initial populations must be a probability vector")
    return p0


def propagate(rate_matrix: RateMatrix, initial, times) -> Trajectory:
    """Populations ``exp(Gamma t) c0`` on ``times`` (us)."""
    p0 = initial
    if isinstance(initial, str):
        p0 = np.zeros(len(rate_matrix.states))
        p0[rate_matrix.index(initial)] = 1.0
    p0 = _check_simplex(p0, len(rate_matrix.states))
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValidationError("times must be >= 0")
    pops = np.array([expm(rate_matrix.gamma * t) @ p0 for t in times]).reshape(len(times), -1)
    pops = np.clip(pops, 0.0, None)
    pops /= pops.sum(axis=1, keepdims=True)
    return Trajectory(times, pops, rate_matrix.states)


def closed_classes(rate_matrix: RateMatrix) -> list:
    """Closed communicating classes of the transition graph (each supports a steady state)."""
    adj = (rate_matrix.gamma.T > 0) & ~np.eye(len(rate_matrix.states), dtype=bool)
    n, lab = connected_components(adj, directed=True, connection="strong")
    out = []
    for c in range(n):
        members = np.flatnonzero(lab == c)
        leaves = adj[np.ix_(members, np.flatnonzero(lab != c))].any()
        if not leaves:
            out.append([rate_matrix.states[k] for k in members])
    return out


def steady_state(rate_matrix: RateMatrix) -> np.ndarray:
    """Normalized kernel vector of the generator."""
    classes = closed_classes(rate_matrix)
    if len(classes) > 1:
        raise DegeneracyError(f"steady state is not unique; closed classes: {classes}")
    K = null_space(rate_matrix.gamma, rcond=1e-12)
    if K.shape[1] != 1:
        raise DegeneracyError(f"generator kernel has dimension {K.shape[1]}")
    v = K[:, 0] / K[:, 0].sum()
    return np.clip(v, 0.0, None) / np.clip(v, 0.0, None).sum()


@dataclass(frozen=True, eq=False)
class StageResult:
    stage: ProtocolStage
    rate_matrix: RateMatrix
    populations: np.ndarray  # final (steady) populations
    trajectory: Optional[Trajectory] = field(default=None, repr=False)


def simulate_protocol(stages: Sequence[ProtocolStage], states: Sequence[str], natural: dict | None = None,
                      thermal_up: dict | None = None, initial=None, cumulative: bool = True,
                      coherent_factor: float = 0.5, resolver: Optional[Callable[[DriveSpec], float]] = None,
                      n_times: int = 201) -> list:
    """Run stages in order.

    Steady-state stages solve the kernel; timed stages propagate from the
    previous stage's final populations.  With ``cumulative`` the drives of
    every earlier stage stay on.  ``resolver`` maps a cooling drive that
    carries ``nbar`` to a rate in 1/us.  An empty protocol returns the
    natural steady state as a single result.
    """
    states = tuple(states)
    stages = list(stages) or [ProtocolStage(name="natural")]
    active = []
    results = []
    p = initial
    for st in stages:
        active = active + list(st.drives) if cumulative else list(st.drives)
        cool, coh = [], []
        for d in active:
            if d.kind == "coherent":
                coh.append(d)
            else:
                rate = d.rate
                if rate is None:
                    if resolver is None:
                        raise ValidationError(f"cooling drive {d.pair} has nbar but no rate resolver")
                    rate = float(resolver(d))
                cool.append((d.pair[0], d.pair[1], rate))
        rm = assemble_rates(states, natural, cool, coh, thermal_up, coherent_factor)
        if st.duration is None:
            pops = steady_state(rm)
            results.append(StageResult(st, rm, pops))
        else:
            start = steady_state(assemble_rates(states, natural, thermal_up=thermal_up)) if p is None else p
            traj = propagate(rm, start, np.linspace(0.0, st.duration, n_times))
            results.append(StageResult(st, rm, traj.populations[-1], traj))
        p = results[-1].populations
    return results
