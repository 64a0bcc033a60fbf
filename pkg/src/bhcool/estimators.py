"""Inverse problems: spectroscopy fits, decay-rate fits and working-point calibration.

All fits are weighted nonlinear least squares solved with scipy's bounded
trust-region reflective method using central-difference Jacobians.  Before
reporting, the Jacobian at the optimum is checked for rank deficiency.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .dynamics import assemble_rates, propagate
from .errors import ConvergenceError, IdentifiabilityError, ValidationError
from .fock import annihilation_matrices, enumerate_basis
from .modes import build_h0, diagonalize_modes, presentation_order
from .params import DeviceParams, FluxMap, qubit_freq_at_flux

MAX_ITER = 200
XTOL = 1e-10
RANK_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class FitResult:
    names: tuple
    values: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    residuals: np.ndarray = field(repr=False)
    iterations: int = 0
    final_step: float = 0.0
    status: str = ""
    at_lower_bound: tuple = ()
    extra: dict = field(default_factory=dict, repr=False)

    def as_dict(self) -> dict:
        return dict(zip(self.names, map(float, self.values)))

    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def _jacobian(fun, x, rel=1e-6):
    cols = []
    for k in range(len(x)):
        h = rel * max(abs(x[k]), 1.0)
        e = np.zeros_like(x)
        e[k] = h
        cols.append((fun(x + e) - fun(x - e)) / (2 * h))
    return np.column_stack(cols)


def solve_least_squares(fun: Callable, x0, names: Sequence[str], lower=None, upper=None,
                        max_iter: int = MAX_ITER, xtol: float = XTOL, x_scale=None, check_rank: bool = True) -> FitResult:
    """Minimize ``sum fun(x)^2`` and package diagnostics.

    Raises
    ------
    ConvergenceError
        Iteration limit reached; ``trace`` holds the cost history.
    IdentifiabilityError
        Jacobian at the optimum is rank deficient; ``null_direction`` maps
        parameter names to the weakest direction.
    """
    x0 = np.asarray(x0, dtype=float)
    n = len(x0)
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
    trace = []

    def wrapped(x):
        r = np.asarray(fun(x), dtype=float)
        trace.append(float(r @ r))
        return r

    if np.any(x0 < lower) or np.any(x0 > upper):
        x0 = np.clip(x0, lower, upper)
    res = least_squares(wrapped, x0, jac="3-point", bounds=(lower, upper), method="trf",
                        xtol=xtol, ftol=1e-15, gtol=1e-15, max_nfev=max_iter,
                        x_scale=1.0 if x_scale is None else x_scale)
    if res.status == 0:
        raise ConvergenceError(f"no convergence after {res.nfev} iterations (cost {res.cost * 2:.3g})", trace)
    J = _jacobian(fun, res.x)
    s, Vt = np.linalg.svd(J, full_matrices=False)[1:]
    if check_rank and (s[-1] <= RANK_RTOL * s[0] or not np.all(np.isfinite(s))):
        null = dict(zip(names, np.round(Vt[-1], 6)))
        raise IdentifiabilityError(f"parameters are not identifiable; weakest direction {null}", null)
    inv = np.where(s > RANK_RTOL * s[0], 1.0 / np.maximum(s, 1e-300) ** 2, 0.0)
    cov = (Vt.T * inv) @ Vt
    r = res.fun
    step = float(np.max(np.abs(res.x - x0) / np.maximum(np.abs(res.x), 1e-300))) if n else 0.0
    active = tuple(nm for nm, xv, lo in zip(names, res.x, lower) if np.isfinite(lo) and xv <= lo + 1e-12)
    return FitResult(tuple(names), res.x.copy(), cov, float(np.sqrt(r @ r)), r, int(res.nfev), step,
                     res.message, active, {"trace": trace})


# --------------------------------------------------------------------------- spectroscopy


@dataclass(frozen=True)
class SpectroscopyDataset:
    current: np.ndarray  # mA
    label: tuple  # "E1", "F3", ... or "" for unassigned
    freq: np.ndarray  # GHz
    sigma: np.ndarray  # GHz

    def __post_init__(self):
        for name in ("current", "freq", "sigma"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "label", tuple(lb or "" for lb in self.label))
        n = len(self.current)
        if not (len(self.label) == len(self.freq) == len(self.sigma) == n):
            raise ValidationError("spectroscopy columns have different lengths")
        if np.any(self.freq <= 0) or np.any(self.sigma <= 0):
            raise ValidationError("frequencies and uncertainties must be positive")

    def __len__(self):
        return len(self.current)

    @classmethod
    def from_csv(cls, path):
        """Read ``current,label,freq_ghz,sigma_ghz`` (unit suffixes on headers are accepted)."""
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
        head = [h.strip().split(" ")[0].split("[")[0] for h in rows[0]]
        want = ("current", "label", "freq_ghz", "sigma_ghz")
        alias = {"current_ma": "current"}
        head = [alias.get(h, h) for h in head]
        missing = [w for w in want if w not in head]
        if missing:
            raise ValidationError(f"spectroscopy csv: missing column {missing[0]}")
        cols = {w: [r[head.index(w)].strip() for r in rows[1:] if r] for w in want}
        return cls(np.array(cols["current"], float), tuple(cols["label"]), np.array(cols["freq_ghz"], float),
                   np.array(cols["sigma_ghz"], float))



def _param_names(L):
    names = [f"w0{j + 1}" for j in range(L)] + [f"J{j + 1}{j + 2}" for j in range(L - 1)]
    names += [f"J{j + 1}{j + 3}" for j in range(L - 2)] + [f"alpha{j + 1}" for j in range(L)]
    names += [f"B{j + 1}" for j in range(L)] + ["A"]
    return names


def _expand_free(free, L):
    """Expand group names (``w0``, ``J``, ``J13``, ``alpha``, ``B``, ``A``) into parameter names."""
    out = []
    for f in free:
        if f == "w0":
            out += [f"w0{j + 1}" for j in range(L)]
        elif f == "J":
            out += [f"J{j + 1}{j + 2}" for j in range(L - 1)]
        elif f == "Jnnn":
            out += [f"J{j + 1}{j + 3}" for j in range(L - 2)]
        elif f == "alpha":
            out += [f"alpha{j + 1}" for j in range(L)]
        elif f == "B":
            out += [f"B{j + 1}" for j in range(L)]
        else:
            out.append(f)
    return out


class ArrayModel:
    """Bare Bose-Hubbard array (no cavity) versus coil current, with tied parameter groups.

    ``tie_hopping`` makes all nearest-neighbour bonds one parameter ``J``.
    """

    def __init__(self, params: DeviceParams, flux_map: FluxMap, tie_hopping: bool = True):
        self.params, self.flux_map, self.L = params, flux_map, params.n_sites
        self.tie_hopping = tie_hopping
        self._bases = {N: enumerate_basis(self.L, N) for N in (1, 2)}
        self._ops = {}

    def full_vector(self):
        p, fm = self.params, self.flux_map
        return dict(zip(_param_names(self.L), list(p.site_freq_zero_flux) + list(p.hopping_nn) + list(p.hopping_nnn)
                        + list(p.anharmonicity) + list(fm.slope) + [fm.offset]))

    def resolve(self, free):
        names = _expand_free(free, self.L)
        if self.tie_hopping:
            nn = {f"J{j + 1}{j + 2}" for j in range(self.L - 1)}
            names = list(dict.fromkeys("J" if n in nn else n for n in names))
        full = self.full_vector()
        if "J" in names:
            full["J"] = full["J12"]
        unknown = [n for n in names if n not in full]
        if unknown:
            raise ValidationError(f"unknown fit parameter {unknown[0]!r}")
        return names, full

    def with_values(self, full: dict):
        L = self.L
        if self.tie_hopping and "J" in full:
            for j in range(L - 1):
                full[f"J{j + 1}{j + 2}"] = full["J"]
        p = dataclasses.replace(
            self.params,
            site_freq_zero_flux=[full[f"w0{j + 1}"] for j in range(L)],
            hopping_nn=[full[f"J{j + 1}{j + 2}"] for j in range(L - 1)],
            hopping_nnn=[full[f"J{j + 1}{j + 3}"] for j in range(L - 2)],
            anharmonicity=[full[f"alpha{j + 1}"] for j in range(L)],
        )
        fm = dataclasses.replace(self.flux_map, slope=[full[f"B{j + 1}"] for j in range(L)], offset=full["A"])
        return p, fm

    def _operators(self, N):
        ops = self._ops.get(N)
        if ops is None:
            b = self._bases[N]
            A = annihilation_matrices(b)
            hop = np.einsum("lki,pkj->lpij", A, A)
            occ = b.occupations()
            ops = self._ops[N] = (hop, 0.5 * occ * (occ - 1))
        return ops

    def spectrum(self, params: DeviceParams, flux_map: FluxMap, current: float) -> dict:
        """Energies ``E1..``, ``F1..`` (GHz) of the bare array at ``current``."""
        w = qubit_freq_at_flux(params, flux_map, current)
        h = params.hopping_matrix() + np.diag(w)
        alpha = np.asarray(params.anharmonicity)
        out = {}
        for N, pre in ((1, "E"), (2, "F")):
            hop, pairs = self._operators(N)
            H = np.tensordot(h, hop, axes=([0, 1], [0, 1])) + np.diag(pairs @ alpha)
            out.update({f"{pre}{k + 1}": v for k, v in enumerate(np.linalg.eigvalsh(H))})
        return out

    def predict(self, params, flux_map, currents):
        return [self.spectrum(params, flux_map, c) for c in currents]


def assign_lines(data: SpectroscopyDataset, predictions, tie_sigma: float = 1.0, reject_sigma: float = 3.0,
                 reject: bool = True):
    """Nearest-model labels and weights for unassigned rows.

    Rows whose nearest model line is farther than ``reject_sigma`` sigma get
    weight 0; rows whose two nearest lines are within ``tie_sigma`` sigma of
    each other are ambiguous and get weight 1/2.
    """
    labels, weights = [], []
    for k, (lb, f, s) in enumerate(zip(data.label, data.freq, data.sigma)):
        pred = predictions[k]
        if lb:
            labels.append(lb)
            weights.append(1.0)
            continue
        names = list(pred)
        d = np.abs(np.array([pred[n] for n in names]) - f)
        order = np.argsort(d)
        labels.append(names[order[0]])
        w = 1.0
        if reject and d[order[0]] > reject_sigma * s:
            w = 0.0
        elif len(order) > 1 and d[order[1]] - d[order[0]] < tie_sigma * s:
            w = 0.5
        weights.append(w)
    return labels, np.array(weights)


def fit_spectroscopy(data: SpectroscopyDataset, params: DeviceParams, flux_map: FluxMap,
                     free: Sequence[str] = ("w0", "J", "J13"), tie_hopping: bool = True,
                     max_reassign: int = 5) -> FitResult:
    """Fit array parameters to measured one- and two-excitation energies versus current.

    ``free`` lists parameter names or groups (``w0``, ``J``, ``Jnnn``,
    ``alpha``, ``B``) or single names such as ``J13``, ``A``, ``B1``.
    ``J13`` names the next-nearest-neighbour bond of a three-site chain.
    Unlabelled rows are assigned to the nearest model line, reassigned after
    each converged fit until stable.
    """
    model = ArrayModel(params, flux_map, tie_hopping)
    names, full = model.resolve(free)
    if len(data) < len(names):
        raise ValidationError(f"{len(data)} rows cannot determine {len(names)} parameters")
    x0 = np.array([full[n] for n in names])

    def unpack(x):
        f = dict(full)
        f.update(zip(names, x))
        return model.with_values(f)

    labels, weights = assign_lines(data, model.predict(params, flux_map, data.current), reject=False)
    for _ in range(max_reassign):
        def resid(x, labels=labels, weights=weights):
            p, fm = unpack(x)
            pred = model.predict(p, fm, data.current)
            f = np.array([pr[lb] for pr, lb in zip(pred, labels)])
            return np.sqrt(weights) * (f - data.freq) / data.sigma

        def guarded(x):
            try:
                return resid(x)
            except ValidationError:
                return np.full(len(data), 1e6)

        result = solve_least_squares(guarded, x0, names)
        p, fm = unpack(result.values)
        new_labels, new_weights = assign_lines(data, model.predict(p, fm, data.current))
        x0 = result.values
        if new_labels == labels and np.array_equal(new_weights, weights):
            break
        labels, weights = new_labels, new_weights
    result.extra.update(params=p, flux_map=fm, labels=labels, weights=weights)
    return result


def synthesize_spectroscopy(params: DeviceParams, flux_map: FluxMap, currents, labels=None, sigma: float = 0.003,
                            noise: float = 0.0, rng=None, keep_labels: bool = True) -> SpectroscopyDataset:
    """Model energies at ``currents`` with optional Gaussian noise (GHz)."""
    rng = np.random.default_rng(rng)
    model = ArrayModel(params, flux_map)
    rows = []
    for c, pred in zip(currents, model.predict(params, flux_map, currents)):
        for lb in labels or pred:
            rows.append((c, lb if keep_labels else "", pred[lb] + noise * rng.standard_normal()))
    cur, lab, fr = zip(*rows)
    return SpectroscopyDataset(np.array(cur), lab, np.array(fr), np.full(len(rows), sigma))


# --------------------------------------------------------------------------- decay fits


def fit_decay(times, populations, states: Sequence[str], free: Sequence[tuple], fixed: dict | None = None,
              initial: dict | None = None, initial_populations=None, sigma: float = 1.0,
              enforce_natural_model: bool = False) -> FitResult:
    """Fit transition rates of ``dc/dt = Gamma c`` to population time series.

    Parameters
    ----------
    times : (T,) array, us
    populations : (R, T, S) or (T, S) array
        One or several runs; each run starts from its first row unless
        ``initial_populations`` (R, S) is given.
    free : sequence of (i, f)
        Transitions whose rates are fitted (lower bound 0).
    fixed : dict
        ``{(i, f): rate}`` held constant.
    initial : dict
        Starting guesses for free rates (default 0.1/us).
    """
    times = np.asarray(times, dtype=float)
    pops = np.asarray(populations, dtype=float)
    if pops.ndim == 2:
        pops = pops[None]
    states = tuple(states)
    if pops.shape[1:] != (len(times), len(states)):
        raise ValidationError("populations must have shape (runs, times, states)")
    free = [tuple(t) for t in free]
    fixed = dict(fixed or {})
    clash = set(free) & set(fixed)
    if clash:
        raise ValidationError(f"transition {sorted(clash)[0]} is both free and fixed")
    starts = pops[:, 0, :] if initial_populations is None else np.atleast_2d(initial_populations)
    names = [f"{i}->{f}" for i, f in free]
    x0 = np.array([(initial or {}).get(t, 0.1) for t in free])

    def generator(x):
        rates = dict(fixed)
        rates.update(zip(free, np.maximum(x, 0.0)))
        return assemble_rates(states, rates, enforce_natural_model=enforce_natural_model)

    def resid(x):
        rm = generator(x)
        out = [(propagate(rm, p0 / p0.sum(), times).populations - run) / sigma for p0, run in zip(starts, pops)]
        return np.concatenate([o.ravel() for o in out])

    scale = np.maximum(np.abs(x0), 1e-3)
    result = solve_least_squares(resid, x0, names, lower=np.zeros(len(free)), x_scale=scale)
    result.extra["rate_matrix"] = generator(result.values)
    return result


# --------------------------------------------------------------------------- working point


@dataclass(frozen=True, eq=False)
class WorkingPoint:
    params: DeviceParams
    fit: FitResult
    dressed: np.ndarray  # model dressed frequencies (cavity, E1..), GHz
    targets: np.ndarray
    max_residual_khz: float


CALIBRATION_GROUPS = ("sites", "cavity", "hopping", "coupling")


def calibrate_working_point(targets, params: DeviceParams, free: Sequence[str] = ("sites", "cavity"),
                            eigvec_target=None, energy_sigma: float = 1e-5, eigvec_sigma: float = 5e-4,
                            closure_khz: float = 10.0, x0=None) -> WorkingPoint:
    """Invert dressed frequencies of the quadratic model to bare parameters.

    Parameters
    ----------
    targets : sequence
        Dressed cavity-like frequency then ``E1..EL`` (GHz).
    params : DeviceParams
        Supplies the fixed quantities and the starting point; its
        ``site_freq_zero_flux`` is read as the bare frequencies at the bias point.
    free : sequence
        Groups to fit: ``sites``, ``cavity`` (default: the L+1 bare
        frequencies), optionally ``hopping`` and ``coupling``.
    eigvec_target : (L+1, L+1) array, optional
        Dressed-mode matrix ``N`` in highest-first presentation order, fitted
        entrywise (modulo a sign per row) with uncertainty ``eigvec_sigma``.
    closure_khz : float
        Largest allowed energy residual; a larger one raises ConvergenceError.
    """
    L = params.n_sites
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (L + 1,):
        raise ValidationError(f"need {L + 1} target frequencies (cavity first)")
    unknown = set(free) - set(CALIBRATION_GROUPS)
    if unknown:
        raise ValidationError(f"unknown calibration group {sorted(unknown)[0]!r}")
    names, start = [], []
    if "sites" in free:
        names += [f"w{j + 1}" for j in range(L)]
        start += list(params.site_freq_zero_flux)
    if "cavity" in free:
        names.append("wc")
        start.append(params.cavity_freq_bare)
    if "hopping" in free:
        names += [f"Jnn{j + 1}" for j in range(L - 1)] + [f"Jnnn{j + 1}" for j in range(L - 2)]
        start += list(params.hopping_nn) + list(params.hopping_nnn)
    if "coupling" in free:
        names += [f"g{j + 1}" for j in range(L)]
        start += list(params.coupling)
    x_start = np.array(start if x0 is None else x0, dtype=float)
    perm = presentation_order(L)

    def unpack(x):
        v = dict(zip(names, x))
        kw = {}
        if "sites" in free:
            kw["site_freq_zero_flux"] = [v[f"w{j + 1}"] for j in range(L)]
        if "cavity" in free:
            kw["cavity_freq_bare"] = v["wc"]
        if "hopping" in free:
            kw["hopping_nn"] = [v[f"Jnn{j + 1}"] for j in range(L - 1)]
            kw["hopping_nnn"] = [v[f"Jnnn{j + 1}"] for j in range(L - 2)]
        if "coupling" in free:
            kw["coupling"] = [v[f"g{j + 1}"] for j in range(L)]
        return kw

    def spectrum(x):
        kw = unpack(x)
        p = params
        h = build_h0(p, site_freqs=kw.get("site_freq_zero_flux", p.site_freq_zero_flux))
        h[0, 0] = kw.get("cavity_freq_bare", p.cavity_freq_bare)
        if "coupling" in kw:
            h[0, 1:] = h[1:, 0] = kw["coupling"]
        if "hopping" in free:
            T = dataclasses.replace(p, hopping_nn=kw["hopping_nn"], hopping_nnn=kw["hopping_nnn"]).hopping_matrix()
            h[1:, 1:] = T + np.diag(np.diag(h)[1:])
        return diagonalize_modes(h)

    def resid(x):
        mb = spectrum(x)
        r = [(mb.lam - targets) / energy_sigma]
        if eigvec_target is not None:
            Np = mb.N[perm]
            sgn = np.sign(np.sum(Np * eigvec_target, axis=1, keepdims=True))
            r.append(((sgn * Np - eigvec_target) / eigvec_sigma).ravel())
        return np.concatenate(r)

    try:
        fit = solve_least_squares(resid, x_start, names, x_scale=np.full(len(names), 1e-3))
    except ConvergenceError as exc:
        raise ConvergenceError(f"working-point calibration: {exc}", exc.trace) from exc
    mb = spectrum(fit.values)
    worst = float(np.max(np.abs(mb.lam - targets)) * 1e6)
    new = dataclasses.replace(params, **unpack(fit.values))
    wp = WorkingPoint(new, fit, mb.lam, targets, worst)
    if worst > closure_khz:
        err = ConvergenceError(
            f"calibration does not close: worst dressed-frequency residual {worst:.0f} kHz > {closure_khz:g} kHz "
            f"with free groups {tuple(free)}", fit.extra.get("trace"))
        err.working_point = wp
        raise err
    return wp
