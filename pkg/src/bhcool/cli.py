"""Command-line front end.

Every table is written as CSV (or JSON with ``--format json``) with a
provenance header and unit-annotated column names.  Exit status is 0 on
success, 1 on invalid input and 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dissipation import chi_shift, cooling_rate, cooling_table, dark_scan, purcell_rates
from .dynamics import ProtocolStage, default_states, simulate_protocol
from .errors import BHCoolError, NumericalError, ValidationError
from .estimators import SpectroscopyDataset, calibrate_working_point, fit_decay, fit_spectroscopy
from .kerr import compute_kerr
from .longarray import TightBindingChain, cascade_plan, xi_couplings
from .manifolds import build_manifold, manifold_of
from .modes import modes_from_params, presentation_order
from .params import config_to_dict, load_config, qubit_freq_at_flux
from .resources import (BIAS_CURRENT_MA, load_protocol, natural_rates, nominal_config_path, protocol_path,
                        reference, working_point_path)
from .units import angular_to_mhz

NAMED_CONFIGS = {"working-point": working_point_path, "nominal": nominal_config_path}
NOMINAL_DEFAULT = ("dark-scan", "fit-spectroscopy")


# --------------------------------------------------------------------------- output


class Table:
    def __init__(self, columns, notes=()):
        self.columns = list(columns)
        self.rows = []
        self.notes = list(notes)

    def add(self, *row):
        self.rows.append(list(row))


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.10g}"
    return str(v)


def _json_cell(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def render(table: Table, provenance: dict, fmt: str) -> str:
    if fmt == "json":
        doc = {"provenance": provenance, "notes": table.notes, "columns": table.columns,
               "rows": [dict(zip(table.columns, map(_json_cell, r))) for r in table.rows]}
        return json.dumps(doc, indent=2) + "\n"
    buf = io.StringIO()
    for k, v in provenance.items():
        buf.write(f"# {k}: {v}\n")
    for n in table.notes:
        buf.write(f"# {n}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for r in table.rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


# --------------------------------------------------------------------------- config handling


def _config_path(name):
    return NAMED_CONFIGS[name]() if name in NAMED_CONFIGS else Path(name)


def _load(args):
    path = _config_path(args.config)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    raw = path.read_bytes()
    params, fm, drives = load_config(path)
    args._config_hash = hashlib.sha256(raw).hexdigest()
    return params, fm, drives


def _modes(args):
    params, fm, _ = _load(args)
    if fm is None and args.current is not None:
        raise ValidationError("--current needs a config with a flux_map")
    current = args.current if args.current is not None else (BIAS_CURRENT_MA if fm is not None else None)
    mb = modes_from_params(params, current, fm)
    return params, mb, compute_kerr(mb)


# --------------------------------------------------------------------------- subcommands


def cmd_modes(args):
    _, mb, kerr = _modes(args)
    L = mb.n_sites
    perm = presentation_order(L)
    bare = ["a"] + [f"b{j}" for j in range(1, L + 1)]
    cols = ["mode [-]", "presentation_index [1]", "lambda [GHz]"]
    cols += [f"N_{b} [1]" for b in bare] + [f"M_{b} [1]" for b in bare]
    if args.kerr:
        cols += [f"eta_E{p} [2pi MHz]" for p in range(1, L + 1)] + ["mu_diag [2pi MHz]"]
    t = Table(cols, [f"pi0 [2pi MHz]: {angular_to_mhz(kerr.pi0):.6g}"] if args.kerr else [])
    for pos, l in enumerate(perm):
        row = [mb.labels[l], pos, mb.lam[l], *mb.N[l], *mb.M[:, l]]
        if args.kerr:
            if l == 0:
                row += [float("nan")] * (L + 1)
            else:
                row += list(kerr.eta_mhz[l - 1]) + [angular_to_mhz(kerr.mu[l - 1, l - 1, l - 1, l - 1])]
        t.add(*row)
    return t


def cmd_spectrum(args):
    _, mb, kerr = _modes(args)
    m = build_manifold(mb, kerr, args.manifold, args.nbar or 0.0)
    names = ["".join(map(str, s)) for s in m.basis.states]
    t = Table(["state [-]", "energy [GHz]", "chi_over_kappa [1]"] + [f"c_{n} [1]" for n in names])
    for k, lb in enumerate(m.labels):
        t.add(lb, m.energies_ghz[k], chi_shift(lb, m).chi_over_kappa, *m.vectors[:, k])
    return t


def cmd_cooling_rates(args):
    _, mb, kerr = _modes(args)
    nbar = args.nbar
    cols = ["initial [-]", "final [-]", "matrix_element [2pi MHz]", "resonant_detuning [GHz]", "rate_per_photon [1/us]"]
    if nbar is not None:
        cols += ["rate [1/us]", "golden_rule_valid [-]"]
    t = Table(cols, ["rate_per_photon = 16 |M_if|^2 / kappa at resonance (the MHz value of rate tables)"])
    for N in (2, 1):
        m = build_manifold(mb, kerr, N)
        for tr in cooling_table(m):
            row = [tr.initial, tr.final, angular_to_mhz(tr.matrix_element), tr.resonant_detuning, tr.rate_per_photon]
            if nbar is not None:
                dc = tr.resonant_detuning if args.detuning is None else args.detuning
                r = cooling_rate(tr.initial, tr.final, nbar, dc, m)
                row += [r.rate, r.valid]
            t.add(*row)
    return t


def cmd_purcell(args):
    _, mb, kerr = _modes(args)
    ms = {N: build_manifold(mb, kerr, N) for N in range(3)}
    t = Table(["state [-]", "freq [GHz]", "T1_total [us]", "T1_to_E1 [us]", "T1_to_E2 [us]", "T1_to_E3 [us]", "T1_to_G [us]"]
              if mb.n_sites == 3 else ["state [-]", "freq [GHz]", "T1_total [us]"])
    tables = {1: purcell_rates(ms[1], [ms[0]]), 2: purcell_rates(ms[2], [ms[1], ms[0]])}
    for N in (1, 2):
        for k, lb in enumerate(ms[N].labels):
            pt = tables[N]
            row = [lb, ms[N].energies_ghz[k], pt.t1(lb)]
            if mb.n_sites == 3:
                row += [pt.partial_t1(lb, f) if N == 2 else float("nan") for f in ("E1", "E2", "E3")]
                row += [pt.partial_t1(lb, "G")]
            t.add(*row)
    return t


def cmd_chi(args):
    _, mb, kerr = _modes(args)
    t = Table(["state [-]", "chi [2pi MHz]", "chi_over_kappa [1]", "theta [rad]"])
    for N in (1, 2):
        m = build_manifold(mb, kerr, N)
        for lb in m.labels:
            c = chi_shift(lb, m)
            t.add(lb, angular_to_mhz(c.chi), c.chi_over_kappa, c.theta)
    return t


def cmd_dark_scan(args):
    params, fm, _ = _load(args)
    if fm is None:
        raise ValidationError("dark-scan needs a config with a flux_map")
    currents = np.linspace(args.start, args.stop, args.points)
    states = args.state or [f"E{k}" for k in range(1, params.n_sites + 1)]
    scans = [dark_scan(s, params, fm, currents) for s in states]
    notes = [f"dark_points {s.state} [mA]: {', '.join(f'{x:.3f}' for x in s.dark_points) or 'none'}" for s in scans]
    t = Table(["current [mA]", "state [-]", "d_SG [GHz]", "signed_amplitude [GHz]"], notes)
    for s in scans:
        for c, d, a in zip(s.currents, s.d_sg, s.signed):
            t.add(c, s.state, d, a)
    return t


def _protocol_inputs(args):
    proto = load_protocol(protocol_path() if args.protocol is None else args.protocol)
    down, up = natural_rates()
    states = default_states(3)
    if not any(d.kind == "cooling" and d.rate is None for st in proto["stages"] for d in st.drives):
        _load(args)
        return proto, down, up, states, None
    _, mb, kerr = _modes(args)
    ms = {N: build_manifold(mb, kerr, N) for N in (1, 2)}

    def resolver(d):
        m = ms[manifold_of(d.pair[0])]
        det = d.detuning
        if det is None:
            det = float(m.energies_ghz[m.index(d.pair[0])] - m.energies_ghz[m.index(d.pair[1])])
        return cooling_rate(d.pair[0], d.pair[1], d.nbar, det, m).rate

    return proto, down, up, states, resolver


def cmd_simulate(args):
    proto, down, up, states, resolver = _protocol_inputs(args)
    dur = args.duration if args.duration is not None else proto["stage_duration_us"]
    stages = [st if st.duration is not None else ProtocolStage(st.drives, dur, st.name) for st in proto["stages"]]
    res = simulate_protocol(stages, states, down, up, cumulative=proto["cumulative"],
                            coherent_factor=proto["coherent_factor"], resolver=resolver, n_times=args.points)
    t = Table(["stage [-]", "time [us]", "state [-]", "population [1]"])
    offset = 0.0
    for r in res:
        tr = r.trajectory
        for k, tm in enumerate(tr.times):
            for j, s in enumerate(tr.states):
                t.add(r.stage.name, offset + tm, s, tr.populations[k, j])
        offset += tr.times[-1]
    return t


def cmd_steady_state(args):
    proto, down, up, states, resolver = _protocol_inputs(args)
    res = simulate_protocol(proto["stages"], states, down, up, cumulative=proto["cumulative"],
                            coherent_factor=proto["coherent_factor"], resolver=resolver)
    t = Table(["stage [-]", "state [-]", "population [1]"])
    for r in res:
        for s, p in zip(states, r.populations):
            t.add(r.stage.name, s, p)
    return t


def cmd_fit_spectroscopy(args):
    params, fm, _ = _load(args)
    if fm is None:
        raise ValidationError("fit-spectroscopy needs a config with a flux_map")
    data = SpectroscopyDataset.from_csv(args.data)
    free = [f.strip() for f in args.free.split(",") if f.strip()]
    best = fit_spectroscopy(data, params, fm, free)
    rng = np.random.default_rng(args.seed)
    for _ in range(args.starts - 1):
        p = params.replace(site_freq_zero_flux=np.array(params.site_freq_zero_flux) * (1 + 0.01 * rng.standard_normal(params.n_sites)))
        try:
            r = fit_spectroscopy(data, p, fm, free)
        except NumericalError:
            continue
        if r.residual_norm < best.residual_norm:
            best = r
    t = Table(["parameter [-]", "value [see unit]", "stderr [see unit]", "unit [-]"],
              [f"residual_norm [1]: {best.residual_norm:.6g}", f"iterations: {best.iterations}"])
    for n, v, e in zip(best.names, best.values, best.stderr()):
        unit = "rad/mA" if n.startswith("B") else "rad" if n == "A" else "GHz"
        t.add(n, v, e, unit)
    return t


def _read_timeseries(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    if not rows:
        raise ValidationError("decay csv is empty")
    key = {k.split(" ")[0].split("[")[0]: k for k in rows[0]}
    for need in ("time_us", "state", "population"):
        if need not in key:
            raise ValidationError(f"decay csv: missing column {need}")
    runs = {}
    for r in rows:
        run = r.get(key.get("run", ""), "0") or "0"
        runs.setdefault(run, []).append((float(r[key["time_us"]]), r[key["state"]].strip(), float(r[key["population"]])))
    times = sorted({t for rs in runs.values() for t, _, _ in rs})
    states = tuple(sorted({s for rs in runs.values() for _, s, _ in rs}, key=lambda s: (manifold_of(s), s)))
    pops = np.zeros((len(runs), len(times), len(states)))
    ti = {t: k for k, t in enumerate(times)}
    si = {s: k for k, s in enumerate(states)}
    for n, rs in enumerate(runs.values()):
        for t, s, p in rs:
            pops[n, ti[t], si[s]] = p
    return np.array(times), pops, states


def cmd_fit_decay(args):
    times, pops, states = _read_timeseries(args.data)
    free = []
    for item in args.free.split(","):
        if "->" not in item:
            raise ValidationError(f"--free entries look like E1->G, got {item!r}")
        i, f = (x.strip() for x in item.split("->"))
        free.append((i, f))
    fixed = {}
    if args.fix_natural:
        down, up = natural_rates()
        fixed = {k: v for k, v in {**down, **up}.items() if k[0] in states and k[1] in states and k not in free}
    res = fit_decay(times, pops, states, free, fixed)
    t = Table(["transition [-]", "rate [1/us]", "stderr [1/us]", "T [us]", "at_lower_bound [-]"],
              [f"residual_norm [1]: {res.residual_norm:.6g}"])
    for n, v, e in zip(res.names, res.values, res.stderr()):
        t.add(n, v, e, 1.0 / v if v > 0 else float("inf"), n in res.at_lower_bound)
    return t


def cmd_long_array(args):
    g = [float(x) for x in args.g.split(",")] if "," in args.g else float(args.g)
    chain = TightBindingChain(args.sites, args.omega0, args.J, g, args.alpha)
    rep = cascade_plan(chain, args.kappa)
    notes = [f"coolable: {rep.coolable}", f"reached_ground: {rep.reached_ground}",
             f"visited (energy rank): {' -> '.join(map(str, rep.visited))}"]
    if rep.note:
        notes.append(f"note: {rep.note}")
    t = Table(["n [-]", "k [rad]", "energy [GHz]", "xi [GHz]"], notes)
    for n, (k, e, x) in enumerate(zip(chain.k, chain.mode_energies, xi_couplings(chain)), start=1):
        t.add(n, k, e, x)
    return t


def cmd_calibrate(args):
    ref = reference()
    targets = [ref["dressed_targets_ghz"]["cavity"], *ref["dressed_targets_ghz"]["E"]]
    if args.targets:
        targets = [float(x) for x in args.targets.split(",")]
    if args.nominal:
        params, fm, _ = load_config(nominal_config_path())
        start = params.replace(site_freq_zero_flux=qubit_freq_at_flux(params, fm, BIAS_CURRENT_MA))
        free = ("sites", "cavity", "hopping", "coupling")
        eig = np.array(ref["N_matrix"])
        args._config_hash = hashlib.sha256(nominal_config_path().read_bytes()).hexdigest()
    else:
        start, _, _ = _load(args)
        free = tuple(args.free.split(","))
        eig = np.array(ref["N_matrix"]) if args.match_eigvecs else None
    wp = calibrate_working_point(targets, start, free, eigvec_target=eig)
    if args.write:
        text = yaml.safe_dump(config_to_dict(wp.params), sort_keys=False)
        head = (f"# Calibrated working point (bias {BIAS_CURRENT_MA:g} mA), generated by: bhcool {' '.join(args._argv)}\n"
                f"# bhcool {__version__}; free groups {','.join(free)}; worst dressed residual {wp.max_residual_khz:.3g} kHz\n"
                f"# site_freq_zero_flux holds the bare site frequencies at the bias point\n")
        Path(args.write).write_text(head + text)
    t = Table(["parameter [-]", "value [see unit]", "unit [-]"], [f"worst_dressed_residual [kHz]: {wp.max_residual_khz:.6g}"])
    for n, v in zip(wp.fit.names, wp.fit.values):
        t.add(n, v, "GHz")
    return t


# --------------------------------------------------------------------------- parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file, or 'working-point' / 'nominal' for the packaged ones "
                                         "(default: nominal for dark-scan and fit-spectroscopy, else working-point)")
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--current", type=float, help="coil current, mA")
    common.add_argument("--nbar", type=float, help="drive photon number")
    common.add_argument("--seed", type=int, default=0)

    ap = argparse.ArgumentParser(prog="bhcool", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"bhcool {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("modes", parents=[common], help="dressed modes lambda, M, N")
    p.add_argument("--kerr", action="store_true", help="append eta rows and mu diagonal")
    p.set_defaults(func=cmd_modes)
    p = sub.add_parser("spectrum", parents=[common], help="manifold energies and eigenvectors")
    p.add_argument("--manifold", type=int, default=2)
    p.set_defaults(func=cmd_spectrum)
    p = sub.add_parser("cooling-rates", parents=[common], help="cooling matrix elements and rates")
    p.add_argument("--detuning", type=float, help="drive detuning from the cavity, GHz (default: each resonance)")
    p.set_defaults(func=cmd_cooling_rates)
    sub.add_parser("purcell", parents=[common], help="Purcell-limited T1 table").set_defaults(func=cmd_purcell)
    sub.add_parser("chi", parents=[common], help="dispersive shifts and reflected phase").set_defaults(func=cmd_chi)
    p = sub.add_parser("dark-scan", parents=[common], help="one-excitation brightness versus current")
    p.add_argument("--state", action="append", help="state label (repeatable; default all E states)")
    p.add_argument("--start", type=float, default=2.0)
    p.add_argument("--stop", type=float, default=17.0)
    p.add_argument("--points", type=int, default=301)
    p.set_defaults(func=cmd_dark_scan)
    for name, func in (("simulate", cmd_simulate), ("steady-state", cmd_steady_state)):
        p = sub.add_parser(name, parents=[common], help=f"{name} of a drive protocol")
        p.add_argument("--protocol", help="protocol file (default: packaged two-excitation stabilization)")
        if name == "simulate":
            p.add_argument("--duration", type=float, help="duration of each stage without one, us")
            p.add_argument("--points", type=int, default=101)
        p.set_defaults(func=func)
    p = sub.add_parser("fit-spectroscopy", parents=[common], help="fit array parameters to line positions")
    p.add_argument("--data", required=True, help="csv: current,label,freq_ghz,sigma_ghz")
    p.add_argument("--free", default="w0,J,J13")
    p.add_argument("--starts", type=int, default=1, help="number of starts (extra ones jittered with --seed)")
    p.set_defaults(func=cmd_fit_spectroscopy)
    p = sub.add_parser("fit-decay", parents=[common], help="fit transition rates to population time series")
    p.add_argument("--data", required=True, help="csv: time_us,state,population[,run]")
    p.add_argument("--free", required=True, help="comma list like F5->E2,F5->E1")
    p.add_argument("--fix-natural", action="store_true", help="hold the packaged natural rates fixed")
    p.set_defaults(func=cmd_fit_decay)
    p = sub.add_parser("long-array", parents=[common], help="tight-binding chain and cascade cooling")
    p.add_argument("--sites", type=int, required=True)
    p.add_argument("--J", type=float, default=0.177, help="hopping, GHz")
    p.add_argument("--omega0", type=float, default=5.0, help="site frequency, GHz")
    p.add_argument("--g", default="0.15", help="coupling GHz, scalar or comma list")
    p.add_argument("--alpha", type=float, default=-0.214, help="anharmonicity, GHz")
    p.add_argument("--kappa", type=float, default=0.010, help="cavity linewidth, GHz")
    p.set_defaults(func=cmd_long_array)
    p = sub.add_parser("calibrate", parents=[common], help="invert dressed frequencies to bare ones")
    p.add_argument("--nominal", action="store_true", help="regenerate the packaged working point")
    p.add_argument("--targets", help="cavity,E1,...,EL dressed frequencies, GHz")
    p.add_argument("--free", default="sites,cavity")
    p.add_argument("--match-eigvecs", action="store_true", help="also fit the reference dressed-mode matrix")
    p.add_argument("--write", help="write the calibrated config here")
    p.set_defaults(func=cmd_calibrate)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    args = ap.parse_args(argv)
    args._argv = argv
    if args.config is None:
        args.config = "nominal" if args.command in NOMINAL_DEFAULT else "working-point"
    args._config_hash = None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            table = args.func(args)
    except (ValidationError, FileNotFoundError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ZeroDivisionError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except BHCoolError as exc:  # pragma: no cover
        print(f"error: {exc}", file=sys.stderr)
        return 2
    prov = {"bhcool": __version__, "command": "bhcool " + " ".join(argv),
            "config_sha256": args._config_hash or "none"}
    text = render(table, prov, args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
