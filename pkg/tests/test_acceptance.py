"""Acceptance criteria, one test each.

Every test prints a single ``ACCEPTANCE <n> PASS|FAIL: ...`` line and then
asserts the same verdict.  Tolerances are fixed here and never adjusted to
the computed values.
"""

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from bhcool.dissipation import (chi_from_phase, chi_shift, cooling_rate, dark_scan, purcell_rates,
                                resonant_rate_per_photon)
from bhcool.dynamics import assemble_rates, default_states, propagate, simulate_protocol, steady_state
from bhcool.errors import ConvergenceError
from bhcool.estimators import calibrate_working_point, fit_decay, fit_spectroscopy, synthesize_spectroscopy
from bhcool.fock import build_number_conserving_op, enumerate_basis
from bhcool.kerr import compute_kerr
from bhcool.manifolds import build_manifold
from bhcool.modes import modes_from_params
from bhcool.params import DeviceParams, qubit_freq_at_flux
from bhcool.resources import BIAS_CURRENT_MA, load_protocol, natural_rates, protocol_path, reference
from bhcool.longarray import TightBindingChain
from bhcool.units import angular_to_ghz, ghz_to_angular

from conftest import report
from oracles import driven_cavity_transfer_rate, explicit_two_quanta_three_modes

REF = reference()
E_STATES = ("E1", "E2", "E3")
F_STATES = ("F1", "F2", "F3", "F4", "F5", "F6")


def _aligned_rows(A, B):
    """``A`` with each row's sign flipped to best match ``B``."""
    s = np.sign(np.sum(A * B, axis=1, keepdims=True))
    s[s == 0] = 1
    return s * A, s.ravel()


# ---------------------------------------------------------------------------- 1


def test_criterion_01_working_point_closure(nominal_cfg):
    params, fm = nominal_cfg
    targets = [REF["dressed_targets_ghz"]["cavity"], *REF["dressed_targets_ghz"]["E"]]
    start = params.replace(site_freq_zero_flux=qubit_freq_at_flux(params, fm, BIAS_CURRENT_MA))
    note = ""
    try:
        wp = calibrate_working_point(targets, start, ("sites", "cavity"))
    except ConvergenceError as exc:
        wp = exc.working_point
        note = f"calibration did not close ({wp.max_residual_khz / 1e3:.1f} MHz residual); "
    mb = modes_from_params(wp.params)
    _, M, N = mb.presented()
    N_ref, M_ref = np.array(REF["N_matrix"]), np.array(REF["M_matrix"])
    N_al, sgn = _aligned_rows(N, N_ref)
    M_al, _ = _aligned_rows(M.T, M_ref.T)
    eta = compute_kerr(mb).eta_presented() * np.outer(sgn[1:], sgn[1:])
    dN = np.abs(N_al - N_ref).max()
    dM = np.abs(M_al - M_ref.T).max()
    deta = np.abs(eta - np.array(REF["eta_mhz"])).max()
    ok = dN <= 0.002 and dM <= 0.002 and deta <= 0.01
    report(1, ok, f"{note}max|dN|={dN:.4f}, max|dM|={dM:.4f} (tol 0.002), max|d eta|={deta:.4f} MHz (tol 0.01)")
    assert ok


# ---------------------------------------------------------------------------- 2


def test_criterion_02_f_manifold(wp_system):
    _, _, ms = wp_system
    model = ms[2].energies_ghz
    table = np.array(REF["dressed_targets_ghz"]["F"])
    d = (model - table) * 1e3
    ok = np.all(np.abs(d) <= 2.0)
    report(2, ok, "F energy offsets [MHz] " + ", ".join(f"{x:+.1f}" for x in d) + " (tol 2 MHz)")
    assert ok


# ---------------------------------------------------------------------------- 3


def test_criterion_03_cooling_rates(wp_system):
    mb, kerr, ms = wp_system
    theory = REF["cooling_rate_theory"]
    e_bad, f_bad = [], []
    for i, row in theory.items():
        m = ms[1] if i.startswith("E") else ms[2]
        for f, ref in row.items():
            r = resonant_rate_per_photon(i, f, m)
            if ref == 0:
                good = r < 0.05
            elif i.startswith("E"):
                good = abs(r / ref - 1) <= 0.02
            else:
                good = abs(r / ref - 1) <= 0.10
            if not good:
                (e_bad if i.startswith("E") else f_bad).append(f"{i}->{f} {r:.3g} vs {ref}")
    # unit identity on the tabulated cross-Kerr matrix (presented order E3, E2, E1)
    eta = np.array(REF["eta_mhz"])
    pos = {"E3": 0, "E2": 1, "E1": 2}
    kap_mhz = mb.kappa * 1e3
    ident_bad = []
    for i, row in theory.items():
        if not i.startswith("E"):
            continue
        for f, ref in row.items():
            r = 16 * 2 * np.pi * eta[pos[i], pos[f]] ** 2 / kap_mhz
            if abs(r / ref - 1) > 0.02:
                ident_bad.append(f"{i}->{f} {r:.3g} vs {ref}")
    ok = not (e_bad or f_bad or ident_bad)
    detail = (f"E via tabulated eta: {'ok' if not ident_bad else ident_bad}; "
              f"E via pipeline: {'ok' if not e_bad else e_bad}; "
              f"F misses {len(f_bad)}/15" + (f" e.g. {f_bad[:3]}" if f_bad else ""))
    report(3, ok, detail)
    assert ok


# ---------------------------------------------------------------------------- 4


def test_criterion_04_purcell(wp_system):
    _, _, ms = wp_system
    tot = REF["purcell_t1_theory"]["total"]
    e_tab = purcell_rates(ms[1], [ms[0]])
    f_tab = purcell_rates(ms[2], [ms[1], ms[0]])
    e_dev = {s: e_tab.t1(s) / tot[s] - 1 for s in E_STATES}
    f_dev = {s: f_tab.t1(s) / tot[s] - 1 for s in F_STATES}
    ok = all(abs(v) <= 0.05 for v in e_dev.values()) and all(abs(v) <= 0.10 for v in f_dev.values())
    fmt = lambda d: ", ".join(f"{k} {v:+.0%}" for k, v in d.items())  # noqa: E731
    report(4, ok, f"E T1 rel. dev {fmt(e_dev)} (tol 5%); F T1 rel. dev {fmt(f_dev)} (tol 10%)")
    assert ok


# ---------------------------------------------------------------------------- 5


def test_criterion_05_chi(wp_system):
    _, _, ms = wp_system
    ref = REF["chi"]
    dev = {}
    for s in E_STATES + F_STATES:
        m = ms[1] if s.startswith("E") else ms[2]
        dev[s] = abs(chi_shift(s, m).chi_over_kappa) - ref["chi_theory_over_kappa"][s]
    phase = {s: float(chi_from_phase(th)) - ref["chi_exp_over_kappa"][s] for s, th in ref["theta_exp_rad"].items()}
    ok = all(abs(v) <= 0.02 for v in dev.values()) and all(abs(v) <= 0.01 for v in phase.values())
    bad = [f"{k} {v:+.3f}" for k, v in dev.items() if abs(v) > 0.02]
    report(5, ok, f"theory chi/kappa misses: {bad or 'none'} (tol 0.02); "
                  f"phase inversion max dev {max(map(abs, phase.values())):.4f} (tol 0.01)")
    assert ok


# ---------------------------------------------------------------------------- 6


def test_criterion_06_dark_states(nominal_cfg):
    params, fm = nominal_cfg
    grid = np.linspace(2.0, 17.0, 151)
    zeros = {s: dark_scan(s, params, fm, grid).dark_points for s in E_STATES}
    ok = (len(zeros["E3"]) == 0 and len(zeros["E1"]) == 1 and len(zeros["E2"]) == 1
          and abs(zeros["E1"][0] - 11.3) <= 0.7)
    report(6, ok, "zeros [mA] " + "; ".join(f"{s}: {[round(z, 2) for z in zeros[s]]}" for s in E_STATES)
           + " (E1 expected 11.3 +- 0.7)")
    assert ok


# ---------------------------------------------------------------------------- 7


def test_criterion_07_lorentzian_profile(wp_system):
    mb, _, ms = wp_system
    m = ms[1]
    i, f = "E3", "E1"
    kap_ghz = mb.kappa
    nbar = 1.0
    w = angular_to_ghz(m.at_nbar(nbar).energy(i) - m.at_nbar(nbar).energy(f))

    def rate(dc, n=nbar):
        return cooling_rate(i, f, n, dc, m).rate

    peak = rate(w)
    lo = brentq(lambda x: rate(x) - peak / 2, w - 5 * kap_ghz, w)
    hi = brentq(lambda x: rate(x) - peak / 2, w, w + 5 * kap_ghz)
    fwhm_err = (hi - lo) / kap_ghz - 1

    # the second-order Stark term is sizeable by nbar ~ 1, so the drift slope is taken where it is linear
    nbars = np.linspace(0.005, 0.05, 7)
    peaks = []
    for n in nbars:
        guess = angular_to_ghz(m.at_nbar(n).energy(i) - m.at_nbar(n).energy(f))
        res = minimize_scalar(lambda x: -rate(x, n), bracket=(guess - kap_ghz, guess, guess + kap_ghz),
                              tol=1e-12)
        peaks.append(res.x)
    slope = np.polyfit(nbars, peaks, 1)[0]
    expect = angular_to_ghz(chi_shift(i, m).chi - chi_shift(f, m).chi)
    slope_err = slope / expect - 1
    ok = abs(fwhm_err) <= 0.01 and abs(slope_err) <= 0.05
    report(7, ok, f"FWHM/kappa - 1 = {fwhm_err:+.2e} (tol 1%); peak drift {slope * 1e3:.4f} MHz/photon vs "
                  f"chi_i - chi_f = {expect * 1e3:.4f} ({slope_err:+.2%}, tol 5%)")
    assert ok


# ---------------------------------------------------------------------------- 8


def _two_site_manifold():
    p = DeviceParams([4.75, 4.93], [-0.22, -0.20], 7.0, 0.02, [0.12, 0.16], 0.08)
    mb = modes_from_params(p)
    return build_manifold(mb, compute_kerr(mb), 1)


def test_criterion_08_oracles():
    # (a) Golden Rule vs open-system oracle, 2-site chain, Gamma up to kappa/5
    m = _two_site_manifold()
    kap = m.kappa
    worst = 0.0
    for frac in (0.02, 0.05, 0.1, 0.15, 0.19):
        def res_rate(n):
            mm = m.at_nbar(n)
            return cooling_rate("E2", "E1", n, angular_to_ghz(mm.energy("E2") - mm.energy("E1")), m).rate

        nbar = brentq(lambda n: res_rate(n) - frac * kap, 1e-6, 100.0)
        mm = m.at_nbar(nbar)
        w = mm.energy("E2") - mm.energy("E1")
        for off in (-0.25, 0.0, 0.25):
            dc = w + off * kap
            gr = cooling_rate("E2", "E1", nbar, angular_to_ghz(dc), m).rate
            orc = driven_cavity_transfer_rate(m.h_b, m.o_b, mm.vector("E2"), mm.vector("E1"), nbar, dc, kap,
                                              n_photons=5)
            worst = max(worst, abs(gr / orc - 1))
    lindblad_ok = worst <= 0.10

    # (b) fock-space H_B against the explicit 6x6 formula on random inputs
    rng = np.random.default_rng(8)
    basis = enumerate_basis(3, 2)
    dev66 = 0.0
    for _ in range(20):
        lam = rng.normal(size=3)
        u = rng.normal(size=(3, 3, 3, 3))
        u = u + u.transpose(1, 0, 2, 3)
        u = u + u.transpose(0, 1, 3, 2)
        u = u + u.transpose(2, 3, 0, 1)
        H = build_number_conserving_op(basis, np.diag(lam), u)
        dev66 = max(dev66, np.abs(H - explicit_two_quanta_three_modes(lam, u)).max())
    fock_ok = dev66 <= 1e-12

    # (c) tight-binding energies against Fock diagonalization
    dev_tb = 0.0
    for L in (2, 3, 5, 8, 13):
        chain = TightBindingChain(L, 5.0, 0.17, 0.0)
        h = np.diag(np.full(L, 5.0)) + 0.17 * (np.eye(L, k=1) + np.eye(L, k=-1))
        e = np.linalg.eigvalsh(build_number_conserving_op(enumerate_basis(L, 1), h))
        dev_tb = max(dev_tb, np.abs(np.sort(chain.mode_energies) - e).max())
    tb_ok = dev_tb <= 1e-10

    ok = lindblad_ok and fock_ok and tb_ok
    report(8, ok, f"Golden Rule vs Lindblad worst rel. dev {worst:.1%} for Gamma <= 0.19 kappa (tol 10%); "
                  f"6x6 max dev {dev66:.1e}; tight-binding max dev {dev_tb:.1e} GHz")
    assert ok


# ---------------------------------------------------------------------------- 9


def _random_generator(rng, n):
    G = rng.exponential(size=(n, n)) * (rng.random((n, n)) < 0.6)
    np.fill_diagonal(G, 0)
    G += np.diag(np.ones(n - 1), 1) * 0.1 + np.diag(np.ones(n - 1), -1) * 0.1  # irreducible
    return G - np.diag(G.sum(axis=0))


def test_criterion_09_dynamics():
    from bhcool.dynamics import RateMatrix
    rng = np.random.default_rng(9)
    simplex_err = col_err = ss_err = 0.0
    for _ in range(30):
        n = int(rng.integers(2, 10))
        rm = RateMatrix(tuple(f"s{k}" for k in range(n)), _random_generator(rng, n))
        p0 = rng.dirichlet(np.ones(n))
        traj = propagate(rm, p0, np.linspace(0, 5, 11))
        simplex_err = max(simplex_err, np.abs(traj.populations.sum(axis=1) - 1).max(),
                          -min(0.0, traj.populations.min()))
        col_err = max(col_err, np.abs(rm.gamma.sum(axis=0)).max())
        ss = steady_state(rm)
        ss_err = max(ss_err, np.abs(rm.gamma @ ss).max())
    props_ok = simplex_err < 1e-12 and col_err < 1e-12 and ss_err < 1e-10

    proto = load_protocol(protocol_path())
    down, up = natural_rates()
    states = default_states(3)
    res = simulate_protocol(proto["stages"], states, down, up, cumulative=proto["cumulative"],
                            coherent_factor=proto["coherent_factor"])
    f1 = res[-1].populations[states.index("F1")]
    growth = []
    for prev, cur in zip(res[:-1], res[1:]):
        target = states.index(cur.stage.drives[-1].pair[1])
        growth.append(bool(cur.populations[target] > prev.populations[target]))
    thermal = steady_state(assemble_rates(states, down, thermal_up=up))[0]
    ok = props_ok and f1 > 0.6 and all(growth) and abs(thermal - 0.78) <= 0.10
    report(9, ok, f"simplex {simplex_err:.1e}, column sums {col_err:.1e}, steady residual {ss_err:.1e}; "
                  f"F1 = {f1:.3f} (> 0.6); stage targets grow {growth}; thermal G = {thermal:.3f} (0.78 +- 0.10)")
    assert ok


# ---------------------------------------------------------------------------- 10


def test_criterion_10_fit_round_trips(nominal_cfg):
    params, fm = nominal_cfg
    currents = np.linspace(4.0, 16.0, 7)
    truth = {"w0": np.array(params.site_freq_zero_flux), "J": params.hopping_nn[0], "J13": params.hopping_nnn[0]}
    start = params.replace(site_freq_zero_flux=np.array(params.site_freq_zero_flux) + [0.004, -0.003, 0.002],
                           hopping_nn=params.hopping_nn[0] + 0.004, hopping_nnn=params.hopping_nnn[0] - 0.003)

    clean = synthesize_spectroscopy(params, fm, currents)
    fit = fit_spectroscopy(clean, start, fm).as_dict()
    got = np.array([fit["w01"], fit["w02"], fit["w03"], fit["J"], fit["J13"]])
    want = np.array([*truth["w0"], truth["J"], truth["J13"]])
    clean_err = np.abs(got - want).max()

    noisy = synthesize_spectroscopy(params, fm, currents, noise=0.003, rng=10)
    J_err = abs(fit_spectroscopy(noisy, start, fm).as_dict()["J"] - truth["J"])

    rates = {("E1", "G"): 1 / 28.5, ("E2", "G"): 1 / 30.5, ("E2", "E1"): 1 / 40.0}
    states = ("G", "E1", "E2")
    rm = assemble_rates(states, rates, enforce_natural_model=False)
    times = np.linspace(0, 60, 31)
    rng = np.random.default_rng(10)
    runs = np.array([propagate(rm, s, times).populations for s in ("E1", "E2")])
    runs = runs + 0.01 * rng.standard_normal(runs.shape)
    dfit = fit_decay(times, runs, states, list(rates), initial_populations=np.array([[0, 1, 0], [0, 0, 1]]),
                     sigma=0.01)
    decay_err = max(abs(v / r - 1) for v, r in zip(dfit.values, rates.values()))

    ok = clean_err <= 1e-6 and J_err <= 0.003 and decay_err <= 0.10
    report(10, ok, f"noiseless max error {clean_err:.1e} GHz (tol 1e-6); J error under 3 MHz noise "
                   f"{J_err * 1e3:.2f} MHz (tol 3); decay-rate max rel. error {decay_err:.1%} (tol 10%)")
    assert ok
