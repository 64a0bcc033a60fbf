import csv

import numpy as np
import pytest

from bhcool.dynamics import assemble_rates, propagate
from bhcool.errors import ConvergenceError, IdentifiabilityError, ValidationError
from bhcool.estimators import (SpectroscopyDataset, assign_lines, calibrate_working_point, fit_decay,
                               fit_spectroscopy, solve_least_squares, synthesize_spectroscopy)
from bhcool.modes import modes_from_params
from bhcool.params import qubit_freq_at_flux
from bhcool.resources import BIAS_CURRENT_MA, natural_rates, reference

CURRENTS = np.linspace(4.0, 16.0, 7)


def _fit_values(fit):
    d = fit.as_dict()
    return np.array([d["w01"], d["w02"], d["w03"], d["J"], d["J13"]])


def _truth(params):
    return np.array([*params.site_freq_zero_flux, params.hopping_nn[0], params.hopping_nnn[0]])


# decay fits


def test_single_exponential():
    t = np.linspace(0, 10, 21)
    pops = np.column_stack([1 - np.exp(-0.7 * t), np.exp(-0.7 * t)])
    fit = fit_decay(t, pops, ("G", "E1"), [("E1", "G")])
    assert fit.values[0] == pytest.approx(0.7, rel=1e-6)
    assert fit.residual_norm < 1e-6


def test_natural_rates_round_trip(rng):
    down, up = natural_rates()
    states = ("G", "E1", "E2", "E3")
    true = {k: v for k, v in {**down, **up}.items() if set(k) <= set(states)}
    rm = assemble_rates(states, true)
    t = np.linspace(0, 80, 41)
    runs = np.array([propagate(rm, s, t).populations for s in states[1:]])
    runs = runs + 0.01 * rng.standard_normal(runs.shape)
    starts = np.eye(4)[1:]
    fit = fit_decay(t, runs, states, list(true), initial_populations=starts, sigma=0.01)
    got = dict(zip(true, fit.values))
    for k in (("E1", "G"), ("E2", "G"), ("E3", "G")):
        assert got[k] == pytest.approx(true[k], rel=0.10)
    assert fit.stderr().shape == (len(true),)


def test_cooling_rate_with_natural_fixed(rng):
    down, _ = natural_rates()
    states = ("G", "E1", "E2", "E3")
    fixed = {k: v for k, v in down.items() if set(k) <= set(states)}
    rm = assemble_rates(states, fixed, [("E3", "E1", 2.5)])
    t = np.linspace(0, 5, 26)
    pops = propagate(rm, "E3", t).populations + 0.002 * rng.standard_normal((26, 4))
    fit = fit_decay(t, pops, states, [("E3", "E1")], fixed=fixed, initial_populations=[0, 0, 0, 1], sigma=0.002)
    assert fit.values[0] == pytest.approx(2.5, rel=0.05)


def test_decay_fit_errors():
    t = np.linspace(0, 1, 5)
    with pytest.raises(ValidationError):
        fit_decay(t, np.zeros((5, 3)), ("G", "E1"), [("E1", "G")])
    with pytest.raises(ValidationError):
        fit_decay(t, np.zeros((5, 2)), ("G", "E1"), [("E1", "G")], fixed={("E1", "G"): 1.0})


# spectroscopy fits


def test_spectroscopy_round_trip(nominal_cfg):
    params, fm = nominal_cfg
    data = synthesize_spectroscopy(params, fm, CURRENTS)
    start = params.replace(site_freq_zero_flux=np.array(params.site_freq_zero_flux) + 0.003)
    fit = fit_spectroscopy(data, start, fm)
    assert np.abs(_fit_values(fit) - _truth(params)).max() < 1e-8
    assert fit.residual_norm < 1e-6


@pytest.mark.parametrize("scale", [0.9, 1.1])
def test_spectroscopy_basin(nominal_cfg, scale):
    params, fm = nominal_cfg
    data = synthesize_spectroscopy(params, fm, CURRENTS)
    start = params.replace(hopping_nn=params.hopping_nn[0] * scale, hopping_nnn=params.hopping_nnn[0] * scale,
                           site_freq_zero_flux=np.array(params.site_freq_zero_flux) + 0.01 * (scale - 1))
    assert np.abs(_fit_values(fit_spectroscopy(data, start, fm)) - _truth(params)).max() < 1e-6


def test_unlabelled_lines_are_assigned(nominal_cfg):
    params, fm = nominal_cfg
    data = synthesize_spectroscopy(params, fm, CURRENTS, keep_labels=False)
    start = params.replace(site_freq_zero_flux=np.array(params.site_freq_zero_flux) + 0.002)
    fit = fit_spectroscopy(data, start, fm)
    assert np.abs(_fit_values(fit) - _truth(params)).max() < 1e-6
    assert all(lb for lb in fit.extra["labels"])


def test_anharmonicity_needs_two_excitation_lines(nominal_cfg):
    params, fm = nominal_cfg
    data = synthesize_spectroscopy(params, fm, CURRENTS, labels=("E1", "E2", "E3"))
    with pytest.raises(IdentifiabilityError) as exc:
        fit_spectroscopy(data, params, fm, free=("w0", "alpha"))
    assert any(abs(v) > 0.5 for k, v in exc.value.null_direction.items() if k.startswith("alpha"))


def test_too_few_rows(nominal_cfg):
    params, fm = nominal_cfg
    data = synthesize_spectroscopy(params, fm, [10.0], labels=("E1",))
    with pytest.raises(ValidationError):
        fit_spectroscopy(data, params, fm)
    with pytest.raises(ValidationError):
        fit_spectroscopy(synthesize_spectroscopy(params, fm, CURRENTS), params, fm, free=("nope",))


def test_iteration_limit():
    with pytest.raises(ConvergenceError) as exc:
        solve_least_squares(lambda x: np.array([np.exp(x[0]) - 1e6, x[0] ** 3]), [0.0], ["x"], max_iter=3)
    assert len(exc.value.trace) > 0


def test_assign_lines_weights():
    data = SpectroscopyDataset([0.0] * 3, ("", "", ""), [5.0, 5.0105, 6.0], [0.003] * 3)
    preds = [{"E1": 5.0, "E2": 5.3}, {"E1": 5.01, "E2": 5.011}, {"E1": 5.0, "E2": 5.3}]
    labels, w = assign_lines(data, preds)
    assert labels[0] == "E1" and labels[1] in ("E1", "E2")
    assert list(w) == [1.0, 0.5, 0.0]
    assert list(assign_lines(data, preds, reject=False)[1]) == [1.0, 0.5, 1.0]


def test_csv_round_trip(tmp_path, nominal_cfg):
    params, fm = nominal_cfg
    data = synthesize_spectroscopy(params, fm, CURRENTS[:3], labels=("E1", "F2"))
    path = tmp_path / "spec.csv"
    with open(path, "w", newline="") as fh:
        fh.write("# synthetic\n")
        w = csv.writer(fh)
        w.writerow(["current [mA]", "label [-]", "freq_ghz [GHz]", "sigma_ghz [GHz]"])
        for row in zip(data.current, data.label, data.freq, data.sigma):
            w.writerow([repr(float(row[0])), row[1], repr(float(row[2])), repr(float(row[3]))])
    back = SpectroscopyDataset.from_csv(path)
    assert back.label == data.label
    assert np.array_equal(back.freq, data.freq) and np.array_equal(back.current, data.current)
    path.write_text("current,label,freq_ghz\n1,E1,5\n")
    with pytest.raises(ValidationError):
        SpectroscopyDataset.from_csv(path)


def test_dataset_validation():
    with pytest.raises(ValidationError):
        SpectroscopyDataset([1.0], ("E1",), [-5.0], [0.003])
    with pytest.raises(ValidationError):
        SpectroscopyDataset([1.0, 2.0], ("E1",), [5.0], [0.003])


# working-point calibration


def test_literal_calibration_does_not_close(nominal_cfg):
    params, fm = nominal_cfg
    ref = reference()["dressed_targets_ghz"]
    start = params.replace(site_freq_zero_flux=qubit_freq_at_flux(params, fm, BIAS_CURRENT_MA))
    with pytest.raises(ConvergenceError) as exc:
        calibrate_working_point([ref["cavity"], *ref["E"]], start, ("sites", "cavity"))
    wp = exc.value.working_point
    assert wp.max_residual_khz > 10.0
    assert len(wp.params.site_freq_zero_flux) == 3


def test_calibration_recovers_forward_model(wp_params):
    targets = modes_from_params(wp_params).lam
    start = wp_params.replace(site_freq_zero_flux=np.array(wp_params.site_freq_zero_flux) + [0.01, -0.02, 0.015],
                              cavity_freq_bare=wp_params.cavity_freq_bare - 0.01)
    wp = calibrate_working_point(targets, start, ("sites", "cavity"))
    assert wp.max_residual_khz < 10.0
    assert np.allclose(wp.params.site_freq_zero_flux, wp_params.site_freq_zero_flux, atol=1e-6)
    # calibrating again from the result changes nothing
    again = calibrate_working_point(targets, wp.params, ("sites", "cavity"))
    assert np.allclose(again.params.site_freq_zero_flux, wp.params.site_freq_zero_flux, atol=1e-9)


def test_calibration_input_errors(wp_params):
    with pytest.raises(ValidationError):
        calibrate_working_point([1.0, 2.0], wp_params)
    with pytest.raises(ValidationError):
        calibrate_working_point([7, 5, 4.8, 4.6], wp_params, ("sites", "flux"))
