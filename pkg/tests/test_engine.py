import math
from dataclasses import replace

import numpy as np
import pytest

from gfmfreq.engine import (
    Event,
    InstabilityError,
    SimConfig,
    SimulationError,
    System,
    apply_event,
    read_csv,
    simulate,
    step,
)
from gfmfreq.metrics import nadir_and_settling
from gfmfreq.scenarios import BUNDLED

from conftest import bundled, run

DP = 0.05  # single-device step on the device base
TAU = 0.05


def gfm_step_case(dt, duration=0.5):
    scen = bundled("single_gfm")
    return replace(scen, events=(Event(0.0, 2, DP),), sim=replace(scen.sim, dt=dt, duration=duration))


def rk4_amplification(z):
    return 1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24


def closed_form_error(dt):
    series = simulate(gfm_step_case(dt))
    exact = 0.5 + DP * (1 - np.exp(-2 * math.pi * series.t / TAU))
    return series, float(np.max(np.abs(series.p_m[:, 0] - exact)))


def test_rk4_matches_stability_function():
    # the discrete solution of a linear filter is known exactly; the gap left
    # is the network Newton tolerance feeding p_e
    for dt in (0.001, 0.0005):
        series, _ = closed_form_error(dt)
        n = np.arange(series.t.size)
        R = rk4_amplification(-2 * math.pi * dt / TAU)
        discrete = 0.5 + DP * (1 - R**n)
        assert np.max(np.abs(series.p_m[:, 0] - discrete)) < 1e-10


def test_rk4_closed_form_error():
    _, err_1ms = closed_form_error(0.001)
    z = -2 * math.pi * 0.001 / TAU
    n = np.arange(501)
    predicted = DP * np.max(np.abs(rk4_amplification(z) ** n - np.exp(z * n)))
    assert err_1ms == pytest.approx(predicted, rel=1e-3)
    assert err_1ms < 5e-8
    _, err_half = closed_form_error(0.0005)
    assert err_half < 1e-8


def test_rk4_order():
    dts = np.array([0.004, 0.002, 0.001, 0.0005])
    errs = np.array([closed_form_error(dt)[1] for dt in dts])
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert abs(slope - 4.0) < 0.3


def test_fixed_point_step():
    scen = bundled("ieee9_A")
    system = System(scen)
    y, theta = system.initialize()
    y1, _ = step(system, y, scen.loads, 0.001, guess=theta)
    assert np.allclose(y1, y, rtol=0, atol=1e-13)


@pytest.mark.parametrize("name", sorted(BUNDLED))
def test_zero_event_flatness(name):
    scen = bundled(name)
    scen = replace(scen, events=(), sim=replace(scen.sim, duration=10.0))
    series = simulate(scen)
    assert np.max(np.abs(series.f - 60.0)) < 1e-6
    assert np.max(np.abs(series.f - series.f[0])) < 1e-9
    assert np.max(np.abs(series.p_m - series.p_m[0])) < 1e-9


def test_pre_event_samples_steady():
    series, _ = run("single_sg")
    pre = series.t < 1.0
    assert np.max(np.abs(series.f[pre] - 60.0)) < 1e-6


def test_gfm_settles_without_undershoot():
    series, _ = run("single_gfm")
    f = series.f[:, 0]
    assert f[-1] == pytest.approx(59.85, abs=1e-6)
    assert f.min() > 59.85 - 1e-3


def test_sg_settles_with_undershoot():
    series, _ = run("single_sg")
    nadir, _, settling = nadir_and_settling(series.t, series.f[:, 0], 1.0)
    assert settling == pytest.approx(59.85, abs=1e-4)
    assert nadir < settling - 0.01


def test_dt_halving_nadir():
    a, _ = run("single_sg")
    b, _ = run("single_sg", dt=0.0005)
    na = nadir_and_settling(a.t, a.f[:, 0], 1.0)[0]
    nb = nadir_and_settling(b.t, b.f[:, 0], 1.0)[0]
    assert abs(na - nb) < 1e-6


def test_conservation_every_sample():
    for name in ("single_sg", "ieee9_A"):
        series, _ = run(name)
        assert np.max(np.abs(series.p_e_system - series.load_total)) < 1e-8


def test_average_within_device_range():
    series, _ = run("ieee9_A")
    assert np.all(series.avg_f >= series.f.min(axis=1) - 1e-12)
    assert np.all(series.avg_f <= series.f.max(axis=1) + 1e-12)


def test_determinism():
    scen = replace(bundled("ieee9_A"), sim=replace(bundled("ieee9_A").sim, duration=3.0))
    a, b = simulate(scen), simulate(scen)
    for k in ("f", "p_m", "p_e", "angles", "avg_f"):
        assert np.array_equal(getattr(a, k), getattr(b, k))


def test_event_applies_on_grid():
    series, _ = run("single_sg")
    k = int(round(1.0 / series.dt))
    # p_e jumps at the event sample, not before
    assert series.p_e[k - 1, 0] == pytest.approx(0.5, abs=1e-9)
    assert series.p_e[k, 0] == pytest.approx(0.55, abs=1e-9)


def test_apply_event():
    net = bundled("ieee9_A").network
    loads = bundled("ieee9_A").loads
    same = apply_event(loads, Event(1.0, 6, 0.0), net)
    assert np.array_equal(same, loads)
    ev = bundled("ieee9_A").events[0]
    assert ev.bus == 6 and ev.delta_p == pytest.approx(31.5 / 600)
    out = apply_event(loads, ev, net)
    changed = np.nonzero(out != loads)[0]
    assert [net.bus_ids[k] for k in changed] == [6]
    assert out[net.index[6]] - loads[net.index[6]] == pytest.approx(0.0525)
    assert loads[net.index[6]] == pytest.approx(90 / 600)
    with pytest.raises(ValueError):
        apply_event(loads, Event(1.0, 42, 0.1), net)


def test_ieee39_event():
    scen = bundled("ieee39")
    ev = scen.events[0]
    assert ev.bus == 15 and ev.delta_p == pytest.approx(0.06)
    out = apply_event(scen.loads, ev, scen.network)
    changed = np.nonzero(out != scen.loads)[0]
    assert [scen.network.bus_ids[k] for k in changed] == [15]


def test_off_grid_event_rejected():
    scen = bundled("single_sg")
    scen = replace(scen, events=(Event(1.0005, 2, 0.05),))
    with pytest.raises(ValueError, match="grid"):
        simulate(scen)


def test_event_outside_horizon_rejected():
    scen = bundled("single_sg")
    with pytest.raises(ValueError):
        simulate(replace(scen, sim=replace(scen.sim, duration=0.5)))


def test_instability_detected():
    scen = bundled("single_sg_H1")
    scen = replace(scen, events=(Event(0.1, 2, 2.0),), sim=replace(scen.sim, duration=5.0))
    with pytest.raises(InstabilityError) as info:
        simulate(scen)
    assert info.value.time is not None and "t=" in str(info.value)


def test_network_failure_is_timestamped():
    scen = bundled("single_sg")
    scen = replace(scen, events=(Event(0.2, 2, 25.0),), sim=replace(scen.sim, duration=1.0))
    with pytest.raises(SimulationError) as info:
        simulate(scen)
    assert info.value.time == pytest.approx(0.2)
    assert "t=0.2" in str(info.value)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        SimConfig(duration=-1.0)
    assert SimConfig(dt=0.001, duration=20.0).n_steps == 20000


def test_record_stride():
    scen = bundled("single_sg")
    s = simulate(replace(scen, sim=replace(scen.sim, duration=2.0, record_stride=10)))
    full = simulate(replace(scen, sim=replace(scen.sim, duration=2.0)))
    assert s.t.size == 201
    assert np.array_equal(s.f, full.f[::10])


def test_csv_header(tmp_path):
    series, _ = run("single_gfm")
    path = tmp_path / "ts.csv"
    series.to_csv(path)
    header, data = read_csv(path)
    assert header == ["t", "dev:GFM:f", "dev:GFM:pm", "dev:GFM:pe", "bus:1:angle", "bus:2:angle", "avg_f"]
    assert data.shape == (series.t.size, 7)
    line = path.read_text().splitlines()[1000]
    assert all(len(v.replace("-", "").replace(".", "").split("e")[0].lstrip("0") or "0") <= 9
               for v in line.split(","))
