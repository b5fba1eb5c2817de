import csv

import numpy as np
import pytest

from pulsetrotter.device import ControlAnsatz
from pulsetrotter.experiments import (PHASE_HEADER, RECORD_HEADER, SUMMARY_HEADER, LibraryEntry,
                                      LibraryFormatError, MissingPrimitiveError, ProblemTemplate, SweepCell,
                                      SweepGrid, _model_schedule, compare_with_exact, compile_schedule, ebh_plan,
                                      ebh_term_operators, load_library, merge_libraries, periodogram,
                                      periodogram_samples, phase_track, power_fraction_below, regime_classify,
                                      run_sweep, save_library, write_phase_csv, write_sweep_csv)
from pulsetrotter.optimize import OptimizationRecord
from pulsetrotter.trotter import primitive_matrices, realize_plan

FIG4 = [-0.00207, 25.0, 6.36]


def entry(pid, label, params=FIG4, T_c=50.0, q=6, inf=1e-5, coeff=None):
    return LibraryEntry(pid, label, q, 1.0, T_c, len(params) // 3, list(params), inf, coeff_rad_per_ns=coeff)


def ebh_library(q=6):
    return [entry("BH:min", "BH_step", q=q), entry("E:min", "E_step", q=q), entry("E:+step", "E_step", q=q)]


# ---------------------------------------------------------------- spectra

def test_periodogram_sinusoid():
    dt, n = 0.1, 400
    t = np.arange(n) * dt
    f, p = periodogram_samples(np.sin(2 * np.pi * 0.25 * t), dt)
    assert f[np.argmax(p)] == pytest.approx(0.25, abs=1 / (n * dt))
    assert f[-1] == pytest.approx(0.5 / dt)


def test_periodogram_zero_pulse(device):
    sat = device.saturation()
    f, p = periodogram(ControlAnsatz.from_params(50.0, [0.0, 25.0, 5.0]), sat)
    assert np.all(p == 0)
    assert np.isnan(power_fraction_below(f, p))


def test_periodogram_dt_guard(device):
    a = ControlAnsatz.from_params(50.0, FIG4)
    with pytest.raises(ValueError):
        periodogram(a, device.saturation(), 0.0)
    with pytest.raises(ValueError):
        periodogram(a, device.saturation(), 50.0 / 10)


def test_power_fraction():
    f = np.array([0.0, 0.5, 1.0, 2.0])
    assert power_fraction_below(f, np.array([1.0, 1.0, 1.0, 1.0])) == 0.5


# ---------------------------------------------------------------- plans and schedules

def test_ebh_plan_layout():
    plan = ebh_plan(2, 6)
    assert plan.flattened_length() == 18
    assert set(plan.used_primitives()) == {"BH:min", "E:min", "E:+step"}
    assert ebh_plan(0, 6).used_primitives() == ["BH:min"]
    with pytest.raises(ValueError):
        ebh_plan(-1, 6)


def test_compile_schedule_n_v2():
    plan = ebh_plan(2, 6)
    sched = compile_schedule(plan, ebh_library(), ebh_term_operators())
    assert len(sched.segments) == 18
    assert sched.total_duration == pytest.approx(900.0)
    assert [s.primitive_id for s in sched.segments] == plan.application_order()
    assert '"total_duration_ns": 900.0' in sched.to_json()


def test_compile_schedule_missing():
    with pytest.raises(MissingPrimitiveError) as exc:
        compile_schedule(ebh_plan(2, 6), ebh_library()[:2], ebh_term_operators())
    assert exc.value.primitive_id == "E:+step"


def test_compile_schedule_label_fallback():
    plan = ebh_plan(1, 6)
    lib = [entry("bh-run", "BH_step", coeff=-0.1), entry("e-run", "E_step", coeff=0.1)]
    sched = compile_schedule(plan, lib, ebh_term_operators(), {"BH": "BH_step", "E": "E_step"}, ["BH", "E"])
    assert len(sched.segments) == 12
    lib[1] = entry("e-run", "E_step", coeff=0.2)
    with pytest.raises(MissingPrimitiveError):
        compile_schedule(plan, lib, ebh_term_operators(), {"BH": "BH_step", "E": "E_step"}, ["BH", "E"])


@pytest.mark.parametrize("n_v", [0, 1, 3])
def test_model_track_matches_realized_plan(n_v):
    plan = ebh_plan(n_v, 6)
    track = phase_track(_model_schedule(plan, ebh_term_operators()), "model")
    U = realize_plan(plan, primitive_matrices(plan, ebh_term_operators())).matrix
    assert len(track) == plan.flattened_length() + 1
    assert track[-1][1] == pytest.approx(U[3, 3], abs=1e-13)


def test_empty_schedule():
    from pulsetrotter.experiments import PulseSchedule
    assert phase_track(PulseSchedule(()), "model") == [(0, 1 + 0j)]
    with pytest.raises(ValueError):
        phase_track(PulseSchedule(()), "quantum")


def test_device_track_within_pulse_error(device):
    # BH-only plan: a hop leaves |11> invariant in the hard-core model
    plan = ebh_plan(0, 6)
    lib = [entry("BH:min", "BH_step", q=6)]
    sched = compile_schedule(plan, lib, ebh_term_operators())
    model = phase_track(sched, "model")
    dev = phase_track(sched, "device", device)
    assert len(dev) == 7
    # error per application is bounded by the amplitude error of the pulse, sqrt(dim^2 g)-ish
    per_step = 4 * np.sqrt(lib[0].infidelity) + 1e-3
    for (k, am), (_, ad) in zip(model, dev):
        assert abs(abs(ad) - abs(am)) <= k * per_step


def test_compare_with_exact_within_bound():
    for n_v in (1, 2, 3):
        c = compare_with_exact(n_v, 6)
        assert np.all(c.deviation <= c.bound + 1e-12)


def test_phase_csv(tmp_path):
    path = tmp_path / "p.csv"
    write_phase_csv([(0, 1 + 0j), (1, 0.5 - 0.5j)], "model", path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == PHASE_HEADER and rows[2] == ["1", "0.5", "-0.5", "model"]


# ---------------------------------------------------------------- library

def test_library_roundtrip(tmp_path):
    lib = ebh_library()
    lib[0].created_with = {"seed": 3}
    path = tmp_path / "lib.json"
    save_library(lib, path)
    assert load_library(path) == lib
    path.write_text('[{"primitive_id": "x"}]')
    with pytest.raises(LibraryFormatError):
        load_library(path)


def test_merge_prefers_lower_infidelity():
    old = [entry("a", "E_step", inf=1e-6), entry("b", "E_step", inf=1e-6)]
    new = [entry("a", "E_step", inf=1e-9), entry("b", "E_step", inf=1e-3), entry("c", "E_step")]
    merged = {e.primitive_id: e.infidelity for e in merge_libraries(old, new)}
    assert merged == {"a": 1e-9, "b": 1e-6, "c": 1e-5}


# ---------------------------------------------------------------- sweeps

def fake_cell(v, q, finals):
    recs = [OptimizationRecord(0, i, [], [], [f], 0.0, 1, "gradient_converged") for i, f in enumerate(finals)]
    return SweepCell("T_c", v, q, 0, recs)


def test_sweep_grid_validation():
    with pytest.raises(ValueError):
        SweepGrid("T_s", (1.0,), (2,))
    with pytest.raises(ValueError):
        SweepGrid("T_c", (50.0, 50.0), (2,))
    with pytest.raises(ValueError):
        SweepGrid("T_c", (50.0,), (0,))
    seeds = [s for *_, s in SweepGrid("T_c", (1.0, 2.0), (2, 3), seed=7).cells()]
    assert seeds == [7, 8, 9, 10]
    assert {s for *_, s in SweepGrid("T_c", (1.0, 2.0), (2, 3), seed=7, seed_policy="shared").cells()} == {7}


def test_regime_classify():
    cells = [fake_cell(50.0, 6, [1e-3, 2e-3]), fake_cell(100.0, 6, [1e-9, 1e-2])]
    assert regime_classify(cells) == {(50.0, 6): "high_infidelity", (100.0, 6): "low_infidelity"}
    # moving the threshold within the gap between the cells changes nothing
    for thr in (1e-8, 1e-6, 1e-4):
        assert regime_classify(cells, thr) == regime_classify(cells)


def test_sweep_tiny_deterministic(device, tmp_path):
    grid = SweepGrid("T_c", (50.0,), (6,), n_starts=2, pool=8, seed=1)
    tmpl = ProblemTemplate(device, target="BH_step", M=1)
    a = run_sweep(grid, tmpl)
    b = run_sweep(grid, tmpl)
    assert a[0].error is None and len(a[0].records) == 2
    assert [r.final_params for r in a[0].records] == [r.final_params for r in b[0].records]
    write_sweep_csv(a, tmp_path / "r.csv", tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == RECORD_HEADER and len(rows) == 3
    summary = list(csv.reader(open(tmp_path / "s.csv")))
    assert summary[0] == SUMMARY_HEADER and float(summary[1][2]) == a[0].min_infidelity


def test_sweep_cell_error_is_caught(device):
    grid = SweepGrid("M", (1,), (6,), n_starts=5, pool=2)
    cells = run_sweep(grid, ProblemTemplate(device, target="BH_step", T_c=50.0))
    assert cells[0].error and "ValueError" in cells[0].error
