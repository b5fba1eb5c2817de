"""Numerical studies: infidelity sweeps, pulse periodograms, schedule compilation
and phase tracking of the |11> amplitude.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .device import ControlAnsatz, DeviceSpec, Saturation, raw_coupling, saturate
from .fockspace import HilbertLayout
from .goat import GoatProblem, full_propagator
from .model import EbhParams, bh_step_unitary, density_bond, e_step_unitary, exact_evolution, hopping_bond
from .optimize import GuessRanges, OptimizationRecord, multistart
from .propagation import IntegratorConfig
from .trotter import ParamGrid, TrotterPlan, plan_baseline, primitive_matrices, trotter_error_bound

AXES = ("T_c", "M")
RECORD_HEADER = ["axis1_name", "axis1_value", "q", "restart", "seed", "final_infidelity", "iterations",
                 "termination", "wall_time_s"]
SUMMARY_HEADER = ["axis1_value", "q", "min_infidelity", "mean_infidelity", "n_restarts"]
PERIODOGRAM_HEADER = ["frequency_ghz", "power"]
PHASE_HEADER = ["step", "re_amp", "im_amp", "mode"]

DESK_TC_GRID = ((50.0, 75.0, 100.0), (2, 6, 10))
DESK_M_GRID = ((5, 20, 35), (2, 6, 10))
FULL_TC_GRID = (tuple(25.0 * k for k in range(1, 9)), tuple(range(1, 11)))
FULL_M_GRID = (tuple(range(5, 40, 5)), tuple(range(1, 11)))


# ---------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class SweepGrid:
    axis1_name: str
    axis1_values: tuple
    q_values: tuple[int, ...]
    n_starts: int = 10
    pool: int = 1000
    seed: int = 0
    seed_policy: str = "per_cell"   # or "shared": one seed for every cell

    def __post_init__(self):
        if self.axis1_name not in AXES:
            raise ValueError(f"axis1 must be one of {AXES}")
        for name, vals in (("axis1", self.axis1_values), ("q", self.q_values)):
            if not vals:
                raise ValueError(f"{name} values are empty")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"{name} values must be strictly increasing")
        if any(q < 1 for q in self.q_values):
            raise ValueError("q values must be >= 1")
        if self.seed_policy not in ("per_cell", "shared"):
            raise ValueError("seed_policy must be 'per_cell' or 'shared'")

    def cells(self):
        for i, v in enumerate(self.axis1_values):
            for j, q in enumerate(self.q_values):
                k = i * len(self.q_values) + j
                yield v, q, (self.seed + k if self.seed_policy == "per_cell" else self.seed)


@dataclass(frozen=True)
class ProblemTemplate:
    """Everything but the swept axes: the device, target family and fixed T_c or M."""

    device: DeviceSpec
    target: str = "E_step"           # or "BH_step"
    T_s: float = 1.0
    J: float = -0.1
    delta_V: float = 0.1
    T_c: float = 100.0
    M: int = 20
    integrator: IntegratorConfig = IntegratorConfig()
    ranges: GuessRanges = GuessRanges()

    def __post_init__(self):
        if self.target not in ("E_step", "BH_step"):
            raise ValueError("target must be 'E_step' or 'BH_step'")

    def target_unitary(self, q: int):
        dt = self.T_s / q
        return e_step_unitary(self.delta_V, dt) if self.target == "E_step" else bh_step_unitary(self.J, dt)

    def problem(self, q: int, T_c: float | None = None, M: int | None = None) -> GoatProblem:
        return GoatProblem(self.device, self.target_unitary(q), self.T_c if T_c is None else T_c,
                           self.M if M is None else int(M), integrator=self.integrator)


@dataclass
class SweepCell:
    axis1_name: str
    axis1_value: float
    q: int
    seed: int
    records: list[OptimizationRecord] = field(default_factory=list)
    error: str | None = None

    @property
    def finals(self) -> np.ndarray:
        return np.array([r.final_infidelity for r in self.records])

    @property
    def min_infidelity(self) -> float:
        return float(self.finals.min()) if self.records else math.nan

    @property
    def mean_infidelity(self) -> float:
        return float(self.finals.mean()) if self.records else math.nan


def run_sweep(grid: SweepGrid, template: ProblemTemplate, workers: int = 1,
              log: Callable[[str], None] | None = None) -> list[SweepCell]:
    cells = []
    for v, q, seed in grid.cells():
        kw = {"T_c": v} if grid.axis1_name == "T_c" else {"M": v}
        cell = SweepCell(grid.axis1_name, v, q, seed)
        t0 = time.perf_counter()
        try:
            cell.records = multistart(template.problem(q, **kw), template.ranges, grid.n_starts, grid.pool,
                                      seed=seed, q=q, workers=workers)
        except Exception as exc:  # one bad cell must not end the sweep
            cell.error = f"{type(exc).__name__}: {exc}"
        if log:
            status = cell.error or f"min {cell.min_infidelity:.3e} mean {cell.mean_infidelity:.3e}"
            log(f"cell {grid.axis1_name}={v} q={q}: {status} ({time.perf_counter() - t0:.1f} s)")
        cells.append(cell)
    return cells


def write_sweep_csv(cells: Sequence[SweepCell], records_path, summary_path) -> None:
    with open(records_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_HEADER)
        for c in cells:
            if c.error:
                w.writerow([c.axis1_name, c.axis1_value, c.q, -1, c.seed, "nan", 0, "error", 0.0])
            for k, r in enumerate(c.records):
                w.writerow([c.axis1_name, c.axis1_value, c.q, k, r.seed, repr(r.final_infidelity), r.iterations,
                            r.termination, f"{r.wall_time_s:.3f}"])
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for c in cells:
            w.writerow([c.axis1_value, c.q, repr(c.min_infidelity), repr(c.mean_infidelity), len(c.records)])


def regime_classify(cells: Sequence[SweepCell], threshold: float = 1e-8) -> dict:
    """``(axis1_value, q) -> 'low_infidelity' | 'high_infidelity'`` by cell minimum."""
    return {(c.axis1_value, c.q): "low_infidelity" if c.min_infidelity <= threshold else "high_infidelity"
            for c in cells}


# ---------------------------------------------------------------- spectra

def periodogram_samples(samples, dt_sample: float):
    """Rectangular-window periodogram ``|DFT|^2`` up to Nyquist; frequencies in GHz."""
    x = np.asarray(samples, dtype=float)
    if not dt_sample > 0:
        raise ValueError("dt_sample must be positive")
    return np.fft.rfftfreq(x.size, dt_sample), np.abs(np.fft.rfft(x)) ** 2


def pulse_samples(ansatz: ControlAnsatz, saturation: Saturation, dt_sample: float):
    n = int(round(ansatz.T_c / dt_sample)) + 1
    t = np.arange(n) * dt_sample
    return t, np.asarray(saturate(saturation, raw_coupling(ansatz, t)), dtype=float)


def periodogram(ansatz: ControlAnsatz, saturation: Saturation, dt_sample: float = 0.1):
    """Periodogram of the saturated pulse sampled on ``[0, T_c]``. Power in (rad/ns)^2."""
    if not 0 < dt_sample <= ansatz.T_c / 16:
        raise ValueError("dt_sample must lie in (0, T_c/16]")
    _, s = pulse_samples(ansatz, saturation, dt_sample)
    return periodogram_samples(s, dt_sample)


def power_fraction_below(freqs, power, f_cut_ghz: float = 1.0) -> float:
    total = float(np.sum(power))
    if total == 0:
        return math.nan
    return float(np.sum(power[np.asarray(freqs) < f_cut_ghz]) / total)


# ---------------------------------------------------------------- pulse library

@dataclass
class LibraryEntry:
    primitive_id: str
    target_label: str
    q: int
    T_s_ns: float
    T_c_ns: float
    M: int
    params: list[float]
    infidelity: float
    amplitude_interpretation: str = "angular_rad_per_ns"
    created_with: dict = field(default_factory=dict)
    coeff_rad_per_ns: float | None = None

    @property
    def ansatz(self) -> ControlAnsatz:
        return ControlAnsatz.from_params(self.T_c_ns, self.params)

    @property
    def dt_ns(self) -> float:
        return self.T_s_ns / self.q


class LibraryFormatError(ValueError):
    pass


def save_library(entries: Sequence[LibraryEntry], path) -> None:
    with open(path, "w") as fh:
        json.dump([asdict(e) for e in entries], fh, indent=2)
        fh.write("\n")


def load_library(path) -> list[LibraryEntry]:
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        doc = [doc]
    try:
        return [LibraryEntry(**d) for d in doc]
    except TypeError as exc:
        raise LibraryFormatError(f"{path}: {exc}") from None


def merge_libraries(old: Sequence[LibraryEntry], new: Sequence[LibraryEntry]) -> list[LibraryEntry]:
    """Union keyed by primitive id; for duplicates the lower infidelity wins."""
    out = {e.primitive_id: e for e in old}
    for e in new:
        if e.primitive_id not in out or e.infidelity < out[e.primitive_id].infidelity:
            out[e.primitive_id] = e
    return list(out.values())


# ---------------------------------------------------------------- EBH plans and schedules

EBH_TERM_NAMES = ("BH", "E")
EBH_TERM_LABELS = {"BH": "BH_step", "E": "E_step"}
_PAIR = HilbertLayout((2, 2))


def ebh_term_operators():
    return [hopping_bond(_PAIR, 0), density_bond(_PAIR, 0)]


def ebh_plan(n_v: int, q: int, T_s: float = 1.0, J: float = -0.1, delta_V: float = 0.1) -> TrotterPlan:
    """Two-site plan realizing ``V = n_v * delta_V``: one BH step, then ``n_v`` E steps per cycle.

    The E term uses ``lambda_min = delta_V`` and ``n = n_v - 1``; for ``n_v = 0``
    the plan holds the BH term only.
    """
    if n_v < 0:
        raise ValueError("n_v must be non-negative")
    bh = ParamGrid(delta_lambda=abs(J) or 1.0, lambda_min=J, n=0)
    if n_v == 0:
        return plan_baseline([bh], q, T_s, term_names=["BH"])
    e = ParamGrid(delta_lambda=delta_V, lambda_min=delta_V, n=n_v - 1)
    return plan_baseline([bh, e], q, T_s, term_names=list(EBH_TERM_NAMES))


class MissingPrimitiveError(KeyError):
    def __init__(self, primitive_id: str):
        super().__init__(primitive_id)
        self.primitive_id = primitive_id

    def __str__(self):
        return f"pulse library has no pulse for primitive {self.primitive_id!r}"


@dataclass(frozen=True)
class Segment:
    primitive_id: str
    target_label: str
    duration: float
    ansatz: ControlAnsatz | None
    infidelity: float
    target_matrix: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class PulseSchedule:
    segments: tuple[Segment, ...]
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def total_duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def to_json(self) -> str:
        return json.dumps({
            "total_duration_ns": self.total_duration,
            "segments": [{"primitive_id": s.primitive_id, "target_label": s.target_label, "duration_ns": s.duration,
                          "params": None if s.ansatz is None else s.ansatz.params.tolist(),
                          "infidelity": s.infidelity} for s in self.segments],
            "metadata": self.metadata,
        }, indent=2)


def _lookup(pid: str, plan: TrotterPlan, library: Mapping[str, LibraryEntry], term_labels, term_names):
    if pid in library:
        return library[pid]
    if term_labels is None:
        raise MissingPrimitiveError(pid)
    prim = plan.primitives[pid]
    label = term_labels.get(term_names[prim.term]) if term_names else None
    for e in library.values():
        if (e.target_label == label and e.coeff_rad_per_ns is not None
                and math.isclose(e.coeff_rad_per_ns, prim.coefficient, rel_tol=1e-9)
                and math.isclose(e.dt_ns, prim.dt, rel_tol=1e-9)):
            return e
    raise MissingPrimitiveError(pid)


def compile_schedule(plan: TrotterPlan, library, term_operators: Sequence, term_labels: Mapping | None = None,
                     term_names: Sequence[str] | None = None) -> PulseSchedule:
    """Lay the library pulses out in application (time) order.

    ``library`` maps primitive id to :class:`LibraryEntry` (a list is keyed by
    its entries' ids). Ids absent from the library are matched by target
    label, coefficient and ``dt`` when ``term_labels``/``term_names`` are given.
    Each segment keeps the exact primitive matrix for model-mode tracking.
    """
    if not isinstance(library, Mapping):
        library = {e.primitive_id: e for e in library}
    mats = primitive_matrices(plan, term_operators)
    resolved = {pid: _lookup(pid, plan, library, term_labels, term_names) for pid in plan.used_primitives()}
    segs = []
    for pid in plan.application_order():
        e = resolved[pid]
        label = e.target_label
        segs.append(Segment(pid, label, e.T_c_ns, e.ansatz, e.infidelity, mats[pid]))
    meta = {"q": plan.q, "T_s_ns": plan.T_s,
            "primitive_infidelity": {pid: e.infidelity for pid, e in resolved.items()}}
    return PulseSchedule(tuple(segs), meta)


def _model_schedule(plan: TrotterPlan, term_operators, term_labels=None, term_names=None) -> PulseSchedule:
    """Schedule carrying only target matrices (no pulses) for model-mode tracking."""
    mats = primitive_matrices(plan, term_operators)
    segs = []
    for pid in plan.application_order():
        p = plan.primitives[pid]
        label = term_labels.get(term_names[p.term], "") if term_labels and term_names else ""
        segs.append(Segment(pid, label, p.dt, None, 0.0, mats[pid]))
    return PulseSchedule(tuple(segs), {"q": plan.q, "T_s_ns": plan.T_s})


STATE_11_MODEL = 3     # |11> in the hard-core pair basis
STATE_11_DEVICE = 4    # |11> in two 3-level transmons


def phase_track(schedule: PulseSchedule, mode: str = "model", device: DeviceSpec | None = None,
                cfg: IntegratorConfig | None = None, initial_state=None):
    """``<11|psi>`` after each segment, starting from ``|11>`` (step 0 is the initial state).

    ``model`` applies each segment's target matrix; ``device`` propagates each
    segment's pulse on the full truncated device space (one propagator per
    distinct primitive, computed at ``cfg`` tolerances, default tight).
    """
    if mode == "model":
        psi = np.zeros(4, dtype=complex)
        psi[STATE_11_MODEL] = 1.0
        if initial_state is not None:
            psi = np.asarray(initial_state, dtype=complex)
        out = [(0, complex(psi[STATE_11_MODEL]))]
        for k, seg in enumerate(schedule.segments, 1):
            psi = seg.target_matrix @ psi
            out.append((k, complex(psi[STATE_11_MODEL])))
        return out
    if mode != "device":
        raise ValueError("mode must be 'model' or 'device'")
    device = device or DeviceSpec.table1()
    cfg = cfg or IntegratorConfig.tight()
    psi = np.zeros(device.layout.dim, dtype=complex)
    psi[STATE_11_DEVICE] = 1.0
    if initial_state is not None:
        psi = np.asarray(initial_state, dtype=complex)
    cache = {}
    out = [(0, complex(psi[STATE_11_DEVICE]))]
    for k, seg in enumerate(schedule.segments, 1):
        if seg.ansatz is None:
            raise ValueError(f"segment {seg.primitive_id!r} carries no pulse")
        if seg.primitive_id not in cache:
            prob = GoatProblem(device, seg.target_matrix, seg.ansatz.T_c, seg.ansatz.M, backend="reference")
            cache[seg.primitive_id] = full_propagator(prob, seg.ansatz.params, cfg)
        psi = cache[seg.primitive_id] @ psi
        out.append((k, complex(psi[STATE_11_DEVICE])))
    return out


def write_phase_csv(track, mode: str, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PHASE_HEADER)
        for step, amp in track:
            w.writerow([step, repr(amp.real), repr(amp.imag), mode])


def write_periodogram_csv(freqs, power, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PERIODOGRAM_HEADER)
        for f, p in zip(freqs, power):
            w.writerow([repr(float(f)), repr(float(p))])


@dataclass(frozen=True)
class TrackingComparison:
    cycles: np.ndarray          # completed Trotter cycles at each comparison point
    times: np.ndarray           # model time (ns)
    deviation: np.ndarray       # |<11|psi_trotter> - <11|psi_exact>|
    bound: np.ndarray           # leading-order Trotter bound at that time


def compare_with_exact(n_v: int, q: int, n_e_steps: int = 60, T_s: float = 1.0, J: float = -0.1,
                       delta_V: float = 0.1) -> TrackingComparison:
    """Model-mode tracking of ``|11>`` against exact EBH evolution at every cycle boundary.

    Runs enough cycles for ``n_e_steps`` E-step applications (or the same
    number of cycles when ``n_v = 0``).
    """
    plan = ebh_plan(n_v, q, T_s, J, delta_V)
    per_cycle = max(n_v, 1)
    n_cycles = -(-n_e_steps // per_cycle)
    sched = _model_schedule(plan, ebh_term_operators())
    cycle_len = len(sched.segments) // q
    segs = list(sched.segments[:cycle_len]) * n_cycles
    track = phase_track(PulseSchedule(tuple(segs)), "model")
    dt = plan.dt
    params = EbhParams(J=J, sites=2, delta_V=delta_V, n_v=n_v)
    terms = [(J, hopping_bond(_PAIR, 0)), (params.V, density_bond(_PAIR, 0))]
    cyc = np.arange(n_cycles + 1)
    dev, bnd = np.zeros(n_cycles + 1), np.zeros(n_cycles + 1)
    for c in cyc[1:]:
        exact = exact_evolution(params, c * dt).matrix[STATE_11_MODEL, STATE_11_MODEL]
        dev[c] = abs(track[c * cycle_len][1] - exact)
        bnd[c] = trotter_error_bound(terms, int(c), c * dt)
    return TrackingComparison(cyc, cyc * dt, dev, bnd)
