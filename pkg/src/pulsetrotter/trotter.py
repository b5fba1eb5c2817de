"""Parameterized first-order Trotter plans.

A model Hamiltonian ``sum_l lambda_l H_l`` whose parameters live on grids is
split so that only a handful of fixed primitive unitaries
``exp(-i c H_l T_s/q)`` ever need a control pulse; any grid point is then
reached by repeating primitives. A plan stores one Trotter cycle in written
product order (leftmost factor applied last) plus the number of cycles ``q``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .fockspace import FockOperator
from .model import ModelUnitary
from .propagation import matrix_exp


@dataclass(frozen=True)
class ParamGrid:
    """Grid for one Hamiltonian coefficient.

    Baseline plans realize ``lambda_min + n * delta_lambda``; symmetric plans
    realize ``(n_plus - n_minus) * delta_lambda``.
    """

    delta_lambda: float
    lambda_min: float = 0.0
    n: int = 0
    n_plus: int | None = None
    n_minus: int | None = None

    def __post_init__(self):
        if not self.delta_lambda > 0:
            raise ValueError("delta_lambda must be positive")
        for name in ("n", "n_plus", "n_minus"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def value(self) -> float:
        return self.lambda_min + self.n * self.delta_lambda

    @property
    def symmetric_value(self) -> float:
        if self.n_plus is None or self.n_minus is None:
            raise ValueError("grid has no +/- counts")
        return (self.n_plus - self.n_minus) * self.delta_lambda


@dataclass(frozen=True)
class Perturbation:
    """Local disorder ``(n_eps_plus - n_eps_minus) * delta_eps`` added to one term."""

    delta_eps: float
    n_eps_plus: int = 0
    n_eps_minus: int = 0

    def __post_init__(self):
        if not self.delta_eps > 0:
            raise ValueError("delta_eps must be positive")
        if self.n_eps_plus < 0 or self.n_eps_minus < 0:
            raise ValueError("perturbation counts must be non-negative")

    @property
    def value(self) -> float:
        return (self.n_eps_plus - self.n_eps_minus) * self.delta_eps


@dataclass(frozen=True)
class Primitive:
    term: int
    coefficient: float
    dt: float


@dataclass(frozen=True)
class TrotterPlan:
    q: int
    T_s: float
    steps: tuple[tuple[str, int], ...]
    primitives: Mapping[str, Primitive]
    notes: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")
        for pid, reps in self.steps:
            if reps < 0:
                raise ValueError("repetitions must be non-negative")
            if pid not in self.primitives:
                raise ValueError(f"step references unknown primitive {pid!r}")

    @property
    def dt(self) -> float:
        return self.T_s / self.q

    def cycle(self) -> list[str]:
        """One cycle in written product order."""
        return [pid for pid, reps in self.steps for _ in range(reps)]

    def application_order(self) -> list[str]:
        """All primitive applications in time order (first applied first)."""
        return list(reversed(self.cycle())) * self.q

    def flattened_length(self) -> int:
        return self.q * sum(reps for _, reps in self.steps)

    def used_primitives(self) -> list[str]:
        return [pid for pid in self.primitives if any(p == pid and r > 0 for p, r in self.steps)]

    def to_json(self) -> str:
        doc = {
            "q": self.q,
            "T_s_ns": self.T_s,
            "primitives": [
                {"id": pid, "term": p.term, "coeff_rad_per_ns": p.coefficient, "dt_ns": p.dt}
                for pid, p in self.primitives.items()
            ],
            "cycle": [{"id": pid, "reps": reps} for pid, reps in self.steps],
        }
        if self.notes:
            doc["notes"] = list(self.notes)
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> TrotterPlan:
        doc = json.loads(text)
        prims = {p["id"]: Primitive(int(p["term"]), float(p["coeff_rad_per_ns"]), float(p["dt_ns"]))
                 for p in doc["primitives"]}
        steps = tuple((s["id"], int(s["reps"])) for s in doc["cycle"])
        return cls(int(doc["q"]), float(doc["T_s_ns"]), steps, prims, tuple(doc.get("notes", ())))


def _names(grids, term_names):
    if not grids:
        raise ValueError("at least one parameter grid is required")
    if term_names is None:
        return [f"t{l}" for l in range(len(grids))]
    if len(term_names) != len(grids):
        raise ValueError("term_names must match the number of grids")
    return list(term_names)


def _check_time(q, T_s):
    if q < 1:
        raise ValueError("q must be >= 1")
    if not T_s > 0:
        raise ValueError("T_s must be positive")


def plan_baseline(grids: Sequence[ParamGrid], q: int, T_s: float, term_names=None) -> TrotterPlan:
    """Per term: ``U(lambda_min)`` once, then ``U(delta_lambda)`` ``n`` times."""
    names = _names(grids, term_names)
    _check_time(q, T_s)
    dt = T_s / q
    prims, steps = {}, []
    for l, (g, name) in enumerate(zip(grids, names)):
        prims[f"{name}:min"] = Primitive(l, g.lambda_min, dt)
        prims[f"{name}:+step"] = Primitive(l, g.delta_lambda, dt)
        steps += [(f"{name}:min", 1), (f"{name}:+step", g.n)]
    return TrotterPlan(q, T_s, tuple(steps), prims)


def plan_symmetric(grids: Sequence[ParamGrid], q: int, T_s: float, term_names=None) -> TrotterPlan:
    """Per term: ``U(-delta_lambda)^n_minus`` then ``U(+delta_lambda)^n_plus``."""
    names = _names(grids, term_names)
    _check_time(q, T_s)
    dt = T_s / q
    prims, steps = {}, []
    for l, (g, name) in enumerate(zip(grids, names)):
        if g.n_plus is None or g.n_minus is None:
            raise ValueError(f"grid for term {name!r} lacks n_plus/n_minus")
        prims[f"{name}:-step"] = Primitive(l, -g.delta_lambda, dt)
        prims[f"{name}:+step"] = Primitive(l, g.delta_lambda, dt)
        steps += [(f"{name}:-step", g.n_minus), (f"{name}:+step", g.n_plus)]
    return TrotterPlan(q, T_s, tuple(steps), prims)


def plan_with_disorder(grids: Sequence[ParamGrid], perturbations: Sequence[Perturbation | None], q: int,
                       T_s: float, term_names=None) -> TrotterPlan:
    """Baseline plan with per-term disorder primitives appended to each cycle.

    When a perturbation shares the grid spacing the disorder is merged into
    the step exponent ``n + n_eps_plus - n_eps_minus``; a negative merged
    exponent is realized with the ``-delta_lambda`` primitive.
    """
    names = _names(grids, term_names)
    _check_time(q, T_s)
    if len(perturbations) != len(grids):
        raise ValueError("one perturbation (or None) per grid is required")
    dt = T_s / q
    prims, steps, notes = {}, [], []
    for l, (g, pert, name) in enumerate(zip(grids, perturbations, names)):
        prims[f"{name}:min"] = Primitive(l, g.lambda_min, dt)
        prims[f"{name}:+step"] = Primitive(l, g.delta_lambda, dt)
        steps.append((f"{name}:min", 1))
        if pert is None or (pert.n_eps_plus == 0 and pert.n_eps_minus == 0):
            steps.append((f"{name}:+step", g.n))
        elif math.isclose(pert.delta_eps, g.delta_lambda, rel_tol=1e-12):
            merged = g.n + pert.n_eps_plus - pert.n_eps_minus
            if merged >= 0:
                steps.append((f"{name}:+step", merged))
            else:
                prims[f"{name}:-step"] = Primitive(l, -g.delta_lambda, dt)
                steps += [(f"{name}:+step", 0), (f"{name}:-step", -merged)]
                notes.append(f"term {name}: merged exponent {merged} realized with the -step primitive")
        else:
            prims[f"{name}:-eps"] = Primitive(l, -pert.delta_eps, dt)
            prims[f"{name}:+eps"] = Primitive(l, pert.delta_eps, dt)
            steps += [(f"{name}:+step", g.n), (f"{name}:-eps", pert.n_eps_minus),
                      (f"{name}:+eps", pert.n_eps_plus)]
    return TrotterPlan(q, T_s, tuple(steps), prims, tuple(notes))


def primitive_matrices(plan: TrotterPlan, term_operators: Sequence) -> dict[str, np.ndarray]:
    """``exp(-i c H_l dt)`` for every primitive of ``plan``."""
    return {pid: matrix_exp(term_operators[p.term], p.coefficient * p.dt) for pid, p in plan.primitives.items()}


def realize_plan(plan: TrotterPlan, primitive_unitaries: Mapping[str, object]) -> ModelUnitary:
    mats = {}
    for pid in plan.primitives:
        if pid not in primitive_unitaries:
            if pid in plan.used_primitives():
                raise KeyError(f"no unitary supplied for primitive {pid!r}")
            continue
        u = primitive_unitaries[pid]
        mats[pid] = np.asarray(u.matrix if isinstance(u, ModelUnitary) else u, dtype=complex)
    dims = {m.shape for m in mats.values()}
    if len(dims) != 1 or any(s[0] != s[1] for s in dims):
        raise ValueError(f"primitive unitaries must share one square shape, got {sorted(dims)}")
    dim = dims.pop()[0]
    cycle = np.eye(dim, dtype=complex)
    for pid in plan.cycle():
        cycle = cycle @ mats[pid]
    return ModelUnitary(np.linalg.matrix_power(cycle, plan.q), plan.T_s, "trotter")


def trotter_error_bound(terms: Sequence[tuple[float, object]], q: int, T_s: float) -> float:
    """Leading-order bound ``T_s^2/(2q) * || sum_{l>m} [c_l H_l, c_m H_m] ||_2``."""
    if len(terms) < 2:
        raise ValueError("the bound needs at least two terms")
    mats = [c * (h.matrix if isinstance(h, FockOperator) else np.asarray(h)) for c, h in terms]
    acc = np.zeros_like(mats[0], dtype=complex)
    for l in range(len(mats)):
        for m in range(l):
            acc += mats[l] @ mats[m] - mats[m] @ mats[l]
    return float(T_s ** 2 / (2 * q) * np.linalg.norm(acc, 2))
