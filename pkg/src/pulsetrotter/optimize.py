"""Multistart L-BFGS minimization of the GOAT objective.

Guess pools are drawn from a counter-based generator keyed by
``(seed, guess index)``, so a pool of any size is a prefix-stable,
order-independent function of the seed.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .device import TWO_PI
from .goat import GoatProblem, infidelity, infidelity_and_gradient
from .propagation import IntegratorConfig, PropagationError

TERMINATIONS = ("gradient_converged", "max_iterations", "line_search_failed")
LBFGS_MEMORY = 10
ARMIJO_C1 = 1e-4
CONTRACTION = 0.5
MAX_BACKTRACKS = 40


@dataclass(frozen=True)
class GuessRanges:
    """Uniform sampling ranges; ``mu_range`` is in units of ``T_c``."""

    a_range: tuple[float, float] = (-0.005 * TWO_PI, 0.003 * TWO_PI)
    mu_range: tuple[float, float] = (1 / 3, 2 / 3)
    sigma_range: tuple[float, float] = (1.0, 10.0)

    def __post_init__(self):
        for name in ("a_range", "mu_range", "sigma_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} needs lo < hi, got ({lo}, {hi})")
        if self.sigma_range[0] <= 0:
            raise ValueError("sigma range must be positive")


@dataclass
class OptimizationRecord:
    seed: int
    guess_index: int
    initial_params: list[float]
    final_params: list[float]
    infidelity_trace: list[float]
    final_gradient_inf_norm: float
    iterations: int
    termination: str
    M: int = 0
    T_c_ns: float = 0.0
    q: int | None = None
    target_label: str = ""
    integrator_tolerances: dict = field(default_factory=dict)
    verified_infidelity: float | None = None
    wall_time_s: float = 0.0
    optimizer: dict = field(default_factory=lambda: {"method": "L-BFGS", "memory": LBFGS_MEMORY,
                                                     "armijo_c1": ARMIJO_C1, "contraction": CONTRACTION})

    @property
    def final_infidelity(self) -> float:
        """Tight-tolerance value when available, else the last optimizer value."""
        if self.verified_infidelity is not None:
            return self.verified_infidelity
        return self.infidelity_trace[-1]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> OptimizationRecord:
        return cls(**doc)


def guess_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for guess ``index``: Philox with 128-bit key ``(seed, index)``."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    return np.random.Generator(np.random.Philox(key=(index << 64) | (seed & (2 ** 64 - 1))))


def sample_guess(ranges: GuessRanges, M: int, T_c: float, seed: int, index: int) -> np.ndarray:
    u = guess_rng(seed, index).random((M, 3))
    lo = np.array([ranges.a_range[0], ranges.mu_range[0] * T_c, ranges.sigma_range[0]])
    hi = np.array([ranges.a_range[1], ranges.mu_range[1] * T_c, ranges.sigma_range[1]])
    return (lo + u * (hi - lo)).reshape(-1)


def sample_guesses(ranges: GuessRanges, M: int, count: int, seed: int, T_c: float) -> np.ndarray:
    """``(count, 3M)`` array of uniform guesses; row ``i`` depends only on ``(seed, i)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if M < 1:
        raise ValueError("M must be >= 1")
    return np.stack([sample_guess(ranges, M, T_c, seed, i) for i in range(count)])


def _safe_infidelity(problem, x) -> float:
    try:
        return infidelity(problem, x).infidelity
    except PropagationError:
        return math.inf


def _eval_chunk(args):
    problem, xs = args
    return [_safe_infidelity(problem, x) for x in xs]


def rank_guesses(problem: GoatProblem, guesses, workers: int = 1):
    """Stable ascending sort by infidelity (no gradients).

    Returns ``(order, values)``: ``order[k]`` is the index into ``guesses`` of
    the k-th best guess and ``values`` the infidelities in that order.
    """
    guesses = np.asarray(guesses, dtype=float)
    if workers > 1 and len(guesses) > 1:
        chunks = np.array_split(guesses, workers)
        with ProcessPoolExecutor(workers) as ex:
            vals = np.concatenate([np.asarray(v) for v in ex.map(_eval_chunk, [(problem, c) for c in chunks])])
    else:
        vals = np.array([_safe_infidelity(problem, x) for x in guesses])
    order = np.argsort(vals, kind="stable")
    return order, vals[order]


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append((rho, a))
        q -= a * y
    if s_hist:
        q *= (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _as_fg(objective) -> Callable:
    if isinstance(objective, GoatProblem):
        def fg(x):
            v = infidelity_and_gradient(objective, x)
            return v.infidelity, v.gradient
        return fg
    return objective


def minimize(objective, initial_params, max_iter: int = 500, grad_tol: float = 1e-5,
             memory: int = LBFGS_MEMORY) -> OptimizationRecord:
    """L-BFGS with Armijo backtracking.

    ``objective`` is a :class:`GoatProblem` or a callable ``x -> (f, grad)``.
    A trial point whose propagation fails counts as a failed Armijo test.
    """
    t0 = time.perf_counter()
    fg = _as_fg(objective)
    x = np.array(initial_params, dtype=float)
    f, g = fg(x)
    g = np.asarray(g, dtype=float)
    trace = [float(f)]
    s_hist, y_hist = [], []
    it = 0
    while True:
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm < grad_tol:
            term = "gradient_converged"
            break
        if it >= max_iter:
            term = "max_iterations"
            break
        accepted = False
        for attempt in range(2):
            d = _two_loop(g, s_hist, y_hist)
            slope = float(g @ d)
            if not slope < 0:
                s_hist.clear()
                y_hist.clear()
                d = -g
                slope = float(g @ d)
            alpha = 1.0 if s_hist else 1.0 / max(1.0, float(np.linalg.norm(g)))
            for _ in range(MAX_BACKTRACKS):
                x_new = x + alpha * d
                try:
                    f_new, g_new = fg(x_new)
                except PropagationError:
                    f_new, g_new = math.inf, None
                if f_new <= f + ARMIJO_C1 * alpha * slope:
                    accepted = True
                    break
                alpha *= CONTRACTION
            if accepted or not s_hist:
                break
            # retry once along steepest descent with fresh memory
            s_hist.clear()
            y_hist.clear()
        if not accepted:
            term = "line_search_failed"
            break
        g_new = np.asarray(g_new, dtype=float)
        s, y = x_new - x, g_new - g
        if s @ y > 1e-16 * float(np.linalg.norm(s) * np.linalg.norm(y)) and s @ y > 0:
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, g = x_new, float(f_new), g_new
        trace.append(f)
        it += 1

    rec = OptimizationRecord(seed=-1, guess_index=-1, initial_params=np.asarray(initial_params, float).tolist(),
                             final_params=x.tolist(), infidelity_trace=trace, final_gradient_inf_norm=gnorm,
                             iterations=it, termination=term, wall_time_s=time.perf_counter() - t0)
    if isinstance(objective, GoatProblem):
        rec.M = objective.M
        rec.T_c_ns = objective.T_c
        rec.target_label = objective.target_label
        rec.integrator_tolerances = {"abs_tol": objective.integrator.abs_tol,
                                     "rel_tol": objective.integrator.rel_tol}
    return rec


def _restart(args):
    problem, x0, seed, index, max_iter, grad_tol, verify_cfg, q = args
    rec = minimize(problem, x0, max_iter=max_iter, grad_tol=grad_tol)
    rec.seed, rec.guess_index, rec.q = seed, int(index), q
    if verify_cfg is not None:
        t0 = time.perf_counter()
        try:
            rec.verified_infidelity = infidelity(problem.with_integrator(verify_cfg), rec.final_params).infidelity
        except PropagationError:
            rec.verified_infidelity = math.inf
        rec.wall_time_s += time.perf_counter() - t0
    return rec


def multistart(problem: GoatProblem, ranges: GuessRanges | None = None, n_starts: int = 10, pool: int = 10000,
               seed: int = 0, q: int | None = None, max_iter: int = 500, grad_tol: float = 1e-5,
               verify_cfg: IntegratorConfig | None = IntegratorConfig.tight(), workers: int = 1,
               log: Callable[[str], None] | None = None) -> list[OptimizationRecord]:
    """Rank one shared pool of guesses and run L-BFGS from the best ``n_starts``.

    Records come back sorted by ``(final_infidelity, guess_index)``. The final
    value is re-evaluated at ``verify_cfg`` tolerances unless that is None.
    """
    if not 1 <= n_starts <= pool:
        raise ValueError("need 1 <= n_starts <= pool")
    ranges = ranges or GuessRanges()
    guesses = sample_guesses(ranges, problem.M, pool, seed, problem.T_c)
    order, vals = rank_guesses(problem, guesses, workers)
    if log:
        log(f"pool of {pool} ranked: best {vals[0]:.3e}, median {np.median(vals):.3e}")
    jobs = [(problem, guesses[i], seed, i, max_iter, grad_tol, verify_cfg, q) for i in order[:n_starts]]
    if workers > 1 and n_starts > 1:
        with ProcessPoolExecutor(workers) as ex:
            records = list(ex.map(_restart, jobs))
    else:
        records = []
        for k, job in enumerate(jobs):
            records.append(_restart(job))
            if log:
                r = records[-1]
                log(f"restart {k}: guess {r.guess_index}, {r.iterations} it, {r.termination}, "
                    f"g={r.final_infidelity:.3e}")
    records.sort(key=lambda r: (r.final_infidelity, r.guess_index))
    return records
