import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pulsetrotter.model import EbhParams, ebh_terms, exact_evolution
from pulsetrotter.propagation import matrix_exp
from pulsetrotter.trotter import (ParamGrid, Perturbation, TrotterPlan, plan_baseline, plan_symmetric,
                                  plan_with_disorder, primitive_matrices, realize_plan, trotter_error_bound)


def expand(plan):
    # oracle: build the flattened product by explicit string expansion
    out = []
    for _ in range(plan.q):
        for pid, reps in plan.steps:
            out += [pid] * reps
    return out


def ebh_plan_3site(q, T_s=1.0, n_v=1):
    p = EbhParams(sites=3, n_v=n_v)
    terms = ebh_terms(p)
    grids = [ParamGrid(delta_lambda=abs(c) or 1.0, lambda_min=c) for c, _ in terms]
    plan = plan_baseline(grids, q, T_s)
    return p, plan, [op for _, op in terms]


def test_grid_values():
    g = ParamGrid(0.1, lambda_min=0.2, n=3, n_plus=4, n_minus=1)
    assert g.value == pytest.approx(0.5)
    assert g.symmetric_value == pytest.approx(0.3)
    with pytest.raises(ValueError):
        ParamGrid(0.0)
    with pytest.raises(ValueError):
        ParamGrid(0.1).symmetric_value
    with pytest.raises(ValueError):
        Perturbation(-0.1)


def test_baseline_ebh_shape():
    plan = plan_baseline([ParamGrid(0.1, lambda_min=-0.1, n=0), ParamGrid(0.1, lambda_min=0.1, n=2)], 6, 1.0,
                         term_names=["BH", "E"])
    assert plan.cycle() == ["BH:min", "E:min", "E:+step", "E:+step"]
    assert len(plan.primitives) == 4
    assert plan.dt == pytest.approx(1 / 6)
    assert plan.application_order()[:4] == ["E:+step", "E:+step", "E:min", "BH:min"]


def test_baseline_lengths():
    plan = plan_baseline([ParamGrid(1.0)], 3, 1.0)
    assert plan.cycle() == ["t0:min"]
    plan = plan_baseline([ParamGrid(1.0, n=2), ParamGrid(1.0, n=3)], 4, 1.0)
    assert plan.flattened_length() == 28 == len(expand(plan))
    with pytest.raises(ValueError):
        plan_baseline([], 1, 1.0)
    with pytest.raises(ValueError):
        plan_baseline([ParamGrid(1.0)], 0, 1.0)


def test_symmetric_plans():
    plan = plan_symmetric([ParamGrid(0.1, n_plus=2, n_minus=0)], 6, 1.0)
    assert len(plan.cycle()) == 2
    plan = plan_symmetric([ParamGrid(0.1, n_plus=3, n_minus=1)], 2, 1.0)
    assert plan.flattened_length() == 8 == len(expand(plan))
    with pytest.raises(ValueError):
        plan_symmetric([ParamGrid(0.1)], 2, 1.0)


def test_symmetric_inverse_pair():
    h = np.diag([0.0, 1.0, 2.0])
    plan = plan_symmetric([ParamGrid(0.3, n_plus=2, n_minus=2)], 3, 1.0)
    U = realize_plan(plan, primitive_matrices(plan, [h]))
    assert np.allclose(U.matrix, np.eye(3), atol=1e-14)


def test_disorder_merge():
    g = ParamGrid(0.1, lambda_min=0.0, n=2)
    plan = plan_with_disorder([g], [Perturbation(0.1, 1, 0)], 2, 1.0)
    assert dict(plan.steps)["t0:+step"] == 3
    plan = plan_with_disorder([g], [Perturbation(0.1, 0, 5)], 2, 1.0)
    assert dict(plan.steps)["t0:-step"] == 3 and plan.notes
    base = plan_baseline([g], 2, 1.0)
    plan = plan_with_disorder([g], [Perturbation(0.1, 0, 0)], 2, 1.0)
    assert plan.cycle() == base.cycle()
    plan = plan_with_disorder([g], [Perturbation(0.05, 2, 1)], 2, 1.0)
    assert plan.cycle() == ["t0:min", "t0:+step", "t0:+step", "t0:-eps", "t0:+eps", "t0:+eps"]
    assert plan.flattened_length() == len(expand(plan))


def test_json_roundtrip():
    plan = plan_with_disorder([ParamGrid(0.1, n=1)], [Perturbation(0.1, 0, 3)], 4, 2.0)
    doc = json.loads(plan.to_json())
    assert set(doc) >= {"q", "T_s_ns", "primitives", "cycle"}
    back = TrotterPlan.from_json(plan.to_json())
    assert back == plan and back.notes == plan.notes


def test_realize_plan_checks():
    plan = plan_baseline([ParamGrid(1.0)], 1, 1.0)
    assert np.array_equal(realize_plan(plan, {"t0:min": np.eye(2)}).matrix, np.eye(2))
    plan = plan_baseline([ParamGrid(1.0, n=1), ParamGrid(1.0, n=1)], 1, 1.0)
    mats = {"t0:min": np.eye(2), "t0:+step": np.eye(2), "t1:min": np.eye(3), "t1:+step": np.eye(3)}
    with pytest.raises(ValueError):
        realize_plan(plan, mats)
    with pytest.raises(KeyError):
        realize_plan(plan, {"t0:min": np.eye(2)})


def test_two_site_ebh_trotter_is_exact():
    # hopping and n1 n2 commute on two hard-core sites
    for n_v in (1, 2, 3):
        p = EbhParams(n_v=n_v)
        terms = ebh_terms(p)
        plan = plan_baseline([ParamGrid(0.1, lambda_min=p.J), ParamGrid(0.1, lambda_min=0.1, n=n_v - 1)], 6, 1.0)
        U = realize_plan(plan, primitive_matrices(plan, [op for _, op in terms]))
        assert np.max(np.abs(U.matrix - exact_evolution(p, 1.0).matrix)) <= 1e-12
        assert trotter_error_bound(terms, 6, 1.0) == 0.0


def test_three_site_first_order_convergence():
    errs = {}
    for q in (2, 4, 8, 16):
        p, plan, ops = ebh_plan_3site(q, T_s=1.0, n_v=2)
        U = realize_plan(plan, primitive_matrices(plan, ops)).matrix
        errs[q] = np.linalg.norm(U - exact_evolution(p, 1.0).matrix, 2)
        assert errs[q] <= trotter_error_bound(ebh_terms(p), q, 1.0) * 1.01
    for q in (2, 4, 8):
        assert 0.4 <= errs[2 * q] / errs[q] <= 0.6


def test_bound_scaling():
    p = EbhParams(sites=3)
    b6 = trotter_error_bound(ebh_terms(p), 6, 1.0)
    assert b6 > 0
    assert trotter_error_bound(ebh_terms(p), 12, 1.0) == pytest.approx(b6 / 2, rel=1e-15)
    with pytest.raises(ValueError):
        trotter_error_bound(ebh_terms(p)[:1], 6, 1.0)


@given(st.integers(0, 4), st.integers(0, 4), st.integers(1, 5))
def test_baseline_distinct_primitives_2L(n0, n1, q):
    plan = plan_baseline([ParamGrid(0.1, n=n0), ParamGrid(0.2, n=n1)], q, 1.0)
    assert len(plan.primitives) == 4
    assert plan.flattened_length() == len(expand(plan)) == q * (2 + n0 + n1)


@given(st.integers(0, 4), st.integers(0, 4), st.integers(0, 3), st.integers(1, 8))
def test_variants_agree_for_commuting_terms(n_plus, n_minus, n_eps, q):
    # diagonal generators commute, so every decomposition is exact
    h = [np.diag([0.0, 1.0, -0.5]), np.diag([0.3, 0.0, 1.0])]
    d = 0.1
    lam = (n_plus - n_minus) * d
    exact = matrix_exp(lam * h[0] + 0.2 * h[1], 1.0)
    sym = plan_symmetric([ParamGrid(d, n_plus=n_plus, n_minus=n_minus), ParamGrid(d, n_plus=2, n_minus=0)], q, 1.0)
    assert np.allclose(realize_plan(sym, primitive_matrices(sym, h)).matrix, exact, atol=1e-10)
    dis = plan_with_disorder([ParamGrid(d, lambda_min=lam - n_eps * d, n=0), ParamGrid(d, lambda_min=0.2)],
                             [Perturbation(d, n_eps, 0), None], q, 1.0)
    assert np.allclose(realize_plan(dis, primitive_matrices(dis, h)).matrix, exact, atol=1e-10)


def test_variants_agree_at_large_q_noncommuting():
    p = EbhParams(sites=3)
    ops = [op for _, op in ebh_terms(p)]
    exact = exact_evolution(p, 1.0).matrix
    d = 0.1
    q = 64
    # J = -0.1 on hopping bonds (n_minus=1), V = 0.1 on density bonds (n_plus=1)
    sym = plan_symmetric([ParamGrid(d, n_plus=0, n_minus=1), ParamGrid(d, n_plus=1, n_minus=0)] * 2, q, 1.0)
    base = plan_baseline([ParamGrid(d, lambda_min=-0.1), ParamGrid(d, lambda_min=0.1)] * 2, q, 1.0)
    dis = plan_with_disorder([ParamGrid(d, lambda_min=0.0), ParamGrid(d, lambda_min=0.1)] * 2,
                             [Perturbation(d, 0, 1), None] * 2, q, 1.0)
    mats = [realize_plan(pl, primitive_matrices(pl, ops)).matrix for pl in (sym, base, dis)]
    for m in mats:
        assert np.max(np.abs(m - exact)) <= 1e-3
    assert np.max(np.abs(mats[0] - mats[1])) <= 1e-3
