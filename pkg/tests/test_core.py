import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drmcot.core import (
    DenseBound,
    DenseCost,
    Grid1DCost,
    Grid2DCost,
    Marginals,
    ProblemInstance,
    RankOnePlusDenseBound,
    ReductionRecord,
    TransportPlan,
    UniformBound,
    bound_violation,
    lift_plan,
    marginal_residuals,
    objective,
    reduce_to_upper_bounded,
    regularized_objective,
    validate_feasibility,
    zero_bound,
)
from drmcot.lp import lp_solve_exact


def test_single_cell_is_feasible():
    inst = ProblemInstance.from_arrays([[0.0]], [1.0], [1.0], upper=[[1.0]], lower=[[0.0]])
    assert validate_feasibility(inst).ok


def test_row_capacity_violation_names_rows():
    inst = ProblemInstance.from_arrays(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5], upper=0.1)
    res = validate_feasibility(inst)
    assert not res.ok
    assert res.rows() == [0, 1]
    assert res.cols() == [0, 1]


def test_lower_and_upper_bounds_ok():
    # 0.1 <= 0.6 <= 0.8 and 0.1 <= 0.4 <= 0.8, same for columns
    inst = ProblemInstance.from_arrays(np.zeros((2, 2)), [0.6, 0.4], [0.5, 0.5],
                                       upper=0.4, lower=0.05)
    assert validate_feasibility(inst).ok


def test_mass_mismatch_reported():
    inst = ProblemInstance.from_arrays(np.zeros((2, 2)), [0.6, 0.6], [0.5, 0.5], upper=1.0)
    kinds = {v.kind for v in validate_feasibility(inst).violations}
    assert "mass_u" in kinds


def test_theta_above_eta_reported():
    lower = np.array([[0.3, 0.0], [0.0, 0.0]])
    upper = np.array([[0.2, 1.0], [1.0, 1.0]])
    inst = ProblemInstance.from_arrays(np.zeros((2, 2)), [0.5, 0.5], [0.5, 0.5],
                                       upper=upper, lower=lower)
    assert "bounds" in {v.kind for v in validate_feasibility(inst).violations}


def test_marginals_reject_negative_and_nan():
    with pytest.raises(ValueError):
        Marginals([0.5, -0.1], [1.0])
    with pytest.raises(ValueError):
        Marginals([np.nan], [1.0])


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        ProblemInstance.from_arrays(np.zeros((2, 3)), [0.5, 0.5], [0.5, 0.5], upper=1.0)


def test_reduce_identity_for_zero_lower():
    inst = ProblemInstance.from_arrays(np.ones((2, 2)), [0.5, 0.5], [0.5, 0.5], upper=1.0)
    red, rec = reduce_to_upper_bounded(inst)
    assert red is inst
    assert rec.k_theta == 1.0


def test_reduce_worked_example():
    inst = ProblemInstance.from_arrays(np.zeros((2, 2)), [0.6, 0.4], [0.5, 0.5],
                                       upper=0.4, lower=0.1)
    red, rec = reduce_to_upper_bounded(inst)
    assert rec.k_theta == pytest.approx(0.6, abs=1e-15)
    np.testing.assert_allclose(red.u, [2 / 3, 1 / 3], atol=1e-15)
    assert red.lower.is_zero()
    assert isinstance(red.upper, UniformBound)
    assert red.upper.value == pytest.approx(0.5)


def test_lift_identity():
    g = TransportPlan(np.array([[0.2, 0.3], [0.4, 0.1]]))
    out = lift_plan(g, ReductionRecord(1.0, zero_bound(2, 2)))
    np.testing.assert_array_equal(out.gamma, g.gamma)


def test_lift_worked_example():
    rec = ReductionRecord(0.6, UniformBound(2, 2, 0.1))
    out = lift_plan(TransportPlan(np.array([[2 / 3, 0.0], [0.0, 1 / 3]])), rec)
    np.testing.assert_allclose(out.gamma, [[0.5, 0.1], [0.1, 0.3]], atol=1e-15)


def _random_theta_instance(rng, n, m):
    u = rng.random(n) + 0.2
    v = rng.random(m) + 0.2
    u /= u.sum()
    v /= v.sum()
    theta = 0.3 * np.outer(u, v) * rng.random((n, m))
    eta = theta + np.outer(u, v) * (1.0 + 2.0 * rng.random((n, m)))
    C = rng.random((n, m))
    return ProblemInstance.from_arrays(C, u, v, upper=eta, lower=theta)


def test_reduced_objective_relation_by_lp():
    rng = np.random.default_rng(3)
    inst = _random_theta_instance(rng, 3, 3)
    red, rec = reduce_to_upper_bounded(inst)
    direct = lp_solve_exact(inst)
    reduced = lp_solve_exact(red)
    theta_obj = objective(inst.cost, TransportPlan(inst.lower.dense()))
    # <C', g'> = k <C, g'>, and g = k g' + theta
    assert direct.objective == pytest.approx(reduced.objective + theta_obj, abs=1e-9)


def test_round_trip_lp_on_4x4():
    rng = np.random.default_rng(11)
    inst = _random_theta_instance(rng, 4, 4)
    red, rec = reduce_to_upper_bounded(inst)
    lifted = lift_plan(lp_solve_exact(red).plan, rec)
    assert objective(inst.cost, lifted) == pytest.approx(lp_solve_exact(inst).objective,
                                                         abs=1e-9)
    assert bound_violation(inst, lifted) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_reduce_lift_round_trip_property(n, m, seed):
    rng = np.random.default_rng(seed)
    inst = _random_theta_instance(rng, n, m)
    red, rec = reduce_to_upper_bounded(inst)
    assert red.u.sum() == pytest.approx(1.0, abs=1e-10)
    assert red.v.sum() == pytest.approx(1.0, abs=1e-10)
    g = rng.random((n, m))
    # reduce the plan by hand, then lift it back
    g_red = (g - inst.lower.dense()) / rec.k_theta
    back = lift_plan(TransportPlan(g_red), rec)
    np.testing.assert_allclose(back.gamma, g, atol=1e-12, rtol=0)


def test_objective_examples():
    C = DenseCost(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert objective(C, TransportPlan(np.zeros((2, 2)))) == 0.0
    assert objective(C, TransportPlan(np.diag([0.5, 0.5]))) == 0.0
    assert objective(C, TransportPlan([[0.0, 0.5], [0.5, 0.0]])) == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_objective_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    C = DenseCost(rng.random((4, 5)))
    g1, g2 = rng.random((4, 5)), rng.random((4, 5))
    lhs = objective(C, TransportPlan(a * g1 + b * g2))
    rhs = a * objective(C, TransportPlan(g1)) + b * objective(C, TransportPlan(g2))
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_objective_blockwise_matches_dense():
    C = Grid1DCost(37, 0.1)
    g = np.random.default_rng(0).random((37, 37))
    full = float(np.sum(C.dense() * g))
    assert objective(C, TransportPlan(g), block_rows=5) == pytest.approx(full, rel=1e-13)


def test_regularized_objective_examples():
    inst = ProblemInstance.from_arrays([[0.0]], [1.0], [1.0], upper=[[1.0]])
    plan = TransportPlan([[0.5]])
    assert regularized_objective(inst, plan, 0.0) == objective(inst.cost, plan)
    assert regularized_objective(inst, plan, 1.0) == pytest.approx(-np.log(2.0), abs=1e-15)


def test_regularized_objective_prefers_center():
    inst = ProblemInstance.from_arrays([[0.0]], [1.0], [1.0], upper=[[1.0]])
    vals = [regularized_objective(inst, TransportPlan([[x]]), 1.0) for x in (0.1, 0.3, 0.5)]
    assert vals[0] > vals[1] > vals[2]


def test_regularized_objective_scores_vertices_and_rejects_outside():
    inst = ProblemInstance.from_arrays([[2.0]], [1.0], [1.0], upper=[[1.0]])
    # 0 ln 0 = 0 at the upper bound
    assert regularized_objective(inst, TransportPlan([[1.0]]), 0.5) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        regularized_objective(inst, TransportPlan([[1.5]]), 0.5)


def test_marginal_residual_examples():
    rng = np.random.default_rng(1)
    u = rng.random(3)
    v = rng.random(4)
    u /= u.sum()
    v /= v.sum()
    assert marginal_residuals(TransportPlan(np.outer(u, v)), Marginals(u, v)) == \
        pytest.approx((0.0, 0.0), abs=1e-16)
    assert marginal_residuals(TransportPlan([[0.0]]), Marginals([1.0], [1.0])) == (1.0, 1.0)
    g = rng.random((3, 3))
    assert marginal_residuals(TransportPlan(g), Marginals(g.sum(1), g.sum(0))) == (0.0, 0.0)


def test_grid_costs():
    c1 = Grid1DCost(10, 0.1)
    assert c1.entry(4, 4) == 0.0
    assert c1.entry(0, 3) == pytest.approx(0.09)
    c2 = Grid2DCost(3, 1.0, 1.0)
    # (0, 0) -> 0 and (1, 1) -> 1 * 3 + 1 = 4
    assert c2.entry(0, 4) == pytest.approx(2.0)
    assert c2.entry(5, 5) == 0.0
    np.testing.assert_allclose(c2.block(np.array([1, 2]), np.array([0, 4])),
                               c2.dense()[np.ix_([1, 2], [0, 4])])


def test_scaled_costs_multiply():
    for c in (Grid1DCost(6, 0.2), Grid2DCost(3, 0.5, 0.25), DenseCost(np.arange(6.0).reshape(2, 3))):
        np.testing.assert_allclose(c.scaled(0.37).dense(), 0.37 * c.dense(), rtol=1e-14)


def test_rank_one_bound_is_implicit_and_consistent():
    rng = np.random.default_rng(2)
    a, b = rng.random(5), rng.random(4)
    noise = rng.random((5, 4))
    bnd = RankOnePlusDenseBound(a, b, 2.0, noise, 0.25)
    dense = 2.0 * np.outer(a, b) + 0.25 * noise
    np.testing.assert_allclose(bnd.dense(), dense, rtol=1e-15)
    np.testing.assert_allclose(bnd.row_sums(), dense.sum(1), rtol=1e-13)
    np.testing.assert_allclose(bnd.col_sums(), dense.sum(0), rtol=1e-13)
    assert bnd.entry(3, 2) == pytest.approx(dense[3, 2])
    pure = RankOnePlusDenseBound(a, b, 2.0, None, 0.0)
    np.testing.assert_allclose(pure.block(np.array([0, 4])), 2.0 * np.outer(a[[0, 4]], b))


def test_dense_bound_matches_block():
    m = np.arange(12.0).reshape(3, 4)
    bnd = DenseBound(m)
    np.testing.assert_array_equal(bnd.block(np.array([2]), np.array([1, 3])), [[9.0, 11.0]])
    assert bnd.total() == m.sum()
