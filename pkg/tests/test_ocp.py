import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdgmpc.errors import AssumptionError, DimensionError, DomainError, SingularMatrixError
from pdgmpc.model import ContinuousPlant, steady_input
from pdgmpc.ocp import (build_equality, build_inequality, build_objective, build_ocp,
                        build_projection, condense)

from conftest import dc_spec
from oracles import enumerate_qp, rank_by_elimination


def test_equality_single_step():
    A = np.array([[0.9, 0.1], [0.0, 0.8]])
    B = np.array([[1.0], [0.5]])
    C, D = build_equality(A, B, 1)
    np.testing.assert_array_equal(C, np.hstack([-B, np.eye(2)]))
    np.testing.assert_array_equal(D, -A)


def test_equality_two_steps_structure():
    A = np.array([[0.9, 0.1], [0.0, 0.8]])
    B = np.array([[1.0], [0.5]])
    C, D = build_equality(A, B, 2)
    # w = [u0, u1, x1(2), x2(2)]
    np.testing.assert_array_equal(C[2:, 2:4], -A)
    np.testing.assert_array_equal(C[2:, 4:6], np.eye(2))
    np.testing.assert_array_equal(C[2:, 1:2], -B)
    np.testing.assert_array_equal(D[2:], 0.0)


def test_equality_residual_zero_on_simulated_trajectory(dc):
    spec = dc["spec"]
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal(2)
    u = rng.standard_normal(30)
    xs, x = [], x0
    for k in range(30):
        x = spec.A_h @ x + spec.B_h @ u[k:k + 1]
        xs.append(x)
    w = np.r_[u, np.concatenate(xs)]
    assert np.linalg.norm(spec.h(w, x0)) <= 1e-10


def test_dc_equality_rank(dc):
    assert rank_by_elimination(dc["spec"].C) == 60


def test_equality_dimension_errors():
    with pytest.raises(DimensionError):
        build_equality(np.eye(2), np.ones((3, 1)), 2)
    with pytest.raises(DomainError):
        build_equality(np.eye(2), np.ones((2, 1)), 0)


def test_inequality_examples(dc):
    G, g0 = build_inequality([26.6], 1, 2, 1)
    np.testing.assert_array_equal(g0, [-26.6])
    np.testing.assert_array_equal(G, [[1.0, 0.0, 0.0]])
    spec = dc["spec"]
    assert spec.n_mu == 30
    assert np.all(spec.g(np.zeros(spec.nw)) < 0)


def test_inequality_requires_strict_interior():
    with pytest.raises(AssumptionError, match=r"g\(0\) < 0"):
        build_inequality([0.0], 3, 2, 1)


def test_objective_examples():
    P, s, r = build_objective(1.0, 1.0, 3, 2, 1)
    np.testing.assert_array_equal(P, np.eye(9))
    assert s == r == 1.0
    P, s, r = build_objective(1.0, 0.1, 30, 2, 1)
    assert (s, r) == (0.1, 1.0)
    np.testing.assert_array_equal(np.diag(P)[:30], 0.1)
    np.testing.assert_array_equal(np.diag(P)[30:], 1.0)
    Pl, _, _ = build_objective(1.0, 0.1, 30, 2, 1, "literal")
    np.testing.assert_array_equal(np.diag(Pl)[:60], 1.0)
    np.testing.assert_array_equal(np.diag(Pl)[60:], 0.1)
    with pytest.raises(DomainError):
        build_objective(0.0, 1.0, 3, 2, 1)
    with pytest.raises(DomainError):
        build_objective(1.0, 1.0, 3, 2, 1, "sideways")


def test_half_form_gradient_is_column_of_P():
    _, _, spec = dc_spec(cost_scale=0.5)
    e1 = np.zeros(spec.nw)
    e1[0] = 1.0
    np.testing.assert_array_equal(spec.grad_f(e1), spec.P[:, 0])
    assert not spec.grad_f(np.zeros(spec.nw)).any()


def test_projection_simple_example():
    pp = build_projection(np.array([[1.0, 0.0]]), np.array([[0.0]]))
    np.testing.assert_allclose(pp.K, np.diag([0.0, 1.0]), atol=1e-15)
    np.testing.assert_allclose(pp.L, 0.0, atol=1e-15)


def test_projection_invariants(dc):
    spec, pp = dc["spec"], dc["proj"]
    assert np.abs(spec.C @ pp.K).max() <= 1e-9
    assert np.abs(spec.C @ pp.L + spec.D).max() <= 1e-9
    assert np.abs(pp.K @ pp.K - pp.K).max() <= 1e-9


def test_projection_random_points(dc):
    spec, pp = dc["spec"], dc["proj"]
    rng = np.random.default_rng(1)
    for _ in range(100):
        w, x = 10 * rng.standard_normal(spec.nw), 10 * rng.standard_normal(2)
        assert np.linalg.norm(spec.h(pp.apply(w, x), x)) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_projection_is_closest_feasible_point(seed):
    _, _, spec = dc_spec(N=5)
    pp = build_projection(spec.C, spec.D)
    rng = np.random.default_rng(seed)
    w, x0 = rng.standard_normal(spec.nw), rng.standard_normal(2)
    wp = pp.apply(w, x0)
    u = rng.standard_normal(5)
    xs, x = [], x0
    for k in range(5):
        x = spec.A_h @ x + spec.B_h @ u[k:k + 1]
        xs.append(x)
    feasible = np.r_[u, np.concatenate(xs)]
    assert np.linalg.norm(wp - w) <= np.linalg.norm(w - feasible) + 1e-12


def test_projection_rank_deficient():
    C = np.array([[1.0, 1.0], [2.0, 2.0]])
    with pytest.raises(SingularMatrixError, match="rank"):
        build_projection(C, np.zeros((2, 1)))


def test_condense_scalar_example():
    # a_h = b_h = 1, N = 1, unit weights: f = u^2 + (x0 + u)^2
    plant = ContinuousPlant([[0.0]], [[1.0]])
    target = steady_input(plant, [0.0])
    spec = build_ocp(plant, target, N=1, dtau=1.0, state_weight=1.0, input_weight=1.0,
                     u_upper=[100.0], cost_scale=1.0)
    qp = condense(spec)
    assert qp.H[0, 0] == pytest.approx(4.0)  # Hessian of u^2 + (x0 + u)^2
    for x0 in (-1.0, 0.5, 2.0):
        u = np.linalg.solve(qp.H, -qp.linear_term([x0]))
        assert u[0] == pytest.approx(-x0 / 2)
        grid = np.linspace(-3, 3, 60001)
        assert grid[np.argmin(grid**2 + (x0 + grid) ** 2)] == pytest.approx(u[0], abs=1e-4)
    assert not qp.linear_term([0.0]).any()


def test_condense_dc_dimensions(dc):
    qp = condense(dc["spec"])
    assert qp.H.shape == (30, 30)
    assert np.linalg.eigvalsh(qp.H)[0] > 0


def test_condensed_objective_equals_full(dc):
    spec = dc["spec"]
    qp = condense(spec)
    rng = np.random.default_rng(2)
    for _ in range(10):
        u, x = rng.standard_normal(30), rng.standard_normal(2)
        w = qp.expand(u, x)
        assert np.linalg.norm(spec.h(w, x)) <= 1e-9
        assert qp.objective(u, x) == pytest.approx(spec.f(w), rel=1e-10)
        np.testing.assert_allclose(qp.G_u @ u + qp.offset(x), spec.g(w), atol=1e-12)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_condensed_and_full_minimisers_agree(small, N):
    plant, target = small["plant"], small["target"]
    spec = build_ocp(plant, target, N=N, dtau=0.2, state_weight=1.0, input_weight=0.5,
                     u_upper=[1.5], cost_scale=1.0)
    qp = condense(spec)
    rng = np.random.default_rng(N)
    for _ in range(20):
        x0 = 4 * rng.standard_normal(1)
        u_c, _ = enumerate_qp(qp.H, qp.linear_term(x0), qp.G_u, -qp.offset(x0))
        w_f, _ = enumerate_qp(spec.hessian, np.zeros(spec.nw), spec.G, -spec.g0, spec.C,
                              -spec.D @ x0)
        np.testing.assert_allclose(u_c, w_f[:N], atol=1e-7)


def test_condense_rejects_extra_equalities():
    plant = ContinuousPlant([[-1.0]], [[1.0]])
    target = steady_input(plant, [0.0])
    spec = build_ocp(plant, target, N=2, dtau=0.1, state_weight=1.0, input_weight=1.0,
                     u_upper=[1.0], extra_eq=(np.array([[0.0, 0.0, 0.0, 1.0]]), np.zeros((1, 1))))
    assert spec.n_lambda == 3
    with pytest.raises(DomainError):
        condense(spec)


def test_spec_invariants(dc):
    spec = dc["spec"]
    assert spec.nw == 90 and spec.n_lambda == 60
    w = np.random.default_rng(3).standard_normal(90)
    assert spec.input_of(w)[0] == w[0]
    assert 0 < spec.sigma <= spec.rho
