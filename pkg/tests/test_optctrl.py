import numpy as np
import pytest

from bilqr.data import save_batch
from bilqr.errors import DivergenceError, InvalidInputError
from bilqr.ioc import estimate_cost
from bilqr.edmdc import fit_bilinear
from bilqr.optctrl import (OcProblem, QuadraticLiftedCost, generate_batch,
                           objective_and_gradient, predict, riccati_lqr,
                           rollout, solve, system_problem)
from bilqr.systems import make_system


def lqr_problem(system, weights, x0, T):
    Q, R = system.lifted_cost(weights)
    return system_problem(system, Q, R, np.asarray(x0, float), T)


# -- rollout ----------------------------------------------------------------------

def test_rollout_indexing():
    step = lambda x, u: x + u  # noqa: E731
    states = rollout(step, np.array([0.0]), np.array([[1.0], [2.0], [3.0]]))
    assert np.array_equal(states, [[0.0], [1.0], [3.0], [6.0]])


def test_rollout_single_steps():
    system = make_system("example2")
    x1 = system.step(np.array([1.0, 1.0]), np.zeros(2))
    assert np.allclose(x1, [1.003, 0.998])
    uni = make_system("unicycle")
    x1 = uni.step(np.zeros(3), np.array([1.0, 0.0]))
    assert np.allclose(x1, [0.01, 0.0, 0.0])


def test_rollout_divergence_reports_step():
    step = lambda x, u: x * 1e200  # noqa: E731
    with pytest.raises(DivergenceError) as exc:
        rollout(step, np.array([1.0]), np.zeros((5, 1)))
    assert exc.value.step == 1  # first overflow to inf happens at step 1


def test_rollout_rejects_non_finite_input():
    with pytest.raises(InvalidInputError):
        rollout(lambda x, u: x, np.array([np.nan]), np.zeros((2, 1)))


# -- objective and adjoint gradient -------------------------------------------------

def test_objective_zero_state_cost_is_control_energy():
    system = make_system("example2")
    prob = lqr_problem(system, (0, 0, 0, 0, 1, 1), [0.5, -0.5], 5)
    rng = np.random.default_rng(0)
    u = rng.standard_normal((5, 2))
    J, g, _ = objective_and_gradient(prob, u)
    assert np.isclose(J, 0.5 * np.sum(u**2))
    assert np.allclose(g, u)


def test_adjoint_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for case in range(50):
        name = ("example2", "unicycle", "linear-lqr")[case % 3]
        system = make_system(name, {"n": 2} if name == "linear-lqr" else None)
        weights = tuple(rng.uniform(0.1, 2.0, len(system.default_weights)))
        T = int(rng.integers(3, 12))
        x0 = rng.uniform(-1, 1, system.n)
        prob = lqr_problem(system, weights, x0, T)
        u = 0.3 * rng.standard_normal((T, system.m))
        _, g, _ = objective_and_gradient(prob, u)
        h = 1e-6
        idx = (int(rng.integers(T)), int(rng.integers(system.m)))
        du = np.zeros_like(u)
        du[idx] = h
        Jp = objective_and_gradient(prob, u + du)[0]
        Jm = objective_and_gradient(prob, u - du)[0]
        fd = (Jp - Jm) / (2 * h)
        assert abs(g[idx] - fd) <= 1e-5 * (1 + abs(fd)), f"case {case} ({name})"


# -- solver -------------------------------------------------------------------------

def test_scalar_lqr_matches_riccati():
    system = make_system("linear-lqr", {"a": 1.0, "b": 1.0})
    T = 10
    prob = lqr_problem(system, (1.0, 1.0), [1.0], T)
    sol = solve(prob)
    assert sol.converged
    gains = riccati_lqr(np.array([[1.0]]), np.array([[1.0]]),
                        np.eye(1), np.eye(1), T)
    x = np.array([1.0])
    for k in range(T):
        assert np.allclose(sol.controls[k], -gains[k] @ x, atol=1e-6)
        x = x + sol.controls[k]


def test_two_state_lqr_matches_riccati():
    system = make_system("linear-lqr", {"n": 2})
    A, B = np.array([[0.9, 0.2], [0.0, 0.8]]), np.array([[0.0], [1.0]])
    T = 15
    prob = lqr_problem(system, (1.0, 1.0, 1.0), [1.0, -0.5], T)
    sol = solve(prob)
    assert sol.converged
    gains = riccati_lqr(A, B, np.eye(2), np.eye(1), T)
    x = np.array([1.0, -0.5])
    for k in range(T):
        assert np.allclose(sol.controls[k], -gains[k] @ x, atol=1e-6)
        x = A @ x + B @ sol.controls[k]


def test_zero_state_cost_gives_zero_controls():
    system = make_system("example2")
    prob = lqr_problem(system, (0, 0, 0, 0, 1, 1), [0.8, -0.3], 6)
    sol = solve(prob)
    assert sol.converged and sol.iterations == 0
    assert np.array_equal(sol.controls, np.zeros((6, 2)))


def test_solution_is_stationary_under_perturbation():
    system = make_system("example2")
    prob = lqr_problem(system, system.default_weights, [0.6, 0.4], 20)
    sol = solve(prob)
    assert sol.converged
    rng = np.random.default_rng(2)
    for _ in range(10):
        d = rng.standard_normal(sol.controls.shape)
        d *= 1e-4 / np.linalg.norm(d)
        J_pert = objective_and_gradient(prob, sol.controls + d)[0]
        assert J_pert >= sol.objective - 1e-10


def test_horizon_and_dt_validation():
    system = make_system("example2")
    with pytest.raises(InvalidInputError):
        lqr_problem(system, system.default_weights, [0.0, 0.0], 2)
    with pytest.warns(UserWarning, match="coarse"):
        coarse = make_system("example2", dt=0.2)
        lqr_problem(coarse, coarse.default_weights, [0.0, 0.0], 5)


# -- batch generation ----------------------------------------------------------------

def test_generate_batch_is_deterministic(tmp_path):
    system = make_system("linear-lqr", {"a": 0.9, "b": 1.0})
    b1 = generate_batch(system, (1.0, 1.0), 4, 8, seed=11)
    b2 = generate_batch(system, (1.0, 1.0), 4, 8, seed=11)
    assert np.array_equal(b1.states, b2.states)
    assert np.array_equal(b1.controls, b2.controls)
    save_batch(b1, tmp_path / "a")
    save_batch(b2, tmp_path / "b")
    for f in sorted((tmp_path / "a").glob("traj_*.csv")):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    b3 = generate_batch(system, (1.0, 1.0), 4, 8, seed=12)
    assert not np.array_equal(b1.states, b3.states)


def test_generate_batch_controls_are_optimal():
    system = make_system("linear-lqr", {"a": 0.9, "b": 1.0})
    batch = generate_batch(system, (1.0, 1.0), 3, 10, seed=0)
    gains = riccati_lqr(np.array([[0.9]]), np.array([[1.0]]),
                        np.eye(1), np.eye(1), 10)
    for i in range(3):
        x = batch.states[i, 0]
        for k in range(10):
            assert np.allclose(batch.controls[i, k], -gains[k] @ x, atol=1e-6)
            x = 0.9 * x + batch.controls[i, k]


def test_generate_batch_validation():
    system = make_system("linear-lqr")
    with pytest.raises(InvalidInputError):
        generate_batch(system, (1.0, 1.0), 0, 10, seed=0)


# -- prediction round trip ------------------------------------------------------------

def test_predict_round_trip_on_linear_benchmark():
    system = make_system("linear-lqr", {"n": 2})
    batch = generate_batch(system, (1.0, 1.0, 1.0), 6, 15, seed=3)
    model = fit_bilinear(batch, system.dictionary)
    est = estimate_cost(model, batch)
    sol = predict(model, est, batch.states[0, 0], 15)
    assert sol.converged
    assert np.allclose(sol.states, batch.states[0], atol=1e-5)
    assert np.allclose(sol.controls, batch.controls[0], atol=1e-5)


def test_riccati_gain_shape_and_zero_horizon_start():
    gains = riccati_lqr(np.eye(2), np.ones((2, 1)), np.eye(2), np.eye(1), 4)
    assert len(gains) == 4
    # with no terminal cost the final control is free, so its gain is zero
    assert np.allclose(gains[-1], 0.0)


def test_quadratic_lifted_cost_gradients():
    system = make_system("example2")
    Q, R = system.default_cost()
    cost = QuadraticLiftedCost(system.dictionary, Q, R)
    rng = np.random.default_rng(4)
    x, u = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
    h = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (cost.stage(x + e, u) - cost.stage(x - e, u)) / (2 * h)
        assert abs(cost.grad_x(x, u)[j] - fd) <= 1e-5
        fd_u = (cost.stage(x, u + e) - cost.stage(x, u - e)) / (2 * h)
        assert abs(cost.grad_u(x, u)[j] - fd_u) <= 1e-5
