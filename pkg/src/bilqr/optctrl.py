"""Forward finite-horizon optimal control over discrete dynamics.

The solver is first-order: the gradient of the total cost with respect to
the control sequence comes from one backward adjoint sweep, and the iterate
moves along the negative gradient with Armijo backtracking.  The same code
path generates ground-truth optimal trajectories for the benchmark systems
and re-solves the forward problem for a fitted model + recovered cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import TrajectoryBatch
from .edmdc import BilinearModel
from .errors import (DivergenceError, GenerationError, InvalidInputError,
                     LineSearchStalledError)
from .lifting import Dictionary, lift, lift_jacobian
from .ioc import CostEstimate
from .systems import AnalyticSystem


@dataclass(frozen=True)
class QuadraticLiftedCost:
    """Stage cost l(x, u) = theta(x)' Q theta(x) + u' R u."""

    dictionary: Dictionary
    Q: np.ndarray
    R: np.ndarray

    def stage(self, x, u) -> float:
        z = lift(self.dictionary, x)
        return float(z @ self.Q @ z + u @ self.R @ u)

    def grad_x(self, x, u) -> np.ndarray:
        z = lift(self.dictionary, x)
        return 2.0 * lift_jacobian(self.dictionary, x).T @ (self.Q @ z)

    def grad_u(self, x, u) -> np.ndarray:
        return 2.0 * self.R @ u


@dataclass(frozen=True)
class OcProblem:
    """Finite-horizon problem: min 1/2 sum_{k=0}^{T-1} l(x_k, u_k)."""

    step: Callable                 # (x, u) -> x_next
    jac: Callable                  # (x, u) -> (fx, fu)
    cost: QuadraticLiftedCost
    x0: np.ndarray
    T: int
    dt: float

    def __post_init__(self):
        if self.T < 3:
            raise InvalidInputError("horizon must be >= 3")
        if self.dt >= 0.1:
            import warnings
            warnings.warn(
                f"dt = {self.dt} is coarse; the lifted discrete model is only "
                "first-order accurate", stacklevel=2)


@dataclass(frozen=True)
class OcSolution:
    states: np.ndarray     # (T+1, n)
    controls: np.ndarray   # (T, m)
    objective: float
    grad_norm: float
    iterations: int
    converged: bool


def rollout(step: Callable, x0: np.ndarray, controls: np.ndarray) -> np.ndarray:
    """Iterate x_{k+1} = step(x_k, u_k); raises on blow-up with the step index."""
    x0 = np.asarray(x0, float)
    if not np.isfinite(x0).all() or not np.isfinite(controls).all():
        raise InvalidInputError("non-finite rollout input")
    states = np.empty((len(controls) + 1, x0.shape[0]))
    states[0] = x0
    for k, u in enumerate(controls):
        states[k + 1] = step(states[k], u)
        if not np.isfinite(states[k + 1]).all():
            raise DivergenceError(k)
    return states


def objective_and_gradient(prob: OcProblem, controls: np.ndarray):
    """Total cost and its control gradient by the discrete adjoint sweep."""
    states = rollout(prob.step, prob.x0, controls)
    T = len(controls)
    J = 0.5 * sum(prob.cost.stage(states[k], controls[k]) for k in range(T))
    grad = np.empty_like(controls)
    lam = np.zeros(states.shape[1])
    for k in range(T - 1, -1, -1):
        fx, fu = prob.jac(states[k], controls[k])
        grad[k] = 0.5 * prob.cost.grad_u(states[k], controls[k]) + fu.T @ lam
        lam = 0.5 * prob.cost.grad_x(states[k], controls[k]) + fx.T @ lam
    return J, grad, states


def solve(
    prob: OcProblem,
    init_controls: np.ndarray | None = None,
    *,
    max_iter: int = 2000,
    grad_tol: float = 1e-8,
    armijo_slope: float = 1e-4,
    shrink: float = 0.5,
    max_backtracks: int = 40,
) -> OcSolution:
    """Adjoint gradient descent with Armijo backtracking.

    The trial step is the Barzilai-Borwein length s's / s'y (it adapts to the
    local curvature, which plain fixed-step descent handles poorly on
    ill-conditioned horizons); backtracking keeps the objective sequence
    non-increasing.  Deterministic for fixed inputs.

    Convergence is declared at |grad| <= grad_tol * (1 + |J|): the gradient
    floor reachable in double precision scales with the objective value, so
    an absolute test would spin forever on large-J instances.
    """
    u = np.zeros((prob.T, prob.cost.R.shape[0])) if init_controls is None \
        else np.array(init_controls, float)
    J, g, states = objective_and_gradient(prob, u)
    step0 = 1.0
    u_prev = g_prev = None
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= grad_tol * (1.0 + abs(J)):
            return OcSolution(states, u, J, gnorm, it - 1, True)
        alpha = step0
        if u_prev is not None:
            s = (u - u_prev).ravel()
            y = (g - g_prev).ravel()
            sy = float(s @ y)
            if sy > 0.0:
                alpha = float(s @ s) / sy
        g2 = gnorm * gnorm
        for _ in range(max_backtracks):
            u_try = u - alpha * g
            try:
                J_try, g_try, states_try = objective_and_gradient(prob, u_try)
            except DivergenceError:
                alpha *= shrink
                continue
            if J_try <= J - armijo_slope * alpha * g2:
                break
            alpha *= shrink
        else:
            raise LineSearchStalledError(
                f"no acceptable step after {max_backtracks} backtracks "
                f"(iteration {it}, |grad| = {gnorm:.3e})")
        u_prev, g_prev = u, g
        u, J, g, states = u_try, J_try, g_try, states_try
        step0 = min(1.0, alpha * 2.0)  # fallback warm start when BB is unusable
    gnorm = float(np.linalg.norm(g))
    return OcSolution(states, u, J, gnorm, it, gnorm <= grad_tol * (1.0 + abs(J)))


def decoded_dynamics(model: BilinearModel):
    """Step map x+ = C A theta(x) + sum_i C B_i theta(x) u_i with Jacobians."""
    C, A, Bs, d = model.C, model.A, model.B, model.dictionary

    def step(x, u):
        z = lift(d, x)
        out = C @ (A @ z)
        for i, Bi in enumerate(Bs):
            out += u[i] * (C @ (Bi @ z))
        return out

    def jac(x, u):
        z = lift(d, x)
        Jz = lift_jacobian(d, x)
        M = A.copy()
        for i, Bi in enumerate(Bs):
            M = M + u[i] * Bi
        fx = C @ M @ Jz
        fu = np.column_stack([C @ (Bi @ z) for Bi in Bs])
        return fx, fu

    return step, jac


def predict(model: BilinearModel, cost: CostEstimate, x0: np.ndarray, T: int,
            **solve_opts) -> OcSolution:
    """Optimal trajectory of the decoded model under the recovered cost."""
    step, jac = decoded_dynamics(model)
    prob = OcProblem(
        step=step, jac=jac,
        cost=QuadraticLiftedCost(model.dictionary, cost.Q, cost.R),
        x0=np.asarray(x0, float), T=T, dt=model.dt,
    )
    return solve(prob, **solve_opts)


def system_problem(system: AnalyticSystem, Q: np.ndarray, R: np.ndarray,
                   x0: np.ndarray, T: int) -> OcProblem:
    return OcProblem(
        step=system.step, jac=system.jac,
        cost=QuadraticLiftedCost(system.dictionary, Q, R),
        x0=np.asarray(x0, float), T=T, dt=system.dt,
    )


def sample_x0(box: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    box = np.asarray(box, float)
    return rng.uniform(box[:, 0], box[:, 1])


def generate_batch(
    system: AnalyticSystem,
    weights,
    n_traj: int,
    T: int,
    seed: int,
    *,
    x0_box: np.ndarray | None = None,
    grad_tol: float = 1e-8,
    max_iter: int = 2000,
    retry_cap: int = 5,
) -> TrajectoryBatch:
    """Generate optimal trajectories from independently seeded initial states.

    Each trajectory draws its own RNG stream from (seed, index), so the batch
    is reproducible regardless of evaluation order.  Non-converged solves are
    resampled up to ``retry_cap`` times.
    """
    if n_traj < 1:
        raise InvalidInputError("need at least one trajectory")
    Q, R = system.lifted_cost(weights)
    box = system.x0_box if x0_box is None else np.asarray(x0_box, float)
    pairs = []
    for i in range(n_traj):
        rng = np.random.default_rng([seed, i])
        for attempt in range(retry_cap + 1):
            x0 = sample_x0(box, rng)
            try:
                sol = solve(system_problem(system, Q, R, x0, T),
                            grad_tol=grad_tol, max_iter=max_iter)
            except (DivergenceError, LineSearchStalledError):
                continue
            if sol.converged:
                pairs.append((sol.states, sol.controls))
                break
        else:
            raise GenerationError(
                f"trajectory {i}: no converged solve in {retry_cap + 1} attempts")
    return TrajectoryBatch.from_trajectories(pairs, system.dt)


def riccati_lqr(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
                T: int) -> list[np.ndarray]:
    """Finite-horizon discrete LQR gains for cost 1/2 sum_{k<T} (x'Qx + u'Ru).

    No terminal cost; returns gains K_0..K_{T-1} with u_k = -K_k x_k.
    """
    P = np.zeros_like(Q)
    gains: list[np.ndarray] = []
    for _ in range(T):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ A - A.T @ P @ B @ K
        gains.append(K)
    gains.reverse()
    return gains
