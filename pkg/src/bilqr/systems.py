"""Analytic benchmark systems: exact dynamics, Jacobians, liftings and costs.

Every system carries the discrete step map, its Jacobians, an analytic
observable dictionary, and (where one exists) the exact lifted bilinear
matrices, so identification and cost-recovery results can be checked against
closed-form ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidInputError
from .lifting import Dictionary, Term, lift

SYSTEM_NAMES = ("example1", "example2", "unicycle", "linear-lqr")


@dataclass(frozen=True)
class AnalyticSystem:
    """Ground-truth benchmark system."""

    name: str
    n: int
    m: int
    params: dict
    dt: float
    dictionary: Dictionary
    step: Callable  # (x, u) -> x_next
    jac: Callable   # (x, u) -> (d x+/d x, d x+/d u)
    # exact lifted matrices (A, (B_1..B_m)) when the lifting closes bilinearly
    analytic_bilinear: tuple[np.ndarray, tuple[np.ndarray, ...]] | None
    # cost basis names and the map from weights to the lifted quadratic (Q, R)
    cost_basis: tuple[str, ...]
    lifted_cost: Callable  # weights -> (Q, R)
    default_weights: tuple[float, ...]
    x0_box: np.ndarray  # (n, 2) sampling box for initial states

    def default_cost(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lifted_cost(self.default_weights)


def _check_unit_range(params: dict, keys: tuple[str, ...]) -> None:
    for k in keys:
        if not 0.0 <= params[k] <= 1.0:
            raise InvalidInputError(f"parameter {k}={params[k]} outside [0, 1]")


def _example1(params: dict, dt: float) -> AnalyticSystem:
    # Negative identifiability benchmark: the first mode is unactuated, so
    # its cost terms cannot be recovered.  The lifting closes linearly.
    p = {"a": 0.9, "b": 0.8}
    p.update(params)
    _check_unit_range(p, ("a", "b"))
    a, b = p["a"], p["b"]

    def step(x, u):
        return np.array([a * x[0],
                         b * x[1] + (b - a * a) * x[0] ** 2 + u[0]])

    def jac(x, u):
        fx = np.array([[a, 0.0], [2 * (b - a * a) * x[0], b]])
        fu = np.array([[0.0], [1.0]])
        return fx, fu

    # z = [x1, x2 + x1^2, x1^2]; no constant term on purpose
    dictionary = Dictionary((
        Term("state", coordinate=0),
        Term("poly", exponents=((0, 1), (2, 0)), coefficients=(1.0, 1.0)),
        Term("monomial", exponents=(2, 0)),
    ), 2)

    def lifted_cost(w):
        w = np.asarray(w, float)
        return np.diag(w[:3]), np.diag(w[3:4])

    return AnalyticSystem(
        name="example1", n=2, m=1, params=p, dt=dt,
        dictionary=dictionary, step=step, jac=jac,
        analytic_bilinear=None,
        cost_basis=("z1^2", "z2^2", "z3^2", "u^2"),
        lifted_cost=lifted_cost,
        default_weights=(1.0, 1.0, 1.0, 1.0),
        x0_box=np.array([[-1.0, 1.0], [-1.0, 1.0]]),
    )


def _example2(params: dict, dt: float) -> AnalyticSystem:
    # Fully actuated variant of example1; lifting closes bilinearly up to a
    # documented O(dt^2 u1^2) defect.
    p = {"c": 0.3, "d": 0.2}
    p.update(params)
    _check_unit_range(p, ("c", "d"))
    c, d = p["c"], p["d"]

    def step(x, u):
        x1, x2 = x
        return np.array([
            (1 + c * dt) * x1 + dt * u[0],
            (1 + d * dt) * x2 + (d - 2 * c) * dt * x1**2
            + dt * x1**2 * u[0] + dt * u[1],
        ])

    def jac(x, u):
        x1 = x[0]
        fx = np.array([
            [1 + c * dt, 0.0],
            [2 * (d - 2 * c) * dt * x1 + 2 * dt * x1 * u[0], 1 + d * dt],
        ])
        fu = np.array([[dt, 0.0], [dt * x1**2, dt]])
        return fx, fu

    # z = [x1, x2 + x1^2, x1^2, 1]
    dictionary = Dictionary((
        Term("state", coordinate=0),
        Term("poly", exponents=((0, 1), (2, 0)), coefficients=(1.0, 1.0)),
        Term("monomial", exponents=(2, 0)),
        Term("const"),
    ), 2)

    A = np.array([
        [1 + c * dt, 0, 0, 0],
        [0, 1 + d * dt, c**2 * dt**2, 0],
        [0, 0, 1 + 2 * c * dt + c**2 * dt**2, 0],
        [0, 0, 0, 1],
    ])
    B1 = np.array([
        [0, 0, 0, dt],
        [2 * dt + c * dt**2, 0, dt, 0],
        [2 * dt + c * dt**2, 0, 0, 0],
        [0, 0, 0, 0],
    ])
    B2 = np.zeros((4, 4))
    B2[1, 3] = dt

    def lifted_cost(w):
        # weights on [x1^2, x2^2, x1^4, 1, u1^2, u2^2]; note
        # x2^2 = (z2 - z3)^2 induces cross terms in the lifted quadratic
        w = np.asarray(w, float)
        Q = np.array([
            [w[0], 0, 0, 0],
            [0, w[1], -w[1], 0],
            [0, -w[1], w[1] + w[2], 0],
            [0, 0, 0, w[3]],
        ])
        return Q, np.diag(w[4:6])

    return AnalyticSystem(
        name="example2", n=2, m=2, params=p, dt=dt,
        dictionary=dictionary, step=step, jac=jac,
        analytic_bilinear=(A, (B1, B2)),
        cost_basis=("x1^2", "x2^2", "x1^4", "1", "u1^2", "u2^2"),
        lifted_cost=lifted_cost,
        default_weights=(1.0, 2.0, 3.0, 1.0, 1.0, 1.0),
        x0_box=np.array([[-1.0, 1.0], [-1.0, 1.0]]),
    )


def _unicycle(params: dict, dt: float) -> AnalyticSystem:
    if params:
        raise InvalidInputError("unicycle takes no parameters")

    def step(x, u):
        return np.array([
            x[0] + u[0] * np.cos(x[2]) * dt,
            x[1] + u[0] * np.sin(x[2]) * dt,
            x[2] + u[1] * dt,
        ])

    def jac(x, u):
        fx = np.array([
            [1.0, 0.0, -u[0] * np.sin(x[2]) * dt],
            [0.0, 1.0, u[0] * np.cos(x[2]) * dt],
            [0.0, 0.0, 1.0],
        ])
        fu = np.array([
            [np.cos(x[2]) * dt, 0.0],
            [np.sin(x[2]) * dt, 0.0],
            [0.0, dt],
        ])
        return fx, fu

    # z = [x1, x2, x3, cos x3, sin x3, 1]
    dictionary = Dictionary((
        Term("state", coordinate=0),
        Term("state", coordinate=1),
        Term("state", coordinate=2),
        Term("cos", coordinate=2),
        Term("sin", coordinate=2),
        Term("const"),
    ), 3)

    A = np.eye(6)
    B1 = np.zeros((6, 6))
    B1[0, 3] = dt
    B1[1, 4] = dt
    B2 = np.zeros((6, 6))
    B2[2, 5] = dt
    B2[3, 4] = -dt  # first-order trig rotation, skew pair
    B2[4, 3] = dt

    def lifted_cost(w):
        w = np.asarray(w, float)
        return np.diag(w[:6]), np.diag(w[6:8])

    return AnalyticSystem(
        name="unicycle", n=3, m=2, params={}, dt=dt,
        dictionary=dictionary, step=step, jac=jac,
        analytic_bilinear=(A, (B1, B2)),
        cost_basis=("x1^2", "x2^2", "x3^2", "cos^2 x3", "sin^2 x3", "1",
                    "u1^2", "u2^2"),
        lifted_cost=lifted_cost,
        default_weights=(1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0),
        x0_box=np.array([[-1.0, 1.0], [-1.0, 1.0], [-np.pi / 2, np.pi / 2]]),
    )


def _linear_lqr(params: dict, dt: float) -> AnalyticSystem:
    # Directly-specified discrete linear system with identity-plus-constant
    # lifting; exact bilinear embedding routes the input through the constant
    # coordinate.
    n = int(params.get("n", 1))
    if n == 1:
        A = np.array([[params.get("a", 1.0)]])
        B = np.array([[params.get("b", 1.0)]])
    elif n == 2:
        A = np.array([[0.9, 0.2], [0.0, 0.8]])
        B = np.array([[0.0], [1.0]])
    else:
        raise InvalidInputError("linear-lqr supports n = 1 or 2")
    m = B.shape[1]

    def step(x, u):
        return A @ x + B @ u

    def jac(x, u):
        return A, B

    dictionary = Dictionary(
        tuple(Term("state", coordinate=i) for i in range(n)) + (Term("const"),), n)

    N = n + 1
    A_lift = np.eye(N)
    A_lift[:n, :n] = A
    Bs = []
    for i in range(m):
        Bi = np.zeros((N, N))
        Bi[:n, n] = B[:, i]
        Bs.append(Bi)

    def lifted_cost(w):
        w = np.asarray(w, float)
        Q = np.diag(np.concatenate([w[:n], [0.0]]))
        return Q, np.diag(w[n:n + m])

    return AnalyticSystem(
        name="linear-lqr", n=n, m=m,
        params={"n": n, **({k: params[k] for k in ("a", "b") if k in params})},
        dt=dt, dictionary=dictionary, step=step, jac=jac,
        analytic_bilinear=(A_lift, tuple(Bs)),
        cost_basis=tuple(f"x{i+1}^2" for i in range(n))
        + tuple(f"u{i+1}^2" for i in range(m)),
        lifted_cost=lifted_cost,
        default_weights=(1.0,) * (n + m),
        x0_box=np.tile([[-1.0, 1.0]], (n, 1)),
    )


_MAKERS = {
    "example1": _example1,
    "example2": _example2,
    "unicycle": _unicycle,
    "linear-lqr": _linear_lqr,
}


def make_system(name: str, params: dict | None = None, dt: float = 0.01) -> AnalyticSystem:
    """Build a registered benchmark system."""
    if name not in _MAKERS:
        raise InvalidInputError(
            f"unknown system {name!r}; available: {', '.join(SYSTEM_NAMES)}")
    if dt <= 0:
        raise InvalidInputError("dt must be positive")
    return _MAKERS[name](dict(params or {}), dt)


def analytic_lift_check(system: AnalyticSystem, samples) -> float:
    """Max defect of the exact bilinear lifting over (x, u) sample pairs.

    defect = || theta(step(x, u)) - (A theta(x) + sum_i u_i B_i theta(x)) ||
    """
    if system.analytic_bilinear is None:
        raise InvalidInputError(f"{system.name} has no analytic bilinear form")
    A, Bs = system.analytic_bilinear
    worst = 0.0
    for x, u in samples:
        x, u = np.asarray(x, float), np.asarray(u, float)
        z = lift(system.dictionary, x)
        z_pred = A @ z
        for i, Bi in enumerate(Bs):
            z_pred = z_pred + u[i] * (Bi @ z)
        z_true = lift(system.dictionary, system.step(x, u))
        worst = max(worst, float(np.linalg.norm(z_true - z_pred)))
    return worst
