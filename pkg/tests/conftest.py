"""Shared helpers: synthetic bilinear models and stationarity-consistent data.

The fixed-point construction below builds trajectory data that satisfies the
first-order optimality conditions of the lifted quadratic problem *exactly*
(to iteration tolerance), independently of the least-squares machinery under
test.  That gives the cost-recovery tests an oracle that does not share code
with the implementation being checked.
"""

import numpy as np

from bilqr.edmdc import BilinearModel
from bilqr.ioc import build_O_B, costate_backward
from bilqr.lifting import Dictionary, Term


def identity_lift_model(A, Bs, dt=0.01) -> BilinearModel:
    """Wrap raw (A, B_i) matrices as a model whose lifting is the identity."""
    A = np.asarray(A, float)
    N = A.shape[0]
    d = Dictionary(tuple(Term("state", coordinate=i) for i in range(N)), N)
    return BilinearModel(A, tuple(np.asarray(B, float) for B in Bs),
                         np.eye(N), d, dt, 0.0)


def random_stable_model(rng, N, m, b_scale=0.1) -> BilinearModel:
    A = 0.8 * np.eye(N) + 0.05 * rng.standard_normal((N, N))
    Bs = tuple(b_scale * rng.standard_normal((N, N)) for _ in range(m))
    return identity_lift_model(A, Bs)


def rollout_lifted(model, z0, U):
    """Iterate the lifted dynamics; U is (m, T), returns Z (N, T+1)."""
    T = U.shape[1]
    Z = np.empty((model.N, T + 1))
    Z[:, 0] = z0
    for k in range(T):
        Z[:, k + 1] = model.step_lifted(Z[:, k], U[:, k])
    return Z


def pmp_trajectory(model, Q, R, z0, T, iters=20_000, tol=1e-13):
    """Damped fixed-point iteration on the stationarity conditions.

    Alternates rollout, backward costate sweep, and the control update
    u_k = -R^{-1} O_B(z_k)' lambda_{k+1} until the update is below ``tol``,
    restarting with a smaller damping factor if the iteration diverges.
    Returns (Z, U, last_update); the caller should check the residual.
    """
    Rinv = np.linalg.inv(R)
    with np.errstate(over="ignore", invalid="ignore"):
        for damping in (0.5, 0.2, 0.05, 0.01):
            U = np.zeros((model.m, T))
            delta = np.inf
            diverged = False
            for _ in range(iters):
                Z = rollout_lifted(model, z0, U)
                lam = costate_backward(model, Q, Z, U)
                U_new = np.empty_like(U)
                for k in range(T):
                    U_new[:, k] = -Rinv @ (build_O_B(model, Z[:, k]).T
                                           @ lam[k + 1])
                if not np.isfinite(U_new).all():
                    diverged = True
                    break
                delta = float(np.max(np.abs(U_new - U)))
                U = (1.0 - damping) * U + damping * U_new
                if delta < tol:
                    break
            if not diverged and delta < tol:
                break
    Z = rollout_lifted(model, z0, U)
    return Z, U, delta


def random_psd(rng, N, scale=0.5):
    W = rng.standard_normal((N, N))
    S = W @ W.T / N
    return scale * 0.5 * (S + S.T)
