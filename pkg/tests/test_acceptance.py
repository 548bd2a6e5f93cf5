"""End-to-end acceptance checks.

Each test prints one PASS/FAIL line straight to the terminal (bypassing
capture) so the headline results are visible in any pytest run, and then
asserts, so a FAIL also fails the suite.
"""

import numpy as np
import pytest

from bilqr.data import TrajectoryBatch
from bilqr.edmdc import BilinearModel, fit_bilinear, fit_bilinear_lifted, pinv
from bilqr.ioc import (build_script_A_i, build_script_A_linear, check_lemma6,
                       control_stack, duplication_matrix, estimate_cost,
                       solve_Q, vech)
from bilqr.optctrl import generate_batch, objective_and_gradient, riccati_lqr
from bilqr.systems import make_system

from conftest import (identity_lift_model, pmp_trajectory, random_psd,
                      random_stable_model, rollout_lifted)


def report(capsys, num, name, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {num}] {'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    assert ok, f"criterion {num} failed: {name} ({detail})"


@pytest.fixture(scope="session")
def planar_study(tmp_path_factory):
    from bilqr.cli import repro_example2
    return repro_example2(tmp_path_factory.mktemp("planar"), seed=0)


@pytest.fixture(scope="session")
def unicycle_study(tmp_path_factory):
    from bilqr.cli import repro_unicycle
    return repro_unicycle(tmp_path_factory.mktemp("unicycle"), seed=0)


def test_criterion_1_exact_bilinear_identification(capsys):
    # data simulated with the analytic lifted matrices is recovered exactly
    system = make_system("example2")
    model = identity_lift_model(*system.analytic_bilinear)
    rng = np.random.default_rng(0)
    Zs, Ys, Us = [], [], []
    from bilqr.lifting import lift
    for _ in range(20):
        z0 = lift(system.dictionary, rng.uniform(-1, 1, 2))
        U = rng.uniform(-1, 1, (2, 50))
        Z = rollout_lifted(model, z0, U)
        Zs.append(Z[:, :-1])
        Ys.append(Z[:, 1:])
        Us.append(U)
    A, Bs, resid, _ = fit_bilinear_lifted(np.hstack(Zs), np.hstack(Ys),
                                          np.hstack(Us))
    A_true, Bs_true = system.analytic_bilinear
    err = max([float(np.linalg.norm(A - A_true))]
              + [float(np.linalg.norm(B - Bt))
                 for B, Bt in zip(Bs, Bs_true)])
    report(capsys, 1, "exact recovery of lifted bilinear dynamics",
           err <= 1e-8 and resid <= 1e-10,
           f"max coefficient error = {err:.3e}, residual = {resid:.3e}")


def test_criterion_2_fit_residuals(capsys, planar_study, unicycle_study):
    r_planar = planar_study["fit_residual"]
    r_uni = unicycle_study["fit_residual"]
    report(capsys, 2, "benchmark fit residuals",
           r_planar <= 1e-2 and r_uni <= 1e-3,
           f"planar = {r_planar:.3e} (<= 1e-2), "
           f"unicycle = {r_uni:.3e} (<= 1e-3)")


def test_criterion_3_stationarity_consistency(capsys):
    # on data that satisfies the optimality conditions exactly, the stacked
    # linear system is satisfied by the true cost and the solver reproduces
    # every control sample
    worst_fwd, worst_rec = 0.0, 0.0
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        N = int(rng.integers(3, 6))
        m = int(rng.integers(1, 3))
        model = random_stable_model(rng, N, m)
        Q = random_psd(rng, N)
        Z_list, U_list = [], []
        for _ in range(3):
            Z, U, delta = pmp_trajectory(model, Q, np.eye(m),
                                         rng.standard_normal(N), 15)
            assert delta < 1e-12
            Z_list.append(Z)
            U_list.append(U)
        S = np.vstack([build_script_A_i(model, Z, U)
                       for Z, U in zip(Z_list, U_list)])
        u_stack = control_stack(U_list)
        D = duplication_matrix(N)
        scale = 1.0 + float(np.linalg.norm(u_stack))
        fwd = float(np.linalg.norm(-u_stack - S @ D @ vech(Q))) / scale
        est = solve_Q(S, u_stack)
        rec = float(np.linalg.norm(S @ D @ (vech(est.Q) - vech(Q)))) / scale
        worst_fwd = max(worst_fwd, fwd)
        worst_rec = max(worst_rec, rec)
    report(capsys, 3, "stacked stationarity system on consistent data",
           worst_fwd <= 1e-9 and worst_rec <= 1e-9,
           f"worst forward residual = {worst_fwd:.3e}, "
           f"worst recovery mismatch = {worst_rec:.3e} (both <= 1e-9)")


def test_criterion_4_lqr_cross_check(capsys):
    # Riccati-generated optimal data, recovered through both the bilinear
    # machinery and the dedicated linear-dynamics construction
    details = []
    ok = True
    for tag, params, A, B, n in (
        ("scalar", {"a": 0.9, "b": 1.0},
         np.array([[0.9]]), np.array([[1.0]]), 1),
        ("2-state", {"n": 2},
         np.array([[0.9, 0.2], [0.0, 0.8]]), np.array([[0.0], [1.0]]), 2),
    ):
        system = make_system("linear-lqr", params)
        Q_x, R = np.eye(n), np.eye(1)
        gains = riccati_lqr(A, B, Q_x, R, 20)
        rng = np.random.default_rng(7)
        pairs = []
        for _ in range(2 * n + 2):
            x = rng.uniform(-1, 1, n)
            xs, us = [x], []
            for K in gains:
                u = -K @ x
                x = A @ x + B @ u
                xs.append(x)
                us.append(u)
            pairs.append((np.array(xs), np.array(us)))
        batch = TrajectoryBatch.from_trajectories(pairs, 0.01)
        A_lift, Bs_lift = system.analytic_bilinear
        model = BilinearModel(A_lift, Bs_lift,
                              np.hstack([np.eye(n), np.zeros((n, 1))]),
                              system.dictionary, 0.01, 0.0)
        est = estimate_cost(model, batch)
        err_bi = float(np.abs(est.Q[:n, :n] - Q_x).max())

        # linear-dynamics path over the same lifted trajectories
        from bilqr.lifting import lift_batch
        lifted = lift_batch(system.dictionary, batch)
        Z_list, U_list = [], []
        for i in range(lifted.n_traj):
            Zi, Ui = lifted.traj_lifted(i)
            Z_list.append(Zi)
            U_list.append(Ui)
        B_lin = np.column_stack([Bi[:, n] for Bi in Bs_lift])
        S_lin = build_script_A_linear(A_lift, B_lin, Z_list)
        est_lin = solve_Q(S_lin, control_stack(U_list))
        gap = float(np.abs(est.Q - est_lin.Q).max())
        ok &= err_bi <= 1e-6 and gap <= 1e-8
        details.append(f"{tag}: |Q_hat - Q| = {err_bi:.3e}, "
                       f"bilinear-vs-linear gap = {gap:.3e}")
    report(capsys, 4, "inverse LQR against Riccati ground truth", ok,
           "; ".join(details))


def test_criterion_5_planar_study(capsys, planar_study):
    diag = planar_study["diag_Q"]
    rel = planar_study["held_out_rel_rmse"]
    ok = bool(diag[0] < diag[1] < diag[2]) and abs(diag[3]) <= 1e-6 \
        and rel <= 0.01
    report(capsys, 5, "planar benchmark cost pattern and round trip", ok,
           f"diag(Q) = {np.round(diag, 4).tolist()}, "
           f"worst held-out RMSE / amplitude = {rel:.3e} (<= 0.01)")


def test_criterion_6_unicycle_study(capsys, unicycle_study):
    worst = unicycle_study["worst_position_ratio"]
    n_test = len(unicycle_study["test_metrics"])
    report(capsys, 6, "unicycle held-out trajectory reproduction",
           n_test == 4 and worst <= 0.05,
           f"{n_test} held-out trajectories, worst position RMSE / "
           f"path length = {worst:.3e} (<= 0.05)")


def test_criterion_7_unidentifiable_benchmark_is_flagged(capsys):
    # the partially-actuated benchmark must degrade loudly, not crash
    system = make_system("example1")
    batch = generate_batch(system, system.default_weights, 8, 30, seed=0)
    model = fit_bilinear(batch, system.dictionary)
    est = estimate_cost(model, batch)
    d = est.diagnostics
    ok = (len(d.unactuated_modes) > 0
          and d.numerical_rank < d.cols
          and d.nullspace_dim > 0
          and not d.lemma5_satisfied
          and np.isfinite(est.Q).all()
          and len(est.warnings) > 0)
    report(capsys, 7, "unactuated modes flagged without crashing", ok,
           f"unactuated = {list(d.unactuated_modes)}, "
           f"rank = {d.numerical_rank}/{d.cols}, "
           f"nullspace_dim = {d.nullspace_dim}, "
           f"{len(est.warnings)} warning(s)")


def test_criterion_8_data_sufficiency_flags(capsys):
    rng = np.random.default_rng(42)
    N, m = 3, 1
    model = random_stable_model(rng, N, m)
    Q = random_psd(rng, N)

    def diagnostics(M, T):
        Z_list, U_list = [], []
        for _ in range(M):
            Z, U, delta = pmp_trajectory(model, Q, np.eye(m),
                                         rng.standard_normal(N), T)
            assert delta < 1e-12
            Z_list.append(Z)
            U_list.append(U)
        S = np.vstack([build_script_A_i(model, Z, U)
                       for Z, U in zip(Z_list, U_list)])
        return solve_Q(S, control_stack(U_list)).diagnostics

    thin = diagnostics(M=1, T=4)      # 3 rows < 6 unknowns
    rich = diagnostics(M=6, T=12)     # 66 rows, generically full rank
    flags_ok = (not thin.lemma5_satisfied and thin.nullspace_dim > 0
                and rich.lemma5_satisfied and rich.nullspace_dim == 0)

    # terminal-richness flag flips exactly at its stated thresholds
    Zt = rng.standard_normal((4, 6))
    lemma6_ok = (check_lemma6(Zt, n_states=6)
                 and not check_lemma6(Zt, n_states=5)
                 and not check_lemma6(Zt[:, :3], n_states=6)
                 and not check_lemma6(np.outer(np.ones(4), np.ones(6)),
                                      n_states=6))
    report(capsys, 8, "data-sufficiency flags across their thresholds",
           flags_ok and lemma6_ok,
           f"thin: rank {thin.numerical_rank}/{thin.cols} -> flag off; "
           f"rich: rank {rich.numerical_rank}/{rich.cols} -> flag on; "
           f"terminal-richness flag behaves at both thresholds")


def test_criterion_9_numerical_hygiene(capsys):
    rng = np.random.default_rng(9)

    # adjoint gradient vs central finite differences, 50 random cases
    worst_grad = 0.0
    for case in range(50):
        name = ("example2", "unicycle", "linear-lqr")[case % 3]
        system = make_system(name, {"n": 2} if name == "linear-lqr" else None)
        weights = tuple(rng.uniform(0.1, 2.0, len(system.default_weights)))
        Q, R = system.lifted_cost(weights)
        from bilqr.optctrl import system_problem
        T = int(rng.integers(3, 12))
        prob = system_problem(system, Q, R, rng.uniform(-1, 1, system.n), T)
        u = 0.3 * rng.standard_normal((T, system.m))
        _, g, _ = objective_and_gradient(prob, u)
        h = 1e-6
        idx = (int(rng.integers(T)), int(rng.integers(system.m)))
        du = np.zeros_like(u)
        du[idx] = h
        fd = (objective_and_gradient(prob, u + du)[0]
              - objective_and_gradient(prob, u - du)[0]) / (2 * h)
        worst_grad = max(worst_grad, abs(g[idx] - fd) / (1 + abs(fd)))
    grad_ok = worst_grad <= 1e-5

    # duplication identity on 100 random symmetric matrices
    dup_ok = True
    for _ in range(100):
        N = int(rng.integers(1, 7))
        S = rng.standard_normal((N, N))
        S = S + S.T
        dup_ok &= bool(np.allclose(duplication_matrix(N) @ vech(S),
                                   S.reshape(-1, order="F")))

    # Penrose identities for the shared pseudo-inverse
    pen_ok = True
    for _ in range(20):
        M = rng.standard_normal((int(rng.integers(1, 40)),
                                 int(rng.integers(1, 40))))
        P = pinv(M)
        scale = max(1.0, float(np.linalg.norm(M)))
        pen_ok &= bool(np.allclose(M @ P @ M, M, atol=1e-8 * scale))
        pen_ok &= bool(np.allclose(P @ M @ P, P, atol=1e-8 * scale))
        pen_ok &= bool(np.allclose((M @ P).T, M @ P, atol=1e-8 * scale))
        pen_ok &= bool(np.allclose((P @ M).T, P @ M, atol=1e-8 * scale))

    # cost-scaling equivalence: scaling (Q, R) together leaves the optimal
    # trajectories unchanged, and solving with R = I recovers Q / alpha
    system = make_system("linear-lqr", {"a": 0.9, "b": 1.0})
    base = generate_batch(system, (1.0, 1.0), 4, 12, seed=21)
    scale_ok = True
    for alpha in (0.5, 2.0):
        same = generate_batch(system, (alpha, alpha), 4, 12, seed=21)
        scale_ok &= bool(np.allclose(same.controls, base.controls, atol=1e-6))
        scaled_R = generate_batch(system, (1.0, alpha), 4, 12, seed=21)
        A_lift, Bs_lift = system.analytic_bilinear
        model = BilinearModel(A_lift, Bs_lift,
                              np.hstack([np.eye(1), np.zeros((1, 1))]),
                              system.dictionary, 0.01, 0.0)
        est = estimate_cost(model, scaled_R)                  # assumes R = I
        scale_ok &= bool(abs(est.Q[0, 0] - 1.0 / alpha) <= 1e-6)
        est_w = estimate_cost(model, scaled_R, R=alpha * np.eye(1))
        scale_ok &= bool(abs(est_w.Q[0, 0] - 1.0) <= 1e-6)

    report(capsys, 9, "numerical hygiene checks",
           grad_ok and dup_ok and pen_ok and scale_ok,
           f"worst gradient mismatch = {worst_grad:.3e} (<= 1e-5); "
           f"duplication identity 100/100: {dup_ok}; "
           f"Penrose identities: {pen_ok}; "
           f"cost-scaling equivalence: {scale_ok}")
