"""Inverse cost recovery from optimal trajectories of a lifted model.

Stationarity of the Hamiltonian of the bilinear system

    z+ = A z + sum_i u_i B_i z,   cost 1/2 sum (z' Q z + u' R u)

links each recorded control to the costates, which in turn are linear in Q.
Eliminating the costates yields one linear equation per control sample:

    -vec(R u_{0:T-2}) = script_A(z, u) vec(Q) = script_A(z, u) D vech(Q)

with D the duplication matrix.  The minimum-norm least-squares solution in
vech(Q) leaves unidentifiable cost directions at zero; the attached
diagnostics report rank, conditioning, the data-sufficiency conditions and
the null space of identifiable directions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import TrajectoryBatch, dump_json
from .edmdc import BilinearModel, pinv, PINV_REL_TOL
from .errors import DegenerateDataError, DimensionMismatchError
from .lifting import LiftedBatch, lift_batch

DIAG_REL_TOL = 1e-8
UNACTUATED_REL_TOL = 1e-6
TRUNC_SAFETY = 2.0  # margin for the discrepancy truncation in solve_Q


# -- symmetric-matrix vectorization -------------------------------------------

def duplication_matrix(N: int) -> np.ndarray:
    """0/1 matrix D with D vech(S) = vec(S) for every symmetric S."""
    if N < 1:
        raise DimensionMismatchError("N must be >= 1")
    D = np.zeros((N * N, N * (N + 1) // 2))
    h = 0
    for j in range(N):
        for i in range(j, N):
            D[i + j * N, h] = 1.0
            D[j + i * N, h] = 1.0
            h += 1
    return D


def vech(S: np.ndarray) -> np.ndarray:
    """Half-vectorization: lower triangle stacked column by column."""
    S = 0.5 * (S + S.T)
    N = S.shape[0]
    return np.concatenate([S[j:, j] for j in range(N)])


def unvech(v: np.ndarray) -> np.ndarray:
    """Inverse of vech; output is exactly symmetric by construction."""
    L = v.shape[0]
    N = int((np.sqrt(8 * L + 1) - 1) / 2 + 0.5)
    if N * (N + 1) // 2 != L:
        raise DimensionMismatchError(f"{L} is not a triangular number")
    S = np.zeros((N, N))
    h = 0
    for j in range(N):
        for i in range(j, N):
            S[i, j] = v[h]
            S[j, i] = v[h]
            h += 1
    return S


# -- PMP building blocks -------------------------------------------------------

def build_O_AB(model: BilinearModel, u_k: np.ndarray) -> np.ndarray:
    """Input-dependent transition A + sum_i u_{i,k} B_i."""
    out = model.A.copy()
    for i in range(model.m):
        out += u_k[i] * model.B[i]
    return out


def build_O_B(model: BilinearModel, z_k: np.ndarray) -> np.ndarray:
    """N x m matrix whose column i is B_i z_k."""
    return np.column_stack([Bi @ z_k for Bi in model.B])


def costate_backward(model: BilinearModel, Q: np.ndarray,
                     Z: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Backward costate recursion lambda_k = Q z_k + O_AB_k' lambda_{k+1}.

    ``Z`` is (N, T+1) lifted states, ``U`` is (m, T) controls.  Returns
    (T+1, N) with row k = lambda_k; the terminal costate lambda_T is zero.
    """
    T = U.shape[1]
    if T < 1:
        raise DimensionMismatchError("need at least one control")
    lam = np.zeros((T + 1, model.N))
    for k in range(T - 1, 0, -1):
        lam[k] = Q @ Z[:, k] + build_O_AB(model, U[:, k]).T @ lam[k + 1]
    return lam


def costate_closed_form(model: BilinearModel, Q: np.ndarray,
                        Z: np.ndarray, U: np.ndarray, k: int) -> np.ndarray:
    """Direct (non-recursive) costate expression, for cross-checking.

    lambda_k = Q z_k + sum_{j=k}^{T-2} (prod_{l=k}^{j} O_AB_l') Q z_{j+1}
    """
    T = U.shape[1]
    lam = Q @ Z[:, k]
    P = np.eye(model.N)
    for j in range(k, T - 1):
        P = P @ build_O_AB(model, U[:, j]).T
        lam = lam + P @ (Q @ Z[:, j + 1])
    return lam


# -- stacked regression matrix -------------------------------------------------

def build_script_A_i(model: BilinearModel, Z: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Per-trajectory regression block mapping vec(Q) to -vec(u_{0:T-2}).

    ``Z`` is (N, T+1), ``U`` is (m, T).  Block row k (m rows) collects, for
    every later state z_kappa (kappa = k+1 .. T-1),

        z_kappa' kron [ O_B_k' O_AB_{k+1}' ... O_AB_{kappa-1}' ]

    i.e. the costate chain between the control at step k and the stage costs
    it can still influence.  Output shape: (T-1) m x N^2.
    """
    N, m = model.N, model.m
    T = U.shape[1]
    if T < 2:
        raise DimensionMismatchError("need horizon >= 2 (states length >= 3)")
    if Z.shape != (N, T + 1):
        raise DimensionMismatchError(
            f"lifted states must be (N, T+1) = ({N}, {T + 1}), got {Z.shape}")
    blocks = []
    for k in range(T - 1):
        W = build_O_B(model, Z[:, k]).T          # m x N
        row = np.zeros((m, N * N))
        for kappa in range(k + 1, T):
            row += np.kron(Z[:, kappa], W)
            if kappa < T - 1:
                W = W @ build_O_AB(model, U[:, kappa]).T
        blocks.append(row)
    return np.vstack(blocks)


def build_script_A(model: BilinearModel, lifted: LiftedBatch) -> np.ndarray:
    """Vertical stack of per-trajectory blocks: M (T-1) m x N^2."""
    blocks = []
    for i in range(lifted.n_traj):
        Zi, Ui = lifted.traj_lifted(i)
        blocks.append(build_script_A_i(model, Zi, Ui))
    return np.vstack(blocks)


def build_script_A_linear(A: np.ndarray, B: np.ndarray,
                          Z_list: list[np.ndarray]) -> np.ndarray:
    """Inverse-LQR regression matrix for linear lifted dynamics z+ = Az + Bu.

    ``Z_list`` holds per-trajectory lifted states (N, T+1).  The block for
    z_kappa places B'(A')^(kappa-1-k) in row k for k < kappa, zeros below.
    """
    N = A.shape[0]
    m = B.shape[1]
    blocks = []
    for Z in Z_list:
        T = Z.shape[1] - 1
        rows = np.zeros(((T - 1) * m, N * N))
        for k in range(T - 1):
            W = B.T
            for kappa in range(k + 1, T):
                rows[k * m:(k + 1) * m] += np.kron(Z[:, kappa], W)
                W = W @ A.T
        blocks.append(rows)
    return np.vstack(blocks)


def control_stack(U_list: list[np.ndarray], R: np.ndarray | None = None) -> np.ndarray:
    """vec(R u_{0:T-2}) stacked over trajectories (last control dropped)."""
    parts = []
    for U in U_list:
        Ueff = U[:, :-1] if R is None else R @ U[:, :-1]
        parts.append(Ueff.T.reshape(-1))  # u_0 components first
    return np.concatenate(parts)


# -- cost estimate --------------------------------------------------------------

@dataclass(frozen=True)
class IocDiagnostics:
    rows: int
    cols: int
    numerical_rank: int
    condition_number: float
    lemma5_satisfied: bool
    lemma6_satisfied: bool
    unactuated_modes: tuple[int, ...]
    nullspace_basis: np.ndarray  # (cols, nullspace_dim), orthonormal columns

    @property
    def nullspace_dim(self) -> int:
        return self.nullspace_basis.shape[1]


@dataclass(frozen=True)
class CostEstimate:
    Q: np.ndarray
    R: np.ndarray
    ls_residual: float
    diagnostics: IocDiagnostics
    warnings: tuple[str, ...] = ()


def detect_unactuated(model: BilinearModel,
                      tol_unact: float = UNACTUATED_REL_TOL) -> list[int]:
    """Lifted coordinates whose rows vanish in every estimated B_i.

    The constant observable, when present, is exempt: its row is zero by
    construction and its (un)identifiability is already exposed through the
    null space of the stacked system.
    """
    const_idx = {j for j, t in enumerate(model.dictionary.terms)
                 if t.kind == "const"}
    stack_norm = np.sqrt(sum(np.linalg.norm(Bi) ** 2 for Bi in model.B))
    if stack_norm == 0.0:
        return [j for j in range(model.N) if j not in const_idx]
    flagged = []
    for j in range(model.N):
        if j in const_idx:
            continue
        row_max = max(np.linalg.norm(Bi[j]) for Bi in model.B)
        if row_max <= tol_unact * stack_norm:
            flagged.append(j)
    return flagged


def solve_Q(
    script_A: np.ndarray,
    u_stack: np.ndarray,
    *,
    R: np.ndarray | None = None,
    psd_project: bool = False,
    pinv_rel_tol: float = PINV_REL_TOL,
    diag_rel_tol: float = DIAG_REL_TOL,
    lemma6_satisfied: bool = False,
    unactuated_modes: tuple[int, ...] = (),
) -> CostEstimate:
    """Minimum-norm least-squares solve of -u_stack = script_A D vech(Q).

    ``u_stack`` must already carry the R-weighting when R != I; ``R`` is
    stored on the estimate for reporting only (defaults to identity).

    Beyond the plain pseudo-inverse cutoff, singular directions whose gain
    falls below the achieved residual norm are discarded (discrepancy
    principle): when the stationarity data is inconsistent -- e.g. the lifting
    only closes approximately -- both the data component and the singular
    value of such a direction are inconsistency-generated, so their quotient
    is an arbitrary O(1) shift of Q along a direction the trajectories cannot
    distinguish.  The minimum-norm convention applies to those directions
    instead, and a warning records the truncation.  With consistent data the
    residual is at solver precision and nothing extra is cut.
    """
    if script_A.size == 0 or u_stack.size == 0:
        raise DegenerateDataError("empty regression system")
    if script_A.shape[0] != u_stack.shape[0]:
        raise DimensionMismatchError("script_A and control stack rows differ")
    N = int(np.sqrt(script_A.shape[1]) + 0.5)
    if N * N != script_A.shape[1]:
        raise DimensionMismatchError("script_A column count is not a square")
    AD = script_A @ duplication_matrix(N)
    rows, cols = AD.shape

    Us, s, Vt = np.linalg.svd(AD, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise DegenerateDataError("regression matrix has rank 0")
    keep = s >= diag_rel_tol * s[0]
    rank = int(keep.sum())
    cond = float(s[0] / s[keep][-1])
    # null space at the diagnostics tolerance (conservative)
    if rank < cols:
        Vt_full = np.linalg.svd(AD, full_matrices=True)[2]
        nullspace = Vt_full[rank:].T
    else:
        nullspace = np.zeros((cols, 0))

    # minimum-norm solve with discrepancy-based truncation: grow the cutoff
    # until every kept singular value clears the achieved residual norm by a
    # safety factor (a gain at the residual level amplifies inconsistency
    # into an O(1) arbitrary component of Q)
    b = Us.T @ (-u_stack)
    cutoff = pinv_rel_tol * s[0]
    warnings: list[str] = []
    while True:
        solve_keep = s > cutoff
        coef = np.where(solve_keep, b / np.where(solve_keep, s, 1.0), 0.0)
        v = Vt.T @ coef
        resid = float(np.linalg.norm(-u_stack - AD @ v))
        level = TRUNC_SAFETY * resid
        if not (solve_keep & (s < level)).any():
            break
        if level >= s[0]:
            # even the strongest direction sits at the inconsistency level:
            # no quadratic cost explains these trajectories
            solve_keep[:] = False
            v = np.zeros(cols)
            resid = float(np.linalg.norm(u_stack))
            warnings.append(
                "residual is at the scale of the largest singular value; "
                "the data is not stationarity-consistent with any Q")
            break
        cutoff = level
    n_cut = int((s > pinv_rel_tol * s[0]).sum() - solve_keep.sum())
    if n_cut > 0:
        warnings.append(
            f"{n_cut} weakly determined direction(s) below the residual "
            f"level {resid:.3e} left at minimum norm")
    Q = unvech(v)
    ls_residual = resid
    if psd_project:
        w, V = np.linalg.eigh(Q)
        if w.min() < 0:
            warnings.append(
                f"negative eigenvalues clipped to 0 (min was {w.min():.3e})")
            Q = (V * np.clip(w, 0.0, None)) @ V.T
            Q = 0.5 * (Q + Q.T)

    m = 1 if R is None else R.shape[0]
    diags = IocDiagnostics(
        rows=rows,
        cols=cols,
        numerical_rank=rank,
        condition_number=cond,
        lemma5_satisfied=bool(rows >= cols and rank == cols),
        lemma6_satisfied=lemma6_satisfied,
        unactuated_modes=tuple(unactuated_modes),
        nullspace_basis=nullspace,
    )
    R_out = np.eye(m) if R is None else np.asarray(R, float)
    return CostEstimate(Q, R_out, ls_residual, diags, tuple(warnings))


def check_lemma6(terminal_Z: np.ndarray, n_states: int,
                 diag_rel_tol: float = DIAG_REL_TOL) -> bool:
    """Terminal-state richness: enough points, trajectories and N independent
    second-to-last lifted states.  ``terminal_Z`` is (N, M), ``n_states`` the
    number of recorded states per trajectory."""
    N, M = terminal_Z.shape
    if n_states < N + 2 or M < N:
        return False
    s = np.linalg.svd(terminal_Z, compute_uv=False)
    return bool((s >= diag_rel_tol * s[0]).sum() >= N)


def estimate_cost(
    model: BilinearModel,
    data: TrajectoryBatch,
    *,
    R: np.ndarray | None = None,
    psd_project: bool = False,
    pinv_rel_tol: float = PINV_REL_TOL,
    diag_rel_tol: float = DIAG_REL_TOL,
    tol_unact: float = UNACTUATED_REL_TOL,
) -> CostEstimate:
    """Full inverse Bi-LQR pass: lift, stack, solve, attach diagnostics."""
    if data.m != model.m:
        raise DimensionMismatchError("control dimension differs between model and data")
    lifted = lift_batch(model.dictionary, data)
    Z_list, U_list = [], []
    for i in range(lifted.n_traj):
        Zi, Ui = lifted.traj_lifted(i)
        Z_list.append(Zi)
        U_list.append(Ui)
    script_A = build_script_A(model, lifted)
    u_stack = control_stack(U_list, R)
    T = data.horizon
    terminal_Z = np.column_stack([Z[:, T - 1] for Z in Z_list])
    lemma6 = check_lemma6(terminal_Z, T + 1, diag_rel_tol)
    unact = detect_unactuated(model, tol_unact)
    R_eff = np.eye(model.m) if R is None else np.asarray(R, float)
    est = solve_Q(
        script_A, u_stack,
        R=R_eff,
        psd_project=psd_project,
        pinv_rel_tol=pinv_rel_tol,
        diag_rel_tol=diag_rel_tol,
        lemma6_satisfied=lemma6,
        unactuated_modes=tuple(unact),
    )
    warnings = list(est.warnings)
    if unact:
        warnings.append(
            f"estimated unactuated lifted coordinates {unact}: cost entries "
            "on coordinates the input cannot reach are not identifiable")
    return CostEstimate(est.Q, est.R, est.ls_residual, est.diagnostics,
                        tuple(warnings))


# -- cost file format -----------------------------------------------------------

def save_cost(est: CostEstimate, path: Path | str) -> None:
    d = est.diagnostics
    doc = {
        "N": est.Q.shape[0],
        "m": est.R.shape[0],
        "Q": est.Q.tolist(),
        "R": est.R.tolist(),
        "ls_residual": est.ls_residual,
        "diagnostics": {
            "rows": d.rows,
            "cols": d.cols,
            "numerical_rank": d.numerical_rank,
            "condition_number": d.condition_number,
            "lemma5": d.lemma5_satisfied,
            "lemma6": d.lemma6_satisfied,
            "unactuated_modes": list(d.unactuated_modes),
            "nullspace_dim": d.nullspace_dim,
        },
        "warnings": list(est.warnings),
    }
    dump_json(doc, path)


def load_cost(path: Path | str) -> CostEstimate:
    doc = json.loads(Path(path).read_text())
    d = doc["diagnostics"]
    diags = IocDiagnostics(
        rows=d["rows"], cols=d["cols"],
        numerical_rank=d["numerical_rank"],
        condition_number=d["condition_number"],
        lemma5_satisfied=d["lemma5"], lemma6_satisfied=d["lemma6"],
        unactuated_modes=tuple(d["unactuated_modes"]),
        nullspace_basis=np.zeros((d["cols"], d["nullspace_dim"])),
    )
    return CostEstimate(np.array(doc["Q"]), np.array(doc["R"]),
                        float(doc["ls_residual"]), diags,
                        tuple(doc.get("warnings", ())))
