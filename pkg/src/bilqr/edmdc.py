"""Lifted model fitting by closed-form least squares.

The bilinear fit solves

    min_{[A B]} || Y - [A B_1 .. B_m] [Z; Z*u_1; ..; Z*u_m] ||_F

with the minimum-norm pseudo-inverse solution; the linear fit uses the
regressor [Z; U].  The decoder C minimizes ||X - C Z||_F.  All fits are
reported with residual = ||error||_F / sqrt(#samples).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import TrajectoryBatch, dump_json
from .errors import DegenerateDataError, InvalidInputError
from .lifting import Dictionary, LiftedBatch, lift_batch, lift_many

PINV_REL_TOL = 1e-10


def pinv(M: np.ndarray, rel_tol: float = PINV_REL_TOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse, zeroing singular values < rel_tol * sigma_max."""
    M = np.asarray(M, float)
    if not np.isfinite(M).all():
        raise InvalidInputError("non-finite matrix")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return M.T * 0.0
    keep = s >= rel_tol * s[0]
    s_inv = np.where(keep, 1.0 / np.where(s == 0, 1.0, s), 0.0)
    return (Vt.T * s_inv) @ U.T


def bilinear_regressor(Z: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Stack [Z; Z*u_1; ...; Z*u_m] where * scales each column by the input."""
    m = U.shape[0]
    return np.vstack([Z] + [Z * U[i] for i in range(m)])


@dataclass(frozen=True)
class BilinearModel:
    """Discrete lifted bilinear dynamics z+ = A z + sum_i u_i B_i z."""

    A: np.ndarray            # (N, N)
    B: tuple[np.ndarray, ...]  # m matrices (N, N)
    C: np.ndarray            # (n, N) decoder
    dictionary: Dictionary
    dt: float
    residual: float
    warnings: tuple[str, ...] = ()

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return len(self.B)

    @property
    def n(self) -> int:
        return self.C.shape[0]

    def step_lifted(self, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        out = self.A @ z
        for i in range(self.m):
            out += u[i] * (self.B[i] @ z)
        return out

    def continuous_matrices(self) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
        """First-order continuous-time matrices ((A - I)/dt, B_i/dt)."""
        return (self.A - np.eye(self.N)) / self.dt, tuple(Bi / self.dt for Bi in self.B)


@dataclass(frozen=True)
class LinearModel:
    """Discrete lifted linear dynamics z+ = A z + B u."""

    A: np.ndarray   # (N, N)
    B: np.ndarray   # (N, m)
    C: np.ndarray   # (n, N)
    dictionary: Dictionary
    dt: float
    residual: float
    warnings: tuple[str, ...] = ()

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


def _check_regressor(G: np.ndarray) -> None:
    s = np.linalg.svd(G, compute_uv=False)
    if s.size == 0 or s[0] <= 0.0:
        raise DegenerateDataError("regressor matrix has rank 0")


def fit_bilinear_lifted(
    Z: np.ndarray,
    Y: np.ndarray,
    U: np.ndarray,
    rel_tol: float = PINV_REL_TOL,
) -> tuple[np.ndarray, list[np.ndarray], float, list[str]]:
    """Least-squares bilinear fit on pre-lifted snapshot matrices.

    Returns (A, [B_1..B_m], residual, warnings).
    """
    N, K = Z.shape
    m = U.shape[0]
    warnings: list[str] = []
    if K < N * (1 + m):
        warnings.append(
            f"underdetermined fit: {K} samples < N(1+m) = {N * (1 + m)}")
    G = bilinear_regressor(Z, U)
    _check_regressor(G)
    AB = Y @ pinv(G, rel_tol)
    A = AB[:, :N]
    Bs = [AB[:, N * (1 + i):N * (2 + i)] for i in range(m)]
    residual = float(np.linalg.norm(Y - AB @ G) / np.sqrt(K))
    return A, Bs, residual, warnings


def fit_linear_lifted(
    Z: np.ndarray,
    Y: np.ndarray,
    U: np.ndarray,
    rel_tol: float = PINV_REL_TOL,
) -> tuple[np.ndarray, np.ndarray, float, list[str]]:
    """Least-squares linear fit z+ = A z + B u on pre-lifted data."""
    N, K = Z.shape
    m = U.shape[0]
    warnings: list[str] = []
    if K < N + m:
        warnings.append(f"underdetermined fit: {K} samples < N+m = {N + m}")
    G = np.vstack([Z, U])
    _check_regressor(G)
    AB = Y @ pinv(G, rel_tol)
    A, B = AB[:, :N], AB[:, N:]
    residual = float(np.linalg.norm(Y - AB @ G) / np.sqrt(K))
    return A, B, residual, warnings


def fit_decoder(data: TrajectoryBatch, dictionary: Dictionary,
                rel_tol: float = PINV_REL_TOL) -> np.ndarray:
    """Decoder C minimizing ||X - C theta(X)||_F over all recorded states."""
    X = data.states.reshape(-1, data.n)  # every state incl. terminal ones
    Z = lift_many(dictionary, X)
    _check_regressor(Z)
    return X.T @ pinv(Z, rel_tol)


def fit_bilinear(data: TrajectoryBatch, dictionary: Dictionary,
                 rel_tol: float = PINV_REL_TOL) -> BilinearModel:
    """Fit a bilinear lifted model (and decoder) from a trajectory batch."""
    lifted = lift_batch(dictionary, data)
    A, Bs, residual, warnings = fit_bilinear_lifted(lifted.Z, lifted.Y, lifted.U, rel_tol)
    if not dictionary.has_const():
        warnings.append(
            "dictionary has no constant term: additive control channels "
            "cannot be represented bilinearly")
    C = fit_decoder(data, dictionary, rel_tol)
    return BilinearModel(A, tuple(Bs), C, dictionary, data.dt, residual, tuple(warnings))


def fit_linear(data: TrajectoryBatch, dictionary: Dictionary,
               rel_tol: float = PINV_REL_TOL) -> LinearModel:
    """Fit a linear lifted model (and decoder) from a trajectory batch."""
    lifted = lift_batch(dictionary, data)
    A, B, residual, warnings = fit_linear_lifted(lifted.Z, lifted.Y, lifted.U, rel_tol)
    C = fit_decoder(data, dictionary, rel_tol)
    return LinearModel(A, B, C, dictionary, data.dt, residual, tuple(warnings))


def replay_residual(model: BilinearModel, lifted: LiftedBatch) -> float:
    """Recompute the training residual of a fitted bilinear model."""
    G = bilinear_regressor(lifted.Z, lifted.U)
    AB = np.hstack([model.A] + list(model.B))
    return float(np.linalg.norm(lifted.Y - AB @ G) / np.sqrt(lifted.Z.shape[1]))


# -- model file format --------------------------------------------------------

def save_model(model: BilinearModel | LinearModel, path: Path | str) -> None:
    doc = {
        "n": model.C.shape[0],
        "m": model.m,
        "N": model.N,
        "dt": model.dt,
        "dictionary": model.dictionary.to_list(),
        "A": model.A.tolist(),
        "C": model.C.tolist(),
        "residual": model.residual,
        "warnings": list(model.warnings),
    }
    if isinstance(model, BilinearModel):
        doc["kind"] = "bilinear"
        doc["B"] = [Bi.tolist() for Bi in model.B]
    else:
        doc["kind"] = "linear"
        doc["B"] = model.B.tolist()
    dump_json(doc, path)


def load_model(path: Path | str) -> BilinearModel | LinearModel:
    doc = json.loads(Path(path).read_text())
    dictionary = Dictionary.from_list(doc["dictionary"], doc["n"])
    common = dict(
        A=np.array(doc["A"]),
        C=np.array(doc["C"]),
        dictionary=dictionary,
        dt=float(doc["dt"]),
        residual=float(doc["residual"]),
        warnings=tuple(doc.get("warnings", ())),
    )
    if doc.get("kind", "bilinear") == "bilinear":
        return BilinearModel(B=tuple(np.array(Bi) for Bi in doc["B"]), **common)
    return LinearModel(B=np.array(doc["B"]), **common)
