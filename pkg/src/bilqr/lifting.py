"""Observable dictionaries: evaluation, Jacobians and batch lifting.

A dictionary is an ordered list of scalar observables of the state only
(never of the control), so the lifted coordinate z = theta(x) is separable
from the input.  Supported term kinds:

* ``state``    -- a single state coordinate x_i
* ``monomial`` -- prod_j x_j ** e_j for a multi-index e
* ``poly``     -- sum of weighted monomials (for composite analytic liftings)
* ``sin``/``cos`` -- sine/cosine of a single coordinate
* ``rbf``      -- Gaussian bump exp(-|x - c|^2 / (2 w^2))
* ``const``    -- the constant 1

Term order is preserved exactly as given; evaluation is pure and
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TrajectoryBatch
from .errors import DimensionMismatchError, InvalidInputError

TERM_KINDS = ("state", "monomial", "poly", "sin", "cos", "rbf", "const")


def _monomial_value(x: np.ndarray, e: np.ndarray) -> float:
    return float(np.prod(x ** e))


def _monomial_grad(x: np.ndarray, e: np.ndarray) -> np.ndarray:
    g = np.zeros_like(x, dtype=float)
    for j in range(len(x)):
        if e[j] == 0:
            continue
        ej = e.copy()
        ej[j] -= 1
        g[j] = e[j] * np.prod(x**ej)
    return g


@dataclass(frozen=True)
class Term:
    """One observable. Which fields are meaningful depends on ``kind``."""

    kind: str
    coordinate: int | None = None         # state / sin / cos
    exponents: tuple | None = None        # monomial: multi-index; poly: tuple of them
    coefficients: tuple[float, ...] | None = None  # poly
    center: tuple[float, ...] | None = None   # rbf
    width: float | None = None                # rbf

    def validate(self, n: int) -> None:
        if self.kind not in TERM_KINDS:
            raise InvalidInputError(f"unknown term kind {self.kind!r}")
        if self.kind in ("state", "sin", "cos"):
            if self.coordinate is None or not 0 <= self.coordinate < n:
                raise InvalidInputError(
                    f"{self.kind} term references coordinate {self.coordinate} "
                    f"outside state dimension {n}")
        elif self.kind == "monomial":
            if self.exponents is None or len(self.exponents) != n:
                raise InvalidInputError("monomial exponents must have length n")
            if any(e < 0 for e in self.exponents):
                raise InvalidInputError("monomial exponents must be nonnegative")
        elif self.kind == "poly":
            if self.exponents is None or self.coefficients is None \
                    or len(self.exponents) != len(self.coefficients):
                raise InvalidInputError(
                    "poly term needs matching exponents/coefficients lists")
            for e in self.exponents:
                if len(e) != n or any(ej < 0 for ej in e):
                    raise InvalidInputError("poly multi-index invalid")
        elif self.kind == "rbf":
            if self.center is None or len(self.center) != n:
                raise InvalidInputError("rbf center must have length n")
            if self.width is None or self.width <= 0:
                raise InvalidInputError("rbf width must be positive")

    def __call__(self, x: np.ndarray) -> float:
        if self.kind == "state":
            return x[self.coordinate]
        if self.kind == "monomial":
            return _monomial_value(x, np.asarray(self.exponents))
        if self.kind == "poly":
            return float(sum(
                c * _monomial_value(x, np.asarray(e))
                for c, e in zip(self.coefficients, self.exponents)))
        if self.kind == "sin":
            return np.sin(x[self.coordinate])
        if self.kind == "cos":
            return np.cos(x[self.coordinate])
        if self.kind == "rbf":
            d = x - np.asarray(self.center)
            return np.exp(-float(d @ d) / (2.0 * self.width**2))
        return 1.0  # const

    def grad(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros_like(x, dtype=float)
        if self.kind == "state":
            g[self.coordinate] = 1.0
        elif self.kind == "monomial":
            g = _monomial_grad(x, np.asarray(self.exponents))
        elif self.kind == "poly":
            for c, e in zip(self.coefficients, self.exponents):
                g = g + c * _monomial_grad(x, np.asarray(e))
        elif self.kind == "sin":
            g[self.coordinate] = np.cos(x[self.coordinate])
        elif self.kind == "cos":
            g[self.coordinate] = -np.sin(x[self.coordinate])
        elif self.kind == "rbf":
            d = x - np.asarray(self.center)
            g = -d / self.width**2 * np.exp(-float(d @ d) / (2.0 * self.width**2))
        return g

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.coordinate is not None:
            d["coordinate"] = self.coordinate
        if self.exponents is not None:
            d["exponents"] = [list(e) for e in self.exponents] \
                if self.kind == "poly" else list(self.exponents)
        if self.coefficients is not None:
            d["coefficients"] = list(self.coefficients)
        if self.center is not None:
            d["center"] = list(self.center)
        if self.width is not None:
            d["width"] = self.width
        return d

    @staticmethod
    def from_dict(d: dict) -> "Term":
        exps = None
        if "exponents" in d:
            if d["kind"] == "poly":
                exps = tuple(tuple(e) for e in d["exponents"])
            else:
                exps = tuple(d["exponents"])
        return Term(
            kind=d["kind"],
            coordinate=d.get("coordinate"),
            exponents=exps,
            coefficients=tuple(d["coefficients"]) if "coefficients" in d else None,
            center=tuple(d["center"]) if "center" in d else None,
            width=d.get("width"),
        )


@dataclass(frozen=True)
class Dictionary:
    """Ordered, fixed set of observables over an n-dimensional state."""

    terms: tuple[Term, ...]
    n: int

    def __post_init__(self):
        if self.n < 1 or len(self.terms) < 1:
            raise InvalidInputError("need n >= 1 and at least one term")
        for t in self.terms:
            t.validate(self.n)

    @property
    def size(self) -> int:
        """Lifted dimension N."""
        return len(self.terms)

    def has_const(self) -> bool:
        return any(t.kind == "const" for t in self.terms)

    def state_selector(self) -> np.ndarray | None:
        """If the first n terms are the state coordinates in order, return [I 0]."""
        ok = all(t.kind == "state" and t.coordinate == i
                 for i, t in enumerate(self.terms[:self.n])) and len(self.terms) >= self.n
        if not ok:
            return None
        C = np.zeros((self.n, self.size))
        C[:, : self.n] = np.eye(self.n)
        return C

    def to_list(self) -> list[dict]:
        return [t.to_dict() for t in self.terms]

    @staticmethod
    def from_list(terms: list[dict], n: int) -> "Dictionary":
        return Dictionary(tuple(Term.from_dict(t) for t in terms), n)


def lift(dictionary: Dictionary, x: np.ndarray) -> np.ndarray:
    """Evaluate z = theta(x), an N-vector in term order."""
    x = np.asarray(x, float)
    if x.shape != (dictionary.n,):
        raise DimensionMismatchError(f"expected state of length {dictionary.n}")
    if not np.isfinite(x).all():
        raise InvalidInputError("non-finite state")
    return np.array([t(x) for t in dictionary.terms])


def lift_jacobian(dictionary: Dictionary, x: np.ndarray) -> np.ndarray:
    """N x n matrix with entry (i, j) = d theta_i / d x_j."""
    x = np.asarray(x, float)
    if x.shape != (dictionary.n,):
        raise DimensionMismatchError(f"expected state of length {dictionary.n}")
    if not np.isfinite(x).all():
        raise InvalidInputError("non-finite state")
    return np.vstack([t.grad(x) for t in dictionary.terms])


def lift_many(dictionary: Dictionary, X: np.ndarray) -> np.ndarray:
    """Lift rows of X (K, n) into columns (N, K)."""
    return np.column_stack([lift(dictionary, x) for x in X])


@dataclass(frozen=True)
class LiftedBatch:
    """Snapshot matrices for regression: columns are (z_k, z_{k+1}, u_k) triples.

    Column j belongs to trajectory ``traj_ids[j]`` at time ``time_idx[j]``;
    no column mixes samples from two trajectories.
    """

    Z: np.ndarray   # (N, M*T) lifted states z_0..z_{T-1} per trajectory
    Y: np.ndarray   # (N, M*T) lifted successors z_1..z_T
    U: np.ndarray   # (m, M*T) controls aligned with Z columns
    traj_ids: np.ndarray
    time_idx: np.ndarray
    n_traj: int
    horizon: int

    def traj_columns(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.traj_ids == i)

    def traj_lifted(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-trajectory lifted states z_0..z_T (N, T+1) and controls (m, T)."""
        cols = self.traj_columns(i)
        cols = cols[np.argsort(self.time_idx[cols])]
        Zi = np.column_stack([self.Z[:, cols], self.Y[:, cols[-1]]])
        return Zi, self.U[:, cols]


def lift_batch(dictionary: Dictionary, data: TrajectoryBatch) -> LiftedBatch:
    """Lift a whole batch into stacked snapshot matrices."""
    M, T = data.n_traj, data.horizon
    Z = np.empty((dictionary.size, M * T))
    Y = np.empty_like(Z)
    U = np.empty((data.m, M * T))
    traj_ids = np.empty(M * T, dtype=int)
    time_idx = np.empty(M * T, dtype=int)
    col = 0
    for i in range(M):
        zs = lift_many(dictionary, data.states[i])  # (N, T+1)
        Z[:, col:col + T] = zs[:, :-1]
        Y[:, col:col + T] = zs[:, 1:]
        U[:, col:col + T] = data.controls[i].T
        traj_ids[col:col + T] = i
        time_idx[col:col + T] = np.arange(T)
        col += T
    return LiftedBatch(Z, Y, U, traj_ids, time_idx, M, T)


# -- convenience constructors ------------------------------------------------

def state_terms(n: int) -> list[Term]:
    return [Term("state", coordinate=i) for i in range(n)]


def monomial_dictionary(n: int, degree: int, include_const: bool = True) -> Dictionary:
    """All monomials of total degree 1..degree (state coordinates first)."""
    from itertools import product

    terms = state_terms(n)
    seen = {tuple(int(i == j) for j in range(n)) for i in range(n)}
    for e in product(range(degree + 1), repeat=n):
        if 1 <= sum(e) <= degree and e not in seen:
            seen.add(e)
            terms.append(Term("monomial", exponents=e))
    if include_const:
        terms.append(Term("const"))
    return Dictionary(tuple(terms), n)
