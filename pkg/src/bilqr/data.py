"""Trajectory batches and their on-disk CSV/JSON representation.

A batch holds M trajectories recorded at a uniform sampling time: states of
shape (M, T+1, n) and controls of shape (M, T, m).  On disk each trajectory
is one CSV file with header ``k,x_1..x_n,u_1..u_m`` and T+1 rows; the control
cells of the final row are left empty.  A ``meta.json`` file next to the CSVs
records dimensions, dt and provenance.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateDataError, DimensionMismatchError, InvalidInputError


def atomic_write_text(path: Path | str, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file + rename (never half-written)."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj, path: Path | str) -> None:
    # json round-trips doubles exactly through repr (shortest round-trip form)
    atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


@dataclass(frozen=True)
class TrajectoryBatch:
    """M trajectories of uniform length: (T+1) states and T controls each."""

    states: np.ndarray    # (M, T+1, n)
    controls: np.ndarray  # (M, T, m)
    dt: float

    def __post_init__(self):
        x, u = np.asarray(self.states, float), np.asarray(self.controls, float)
        if x.ndim != 3 or u.ndim != 3:
            raise DimensionMismatchError("states must be (M,T+1,n), controls (M,T,m)")
        if x.shape[0] != u.shape[0] or x.shape[1] != u.shape[1] + 1:
            raise DimensionMismatchError(
                f"inconsistent batch shapes {x.shape} vs {u.shape}")
        if not (np.isfinite(x).all() and np.isfinite(u).all()):
            raise InvalidInputError("batch contains non-finite values")
        if self.dt <= 0:
            raise InvalidInputError("dt must be positive")
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "controls", u)

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        """Number of controls T per trajectory."""
        return self.controls.shape[1]

    @property
    def n(self) -> int:
        return self.states.shape[2]

    @property
    def m(self) -> int:
        return self.controls.shape[2]

    @staticmethod
    def from_trajectories(pairs, dt: float) -> "TrajectoryBatch":
        """Build from a list of (states, controls) pairs; rejects ragged lengths."""
        if not pairs:
            raise DegenerateDataError("empty trajectory list")
        xs, us = [], []
        for x, u in pairs:
            x, u = np.asarray(x, float), np.asarray(u, float)
            if x.shape[0] != u.shape[0] + 1:
                raise DimensionMismatchError(
                    f"trajectory has {x.shape[0]} states but {u.shape[0]} controls")
            xs.append(x)
            us.append(u)
        if len({x.shape for x in xs}) != 1 or len({u.shape for u in us}) != 1:
            raise DimensionMismatchError("ragged trajectory lengths in batch")
        return TrajectoryBatch(np.stack(xs), np.stack(us), dt)


def save_batch(batch: TrajectoryBatch, out_dir: Path | str, meta_extra: dict | None = None) -> None:
    """Write DIR/meta.json and DIR/traj_%04d.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "n": batch.n,
        "m": batch.m,
        "dt": batch.dt,
        "n_traj": batch.n_traj,
        "horizon": batch.horizon,
    }
    if meta_extra:
        meta.update(meta_extra)
    dump_json(meta, out / "meta.json")
    for i in range(batch.n_traj):
        save_trajectory_csv(out / f"traj_{i:04d}.csv",
                            batch.states[i], batch.controls[i])


def save_trajectory_csv(path: Path | str, states: np.ndarray, controls: np.ndarray | None) -> None:
    states = np.asarray(states, float)
    n = states.shape[1]
    m = 0 if controls is None else np.asarray(controls).shape[1]
    header = ["k"] + [f"x_{j+1}" for j in range(n)] + [f"u_{j+1}" for j in range(m)]
    rows = []
    for k in range(states.shape[0]):
        row = [str(k)] + [repr(float(v)) for v in states[k]]
        if controls is not None and k < len(controls):
            row += [repr(float(v)) for v in controls[k]]
        else:
            row += [""] * m
        rows.append(row)
    buf = [",".join(header)] + [",".join(r) for r in rows]
    atomic_write_text(path, "\n".join(buf) + "\n")


def load_trajectory_csv(path: Path | str):
    """Read one trajectory CSV; returns (states, controls)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n = sum(1 for h in header if h.startswith("x_"))
        m = sum(1 for h in header if h.startswith("u_"))
        xs, us = [], []
        for row in reader:
            if not row:
                continue
            xs.append([float(v) for v in row[1:1 + n]])
            ucells = row[1 + n:1 + n + m]
            if all(c != "" for c in ucells) and m > 0:
                us.append([float(v) for v in ucells])
    return np.array(xs), np.array(us).reshape(len(us), m)


def load_batch(data_dir: Path | str, truncate_to_shortest: bool = False) -> TrajectoryBatch:
    """Read meta.json + traj_*.csv from a directory."""
    data_dir = Path(data_dir)
    meta_path = data_dir / "meta.json"
    if not meta_path.exists():
        raise DegenerateDataError(f"no meta.json in {data_dir}")
    meta = json.loads(meta_path.read_text())
    files = sorted(data_dir.glob("traj_*.csv"))
    if not files:
        raise DegenerateDataError(f"no trajectory CSVs in {data_dir}")
    pairs = [load_trajectory_csv(f) for f in files]
    if truncate_to_shortest:
        t_min = min(u.shape[0] for _, u in pairs)
        pairs = [(x[: t_min + 1], u[:t_min]) for x, u in pairs]
    return TrajectoryBatch.from_trajectories(pairs, float(meta["dt"]))
