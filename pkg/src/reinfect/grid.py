"""Uniform-time trajectory container shared by the particle and limit solvers."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridMismatch

BASE_COLUMNS = ("t", "F_bar", "S_bar", "I_bar", "U_bar")


def fmt(x: float) -> str:
    """Shortest round-trip decimal form, stable across runs."""
    x = float(x)
    if x == 0.0:
        return "0.0"
    return repr(x)


@dataclass
class TrajectoryGrid:
    dt: float
    times: np.ndarray
    F_bar: np.ndarray
    S_bar: np.ndarray
    I_bar: np.ndarray
    U_bar: np.ndarray
    conservation_residual: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        n = len(self.times)
        for name in ("F_bar", "S_bar", "I_bar", "U_bar"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has the wrong length")

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def check_same_grid(self, other: "TrajectoryGrid") -> None:
        if len(self.times) != len(other.times) or not np.allclose(self.times, other.times, rtol=0, atol=1e-9):
            raise GridMismatch(f"grids differ: {len(self.times)} vs {len(other.times)} points")

    def subsample(self, every: int) -> "TrajectoryGrid":
        sl = slice(None, None, every)
        res = None if self.conservation_residual is None else self.conservation_residual[sl]
        return TrajectoryGrid(self.dt * every, self.times[sl], self.F_bar[sl], self.S_bar[sl],
                              self.I_bar[sl], self.U_bar[sl], res, dict(self.meta))

    def on(self, times: np.ndarray) -> "TrajectoryGrid":
        """Restrict to the grid points matching ``times`` (which must be a sub-grid)."""
        idx = np.rint(np.asarray(times) / self.dt).astype(int)
        if np.any(idx < 0) or np.any(idx >= len(self.times)) or not np.allclose(self.times[idx], times, atol=1e-9):
            raise GridMismatch("requested times are not on this grid")
        step = int(idx[1] - idx[0]) if len(idx) > 1 else 1
        if not np.all(np.diff(idx) == step):
            raise GridMismatch("requested times are not uniformly spaced")
        res = None if self.conservation_residual is None else self.conservation_residual[idx]
        return TrajectoryGrid(self.dt * step, self.times[idx], self.F_bar[idx], self.S_bar[idx],
                              self.I_bar[idx], self.U_bar[idx], res, dict(self.meta))

    def columns(self) -> dict[str, np.ndarray]:
        cols = {"t": self.times, "F_bar": self.F_bar, "S_bar": self.S_bar, "I_bar": self.I_bar, "U_bar": self.U_bar}
        if self.conservation_residual is not None:
            cols["conservation_residual"] = self.conservation_residual
        return cols

    def write_csv(self, path: str | Path) -> None:
        write_columns(path, self.columns())

    @classmethod
    def read_csv(cls, path: str | Path) -> "TrajectoryGrid":
        cols = read_columns(path)
        t = cols["t"]
        dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
        return cls(dt, t, cols["F_bar"], cols["S_bar"], cols["I_bar"], cols["U_bar"],
                   cols.get("conservation_residual"))


def write_columns(path: str | Path, cols: dict[str, np.ndarray]) -> None:
    names = list(cols)
    data = [np.asarray(cols[k]).tolist() for k in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*data):
            w.writerow([v if isinstance(v, (int, np.integer)) else fmt(v) for v in row])


def read_columns(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    return {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(head)}
