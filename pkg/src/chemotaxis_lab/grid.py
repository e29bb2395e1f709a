"""Uniform cell-centred box meshes, cell fields and discrete calculus.

Fields are plain ``numpy`` arrays of shape ``grid.shape`` (axis 0 is x,
axis 1 is y).  Faces on the box boundary carry zero flux, so every
gradient-type quantity only sums over interior faces.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

SUPPORTED_DIMS = (1, 2)


@dataclass(frozen=True)
class Grid:
    dim: int
    cells: int
    extent: float

    @property
    def h(self) -> float:
        return self.extent / self.cells

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells,) * self.dim

    @property
    def shape3(self) -> tuple[int, int, int]:
        """Shape padded to three axes, as consumed by the compiled kernels."""
        return tuple(self.shape) + (1,) * (3 - self.dim)

    @property
    def n_cells(self) -> int:
        return self.cells**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def volume(self) -> float:
        return self.extent**self.dim

    def axis_centers(self) -> np.ndarray:
        return (np.arange(self.cells) + 0.5) * self.h

    def centers(self) -> tuple[np.ndarray, ...]:
        """Cell-centre coordinates, one array of ``shape`` per axis."""
        c = self.axis_centers()
        return tuple(np.meshgrid(*([c] * self.dim), indexing="ij"))

    def face_centers(self, axis: int) -> tuple[np.ndarray, ...]:
        """Coordinates of the interior faces normal to ``axis``."""
        c = self.axis_centers()
        faces = np.arange(1, self.cells) * self.h
        axes = [faces if a == axis else c for a in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))


@dataclass
class State:
    t: float
    u: np.ndarray
    v: np.ndarray

    def copy(self) -> "State":
        return State(self.t, self.u.copy(), self.v.copy())


def build_grid(dim: int, cells_per_axis: int, extent: float) -> Grid:
    if dim not in SUPPORTED_DIMS:
        raise ValueError(f"dim must be one of {SUPPORTED_DIMS}, got {dim}")
    if int(cells_per_axis) != cells_per_axis or cells_per_axis < 4:
        raise ValueError(f"cells_per_axis must be an integer >= 4, got {cells_per_axis}")
    if not extent > 0 or not np.isfinite(extent):
        raise ValueError(f"extent must be positive, got {extent}")
    return Grid(int(dim), int(cells_per_axis), float(extent))


def check_field(f: np.ndarray, g: Grid, name: str = "field") -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != g.shape:
        if f.size != g.n_cells:
            raise ValueError(f"{name} has {f.size} entries, grid has {g.n_cells} cells")
        f = f.reshape(g.shape)
    if not np.all(np.isfinite(f)):
        raise ValueError(f"{name} contains non-finite values")
    return f


def integrate(f: np.ndarray, g: Grid) -> float:
    return float(np.sum(f) * g.cell_volume)


def lp_norm(f: np.ndarray, g: Grid, p: float) -> float:
    if not (p >= 1 and np.isfinite(p)):
        raise ValueError(f"p must be finite and >= 1, got {p}")
    return float((np.sum(np.abs(f) ** p) * g.cell_volume) ** (1.0 / p))


def face_gradients(f: np.ndarray, g: Grid) -> list[np.ndarray]:
    """Two-point gradients on interior faces, one array per axis."""
    return [np.diff(f, axis=a) / g.h for a in range(g.dim)]


def grad_sq_integral(f: np.ndarray, g: Grid) -> float:
    """Sum over interior faces of the squared face gradient times h^dim."""
    return float(sum(np.sum(d * d) for d in face_gradients(f, g)) * g.cell_volume)


# ---------------------------------------------------------------- snapshots

SNAPSHOT_HEADER = "# dim,cells,extent,t"


def write_snapshot(path: str | Path, state: State, g: Grid) -> None:
    """CSV snapshot: two comment lines (header names, header values), then
    one ``index,x[,y],u,v`` row per cell in C order."""
    coords = [c.ravel() for c in g.centers()]
    cols = [np.arange(g.n_cells)] + coords + [state.u.ravel(), state.v.ravel()]
    lines = [SNAPSHOT_HEADER, f"# {g.dim},{g.cells},{g.extent!r},{state.t!r}"]
    for row in zip(*cols):
        idx = int(row[0])
        lines.append(",".join([str(idx)] + [f"{x:.16e}" for x in row[1:]]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot(path: str | Path) -> tuple[Grid, State]:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != SNAPSHOT_HEADER:
            raise ValueError(f"{path}: unexpected snapshot header {header!r}")
        dim, cells, extent, t = fh.readline().lstrip("#").strip().split(",")
        g = build_grid(int(dim), int(cells), float(extent))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape != (g.n_cells, g.dim + 3):
        raise ValueError(f"{path}: expected {g.n_cells} rows of {g.dim + 3} columns")
    order = np.argsort(data[:, 0], kind="stable")
    data = data[order]
    u = data[:, g.dim + 1].reshape(g.shape)
    v = data[:, g.dim + 2].reshape(g.shape)
    return g, State(float(t), u, v)
