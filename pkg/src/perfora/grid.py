"""Uniform finite-difference discretization of window-truncated domains.

Nodes sit on a uniform lattice of spacing ``h``.  Interior nodes carry the
degrees of freedom; every other node (inside a hole, on or outside the window
boundary) is a Dirichlet node with value zero.  A field is a plain 1D array of
interior values.

The energy uses one forward-difference gradient per lattice cell, so for
``p = 2`` it is the usual 2N+1 point Dirichlet form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import InvalidParameter
from .geometry import PerforatedDomain, window_box


@dataclass(frozen=True, eq=False)
class Grid:
    h: float
    lower: np.ndarray
    shape: tuple
    interior: np.ndarray
    center: np.ndarray
    domain: PerforatedDomain | None = None
    k: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        interior = np.asarray(self.interior, dtype=bool).copy()
        interior.setflags(write=False)
        object.__setattr__(self, "interior", interior)
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=np.float64))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_dof(self) -> int:
        return int(self.interior.sum())

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.h * (np.asarray(self.shape) - 1)

    def axes(self):
        return [self.lower[i] + self.h * np.arange(self.shape[i]) for i in range(self.dim)]

    def node_coords(self) -> np.ndarray:
        """Coordinates of every node, shape ``shape + (N,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    @cached_property
    def coords(self) -> np.ndarray:
        """Coordinates of the interior nodes, shape ``(n_dof, N)``."""
        return self.node_coords()[self.interior]

    @cached_property
    def index(self) -> np.ndarray:
        idx = np.full(self.shape, -1, dtype=np.int64)
        idx[self.interior] = np.arange(self.n_dof)
        return idx

    def full(self, u) -> np.ndarray:
        """Scatter interior values into a node array, zero on Dirichlet nodes."""
        U = np.zeros(self.shape)
        U[self.interior] = u
        return U

    def restrict(self, U) -> np.ndarray:
        return np.asarray(U)[self.interior]

    def with_dirichlet(self, extra) -> "Grid":
        """Same lattice with the nodes flagged in ``extra`` turned into Dirichlet nodes."""
        interior = self.interior & ~np.asarray(extra, dtype=bool)
        return Grid(self.h, self.lower, self.shape, interior, self.center, self.domain, self.k,
                    dict(self.meta))

    def remove_ball(self, center, radius: float) -> "Grid":
        """Grid of the set minus the closed ball; ``radius <= 0`` removes nothing."""
        if radius <= 0:
            return self
        d2 = ((self.node_coords() - np.asarray(center)) ** 2).sum(axis=-1)
        return self.with_dirichlet(d2 <= radius * radius * (1 + 1e-12))

    # -- sparse operators ---------------------------------------------------

    @cached_property
    def difference_ops(self) -> list:
        """Forward-difference matrices ``D_j`` mapping interior values to cell gradients."""
        n = self.dim
        cell_shape = tuple(s - 1 for s in self.shape)
        cells = np.arange(int(np.prod(cell_shape)))
        multi = np.stack(np.unravel_index(cells, cell_shape), axis=-1)
        base = self.index[tuple(multi.T)]
        ops = []
        for ax in range(n):
            shifted = multi.copy()
            shifted[:, ax] += 1
            nb = self.index[tuple(shifted.T)]
            rows = np.concatenate([cells[nb >= 0], cells[base >= 0]])
            cols = np.concatenate([nb[nb >= 0], base[base >= 0]])
            vals = np.concatenate([np.full((nb >= 0).sum(), 1.0 / self.h),
                                   np.full((base >= 0).sum(), -1.0 / self.h)])
            ops.append(sp.csr_matrix((vals, (rows, cols)), shape=(cells.size, self.n_dof)))
        return ops

    def stiffness(self, weights=None) -> sp.csc_matrix:
        """``h^N * sum_j D_j^T diag(w) D_j``; with unit weights ``u^T K u`` is the p=2 energy."""
        K = None
        for D in self.difference_ops:
            if weights is None:
                term = D.T @ D
            else:
                term = D.T @ sp.diags(weights) @ D
            K = term if K is None else K + term
        return (K * self.cell_volume).tocsc()

    def cell_sq_gradient(self, u, eps=0.0) -> np.ndarray:
        """``|grad u|^2 + eps^2`` per cell (flattened cell order)."""
        s = np.full(self.difference_ops[0].shape[0], eps * eps)
        for D in self.difference_ops:
            g = D @ u
            s += g * g
        return s


def _node_count(side, h):
    n = np.rint(side / h).astype(int)
    if np.any(n < 1) or np.any(np.abs(n * h - side) > 1e-9 * np.maximum(side, 1.0)):
        raise InvalidParameter(f"h={h} does not divide the window sides {np.asarray(side).tolist()}")
    return n + 1


def _boundary(shape):
    b = np.zeros(shape, dtype=bool)
    for ax in range(len(shape)):
        sl = [slice(None)] * len(shape)
        sl[ax] = 0
        b[tuple(sl)] = True
        sl[ax] = -1
        b[tuple(sl)] = True
    return b


def discretize(domain: PerforatedDomain, k: int, h: float) -> Grid:
    """Grid on the window of cells with ``|i|_inf <= k``."""
    size = domain.cell_size
    if not h <= size.min() / 8 * (1 + 1e-12):
        raise InvalidParameter(f"h={h} too coarse: need h <= min cell side / 8 = {size.min() / 8}")
    lo, hi = window_box(domain, k)
    shape = tuple(_node_count(hi - lo, h))
    axes = [lo[i] + h * np.arange(shape[i]) for i in range(domain.dim)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    interior = domain.contains(pts).reshape(shape) & ~_boundary(shape)
    return Grid(h, lo, shape, interior, 0.5 * (lo + hi), domain, k,
                {"kind": "window", "k": k, "t": list(domain.t)})


def box_grid(lower, upper, h: float, inside=None) -> Grid:
    """Grid on a plain box; ``inside`` (vectorized predicate) carves out the open set."""
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    shape = tuple(_node_count(upper - lower, h))
    interior = ~_boundary(shape)
    if inside is not None:
        axes = [lower[i] + h * np.arange(shape[i]) for i in range(len(shape))]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(shape))
        interior &= np.asarray(inside(pts), dtype=bool).reshape(shape)
    return Grid(h, lower, shape, interior, 0.5 * (lower + upper), None, None,
                {"kind": "box", "lower": lower.tolist(), "upper": upper.tolist()})


def ball_grid(center, radius: float, h: float) -> Grid:
    """Grid whose interior nodes are the lattice nodes strictly inside a ball."""
    c = np.asarray(center, dtype=np.float64)
    n = int(np.ceil(radius / h - 1e-12)) + 1
    lower = c - n * h
    shape = (2 * n + 1,) * c.size
    axes = [lower[i] + h * np.arange(shape[i]) for i in range(c.size)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    inside = ((pts - c) ** 2).sum(axis=-1) < radius * radius * (1 - 1e-12)
    g = Grid(h, lower, shape, inside & ~_boundary(shape), c, None, None,
             {"kind": "ball", "center": c.tolist(), "radius": radius})
    return g


# ---------------------------------------------------------------------------
# energies and norms
# ---------------------------------------------------------------------------

def check_exponents(p: float, q: float, dim: int, allow_equal: bool = True) -> None:
    """Subcritical range: q < p* if p < N, q < inf if p = N, q <= inf if p > N."""
    if not p > 1:
        raise InvalidParameter(f"p must be > 1, got {p}")
    if q < p or (q == p and not allow_equal):
        raise InvalidParameter(f"q={q} must be >= p={p}" if allow_equal else f"q={q} must exceed p={p}")
    if p < dim:
        pstar = dim * p / (dim - p)
        if not q < pstar:
            raise InvalidParameter(f"q={q} must be below the Sobolev exponent p*={pstar}")
    elif p == dim and not np.isfinite(q):
        raise InvalidParameter("q = inf needs p > N")


def dirichlet_energy(grid: Grid, u, p: float, eps_reg: float = 0.0) -> float:
    if not p > 1:
        raise InvalidParameter(f"p must be > 1, got {p}")
    return kernels.energy(grid.full(u), grid.h, p, eps_reg)


def energy_gradient(grid: Grid, u, p: float, eps_reg: float) -> np.ndarray:
    """Exact gradient of ``dirichlet_energy`` with the same regularization."""
    _, G = kernels.energy_grad(grid.full(u), grid.h, p, eps_reg)
    return G[grid.interior]


def energy_and_gradient(grid: Grid, u, p: float, eps_reg: float):
    e, G = kernels.energy_grad(grid.full(u), grid.h, p, eps_reg)
    return e, G[grid.interior]


def lq_norm(grid: Grid, u, q: float, p: float | None = None) -> float:
    """Midpoint-rule L^q norm; ``q = inf`` gives the largest absolute entry."""
    if p is not None:
        check_exponents(p, q, grid.dim)
    elif not q >= 1:
        raise InvalidParameter(f"q must be >= 1, got {q}")
    u = np.asarray(u, dtype=np.float64)
    if u.size == 0:
        return 0.0
    a = np.abs(u)
    if not np.isfinite(q):
        return float(a.max())
    m = a.max()
    if m == 0:
        return 0.0
    # scale by the max so that large q does not underflow
    return float(m * ((a / m) ** q).sum() ** (1.0 / q) * grid.cell_volume ** (1.0 / q))


# ---------------------------------------------------------------------------
# field dump
# ---------------------------------------------------------------------------

def dump_field(grid: Grid, u, path) -> None:
    """Plain-text dump: ``N h dims...`` then the full node array in row-major order."""
    U = grid.full(u)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" ".join([str(grid.dim), format(grid.h, ".17g")] + [str(s) for s in grid.shape]))
        fh.write("\n")
        for v in U.ravel():
            fh.write(format(float(v), ".17g"))
            fh.write("\n")


def load_field(path):
    """Read a dump back as ``(h, node_array)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        n = int(header[0])
        h = float(header[1])
        shape = tuple(int(s) for s in header[2:2 + n])
        vals = np.array([float(line) for line in fh if line.strip()])
    return h, vals.reshape(shape)
