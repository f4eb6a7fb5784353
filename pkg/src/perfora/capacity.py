"""Relative p-capacity by obstacle-constrained energy minimization.

``cap_p(K; E)`` is the least p-Dirichlet energy of a field that vanishes on
the boundary of ``E`` and equals 1 on the obstacle ``K``.  Truncating at 1
never increases the energy, so the constraint ``u >= 1`` is imposed as the
equality ``u = 1`` on obstacle nodes; the remaining nodes are clamped to
``[0, 1]`` after each descent step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import kernels
from .errors import InvalidParameter
from .geometry import Ball, HoleShape, PerforatedDomain, window_box
from .grid import Grid, ball_grid, box_grid


@dataclass
class CapacityResult:
    value: float
    potential: np.ndarray  # full node array, 1 on the obstacle, 0 on the boundary
    iterations: int
    residual: float
    h: float
    lower: list
    shape: tuple
    obstacle_nodes: int
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "iterations": self.iterations,
            "residual": self.residual,
            "h": self.h,
            "lower": list(self.lower),
            "shape": list(self.shape),
            "obstacle_nodes": self.obstacle_nodes,
            "meta": self.meta,
        }


def _default_eps(p):
    return 1e-8 if p >= 2 else 1e-6


def minimize_pinned(grid: Grid, base: np.ndarray, p: float, tol: float = 1e-10,
                    max_iters: int = 500, eps_reg: float | None = None):
    """Minimize the p-energy of ``base + scatter(u)`` over interior values ``u`` in [0, 1].

    ``base`` holds the pinned values (1 on the obstacle, 0 elsewhere) and must
    be zero on interior nodes.  Returns ``(full_array, energy, iterations, residual)``.
    """
    if not p > 1:
        raise InvalidParameter(f"p must be > 1, got {p}")
    h = grid.h
    n = grid.n_dof
    if n == 0:
        return base.copy(), kernels.energy(base, h, p, 0.0), 0, 0.0

    def full(u):
        U = base.copy()
        U[grid.interior] = u
        return U

    _, g0 = kernels.energy_grad(base, h, 2.0, 0.0)
    K = grid.stiffness()
    rhs = -0.5 * g0[grid.interior]
    u, info = spla.cg(K, rhs, rtol=1e-10, atol=0.0, maxiter=20 * n)
    if info != 0:
        u = spla.spsolve(K, rhs)
    u = np.clip(u, 0.0, 1.0)
    iterations = 1
    if p == 2.0:
        e, G = kernels.energy_grad(full(u), h, 2.0, 0.0)
        return full(u), e, iterations, _projected_residual(u, G[grid.interior])

    eps = _default_eps(p) if eps_reg is None else eps_reg
    e, G = kernels.energy_grad(full(u), h, p, eps)
    g = G[grid.interior]
    stall = 0
    alpha = 1.0
    for it in range(max_iters):
        s = _full_cell_sq(grid, full(u), eps)
        w = p * max(1.0, p - 1.0) * s ** (0.5 * p - 1.0)
        w = np.maximum(w, 1e-3 * w.max())
        P = grid.stiffness(w)
        d = -spla.splu(P).solve(g)
        alpha = min(1.0, 2 * alpha)
        accepted = False
        while alpha > 1e-14:
            v = np.clip(u + alpha * d, 0.0, 1.0)
            ev = kernels.energy(full(v), h, p, eps)
            if ev <= e + 1e-4 * float(g @ (v - u)):
                accepted = True
                break
            alpha *= 0.5
        iterations += 1
        if not accepted:
            break
        rel = abs(e - ev) / max(abs(ev), 1e-300)
        u = v
        e, G = kernels.energy_grad(full(u), h, p, eps)
        g = G[grid.interior]
        stall = stall + 1 if rel < tol else 0
        if stall >= 3:
            break
    e = kernels.energy(full(u), h, p, 0.0)
    return full(u), e, iterations, _projected_residual(u, g)


def _full_cell_sq(grid, U, eps):
    n = U.ndim
    core = tuple(slice(0, -1) for _ in range(n))
    s = np.full(tuple(x - 1 for x in U.shape), eps * eps)
    for ax in range(n):
        sl = [slice(0, -1)] * n
        sl[ax] = slice(1, None)
        d = (U[tuple(sl)] - U[core]) / grid.h
        s += d * d
    return s.ravel()


def _projected_residual(u, g):
    r = g.copy()
    r[(u <= 0.0) & (g > 0)] = 0.0
    r[(u >= 1.0) & (g < 0)] = 0.0
    return float(np.linalg.norm(r))


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoxRegion:
    lower: tuple
    upper: tuple


@dataclass(frozen=True)
class BallRegion:
    center: tuple
    radius: float


def _region_grid(region, h) -> Grid:
    if isinstance(region, BallRegion):
        return ball_grid(region.center, region.radius, h)
    if isinstance(region, BoxRegion):
        return box_grid(region.lower, region.upper, h)
    raise InvalidParameter(f"unsupported capacity box {region!r}")


def capacity_on_grid(grid: Grid, obstacle: np.ndarray, p: float, tol: float = 1e-10,
                     max_iters: int = 500) -> CapacityResult:
    """Capacity of a node set ``obstacle`` (full boolean array) relative to ``grid``'s open set."""
    obstacle = np.asarray(obstacle, dtype=bool)
    if np.any(obstacle & ~grid.interior):
        raise InvalidParameter("obstacle touches the boundary of the capacity box")
    n_obs = int(obstacle.sum())
    if n_obs == 0:
        return CapacityResult(0.0, np.zeros(grid.shape), 0, 0.0, grid.h, grid.lower.tolist(),
                              grid.shape, 0)
    free = grid.with_dirichlet(obstacle)
    base = obstacle.astype(np.float64)
    U, e, its, res = minimize_pinned(free, base, p, tol=tol, max_iters=max_iters)
    return CapacityResult(float(e), U, its, res, grid.h, grid.lower.tolist(), grid.shape, n_obs)


def relative_capacity(obstacle, box, p: float, h: float, tol: float = 1e-10) -> CapacityResult:
    """``cap_p(obstacle; box)`` on a lattice of spacing ``h``.

    ``obstacle`` is a :class:`HoleShape` (physical coordinates) or a callable
    predicate; ``box`` is a :class:`BoxRegion` or :class:`BallRegion`.
    """
    grid = _region_grid(box, h)
    test = obstacle.contains if isinstance(obstacle, HoleShape) else obstacle
    pts = grid.node_coords().reshape(-1, grid.dim)
    obs = np.asarray(test(pts), dtype=bool).reshape(grid.shape)
    if np.any(obs & ~grid.interior):
        raise InvalidParameter("obstacle touches the boundary of the capacity box")
    res = capacity_on_grid(grid, obs, p, tol)
    res.meta.update({"p": p, "tol": tol})
    return res


def ball_volume(dim: int, r: float = 1.0) -> float:
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1) * r ** dim


@dataclass
class GammaResult:
    gamma: float
    capacity: float
    lambda_p: float
    ball_volume: float
    h: float


def gamma_constant(dim: int, p: float, h: float, tol: float = 1e-10) -> GammaResult:
    """Ratio ``cap_p(closed B_1; B_2) / (|B_1| lambda_p(B_2))`` on matched grids."""
    from .solver import SolveConfig, lambda_pq

    cap = relative_capacity(Ball((0.0,) * dim, 1.0), BallRegion((0.0,) * dim, 2.0), p, h, tol)
    grid = ball_grid((0.0,) * dim, 2.0, h)
    lam = lambda_pq(grid, SolveConfig(p=p, q=p, tol=1e-12)).lam
    vol = ball_volume(dim)
    return GammaResult(cap.value / (vol * lam), cap.value, lam, vol, h)


# ---------------------------------------------------------------------------
# negligibility and capacitary inradius
# ---------------------------------------------------------------------------

@dataclass
class NegligibilityResult:
    negligible: bool
    lhs: float
    rhs: float
    full: float


def _sigma_nodes(domain: PerforatedDomain, grid: Grid, center, r):
    pts = grid.node_coords()
    in_ball = ((pts - np.asarray(center)) ** 2).sum(axis=-1) <= r * r * (1 + 1e-12)
    sigma = np.zeros(grid.shape, dtype=bool)
    if in_ball.any():
        sigma[in_ball] = ~domain.contains(pts[in_ball])
    return sigma, in_ball


def negligibility_test(domain: PerforatedDomain, center, r: float, p: float, gamma: float,
                       h: float, tol: float = 1e-10, _full=None) -> NegligibilityResult:
    """Compare ``cap_p(closed B_r \\ Omega; B_2r)`` with ``gamma * cap_p(closed B_r; B_2r)``."""
    if not 0 < gamma < 1:
        raise InvalidParameter(f"gamma must lie in (0, 1), got {gamma}")
    grid = ball_grid(center, 2 * r, h)
    sigma, ball = _sigma_nodes(domain, grid, center, r)
    full = _full if _full is not None else capacity_on_grid(grid, ball, p, tol).value
    if not sigma.any():
        lhs = 0.0
    elif np.array_equal(sigma, ball):
        lhs = full
    else:
        lhs = capacity_on_grid(grid, sigma, p, tol).value
    rhs = gamma * full
    return NegligibilityResult(bool(lhs <= rhs), lhs, rhs, full)


def default_radii(r_min: float, r_max: float):
    """Geometric radius list with ratio 2^(1/4), from ``r_min`` up to at most ``r_max``."""
    out = []
    r = r_min
    while r <= r_max * (1 + 1e-12):
        out.append(r)
        r *= 2 ** 0.25
    return out


@dataclass
class CapacitaryInradius:
    value: float
    center: tuple | None
    lhs: float
    rhs: float
    tested: int


def capacitary_inradius(domain: PerforatedDomain, p: float, gamma: float, k: int, h: float,
                        radii=None, stride: float | None = None, tol: float = 1e-10) -> CapacitaryInradius:
    """Largest listed radius with a (p, gamma)-negligible ball inside the window.

    Centers run over a lattice of the given stride (default ``h/2``); for an
    unmodified periodic set only the central cell is scanned, which loses
    nothing because every other candidate ball is a translate of one there
    with at least as much room in the window.
    """
    if not 0 < gamma < 1:
        raise InvalidParameter(f"gamma must lie in (0, 1), got {gamma}")
    lo, hi = window_box(domain, k)
    half_min = float((hi - lo).min() / 2)
    if radii is None:
        radii = default_radii(2 * h, half_min)
    radii = sorted(set(float(r) for r in radii), reverse=True)
    if not radii:
        raise InvalidParameter("radius list is empty")
    stride = h / 2 if stride is None else stride
    if domain.periodic and not domain.modifications:
        c_lo, c_hi = -0.5 * domain.cell_size, 0.5 * domain.cell_size
    else:
        c_lo, c_hi = lo, hi
    axes = [np.arange(math.ceil(c_lo[i] / stride - 1e-9), math.floor(c_hi[i] / stride + 1e-9) + 1) * stride
            for i in range(domain.dim)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    tested = 0
    from .solver import SolveConfig, lambda_pq

    for r in radii:
        fits = np.all((centers - r >= lo - 1e-12) & (centers + r <= hi + 1e-12), axis=1)
        cand = centers[fits]
        if cand.size == 0:
            continue
        probe = ball_grid(np.zeros(domain.dim), 2 * r, h)
        lam = None
        full = None
        seen = {}  # the capacity depends only on the node pattern of sigma
        for c in cand:
            grid = ball_grid(c, 2 * r, h)
            sigma, ball = _sigma_nodes(domain, grid, c, r)
            tested += 1
            if not sigma.any():
                return CapacitaryInradius(r, tuple(float(x) for x in c), 0.0, 0.0, tested)
            if full is None:
                full = capacity_on_grid(grid, ball, p, tol).value
                lam = lambda_pq(probe, SolveConfig(p=p, q=p, tol=1e-10)).lam
            # cap(S) >= lambda_p(B_2r) * |S| holds exactly on the lattice
            if lam * grid.cell_volume * sigma.sum() > gamma * full * (1 + 1e-9):
                continue
            key = sigma.tobytes()
            if key not in seen:
                seen[key] = capacity_on_grid(grid, sigma, p, tol).value
            lhs = seen[key]
            if lhs <= gamma * full:
                return CapacitaryInradius(r, tuple(float(x) for x in c), lhs, gamma * full, tested)
    return CapacitaryInradius(0.0, None, float("nan"), float("nan"), tested)


# ---------------------------------------------------------------------------
# zero-capacity detection
# ---------------------------------------------------------------------------

def counting_dimension(shape: HoleShape, h: float) -> float:
    """Box-counting dimension of the obstacle's node set between ``h`` and ``h/2``."""
    counts = []
    for hh in (h, h / 2):
        grid = box_grid((-1.0,) * shape.dim, (1.0,) * shape.dim, hh)
        pts = grid.node_coords().reshape(-1, shape.dim)
        counts.append(int(shape.contains(pts).sum()))
    if counts[0] == 0:
        return float("-inf")
    return math.log2(max(counts[1], 1) / counts[0])


def capacity_vanishes(shape: HoleShape, p: float, h: float) -> bool:
    """Decide ``cap_p(K; Q_1) = 0`` from the counting dimension d: zero iff p <= N - d."""
    if shape.is_empty:
        return True
    d = counting_dimension(shape, h)
    if d == float("-inf"):
        return True
    dim = shape.dim
    if p > dim:
        return False
    return p <= dim - round(d)
