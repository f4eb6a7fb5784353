"""Sharp constants lambda_{p,q} by preconditioned descent on the Rayleigh quotient.

The iterate always lives on the positive part of the unit L^q sphere: after a
step ``w = u + alpha d`` the retraction ``u <- |w| / ||w||_q`` is applied, and
a step is kept only if the quotient passes the Armijo test, so the recorded
history is non-increasing.  The direction is the quotient gradient
preconditioned by a weighted stiffness matrix that majorizes the Hessian of the
energy.  At p = 2 the unit step is exactly one nonlinear inverse iteration.
"""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidParameter
from .grid import Grid, check_exponents, dirichlet_energy, energy_and_gradient, lq_norm

DEFAULT_Q_LIST = (8.0, 16.0, 32.0, 64.0)
LEVEL_FRACTIONS = (0.1, 0.25, 0.5, 0.75)
ALPHA_CAP = 4.0


@dataclass(frozen=True)
class SolveConfig:
    p: float = 2.0
    q: float = 4.0
    tol: float = 1e-8
    max_iters: int = 50_000
    eps_reg: float | None = None
    step: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    seed: int = 0
    penalty_n: float | None = None
    starts: int = 5
    stall: int = 10
    refresh: int = 10
    threads: int | None = None

    def validate(self, dim: int) -> None:
        check_exponents(self.p, self.q, dim)
        if not self.tol > 0:
            raise InvalidParameter(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1 or self.starts < 1 or self.stall < 1 or self.refresh < 1:
            raise InvalidParameter("max_iters, starts, stall and refresh must be >= 1")
        if not (0 < self.shrink < 1 and 0 < self.armijo < 1 and self.step > 0):
            raise InvalidParameter("need 0 < shrink < 1, 0 < armijo < 1, step > 0")
        if self.penalty_n is not None and not self.penalty_n >= 0:
            raise InvalidParameter(f"penalty index must be >= 0, got {self.penalty_n}")
        if self.eps_reg is not None and not self.eps_reg >= 0:
            raise InvalidParameter(f"eps_reg must be >= 0, got {self.eps_reg}")
        if self.threads is not None and self.threads < 1:
            raise InvalidParameter(f"threads must be >= 1, got {self.threads}")

    @property
    def eps(self) -> float:
        if self.eps_reg is not None:
            return self.eps_reg
        return 1e-8 if self.p >= 2 else 1e-6

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eps_reg"] = self.eps
        del d["threads"]  # worker count never changes the result
        return d


@dataclass
class SolveReport:
    lam: float
    extremal: np.ndarray
    iterations: int
    history: list
    converged: bool
    diagnostics: dict
    config: dict
    starts: list = field(default_factory=list)
    grid_meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "iterations": self.iterations,
            "converged": self.converged,
            "history_length": len(self.history),
            "history_tail": list(self.history[-5:]),
            "diagnostics": self.diagnostics,
            "starts": self.starts,
            "config": self.config,
            "grid": self.grid_meta,
        }


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("PERFORA_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


# ---------------------------------------------------------------------------
# penalty and diagnostics
# ---------------------------------------------------------------------------

def penalty_weights(grid: Grid, n: float | None):
    """``V_n = |x - c| / (n + 1)`` at interior nodes, ``None`` for no penalty."""
    if n is None or math.isinf(n):
        return None
    return np.linalg.norm(grid.coords - grid.center, axis=1) / (n + 1.0)


def level_set_measure(grid: Grid, u, eps: float) -> float:
    """``h^N * #{u > eps}``."""
    return float(grid.cell_volume * np.count_nonzero(np.asarray(u) > eps))


def components(grid: Grid) -> np.ndarray:
    """Label per interior node of its connected component (lattice edges), labels 0..m-1."""
    labels, _ = ndi.label(grid.interior)
    lab = labels[grid.interior]
    # relabel in order of first appearance so labels do not depend on ndi internals
    _, first, inv = np.unique(lab, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inv]


def component_masses(grid: Grid, u, q: float) -> dict:
    """Share of ``||u||_q^q`` carried by each connected component of the interior nodes."""
    if grid.n_dof == 0:
        return {"shares": [], "total": 0.0, "zero_field": True}
    lab = components(grid)
    a = np.abs(np.asarray(u, dtype=np.float64))
    m = a.max()
    if m == 0:
        return {"shares": [0.0] * int(lab.max() + 1), "total": 0.0, "zero_field": True}
    w = (a / m) ** q if np.isfinite(q) else (a == m).astype(float)
    mass = np.bincount(lab, weights=w, minlength=int(lab.max() + 1))
    total = mass.sum()
    return {"shares": (mass / total).tolist(),
            "total": float(total * m ** q * grid.cell_volume) if np.isfinite(q) else float(m),
            "zero_field": False}


def _diagnostics(grid, u, cfg):
    sup = float(np.max(u)) if u.size else 0.0
    diag = {
        "sup_norm": sup,
        "level_set_measure": [[f, level_set_measure(grid, u, f * sup)] for f in LEVEL_FRACTIONS],
        "component_masses": component_masses(grid, u, cfg.q),
    }
    V = penalty_weights(grid, cfg.penalty_n)
    if V is not None:
        a = np.abs(u) ** cfg.p * grid.cell_volume
        diag["moments"] = {"1": float((V * a).sum()), "2": float((V * V * a).sum())}
    return diag


# ---------------------------------------------------------------------------
# starting fields
# ---------------------------------------------------------------------------

def _bump(grid, c, radius):
    r2 = ((grid.coords - c) ** 2).sum(axis=1) / (radius * radius)
    return np.clip(1.0 - r2, 0.0, None)


def start_fields(grid: Grid, count: int, seed: int):
    """Starts in fixed order: constant, random, center bump, quadrant bumps, more random."""
    lo, hi = grid.lower, grid.upper
    half = 0.5 * (hi - lo)
    rad = 0.5 * half.min()
    out = [np.ones(grid.n_dof), np.random.default_rng(seed).random(grid.n_dof),
           _bump(grid, grid.center, rad)]
    for signs in np.ndindex(*(2,) * grid.dim):
        c = grid.center + (np.asarray(signs) - 0.5) * half
        out.append(_bump(grid, c, rad))
    extra = 1
    while len(out) < count:
        out.append(np.random.default_rng(seed + extra).random(grid.n_dof))
        extra += 1
    fixed = []
    for u in out[:count]:
        if not np.any(u > 0):
            u = u + 1e-3
        fixed.append(u)
    return fixed


def fingerprint(u) -> str:
    q = np.rint(np.asarray(u) * 1e8).astype(np.int64)
    return hashlib.sha256(q.tobytes()).hexdigest()


# ---------------------------------------------------------------------------
# descent
# ---------------------------------------------------------------------------

class _Problem:
    def __init__(self, grid, cfg):
        self.grid = grid
        self.p = float(cfg.p)
        self.q = float(cfg.q)
        self.eps = cfg.eps
        self.V = penalty_weights(grid, cfg.penalty_n)
        self.hN = grid.cell_volume
        self._p2 = None

    def objective(self, u, grad=True):
        p = self.p
        if grad:
            e, g = energy_and_gradient(self.grid, u, p, self.eps)
        else:
            e, g = dirichlet_energy(self.grid, u, p, self.eps), None
        if self.V is not None:
            a = np.abs(u)
            e += self.hN * float((self.V * a ** p).sum())
            if grad:
                g = g + self.hN * p * self.V * a ** (p - 1) * np.sign(u)
        return e, g

    def exact(self, u):
        e = dirichlet_energy(self.grid, u, self.p, 0.0)
        if self.V is not None:
            e += self.hN * float((self.V * np.abs(u) ** self.p).sum())
        return e

    def normalize(self, w):
        a = np.abs(w)
        return a / lq_norm(self.grid, a, self.q)

    def preconditioner(self, u):
        p, grid = self.p, self.grid
        if p == 2.0:
            if self._p2 is None:
                A = grid.stiffness()
                if self.V is not None:
                    A = A + sp.diags(self.V * self.hN)
                self._p2 = spla.splu((2.0 * A).tocsc())
            return self._p2
        c = p * max(1.0, p - 1.0)
        s = grid.cell_sq_gradient(u, self.eps)
        w = c * s ** (0.5 * p - 1.0)
        w = np.maximum(w, 1e-3 * w.max())
        A = grid.stiffness(w)
        if self.V is not None:
            a2 = u * u + (1e-3 * max(u.max(), 1e-300)) ** 2
            A = A + sp.diags(c * self.V * a2 ** (0.5 * p - 1.0) * self.hN)
        return spla.splu(A.tocsc())


def _descend(prob: _Problem, u0, cfg: SolveConfig):
    u = prob.normalize(u0)
    F, g = prob.objective(u)
    hist = [F]
    alpha = cfg.step
    stall = 0
    P = None
    converged = False
    it = 0
    d_old = z_old = gR_old = None
    for it in range(1, cfg.max_iters + 1):
        if P is None or (prob.p != 2.0 and it % cfg.refresh == 1):
            P = prob.preconditioner(u)
            d_old = None
        gR = g - prob.p * F * prob.hN * u ** (prob.q - 1.0)
        z = P.solve(gR)
        d = -z
        if d_old is not None:
            # Polak-Ribiere+ in the preconditioned metric
            beta = max(0.0, float(gR @ (z - z_old)) / float(gR_old @ z_old))
            d = d + beta * d_old
        slope = float(gR @ d)
        if not slope < 0 and d_old is not None:
            d = -z
            slope = float(gR @ d)
        if not slope < 0:
            converged = True
            break
        alpha = min(2.0 * alpha, ALPHA_CAP * cfg.step) if it > 1 else cfg.step
        accepted = False
        while alpha > 1e-14:
            v = prob.normalize(u + alpha * d)
            Fv, _ = prob.objective(v, grad=False)
            if Fv <= F + cfg.armijo * alpha * slope:
                accepted = True
                break
            alpha *= cfg.shrink
        if not accepted:
            # rounding floor: no representable decrease left along a descent direction
            converged = abs(slope) <= 1e-8 * abs(F)
            break
        rel = (F - Fv) / max(abs(Fv), 1e-300)
        d_old, z_old, gR_old = d, z, gR
        u = v
        F, g = prob.objective(u)
        hist.append(F)
        stall = stall + 1 if rel < cfg.tol else 0
        if stall >= cfg.stall:
            converged = True
            break
    return u, hist, it, converged


def inverse_power_iteration(A, M_diag, u0, tol=1e-13, max_iters=100_000):
    """Plain inverse iteration for the least eigenpair of ``A x = lam M x`` (M diagonal)."""
    lu = spla.splu(sp.csc_matrix(A))
    x = np.asarray(u0, dtype=np.float64)
    lam_old = np.inf
    for it in range(1, max_iters + 1):
        y = lu.solve(M_diag * x)
        y /= math.sqrt(float(y @ (M_diag * y)))
        lam = float(y @ (A @ y))
        x = y
        if abs(lam_old - lam) <= tol * abs(lam):
            return lam, np.abs(x), it
        lam_old = lam
    return lam, np.abs(x), max_iters


def _fast_22(grid: Grid, cfg: SolveConfig, prob: _Problem):
    A = grid.stiffness()
    if prob.V is not None:
        A = A + sp.diags(prob.V * prob.hN)
    n = grid.n_dof
    M = np.full(n, prob.hN)
    if n <= 2:
        lam, x, its = inverse_power_iteration(A, M, np.ones(n))
    else:
        # shift-invert Lanczos: inverse power iteration with Krylov acceleration
        vals, vecs = spla.eigsh(A.tocsc(), k=1, M=sp.diags(M).tocsc(), sigma=0.0, which="LM",
                                v0=np.ones(n), tol=0.0)
        x = vecs[:, 0]
        its = 1
    u = prob.normalize(x)
    lam = prob.exact(u)
    return u, [lam], its, True


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def _grid_meta(grid: Grid) -> dict:
    return {"h": grid.h, "shape": list(grid.shape), "lower": grid.lower.tolist(),
            "n_dof": grid.n_dof, **grid.meta}


def lambda_pq(grid: Grid, cfg: SolveConfig, extra_starts=()) -> SolveReport:
    """Best-of-starts estimate of ``lambda_{p,q}`` (with the V_n penalty when ``cfg.penalty_n`` is set).

    ``extra_starts`` are interior-value arrays tried after the default starts;
    passing the extremal of a larger problem makes inclusion monotonicity exact.
    """
    cfg.validate(grid.dim)
    if math.isinf(cfg.q):
        return lambda_p_infinity(grid, cfg).report
    if grid.n_dof == 0:
        return SolveReport(math.inf, np.zeros(0), 0, [], True, {"sup_norm": 0.0},
                           cfg.to_dict(), [], _grid_meta(grid))
    prob = _Problem(grid, cfg)
    if cfg.p == 2.0 and cfg.q == 2.0:
        u, hist, its, conv = _fast_22(grid, cfg, prob)
        results = [(prob.exact(u), u, hist, its, conv, "inverse-power")]
    else:
        starts = start_fields(grid, cfg.starts, cfg.seed)
        names = ["start%d" % i for i in range(len(starts))]
        for j, s in enumerate(extra_starts):
            s = np.asarray(s, dtype=np.float64)
            if s.shape != (grid.n_dof,):
                raise InvalidParameter("extra start has the wrong length")
            starts.append(s if np.any(s != 0) else s + 1e-3)
            names.append("extra%d" % j)

        def run(u0):
            u, hist, its, conv = _descend(prob, u0, cfg)
            return prob.exact(u), u, hist, its, conv

        workers = min(resolve_threads(cfg.threads), len(starts))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                outs = list(ex.map(run, starts))
        else:
            outs = [run(s) for s in starts]
        results = [o + (nm,) for o, nm in zip(outs, names)]

    best = min(results, key=lambda r: (r[0], fingerprint(r[1])))
    lam, u, hist, its, conv, _ = best
    summary = [{"start": r[5], "lambda": r[0], "iterations": r[3], "converged": r[4]} for r in results]
    return SolveReport(lam, u, its, hist, conv, _diagnostics(grid, u, cfg), cfg.to_dict(), summary,
                       _grid_meta(grid))


def lambda_pq_penalized(grid: Grid, cfg: SolveConfig, extra_starts=()) -> SolveReport:
    """``lambda_{p,q}(Omega; V_n)``; ``cfg.penalty_n`` must be set (``inf`` means no penalty)."""
    if cfg.penalty_n is None:
        raise InvalidParameter("penalized solve needs penalty_n")
    return lambda_pq(grid, cfg, extra_starts)


# ---------------------------------------------------------------------------
# q = infinity
# ---------------------------------------------------------------------------

@dataclass
class InfinityResult:
    estimate: float
    table: list
    band: tuple
    extrapolated: float
    point: list
    report: SolveReport

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "table": self.table, "band": list(self.band),
                "extrapolated": self.extrapolated, "point": self.point,
                "report": self.report.to_dict()}


def point_capacity(grid: Grid, node: int, p: float, tol: float = 1e-10) -> tuple:
    """Least energy of a field with ``u = 1`` at interior node ``node``; returns (value, full array)."""
    from .capacity import minimize_pinned

    pin = np.zeros(grid.shape, dtype=bool)
    pin[tuple(np.argwhere(grid.interior)[node])] = True
    free = grid.with_dirichlet(pin)
    U, e, _, _ = minimize_pinned(free, pin.astype(np.float64), p, tol=tol)
    return e, U


def _extrapolate(table):
    """Zero-intercept of ``log lambda_q`` against ``1/q`` through the last two sweep points."""
    if len(table) < 2:
        return float(table[-1][1])
    (q1, l1), (q2, l2) = table[-2], table[-1]
    x1, x2 = 1.0 / q1, 1.0 / q2
    y1, y2 = math.log(l1), math.log(l2)
    return float(math.exp(y2 - (y1 - y2) / (x1 - x2) * x2))


def sweep_band(grid: Grid, p: float, table):
    """Bracket for the lattice ``lambda_{p,inf}`` implied by each sweep value.

    For a field with max 1, ``h^N <= ||u||_q^q <= |A|`` where ``|A|`` is the
    measure of the interior nodes, hence
    ``lambda_q h^(Np/q) <= lambda_inf <= lambda_q |A|^(p/q)`` whenever
    ``lambda_q`` is the true discrete minimum.
    """
    hN = grid.cell_volume
    area = hN * grid.n_dof
    lo = max(v * hN ** (p / q) for q, v in table)
    hi = min(v * area ** (p / q) for q, v in table)
    return float(lo), float(hi)


def _point_descent(grid: Grid, p: float, start: int):
    """Neighbour descent on the point capacity, ties to the lower node index."""
    idx = grid.index
    pos = np.argwhere(grid.interior)
    cache = {}

    def cap(node):
        if node not in cache:
            cache[node] = point_capacity(grid, node, p)
        return cache[node]

    cur = start
    while True:
        best = cur
        here = pos[cur]
        for off in np.ndindex(*(3,) * grid.dim):
            nb = here + np.asarray(off) - 1
            if np.any(nb < 0) or np.any(nb >= grid.shape):
                continue
            j = int(idx[tuple(nb)])
            if j < 0 or j == cur:
                continue
            if (cap(j)[0], j) < (cap(best)[0], best):
                best = j
        if best == cur:
            break
        cur = best
    value, U = cap(cur)
    return cur, float(value), U[grid.interior], len(cache)


def lambda_p_infinity(grid: Grid, cfg: SolveConfig, q_list=DEFAULT_Q_LIST) -> InfinityResult:
    """Sup-norm constant ``lambda_{p,inf}`` with a finite-q sweep as evidence.

    On the lattice, ``min{E(u) : max|u| = 1}`` is the least point capacity over
    interior nodes.  The direct value runs neighbour descent on the point
    capacity from the lowest-index maximizer of the smallest-q extremal.  Every
    sweep solve is also started from the direct field and from the previous
    extremal (continuation in q).
    """
    p = float(cfg.p)
    if not p > grid.dim:
        raise InvalidParameter(f"q = inf needs p > N (p={p}, N={grid.dim})")
    q_list = sorted(float(q) for q in q_list)
    if not q_list or any(not (p < q < math.inf) for q in q_list):
        raise InvalidParameter("q_list must hold finite exponents above p")
    icfg = {**cfg.to_dict(), "q": math.inf}
    if grid.n_dof == 0:
        rep = SolveReport(math.inf, np.zeros(0), 0, [], True, {"sup_norm": 0.0}, icfg, [],
                          _grid_meta(grid))
        return InfinityResult(math.inf, [], (math.inf, math.inf), math.inf, [], rep)

    first = lambda_pq(grid, replace(cfg, q=q_list[0]))
    node, value, u, probes = _point_descent(grid, p, int(np.argmax(first.extremal)))
    u = np.abs(u) / np.abs(u).max()

    table = []
    prev = first.extremal
    for q in q_list:
        rep_q = lambda_pq(grid, replace(cfg, q=q), (u, prev))
        table.append([q, rep_q.lam])
        prev = rep_q.extremal

    diag = {"sup_norm": 1.0,
            "level_set_measure": [[f, level_set_measure(grid, u, f)] for f in LEVEL_FRACTIONS],
            "component_masses": component_masses(grid, u, math.inf)}
    rep = SolveReport(value, u, probes, [value], True, diag, icfg,
                      [{"start": "point-capacity", "lambda": value, "iterations": probes,
                        "converged": True}], _grid_meta(grid))
    point = np.argwhere(grid.interior)[node] * grid.h + grid.lower
    return InfinityResult(value, table, sweep_band(grid, p, table), _extrapolate(table),
                          point.tolist(), rep)
