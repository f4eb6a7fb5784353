"""The bundled acceptance suite behind ``perfora verify``.

Each criterion returns its raw numbers together with the verdict, so a
caller can re-check every threshold independently.  Reports carry no
timings; two runs with the same seed serialize to identical bytes.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from . import __version__
from .analysis import (ALLOWANCE, combined_tolerance, energy_at_infinity, lieb_ball_search,
                       mass_lower_bound, section8_experiment)
from .capacity import BallRegion, gamma_constant, relative_capacity
from .geometry import Ball, Mask, PerforatedDomain, ball_perforated, inradius
from .grid import ball_grid, box_grid, discretize, dirichlet_energy, energy_gradient
from .report import dumps
from .solver import SolveConfig, component_masses, components, lambda_pq

TWO_PI2 = 2 * math.pi ** 2
J01_SQ = 2.404825557695773 ** 2
CONDENSER = 2 * math.pi / math.log(2)


def _crit(i, name, ok, **values):
    return {"id": i, "name": name, "pass": bool(ok), "values": values}


def c1_eigen_oracles(seed):
    cfg = SolveConfig(p=2, q=2, seed=seed)
    sq = lambda_pq(box_grid((0, 0), (1, 1), 1 / 128), cfg).lam
    disk = lambda_pq(ball_grid((0, 0), 1.0, 1 / 64), cfg).lam
    e1, e2 = abs(sq - TWO_PI2) / TWO_PI2, abs(disk - J01_SQ) / J01_SQ
    return _crit(1, "eigenvalue oracles", e1 <= 0.02 and e2 <= 0.03, square=sq, square_rel_err=e1,
                 disk=disk, disk_rel_err=e2)


def ball_lattice(eps: float, h: float) -> PerforatedDomain:
    """Unit lattice of disjoint open balls B_eps: the hole is the cell minus B_eps, sampled at the grid."""
    res = int(round(1 / h))
    hole = Mask.from_predicate(lambda y: (y ** 2).sum(axis=1) >= eps * eps, 2, res)
    return PerforatedDomain((1.0, 1.0), hole)


def c2_scaling(seed):
    vals = {}
    ok = True
    for p in (2.0, 3.0):
        scaled = []
        for eps, h in ((0.3, 1 / 40), (0.15, 1 / 80)):
            lam = lambda_pq(discretize(ball_lattice(eps, h), 0, h), SolveConfig(p=p, q=p, seed=seed)).lam
            scaled.append(lam * eps ** p)
        ratio = scaled[1] / scaled[0]
        vals[f"p{int(p)}_scaled"] = scaled
        vals[f"p{int(p)}_ratio"] = ratio
        ok &= abs(ratio - 1) <= 0.02
    return _crit(2, "scaling of lambda_p on disjoint balls", ok, **vals)


def c3_condenser(seed):
    cap = relative_capacity(Ball((0.0, 0.0), 1.0), BallRegion((0.0, 0.0), 2.0), 2.0, 1 / 64).value
    err = abs(cap - CONDENSER) / CONDENSER
    return _crit(3, "condenser capacity", err <= 0.03, capacity=cap, rel_err=err)


def c4_gamma(seed):
    g1 = gamma_constant(2, 2.0, 1 / 64)
    g2 = gamma_constant(2, 2.0, 1 / 128)
    return _crit(4, "Gamma constant", g1.gamma >= 0.97 and g2.gamma >= g1.gamma,
                 gamma_h64=g1.gamma, gamma_h128=g2.gamma, capacity_h64=g1.capacity,
                 lambda_h64=g1.lambda_p)


def c5_affine(seed):
    p, q = 2.0, 4.0
    cfg = SolveConfig(p=p, q=q, seed=seed)
    n = 32
    base = ball_perforated(2, 0.25)
    lam_e = lambda_pq(discretize(base, 0, 1 / n), cfg).lam
    rows = []
    ok = True
    for t in ((2.0, 0.5), (1.5, 1.5)):
        dom = PerforatedDomain(t, base.hole)
        lam_t = lambda_pq(discretize(dom, 0, min(t) / n), cfg).lam
        det = t[0] * t[1]
        upper = det ** ((q - p) / q) / min(t) ** p * lam_e
        lower = det ** ((q - p) / q) / max(t) ** p * lam_e
        good = lower * 0.95 <= lam_t <= upper * 1.05
        ok &= good
        rows.append({"t": list(t), "lambda": lam_t, "lower": lower, "upper": upper, "pass": good})
    return _crit(5, "affine bounds", ok, lambda_cell=lam_e, rows=rows)


def two_ball_grid(h=1 / 64):
    def inside(x):
        a = ((x - np.array([-0.5, 0.0])) ** 2).sum(axis=1) < 0.3 ** 2
        b = ((x - np.array([0.5, 0.0])) ** 2).sum(axis=1) < 0.2 ** 2
        return a | b
    return box_grid((-1.0, -0.5), (1.0, 0.5), h, inside)


def c6_concentration(seed):
    grid = two_ball_grid()
    rep = lambda_pq(grid, SolveConfig(p=2, q=4, seed=seed))
    masses = component_masses(grid, rep.extremal, 4.0)
    # component label of the node nearest the larger ball's center
    lab = components(grid)
    big = int(lab[np.argmin(((grid.coords - np.array([-0.5, 0.0])) ** 2).sum(axis=1))])
    share = masses["shares"][big]
    return _crit(6, "disjoint concentration", share >= 0.999, share_large=share, shares=masses["shares"],
                 lam=rep.lam)


def c7_penalized(seed):
    grid = discretize(ball_perforated(2, 0.25), 2, 1 / 16)
    base = SolveConfig(p=2, q=4, seed=seed)
    lams, m1, m2 = [], [], []
    prev = ()
    for n in (1, 4, 16, 64):
        rep = lambda_pq(grid, replace(base, penalty_n=float(n)), prev)
        lams.append(rep.lam)
        m1.append(rep.diagnostics["moments"]["1"])
        m2.append(rep.diagnostics["moments"]["2"])
        prev = (rep.extremal,)
    plain = lambda_pq(grid, base, prev).lam
    gap = (lams[-1] - plain) / plain
    mono = all(b <= a for a, b in zip(lams, lams[1:]))
    mdec = all(all(b < a for a, b in zip(m, m[1:])) for m in (m1, m2))
    fac = min(m1[0] / m1[-1], m2[0] / m2[-1])
    ok = mono and 0 <= gap < 0.01 and mdec and fac >= 4
    return _crit(7, "penalized constants", ok, lambdas=lams, lambda_plain=plain, gap=gap,
                 moment1=m1, moment2=m2, moment_factor=fac)


def c8_section8(seed):
    cfg = SolveConfig(p=2, q=4, seed=seed, starts=3)
    en = section8_experiment("enlarged", 0.4, cfg=cfg)
    sh = section8_experiment("shrunk", 0.1, cfg=cfg)
    eq = all(abs(r["difference"]) <= r["combined_tolerance"] for r in en.tables["windows"])
    gap = sh.scalars["energy_at_infinity"] - sh.scalars["lambda"]
    strict = gap > sh.scalars["combined_tolerance"]
    shares = [r["center_block_share"] for r in sh.tables["windows"]]
    local = min(shares) >= 0.9
    return _crit(8, "modified-cell dichotomy", eq and strict and local,
                 enlarged=en.tables["windows"], center_of_mass_drift=en.scalars["center_of_mass_drift"],
                 shrunk=sh.tables["windows"], shrunk_lambda=sh.scalars["lambda"],
                 shrunk_energy_at_infinity=sh.scalars["energy_at_infinity"],
                 shrunk_tolerance=sh.scalars["combined_tolerance"], center_block_shares=shares)


def c9_energy_at_infinity(seed):
    cfg = SolveConfig(p=2, q=4, seed=seed, starts=3)
    e = energy_at_infinity(ball_perforated(2, 0.25), 2, 4, (0.0, 0.5, 1.0, 1.5), 3, 1 / 16, cfg)
    vals = [v for _, v in e.table]
    mono = all(b >= a for a, b in zip(vals, vals[1:]))
    lam = vals[0]
    tol = combined_tolerance(cfg, lam)
    d = mass_lower_bound(0.25, 2.0)
    hand = 0.75 * (1 - 1 / math.sqrt(2))  # 0.25^(1/4) = 1/sqrt(2)
    lim0 = mass_lower_bound(1e-40, 2.0)
    lim1 = mass_lower_bound(1 - 1e-12, 2.0)
    ok = mono and abs(e.estimate - lam) <= tol and abs(d - hand) <= 1e-12 and lim0 > 1 - 1e-9 and lim1 < 1e-9
    return _crit(9, "energy at infinity", ok, table=e.table, estimate=e.estimate, lam=lam, tolerance=tol,
                 mass_bound=d, mass_bound_hand=hand, limit_zero=lim0, limit_one=lim1)


def c10_lieb(seed):
    dom = ball_perforated(2, 0.25)
    h = 1 / 32
    r_in = inradius(dom, 2, h).value
    found = [lieb_ball_search(dom, 2, h, b) for b in (0.5, 0.75, 0.95)]
    radii = [f.radius for f in found]
    ok = (found[0].fraction >= 0.5 and found[0].radius >= r_in
          and all(b <= a for a, b in zip(radii, radii[1:])))
    return _crit(10, "big-ball search", ok, inradius=r_in, radii=radii,
                 fractions=[f.fraction for f in found], centers=[list(f.center) for f in found])


def c11_gradient(seed):
    grid = discretize(ball_perforated(2, 0.25), 1, 1 / 16)
    rng = np.random.default_rng(seed)
    worst = {}
    for p in (2.0, 3.0):
        eps = SolveConfig(p=p, q=2 * p).eps
        errs = []
        for _ in range(20):
            u = rng.random(grid.n_dof)
            v = rng.standard_normal(grid.n_dof)
            d = 1e-5 * np.linalg.norm(u)
            fd = (dirichlet_energy(grid, u + d * v, p, eps) - dirichlet_energy(grid, u - d * v, p, eps)) / (2 * d)
            an = float(energy_gradient(grid, u, p, eps) @ v)
            errs.append(abs(fd - an) / max(abs(fd), abs(an)))
        worst[f"p{int(p)}"] = float(max(errs))
    return _crit(11, "gradient checks", max(worst.values()) < 1e-5, worst_rel_err=worst)


def c12_determinism(seed):
    a = dumps(c11_gradient(seed))
    b = dumps(c11_gradient(seed))
    grid = discretize(ball_perforated(2, 0.25), 1, 1 / 16)
    r1 = dumps(lambda_pq(grid, SolveConfig(p=2, q=4, seed=seed)).to_dict())
    r2 = dumps(lambda_pq(grid, SolveConfig(p=2, q=4, seed=seed)).to_dict())
    return _crit(12, "determinism", a == b and r1 == r2, repeat_identical=bool(a == b and r1 == r2))


CRITERIA = (c1_eigen_oracles, c2_scaling, c3_condenser, c4_gamma, c5_affine, c6_concentration,
            c7_penalized, c8_section8, c9_energy_at_infinity, c10_lieb, c11_gradient, c12_determinism)


def run_suite(seed: int = 0, threads: int | None = None, only=None) -> dict:
    """Run the acceptance criteria (all, or the ids in ``only``)."""
    out = []
    for fn in CRITERIA:
        i = int(fn.__name__[1:].split("_")[0])
        if only is not None and i not in only:
            continue
        out.append(fn(seed))
    return {"suite": "acceptance", "version": __version__, "seed": seed, "allowance": ALLOWANCE,
            "criteria": out, "all_pass": all(c["pass"] for c in out)}


def format_table(result: dict) -> str:
    lines = [f"{'#':>3}  {'criterion':<40} result"]
    for c in result["criteria"]:
        lines.append(f"{c['id']:>3}  {c['name']:<40} {'PASS' if c['pass'] else 'FAIL'}")
    return "\n".join(lines)
