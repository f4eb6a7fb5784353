"""Command-line front end.

Every run is described by a RunConfig (defaults, then an optional ``--config``
JSON file, then explicit flags); the resolved config is echoed into the JSON
report.  Exit status: 0 success, 1 invalid input, 2 solver did not converge.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field

from . import __version__
from .errors import InvalidParameter
from .report import dumps

RUN_SCHEMA = "perfora.run/1"
REPORT_SCHEMA = "perfora.report/1"


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).replace(",", " ").split()]


def _ints(text):
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).replace(",", " ").split()]


def _json_arg(text):
    """Inline JSON or a path to a JSON file."""
    if isinstance(text, (dict, list)):
        return text
    s = str(text).strip()
    if s.startswith("{") or s.startswith("["):
        return json.loads(s)
    with open(s, encoding="utf-8") as fh:
        return json.load(fh)


def _float(x):
    return float(x)


# key -> (parser, default); None default means required unless noted
_COMMON = {"seed": (int, 0), "threads": (int, None)}
_SOLVE = {"tol": (_float, 1e-8), "starts": (int, 5), "max_iters": (int, 50_000)}
COMMANDS = {
    "lambda": {"domain": (str, None), "p": (_float, 2.0), "q": (_float, 4.0), "window": (int, 1),
               "h": (_float, 1 / 16), "penalty_n": (_float, None), "emit_field": (str, None),
               **_SOLVE},
    "capacity": {"obstacle": (_json_arg, None), "box": (_json_arg, None), "p": (_float, 2.0),
                 "h": (_float, 1 / 32), "tol": (_float, 1e-10), "emit_field": (str, None)},
    "infinity": {"domain": (str, None), "p": (_float, 3.0), "window": (int, 1), "h": (_float, 1 / 16),
                 "q_list": (_floats, [8.0, 16.0, 32.0, 64.0]), "emit_field": (str, None), **_SOLVE},
    "existence": {"domain": (str, None), "q": (_float, 4.0), "window": (int, 3), "h": (_float, 1 / 16),
                  "R_list": (_floats, [0.5, 1.0, 1.5]), **_SOLVE},
    "lieb-ball": {"domain": (str, None), "window": (int, 2), "h": (_float, 1 / 32),
                  "beta": (_float, 0.5), "radii": (_floats, None)},
    "mazya-sweep": {"hole": (_json_arg, None), "p": (_float, 2.0), "t_list": (_json_arg, [[1.0, 1.0]]),
                    "window": (int, 1), "nodes_per_cell": (int, 16), "cap_h": (_float, 1 / 32), **_SOLVE},
    "section8": {"variant": (str, None), "radius": (_float, None), "r": (_float, 0.25), "q": (_float, 4.0),
                 "windows": (_ints, [2, 3, 4]), "h": (_float, 1 / 16), "R_list": (_floats, [0.5, 1.0, 1.5]),
                 **_SOLVE},
    "verify": {"out": (str, None)},
}
REQUIRED = {"lambda": ["domain"], "capacity": ["obstacle", "box"], "infinity": ["domain"],
            "existence": ["domain"], "lieb-ball": ["domain"], "mazya-sweep": ["hole"],
            "section8": ["variant", "radius"], "verify": []}
# paths and worker counts do not change results, so they stay out of the echoed config
_NOT_ECHOED = {"emit_field", "out", "threads"}


@dataclass
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)
    schema: str = RUN_SCHEMA

    @classmethod
    def build(cls, command: str, file_cfg: dict | None, flags: dict) -> "RunConfig":
        if command not in COMMANDS:
            raise InvalidParameter(f"unknown command {command!r}")
        spec = {**COMMANDS[command], **_COMMON}
        params = {k: d for k, (_, d) in spec.items()}
        if file_cfg is not None:
            if file_cfg.get("schema") != RUN_SCHEMA:
                raise InvalidParameter(f"config key 'schema' must be {RUN_SCHEMA!r}")
            if file_cfg.get("command", command) != command:
                raise InvalidParameter(f"config key 'command' is {file_cfg['command']!r}, not {command!r}")
            for key, val in file_cfg.items():
                if key in ("schema", "command"):
                    continue
                if key not in spec:
                    raise InvalidParameter(f"unknown config key {key!r} for command {command!r}")
                params[key] = spec[key][0](val) if val is not None else None
        for key, val in flags.items():
            if val is not None:
                params[key] = spec[key][0](val)
        for key in REQUIRED[command]:
            if params.get(key) is None:
                raise InvalidParameter(f"missing required key {key!r}")
        return cls(command, params)

    def to_dict(self) -> dict:
        echo = {k: v for k, v in self.params.items() if k not in _NOT_ECHOED}
        return {"schema": self.schema, "command": self.command, **echo}


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _load_domain(path):
    from .geometry import PerforatedDomain

    with open(path, encoding="utf-8") as fh:
        return PerforatedDomain.from_json(fh.read())


def _solve_cfg(P, p, q):
    from .solver import SolveConfig

    return SolveConfig(p=p, q=q, tol=P["tol"], starts=P["starts"], max_iters=P["max_iters"],
                       seed=P["seed"], threads=P["threads"], penalty_n=P.get("penalty_n"))


def _run_lambda(P):
    from .grid import discretize, dump_field
    from .solver import lambda_pq

    dom = _load_domain(P["domain"])
    grid = discretize(dom, P["window"], P["h"])
    rep = lambda_pq(grid, _solve_cfg(P, P["p"], P["q"]))
    if P["emit_field"]:
        dump_field(grid, rep.extremal, P["emit_field"])
    rows = [["iteration", "energy"]] + [[i, v] for i, v in enumerate(rep.history)]
    return rep.to_dict(), rows, rep.converged


def _box(spec):
    from .capacity import BallRegion, BoxRegion

    kind = spec.get("kind")
    if kind == "ball" and set(spec) == {"kind", "center", "radius"}:
        return BallRegion(tuple(float(x) for x in spec["center"]), float(spec["radius"]))
    if kind == "box" and set(spec) == {"kind", "lower", "upper"}:
        return BoxRegion(tuple(float(x) for x in spec["lower"]), tuple(float(x) for x in spec["upper"]))
    raise InvalidParameter("box must be {kind: ball, center, radius} or {kind: box, lower, upper}")


def _physical_shape(spec):
    """Obstacles for capacity live in physical coordinates, so only balls and boxes (and unions)."""
    from .geometry import Ball, Box, Union

    kind = spec.get("kind")
    if kind == "ball" and set(spec) == {"kind", "center", "radius"}:
        return Ball(tuple(spec["center"]), float(spec["radius"]))
    if kind == "box" and set(spec) == {"kind", "center", "half_widths"}:
        return Box(tuple(spec["center"]), tuple(spec["half_widths"]))
    if kind == "union" and set(spec) == {"kind", "parts"}:
        return Union(tuple(_physical_shape(s) for s in spec["parts"]))
    raise InvalidParameter(f"unsupported obstacle description {spec!r}")


def _run_capacity(P):
    from .capacity import _region_grid, relative_capacity
    from .grid import dump_field

    box = _box(P["box"])
    res = relative_capacity(_physical_shape(P["obstacle"]), box, P["p"], P["h"], P["tol"])
    if P["emit_field"]:
        grid = _region_grid(box, P["h"])
        dump_field(grid, res.potential[grid.interior], P["emit_field"])
    return res.to_dict(), [["value", "iterations", "residual"], [res.value, res.iterations, res.residual]], True


def _run_infinity(P):
    from .grid import discretize, dump_field
    from .solver import lambda_p_infinity

    dom = _load_domain(P["domain"])
    grid = discretize(dom, P["window"], P["h"])
    res = lambda_p_infinity(grid, _solve_cfg(P, P["p"], math.inf), P["q_list"])
    if P["emit_field"]:
        dump_field(grid, res.report.extremal, P["emit_field"])
    rows = [["q", "lambda"]] + res.table
    return res.to_dict(), rows, True


def _run_existence(P):
    from .analysis import existence_test

    dom = _load_domain(P["domain"])
    rep = existence_test(dom, P["q"], P["window"], P["h"], P["R_list"], _solve_cfg(P, 2.0, P["q"]))
    return rep.to_dict(), [["R", "lambda"]] + rep.tables["energy_at_infinity"], True


def _run_lieb(P):
    from .analysis import lieb_ball_search

    dom = _load_domain(P["domain"])
    res = lieb_ball_search(dom, P["window"], P["h"], P["beta"], P["radii"])
    head = ["radius"] + [f"c{i}" for i in range(len(res.center))] + ["fraction"]
    return res.to_dict(), [head, [res.radius, *res.center, res.fraction]], True


def _run_mazya(P):
    from .analysis import mazya_bound_sweep
    from .geometry import shape_from_dict

    hole = shape_from_dict(P["hole"])
    rep = mazya_bound_sweep(hole, P["p"], [tuple(float(x) for x in t) for t in P["t_list"]], P["window"],
                            P["nodes_per_cell"], P["cap_h"], _solve_cfg(P, P["p"], P["p"]))
    rows = [["t", "lambda", "c_emp"]] + [[" ".join(str(x) for x in t), lam, c] for t, lam, c in rep.tables["sweep"]]
    return rep.to_dict(), rows, True


def _run_section8(P):
    from .analysis import section8_experiment

    rep = section8_experiment(P["variant"], P["radius"], P["r"], P["q"], P["windows"], P["h"], P["R_list"],
                              _solve_cfg(P, 2.0, P["q"]))
    rows = rep.tables["windows"]
    head = list(rows[0]) if rows else []
    return rep.to_dict(), [head] + [[row[k] for k in head] for row in rows], \
        all(row["converged"] for row in rows)


def _run_verify(P):
    from .verify import format_table, run_suite

    res = run_suite(seed=P["seed"], threads=P["threads"])
    print(format_table(res), file=sys.stderr)
    rows = [["criterion", "name", "pass"]] + [[c["id"], c["name"], c["pass"]] for c in res["criteria"]]
    return res, rows, True


RUNNERS = {"lambda": _run_lambda, "capacity": _run_capacity, "infinity": _run_infinity,
           "existence": _run_existence, "lieb-ball": _run_lieb, "mazya-sweep": _run_mazya,
           "section8": _run_section8, "verify": _run_verify}


def run(config: RunConfig, csv_path: str | None = None):
    """Execute one run; returns ``(exit_status, report_text)``."""
    result, rows, converged = RUNNERS[config.command](config.params)
    report = {"schema": REPORT_SCHEMA, "version": __version__, "run_config": config.to_dict(), "result": result}
    text = dumps(report)
    if csv_path:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            for row in rows:
                w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])
    return (0 if converged else 2), text


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

_HELP = {
    "domain": "domain description file (JSON)",
    "window": "window radius k: cells with |i|_inf <= k",
    "penalty_n": "penalty index n of V_n = |x|/(n+1)",
    "emit_field": "write the extremal/potential as a field dump",
    "obstacle": "obstacle shape (inline JSON or file)",
    "box": "capacity box: {kind: ball|box, ...} (inline JSON or file)",
    "q_list": "finite q values for the sweep",
    "R_list": "removal radii for the energy at infinity",
    "t_list": "list of dilation vectors (JSON)",
    "hole": "hole shape (inline JSON or file)",
    "out": "also write the report to this path",
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="perfora", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"perfora {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, spec in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="RunConfig JSON file")
        sp.add_argument("--csv", help="write a flat table to this path")
        for key in list(spec) + list(_COMMON):
            flag = "--" + key.replace("_", "-")
            sp.add_argument(flag, dest=key, default=None, help=_HELP.get(key))
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "csv")}
    try:
        file_cfg = None
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
            if not isinstance(file_cfg, dict):
                raise InvalidParameter("config file must hold a JSON object")
        config = RunConfig.build(args.command, file_cfg, flags)
        status, text = run(config, args.csv)
    except (InvalidParameter, ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"perfora: error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(text)
    out = config.params.get("out")
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    if status == 2:
        print("perfora: solver did not converge", file=sys.stderr)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
