"""Set-membership model of periodically perforated open sets.

A perforated set is R^N with the closed holes ``D_t(i + K)`` removed for every
lattice index ``i``.  Hole shapes live in cell coordinates (the closed cube
``[-1/2, 1/2]^N``); ``dilate`` maps them to physical space.  All membership
queries are vectorized over arrays of points of shape ``(M, N)``.
"""

from __future__ import annotations

import base64
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidParameter

# Relative slack used when classifying points on analytic hole boundaries.
_BOUNDARY_TOL = 1e-12


def dilate(t, x):
    """Componentwise product ``D_t(x)``; works on a point or an ``(M, N)`` array."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(~(t > 0)):
        raise InvalidParameter(f"dilation factors must be positive, got {t.tolist()}")
    return np.asarray(x, dtype=np.float64) * t


# ---------------------------------------------------------------------------
# hole shapes
# ---------------------------------------------------------------------------

class HoleShape:
    """Compact set given by a membership test; boundary points belong to the set."""

    kind = "abstract"

    def contains(self, y):
        raise NotImplementedError

    @property
    def is_empty(self) -> bool:
        raise NotImplementedError

    def within_cell(self) -> bool:
        """True when the shape fits in the closed cube [-1/2, 1/2]^N."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


def _points(y, dim=None):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    if dim is not None and y.shape[1] != dim:
        raise InvalidParameter(f"expected points of dimension {dim}, got {y.shape[1]}")
    return y


@dataclass(frozen=True, eq=False)
class Ball(HoleShape):
    center: tuple
    radius: float
    kind = "ball"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius >= 0:
            raise InvalidParameter(f"ball radius must be >= 0, got {self.radius}")

    @property
    def dim(self):
        return len(self.center)

    def contains(self, y):
        y = _points(y, self.dim)
        d2 = ((y - np.asarray(self.center)) ** 2).sum(axis=1)
        r = self.radius
        return d2 <= r * r * (1 + 2 * _BOUNDARY_TOL) + _BOUNDARY_TOL ** 2

    @property
    def is_empty(self):
        return False

    def within_cell(self):
        c = np.abs(np.asarray(self.center))
        return bool(np.all(c + self.radius <= 0.5 + _BOUNDARY_TOL))

    def to_dict(self):
        return {"kind": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Box(HoleShape):
    center: tuple
    half_widths: tuple
    kind = "box"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "half_widths", tuple(float(c) for c in self.half_widths))
        if len(self.center) != len(self.half_widths):
            raise InvalidParameter("box center and half_widths differ in length")
        if any(not w >= 0 for w in self.half_widths):
            raise InvalidParameter(f"box half widths must be >= 0, got {self.half_widths}")

    @property
    def dim(self):
        return len(self.center)

    def contains(self, y):
        y = _points(y, self.dim)
        w = np.asarray(self.half_widths)
        slack = _BOUNDARY_TOL * np.maximum(w, 1.0)
        return np.all(np.abs(y - np.asarray(self.center)) <= w + slack, axis=1)

    @property
    def is_empty(self):
        return False

    def within_cell(self):
        c = np.abs(np.asarray(self.center))
        return bool(np.all(c + np.asarray(self.half_widths) <= 0.5 + _BOUNDARY_TOL))

    def to_dict(self):
        return {"kind": "box", "center": list(self.center), "half_widths": list(self.half_widths)}


@dataclass(frozen=True, eq=False)
class Union(HoleShape):
    parts: tuple = ()
    kind = "union"

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        dims = {p.dim for p in self.parts}
        if len(dims) > 1:
            raise InvalidParameter(f"union mixes dimensions {sorted(dims)}")

    @property
    def dim(self):
        return self.parts[0].dim if self.parts else None

    def contains(self, y):
        y = _points(y)
        out = np.zeros(y.shape[0], dtype=bool)
        for part in self.parts:
            out |= part.contains(y)
        return out

    @property
    def is_empty(self):
        return all(p.is_empty for p in self.parts)

    def within_cell(self):
        return all(p.within_cell() for p in self.parts)

    def to_dict(self):
        return {"kind": "union", "parts": [p.to_dict() for p in self.parts]}


@dataclass(frozen=True, eq=False)
class Mask(HoleShape):
    """Bit grid over the closed unit cell; node ``j`` sits at ``-1/2 + j/resolution``.

    A point belongs to the shape when its nearest mask node is set.
    """

    bits: np.ndarray
    resolution: int = 256
    kind = "mask"

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        res = int(self.resolution)
        if res < 1:
            raise InvalidParameter(f"mask resolution must be >= 1, got {res}")
        if any(s != res + 1 for s in bits.shape):
            raise InvalidParameter(
                f"mask of resolution {res} needs shape {(res + 1,) * bits.ndim}, got {bits.shape}")
        bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "resolution", res)

    @classmethod
    def from_predicate(cls, predicate: Callable, dim: int, resolution: int = 256) -> "Mask":
        """Sample ``predicate`` (vectorized over ``(M, N)`` points) on the mask nodes."""
        axis = -0.5 + np.arange(resolution + 1) / resolution
        pts = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
        bits = np.asarray(predicate(pts), dtype=bool).reshape((resolution + 1,) * dim)
        return cls(bits, resolution)

    @classmethod
    def from_shape(cls, shape: HoleShape, dim: int, resolution: int = 256) -> "Mask":
        return cls.from_predicate(shape.contains, dim, resolution)

    @property
    def dim(self):
        return self.bits.ndim

    def contains(self, y):
        y = _points(y, self.dim)
        idx = np.rint((y + 0.5) * self.resolution).astype(np.int64)
        ok = np.all((idx >= 0) & (idx <= self.resolution), axis=1)
        out = np.zeros(y.shape[0], dtype=bool)
        if ok.any():
            out[ok] = self.bits[tuple(idx[ok].T)]
        return out

    @property
    def is_empty(self):
        return not bool(self.bits.any())

    def within_cell(self):
        return True

    def to_dict(self):
        packed = np.packbits(self.bits.ravel())
        return {
            "kind": "mask",
            "resolution": self.resolution,
            "dim": self.dim,
            "bits": base64.b64encode(packed.tobytes()).decode("ascii"),
        }


def point(dim: int) -> Ball:
    """The single point {0} as a zero-radius ball."""
    return Ball((0.0,) * dim, 0.0)


def shape_from_dict(d: dict) -> HoleShape:
    kind = d.get("kind")
    allowed = {
        "ball": {"kind", "center", "radius"},
        "box": {"kind", "center", "half_widths"},
        "union": {"kind", "parts"},
        "mask": {"kind", "resolution", "dim", "bits"},
    }
    if kind not in allowed:
        raise InvalidParameter(f"hole.kind: unknown shape kind {kind!r}")
    extra = set(d) - allowed[kind]
    if extra:
        raise InvalidParameter(f"hole: unknown keys {sorted(extra)} for kind {kind!r}")
    if kind == "ball":
        return Ball(tuple(d["center"]), float(d["radius"]))
    if kind == "box":
        return Box(tuple(d["center"]), tuple(d["half_widths"]))
    if kind == "union":
        return Union(tuple(shape_from_dict(p) for p in d["parts"]))
    res = int(d["resolution"])
    dim = int(d["dim"])
    raw = np.frombuffer(base64.b64decode(d["bits"]), dtype=np.uint8)
    n = (res + 1) ** dim
    bits = np.unpackbits(raw)[:n].astype(bool).reshape((res + 1,) * dim)
    return Mask(bits, res)


# ---------------------------------------------------------------------------
# perforated domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cylinder:
    """Bounded-in-some-directions mode: periodic along the first ``k`` axes.

    The set is ``{x : |x_j| < a/2 for j >= k}`` minus the copies of the hole,
    where the hole lives in the cell ``D_s([-1/2, 1/2]^N)`` with
    ``s = (t_1, ..., t_k, a, ..., a)``.
    """

    k: int
    a: float


@dataclass(frozen=True, eq=False)
class PerforatedDomain:
    t: tuple
    hole: HoleShape
    modifications: tuple = ()
    mode: Cylinder | None = None
    _mods: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        t = tuple(float(x) for x in self.t)
        object.__setattr__(self, "t", t)
        n = len(t)
        if n < 2:
            raise InvalidParameter(f"dimension must be >= 2, got {n}")
        if any(not x > 0 for x in t):
            raise InvalidParameter(f"t: every period must be positive, got {list(t)}")
        self._check_shape(self.hole, "hole")
        mods = {}
        for cell, shape in self.modifications:
            cell = tuple(int(c) for c in cell)
            if len(cell) != n:
                raise InvalidParameter(f"modification cell {cell} has wrong dimension")
            if cell in mods:
                raise InvalidParameter(f"two modifications target cell {cell}")
            self._check_shape(shape, f"modification {cell}")
            mods[cell] = shape
        object.__setattr__(self, "modifications", tuple(mods.items()))
        object.__setattr__(self, "_mods", mods)
        if self.mode is not None:
            if not 1 <= self.mode.k <= n - 1:
                raise InvalidParameter(f"cylinder k must be in [1, {n - 1}], got {self.mode.k}")
            if not self.mode.a > 0:
                raise InvalidParameter(f"cylinder slab width a must be positive, got {self.mode.a}")

    def _check_shape(self, shape, what):
        if getattr(shape, "dim", None) not in (None, self.dim):
            raise InvalidParameter(f"{what}: dimension {shape.dim} != {self.dim}")
        if not shape.within_cell():
            raise InvalidParameter(f"{what}: shape leaves the closed cell [-1/2,1/2]^N")

    @property
    def dim(self) -> int:
        return len(self.t)

    @property
    def periodic(self) -> bool:
        return self.mode is None

    @property
    def cell_size(self) -> np.ndarray:
        """Physical side lengths of one cell."""
        if self.mode is None:
            return np.asarray(self.t)
        s = np.asarray(self.t, dtype=np.float64).copy()
        s[self.mode.k:] = self.mode.a
        return s

    def with_modification(self, cell, shape) -> "PerforatedDomain":
        mods = dict(self._mods)
        mods[tuple(int(c) for c in cell)] = shape
        return PerforatedDomain(self.t, self.hole, tuple(mods.items()), self.mode)

    def contains(self, x):
        """True where ``x`` lies in the open set (holes are closed)."""
        x = _points(x, self.dim)
        if self.mode is None:
            return ~self._in_holes(x, np.asarray(self.t), range(self.dim))
        k, a = self.mode.k, self.mode.a
        slab = np.all(np.abs(x[:, k:]) < 0.5 * a, axis=1)
        out = np.zeros(x.shape[0], dtype=bool)
        if slab.any():
            xs = x[slab]
            out[slab] = ~self._in_holes(xs, self.cell_size, range(k))
        return out

    def _in_holes(self, x, size, periodic_axes):
        periodic_axes = list(periodic_axes)
        y = x / size
        base = np.zeros_like(y)
        base[:, periodic_axes] = np.rint(y[:, periodic_axes])
        offsets = itertools.product(*[(-1, 0, 1) if ax in periodic_axes else (0,)
                                      for ax in range(self.dim)])
        hit = np.zeros(x.shape[0], dtype=bool)
        for off in offsets:
            cell = base + np.asarray(off, dtype=np.float64)
            local = y - cell
            inside = np.all(np.abs(local) <= 0.5 + _BOUNDARY_TOL, axis=1) & ~hit
            if not inside.any():
                continue
            idx = np.nonzero(inside)[0]
            hit[idx] |= self._hole_at(cell[idx], local[idx])
        return hit

    def _hole_at(self, cells, local):
        res = np.zeros(local.shape[0], dtype=bool)
        plain = np.ones(local.shape[0], dtype=bool)
        if self._mods:
            ci = cells.astype(np.int64)
            for cell, shape in self._mods.items():
                sel = np.all(ci == np.asarray(cell), axis=1)
                if sel.any():
                    res[sel] = shape.contains(local[sel])
                    plain &= ~sel
        if plain.any() and not self.hole.is_empty:
            res[plain] = self.hole.contains(local[plain])
        return res

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        mode = {"kind": "periodic"} if self.mode is None else {
            "kind": "cylinder", "k": self.mode.k, "a": self.mode.a}
        return {
            "schema": DOMAIN_SCHEMA,
            "dim": self.dim,
            "t": list(self.t),
            "hole": self.hole.to_dict(),
            "modifications": [{"cell": list(c), "hole": s.to_dict()} for c, s in self.modifications],
            "mode": mode,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PerforatedDomain":
        known = {"schema", "dim", "t", "hole", "modifications", "mode"}
        extra = set(d) - known
        if extra:
            raise InvalidParameter(f"domain: unknown keys {sorted(extra)}")
        if d.get("schema", DOMAIN_SCHEMA) != DOMAIN_SCHEMA:
            raise InvalidParameter(f"schema: expected {DOMAIN_SCHEMA!r}, got {d['schema']!r}")
        for key in ("dim", "t", "hole"):
            if key not in d:
                raise InvalidParameter(f"domain: missing key {key!r}")
        t = tuple(float(x) for x in d["t"])
        if len(t) != int(d["dim"]):
            raise InvalidParameter(f"t: length {len(t)} does not match dim {d['dim']}")
        mods = []
        for m in d.get("modifications", []):
            extra = set(m) - {"cell", "hole"}
            if extra:
                raise InvalidParameter(f"modifications: unknown keys {sorted(extra)}")
            mods.append((tuple(m["cell"]), shape_from_dict(m["hole"])))
        mode_d = d.get("mode", {"kind": "periodic"})
        if mode_d.get("kind") == "periodic":
            if set(mode_d) - {"kind"}:
                raise InvalidParameter(f"mode: unknown keys {sorted(set(mode_d) - {'kind'})}")
            mode = None
        elif mode_d.get("kind") == "cylinder":
            extra = set(mode_d) - {"kind", "k", "a"}
            if extra:
                raise InvalidParameter(f"mode: unknown keys {sorted(extra)}")
            mode = Cylinder(int(mode_d["k"]), float(mode_d["a"]))
        else:
            raise InvalidParameter(f"mode.kind: unknown mode {mode_d.get('kind')!r}")
        return cls(t, shape_from_dict(d["hole"]), tuple(mods), mode)

    @classmethod
    def from_json(cls, text: str) -> "PerforatedDomain":
        return cls.from_dict(json.loads(text))


DOMAIN_SCHEMA = "perfora.domain/1"


def ball_perforated(dim: int = 2, r: float = 0.25, t=None) -> PerforatedDomain:
    """R^N minus closed balls of radius ``r`` centred on the (dilated) lattice."""
    t = (1.0,) * dim if t is None else t
    return PerforatedDomain(t, Ball((0.0,) * dim, r))


def window_box(domain: PerforatedDomain, k: int):
    """Lower and upper corners of the window made of cells with |i|_inf <= k."""
    if k < 0:
        raise InvalidParameter(f"window radius must be >= 0, got {k}")
    half = (k + 0.5) * domain.cell_size
    if domain.mode is not None:
        half[domain.mode.k:] = 0.5 * domain.mode.a
    return -half, half


# ---------------------------------------------------------------------------
# inradius and periodization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InradiusResult:
    value: float
    error_bound: float
    center: tuple
    h: float


def inradius(domain: PerforatedDomain, k: int, h: float) -> InradiusResult:
    """Inradius of the window-truncated set by an exact distance transform on nodes.

    Distances are measured from open-set nodes to the nearest complement node
    (holes and window boundary); the discrete value is within one grid
    diagonal of the continuum one.
    """
    from .kernels import edt_sq

    if k < 1:
        raise InvalidParameter("inradius needs a window of at least 3^N cells (k >= 1)")
    lo, hi = window_box(domain, k)
    side = hi - lo
    n = np.rint(side / h).astype(int)
    if np.any(n < 1) or np.any(np.abs(n * h - side) > 1e-9 * side):
        raise InvalidParameter(f"resolution h={h} does not divide the window sides {side.tolist()}")
    axes = [lo[i] + h * np.arange(n[i] + 1) for i in range(domain.dim)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    inside = domain.contains(pts).reshape(tuple(n + 1))
    for ax in range(domain.dim):
        sl = [slice(None)] * domain.dim
        sl[ax] = 0
        inside[tuple(sl)] = False
        sl[ax] = -1
        inside[tuple(sl)] = False
    if not inside.any():
        return InradiusResult(0.0, h * math.sqrt(domain.dim), tuple(float(c) for c in lo), h)
    d2 = edt_sq(~inside)
    flat = int(np.argmax(d2))
    idx = np.unravel_index(flat, d2.shape)
    center = tuple(float(axes[i][idx[i]]) for i in range(domain.dim))
    return InradiusResult(float(math.sqrt(d2[idx]) * h), h * math.sqrt(domain.dim), center, h)


def inradius_bound(domain: PerforatedDomain) -> float:
    """Upper bound ``max(t) sqrt(N) / 2`` valid for every periodically perforated set."""
    return max(domain.t) * math.sqrt(domain.dim) / 2


@dataclass(frozen=True, eq=False)
class Periodization:
    domain: PerforatedDomain
    warning: bool
    resolution: int


def periodize(domain: PerforatedDomain, resolution: int = 256) -> Periodization:
    """Turn a cylinder-mode set into a periodic one by stacking copies 2a apart.

    The new periods are ``(t_1, ..., t_k, 2a, ..., 2a)`` and the hole is the
    complement of the set inside one new cell, rescaled to cell coordinates
    and stored as a mask.
    """
    if domain.mode is None:
        raise InvalidParameter("periodize expects a cylinder-mode domain")
    k, a = domain.mode.k, domain.mode.a
    tbar = np.asarray(domain.t, dtype=np.float64).copy()
    tbar[k:] = 2 * a

    def hole(y):
        return ~domain.contains(y * tbar)

    mask = Mask.from_predicate(hole, domain.dim, resolution)
    # The gap band a/2 <= |x_j| <= a maps to 1/4 <= |y_j| <= 1/2; it must hold
    # at least two mask nodes for the copies to stay separated on the mask.
    warning = resolution / 4 < 2
    return Periodization(PerforatedDomain(tuple(tbar), mask), warning, resolution)


def extended_union_contains(domain: PerforatedDomain, x):
    """Membership in the union of copies ``Omega + 2a * m`` over integer vectors m on the bounded axes."""
    if domain.mode is None:
        raise InvalidParameter("extended union is defined for cylinder-mode domains")
    x = _points(x, domain.dim)
    k, a = domain.mode.k, domain.mode.a
    shift = np.zeros_like(x)
    shift[:, k:] = 2 * a * np.rint(x[:, k:] / (2 * a))
    return domain.contains(x - shift)
