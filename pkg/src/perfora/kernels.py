"""Hot numeric kernels: p-Dirichlet energy, its gradient, squared distance transform.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy version.
The backend is picked once at import time from ``PERFORA_BACKEND``
(``numba`` or ``numpy``); numba is the default when it imports cleanly.
Both backends compute the same quantities with a fixed summation order, so
repeated runs on one backend are bit-identical.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_requested = os.environ.get("PERFORA_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"PERFORA_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
BACKEND = "numba" if (_requested == "numba" and HAVE_NUMBA) else "numpy"


# ---------------------------------------------------------------------------
# numpy reference path (any dimension)
# ---------------------------------------------------------------------------

def _forward_diffs(U, h):
    n = U.ndim
    core = tuple(slice(0, -1) for _ in range(n))
    base = U[core]
    diffs = []
    for ax in range(n):
        sl = [slice(0, -1)] * n
        sl[ax] = slice(1, None)
        diffs.append((U[tuple(sl)] - base) / h)
    return diffs


def _cell_sq(diffs, eps):
    s = diffs[0] * diffs[0]
    for d in diffs[1:]:
        s = s + d * d
    if eps != 0.0:
        s = s + eps * eps
    return s


def _density(s, p):
    if p == 2.0:
        return s
    return s ** (0.5 * p)


def energy_numpy(U, h, p, eps):
    s = _cell_sq(_forward_diffs(U, h), eps)
    return float(_density(s, p).sum() * h ** U.ndim)


def energy_grad_numpy(U, h, p, eps):
    n = U.ndim
    diffs = _forward_diffs(U, h)
    s = _cell_sq(diffs, eps)
    energy = float(_density(s, p).sum() * h ** n)
    if p == 2.0:
        w = np.full_like(s, 2.0)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            w = p * s ** (0.5 * p - 1.0)
        # degenerate cells (s == 0, p < 2): zero subgradient
        w[~np.isfinite(w)] = 0.0
    w *= h ** n / h
    G = np.zeros_like(U)
    core = tuple(slice(0, -1) for _ in range(n))
    for ax, d in enumerate(diffs):
        flux = w * d
        sl = [slice(0, -1)] * n
        sl[ax] = slice(1, None)
        G[tuple(sl)] += flux
        G[core] -= flux
    return energy, G


def edt_sq_numpy(feature):
    """Squared Euclidean distance (grid units) from each node to the nearest True node.

    Separable exact transform; each 1D pass is the brute-force min-plus
    product ``d[i] = min_j (i - j)^2 + f[j]``, evaluated in chunks.
    """
    f = np.where(feature, 0.0, np.inf)
    for ax in range(f.ndim):
        f = np.moveaxis(f, ax, -1)
        shape = f.shape
        lines = f.reshape(-1, shape[-1])
        n = shape[-1]
        idx = np.arange(n, dtype=np.float64)
        sq = (idx[:, None] - idx[None, :]) ** 2
        out = np.empty_like(lines)
        chunk = max(1, 4_000_000 // (n * n))
        for a in range(0, lines.shape[0], chunk):
            block = lines[a:a + chunk]
            out[a:a + chunk] = (block[:, None, :] + sq[None, :, :]).min(axis=2)
        f = np.moveaxis(out.reshape(shape), -1, ax)
    return f


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, nogil=True, inline="always")
    def _int_exponent(p):
        # p - 2 when p is an integer in [3, 12], else -1 (use the generic power)
        if p == np.floor(p) and 3.0 <= p <= 12.0:
            return int(p) - 2
        return -1

    @njit(cache=True, nogil=True, inline="always")
    def _pow_m1(s, half, ip):
        # s^(p/2 - 1); sqrt and repeated products are far cheaper than pow
        if ip > 0:
            r = np.sqrt(s)
            out = r
            for _ in range(ip - 1):
                out *= r
            return out
        return s ** (half - 1.0)

    @njit(cache=True, nogil=True)
    def _energy_2d(U, h, p, eps):
        nx, ny = U.shape
        e2 = eps * eps
        half = 0.5 * p
        ip = _int_exponent(p)
        acc = 0.0
        for i in range(nx - 1):
            for j in range(ny - 1):
                u0 = U[i, j]
                dx = (U[i + 1, j] - u0) / h
                dy = (U[i, j + 1] - u0) / h
                s = dx * dx + dy * dy + e2
                if p == 2.0:
                    acc += s
                elif s > 0.0:
                    acc += s * _pow_m1(s, half, ip)
        return acc * h * h

    @njit(cache=True, nogil=True)
    def _energy_grad_2d(U, h, p, eps, G):
        nx, ny = U.shape
        e2 = eps * eps
        half = 0.5 * p
        ip = _int_exponent(p)
        scale = h  # h^N / h with N = 2
        acc = 0.0
        for i in range(nx):
            for j in range(ny):
                G[i, j] = 0.0
        for i in range(nx - 1):
            for j in range(ny - 1):
                u0 = U[i, j]
                dx = (U[i + 1, j] - u0) / h
                dy = (U[i, j + 1] - u0) / h
                s = dx * dx + dy * dy + e2
                if p == 2.0:
                    acc += s
                    w = 2.0
                elif s > 0.0:
                    r = _pow_m1(s, half, ip)
                    acc += s * r
                    w = p * r
                else:
                    w = 0.0
                w *= scale
                G[i + 1, j] += w * dx
                G[i, j + 1] += w * dy
                G[i, j] -= w * (dx + dy)
        return acc * h * h

    @njit(cache=True, nogil=True)
    def _energy_3d(U, h, p, eps):
        nx, ny, nz = U.shape
        e2 = eps * eps
        half = 0.5 * p
        ip = _int_exponent(p)
        acc = 0.0
        for i in range(nx - 1):
            for j in range(ny - 1):
                for k in range(nz - 1):
                    u0 = U[i, j, k]
                    dx = (U[i + 1, j, k] - u0) / h
                    dy = (U[i, j + 1, k] - u0) / h
                    dz = (U[i, j, k + 1] - u0) / h
                    s = dx * dx + dy * dy + dz * dz + e2
                    if p == 2.0:
                        acc += s
                    elif s > 0.0:
                        acc += s * _pow_m1(s, half, ip)
        return acc * h * h * h

    @njit(cache=True, nogil=True)
    def _energy_grad_3d(U, h, p, eps, G):
        nx, ny, nz = U.shape
        e2 = eps * eps
        half = 0.5 * p
        ip = _int_exponent(p)
        scale = h * h
        acc = 0.0
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    G[i, j, k] = 0.0
        for i in range(nx - 1):
            for j in range(ny - 1):
                for k in range(nz - 1):
                    u0 = U[i, j, k]
                    dx = (U[i + 1, j, k] - u0) / h
                    dy = (U[i, j + 1, k] - u0) / h
                    dz = (U[i, j, k + 1] - u0) / h
                    s = dx * dx + dy * dy + dz * dz + e2
                    if p == 2.0:
                        acc += s
                        w = 2.0
                    elif s > 0.0:
                        r = _pow_m1(s, half, ip)
                        acc += s * r
                        w = p * r
                    else:
                        w = 0.0
                    w *= scale
                    G[i + 1, j, k] += w * dx
                    G[i, j + 1, k] += w * dy
                    G[i, j, k + 1] += w * dz
                    G[i, j, k] -= w * (dx + dy + dz)
        return acc * h * h * h

    @njit(cache=True, nogil=True)
    def _edt_lines(lines):
        # Felzenszwalb-Huttenlocher lower envelope of parabolas, one line per row.
        nl, n = lines.shape
        out = np.empty_like(lines)
        v = np.empty(n, dtype=np.int64)
        z = np.empty(n + 1, dtype=np.float64)
        for r in range(nl):
            f = lines[r]
            k = -1
            for q in range(n):
                if f[q] == np.inf:
                    continue
                if k < 0:
                    k = 0
                    v[0] = q
                    z[0] = -np.inf
                    z[1] = np.inf
                    continue
                while True:
                    vk = v[k]
                    s = ((f[q] + q * q) - (f[vk] + vk * vk)) / (2.0 * (q - vk))
                    if s <= z[k]:
                        k -= 1
                        if k < 0:
                            break
                    else:
                        break
                k += 1
                v[k] = q
                if k == 0:
                    z[0] = -np.inf
                else:
                    z[k] = s
                z[k + 1] = np.inf
            if k < 0:
                for q in range(n):
                    out[r, q] = np.inf
                continue
            k = 0
            for q in range(n):
                while z[k + 1] < q:
                    k += 1
                d = q - v[k]
                out[r, q] = d * d + f[v[k]]
        return out


def _edt_sq_numba(feature):
    f = np.where(feature, 0.0, np.inf)
    for ax in range(f.ndim):
        f = np.moveaxis(f, ax, -1)
        shape = f.shape
        lines = np.ascontiguousarray(f.reshape(-1, shape[-1]))
        f = np.moveaxis(_edt_lines(lines).reshape(shape), -1, ax)
    return f


def energy(U, h, p, eps=0.0):
    """Discrete p-Dirichlet energy of a full node array (boundary values included)."""
    U = np.asarray(U, dtype=np.float64)
    if BACKEND == "numba" and U.ndim == 2:
        return float(_energy_2d(U, float(h), float(p), float(eps)))
    if BACKEND == "numba" and U.ndim == 3:
        return float(_energy_3d(U, float(h), float(p), float(eps)))
    return energy_numpy(U, float(h), float(p), float(eps))


def energy_grad(U, h, p, eps=0.0):
    """Energy and its gradient with respect to every node value."""
    U = np.asarray(U, dtype=np.float64)
    if BACKEND == "numba" and U.ndim in (2, 3):
        G = np.empty_like(U)
        fn = _energy_grad_2d if U.ndim == 2 else _energy_grad_3d
        e = fn(np.ascontiguousarray(U), float(h), float(p), float(eps), G)
        return float(e), G
    return energy_grad_numpy(U, float(h), float(p), float(eps))


def edt_sq(feature):
    """Squared distance (in grid units) to the nearest True entry of ``feature``."""
    feature = np.asarray(feature, dtype=bool)
    if BACKEND == "numba":
        return _edt_sq_numba(feature)
    return edt_sq_numpy(feature)
