"""Hot per-pixel kernels with numba-jitted and pure-numpy implementations.

Everything raster-shaped funnels through here: value-noise octaves for
heightfields, Voronoi class rasters, batched bilinear lookups, and rotated
patch resampling. Each kernel exists twice — an ``@njit`` loop and a
vectorized numpy twin — computing identical values. Selection is global,
via the ``TERRADAPT_NUMBA`` environment variable read at import:

    TERRADAPT_NUMBA=1    require numba (ImportError if unavailable)
    TERRADAPT_NUMBA=0    force the numpy fallbacks
    unset / auto         use numba when it imports

``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

from __future__ import annotations

import os

import numpy as np

_MODE = os.environ.get("TERRADAPT_NUMBA", "auto").strip().lower()
if _MODE not in ("0", "1", "auto", "true", "false"):
    raise ValueError(f"TERRADAPT_NUMBA must be 0, 1 or auto, got {_MODE!r}")

if _MODE in ("0", "false"):
    _NUMBA = False
elif _MODE in ("1", "true"):
    from numba import njit  # hard requirement in this mode

    _NUMBA = True
else:
    try:
        from numba import njit

        _NUMBA = True
    except ImportError:
        _NUMBA = False


def use_numba() -> bool:
    """True when the jitted kernel path is active."""
    return _NUMBA


# ---------------------------------------------------------------------------
# value noise
# ---------------------------------------------------------------------------

def _smoothstep_np(t):
    return t * t * (3.0 - 2.0 * t)


def _noise_octave_np(out, lattice, cell_px, amplitude):
    n = out.shape[0]
    idx = np.arange(n, dtype=np.float64) / cell_px
    gx = idx[np.newaxis, :]
    gy = idx[:, np.newaxis]
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    fx = _smoothstep_np(gx - x0)
    fy = _smoothstep_np(gy - y0)
    v00 = lattice[y0, x0]
    v10 = lattice[y0, x0 + 1]
    v01 = lattice[y0 + 1, x0]
    v11 = lattice[y0 + 1, x0 + 1]
    top = v00 + fx * (v10 - v00)
    bot = v01 + fx * (v11 - v01)
    out += amplitude * (top + fy * (bot - top))


def _voronoi_np(sites_x, sites_y, labels, n):
    out = np.empty((n, n), dtype=np.int64)
    cols = np.arange(n, dtype=np.float64)
    for i in range(n):  # row-chunked: full (n, n, S) tensor would be huge
        d2 = (cols[:, None] - sites_x[None, :]) ** 2 + (i - sites_y[None, :]) ** 2
        out[i, :] = labels[np.argmin(d2, axis=1)]
    return out


def _bilinear_np(grid, xs, ys):
    h, w = grid.shape
    xc = np.clip(xs, 0.0, w - 1.0)
    yc = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(xc.astype(np.int64), w - 2) if w > 1 else np.zeros_like(xc, np.int64)
    y0 = np.minimum(yc.astype(np.int64), h - 2) if h > 1 else np.zeros_like(yc, np.int64)
    fx = xc - x0
    fy = yc - y0
    v00 = grid[y0, x0]
    v10 = grid[y0, x0 + 1] if w > 1 else v00
    v01 = grid[y0 + 1, x0] if h > 1 else v00
    v11 = grid[y0 + 1, x0 + 1] if w > 1 and h > 1 else v00
    top = v00 + fx * (v10 - v00)
    bot = v01 + fx * (v11 - v01)
    return top + fy * (bot - top)


def _rotated_patch_np(grid, cx, cy, yaw, size, step_px, fill):
    half = size // 2
    offs = (np.arange(size, dtype=np.float64) - half) * step_px
    c, s = np.cos(yaw), np.sin(yaw)
    # patch[i, j] samples center + R(yaw) @ (offs[j], offs[i]) in map pixels
    px = cx + c * offs[None, :] - s * offs[:, None]
    py = cy + s * offs[None, :] + c * offs[:, None]
    h, w = grid.shape
    inside = (px >= 0.0) & (px <= w - 1.0) & (py >= 0.0) & (py <= h - 1.0)
    patch = _bilinear_np(grid, px, py)
    patch = np.where(inside, patch, fill)
    return patch, int(inside.size - np.count_nonzero(inside))


if _NUMBA:

    @njit(cache=True)
    def _noise_octave_nb(out, lattice, cell_px, amplitude):  # pragma: no cover
        n = out.shape[0]
        for i in range(n):
            gy = i / cell_px
            y0 = int(np.floor(gy))
            ty = gy - y0
            fy = ty * ty * (3.0 - 2.0 * ty)
            for j in range(n):
                gx = j / cell_px
                x0 = int(np.floor(gx))
                tx = gx - x0
                fx = tx * tx * (3.0 - 2.0 * tx)
                v00 = lattice[y0, x0]
                v10 = lattice[y0, x0 + 1]
                v01 = lattice[y0 + 1, x0]
                v11 = lattice[y0 + 1, x0 + 1]
                top = v00 + fx * (v10 - v00)
                bot = v01 + fx * (v11 - v01)
                out[i, j] += amplitude * (top + fy * (bot - top))

    @njit(cache=True)
    def _voronoi_nb(sites_x, sites_y, labels, n):  # pragma: no cover
        out = np.empty((n, n), dtype=np.int64)
        ns = sites_x.shape[0]
        for i in range(n):
            for j in range(n):
                best = 0
                bd = (j - sites_x[0]) ** 2 + (i - sites_y[0]) ** 2
                for k in range(1, ns):
                    d = (j - sites_x[k]) ** 2 + (i - sites_y[k]) ** 2
                    if d < bd:  # strict: ties keep the lowest site index
                        bd = d
                        best = k
                out[i, j] = labels[best]
        return out

    @njit(cache=True)
    def _bilinear_nb_flat(grid, xs, ys, out):  # pragma: no cover
        h, w = grid.shape
        for i in range(xs.shape[0]):
            x = xs[i]
            y = ys[i]
            if x < 0.0:
                x = 0.0
            elif x > w - 1.0:
                x = w - 1.0
            if y < 0.0:
                y = 0.0
            elif y > h - 1.0:
                y = h - 1.0
            x0 = int(x)
            if x0 > w - 2:
                x0 = w - 2
            y0 = int(y)
            if y0 > h - 2:
                y0 = h - 2
            fx = x - x0
            fy = y - y0
            v00 = grid[y0, x0]
            v10 = grid[y0, x0 + 1]
            v01 = grid[y0 + 1, x0]
            v11 = grid[y0 + 1, x0 + 1]
            top = v00 + fx * (v10 - v00)
            bot = v01 + fx * (v11 - v01)
            out[i] = top + fy * (bot - top)

    @njit(cache=True)
    def _rotated_patch_nb(grid, cx, cy, yaw, size, step_px, fill):  # pragma: no cover
        h, w = grid.shape
        half = size // 2
        c = np.cos(yaw)
        s = np.sin(yaw)
        patch = np.empty((size, size), dtype=np.float64)
        n_pad = 0
        for i in range(size):
            oy = (i - half) * step_px
            for j in range(size):
                ox = (j - half) * step_px
                px = cx + c * ox - s * oy
                py = cy + s * ox + c * oy
                if px < 0.0 or px > w - 1.0 or py < 0.0 or py > h - 1.0:
                    patch[i, j] = fill
                    n_pad += 1
                    continue
                x0 = int(px)
                if x0 > w - 2:
                    x0 = w - 2
                y0 = int(py)
                if y0 > h - 2:
                    y0 = h - 2
                fx = px - x0
                fy = py - y0
                v00 = grid[y0, x0]
                v10 = grid[y0, x0 + 1]
                v01 = grid[y0 + 1, x0]
                v11 = grid[y0 + 1, x0 + 1]
                top = v00 + fx * (v10 - v00)
                bot = v01 + fx * (v11 - v01)
                patch[i, j] = top + fy * (bot - top)
        return patch, n_pad


# ---------------------------------------------------------------------------
# public dispatchers
# ---------------------------------------------------------------------------

def add_noise_octave(out: np.ndarray, lattice: np.ndarray, cell_px: float,
                     amplitude: float, jit: bool | None = None) -> None:
    """Accumulate one smoothed value-noise octave into ``out`` in place.

    ``lattice`` holds the random corner values, one per ``cell_px``-sized
    cell, and must cover the grid: shape >= (n/cell_px + 2,) per axis.
    """
    if (jit is None and _NUMBA) or jit:
        _noise_octave_nb(out, lattice, float(cell_px), float(amplitude))
    else:
        _noise_octave_np(out, lattice, float(cell_px), float(amplitude))


def voronoi_labels(n: int, sites: np.ndarray, labels: np.ndarray,
                   jit: bool | None = None) -> np.ndarray:
    """Label an (n, n) raster by nearest site; ties go to the lowest index.

    ``sites`` is (S, 2) in (x, y) pixel coordinates, ``labels`` (S,) int.
    """
    sx = np.ascontiguousarray(sites[:, 0], dtype=np.float64)
    sy = np.ascontiguousarray(sites[:, 1], dtype=np.float64)
    lab = np.ascontiguousarray(labels, dtype=np.int64)
    if (jit is None and _NUMBA) or jit:
        return _voronoi_nb(sx, sy, lab, n)
    return _voronoi_np(sx, sy, lab, n)


def bilinear_sample(grid: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                    jit: bool | None = None) -> np.ndarray:
    """Bilinear lookup of ``grid`` at fractional pixel coordinates.

    Coordinates are clamped to the grid edges; output matches the
    broadcast shape of ``xs``/``ys``.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    xs, ys = np.broadcast_arrays(xs, ys)
    if (jit is None and _NUMBA) or jit:
        flat_x = np.ascontiguousarray(xs.ravel())
        flat_y = np.ascontiguousarray(ys.ravel())
        out = np.empty(flat_x.shape[0], dtype=np.float64)
        _bilinear_nb_flat(grid, flat_x, flat_y, out)
        return out.reshape(xs.shape)
    return _bilinear_np(grid, xs, ys)


def rotated_patch(grid: np.ndarray, cx: float, cy: float, yaw: float,
                  size: int, step_px: float, fill: float = 0.0,
                  jit: bool | None = None) -> tuple[np.ndarray, int]:
    """Resample a yaw-aligned square window centered at (cx, cy) pixels.

    ``patch[i, j]`` samples ``center + R(yaw) @ ((j - size//2), (i - size//2)) * step_px``,
    so the patch's +x axis (columns) points along the vehicle heading. The
    center pixel ``patch[size//2, size//2]`` lands exactly on ``(cx, cy)``.
    Out-of-map pixels get ``fill``; returns (patch, number of filled pixels).
    """
    if (jit is None and _NUMBA) or jit:
        return _rotated_patch_nb(grid, float(cx), float(cy), float(yaw),
                                 int(size), float(step_px), float(fill))
    return _rotated_patch_np(grid, float(cx), float(cy), float(yaw),
                             int(size), float(step_px), float(fill))
