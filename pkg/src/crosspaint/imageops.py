"""Masks, fast-marching inpainting, luminance shifts and compositing."""

from __future__ import annotations

import math

import numba
import numpy as np
from PIL import Image
from scipy import ndimage

from .raster import FrameSet

ARM_DILATION = 20
GRIPPER_DILATION = 10
HIGH_ERROR_ARM_DILATION = 40
HIGH_ERROR_GRIPPER_DILATION = 20
INPAINT_RADIUS = 3

_SQUARE = np.ones((3, 3), dtype=bool)


class MissingDepthError(ValueError):
    pass


def dilate_mask(mask: np.ndarray, iterations: int) -> np.ndarray:
    """Binary dilation with a full 3x3 kernel, repeated ``iterations`` times.

    Pixels beyond the image border count as unset, so growth is clipped
    at the edges.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if iterations == 0 or not mask.any():
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=_SQUARE, iterations=iterations)


def shift_mask(mask: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate a mask by whole pixels, filling uncovered pixels with False."""
    return shift_image(np.asarray(mask, bool), dx, dy, False)


def shift_image(img: np.ndarray, dx: int, dy: int, fill=0) -> np.ndarray:
    out = np.full_like(img, fill)
    h, w = img.shape[:2]
    if abs(dx) >= w or abs(dy) >= h:
        return out
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = img[ys, xs]
    return out


def save_mask(mask: np.ndarray, path) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), "L").save(path)


def load_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) > 127


# ---------------------------------------------------------------- Telea FMM

_KNOWN, _BAND, _INSIDE = 0, 1, 2
_BIG = 1.0e6


@numba.njit(cache=True)
def _heap_push(keys, idx, n, k, v):
    i = n
    keys[i] = k
    idx[i] = v
    while i > 0:
        p = (i - 1) // 2
        if keys[p] < keys[i] or (keys[p] == keys[i] and idx[p] < idx[i]):
            break
        keys[p], keys[i] = keys[i], keys[p]
        idx[p], idx[i] = idx[i], idx[p]
        i = p
    return n + 1


@numba.njit(cache=True)
def _heap_pop(keys, idx, n):
    v = idx[0]
    n -= 1
    keys[0] = keys[n]
    idx[0] = idx[n]
    i = 0
    while True:
        a = 2 * i + 1
        if a >= n:
            break
        b = a + 1
        c = a
        if b < n and (keys[b] < keys[a] or (keys[b] == keys[a] and idx[b] < idx[a])):
            c = b
        if keys[i] < keys[c] or (keys[i] == keys[c] and idx[i] < idx[c]):
            break
        keys[c], keys[i] = keys[i], keys[c]
        idx[c], idx[i] = idx[i], idx[c]
        i = c
    return v, n


@numba.njit(cache=True)
def _solve(y1, x1, y2, x2, f, t):
    h, w = f.shape
    ok1 = 0 <= y1 < h and 0 <= x1 < w and f[y1, x1] != _INSIDE
    ok2 = 0 <= y2 < h and 0 <= x2 < w and f[y2, x2] != _INSIDE
    if ok1 and ok2:
        a, b = t[y1, x1], t[y2, x2]
        if abs(a - b) >= 1.0:
            return 1.0 + min(a, b)
        return 0.5 * (a + b + math.sqrt(2.0 - (a - b) * (a - b)))
    if ok1:
        return 1.0 + t[y1, x1]
    if ok2:
        return 1.0 + t[y2, x2]
    return _BIG


@numba.njit(cache=True)
def _arrival(y, x, f, t):
    return min(
        _solve(y - 1, x, y, x - 1, f, t),
        _solve(y + 1, x, y, x - 1, f, t),
        _solve(y - 1, x, y, x + 1, f, t),
        _solve(y + 1, x, y, x + 1, f, t),
    )


@numba.njit(cache=True)
def _march_outside(f0, t, radius):
    """Distance to the hole for known pixels within ``radius``, stored negated."""
    h, w = f0.shape
    f = np.full((h, w), _KNOWN, np.uint8)
    keys = np.empty(h * w)
    idx = np.empty(h * w, np.int64)
    n = 0
    r = radius
    for y in range(h):
        for x in range(w):
            if f0[y, x] == _BAND:
                f[y, x] = _BAND
                n = _heap_push(keys, idx, n, 0.0, y * w + x)
            elif f0[y, x] == _KNOWN:
                # far pixels must not look like boundary to the solver
                t[y, x] = _BIG
                # only pixels near the hole need a distance
                near = False
                for yy in range(max(0, y - r), min(h, y + r + 1)):
                    for xx in range(max(0, x - r), min(w, x + r + 1)):
                        if f0[yy, xx] == _INSIDE:
                            near = True
                if near:
                    f[y, x] = _INSIDE
    while n > 0:
        v, n = _heap_pop(keys, idx, n)
        py, px = v // w, v % w
        f[py, px] = _KNOWN
        for dy, dx in ((-1, 0), (0, -1), (1, 0), (0, 1)):
            y, x = py + dy, px + dx
            if 0 <= y < h and 0 <= x < w and f[y, x] == _INSIDE:
                d = np.float32(_arrival(y, x, f, t))
                t[y, x] = d
                f[y, x] = _BAND
                n = _heap_push(keys, idx, n, d, y * w + x)
    for y in range(h):
        for x in range(w):
            if f0[y, x] == _KNOWN and t[y, x] > 0 and t[y, x] < _BIG:
                t[y, x] = -t[y, x]


@numba.njit(cache=True)
def _telea(img, hole, radius):
    h, w, nc = img.shape
    out = img.copy()
    f = np.full((h, w), _KNOWN, np.uint8)
    t = np.zeros((h, w), np.float32)
    keys = np.empty(h * w)
    idx = np.empty(h * w, np.int64)
    n = 0
    for y in range(h):
        for x in range(w):
            if hole[y, x]:
                f[y, x] = _INSIDE
                t[y, x] = _BIG
    # band: known pixels 4-adjacent to the hole
    for y in range(h):
        for x in range(w):
            if f[y, x] == _KNOWN:
                for dy, dx in ((-1, 0), (0, -1), (1, 0), (0, 1)):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w and hole[yy, xx]:
                        f[y, x] = _BAND
                        break
    _march_outside(f, t, radius)
    for y in range(h):
        for x in range(w):
            if f[y, x] == _BAND:
                n = _heap_push(keys, idx, n, 0.0, y * w + x)
    r2 = radius * radius
    acc = np.empty(nc)
    jx = np.empty(nc)
    jy = np.empty(nc)
    while n > 0:
        v, n = _heap_pop(keys, idx, n)
        py, px = v // w, v % w
        f[py, px] = _KNOWN
        for dy, dx in ((-1, 0), (0, -1), (1, 0), (0, 1)):
            y, x = py + dy, px + dx
            if not (0 <= y < h and 0 <= x < w) or f[y, x] != _INSIDE:
                continue
            # single precision arrival times; finer resolution only
            # reshuffles near-ties where fronts meet
            d = np.float32(_arrival(y, x, f, t))
            t[y, x] = d
            # level-set normal from neighbouring arrival times
            gx = 0.0
            right = x + 1 < w and f[y, x + 1] != _INSIDE
            left = x > 0 and f[y, x - 1] != _INSIDE
            if right and left:
                gx = 0.5 * (t[y, x + 1] - t[y, x - 1])
            elif right:
                gx = t[y, x + 1] - d
            elif left:
                gx = d - t[y, x - 1]
            gy = 0.0
            down = y + 1 < h and f[y + 1, x] != _INSIDE
            up = y > 0 and f[y - 1, x] != _INSIDE
            if down and up:
                gy = 0.5 * (t[y + 1, x] - t[y - 1, x])
            elif down:
                gy = t[y + 1, x] - d
            elif up:
                gy = d - t[y - 1, x]
            s = 1e-20
            for c in range(nc):
                acc[c] = 0.0
                jx[c] = 0.0
                jy[c] = 0.0
            for qy in range(max(0, y - radius), min(h, y + radius + 1)):
                for qx in range(max(0, x - radius), min(w, x + radius + 1)):
                    if f[qy, qx] == _INSIDE:
                        continue
                    ry, rx = y - qy, x - qx
                    rr = rx * rx + ry * ry
                    if rr > r2:
                        continue
                    direction = rx * gx + ry * gy
                    if abs(direction) <= 0.01:
                        direction = 1e-6
                    dst = 1.0 / (rr * math.sqrt(rr))
                    lev = 1.0 / (1.0 + abs(t[qy, qx] - d))
                    wgt = abs(direction * dst * lev)
                    qr = qx + 1 < w and f[qy, qx + 1] != _INSIDE
                    ql = qx > 0 and f[qy, qx - 1] != _INSIDE
                    qd = qy + 1 < h and f[qy + 1, qx] != _INSIDE
                    qu = qy > 0 and f[qy - 1, qx] != _INSIDE
                    for c in range(nc):
                        acc[c] += wgt * out[qy, qx, c]
                        # image gradient at q from known neighbours only
                        ix = 0.0
                        if qr and ql:
                            ix = 0.5 * (out[qy, qx + 1, c] - out[qy, qx - 1, c])
                        elif qr:
                            ix = out[qy, qx + 1, c] - out[qy, qx, c]
                        elif ql:
                            ix = out[qy, qx, c] - out[qy, qx - 1, c]
                        iy = 0.0
                        if qd and qu:
                            iy = 0.5 * (out[qy + 1, qx, c] - out[qy - 1, qx, c])
                        elif qd:
                            iy = out[qy + 1, qx, c] - out[qy, qx, c]
                        elif qu:
                            iy = out[qy, qx, c] - out[qy - 1, qx, c]
                        jx[c] -= wgt * ix * rx
                        jy[c] -= wgt * iy * ry
                    s += wgt
            for c in range(nc):
                # bounded first-order correction: unit-norm, so at most sqrt(2)
                corr = (jx[c] + jy[c]) / (math.sqrt(jx[c] * jx[c] + jy[c] * jy[c]) + 1e-20)
                val = math.floor(acc[c] / s + corr + 0.5)
                out[y, x, c] = min(255.0, max(0.0, val))
            f[y, x] = _BAND
            n = _heap_push(keys, idx, n, d, y * w + x)
    return out


def inpaint_fast_marching(
    rgb: np.ndarray, holes: np.ndarray, radius: int = INPAINT_RADIUS, *, return_flag: bool = False
):
    """Fill ``holes`` by Telea's fast-marching method.

    Hole pixels are visited in order of distance from the hole boundary
    (ties broken row-major) and set to a weighted average of already-known
    pixels within ``radius``. The weight multiplies a direction term (how
    well the neighbour lines up with the marching normal), an inverse-square
    distance term and a level-set term (similar arrival time). The average
    gets a first-order gradient correction normalised to at most sqrt(2)
    grey levels, so flat regions are reproduced exactly.

    If every pixel is a hole there is nothing to propagate; the image is
    filled with mid-grey and, with ``return_flag``, the flag is True.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    rgb = np.asarray(rgb)
    holes = np.asarray(holes, dtype=bool)
    if holes.shape != rgb.shape[:2]:
        raise ValueError("hole mask does not match image")
    flagged = False
    if not holes.any():
        out = rgb.copy()
    elif holes.all():
        out = np.full_like(rgb, 128)
        flagged = True
    else:
        img = rgb if rgb.ndim == 3 else rgb[..., None]
        out = _telea(img.astype(np.float64), holes, int(radius)).astype(rgb.dtype)
        out = out if rgb.ndim == 3 else out[..., 0]
    return (out, flagged) if return_flag else out


def fill_from_plate(rgb: np.ndarray, holes: np.ndarray, plate: np.ndarray) -> np.ndarray:
    """Background-plate fill: copy masked pixels from a pre-captured empty scene."""
    if plate.shape != rgb.shape:
        raise ValueError("background plate does not match frame")
    out = rgb.copy()
    out[holes] = plate[holes]
    return out


# ---------------------------------------------------------------- compositing


def composite_overlay(base: FrameSet, layer: FrameSet, use_depth: bool) -> FrameSet:
    """Paste ``layer`` onto ``base``.

    With ``use_depth`` a layer pixel wins only where it is strictly nearer
    than the base; otherwise it wins wherever the layer has a label.
    """
    if base.shape != layer.shape:
        raise ValueError(f"frame shapes differ: {base.shape} vs {layer.shape}")
    if layer.seg is None:
        raise ValueError("layer needs a segmentation buffer")
    draw = layer.seg != 0
    if use_depth:
        if base.depth is None or layer.depth is None:
            raise MissingDepthError("depth-aware compositing needs depth on both frames")
        draw &= layer.depth < base.depth
    rgb = base.rgb.copy()
    rgb[draw] = layer.rgb[draw]
    depth = None
    if base.depth is not None:
        depth = base.depth.copy()
        if layer.depth is not None:
            depth[draw] = layer.depth[draw]
    seg = np.zeros(base.shape, np.int32) if base.seg is None else base.seg.copy()
    seg[draw] = layer.seg[draw]
    return FrameSet(rgb, depth, seg)


def adjust_luminance(rgb: np.ndarray, mask: np.ndarray, offset: int) -> np.ndarray:
    """Add ``offset`` to every channel under ``mask``, clamped to [0, 255]."""
    out = rgb.copy()
    if offset:
        sel = np.asarray(mask, bool)
        out[sel] = np.clip(out[sel].astype(np.int16) + int(offset), 0, 255).astype(np.uint8)
    return out
