"""Depth-based forward warping of a frame into another camera."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .geometry import CameraModel, backproject_depth, project_points
from .raster import FrameSet

_SQUARE = np.ones((3, 3), dtype=bool)


class CalibrationError(ValueError):
    pass


def _check(frame: FrameSet, from_cam: CameraModel, to_cam: CameraModel):
    if frame.depth is None:
        raise CalibrationError("reprojection needs a depth buffer")
    if frame.shape != from_cam.shape:
        raise CalibrationError(f"frame is {frame.shape} but source camera is {from_cam.shape}")
    for cam in (from_cam, to_cam):
        if not all(np.isfinite([cam.fx, cam.fy, cam.cx, cam.cy])):
            raise CalibrationError("non-finite intrinsics")


def splat(frame: FrameSet, from_cam: CameraModel, to_cam: CameraModel):
    """Forward-splat every finite-depth pixel with a one-pixel footprint.

    Returns ``(src_index, depth)`` images of the destination size: the flat
    index of the winning source pixel (-1 where nothing landed) and its
    depth in the destination camera. The nearest source point wins; exact
    depth ties go to the lower source index.
    """
    h, w = to_cam.shape
    pts = backproject_depth(from_cam, frame.depth).reshape(-1, 3)
    src = np.flatnonzero(np.isfinite(pts[:, 0]))
    u, v, z = project_points(to_cam, pts[src])
    with np.errstate(invalid="ignore"):
        ui = np.floor(u + 0.5)
        vi = np.floor(v + 0.5)
        ok = (z > 0) & (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    src, z = src[ok], z[ok]
    dst = vi[ok].astype(np.int64) * w + ui[ok].astype(np.int64)
    order = np.lexsort((src, z, dst))
    dst, src, z = dst[order], src[order], z[order]
    first = np.ones(dst.size, bool)
    first[1:] = dst[1:] != dst[:-1]
    index = np.full(h * w, -1, np.int64)
    depth = np.full(h * w, np.inf)
    index[dst[first]] = src[first]
    depth[dst[first]] = z[first]
    return index.reshape(h, w), depth.reshape(h, w)


def _close_gaps(index: np.ndarray, depth: np.ndarray):
    """One 3x3 closing pass: fill crack pixels from their nearest neighbour."""
    filled = index >= 0
    closed = ndimage.binary_erosion(
        ndimage.binary_dilation(filled, _SQUARE), _SQUARE, border_value=1
    )
    gaps = closed & ~filled
    if not gaps.any():
        return index, depth
    h, w = depth.shape
    pad_d = np.pad(depth, 1, constant_values=np.inf)
    pad_i = np.pad(index, 1, constant_values=-1)
    ys, xs = np.nonzero(gaps)
    best_d = np.full(ys.size, np.inf)
    best_i = np.full(ys.size, -1, np.int64)
    # fixed neighbour order keeps the choice deterministic on ties
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            d = pad_d[ys + 1 + dy, xs + 1 + dx]
            better = d < best_d
            best_d[better] = d[better]
            best_i[better] = pad_i[ys + 1 + dy, xs + 1 + dx][better]
    index, depth = index.copy(), depth.copy()
    index[ys, xs] = best_i
    depth[ys, xs] = best_d
    return index, depth


def reproject_frame(
    frame: FrameSet, from_cam: CameraModel, to_cam: CameraModel, *, close_gaps: bool = True
) -> tuple[FrameSet, np.ndarray]:
    """Warp ``frame`` seen by ``from_cam`` into ``to_cam``.

    Returns the warped frame and the hole mask (destination pixels that no
    source pixel reached). Holes carry black rgb, infinite depth and label
    0. Pixels with infinite depth in the input are dropped.
    """
    _check(frame, from_cam, to_cam)
    index, depth = splat(frame, from_cam, to_cam)
    if close_gaps:
        index, depth = _close_gaps(index, depth)
    holes = index < 0
    h, w = to_cam.shape
    flat = np.where(holes, 0, index).ravel()
    rgb = frame.rgb.reshape(-1, 3)[flat].reshape(h, w, 3)
    rgb[holes] = 0
    seg = None
    if frame.seg is not None:
        seg = frame.seg.ravel()[flat].reshape(h, w).copy()
        seg[holes] = 0
    return FrameSet(rgb, depth, seg), holes
