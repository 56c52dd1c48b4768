"""Exteroception: scandots and depth images rendered from a heightfield."""

__all__ = [
    "BasePose",
    "CameraExtrinsics",
    "DepthImage",
    "DepthNoise",
    "ScandotGrid",
    "ScandotLayout",
    "downsample_depth",
    "dump_depth_png",
    "preprocess_real_depth",
    "render_depth",
    "sample_scandots",
    "sample_scandots_batch",
    "simulate_depth_noise",
]

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from PIL import Image
from scipy.ndimage import median_filter
from scipy.spatial.transform import Rotation

from parkourpy.errors import ConfigurationError, InputError
from parkourpy.terrain import HeightField, height_at

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

NEAR_CLIP = 0.2
FAR_CLIP = 3.0
SENSOR_RESOLUTION = (480, 640)
POLICY_RESOLUTION = (48, 64)


@dataclass(frozen=True)
class BasePose:
    """World position (m) and roll/pitch/yaw (rad) of the robot base."""

    position: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rpy: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def rotation(self) -> FloatArray:
        roll, pitch, yaw = self.rpy
        return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()  # type: ignore[no-any-return]


@dataclass(frozen=True)
class ScandotLayout:
    """Body-frame sampling pattern: ``lateral`` rows by ``forward`` columns."""

    lateral: int = 11
    forward: int = 19
    lateral_spacing: float = 0.1
    forward_spacing: float = 0.15
    forward_start: float = -0.1

    def offsets(self) -> FloatArray:
        """(lateral, forward, 2) array of body-frame x/y offsets."""
        ys = (np.arange(self.lateral) - 0.5 * (self.lateral - 1)) * self.lateral_spacing
        xs = self.forward_start + np.arange(self.forward) * self.forward_spacing
        grid = np.empty((self.lateral, self.forward, 2))
        grid[..., 0] = xs[None, :]
        grid[..., 1] = ys[:, None]
        return grid

    @property
    def size(self) -> int:
        return self.lateral * self.forward


@dataclass(frozen=True)
class ScandotGrid:
    values: FloatArray
    layout: ScandotLayout = field(default_factory=ScandotLayout)

    def __post_init__(self) -> None:
        shape = (self.layout.lateral, self.layout.forward)
        if np.shape(self.values) != shape:
            raise InputError(f"scandot values must have shape {shape}, got {np.shape(self.values)}")

    def flatten(self) -> FloatArray:
        return np.asarray(self.values).reshape(-1)


@dataclass(frozen=True)
class CameraExtrinsics:
    """Depth camera mount: body-frame position, roll/pitch/yaw, horizontal fov.

    Positive pitch tilts the optical axis down.
    """

    position: Tuple[float, float, float] = (0.11, -0.0175, 0.67)
    orientation: Tuple[float, float, float] = (0.0, 0.88, 0.0)
    fov: float = 87.0

    def __post_init__(self) -> None:
        if not 0.0 < self.fov < 180.0:
            raise InputError(f"fov must be in (0, 180) degrees, got {self.fov}")


@dataclass(frozen=True)
class DepthImage:
    pixels: FloatArray
    near_clip: float = NEAR_CLIP
    far_clip: float = FAR_CLIP
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if np.ndim(self.pixels) != 2:
            raise InputError(f"depth image must be 2-D, got shape {np.shape(self.pixels)}")
        if not 0.0 <= self.near_clip < self.far_clip:
            raise InputError(f"invalid clip range [{self.near_clip}, {self.far_clip}]")

    @property
    def shape(self) -> Tuple[int, int]:
        return int(self.pixels.shape[0]), int(self.pixels.shape[1])

    def clipped(self) -> "DepthImage":
        return replace(self, pixels=np.clip(self.pixels, self.near_clip, self.far_clip))


@dataclass(frozen=True)
class DepthNoise:
    """Magnitudes of the simulated sensor noise, all in meters or pixels."""

    pixel_std: float = 0.02
    frame_std: float = 0.01
    max_artifacts: int = 4
    artifact_size: int = 8


def _scandot_heights(
    field: HeightField,
    positions: FloatArray,
    yaws: FloatArray,
    offsets: FloatArray,
) -> FloatArray:
    c = np.cos(yaws)[:, None, None]
    s = np.sin(yaws)[:, None, None]
    ox = offsets[None, ..., 0]
    oy = offsets[None, ..., 1]
    wx = positions[:, 0, None, None] + c * ox - s * oy
    wy = positions[:, 1, None, None] + s * ox + c * oy
    return height_at(field, wx, wy) - positions[:, 2, None, None]


def sample_scandots(
    field: HeightField, base_pose: BasePose, layout: Optional[ScandotLayout] = None
) -> ScandotGrid:
    """Terrain elevation relative to the base at yaw-rotated body offsets."""
    layout = layout or ScandotLayout()
    position = np.asarray(base_pose.position, dtype=np.float64)[None, :]
    yaw = np.array([base_pose.rpy[2]])
    values = _scandot_heights(field, position, yaw, layout.offsets())[0]
    return ScandotGrid(values, layout)


def sample_scandots_batch(
    field: HeightField,
    positions: ArrayLike,
    yaws: ArrayLike,
    layout: Optional[ScandotLayout] = None,
) -> FloatArray:
    """Scandots of ``N`` robots at once, shape (N, lateral, forward)."""
    layout = layout or ScandotLayout()
    return _scandot_heights(
        field,
        np.asarray(positions, dtype=np.float64).reshape(-1, 3),
        np.asarray(yaws, dtype=np.float64).reshape(-1),
        layout.offsets(),
    )


def _camera_rays(
    cam: CameraExtrinsics, base_pose: BasePose, resolution: Tuple[int, int]
) -> Tuple[FloatArray, FloatArray]:
    """World origin and per-pixel world directions scaled to unit forward depth."""
    rows, cols = resolution
    focal = 0.5 * cols / math.tan(0.5 * math.radians(cam.fov))
    u = (np.arange(cols) + 0.5 - 0.5 * cols) / focal
    v = (np.arange(rows) + 0.5 - 0.5 * rows) / focal
    dirs = np.empty((rows, cols, 3))
    dirs[..., 0] = 1.0
    dirs[..., 1] = -u[None, :]
    dirs[..., 2] = -v[:, None]
    roll, pitch, yaw = cam.orientation
    mount = Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()
    base = base_pose.rotation()
    origin = np.asarray(base_pose.position) + base @ np.asarray(cam.position)
    world = dirs.reshape(-1, 3) @ (base @ mount).T
    return origin, world


def render_depth(
    field: HeightField,
    cam: CameraExtrinsics,
    base_pose: BasePose,
    resolution: Tuple[int, int] = SENSOR_RESOLUTION,
    near_clip: float = NEAR_CLIP,
    far_clip: float = FAR_CLIP,
    step_factor: float = 0.5,
    bisections: int = 10,
) -> DepthImage:
    """Pinhole depth image by ray marching against the heightfield.

    Each ray advances in world steps of ``step_factor * cell_size`` until it
    drops below the surface, then the crossing is refined by bisection. Pixel
    values are forward (optical axis) depths clipped to the clip range; rays
    without a hit before ``far_clip`` read ``far_clip``.
    """
    origin, dirs = _camera_rays(cam, base_pose, resolution)
    shape = resolution
    if origin[2] <= float(height_at(field, origin[0], origin[1])):
        return DepthImage(np.full(shape, near_clip), near_clip, far_clip)

    n = dirs.shape[0]
    step = step_factor * field.cell_size / np.linalg.norm(dirs, axis=1)
    lo = np.zeros(n)
    hi = np.full(n, far_clip)
    hit = np.zeros(n, dtype=bool)
    active = np.arange(n)
    k = 0
    while active.size:
        k += 1
        t = np.minimum(k * step[active], far_clip)
        p = origin + t[:, None] * dirs[active]
        below = p[:, 2] <= height_at(field, p[:, 0], p[:, 1])
        crossed = active[below]
        hit[crossed] = True
        hi[crossed] = t[below]
        lo[crossed] = np.minimum((k - 1) * step[crossed], far_clip)
        active = active[~below & (t < far_clip)]

    idx = np.flatnonzero(hit)
    a, b = lo[idx], hi[idx]
    d = dirs[idx]
    for _ in range(bisections):
        mid = 0.5 * (a + b)
        p = origin + mid[:, None] * d
        below = p[:, 2] <= height_at(field, p[:, 0], p[:, 1])
        b = np.where(below, mid, b)
        a = np.where(below, a, mid)
    depth = np.full(n, far_clip)
    depth[idx] = 0.5 * (a + b)
    pixels = np.clip(depth, near_clip, far_clip).reshape(shape)
    return DepthImage(pixels, near_clip, far_clip)


def simulate_depth_noise(
    img: DepthImage, seed: int, noise: Optional[DepthNoise] = None
) -> DepthImage:
    """Sensor noise model: clip, multi-level Gaussian noise, dropout patches, clip."""
    noise = noise or DepthNoise()
    rng = np.random.default_rng(seed)
    pixels = np.clip(np.array(img.pixels, dtype=np.float64), img.near_clip, img.far_clip)
    rows, cols = pixels.shape
    if noise.pixel_std > 0:
        pixels += rng.normal(0.0, noise.pixel_std, size=pixels.shape)
    if noise.frame_std > 0:
        pixels += rng.normal(0.0, noise.frame_std)
    if noise.max_artifacts > 0:
        for _ in range(int(rng.integers(0, noise.max_artifacts + 1))):
            h = int(rng.integers(1, min(noise.artifact_size, rows) + 1))
            w = int(rng.integers(1, min(noise.artifact_size, cols) + 1))
            r0 = int(rng.integers(0, rows - h + 1))
            c0 = int(rng.integers(0, cols - w + 1))
            pixels[r0 : r0 + h, c0 : c0 + w] = img.far_clip if rng.random() < 0.5 else img.near_clip
    np.clip(pixels, img.near_clip, img.far_clip, out=pixels)
    return replace(img, pixels=pixels)


def _fill_forward(values: FloatArray, valid: NDArray[np.bool_]) -> Tuple[FloatArray, NDArray[np.bool_]]:
    """Carry the last valid value of each row rightwards over holes."""
    rows, cols = values.shape
    idx = np.where(valid, np.arange(cols)[None, :], 0)
    np.maximum.accumulate(idx, axis=1, out=idx)
    r = np.arange(rows)[:, None]
    return values[r, idx], valid[r, idx]


def _fill_rows(values: FloatArray, valid: NDArray[np.bool_]) -> Tuple[FloatArray, NDArray[np.bool_]]:
    filled, ok = _fill_forward(values, valid)
    back, back_ok = _fill_forward(filled[:, ::-1], ok[:, ::-1])
    return back[:, ::-1], back_ok[:, ::-1]


def preprocess_real_depth(
    img: DepthImage, prev: Optional[DepthImage] = None, alpha: float = 0.6
) -> DepthImage:
    """Hole filling, 3x3 median smoothing and temporal blending of a sensor frame.

    Holes are zero or non-finite pixels. They are filled from the nearest
    valid pixel on the same row (forward, then reverse scan); rows without
    any valid pixel are then filled along columns.

    Raises
    ------
    InputError
        If every pixel is a hole and there is no previous frame.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must be in [0, 1], got {alpha}")
    raw = np.asarray(img.pixels, dtype=np.float64)
    valid = np.isfinite(raw) & (raw != 0.0)
    if not valid.any():
        if prev is None:
            raise InputError("depth frame has no valid pixels and no previous frame")
        logger.warning("depth frame at t=%.3f has no valid pixels, holding previous", img.timestamp)
        return replace(prev, timestamp=img.timestamp)

    values = np.where(valid, raw, 0.0)
    values, ok = _fill_rows(values, valid)
    if not ok.all():
        values_t, _ = _fill_rows(values.T, ok.T)
        values = values_t.T
    values = np.clip(values, img.near_clip, img.far_clip)
    values = median_filter(values, size=3, mode="nearest")
    if prev is not None:
        values = alpha * values + (1.0 - alpha) * np.asarray(prev.pixels)
    return replace(img, pixels=np.clip(values, img.near_clip, img.far_clip))


def downsample_depth(img: DepthImage, resolution: Tuple[int, int] = POLICY_RESOLUTION) -> DepthImage:
    """Block-min pooling to the policy resolution."""
    rows, cols = img.shape
    out_rows, out_cols = resolution
    if rows % out_rows or cols % out_cols:
        raise ConfigurationError(
            f"depth resolution {rows}x{cols} is not a multiple of {out_rows}x{out_cols}"
        )
    blocks = np.asarray(img.pixels).reshape(out_rows, rows // out_rows, out_cols, cols // out_cols)
    return replace(img, pixels=blocks.min(axis=(1, 3)))


def dump_depth_png(path: Union[str, Path], img: DepthImage) -> None:
    """Depth in millimeters as a 16-bit grayscale image."""
    mm = np.clip(np.round(np.asarray(img.pixels) * 1000.0), 0, 65535).astype(np.uint16)
    Image.fromarray(mm, mode="I;16").save(path)
