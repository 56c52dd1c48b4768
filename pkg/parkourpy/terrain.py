"""Parkour obstacle tracks as heightfields.

A track is a grid of sub-tracks ("cells"): rows lie one after the other
along +x and carry increasing difficulty, columns lie side by side along +y
and each holds one obstacle kind. Every cell is a starting plane followed by
an obstacle block. Cells own their nodes half-open, ``[0, length)`` along
both axes, so a stitched grid is a plain concatenation of cell grids.
"""

__all__ = [
    "TESTING_RANGES",
    "TRAINING_RANGES",
    "HeightField",
    "ObstacleKind",
    "ObstacleSpec",
    "SteppingTargets",
    "Track",
    "TrackCell",
    "TrackLayout",
    "VirtualObstacle",
    "apply_fractal_noise",
    "assemble_track_grid",
    "build_obstacle",
    "build_track",
    "dump_png",
    "height_at",
    "interpolate_difficulty",
    "read_hfield",
    "write_hfield",
]

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum, unique
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from PIL import Image

from parkourpy.errors import ConfigurationError, DataCorruptionError, DomainError, InputError

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

HFIELD_MAGIC = "HFIELD"
HFIELD_VERSION = "v1"

# (easy, hard) endpoints per critical parameter
TRAINING_RANGES: Mapping[str, Tuple[float, float]] = {
    "jump_height": (0.2, 0.5),
    "down_height": (0.1, 0.6),
    "leap_length": (0.2, 1.2),
    "slope_angle": (0.2, 0.42),
    "stairs_height": (0.1, 0.3),
    "stairs_length": (0.5, 0.3),
    "hurdle_height": (0.05, 0.5),
    "ramp_angle": (0.2, 0.5),
    "discrete_height": (0.05, 0.25),
    "wave_amplitude": (0.05, 0.25),
}

TESTING_RANGES: Mapping[str, Tuple[float, float]] = {
    "jump_height": (0.2, 0.6),
    "down_height": (0.2, 0.6),
    "leap_length": (0.2, 1.2),
    "slope_angle": (0.2, 0.4),
    "stairs_height": (0.1, 0.3),
    "stairs_length": (0.5, 0.3),
    "hurdle_height": (0.1, 0.5),
    "ramp_angle": (0.2, 0.4),
    "discrete_height": (0.05, 0.25),
    "wave_amplitude": (0.05, 0.25),
}

# block-local geometry (m, measured from the end of the starting plane)
BLOCK_LENGTH = 3.2
PLATFORM_START, PLATFORM_END = 0.4, 2.0
DROP_EDGE = 0.8
GAP_START = 0.8
HURDLE_START, HURDLE_THICKNESS = 0.8, 0.1
RAMP_LENGTH, SLOPE_PLATEAU = 1.2, 0.4
TILT_START, TILT_END = 0.4, 2.8
DISCRETE_START, DISCRETE_END, DISCRETE_BLOCK = 0.4, 2.8, 0.4
WAVE_START, WAVE_PERIOD, WAVE_PERIODS = 0.1, 1.5, 2
VIRTUAL_MARGIN = 0.1


@unique
class ObstacleKind(Enum):
    JUMP_UP = "jump_up"
    JUMP_DOWN = "jump_down"
    LEAP = "leap"
    SLOPE = "slope"
    STAIRS_UP = "stairs_up"
    STAIRS_DOWN = "stairs_down"
    HURDLE = "hurdle"
    TILTED_RAMP = "tilted_ramp"
    DISCRETE = "discrete"
    WAVE = "wave"

    @property
    def critical_parameters(self) -> Tuple[str, ...]:
        return _KIND_PARAMETERS[self]


_KIND_PARAMETERS: Dict[ObstacleKind, Tuple[str, ...]] = {
    ObstacleKind.JUMP_UP: ("jump_height",),
    ObstacleKind.JUMP_DOWN: ("down_height",),
    ObstacleKind.LEAP: ("leap_length",),
    ObstacleKind.SLOPE: ("slope_angle",),
    ObstacleKind.STAIRS_UP: ("stairs_height", "stairs_length"),
    ObstacleKind.STAIRS_DOWN: ("stairs_height", "stairs_length"),
    ObstacleKind.HURDLE: ("hurdle_height",),
    ObstacleKind.TILTED_RAMP: ("ramp_angle",),
    ObstacleKind.DISCRETE: ("discrete_height",),
    ObstacleKind.WAVE: ("wave_amplitude",),
}


def interpolate_difficulty(
    range_easy: float, range_hard: float, row: int, rows: int
) -> float:
    """Critical parameter of difficulty row ``row`` out of ``rows``.

    ``(1 - row/rows) * range_easy + (row/rows) * range_hard``. Rows run from 0
    (easy endpoint) up to and including ``rows`` (hard endpoint).

    Raises
    ------
    DomainError
        If ``rows < 1`` or ``row`` is outside ``[0, rows]``.
    """
    if rows < 1:
        raise DomainError(f"rows must be at least 1, got {rows}")
    if not 0 <= row <= rows:
        raise DomainError(f"row {row} outside [0, {rows}]")
    t = row / rows
    return (1.0 - t) * range_easy + t * range_hard


@dataclass(frozen=True)
class HeightField:
    """Regular grid of terrain heights.

    ``heights[i, j]`` is the elevation of node ``(origin_x + i * cell_size,
    origin_y + j * cell_size)``; ``i`` runs along the track (``length``
    nodes) and ``j`` across it (``width`` nodes). The array is read-only.
    """

    heights: FloatArray
    cell_size: float
    origin: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        heights = np.array(self.heights, dtype=np.float64, copy=True)
        if heights.ndim != 2 or heights.shape[0] < 2 or heights.shape[1] < 2:
            raise InputError(
                f"heights must be a 2-D grid of at least 2x2 nodes, got {heights.shape}"
            )
        if not np.all(np.isfinite(heights)):
            raise InputError("heights must be finite everywhere")
        if not self.cell_size > 0:
            raise InputError(f"cell_size must be positive, got {self.cell_size}")
        heights.flags.writeable = False
        object.__setattr__(self, "heights", heights)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def length(self) -> int:
        return int(self.heights.shape[0])

    @property
    def width(self) -> int:
        return int(self.heights.shape[1])

    @property
    def extent(self) -> Tuple[float, float]:
        """Size in meters covered by the nodes, along x and y."""
        return (self.length - 1) * self.cell_size, (self.width - 1) * self.cell_size

    def height_at(self, x: ArrayLike, y: ArrayLike) -> FloatArray:
        return height_at(self, x, y)

    def with_heights(self, heights: FloatArray) -> "HeightField":
        return HeightField(heights, self.cell_size, self.origin)

    def translated(self, dx: float, dy: float) -> "HeightField":
        return HeightField(self.heights, self.cell_size, (self.origin[0] + dx, self.origin[1] + dy))


def height_at(field: HeightField, x: ArrayLike, y: ArrayLike) -> FloatArray:
    """Bilinear interpolation of the four nodes surrounding each ``(x, y)``.

    Queries outside the grid clamp to the nearest edge node. Inputs broadcast
    against each other.
    """
    gx = (np.asarray(x, dtype=np.float64) - field.origin[0]) / field.cell_size
    gy = (np.asarray(y, dtype=np.float64) - field.origin[1]) / field.cell_size
    gx = np.clip(gx, 0.0, field.length - 1)
    gy = np.clip(gy, 0.0, field.width - 1)
    i0 = np.minimum(np.floor(gx).astype(np.intp), field.length - 2)
    j0 = np.minimum(np.floor(gy).astype(np.intp), field.width - 2)
    tx = gx - i0
    ty = gy - j0
    h = field.heights
    h00 = h[i0, j0]
    h10 = h[i0 + 1, j0]
    h01 = h[i0, j0 + 1]
    h11 = h[i0 + 1, j0 + 1]
    return (
        h00 * (1.0 - tx) * (1.0 - ty)
        + h10 * tx * (1.0 - ty)
        + h01 * (1.0 - tx) * ty
        + h11 * tx * ty
    )


@dataclass(frozen=True)
class ObstacleSpec:
    """One obstacle and the values of its critical parameters.

    ``critical_params`` holds meters for heights and lengths, radians for
    angles. ``num_treads`` only matters for stairs, ``seed`` only for the
    random block pattern of discrete terrain.
    """

    kind: ObstacleKind
    difficulty: float
    critical_params: Mapping[str, float]
    num_treads: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.difficulty <= 1.0:
            raise DomainError(f"difficulty {self.difficulty} outside [0, 1]")
        missing = set(self.kind.critical_parameters) - set(self.critical_params)
        if missing:
            raise InputError(f"{self.kind.value} is missing parameters {sorted(missing)}")
        for name, value in self.critical_params.items():
            if not math.isfinite(value) or value < 0.0:
                raise InputError(f"{name} must be finite and nonnegative, got {value}")
        if self.num_treads < 1:
            raise InputError(f"num_treads must be at least 1, got {self.num_treads}")
        object.__setattr__(self, "critical_params", dict(self.critical_params))

    @classmethod
    def at_difficulty(
        cls,
        kind: ObstacleKind,
        difficulty: float,
        ranges: Mapping[str, Tuple[float, float]] = TRAINING_RANGES,
        num_treads: int = 5,
        seed: int = 0,
    ) -> "ObstacleSpec":
        """Spec whose parameters interpolate linearly from easy to hard."""
        params = {
            name: (1.0 - difficulty) * ranges[name][0] + difficulty * ranges[name][1]
            for name in kind.critical_parameters
        }
        return cls(kind, difficulty, params, num_treads=num_treads, seed=seed)

    @classmethod
    def flat(cls) -> "ObstacleSpec":
        """Degenerate zero-angle slope: a flat cell."""
        return cls(ObstacleKind.SLOPE, 0.0, {"slope_angle": 0.0})

    def within(self, ranges: Mapping[str, Tuple[float, float]] = TRAINING_RANGES) -> bool:
        """Whether every critical parameter lies inside its range."""
        tol = 1e-12
        for name in self.kind.critical_parameters:
            lo, hi = sorted(ranges[name])
            if not lo - tol <= self.critical_params[name] <= hi + tol:
                return False
        return True

    def __getitem__(self, name: str) -> float:
        return self.critical_params[name]


@dataclass(frozen=True)
class VirtualObstacle:
    """Axis-aligned box penalizing body points that pass its designated face.

    The penetration surface is the face of the box normal to ``axis``; with
    ``inward = -1`` it is the upper face (``"top"`` when ``axis == 2``), with
    ``inward = +1`` the lower one. Depth grows from that face into the box.
    """

    lower: Tuple[float, float, float]
    upper: Tuple[float, float, float]
    axis: int
    inward: int

    def __post_init__(self) -> None:
        if self.axis not in (0, 1, 2) or self.inward not in (-1, 1):
            raise InputError(f"invalid penetration surface axis={self.axis} inward={self.inward}")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise InputError(f"box lower {self.lower} exceeds upper {self.upper}")

    @property
    def surface(self) -> str:
        names = {(0, 1): "back", (0, -1): "front", (1, 1): "right", (1, -1): "left"}
        names.update({(2, -1): "top", (2, 1): "bottom"})
        return names[(self.axis, self.inward)]

    def penetration_depth(self, points: ArrayLike) -> FloatArray:
        """Depth past the penetration surface of each point, 0 outside the box."""
        p = np.asarray(points, dtype=np.float64)
        lower = np.asarray(self.lower)
        upper = np.asarray(self.upper)
        inside = np.all((p >= lower) & (p <= upper), axis=-1)
        if self.inward < 0:
            depth = upper[self.axis] - p[..., self.axis]
        else:
            depth = p[..., self.axis] - lower[self.axis]
        return np.where(inside, depth, 0.0)

    def translated(self, dx: float, dy: float) -> "VirtualObstacle":
        return replace(
            self,
            lower=(self.lower[0] + dx, self.lower[1] + dy, self.lower[2]),
            upper=(self.upper[0] + dx, self.upper[1] + dy, self.upper[2]),
        )


@dataclass(frozen=True)
class SteppingTargets:
    """Recommended foothold x-positions (m), one per stair tread."""

    xs: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        xs = tuple(float(x) for x in self.xs)
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise InputError("stepping targets must increase monotonically")
        object.__setattr__(self, "xs", xs)

    def __len__(self) -> int:
        return len(self.xs)

    def __bool__(self) -> bool:
        return bool(self.xs)

    def nearest(self, x: float) -> float:
        if not self.xs:
            raise InputError("no stepping targets")
        xs = np.asarray(self.xs)
        return float(xs[np.argmin(np.abs(xs - x))])

    def translated(self, dx: float) -> "SteppingTargets":
        return SteppingTargets(tuple(x + dx for x in self.xs))


def _smallest_feature(spec: ObstacleSpec) -> float:
    kind = spec.kind
    if kind is ObstacleKind.HURDLE:
        return HURDLE_THICKNESS
    if kind is ObstacleKind.LEAP:
        return spec["leap_length"]
    if kind in (ObstacleKind.STAIRS_UP, ObstacleKind.STAIRS_DOWN):
        return spec["stairs_length"]
    if kind is ObstacleKind.DISCRETE:
        return DISCRETE_BLOCK
    if kind is ObstacleKind.WAVE:
        return WAVE_PERIOD / 4.0
    return SLOPE_PLATEAU


def _span(coords: FloatArray, start: float, stop: float, eps: float) -> NDArray[np.bool_]:
    """Nodes with ``start <= coord < stop``, snapping boundaries onto nodes."""
    return (coords >= start - eps) & (coords < stop - eps)


def build_obstacle(
    spec: ObstacleSpec,
    cell_size: float,
    *,
    subtrack_length: float = 4.8,
    start_plane_length: float = 1.6,
    width: float = 1.6,
    trench_depth: float = 3.0,
) -> Tuple[HeightField, List[VirtualObstacle], SteppingTargets]:
    """Heightfield of one sub-track: starting plane plus obstacle block.

    Coordinates are local to the cell, origin at its rear right corner. The
    base plane is at height 0; the starting plane of the descending kinds
    (jump down, stairs down) is raised to the top of the descent.

    Returns
    -------
    (HeightField, list of VirtualObstacle, SteppingTargets)
        Virtual obstacles are emitted for leap, jump up/down and hurdle
        cells, stepping targets (tread centers) for stairs only.

    Raises
    ------
    ConfigurationError
        If ``cell_size`` exceeds the smallest feature of the obstacle, or the
        obstacle does not fit in the block.
    """
    if cell_size <= 0:
        raise ConfigurationError(f"cell_size must be positive, got {cell_size}")
    feature = _smallest_feature(spec)
    if cell_size > feature + 1e-12:
        raise ConfigurationError(
            f"cell_size {cell_size} m is larger than the smallest {spec.kind.value} "
            f"feature ({feature} m)"
        )
    block_length = subtrack_length - start_plane_length
    if block_length < BLOCK_LENGTH - 1e-9:
        raise ConfigurationError(
            f"obstacle block of {block_length} m is shorter than {BLOCK_LENGTH} m"
        )

    n = int(round(subtrack_length / cell_size))
    m = int(round(width / cell_size))
    eps = 1e-6 * cell_size
    xs = np.arange(n) * cell_size
    ys = np.arange(m) * cell_size
    bx = xs - start_plane_length
    heights = np.zeros((n, m))
    obstacles: List[VirtualObstacle] = []
    targets = SteppingTargets()
    s = start_plane_length
    kind = spec.kind

    if kind is ObstacleKind.JUMP_UP:
        h = spec["jump_height"]
        heights[_span(bx, PLATFORM_START, PLATFORM_END, eps)] = h
        riser = s + PLATFORM_START
        obstacles.append(
            VirtualObstacle((riser - VIRTUAL_MARGIN, 0.0, 0.0), (riser, width, h), axis=0, inward=1)
        )
    elif kind is ObstacleKind.JUMP_DOWN:
        h = spec["down_height"]
        heights[bx < DROP_EDGE - eps] = h
        edge = s + DROP_EDGE
        obstacles.append(
            VirtualObstacle((edge, 0.0, 0.0), (edge + VIRTUAL_MARGIN, width, h), axis=0, inward=-1)
        )
    elif kind is ObstacleKind.LEAP:
        gap = spec["leap_length"]
        heights[_span(bx, GAP_START, GAP_START + gap, eps)] = -trench_depth
        obstacles.append(
            VirtualObstacle(
                (s + GAP_START, 0.0, -trench_depth),
                (s + GAP_START + gap, width, 0.0),
                axis=2,
                inward=-1,
            )
        )
    elif kind is ObstacleKind.SLOPE:
        grade = math.tan(spec["slope_angle"])
        top = PLATFORM_START + RAMP_LENGTH
        down = top + SLOPE_PLATEAU
        up_mask = _span(bx, PLATFORM_START, top, eps)
        heights[up_mask] = grade * (bx[up_mask] - PLATFORM_START)[:, None]
        heights[_span(bx, top, down, eps)] = grade * RAMP_LENGTH
        down_mask = _span(bx, down, down + RAMP_LENGTH, eps)
        heights[down_mask] = grade * (down + RAMP_LENGTH - bx[down_mask])[:, None]
    elif kind is ObstacleKind.TILTED_RAMP:
        grade = math.tan(spec["ramp_angle"])
        center = 0.5 * (m - 1) * cell_size
        heights[_span(bx, TILT_START, TILT_END, eps)] = grade * (ys - center)[None, :]
    elif kind in (ObstacleKind.STAIRS_UP, ObstacleKind.STAIRS_DOWN):
        rise = spec["stairs_height"]
        tread = spec["stairs_length"]
        count = spec.num_treads
        if count * tread > block_length + 1e-9:
            raise ConfigurationError(
                f"{count} treads of {tread} m do not fit in a {block_length} m block"
            )
        ascending = kind is ObstacleKind.STAIRS_UP
        top = count * rise
        heights[:] = 0.0 if ascending else top
        for k in range(count):
            level = (k + 1) * rise if ascending else (count - k - 1) * rise
            heights[_span(bx, k * tread, (k + 1) * tread, eps)] = level
        heights[bx >= count * tread - eps] = top if ascending else 0.0
        targets = SteppingTargets(tuple(s + (k + 0.5) * tread for k in range(count)))
    elif kind is ObstacleKind.HURDLE:
        h = spec["hurdle_height"]
        heights[_span(bx, HURDLE_START, HURDLE_START + HURDLE_THICKNESS, eps)] = h
        obstacles.append(
            VirtualObstacle(
                (s + HURDLE_START, 0.0, 0.0),
                (s + HURDLE_START + HURDLE_THICKNESS, width, h),
                axis=2,
                inward=-1,
            )
        )
    elif kind is ObstacleKind.DISCRETE:
        peak = spec["discrete_height"]
        rng = np.random.default_rng(spec.seed)
        nbx = int(round((DISCRETE_END - DISCRETE_START) / DISCRETE_BLOCK))
        nby = max(int(math.ceil(width / DISCRETE_BLOCK)), 1)
        levels = rng.uniform(0.0, 1.0, size=(nbx, nby))
        levels = peak * levels / levels.max()
        mask = _span(bx, DISCRETE_START, DISCRETE_END, eps)
        ix = np.minimum(
            np.floor((bx[mask] - DISCRETE_START + eps) / DISCRETE_BLOCK).astype(np.intp), nbx - 1
        )
        iy = np.minimum(np.floor((ys + eps) / DISCRETE_BLOCK).astype(np.intp), nby - 1)
        heights[mask] = levels[ix[:, None], iy[None, :]]
    elif kind is ObstacleKind.WAVE:
        amplitude = spec["wave_amplitude"]
        stop = WAVE_START + WAVE_PERIODS * WAVE_PERIOD
        mask = _span(bx, WAVE_START, stop, eps)
        phase = 2.0 * math.pi * (bx[mask] - WAVE_START) / WAVE_PERIOD
        heights[mask] = amplitude * np.sin(phase)[:, None]

    return HeightField(heights, cell_size), obstacles, targets


def apply_fractal_noise(
    field: HeightField,
    amplitude: float,
    octaves: int,
    seed: int,
    wavelength: float = 0.4,
) -> HeightField:
    """Add multi-octave bilinear value noise to a heightfield.

    Octave ``k`` has lattice spacing ``wavelength / 2**k`` and amplitude
    ``amplitude / 2**k``; lattice values are uniform in [-1, 1], so the total
    offset of any node is bounded by the sum of the octave amplitudes. Noise
    lives in grid space: it depends on node indices, not on the origin.
    """
    if amplitude < 0:
        raise DomainError(f"amplitude must be nonnegative, got {amplitude}")
    if octaves < 1:
        raise DomainError(f"octaves must be at least 1, got {octaves}")
    if amplitude == 0:
        return field

    rng = np.random.default_rng(seed)
    n, m = field.length, field.width
    noise = np.zeros((n, m))
    gi = np.arange(n, dtype=np.float64)
    gj = np.arange(m, dtype=np.float64)
    for k in range(octaves):
        spacing = max(wavelength / 2**k / field.cell_size, 1.0)
        lattice = rng.uniform(-1.0, 1.0, size=(int(n / spacing) + 2, int(m / spacing) + 2))
        u = gi / spacing
        v = gj / spacing
        i0 = np.floor(u).astype(np.intp)
        j0 = np.floor(v).astype(np.intp)
        tu = (u - i0)[:, None]
        tv = (v - j0)[None, :]
        a = lattice[i0[:, None], j0[None, :]]
        b = lattice[i0[:, None] + 1, j0[None, :]]
        c = lattice[i0[:, None], j0[None, :] + 1]
        d = lattice[i0[:, None] + 1, j0[None, :] + 1]
        octave = a * (1 - tu) * (1 - tv) + b * tu * (1 - tv) + c * (1 - tu) * tv + d * tu * tv
        noise += amplitude / 2**k * octave
    return field.with_heights(field.heights + noise)


@dataclass(frozen=True)
class TrackCell:
    row: int
    col: int
    spec: ObstacleSpec


@dataclass(frozen=True)
class TrackLayout:
    """Placement of obstacle cells on a rows x cols grid.

    Row ``i`` occupies ``x`` in ``[i, i + 1) * subtrack_length``, column ``j``
    occupies ``y`` in ``[j, j + 1) * subtrack_width``. Grid positions without
    a cell are flat.
    """

    rows: int
    cols: int
    cells: Tuple[TrackCell, ...] = ()
    subtrack_length: float = 4.8
    start_plane_length: float = 1.6
    subtrack_width: float = 1.6

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise InputError(f"layout needs at least one row and column, got {self.rows}x{self.cols}")
        if not 0 < self.start_plane_length < self.subtrack_length:
            raise InputError("starting plane must be shorter than the sub-track")
        object.__setattr__(self, "cells", tuple(self.cells))

    @property
    def track_length(self) -> float:
        return self.rows * self.subtrack_length

    def spec_grid(self) -> List[List[ObstacleSpec]]:
        """Specs by (row, col); raises if two cells claim the same position."""
        grid: List[List[Optional[ObstacleSpec]]] = [[None] * self.cols for _ in range(self.rows)]
        for cell in self.cells:
            if not (0 <= cell.row < self.rows and 0 <= cell.col < self.cols):
                raise InputError(f"cell ({cell.row}, {cell.col}) outside {self.rows}x{self.cols} layout")
            if grid[cell.row][cell.col] is not None:
                raise InputError(f"overlapping cells at ({cell.row}, {cell.col})")
            grid[cell.row][cell.col] = cell.spec
        return [[spec or ObstacleSpec.flat() for spec in row] for row in grid]

    @classmethod
    def training_grid(
        cls,
        rows: int = 10,
        cols: int = 40,
        kinds: Sequence[ObstacleKind] = tuple(ObstacleKind),
        num_treads: int = 5,
        **geometry: float,
    ) -> "TrackLayout":
        """Column ``j`` holds ``kinds[j % len(kinds)]``, row ``i`` difficulty ``i/rows``."""
        cells = []
        for i in range(rows):
            for j in range(cols):
                kind = kinds[j % len(kinds)]
                spec = ObstacleSpec.at_difficulty(
                    kind,
                    interpolate_difficulty(0.0, 1.0, i, rows),
                    num_treads=num_treads,
                    seed=i * cols + j,
                )
                cells.append(TrackCell(i, j, spec))
        return cls(rows, cols, tuple(cells), **geometry)

    @classmethod
    def evaluation_track(
        cls,
        kind: ObstacleKind,
        subtracks: int = 3,
        ranges: Mapping[str, Tuple[float, float]] = TESTING_RANGES,
        num_treads: int = 5,
        **geometry: float,
    ) -> "TrackLayout":
        """Connected sub-tracks of one kind spanning the full range, easy to hard."""
        cells = []
        for i in range(subtracks):
            difficulty = interpolate_difficulty(0.0, 1.0, i, subtracks - 1) if subtracks > 1 else 0.0
            spec = ObstacleSpec.at_difficulty(kind, difficulty, ranges, num_treads=num_treads, seed=i)
            cells.append(TrackCell(i, 0, spec))
        return cls(subtracks, 1, tuple(cells), **geometry)

    @classmethod
    def plane(cls, rows: int = 1, cols: int = 1, **geometry: float) -> "TrackLayout":
        return cls(rows, cols, (), **geometry)


@dataclass(frozen=True)
class Track:
    """An assembled track: stitched heightfield plus per-cell metadata."""

    field: HeightField
    layout: TrackLayout
    obstacles: Mapping[Tuple[int, int], Tuple[VirtualObstacle, ...]] = field(default_factory=dict)
    targets: Mapping[Tuple[int, int], SteppingTargets] = field(default_factory=dict)
    kinds: Mapping[Tuple[int, int], ObstacleKind] = field(default_factory=dict)

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        lay = self.layout
        i = int(np.clip(math.floor((x - self.field.origin[0]) / lay.subtrack_length), 0, lay.rows - 1))
        j = int(np.clip(math.floor((y - self.field.origin[1]) / lay.subtrack_width), 0, lay.cols - 1))
        return i, j

    def cell_origin(self, row: int, col: int) -> Tuple[float, float]:
        return (
            self.field.origin[0] + row * self.layout.subtrack_length,
            self.field.origin[1] + col * self.layout.subtrack_width,
        )

    def spawn_point(self, row: int, col: int) -> Tuple[float, float]:
        """Middle of the starting plane of a cell."""
        x0, y0 = self.cell_origin(row, col)
        return x0 + 0.5 * self.layout.start_plane_length, y0 + 0.5 * self.layout.subtrack_width

    def obstacles_at(self, x: float, y: float) -> Tuple[VirtualObstacle, ...]:
        return tuple(self.obstacles.get(self.cell_of(x, y), ()))

    def targets_at(self, x: float, y: float) -> SteppingTargets:
        return self.targets.get(self.cell_of(x, y), SteppingTargets())


def build_track(
    layout: TrackLayout,
    seed: int,
    cell_size: float = 0.05,
    trench_depth: float = 3.0,
    noise_amplitude: float = 0.0,
    noise_octaves: int = 3,
    noise_wavelength: float = 0.4,
) -> Track:
    """Stitch the cells of ``layout`` and optionally add fractal noise.

    Random cell content (discrete blocks) is seeded from ``(seed, spec.seed)``.
    """
    grid = layout.spec_grid()
    n = int(round(layout.subtrack_length / cell_size))
    m = int(round(layout.subtrack_width / cell_size))
    heights = np.zeros((layout.rows * n, layout.cols * m))
    obstacles: Dict[Tuple[int, int], Tuple[VirtualObstacle, ...]] = {}
    targets: Dict[Tuple[int, int], SteppingTargets] = {}
    kinds: Dict[Tuple[int, int], ObstacleKind] = {}
    for i, row in enumerate(grid):
        for j, spec in enumerate(row):
            if spec.kind is ObstacleKind.DISCRETE:
                spec = replace(spec, seed=int(np.random.SeedSequence([seed, spec.seed]).generate_state(1)[0]))
            cell_field, cell_obstacles, cell_targets = build_obstacle(
                spec,
                cell_size,
                subtrack_length=layout.subtrack_length,
                start_plane_length=layout.start_plane_length,
                width=layout.subtrack_width,
                trench_depth=trench_depth,
            )
            heights[i * n : (i + 1) * n, j * m : (j + 1) * m] = cell_field.heights
            dx, dy = i * layout.subtrack_length, j * layout.subtrack_width
            obstacles[(i, j)] = tuple(o.translated(dx, dy) for o in cell_obstacles)
            targets[(i, j)] = cell_targets.translated(dx)
            kinds[(i, j)] = spec.kind
    field_ = HeightField(heights, cell_size)
    if noise_amplitude > 0:
        field_ = apply_fractal_noise(field_, noise_amplitude, noise_octaves, seed, noise_wavelength)
    logger.debug(
        "assembled %dx%d track, %d x %d nodes", layout.rows, layout.cols, field_.length, field_.width
    )
    return Track(field_, layout, obstacles, targets, kinds)


def assemble_track_grid(layout: TrackLayout, seed: int, cell_size: float = 0.05) -> HeightField:
    """Single stitched heightfield; cell (i, j) holds the row-i, column-j obstacle."""
    return build_track(layout, seed, cell_size).field


def write_hfield(path: Union[str, Path], field: HeightField) -> None:
    """Portable ASCII grid: one header line, then one line of heights per x node."""
    header = (
        f"{HFIELD_MAGIC} {HFIELD_VERSION} {field.width} {field.length} "
        f"{field.cell_size!r} {field.origin[0]!r} {field.origin[1]!r}"
    )
    lines = [header]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in field.heights)
    Path(path).write_text("\n".join(lines) + "\n")


def read_hfield(path: Union[str, Path]) -> HeightField:
    text = Path(path).read_text().split("\n")
    header = text[0].split()
    if len(header) != 7 or header[0] != HFIELD_MAGIC or header[1] != HFIELD_VERSION:
        raise DataCorruptionError(f"{path} is not an {HFIELD_MAGIC} {HFIELD_VERSION} file")
    width, length = int(header[2]), int(header[3])
    rows = [line for line in text[1:] if line.strip()]
    if len(rows) != length:
        raise DataCorruptionError(f"{path}: expected {length} rows, found {len(rows)}")
    try:
        heights = np.array([[float(v) for v in row.split()] for row in rows])
    except ValueError as err:
        raise DataCorruptionError(f"{path}: malformed height value") from err
    if heights.shape != (length, width):
        raise DataCorruptionError(f"{path}: expected {length}x{width} values, found {heights.shape}")
    return HeightField(heights, float(header[4]), (float(header[5]), float(header[6])))


def dump_png(path: Union[str, Path], field: HeightField) -> None:
    """16-bit grayscale image of the heights, min-max normalized, x down the rows."""
    h = field.heights
    span = float(h.max() - h.min())
    scaled = (h - h.min()) / span if span > 0 else np.zeros_like(h)
    image = np.round(scaled * 65535).astype(np.uint16)
    Image.fromarray(image, mode="I;16").save(path)
