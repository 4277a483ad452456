"""Global 2.5D elevation map with robot-centric local extraction.

The global grid is a fixed-size rolling window (default 20 m x 20 m at
0.05 m) that follows the robot in whole-cell shifts, so cell identity is
exact across re-anchoring. Each cell holds a scalar height fused by a 1D
Kalman update whose measurement variance grows with range. Cells written
by a virtual edit are pinned: scans never overwrite them, which is what
lets an operator paint a trench onto flat ground.

Writers mutate fresh copies and swap a single state reference, so readers
(local extraction, exports) always see a complete scan, never half of one.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .geometry import Pose, quat_to_matrix, quat_yaw
from .sensors import LidarScan

MAX_POSE_SCAN_DESYNC_S = 0.100
HEIGHT_BOUND = 5.0  # valid cell heights live in [-5, 5] m
EDIT_VARIANCE = 1e-6


class EditMode(Enum):
    OVERRIDE = "override"


@dataclass(frozen=True)
class VirtualEdit:
    """Axis-aligned world rectangle forced to a fixed height."""

    region: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    height: float
    mode: EditMode = EditMode.OVERRIDE

    def __post_init__(self):
        xmin, ymin, xmax, ymax = self.region
        if not (xmax > xmin and ymax > ymin):
            raise ValueError("edit region area must be positive")
        if not (-HEIGHT_BOUND <= self.height <= HEIGHT_BOUND):
            raise ValueError(f"edit height outside [-{HEIGHT_BOUND}, {HEIGHT_BOUND}]")


@dataclass(frozen=True)
class LocalMapSpec:
    """Yaw-aligned sampling rectangle for e_t. Sample counts are
    fencepost-inclusive: 1.6 x 1.0 at 0.1 gives 17 x 11 = 187."""

    length_x: float = 1.6
    length_y: float = 1.0
    resolution: float = 0.1

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        for name in ("length_x", "length_y"):
            ratio = getattr(self, name) / self.resolution
            if abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"{name} must be an integer multiple of resolution")

    @property
    def samples_x(self) -> int:
        return round(self.length_x / self.resolution) + 1

    @property
    def samples_y(self) -> int:
        return round(self.length_y / self.resolution) + 1


@dataclass(frozen=True, eq=False)
class LocalMap:
    """Heights relative to body z on the yaw-aligned grid.

    xs/ys are the sample offsets in the yaw-aligned body frame; the grid
    leads 2/3 forward of the body origin. fill_ratio is the fraction of
    samples that had no map data and received the fill value (0 relative).
    """

    heights: np.ndarray  # (samples_x, samples_y)
    xs: np.ndarray
    ys: np.ndarray
    resolution: float
    fill_ratio: float
    timestamp_ns: int

    def to_points(self) -> np.ndarray:
        """Flatten to (n, 3) body-frame points for plane fitting."""
        gx, gy = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel(), self.heights.ravel()])


@dataclass(frozen=True, eq=False)
class MapSnapshot:
    heights: np.ndarray
    variance: np.ndarray
    valid: np.ndarray
    pinned: np.ndarray
    last_update_ns: np.ndarray
    origin: np.ndarray  # world x-y of cell (0, 0)
    resolution: float


class ElevationMap:
    """Rolling global elevation grid; one writer, many snapshot readers."""

    def __init__(self, size: float = 20.0, resolution: float = 0.05,
                 center: tuple[float, float] = (0.0, 0.0)):
        if size <= 0 or resolution <= 0:
            raise ValueError("size and resolution must be positive")
        n = round(size / resolution)
        if abs(size / resolution - n) > 1e-9:
            raise ValueError("size must be an integer multiple of resolution")
        self.cells = n
        self.resolution = float(resolution)
        extent = (n - 1) * self.resolution
        origin = np.array([center[0] - extent / 2, center[1] - extent / 2])
        self._state = MapSnapshot(
            heights=np.zeros((n, n)),
            variance=np.full((n, n), np.inf),
            valid=np.zeros((n, n), dtype=bool),
            pinned=np.zeros((n, n), dtype=bool),
            last_update_ns=np.zeros((n, n), dtype=np.int64),
            origin=origin,
            resolution=self.resolution,
        )

    def snapshot(self) -> MapSnapshot:
        st = self._state
        return MapSnapshot(st.heights.copy(), st.variance.copy(), st.valid.copy(),
                           st.pinned.copy(), st.last_update_ns.copy(),
                           st.origin.copy(), st.resolution)

    @property
    def origin(self) -> np.ndarray:
        return self._state.origin.copy()

    def _cell_index(self, st: MapSnapshot, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        # cells are nodes at origin + index * resolution; nearest-node binning.
        # floor(u + 0.5), not rint: round-half-even would flip exact-tie
        # assignment whenever the origin shifts by an odd cell count
        idx = np.floor((xy - st.origin) / st.resolution + 0.5).astype(np.int64)
        ok = ((idx[:, 0] >= 0) & (idx[:, 0] < self.cells)
              & (idx[:, 1] >= 0) & (idx[:, 1] < self.cells))
        return idx[:, 0], idx[:, 1], ok

    def height_at(self, x: float, y: float) -> float | None:
        """Height of the cell containing (x, y), or None if unknown."""
        st = self._state
        ix, iy, ok = self._cell_index(st, np.array([[x, y]], dtype=float))
        if not ok[0] or not st.valid[ix[0], iy[0]]:
            return None
        return float(st.heights[ix[0], iy[0]])

    def recenter(self, center_xy) -> tuple[int, int]:
        """Shift the window so it is centered on center_xy, in whole cells.
        Newly exposed cells start unknown; nothing is resampled."""
        st = self._state
        extent = (self.cells - 1) * self.resolution
        desired = np.asarray(center_xy, dtype=float) - extent / 2
        shift = np.rint((desired - st.origin) / self.resolution).astype(int)
        kx, ky = int(shift[0]), int(shift[1])
        if kx == 0 and ky == 0:
            return (0, 0)

        def moved(arr, fill):
            out = np.full_like(arr, fill)
            n = self.cells
            sx0, sx1 = max(kx, 0), min(n + kx, n)
            dx0, dx1 = max(-kx, 0), max(-kx, 0) + (min(n + kx, n) - max(kx, 0))
            sy0, sy1 = max(ky, 0), min(n + ky, n)
            dy0, dy1 = max(-ky, 0), max(-ky, 0) + (min(n + ky, n) - max(ky, 0))
            if sx1 > sx0 and sy1 > sy0:
                out[dx0:dx1, dy0:dy1] = arr[sx0:sx1, sy0:sy1]
            return out

        self._state = MapSnapshot(
            heights=moved(st.heights, 0.0),
            variance=moved(st.variance, np.inf),
            valid=moved(st.valid, False),
            pinned=moved(st.pinned, False),
            last_update_ns=moved(st.last_update_ns, 0),
            origin=st.origin + shift * self.resolution,
            resolution=st.resolution,
        )
        return (kx, ky)

    def integrate_scan(self, scan: LidarScan, pose: Pose) -> int:
        """Fuse one scan taken at `pose` into the grid; returns cells touched.

        Points are per-cell aggregated (inverse-variance weighted mean)
        before the scalar Kalman update, so the result does not depend on
        point order within the scan.
        """
        desync = abs(pose.timestamp_ns - scan.timestamp_ns) * 1e-9
        if desync > MAX_POSE_SCAN_DESYNC_S:
            raise ValueError("pose-scan desync")
        if scan.points.shape[0] == 0:
            return 0

        st = self._state
        rot = quat_to_matrix(pose.orientation)
        world = scan.points @ rot.T + pose.position
        ranges = np.linalg.norm(scan.points, axis=1)
        meas_var = (0.01 + 0.001 * ranges) ** 2

        keep = np.abs(world[:, 2]) <= HEIGHT_BOUND
        world, meas_var = world[keep], meas_var[keep]
        ix, iy, ok = self._cell_index(st, world[:, :2])
        ix, iy = ix[ok], iy[ok]
        z, mv = world[ok, 2], meas_var[ok]
        if z.size == 0:
            return 0

        flat = ix * self.cells + iy
        w = 1.0 / mv
        nbins = self.cells * self.cells
        sw = np.bincount(flat, weights=w, minlength=nbins)
        swz = np.bincount(flat, weights=w * z, minlength=nbins)
        touched = np.flatnonzero(sw > 0)
        z_cell = swz[touched] / sw[touched]
        var_cell = 1.0 / sw[touched]
        tix, tiy = touched // self.cells, touched % self.cells

        pinned = st.pinned[tix, tiy]
        tix, tiy = tix[~pinned], tiy[~pinned]
        z_cell, var_cell = z_cell[~pinned], var_cell[~pinned]
        if tix.size == 0:
            return 0

        heights = st.heights.copy()
        variance = st.variance.copy()
        valid = st.valid.copy()
        last = st.last_update_ns.copy()

        seen = valid[tix, tiy]
        # fresh cells take the measurement directly
        heights[tix[~seen], tiy[~seen]] = z_cell[~seen]
        variance[tix[~seen], tiy[~seen]] = var_cell[~seen]
        # seen cells fuse: k = P / (P + R)
        p = variance[tix[seen], tiy[seen]]
        k = p / (p + var_cell[seen])
        heights[tix[seen], tiy[seen]] += k * (z_cell[seen] - heights[tix[seen], tiy[seen]])
        variance[tix[seen], tiy[seen]] = (1.0 - k) * p
        valid[tix, tiy] = True
        last[tix, tiy] = scan.timestamp_ns

        self._state = replace(st, heights=heights, variance=variance,
                              valid=valid, last_update_ns=last)
        return int(tix.size)

    def apply_edit(self, edit: VirtualEdit) -> int:
        """Pin every cell in the edit rectangle to the edit height."""
        st = self._state
        xmin, ymin, xmax, ymax = edit.region
        # half-open on cell nodes: an L/res-wide edit affects exactly L/res cells
        ix0 = int(math.ceil((xmin - st.origin[0]) / st.resolution - 1e-9))
        ix1 = int(math.ceil((xmax - st.origin[0]) / st.resolution - 1e-9))
        iy0 = int(math.ceil((ymin - st.origin[1]) / st.resolution - 1e-9))
        iy1 = int(math.ceil((ymax - st.origin[1]) / st.resolution - 1e-9))
        ix0, iy0 = max(ix0, 0), max(iy0, 0)
        ix1, iy1 = min(ix1, self.cells), min(iy1, self.cells)
        if ix1 <= ix0 or iy1 <= iy0:
            raise ValueError("edit outside map")

        heights = st.heights.copy()
        variance = st.variance.copy()
        valid = st.valid.copy()
        pinned = st.pinned.copy()
        heights[ix0:ix1, iy0:iy1] = edit.height
        variance[ix0:ix1, iy0:iy1] = EDIT_VARIANCE
        valid[ix0:ix1, iy0:iy1] = True
        pinned[ix0:ix1, iy0:iy1] = True
        self._state = replace(st, heights=heights, variance=variance,
                              valid=valid, pinned=pinned)
        return (ix1 - ix0) * (iy1 - iy0)

    def extract_local(self, pose: Pose, spec: LocalMapSpec | None = None) -> LocalMap:
        """Sample e_t around the body: yaw-aligned, leading 2/3 forward,
        heights relative to body z. Unknown samples fill with 0 relative."""
        spec = spec or LocalMapSpec()
        st = self._state  # single read: consistent snapshot
        xs = -spec.length_x / 3 + spec.resolution * np.arange(spec.samples_x)
        ys = -spec.length_y / 2 + spec.resolution * np.arange(spec.samples_y)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        yaw = quat_yaw(pose.orientation)
        c, s = math.cos(yaw), math.sin(yaw)
        wx = pose.position[0] + c * gx - s * gy
        wy = pose.position[1] + s * gx + c * gy
        pts = np.column_stack([wx.ravel(), wy.ravel()])
        ix, iy, ok = self._cell_index(st, pts)
        known = np.zeros(len(pts), dtype=bool)
        known[ok] = st.valid[ix[ok], iy[ok]]
        rel = np.zeros(len(pts))
        rel[known] = st.heights[ix[known], iy[known]] - pose.position[2]
        heights = rel.reshape(spec.samples_x, spec.samples_y)
        fill_ratio = 1.0 - known.sum() / known.size
        return LocalMap(heights=heights, xs=xs, ys=ys, resolution=spec.resolution,
                        fill_ratio=float(fill_ratio), timestamp_ns=pose.timestamp_ns)


def edit_heightfield(hf, edit: VirtualEdit):
    """Apply a virtual edit to a plain heightfield; returns (edited, count).

    Same half-open node selection as the live map, so an L x W rectangle
    on an r grid affects exactly (L/r) * (W/r) cells. Idempotent."""
    xmin, ymin, xmax, ymax = edit.region
    ix0 = int(math.ceil((xmin - hf.origin[0]) / hf.resolution - 1e-9))
    ix1 = int(math.ceil((xmax - hf.origin[0]) / hf.resolution - 1e-9))
    iy0 = int(math.ceil((ymin - hf.origin[1]) / hf.resolution - 1e-9))
    iy1 = int(math.ceil((ymax - hf.origin[1]) / hf.resolution - 1e-9))
    ix0, iy0 = max(ix0, 0), max(iy0, 0)
    ix1, iy1 = min(ix1, hf.width), min(iy1, hf.height)
    if ix1 <= ix0 or iy1 <= iy0:
        raise ValueError("edit outside map")
    heights = hf.heights.copy()
    heights[ix0:ix1, iy0:iy1] = edit.height
    edited = dataclasses.replace(hf, heights=heights)
    return edited, (ix1 - ix0) * (iy1 - iy0)


def inject_map_noise(local: LocalMap, ratio: float,
                     magnitude_range: tuple[float, float] = (-1.0, 2.0),
                     seed: int = 0) -> LocalMap:
    """Perturb exactly floor(ratio * cells) samples by uniform draws from
    magnitude_range. Models the elevation-map corruption used to harden
    policies against mapping artifacts."""
    if not 0.0 <= ratio <= 0.1:
        raise ValueError("noise ratio outside [0, 0.1]")
    lo, hi = magnitude_range
    if hi < lo:
        raise ValueError("bad magnitude range")
    cells = local.heights.size
    count = int(ratio * cells)
    if count == 0:
        return local
    rng = np.random.default_rng(seed)
    picks = rng.choice(cells, size=count, replace=False)
    heights = local.heights.copy()
    flat = heights.ravel()
    flat[picks] += rng.uniform(lo, hi, size=count)
    return replace(local, heights=heights)
