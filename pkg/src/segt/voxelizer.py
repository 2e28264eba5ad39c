"""Dynamic voxelization: mean-pool point attributes into occupied voxels."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, IngestionError


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned detection volume split into equal voxels.

    ``dims`` is derived as ``ceil((range_max - range_min) / voxel_size)`` per
    axis and is not passed in.
    """

    range_min: tuple[float, float, float]
    range_max: tuple[float, float, float]
    voxel_size: tuple[float, float, float]
    dims: tuple[int, int, int] = field(init=False)

    def __post_init__(self):
        lo = tuple(float(v) for v in self.range_min)
        hi = tuple(float(v) for v in self.range_max)
        vs = tuple(float(v) for v in self.voxel_size)
        if not (len(lo) == len(hi) == len(vs) == 3):
            raise ConfigError("grid vectors must have three components")
        if not all(math.isfinite(v) for v in lo + hi + vs):
            raise ConfigError("grid vectors must be finite")
        if any(h <= l for l, h in zip(lo, hi)):
            raise ConfigError("range_max must exceed range_min on every axis", key="range_max")
        if any(v <= 0 for v in vs):
            raise ConfigError("voxel_size must be positive on every axis", key="voxel_size")
        dims = tuple(int(math.ceil((h - l) / v)) for l, h, v in zip(lo, hi, vs))
        object.__setattr__(self, "range_min", lo)
        object.__setattr__(self, "range_max", hi)
        object.__setattr__(self, "voxel_size", vs)
        object.__setattr__(self, "dims", dims)

    @classmethod
    def index_space(cls, dims) -> "GridSpec":
        """Unit voxels starting at the origin; for data that only carries dims."""
        dims = tuple(int(d) for d in dims)
        return cls((0.0, 0.0, 0.0), tuple(float(d) for d in dims), (1.0, 1.0, 1.0))


DEFAULT_GRID = GridSpec((-54.0, -54.0, -5.0), (54.0, 54.0, 3.0), (0.28125, 0.28125, 8.0))


@dataclass
class PointCloud:
    """LiDAR returns as an ``(M, 3 + extra_count)`` float64 array.

    Columns are x, y, z in meters followed by the per-point extras
    (intensity, sweep time, ...).
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1 and pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] < 3:
            raise IngestionError(f"points must be an (M, >=3) array, got shape {pts.shape}")
        bad = ~np.isfinite(pts[:, :3]).all(axis=1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise IngestionError(f"point {i} has a non-finite coordinate", index=i)
        self.points = pts

    @property
    def extra_count(self) -> int:
        return self.points.shape[1] - 3

    def __len__(self):
        return self.points.shape[0]


@dataclass
class VoxelSet:
    """Occupied voxels: features ``(N, C)`` paired row-wise with coords ``(N, 3)``.

    ``counts`` holds the number of points pooled into each voxel when the set
    came from :func:`voxelize`; it is ``None`` otherwise.
    """

    features: np.ndarray
    coords: np.ndarray
    grid: GridSpec
    counts: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        if self.features.ndim != 2:
            raise ContractError("features must be two-dimensional")
        if self.features.shape[0] != self.coords.shape[0]:
            raise ContractError(
                f"{self.features.shape[0]} feature rows but {self.coords.shape[0]} coords"
            )
        if len(self.coords) and (
            (self.coords < 0).any() or (self.coords >= np.array(self.grid.dims)).any()
        ):
            raise ContractError("coords fall outside the grid")

    @property
    def channel_count(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return self.coords.shape[0]

    def check_unique(self):
        if len(np.unique(linear_index(self.coords, self.grid.dims))) != len(self):
            raise ContractError("voxel coords are not pairwise distinct")

    def with_features(self, features) -> "VoxelSet":
        return VoxelSet(features, self.coords, self.grid, self.counts)


def linear_index(coords, dims):
    """(z, y, x)-major linear index, so sorting it sorts by z, then y, then x."""
    coords = np.asarray(coords, dtype=np.int64)
    nx, ny, _ = dims
    return (coords[:, 2] * ny + coords[:, 1]) * nx + coords[:, 0]


def voxelize(cloud: PointCloud, grid: GridSpec) -> VoxelSet:
    """Mean-pool ``(x, y, z, extras...)`` of every point into its voxel.

    Points outside ``[range_min, range_max)`` are dropped.  Rows come out
    sorted by (z, y, x).  Within a voxel the points are summed in a canonical
    order (by attribute values), so the result is bitwise independent of the
    order of the input points.
    """
    pts = cloud.points
    ch = pts.shape[1]
    lo = np.array(grid.range_min)
    hi = np.array(grid.range_max)
    dims = np.array(grid.dims)
    xyz = pts[:, :3]
    idx = np.floor((xyz - lo) / np.array(grid.voxel_size)).astype(np.int64)
    keep = ((xyz >= lo) & (xyz < hi) & (idx >= 0) & (idx < dims)).all(axis=1)
    pts, idx = pts[keep], idx[keep]
    if len(pts) == 0:
        return VoxelSet(
            np.zeros((0, ch)), np.zeros((0, 3), np.int64), grid, np.zeros(0, np.int64)
        )

    lin = linear_index(idx, grid.dims)
    # last key is primary for lexsort
    perm = np.lexsort(tuple(pts[:, j] for j in range(ch - 1, -1, -1)) + (lin,))
    lin, pts = lin[perm], pts[perm]
    starts = np.flatnonzero(np.r_[True, lin[1:] != lin[:-1]])
    counts = np.diff(np.r_[starts, len(lin)])
    sums = np.add.reduceat(pts, starts, axis=0)
    feats = sums / counts[:, None]
    coords = idx[perm][starts]
    return VoxelSet(feats, coords, grid, counts)


def read_points_bin(path, stride: int = 5) -> PointCloud:
    """Flat little-endian float32 file, ``stride`` values per point, xyz first."""
    if stride < 3:
        raise ConfigError(f"stride must be at least 3 (x, y, z), got {stride}", key="stride")
    raw = Path(path).read_bytes()
    if len(raw) % (4 * stride):
        raise ConfigError(
            f"{path}: {len(raw)} bytes is not a whole number of {stride}-float points",
            key="stride",
        )
    arr = np.frombuffer(raw, dtype="<f4").reshape(-1, stride)
    return PointCloud(arr.astype(np.float64))


def read_points_csv(path) -> PointCloud:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return PointCloud(np.zeros((0, 3)))
    header = [h.strip().lower() for h in rows[0]]
    if header[:3] != ["x", "y", "z"]:
        raise IngestionError(f"{path}: header must start with x,y,z, got {rows[0]}")
    body = [r for r in rows[1:] if r and any(c.strip() for c in r)]
    out = np.zeros((len(body), len(header)))
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise IngestionError(f"{path}: point {i} has {len(r)} fields, expected {len(header)}", index=i)
        try:
            out[i] = [float(c) for c in r]
        except ValueError:
            raise IngestionError(f"{path}: point {i} is not numeric", index=i) from None
    return PointCloud(out)


def read_points(path, stride: int = 5) -> PointCloud:
    if str(path).lower().endswith(".csv"):
        return read_points_csv(path)
    return read_points_bin(path, stride)
