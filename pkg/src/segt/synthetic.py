"""Seeded random voxel sets for benchmarks, self-checks and demos."""

import numpy as np

from .voxelizer import GridSpec, VoxelSet


def random_voxels(n: int, grid: GridSpec, channels: int, seed: int = 0) -> VoxelSet:
    """``n`` distinct occupied cells drawn uniformly, features ~ N(0, 1)."""
    nx, ny, nz = grid.dims
    total = nx * ny * nz
    if n > total:
        raise ValueError(f"cannot place {n} distinct voxels in {total} cells")
    rng = np.random.Generator(np.random.Philox(seed))
    lin = np.sort(rng.choice(total, size=n, replace=False))
    coords = np.stack([lin % nx, (lin // nx) % ny, lin // (nx * ny)], axis=1).astype(np.int64)
    feats = rng.standard_normal((n, channels))
    return VoxelSet(feats, coords, grid)


def shuffled(vs: VoxelSet, seed: int = 1) -> VoxelSet:
    perm = np.random.Generator(np.random.Philox(seed)).permutation(len(vs))
    return VoxelSet(vs.features[perm], vs.coords[perm], vs.grid)
