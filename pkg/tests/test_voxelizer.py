import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from segt.errors import ConfigError, ContractError, IngestionError
from segt.voxelizer import (DEFAULT_GRID, GridSpec, PointCloud, VoxelSet, read_points,
                            read_points_bin, read_points_csv, voxelize)

UNIT4 = GridSpec((0, 0, 0), (4, 4, 4), (1, 1, 1))


def test_two_points_one_voxel():
    cloud = PointCloud([[0.2, 0.2, 0.1, 0.4], [0.7, 0.9, 0.3, 0.6]])
    vs = voxelize(cloud, UNIT4)
    assert len(vs) == 1 and vs.channel_count == 4
    assert vs.coords.tolist() == [[0, 0, 0]]
    assert vs.features[0] == pytest.approx([0.45, 0.55, 0.2, 0.5], abs=1e-15)
    assert vs.counts.tolist() == [2]


def test_out_of_range_dropped_and_empty():
    vs = voxelize(PointCloud([[-0.1, 1.0, 1.0]]), UNIT4)
    assert len(vs) == 0 and vs.features.shape == (0, 3)
    assert len(voxelize(PointCloud(np.zeros((0, 4))), UNIT4)) == 0


def test_half_open_range():
    vs = voxelize(PointCloud([[0.0, 0.0, 0.0], [4.0, 1.0, 1.0], [3.999, 3.999, 3.999]]), UNIT4)
    assert vs.coords.tolist() == [[0, 0, 0], [3, 3, 3]]


def test_default_grid_dims():
    assert DEFAULT_GRID.dims == (384, 384, 1)


def test_dims_use_ceil():
    assert GridSpec((0, 0, 0), (1.0, 2.5, 3), (0.3, 1, 1)).dims == (4, 3, 3)


@pytest.mark.parametrize("kw", [
    dict(range_min=(0, 0, 0), range_max=(0, 1, 1), voxel_size=(1, 1, 1)),
    dict(range_min=(0, 0, 0), range_max=(1, 1, 1), voxel_size=(1, 0, 1)),
    dict(range_min=(0, 0, 0), range_max=(1, 1, float("inf")), voxel_size=(1, 1, 1)),
])
def test_invalid_grid(kw):
    with pytest.raises(ConfigError):
        GridSpec(**kw)


def test_non_finite_point_named():
    with pytest.raises(IngestionError) as err:
        PointCloud([[0, 0, 0], [1, 1, 1], [np.nan, 0, 0]])
    assert err.value.index == 2
    assert "point 2" in str(err.value)


def test_output_sorted_zyx():
    pts = [[3.5, 0.5, 0.5], [0.5, 2.5, 0.5], [0.5, 0.5, 1.5], [1.5, 0.5, 0.5]]
    vs = voxelize(PointCloud(pts), UNIT4)
    assert vs.coords.tolist() == [[1, 0, 0], [3, 0, 0], [0, 2, 0], [0, 0, 1]]


def test_voxelset_invariants():
    with pytest.raises(ContractError):
        VoxelSet(np.zeros((2, 3)), np.zeros((1, 3)), UNIT4)
    with pytest.raises(ContractError):
        VoxelSet(np.zeros((1, 3)), [[4, 0, 0]], UNIT4)
    dup = VoxelSet(np.zeros((2, 3)), [[1, 1, 1], [1, 1, 1]], UNIT4)
    with pytest.raises(ContractError):
        dup.check_unique()


clouds = st.lists(
    st.tuples(*[st.integers(-2, 9)] * 3, st.integers(-100, 100)), min_size=0, max_size=80
)


def _cloud(rows, scale=0.5):
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    arr[:, :3] *= scale
    return PointCloud(arr)


@settings(max_examples=80, deadline=None)
@given(rows=clouds, seed=st.integers(0, 2**32 - 1))
def test_permutation_invariant_bitwise(rows, seed):
    cloud = _cloud(rows)
    perm = np.random.default_rng(seed).permutation(len(cloud))
    a = voxelize(cloud, UNIT4)
    b = voxelize(PointCloud(cloud.points[perm]), UNIT4)
    assert np.array_equal(a.coords, b.coords)
    assert a.features.tobytes() == b.features.tobytes()


@settings(max_examples=80, deadline=None)
@given(rows=clouds)
def test_partition_and_mass(rows):
    cloud = _cloud(rows)
    vs = voxelize(cloud, UNIT4)
    xyz = cloud.points[:, :3]
    kept = cloud.points[((xyz >= 0) & (xyz < 4)).all(axis=1)]
    assert vs.counts.sum() == len(kept)
    assert len(np.unique(vs.coords, axis=0)) == len(vs)
    # inputs are multiples of 0.5; exact whenever the per-voxel count is a power of two
    pow2 = (vs.counts & (vs.counts - 1)) == 0
    recon = vs.features * vs.counts[:, None]
    for j in range(4):
        assert math.fsum(recon[:, j]) == pytest.approx(math.fsum(kept[:, j]), rel=1e-14, abs=1e-12)
    if pow2.all():
        for j in range(4):
            assert math.fsum(recon[:, j]) == math.fsum(kept[:, j])


def test_mass_exact_for_power_of_two_counts():
    rng = np.random.default_rng(0)
    centers = rng.integers(0, 4, (20, 3))
    reps = rng.choice([1, 2, 4, 8], size=20)
    pts = np.repeat(centers, reps, axis=0) + 0.5
    pts = np.c_[pts, rng.integers(-50, 50, (len(pts), 2))].astype(float)
    vs = voxelize(PointCloud(pts), UNIT4)
    np.testing.assert_array_equal((vs.features * vs.counts[:, None]).sum(axis=0), pts.sum(axis=0))


def test_read_bin_and_csv(tmp_path):
    pts = np.array([[0.25, 0.5, 0.75, 1.0, 2.0], [1.5, 1.5, 1.5, 3.0, 4.0]], dtype="<f4")
    (tmp_path / "p.bin").write_bytes(pts.tobytes())
    cloud = read_points_bin(tmp_path / "p.bin", stride=5)
    np.testing.assert_array_equal(cloud.points, pts.astype(float))
    assert cloud.extra_count == 2
    (tmp_path / "p.csv").write_text("x,y,z,intensity\n0.25,0.5,0.75,1\n\n1.5,1.5,1.5,3\n")
    csv_cloud = read_points(tmp_path / "p.csv")
    np.testing.assert_array_equal(csv_cloud.points, pts[:, :4].astype(float))


def test_bin_stride_errors(tmp_path):
    (tmp_path / "p.bin").write_bytes(np.zeros(7, "<f4").tobytes())
    with pytest.raises(ConfigError):
        read_points_bin(tmp_path / "p.bin", stride=5)
    with pytest.raises(ConfigError):
        read_points_bin(tmp_path / "p.bin", stride=2)
    (tmp_path / "e.bin").write_bytes(b"")
    assert len(read_points_bin(tmp_path / "e.bin")) == 0


def test_csv_errors(tmp_path):
    (tmp_path / "a.csv").write_text("a,b,c\n1,2,3\n")
    with pytest.raises(IngestionError):
        read_points_csv(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text("x,y,z\n1,2,3\n1,inf,3\n")
    with pytest.raises(IngestionError) as err:
        read_points_csv(tmp_path / "b.csv")
    assert err.value.index == 1
    (tmp_path / "c.csv").write_text("x,y,z\n1,2\n")
    with pytest.raises(IngestionError):
        read_points_csv(tmp_path / "c.csv")
