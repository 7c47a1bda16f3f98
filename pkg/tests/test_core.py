import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tempoguard.core import Frame, as_cloud, downsample, downsample_with_members, empty_cloud, voxelize
from tempoguard.errors import InvalidArgumentError

finite = st.floats(min_value=-100.0, max_value=100.0, allow_nan=False, allow_infinity=False)
clouds = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=finite)


def test_as_cloud_accepts_lists_and_normalizes_dtype():
    out = as_cloud([[1, 2, 3], [4, 5, 6]])
    assert out.dtype == np.float64 and out.shape == (2, 3)


def test_as_cloud_empty_inputs_become_empty_cloud():
    assert as_cloud([]).shape == (0, 3)
    assert empty_cloud().shape == (0, 3)


@pytest.mark.parametrize("bad", [[[1.0, 2.0]], np.zeros((2, 4)), np.zeros(5)])
def test_as_cloud_rejects_wrong_shapes(bad):
    with pytest.raises(InvalidArgumentError):
        as_cloud(bad)


def test_as_cloud_rejects_non_finite():
    with pytest.raises(InvalidArgumentError):
        as_cloud([[0.0, np.nan, 0.0]])
    with pytest.raises(InvalidArgumentError):
        as_cloud([[np.inf, 0.0, 0.0]])


def test_frame_validation():
    with pytest.raises(InvalidArgumentError):
        Frame(index=-1, timestamp=0.0, points=empty_cloud())
    with pytest.raises(InvalidArgumentError):
        Frame(index=0, timestamp=np.nan, points=empty_cloud())


def test_voxelize_rejects_nonpositive_side():
    with pytest.raises(InvalidArgumentError):
        voxelize(np.zeros((1, 3)), 0.0)


def test_voxelize_partitions_all_indices():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-5, 5, (200, 3))
    grid = voxelize(pts, 0.7)
    all_idx = np.sort(np.concatenate(list(grid.cells.values())))
    assert np.array_equal(all_idx, np.arange(200))


def test_voxelize_boundary_point_goes_to_higher_voxel():
    # A point exactly on a voxel boundary belongs to the higher-index voxel.
    grid = voxelize(np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), 0.5, origin=np.zeros(3))
    assert (2, 0, 0) in grid.cells and (0, 0, 0) in grid.cells


def test_voxelize_shared_origin_aligns_grids():
    a = np.array([[0.1, 0.1, 0.1]])
    b = np.array([[0.12, 0.11, 0.13], [3.0, 3.0, 3.0]])
    origin = np.zeros(3)
    ga = voxelize(a, 0.5, origin)
    gb = voxelize(b, 0.5, origin)
    assert set(ga.cells) <= set(gb.cells)


@given(cloud=clouds, side=st.floats(min_value=0.05, max_value=5.0))
@settings(max_examples=60, deadline=None)
def test_downsample_properties(cloud, side):
    out = downsample(cloud, side)
    # Never grows, and every centroid lies inside the input's bounding box.
    assert len(out) <= len(cloud)
    assert np.all(out.min(axis=0) >= cloud.min(axis=0) - 1e-9)
    assert np.all(out.max(axis=0) <= cloud.max(axis=0) + 1e-9)


def test_downsample_is_identity_for_isolated_points():
    pts = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0, 10.0, 0.0]])
    out = downsample(pts, 0.5)
    assert np.allclose(np.sort(out, axis=0), np.sort(pts, axis=0))


def test_downsample_merges_to_centroid():
    pts = np.array([[0.0, 0.0, 0.0], [0.2, 0.0, 0.0]])
    out = downsample(pts, 1.0, origin=np.zeros(3))
    assert out.shape == (1, 3)
    assert np.allclose(out[0], [0.1, 0.0, 0.0])


def test_downsample_with_members_covers_input():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-2, 2, (100, 3))
    out, members = downsample_with_members(pts, 0.6)
    assert len(out) == len(members)
    assert np.array_equal(np.sort(np.concatenate(members)), np.arange(100))
    for centroid, idx in zip(out, members):
        assert np.allclose(centroid, pts[idx].mean(axis=0))
