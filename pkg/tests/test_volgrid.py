import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbfuse.errors import GeometryMismatch, SingularMap
from cbfuse.volgrid import (AffineMap, Grid, LabelVolume, Volume, crop, downscale,
                            resample_affine, resample_displacement, sample_points,
                            trilinear_sample)

from conftest import smooth_volume


def test_volume_rejects_non_finite():
    data = np.zeros((2, 2, 2))
    data[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        Volume(data)


def test_volume_is_read_only():
    v = Volume(np.zeros((2, 3, 4)))
    assert v.dims == (4, 3, 2)
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1


def test_label_channels():
    lab = LabelVolume(np.array([[[0, 1, 2]]], dtype=np.uint8))
    ch = lab.channels()
    assert ch.shape == (2, 1, 1, 3)
    np.testing.assert_array_equal(ch[0, 0, 0], [0, 1, 1])
    np.testing.assert_array_equal(ch[1, 0, 0], [0, 0, 1])
    with pytest.raises(ValueError):
        LabelVolume(np.full((1, 1, 1), 3, dtype=np.uint8))


def test_constant_volume_samples_constant(rng):
    v = Volume(np.full((5, 6, 7), 0.37))
    pts = v.grid.to_world(rng.uniform(0, 1, (200, 3)) * (np.array(v.dims) - 1))
    np.testing.assert_allclose(sample_points(v, pts), 0.37, rtol=0, atol=1e-6)


def test_cell_center_of_corner_cube():
    v = Volume(np.arange(8, dtype=np.float32).reshape(2, 2, 2))
    assert trilinear_sample(v, (0.5, 0.5, 0.5)) == pytest.approx(3.5, abs=1e-12)


def test_voxel_centers_exact(rng):
    v = smooth_volume()
    got = sample_points(v, v.grid.world_points()).reshape(v.data.shape)
    np.testing.assert_array_equal(got.astype(np.float32), v.data)


def test_outside_reads_zero():
    v = Volume(np.ones((3, 3, 3)))
    assert trilinear_sample(v, (-5.0, 1.0, 1.0)) == 0.0
    # half a voxel outside: half the neighbours are padding
    assert trilinear_sample(v, (-0.5, 1.0, 1.0)) == pytest.approx(0.5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=8, max_size=8),
       st.tuples(*[st.floats(0, 1)] * 3))
def test_trilinear_within_stencil_bounds(vals, frac):
    v = Volume(np.array(vals, dtype=np.float32).reshape(2, 2, 2))
    s = trilinear_sample(v, frac)
    lo, hi = float(v.data.min()), float(v.data.max())
    assert lo - 1e-6 <= s <= hi + 1e-6


def test_identity_resample_is_exact_copy():
    v = smooth_volume()
    out = resample_affine(v, AffineMap.identity())
    np.testing.assert_array_equal(out.data, v.data)


def test_translation_by_one_voxel_shifts_index():
    v = smooth_volume()
    sx = v.spacing[0]
    out = resample_affine(v, AffineMap.translation((sx, 0, 0)))
    np.testing.assert_array_equal(out.data[:, :, 1:], v.data[:, :, :-1])
    assert np.all(out.data[:, :, 0] == 0)


def test_constant_field_matches_translation():
    v = smooth_volume()
    sx = v.spacing[0]
    field = np.zeros(v.data.shape + (3,))
    field[..., 0] = -sx
    a = resample_displacement(v, field, v.grid)
    b = resample_affine(v, AffineMap.translation((sx, 0, 0)))
    np.testing.assert_array_equal(a.data, b.data)


def test_zero_field_is_copy_and_shape_checked():
    v = smooth_volume()
    np.testing.assert_array_equal(resample_displacement(v, np.zeros(v.data.shape + (3,))).data,
                                  v.data)
    with pytest.raises(GeometryMismatch):
        resample_displacement(v, np.zeros((2, 2, 2, 3)))


def test_scale_about_center_keeps_constant_interior():
    v = Volume.from_grid(Grid.centered(16, 1.0), np.full((16, 16, 16), 0.8))
    out = resample_affine(v, AffineMap(np.eye(3) * 2.0, np.zeros(3)))
    np.testing.assert_allclose(out.data[2:-2, 2:-2, 2:-2], 0.8, atol=1e-6)


def test_singular_map():
    with pytest.raises(SingularMap):
        AffineMap(np.diag([1.0, 1.0, 1e-12]), np.zeros(3)).inverse()
    with pytest.raises(SingularMap):
        resample_affine(smooth_volume(), AffineMap(np.zeros((3, 3)), np.zeros(3)))


def test_affine_round_trip_on_smooth_volume():
    v = smooth_volume((24, 24, 24), (2.0, 2.0, 2.0))
    th = np.deg2rad(5.0)
    lin = np.array([[np.cos(th), -np.sin(th), 0], [np.sin(th), np.cos(th), 0], [0, 0, 1]]) * 1.05
    m = AffineMap(lin, np.array([1.3, -0.7, 0.4]))
    back = resample_affine(resample_affine(v, m), m.inverse())
    inner = (slice(5, -5),) * 3
    err = np.abs(back.data[inner] - v.data[inner]).max()
    # the value range is [0, 1]; allow twice the local second difference
    d2 = np.abs(np.diff(v.data, 2, axis=2)).max()
    assert err <= max(2 * d2, 1e-3)


def test_compose_and_inverse():
    a = AffineMap(np.diag([2.0, 1.0, 0.5]), np.array([1.0, 2.0, 3.0]))
    b = AffineMap.translation((0.5, 0.0, -1.0))
    p = np.array([[1.0, -2.0, 0.3]])
    np.testing.assert_allclose(a.compose(b).apply(p), a.apply(b.apply(p)))
    np.testing.assert_allclose(a.inverse().apply(a.apply(p)), p)


def test_labels_resample_nearest():
    lab = LabelVolume(np.array([[[0, 1, 2, 2]]], dtype=np.uint8))
    out = resample_affine(lab, AffineMap.translation((0.4, 0, 0)))
    assert out.labels.dtype == np.uint8
    np.testing.assert_array_equal(out.labels, lab.labels)


def test_downscale_geometry_and_average():
    data = np.arange(64, dtype=np.float32).reshape(4, 4, 4)
    v = Volume(data, (1, 1, 1), (0, 0, 0))
    d = downscale(v, 2)
    assert d.dims == (2, 2, 2) and d.spacing == (2.0, 2.0, 2.0)
    assert d.origin == (0.5, 0.5, 0.5)
    assert d.data[0, 0, 0] == pytest.approx(data[:2, :2, :2].mean())
    lab = downscale(LabelVolume(np.ones((4, 4, 4), dtype=np.uint8)), 2)
    assert isinstance(lab, LabelVolume) and np.all(lab.labels == 1)


def test_crop_zero_fills():
    v = Volume(np.ones((4, 4, 4)))
    c = crop(v, (-1, 0, 0), (3, 2, 2))
    np.testing.assert_array_equal(c.data[:, :, 0], 0)
    np.testing.assert_array_equal(c.data[:, :, 1:], 1)
    assert c.origin == (-1.0, 0.0, 0.0)
