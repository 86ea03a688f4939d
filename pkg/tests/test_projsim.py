import numpy as np
import pytest

from cbfuse.errors import BadGeometry, CorruptHeader
from cbfuse.projsim import (ConeBeamGeometry, forward_project, line_integral, load_projections,
                            make_geometry, save_projections)
from cbfuse.volgrid import Grid, Volume

from siddon import siddon


def _ball(radius, dims=48, spacing=2.0, sub=4):
    """Partial-volume ball: each voxel holds the fraction of its box inside the sphere."""
    g = Grid.centered(dims, spacing)
    p = g.world_points()
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    frac = np.zeros(len(p))
    for ox in offs:
        for oy in offs:
            for oz in offs:
                q = p + spacing * np.array([ox, oy, oz])
                frac += np.sum(q * q, axis=1) <= radius * radius
    return Volume.from_grid(g, frac / sub ** 3)


def _central(p):
    g = p.geometry
    # the central ray hits the corner shared by the four middle pixels
    return p.images[:, g.nv // 2 - 1:g.nv // 2 + 1, g.nu // 2 - 1:g.nu // 2 + 1].mean(axis=(1, 2))


def test_uniform_angles():
    np.testing.assert_allclose(make_geometry(4).angles, [0, np.pi / 2, np.pi, 3 * np.pi / 2])
    a = make_geometry(490).angles
    assert len(a) == 490
    np.testing.assert_allclose(np.diff(a), 2 * np.pi / 490)


def test_bad_geometry():
    with pytest.raises(BadGeometry):
        make_geometry(8, source_to_detector=500.0)
    with pytest.raises(BadGeometry):
        make_geometry(0)
    with pytest.raises(BadGeometry):
        ConeBeamGeometry(3, angles=[0.0, 1.0])
    huge = Volume.from_grid(Grid.centered(8, 200.0), np.zeros((8, 8, 8)))
    with pytest.raises(BadGeometry):
        forward_project(huge, make_geometry(2))


def test_zero_volume_projects_to_zero():
    v = Volume.from_grid(Grid.centered(16, 2.0), np.zeros((16, 16, 16)))
    assert np.all(forward_project(v, make_geometry(3)).images == 0)


def test_cube_path_length():
    g = Grid.centered(40, 1.0)
    v = Volume.from_grid(g, np.ones(g.shape))       # voxel extent is exactly 40 mm
    p = forward_project(v, make_geometry(1, nu=8, nv=8))
    assert _central(p)[0] == pytest.approx(40.0, abs=1.0)


@pytest.mark.parametrize("r", [15.0, 25.0])
def test_sphere_chord(r):
    v = _ball(r)
    p = forward_project(v, make_geometry(1, nu=8, nv=8))
    assert _central(p)[0] == pytest.approx(2 * r, abs=1.0)     # default step: 1 mm


@pytest.mark.parametrize("ray", [
    ((-80.0, 0.3, 0.2), (80.0, 0.3, 0.2)),
    ((-60.0, -50.0, 4.0), (60.0, 45.0, -3.0)),
    ((10.0, -90.0, -30.0), (-5.0, 90.0, 33.0)),
])
def test_matches_siddon_on_smooth_volume(ray):
    g = Grid.centered(32, 2.0)
    p = g.world_points()
    val = np.exp(-np.sum(p * p, axis=1) / (2 * 12.0 ** 2))
    v = Volume.from_grid(g, val)
    ours = line_integral(v, *ray)
    ref = siddon(v.data, v.origin, v.spacing, *ray)
    assert ours == pytest.approx(ref, rel=1e-2)


def test_linearity(rng):
    g = Grid.centered(24, 2.0)
    a, b = rng.random(g.shape), rng.random(g.shape)
    geom = make_geometry(5, nu=32, nv=32)
    pa = forward_project(Volume.from_grid(g, a), geom).images
    pb = forward_project(Volume.from_grid(g, b), geom).images
    pab = forward_project(Volume.from_grid(g, (2.0 * a - 0.5 * b).astype(np.float32)), geom).images
    lin = 2.0 * pa - 0.5 * pb
    np.testing.assert_allclose(pab, lin, rtol=1e-5, atol=1e-5 * np.abs(lin).max())


def test_rotational_consistency():
    p = forward_project(_ball(20.0), make_geometry(12, nu=16, nv=16))
    c = _central(p)
    assert np.ptp(c) <= 0.01 * c.mean()


def test_non_negative(rng):
    g = Grid.centered(16, 2.0)
    p = forward_project(Volume.from_grid(g, rng.random(g.shape)), make_geometry(4, nu=24, nv=24))
    assert np.all(p.images >= 0)


def test_projection_file_round_trip(tmp_path):
    p = forward_project(_ball(10.0, dims=16), make_geometry(3, nu=16, nv=12))
    save_projections(p, tmp_path / "p.cbp")
    q = load_projections(tmp_path / "p.cbp")
    assert q.geometry == p.geometry
    np.testing.assert_allclose(q.images, p.images, rtol=1e-6)
    np.testing.assert_array_equal(q.geometry.angles, p.geometry.angles)
    (tmp_path / "bad.cbp").write_bytes((tmp_path / "p.cbp").read_bytes()[:-8])
    with pytest.raises(CorruptHeader):
        load_projections(tmp_path / "bad.cbp")
