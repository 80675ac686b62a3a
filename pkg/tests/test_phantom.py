import numpy as np
import pytest

from cbctkit.geometry import VolumeGeometry
from cbctkit.phantom import (
    Ellipsoid,
    Volume,
    generate_phantom,
    parse_ellipsoid_table,
    shepp_logan_3d,
)


@pytest.fixture
def geom():
    return VolumeGeometry(16, 16, 8, voxel_size=(1.0, 1.0, 2.0))


def test_empty_list_gives_zero_volume(geom):
    vol = generate_phantom([], geom)
    assert not np.any(vol.data)


def test_enclosing_ellipsoid_fills_volume(geom):
    big = Ellipsoid(center=(0, 0, 0), semi_axes=(10, 10, 10), intensity=1.0)
    vol = generate_phantom([big], geom)
    np.testing.assert_array_equal(vol.data, 1.0)


def test_linearity_of_sums(geom):
    e1 = Ellipsoid((0.1, 0, 0), (0.5, 0.4, 0.6), intensity=0.7)
    e2 = Ellipsoid((-0.2, 0.1, 0), (0.3, 0.3, 0.3), (0.4, 0.2, 0.1), intensity=-0.25)
    both = generate_phantom([e1, e2], geom)
    split = generate_phantom([e1], geom).data + generate_phantom([e2], geom).data
    np.testing.assert_array_equal(both.data, split)


def test_axis_aligned_ellipsoid_reflection_symmetry(geom):
    e = Ellipsoid((0, 0, 0), (0.5, 0.3, 0.4), intensity=1.0)
    cube = generate_phantom([e], geom).as_3d()
    np.testing.assert_array_equal(cube, cube[:, :, ::-1])
    np.testing.assert_array_equal(cube, cube[:, ::-1, :])
    np.testing.assert_array_equal(cube, cube[::-1, :, :])


def test_rotated_ellipsoid_differs_from_unrotated(geom):
    plain = Ellipsoid((0, 0, 0), (0.6, 0.2, 0.2), intensity=1.0)
    turned = Ellipsoid((0, 0, 0), (0.6, 0.2, 0.2), (np.pi / 4, 0, 0), intensity=1.0)
    assert np.any(
        generate_phantom([plain], geom).data != generate_phantom([turned], geom).data
    )


def test_shepp_logan_has_ten_ellipsoids():
    table = shepp_logan_3d()
    assert len(table) == 10


def test_shepp_logan_outermost_largest():
    table = shepp_logan_3d()
    volumes = [e.semi_axes[0] * e.semi_axes[1] * e.semi_axes[2] for e in table]
    assert volumes[0] == max(volumes)
    assert all(table[0].semi_axes[a] == max(e.semi_axes[a] for e in table) for a in range(3))


def test_shepp_logan_values_in_unit_interval():
    geom = VolumeGeometry(64, 64, 16, voxel_size=(3.44, 3.44, 13.76))
    vol = generate_phantom(shepp_logan_3d(), geom)
    assert vol.data.min() >= 0.0
    assert vol.data.max() <= 1.0
    assert vol.data.max() > 0.5  # head is actually present


def test_shepp_logan_resolution_refinement():
    coarse = generate_phantom(shepp_logan_3d(), VolumeGeometry(32, 32, 16, (2.0, 2.0, 4.0)))
    fine = generate_phantom(shepp_logan_3d(), VolumeGeometry(64, 64, 32, (1.0, 1.0, 2.0)))
    m_coarse = coarse.data.mean()
    m_fine = fine.data.mean()
    assert abs(m_coarse - m_fine) / m_fine < 0.03


def test_anisotropic_voxels_map_to_same_normalized_shape():
    # same voxel counts, different physical size: identical voxelization
    iso = generate_phantom(shepp_logan_3d(), VolumeGeometry(24, 24, 12, (1.0, 1.0, 1.0)))
    ani = generate_phantom(shepp_logan_3d(), VolumeGeometry(24, 24, 12, (0.86, 0.86, 3.44)))
    np.testing.assert_array_equal(iso.data, ani.data)


def test_parse_ellipsoid_table_round_trip():
    text = "# comment\n0.1 0.2 0.3 0.4 0.5 0.6 0.7 0.8 0.9 1.5\n"
    (e,) = parse_ellipsoid_table(text)
    assert e.center == (0.1, 0.2, 0.3)
    assert e.semi_axes == (0.4, 0.5, 0.6)
    assert e.euler_angles == (0.7, 0.8, 0.9)
    assert e.intensity == 1.5


def test_parse_ellipsoid_table_wrong_width():
    with pytest.raises(ValueError, match="10 values"):
        parse_ellipsoid_table("1 2 3\n")


def test_ellipsoid_validation():
    with pytest.raises(ValueError):
        Ellipsoid((0, 0, 0), (1.0, 0.0, 1.0))


def test_volume_length_checked():
    geom = VolumeGeometry(2, 2, 2)
    with pytest.raises(ValueError, match="length"):
        Volume(geom, np.zeros(7))
