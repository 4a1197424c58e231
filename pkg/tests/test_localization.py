import numpy as np
import pytest

from momploc.channel import Path, UnitDirection
from momploc.errors import ConfigError, UnlocalizableError
from momploc.localization import (SPEED_OF_LIGHT, ClassifierConfig, PathLabel, PositionFix, classify,
                                  localize, solve_position, to_spherical, weights_from_gains)

C = SPEED_OF_LIGHT


def sph(az_deg, el_deg) -> UnitDirection:
    az, el = np.radians(az_deg), np.radians(el_deg)
    return UnitDirection.from_vector([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def mirror(p, axis, coord):
    q = np.array(p, float)
    q[axis] = 2 * coord - q[axis]
    return q


def image_paths(u, offset_m, planes, gains=None):
    """LoS plus one single-bounce path per (axis, coord) plane; receiver at the origin."""
    u = np.asarray(u, float)
    out = [Path(1.0, (np.linalg.norm(u) - offset_m) / C, UnitDirection.from_vector(u), UnitDirection.from_vector(-u),
                relative=True)]
    labels = [PathLabel.LOS]
    for axis, coord in planes:
        img = mirror(u, axis, coord)
        t = coord / img[axis]
        hit = t * img
        out.append(Path(0.5, (np.linalg.norm(img) - offset_m) / C, UnitDirection.from_vector(hit),
                        UnitDirection.from_vector(hit - u), relative=True))
        labels.append(PathLabel.FLOOR_CEILING if axis == 2 else PathLabel.WALL)
    if gains is not None:
        out = [Path(g, p.delay_s, p.aoa, p.aod, relative=True) for g, p in zip(gains, out)]
    return out, labels


def test_to_spherical_examples():
    assert to_spherical(UnitDirection(1.0, 0.0, 0.0)) == (0.0, 0.0)
    az, el = to_spherical(UnitDirection(0.0, 0.0, 1.0))
    assert az == 0.0 and el == pytest.approx(np.pi / 2)
    az, el = to_spherical(UnitDirection(0.3, 0.4, np.sqrt(0.75)))
    assert az == pytest.approx(np.arctan(4 / 3)) and el == pytest.approx(np.arcsin(np.sqrt(0.75)))


def test_classifier_examples():
    def path(a, b):
        return Path(1.0, 0.0, sph(*a), sph(*b))

    assert classify(path((30, -10), (210, 10))) == PathLabel.LOS
    assert classify(path((30, 15), (210, 15))) == PathLabel.FLOOR_CEILING
    assert classify(path((30, -5), (80, 5))) == PathLabel.WALL
    assert classify(path((30, 20), (80, 40))) == PathLabel.SPURIOUS


def test_classifier_equation_mapping_swaps_elevation_tests():
    cfg = ClassifierConfig(mapping="equation")
    assert classify(Path(1.0, 0.0, sph(30, 15), sph(210, 15)), cfg) == PathLabel.LOS
    assert classify(Path(1.0, 0.0, sph(30, -10), sph(210, 10)), cfg) == PathLabel.FLOOR_CEILING
    with pytest.raises(ConfigError):
        ClassifierConfig(mapping="other")
    with pytest.raises(ConfigError):
        ClassifierConfig(r_az=0.0)


def test_weights_from_gains():
    p = lambda g: Path(g, 0.0, UnitDirection(0, 0, 1), UnitDirection(0, 0, 1))  # noqa: E731
    assert weights_from_gains([p(1 + 0j)]) == [1.0]
    assert weights_from_gains([p(0)]) == [0.0]
    assert weights_from_gains([p(1), p(0.5j)]) == [1.0, 0.25]


def test_closed_form_exact():
    u = np.array([2.0, 1.0, -0.5])
    paths, labels = image_paths(u, 3.0, [(2, -1.5), (0, 4.0)])
    fix = solve_position(paths, labels, [1.0, 1.0, 1.0])
    assert np.linalg.norm(fix.u - u) < 1e-9
    assert abs(fix.clock_offset_m - 3.0) < 1e-9
    assert fix.cost == pytest.approx(0.0, abs=1e-9)
    assert [lab for lab in fix.labels] == labels
    scaled = solve_position(paths, labels, [10.0, 10.0, 10.0])
    np.testing.assert_allclose(scaled.u, fix.u, atol=1e-12)
    # classification of the constructed paths agrees with the construction
    assert [classify(p) for p in paths] == labels


def test_los_only_is_unlocalizable():
    paths, labels = image_paths([2.0, 1.0, -0.5], 3.0, [])
    with pytest.raises(UnlocalizableError) as info:
        solve_position(paths, labels)
    null = info.value.null_directions
    assert null.shape[0] == 1
    v = null[0] / null[0][3]
    np.testing.assert_allclose(v[:3], UnitDirection.from_vector([2.0, 1.0, -0.5]).as_array(), atol=1e-9)
    with pytest.raises(UnlocalizableError):
        solve_position(paths, [PathLabel.SPURIOUS])
    with pytest.raises(ValueError):
        solve_position(paths, [])


def test_reflections_without_los(rng):
    u = np.array([1.5, -2.0, -0.7])
    paths, labels = image_paths(u, 1.0, [(0, 3.0), (1, -4.0), (2, -1.2), (2, 1.5)])
    fix = solve_position(paths[1:], labels[1:])
    assert np.linalg.norm(fix.u - u) < 1e-9


def test_rotation_about_z(rng):
    u = np.array([2.0, 1.0, -0.5])
    paths, labels = image_paths(u, 3.0, [(2, -1.5), (0, 4.0)], gains=[1.0, 0.4, 0.3])
    base = solve_position(paths, labels)
    a = 0.7
    rot = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
    turned = [Path(p.gain, p.delay_s, UnitDirection.from_vector(rot @ p.aoa.as_array()),
                   UnitDirection.from_vector(rot @ p.aod.as_array()), relative=True) for p in paths]
    fix = solve_position(turned, labels)
    np.testing.assert_allclose(fix.u, rot @ base.u, atol=1e-9)
    assert fix.clock_offset_m == pytest.approx(base.clock_offset_m, abs=1e-9)


def test_noisy_cost_is_nonnegative(rng):
    u = np.array([3.0, -1.0, -0.8])
    paths, labels = image_paths(u, 2.0, [(2, -1.5), (0, 4.0), (1, 2.5)])
    noisy = [Path(p.gain, p.delay_s + rng.normal(0, 1e-10),
                  UnitDirection.from_vector(p.aoa.as_array() + rng.normal(0, 0.01, 3)), p.aod, relative=True)
             for p in paths]
    fix = solve_position(noisy, labels)
    assert fix.cost >= -1e-9
    assert np.linalg.norm(fix.u - u) < 2.0  # poorly conditioned along the LoS ray


def test_localize_and_json():
    u = np.array([2.0, 1.0, -0.5])
    paths, labels = image_paths(u, 3.0, [(2, -1.5), (0, 4.0)])
    fix = localize(paths)
    assert np.linalg.norm(fix.u - u) < 1e-9
    back = PositionFix.from_json(fix.to_json())
    np.testing.assert_array_equal(back.u, fix.u)
    assert back.labels == fix.labels
