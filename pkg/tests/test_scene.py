import json

import numpy as np
import pytest

from momploc.channel import Path
from momploc.errors import ConfigError
from momploc.localization import SPEED_OF_LIGHT, PathLabel, classify, solve_position, to_spherical
from momploc.scene import (AccessPoint, Box, RoomScene, associate_ap, default_scene, dump_ground_truth,
                           ground_truth, sample_clock_offset, scene_from_dict, to_room_frame, trace_labeled,
                           trace_paths, wall_mount_rotation)

C = SPEED_OF_LIGHT


def _open_room(lo, hi, ap, users):
    return RoomScene([Box(lo, hi)], [AccessPoint(ap)], np.asarray(users, float), cull_backside=False)


def test_los_in_empty_room():
    sc = _open_room((-5, -5, -3), (5, 5, 3), (0, 0, 0), [(3, 0, 0)])
    traced = trace_labeled(sc, 0, 0)
    los = [p for p, lab in traced if lab == PathLabel.LOS]
    assert len(los) == 1
    assert los[0].delay_s == pytest.approx(3 / C, rel=1e-15)
    np.testing.assert_allclose(los[0].aoa.as_array(), [1, 0, 0])
    np.testing.assert_allclose(los[0].aod.as_array(), [-1, 0, 0])


def test_floor_bounce():
    sc = _open_room((-5, -5, -1.5), (5, 5, 3), (0, 0, 0), [(3, 0, 0)])
    floor = [p for p, lab in trace_labeled(sc, 0, 0)
             if lab == PathLabel.FLOOR_CEILING and p.aoa.z < 0]
    assert len(floor) == 1
    assert floor[0].delay_s * C == pytest.approx(np.sqrt(18), rel=1e-14)
    assert np.degrees(to_spherical(floor[0].aoa)[1]) == pytest.approx(-45.0)


def test_backside_culling_drops_paths_behind_arrays():
    sc = RoomScene([Box((-5, -5, -3), (5, 5, 3))], [AccessPoint((0, 0, 0))], np.array([[3.0, 0, 0]]))
    for p in trace_paths(sc, 0, 0):
        assert p.aoa.z > 0 and p.aod.z > 0


def _room_paths(sc, ap, user):
    traced = trace_labeled(sc, ap, user)
    room = to_room_frame([p for p, _ in traced], sc.aps[ap].rotation, sc.user_rotation)
    return room, [lab for _, lab in traced]


def test_default_scene_geometry_invariants():
    sc = default_scene()
    assert len(sc.users) == 218
    for user in range(0, 218, 7):
        ap = associate_ap(sc, user)
        room, labels = _room_paths(sc, ap, user)
        u = sc.users[user] - np.asarray(sc.aps[ap].position)
        for p, lab in zip(room, labels):
            th_az, th_el = to_spherical(p.aoa)
            ph_az, ph_el = to_spherical(p.aod)
            if lab == PathLabel.FLOOR_CEILING:
                assert th_el == pytest.approx(ph_el, abs=1e-12)
                assert np.cos(th_az - ph_az) == pytest.approx(-1.0, abs=1e-12)
            if lab in (PathLabel.WALL, PathLabel.LOS):
                assert th_el + ph_el == pytest.approx(0.0, abs=1e-12)
            if lab == PathLabel.WALL:
                # the z row of u - theta * range vanishes
                assert u[2] - p.aoa.z * p.delay_s * C == pytest.approx(0.0, abs=1e-12)
            assert classify(p) == lab
        if PathLabel.LOS in labels:
            d_los = room[labels.index(PathLabel.LOS)].delay_s
            assert all(p.delay_s > d_los for p, lab in zip(room, labels) if lab != PathLabel.LOS)


def test_localization_oracle_on_default_scene():
    sc = default_scene()
    for user in range(0, 218, 11):
        ap = associate_ap(sc, user)
        room, labels = _room_paths(sc, ap, user)
        tau0 = min(p.delay_s for p in room) - 5e-9
        rel = [Path(p.gain, p.delay_s - tau0, p.aoa, p.aod, relative=True) for p in room]
        fix = solve_position(rel, labels)
        u = sc.users[user] - np.asarray(sc.aps[ap].position)
        assert np.linalg.norm(fix.u - u) < 1e-9
        assert fix.clock_offset_m == pytest.approx(tau0 * C, abs=1e-9)


def test_associate_single_ap_and_blocked():
    assert associate_ap(_open_room((0, 0, 0), (5, 5, 3), (1, 1, 1), [(3, 3, 1)]), 0) == 0
    boxes = [Box((0, 0, 0), (5, 5, 3)), Box((5, 0, 0), (10, 5, 3))]
    aps = [AccessPoint((0.5, 2.5, 2), wall_mount_rotation((1, 0, 0))),
           AccessPoint((9.5, 2.5, 2), wall_mount_rotation((-1, 0, 0)))]
    sc = RoomScene(boxes, aps, np.array([[4.0, 2.0, 1.0]]))
    assert associate_ap(sc, 0) == 0
    assert trace_paths(sc, 1, 0) == []


def test_associate_tie_goes_to_lowest_index():
    aps = [AccessPoint((9.5, 2.5, 2), wall_mount_rotation((-1, 0, 0))),
           AccessPoint((0.5, 2.5, 2), wall_mount_rotation((1, 0, 0)))]
    sc = RoomScene([Box((0, 0, 0), (10, 5, 3))], aps, np.array([[5.0, 2.5, 1.0]]))
    p0 = sum(abs(p.gain) ** 2 for p in trace_paths(sc, 0, 0))
    p1 = sum(abs(p.gain) ** 2 for p in trace_paths(sc, 1, 0))
    assert p0 == p1
    assert associate_ap(sc, 0) == 0


def test_doorway_lets_paths_through():
    sc = default_scene()
    # a user in the small room just past the door sees the big-room AP through the opening
    sc2 = RoomScene(sc.boxes, sc.aps, np.array([[6.5, 2.5, 1.0]]), openings=sc.openings)
    assert any(lab == PathLabel.LOS for _, lab in trace_labeled(sc2, 0, 0))
    sc3 = RoomScene(sc.boxes, sc.aps, np.array([[6.5, 0.5, 1.0]]), openings=sc.openings)
    assert not any(lab == PathLabel.LOS for _, lab in trace_labeled(sc3, 0, 0))


def test_clock_offset_sampling():
    a = sample_clock_offset(np.random.default_rng(5), 50e-9)
    assert a == sample_clock_offset(np.random.default_rng(5), 50e-9)
    assert a != sample_clock_offset(np.random.default_rng(6), 50e-9)
    assert 0 <= a < 50e-9
    with pytest.raises(ConfigError):
        sample_clock_offset(np.random.default_rng(5), 0.0)


def test_clutter_paths_are_spurious():
    sc = default_scene(n_users=4, clutter_paths=3)
    traced = trace_labeled(sc, 0, 0)
    assert sum(lab == PathLabel.SPURIOUS for _, lab in traced) == 3


def test_gains_follow_free_space_and_reflection_loss():
    sc = _open_room((-5, -5, -1.5), (5, 5, 3), (0, 0, 0), [(3, 0, 0)])
    for p, lab in trace_labeled(sc, 0, 0):
        length = p.delay_s * C
        bounces = 0 if lab == PathLabel.LOS else 1
        expect = sc.carrier_wavelength_m / (4 * np.pi * length) * 10 ** (-sc.reflection_loss_db / 20 * bounces)
        assert abs(p.gain) == pytest.approx(expect, rel=1e-12)


def test_scene_from_dict_and_ground_truth_json():
    sc = scene_from_dict({"preset": "default", "n_users": 10, "carrier_hz": 60e9, "seed": 3})
    assert len(sc.users) == 10
    assert sc.carrier_wavelength_m == pytest.approx(C / 60e9)
    explicit = scene_from_dict({"boxes": [{"lo": [0, 0, 0], "hi": [4, 4, 3]}],
                                "aps": [{"position": [0.1, 2, 2], "facing": [1, 0, 0]}],
                                "users": [[2, 2, 1]]})
    gt = ground_truth(explicit, 0)
    d = json.loads(dump_ground_truth([gt]))
    assert d[0]["ap"] == 0 and len(d[0]["paths"]) == len(gt.paths)
    with pytest.raises(ConfigError):
        scene_from_dict({"boxes": [{"lo": [0, 0, 0], "hi": [4, 4, 3]}], "aps": [{"position": [0.1, 2, 2]}],
                         "users": [[9, 9, 1]]})
