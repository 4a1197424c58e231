"""Synthetic indoor scenes with first-order image-source tracing.

Rooms are axis-aligned boxes. Faces shared by two boxes are interior walls that
block propagation except through openings (doors). Each access point carries a
rotation whose columns are its array axes in room coordinates; its array
normal (local z) points into the room. User arrays are horizontal, facing up.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import Path, UnitDirection
from .errors import ConfigError
from .localization import SPEED_OF_LIGHT, PathLabel

_EPS = 1e-9


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def contains(self, p, tol: float = 1e-9) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= np.asarray(self.lo) - tol) and np.all(p <= np.asarray(self.hi) + tol))


@dataclass(frozen=True)
class Opening:
    """Rectangle in the plane ``x[axis] == coord``; bounds are for the two remaining axes."""

    axis: int
    coord: float
    lo: tuple[float, float]
    hi: tuple[float, float]

    def contains(self, p) -> bool:
        rest = [i for i in range(3) if i != self.axis]
        return all(self.lo[n] - _EPS <= p[i] <= self.hi[n] + _EPS for n, i in enumerate(rest))


@dataclass(frozen=True)
class AccessPoint:
    position: tuple[float, float, float]
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    @property
    def normal(self) -> np.ndarray:
        return np.asarray(self.rotation)[:, 2]


def wall_mount_rotation(facing) -> np.ndarray:
    """Vertical array whose normal is the horizontal unit vector ``facing``."""
    z = np.asarray(facing, dtype=float)
    z = z / np.linalg.norm(z)
    y = np.array([0.0, 0.0, 1.0])
    x = np.cross(y, z)
    return np.column_stack([x, y, z])


@dataclass
class RoomScene:
    boxes: list[Box]
    aps: list[AccessPoint]
    users: np.ndarray
    carrier_wavelength_m: float = 0.005
    reflection_loss_db: float = 6.0
    openings: list[Opening] = field(default_factory=list)
    user_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    cull_backside: bool = True
    clutter_paths: int = 0
    clutter_rel_db: float = -20.0
    seed: int = 0

    def __post_init__(self):
        self.users = np.atleast_2d(np.asarray(self.users, dtype=float))
        for p in [a.position for a in self.aps] + list(self.users):
            if self.room_of(p) is None:
                raise ConfigError(f"point {tuple(p)} lies outside every room")
        self._partitions = _shared_faces(self.boxes)

    def room_of(self, p) -> int | None:
        for i, b in enumerate(self.boxes):
            if b.contains(p):
                return i
        return None

    def blocked(self, p0, p1) -> bool:
        p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
        for axis, coord, lo, hi in self._partitions:
            s0, s1 = p0[axis] - coord, p1[axis] - coord
            if s0 * s1 >= -_EPS * _EPS or abs(s0) < _EPS or abs(s1) < _EPS:
                continue
            x = p0 + (p1 - p0) * (s0 / (s0 - s1))
            rest = [i for i in range(3) if i != axis]
            if not all(lo[n] - _EPS <= x[i] <= hi[n] + _EPS for n, i in enumerate(rest)):
                continue
            if any(o.axis == axis and abs(o.coord - coord) < _EPS and o.contains(x) for o in self.openings):
                continue
            return True
        return False


def _shared_faces(boxes: Sequence[Box]):
    faces = []
    for i, a in enumerate(boxes):
        for b in boxes[i + 1:]:
            for axis in range(3):
                for coord in (a.hi[axis], a.lo[axis]):
                    if abs(coord - b.lo[axis]) > _EPS and abs(coord - b.hi[axis]) > _EPS:
                        continue
                    rest = [k for k in range(3) if k != axis]
                    lo = tuple(max(a.lo[k], b.lo[k]) for k in rest)
                    hi = tuple(min(a.hi[k], b.hi[k]) for k in rest)
                    if all(h > l for l, h in zip(lo, hi)):
                        faces.append((axis, coord, lo, hi))
    return faces


@dataclass
class GroundTruth:
    user: int
    ap: int
    position: np.ndarray
    paths: list[Path]
    labels: list[PathLabel]
    clock_offset_s: float = 0.0

    def to_dict(self) -> dict:
        from .channel import paths_to_records
        return {"user": self.user, "ap": self.ap, "position": self.position.tolist(),
                "paths": paths_to_records(self.paths), "labels": [lab.value for lab in self.labels],
                "clock_offset_s": self.clock_offset_s}


def path_rng(scene: RoomScene, ap: int, user: int) -> np.random.Generator:
    return np.random.default_rng([scene.seed, 1, ap, user])


def _local(rot, v) -> np.ndarray:
    return np.asarray(rot).T @ v


def trace_labeled(scene: RoomScene, ap: int, user: int,
                  rng: np.random.Generator | None = None) -> list[tuple[Path, PathLabel]]:
    """Visible first-order paths with their geometric type; directions in array frames."""
    rng = path_rng(scene, ap, user) if rng is None else rng
    a = np.asarray(scene.aps[ap].position, float)
    u = scene.users[user]
    room = scene.room_of(u)
    if room is None:
        raise ConfigError(f"user {user} is outside every room")
    box = scene.boxes[room]
    lam = scene.carrier_wavelength_m
    loss = 10 ** (-scene.reflection_loss_db / 20)
    candidates = []
    if not scene.blocked(a, u):
        candidates.append((u - a, a - u, np.linalg.norm(u - a), 0, PathLabel.LOS))
    for axis in range(3):
        for coord in (box.lo[axis], box.hi[axis]):
            img = u.copy()
            img[axis] = 2 * coord - u[axis]
            den = img[axis] - a[axis]
            if abs(den) < _EPS:
                continue
            t = (coord - a[axis]) / den
            if not _EPS < t < 1 - _EPS:
                continue
            hit = a + t * (img - a)
            if not box.contains(hit):
                continue
            if any(o.axis == axis and abs(o.coord - coord) < _EPS and o.contains(hit) for o in scene.openings):
                continue
            if scene.blocked(a, hit) or scene.blocked(hit, u):
                continue
            label = PathLabel.FLOOR_CEILING if axis == 2 else PathLabel.WALL
            candidates.append((hit - a, hit - u, np.linalg.norm(img - a), 1, label))
    out = []
    rot_ap = scene.aps[ap].rotation
    for arrive, depart, length, bounces, label in candidates:
        aoa = _local(rot_ap, arrive / np.linalg.norm(arrive))
        aod = _local(scene.user_rotation, depart / np.linalg.norm(depart))
        if scene.cull_backside and (aoa[2] <= 0 or aod[2] <= 0):
            continue
        mag = lam / (4 * np.pi * length) * loss ** bounces
        gain = mag * np.exp(2j * np.pi * rng.random())
        out.append((Path(complex(gain), float(length / SPEED_OF_LIGHT),
                         UnitDirection.from_vector(aoa), UnitDirection.from_vector(aod)), label))
    if scene.clutter_paths and out:
        ref = max(abs(p.gain) for p, _ in out)
        tmin = min(p.delay_s for p, _ in out)
        for _ in range(scene.clutter_paths):
            aoa = _random_hemisphere(rng)
            aod = _random_hemisphere(rng)
            mag = ref * 10 ** (scene.clutter_rel_db / 20)
            delay = tmin + rng.uniform(1e-9, 30e-9)
            gain = mag * np.exp(2j * np.pi * rng.random())
            out.append((Path(complex(gain), float(delay), aoa, aod), PathLabel.SPURIOUS))
    return out


def _random_hemisphere(rng) -> UnitDirection:
    v = rng.standard_normal(3)
    v[2] = abs(v[2]) + 1e-3
    return UnitDirection.from_vector(v)


def trace_paths(scene: RoomScene, ap: int, user: int, rng: np.random.Generator | None = None) -> list[Path]:
    return [p for p, _ in trace_labeled(scene, ap, user, rng)]


def to_room_frame(paths: Sequence[Path], ap_rotation, user_rotation=np.eye(3)) -> list[Path]:
    """Rotate array-frame directions into room axes (z vertical)."""
    out = []
    for p in paths:
        aoa = UnitDirection.from_vector(np.asarray(ap_rotation) @ p.aoa.as_array())
        aod = UnitDirection.from_vector(np.asarray(user_rotation) @ p.aod.as_array())
        out.append(Path(p.gain, p.delay_s, aoa, aod, p.clamped, p.relative))
    return out


def associate_ap(scene: RoomScene, user: int) -> int:
    """Access point with the largest total path power; ties go to the lowest index."""
    powers = [sum(abs(p.gain) ** 2 for p in trace_paths(scene, i, user)) for i in range(len(scene.aps))]
    if not powers:
        raise ConfigError("scene has no access points")
    best = max(powers)
    return next(i for i, pw in enumerate(powers) if pw == best)


def sample_clock_offset(rng: np.random.Generator, range_s: float = 100e-9) -> float:
    if not range_s > 0:
        raise ConfigError("clock offset range must be positive")
    return float(rng.uniform(0.0, range_s))


def ground_truth(scene: RoomScene, user: int) -> GroundTruth:
    ap = associate_ap(scene, user)
    traced = trace_labeled(scene, ap, user)
    return GroundTruth(user, ap, scene.users[user].copy(), [p for p, _ in traced], [lab for _, lab in traced])


def polyline_points(waypoints, n: int) -> np.ndarray:
    """``n`` points evenly spaced by arc length along a polyline."""
    w = np.asarray(waypoints, float)
    seg = np.linalg.norm(np.diff(w, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    t = np.linspace(0.0, s[-1], n)
    return np.column_stack([np.interp(t, s, w[:, k]) for k in range(w.shape[1])])


DEFAULT_WAYPOINTS = [(1.0, 1.0), (4.5, 1.2), (5.4, 2.5), (6.6, 2.5), (8.5, 1.3), (9.0, 3.8), (7.5, 4.2)]


def default_scene(n_users: int = 218, user_height: float = 1.0, ap_height: float = 2.0,
                  **kwargs) -> RoomScene:
    """Two rooms (6 x 5 x 3 m and 4 x 5 x 3 m) joined by a doorway, one wall-mounted AP each."""
    boxes = [Box((0.0, 0.0, 0.0), (6.0, 5.0, 3.0)), Box((6.0, 0.0, 0.0), (10.0, 5.0, 3.0))]
    door = Opening(0, 6.0, (2.0, 0.0), (3.0, 2.1))
    aps = [
        AccessPoint((0.05, 2.5, ap_height), wall_mount_rotation((1.0, 0.0, 0.0))),
        AccessPoint((9.95, 2.5, ap_height), wall_mount_rotation((-1.0, 0.0, 0.0))),
    ]
    xy = polyline_points(DEFAULT_WAYPOINTS, n_users)
    users = np.column_stack([xy, np.full(n_users, user_height)])
    return RoomScene(boxes, aps, users, openings=[door], **kwargs)


def scene_from_dict(d: dict) -> RoomScene:
    """Build a scene from a JSON-style mapping (``preset: default`` or explicit geometry)."""
    d = dict(d)
    common = {k: d[k] for k in ("carrier_wavelength_m", "reflection_loss_db", "clutter_paths",
                                "clutter_rel_db", "seed", "cull_backside") if k in d}
    if "carrier_hz" in d:
        common["carrier_wavelength_m"] = SPEED_OF_LIGHT / float(d["carrier_hz"])
    if d.get("preset", "default") == "default" and "boxes" not in d:
        return default_scene(int(d.get("n_users", 218)), float(d.get("user_height", 1.0)),
                             float(d.get("ap_height", 2.0)), **common)
    boxes = [Box(tuple(b["lo"]), tuple(b["hi"])) for b in d["boxes"]]
    openings = [Opening(o["axis"], o["coord"], tuple(o["lo"]), tuple(o["hi"])) for o in d.get("openings", [])]
    aps = []
    for a in d["aps"]:
        rot = wall_mount_rotation(a["facing"]) if "facing" in a else np.asarray(a.get("rotation", np.eye(3)))
        aps.append(AccessPoint(tuple(a["position"]), rot))
    return RoomScene(boxes, aps, np.asarray(d["users"], float), openings=openings, **common)


def dump_ground_truth(truths: Sequence[GroundTruth]) -> str:
    return json.dumps([t.to_dict() for t in truths])
