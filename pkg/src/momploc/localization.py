"""Path classification by reflection type and closed-form position / clock-offset fit.

The receiver sits at the origin and every direction is expressed in a frame whose
z axis is vertical. Delays are relative (``tau - tau_0``) and are turned into
ranges with the speed of light before solving.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import Path, UnitDirection
from .errors import ConfigError, UnlocalizableError

SPEED_OF_LIGHT = 299_792_458.0
RCOND_MIN = 1e-10


class PathLabel(str, enum.Enum):
    LOS = "LoS"
    WALL = "Wall"
    FLOOR_CEILING = "FloorCeiling"
    SPURIOUS = "Spurious"


# rows of u - theta * range that each path type pins down
SELECTORS = {
    PathLabel.LOS: np.eye(3),
    PathLabel.FLOOR_CEILING: np.eye(3)[:2],
    PathLabel.WALL: np.eye(3)[2:],
    PathLabel.SPURIOUS: np.zeros((0, 3)),
}


@dataclass(frozen=True)
class ClassifierConfig:
    r_az: float = 0.12
    r_el: float = 0.12
    # "prose": LoS/walls share the summed-elevation test; "equation": the swapped reading
    mapping: str = "prose"

    def __post_init__(self):
        if not 0 < self.r_az <= 2 or not 0 < self.r_el <= 1:
            raise ConfigError(f"thresholds out of range: r_az={self.r_az}, r_el={self.r_el}")
        if self.mapping not in ("prose", "equation"):
            raise ConfigError(f"unknown mapping {self.mapping!r}")


@dataclass
class PositionFix:
    u: np.ndarray
    clock_offset_m: float
    condition_number: float
    labels: list[PathLabel]
    weights: list[float]
    cost: float = 0.0

    def to_json(self) -> str:
        return json.dumps({
            "u": [float(v) for v in self.u],
            "clock_offset_m": float(self.clock_offset_m),
            "condition_number": float(self.condition_number),
            "labels": [lab.value for lab in self.labels],
            "weights": [float(w) for w in self.weights],
        })

    @classmethod
    def from_json(cls, text: str) -> "PositionFix":
        d = json.loads(text)
        return cls(np.array(d["u"], dtype=float), d["clock_offset_m"], d["condition_number"],
                   [PathLabel(v) for v in d["labels"]], list(d["weights"]))


def to_spherical(direction: UnitDirection) -> tuple[float, float]:
    """(azimuth, elevation) in radians; azimuth in (-pi, pi], 0 at the poles."""
    az = float(np.arctan2(direction.y, direction.x))
    if az <= -np.pi:
        az = np.pi
    el = float(np.arcsin(np.clip(direction.z, -1.0, 1.0)))
    return az, el


def classify(path: Path, cfg: ClassifierConfig = ClassifierConfig()) -> PathLabel:
    th_az, th_el = to_spherical(path.aoa)
    ph_az, ph_el = to_spherical(path.aod)
    same_el = abs(np.sin(th_el - ph_el)) < cfg.r_el
    mirrored_el = abs(np.sin(th_el + ph_el)) < cfg.r_el
    opposite_az = np.cos(th_az - ph_az) < cfg.r_az - 1
    if cfg.mapping == "prose":
        los_el, fc_el = mirrored_el, same_el
    else:
        los_el, fc_el = same_el, mirrored_el
    if los_el and opposite_az:
        return PathLabel.LOS
    if fc_el and opposite_az:
        return PathLabel.FLOOR_CEILING
    if los_el:
        return PathLabel.WALL
    return PathLabel.SPURIOUS


def weights_from_gains(paths: Sequence[Path]) -> list[float]:
    return [float(abs(p.gain) ** 2) for p in paths]


def normal_equations(paths: Sequence[Path], labels: Sequence[PathLabel], weights: Sequence[float],
                     c: float = SPEED_OF_LIGHT):
    """Return (A, b, const) of the weighted quadratic ``z^T A z - 2 b^T z + const``."""
    a = np.zeros((4, 4))
    b = np.zeros(4)
    const = 0.0
    for path, label, w in zip(paths, labels, weights):
        chi = SELECTORS[PathLabel(label)]
        if chi.shape[0] == 0 or w == 0:
            continue
        theta = path.aoa.as_array()
        rng = c * path.delay_s
        u_mat = np.hstack([np.eye(3), -theta[:, None]])
        cu = chi @ u_mat
        ct = chi @ theta
        a += w * cu.T @ cu
        b += w * rng * cu.T @ ct
        const += w * rng ** 2 * float(ct @ ct)
    return a, b, const


def _null_directions(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(a)
    top = max(vals[-1], 0.0)
    return vecs[:, vals <= RCOND_MIN * top].T if top > 0 else np.eye(4)


def solve_position(paths: Sequence[Path], labels: Sequence[PathLabel],
                   weights: Sequence[float] | None = None, c: float = SPEED_OF_LIGHT) -> PositionFix:
    if not (len(paths) == len(labels)):
        raise ValueError("one label per path is required")
    if weights is None:
        weights = weights_from_gains(paths)
    if len(weights) != len(paths):
        raise ValueError("one weight per path is required")
    labels = [PathLabel(lab) for lab in labels]
    a, b, const = normal_equations(paths, labels, weights, c)
    assert np.allclose(a, a.T) and np.linalg.eigvalsh(a).min() >= -1e-9 * max(1.0, np.abs(a).max())
    if not np.any(a):
        raise UnlocalizableError("no usable (non-spurious, positively weighted) paths", np.eye(4))
    cond = float(np.linalg.cond(a))
    if not np.isfinite(cond) or 1.0 / cond < RCOND_MIN:
        null = _null_directions(a)
        desc = "; ".join("[" + ", ".join(f"{v:+.3f}" for v in n) + "]" for n in null)
        raise UnlocalizableError(
            f"position/offset underdetermined (cond={cond:.3g}); unconstrained (x, y, z, offset) "
            f"directions: {desc}", null)
    z = np.linalg.solve(a, b)
    return PositionFix(z[:3], float(z[3]), cond, labels, list(map(float, weights)),
                       cost=float(const - b @ z))


def localize(paths: Sequence[Path], cfg: ClassifierConfig = ClassifierConfig(),
             weights: Sequence[float] | None = None) -> PositionFix:
    """Classify, weight by power and solve."""
    labels = [classify(p, cfg) for p in paths]
    return solve_position(paths, labels, weights)
