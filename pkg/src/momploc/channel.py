"""Array geometry, pulse shaping and multipath channel synthesis.

Antenna index convention: for a URA with ``nx x ny`` elements the flattened
element index is ``n_x * ny + n_y`` (0-based), i.e. the response is
``kron(a_x, a_y)``. Every other module relies on this ordering.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, InvalidDirectionError, ShapeError

UNIT_TOL = 1e-12


@dataclass(frozen=True)
class UnitDirection:
    x: float
    y: float
    z: float

    def __post_init__(self):
        v = np.array([self.x, self.y, self.z], dtype=float)
        if not np.all(np.isfinite(v)):
            raise InvalidDirectionError(f"non-finite direction {v}")
        if abs(float(v @ v) - 1.0) > UNIT_TOL:
            raise InvalidDirectionError(f"direction {v} is not unit norm (|v|^2={v @ v})")

    @classmethod
    def from_vector(cls, v) -> "UnitDirection":
        v = np.asarray(v, dtype=float)
        n = np.linalg.norm(v)
        if v.shape != (3,) or n == 0:
            raise InvalidDirectionError(f"cannot normalise {v}")
        v = v / n
        return cls(float(v[0]), float(v[1]), float(v[2]))

    @classmethod
    def from_xy(cls, x: float, y: float) -> "UnitDirection":
        """Complete a direction from its x/y components assuming z >= 0."""
        r2 = x * x + y * y
        if r2 > 1.0 + UNIT_TOL:
            raise InvalidDirectionError(f"x^2 + y^2 = {r2} > 1")
        return cls(float(x), float(y), float(np.sqrt(max(0.0, 1.0 - r2))))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class Path:
    """One propagation path. ``aoa``/``aod`` point away from the receiver/transmitter.

    ``delay_s`` is absolute unless ``relative`` is set, in which case it is
    ``tau - tau_0`` and may be negative.
    """

    gain: complex
    delay_s: float
    aoa: UnitDirection
    aod: UnitDirection
    clamped: bool = field(default=False, compare=False)
    relative: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not np.isfinite(self.delay_s):
            raise ValueError(f"path delay must be finite, got {self.delay_s}")
        if not self.relative and self.delay_s < 0:
            raise ValueError(f"absolute path delay must be >= 0, got {self.delay_s}")


@dataclass(frozen=True)
class UraGeometry:
    nx: int
    ny: int
    spacing_wavelengths: float = 0.5

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigError(f"URA needs nx, ny >= 1, got {self.nx}x{self.ny}")

    @property
    def n(self) -> int:
        return self.nx * self.ny


@dataclass(frozen=True)
class PulseShape:
    kind: str = "sinc"
    sample_period_s: float = 1e-9
    rolloff: float = 0.0
    support_s: float | None = None  # |t| beyond this evaluates to 0

    def __post_init__(self):
        if self.kind not in ("sinc", "raised-cosine"):
            raise ConfigError(f"unknown pulse kind {self.kind!r}")
        if self.sample_period_s <= 0:
            raise ConfigError("sample period must be positive")
        if not 0.0 <= self.rolloff <= 1.0:
            raise ConfigError("rolloff must lie in [0, 1]")

    def __call__(self, t) -> np.ndarray:
        x = np.asarray(t, dtype=float) / self.sample_period_s
        out = np.sinc(x)
        # exact nulls at nonzero integer sample offsets
        k = np.round(x)
        on_sample = (np.abs(x - k) < 1e-9) & (k != 0)
        out = np.where(on_sample, 0.0, out)
        if self.kind == "raised-cosine" and self.rolloff > 0:
            b = self.rolloff
            den = 1.0 - (2.0 * b * x) ** 2
            sing = np.abs(den) < 1e-10
            safe = np.where(sing, 1.0, den)
            shaped = out * np.cos(np.pi * b * x) / safe
            limit = (np.pi / 4) * np.sinc(1.0 / (2 * b))
            out = np.where(sing, limit, shaped)
        if self.support_s is not None:
            out = np.where(np.abs(np.asarray(t, dtype=float)) <= self.support_s, out, 0.0)
        return out


@dataclass(frozen=True)
class ChannelTensor:
    taps: np.ndarray  # (N_R, N_T, D)
    sample_period_s: float

    def __post_init__(self):
        if self.taps.ndim != 3 or self.taps.shape[2] < 1:
            raise ShapeError(f"channel taps must be N_R x N_T x D, got {self.taps.shape}")
        if not np.all(np.isfinite(self.taps)):
            raise ValueError("channel taps must be finite")

    @property
    def d_taps(self) -> int:
        return self.taps.shape[2]


def steering_component(n: int, component: float, spacing_wavelengths: float = 0.5) -> np.ndarray:
    """Linear-array response ``exp(j 2 pi s k c)`` for ``k = 0..n-1``."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    if not np.isfinite(component) or abs(component) > 1.0 + UNIT_TOL:
        raise InvalidDirectionError(f"direction component {component} outside [-1, 1]")
    return np.exp(2j * np.pi * spacing_wavelengths * np.arange(n) * component)


def ura_response(geom: UraGeometry, direction: UnitDirection) -> np.ndarray:
    ax = steering_component(geom.nx, direction.x, geom.spacing_wavelengths)
    ay = steering_component(geom.ny, direction.y, geom.spacing_wavelengths)
    return np.kron(ax, ay)


def truncated_pulse(pulse: PulseShape, d_taps: int) -> PulseShape:
    """Pulse with support limited to ``|t| <= D * T_s``."""
    if pulse.support_s is not None:
        return pulse
    return PulseShape(pulse.kind, pulse.sample_period_s, pulse.rolloff,
                      support_s=d_taps * pulse.sample_period_s)


def build_channel(paths: Sequence[Path], geom_rx: UraGeometry, geom_tx: UraGeometry,
                  pulse: PulseShape, d_taps: int, clock_offset_s: float = 0.0) -> ChannelTensor:
    """Sum of ``gain * a_R a_T^H p(d T_s + tau_0 - tau)`` over paths, d = 0..D-1."""
    if d_taps < 1:
        raise ConfigError("d_taps must be >= 1")
    p = truncated_pulse(pulse, d_taps)
    taps = np.zeros((geom_rx.n, geom_tx.n, d_taps), dtype=complex)
    t = np.arange(d_taps) * pulse.sample_period_s + clock_offset_s
    for path in paths:
        a_r = ura_response(geom_rx, path.aoa)
        a_t = ura_response(geom_tx, path.aod)
        taps += path.gain * np.einsum("i,j,d->ijd", a_r, a_t.conj(), p(t - path.delay_s))
    return ChannelTensor(taps, pulse.sample_period_s)


def paths_to_records(paths: Iterable[Path]) -> list[dict]:
    return [
        {
            "gain_re": float(np.real(p.gain)),
            "gain_im": float(np.imag(p.gain)),
            "delay_s": float(p.delay_s),
            "aoa": [p.aoa.x, p.aoa.y, p.aoa.z],
            "aod": [p.aod.x, p.aod.y, p.aod.z],
        }
        for p in paths
    ]


def paths_from_records(records: Iterable[dict]) -> list[Path]:
    return [
        Path(complex(r["gain_re"], r["gain_im"]), float(r["delay_s"]),
             UnitDirection(*map(float, r["aoa"])), UnitDirection(*map(float, r["aod"])))
        for r in records
    ]


def dump_paths(paths: Iterable[Path]) -> str:
    return json.dumps(paths_to_records(paths))


def load_paths(text: str) -> list[Path]:
    return paths_from_records(json.loads(text))
