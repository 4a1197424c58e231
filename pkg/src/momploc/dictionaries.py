"""Per-dimension sparsifying dictionaries over uniform parameter grids.

Dimension order everywhere: (rx-x, rx-y, tx-x, tx-y, delay). Multi-indices are
0-based tuples ``(j1, j2, j3, j4, j5)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .channel import PulseShape, UraGeometry, steering_component, truncated_pulse
from .errors import ConfigError

N_DIMS = 5
DIM_NAMES = ("rx_x", "rx_y", "tx_x", "tx_y", "delay")


def n_atoms(k_res: float, n_s: int) -> int:
    return int(np.floor(k_res * n_s + 0.5))


@dataclass(frozen=True)
class DictionaryConfig:
    k_res: float
    d_taps: int
    sample_period_s: float
    rx_geom: UraGeometry
    tx_geom: UraGeometry

    def __post_init__(self):
        if not self.k_res >= 1:
            raise ConfigError(f"k_res must be >= 1, got {self.k_res}")
        if self.d_taps < 1:
            raise ConfigError("d_taps must be >= 1")

    @property
    def atom_sizes(self) -> tuple[int, ...]:
        return (self.rx_geom.nx, self.rx_geom.ny, self.tx_geom.nx, self.tx_geom.ny, self.d_taps)

    @property
    def atom_counts(self) -> tuple[int, ...]:
        return tuple(n_atoms(self.k_res, n) for n in self.atom_sizes)


@dataclass(frozen=True)
class AtomInfo:
    aoa_xy: tuple[float, float]
    aod_xy: tuple[float, float]
    delay_s: float
    factors: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class DictionarySet:
    psi: tuple[np.ndarray, ...]
    grids: tuple[np.ndarray, ...]
    config: DictionaryConfig

    @property
    def shape(self) -> tuple[int, ...]:
        """Atom counts per dimension."""
        return tuple(p.shape[1] for p in self.psi)

    @property
    def n_total(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def check_index(self, j) -> tuple[int, ...]:
        j = tuple(int(v) for v in j)
        if len(j) != N_DIMS or any(not 0 <= v < n for v, n in zip(j, self.shape)):
            raise IndexError(f"multi-index {j} outside dictionary shape {self.shape}")
        return j

    def to_json(self) -> str:
        return json.dumps({name: g.tolist() for name, g in zip(DIM_NAMES, self.grids)})


def angular_grid(n: int) -> np.ndarray:
    """``n`` points uniformly covering [-1, 1)."""
    return -1.0 + 2.0 * np.arange(n) / n


def delay_grid(n: int, d_taps: int, sample_period_s: float) -> np.ndarray:
    return np.arange(n) * (d_taps * sample_period_s / n)


def delay_response(pulse: PulseShape, d_taps: int, delays) -> np.ndarray:
    """Sampled pulse ``p(d T_s - tau)``; columns follow ``delays``."""
    p = truncated_pulse(pulse, d_taps)
    t = np.arange(d_taps)[:, None] * pulse.sample_period_s - np.asarray(delays, dtype=float)[None, :]
    return p(t)


def steering_matrix(n: int, grid: np.ndarray, spacing: float) -> np.ndarray:
    return np.exp(2j * np.pi * spacing * np.arange(n)[:, None] * grid[None, :])


def build_dictionaries(cfg: DictionaryConfig, pulse: PulseShape) -> DictionarySet:
    n1, n2, n3, n4, n5 = cfg.atom_counts
    grids = (angular_grid(n1), angular_grid(n2), angular_grid(n3), angular_grid(n4),
             delay_grid(n5, cfg.d_taps, cfg.sample_period_s))
    rx, tx = cfg.rx_geom, cfg.tx_geom
    psi = (
        steering_matrix(rx.nx, grids[0], rx.spacing_wavelengths),
        steering_matrix(rx.ny, grids[1], rx.spacing_wavelengths),
        steering_matrix(tx.nx, grids[2], tx.spacing_wavelengths).conj(),
        steering_matrix(tx.ny, grids[3], tx.spacing_wavelengths).conj(),
        delay_response(pulse, cfg.d_taps, grids[4]),
    )
    return DictionarySet(psi, grids, cfg)


def atom(dset: DictionarySet, j) -> AtomInfo:
    j = dset.check_index(j)
    g = dset.grids
    return AtomInfo(
        aoa_xy=(float(g[0][j[0]]), float(g[1][j[1]])),
        aod_xy=(float(g[2][j[2]]), float(g[3][j[3]])),
        delay_s=float(g[4][j[4]]),
        factors=tuple(p[:, jk] for p, jk in zip(dset.psi, j)),
    )


def atom_channel(dset: DictionarySet, j) -> np.ndarray:
    """Channel taps (N_R x N_T x D) of a single unit-coefficient atom."""
    f = atom(dset, j).factors
    h = np.einsum("a,b,c,d,e->abcde", *f)
    n_r, n_t = f[0].size * f[1].size, f[2].size * f[3].size
    return h.reshape(n_r, n_t, f[4].size)


def nearest_index(dset: DictionarySet, aoa_xy, aod_xy, delay_s) -> tuple[int, ...]:
    """Quantise continuous parameters to the closest grid multi-index."""
    values = (*aoa_xy, *aod_xy, delay_s)
    out = []
    for k, (grid, v) in enumerate(zip(dset.grids, values)):
        if k < 4:
            # angular grids wrap around at +/-1
            step = 2.0 / grid.size
            out.append(int(np.floor((v + 1.0) / step + 0.5)) % grid.size)
        else:
            out.append(int(np.argmin(np.abs(grid - v))))
    return tuple(out)
