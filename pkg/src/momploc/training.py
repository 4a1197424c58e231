"""Training signal design, received-block simulation, whitening and the sensing operator.

Observation layout: ``y[m * M_R * Q + m_r * Q + q]``, i.e. ``y.reshape(M, M_R, Q)``.
Delay taps, symbols and frames are 0-based; tap ``d`` of the channel multiplies
pilot column ``q + D - 1 - d`` when producing received symbol ``q``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .channel import ChannelTensor
from .errors import ConfigError, DegenerateCombinerError, ShapeError


@dataclass(frozen=True)
class TrainingConfig:
    m_frames: int = 32
    m_tx_chains: int = 3
    m_rx_chains: int = 6
    q_symbols: int = 96
    d_taps: int = 64
    tx_power_w: float = 0.1
    noise_power_w: float = 10 ** (-84 / 10) * 1e-3
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("m_frames", "m_tx_chains", "m_rx_chains", "q_symbols", "d_taps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.tx_power_w < 0 or not self.noise_power_w >= 0:
            raise ConfigError("powers must be non-negative")

    @property
    def n_streams(self) -> int:
        return self.m_tx_chains


@dataclass(frozen=True)
class TrainingFrame:
    precoder: np.ndarray  # N_T x M_T
    combiner: np.ndarray  # N_R x M_R
    pilot: np.ndarray  # M_T x (Q + D)
    whitener: np.ndarray  # lower-triangular L, L L^H = W^H W

    @classmethod
    def create(cls, precoder, combiner, pilot) -> "TrainingFrame":
        return cls(precoder, combiner, pilot, cholesky_whitener(combiner))


@dataclass(frozen=True)
class Observation:
    y: np.ndarray
    m_frames: int
    m_rx_chains: int
    q_symbols: int

    def __post_init__(self):
        if self.y.shape != (self.m_frames * self.m_rx_chains * self.q_symbols,):
            raise ShapeError(f"observation length {self.y.shape} != M*M_R*Q")

    def blocks(self) -> np.ndarray:
        return self.y.reshape(self.m_frames, self.m_rx_chains, self.q_symbols)

    def energy(self) -> float:
        return float(np.vdot(self.y, self.y).real)


def dbm_to_watts(dbm: float) -> float:
    return 10 ** ((dbm - 30) / 10)


def make_pilots(cfg: TrainingConfig, pad_left: int, pad_right: int) -> np.ndarray:
    """First M_T Hadamard rows with zero padding; total width Q + D."""
    width = cfg.q_symbols + cfg.d_taps
    order = width - pad_left - pad_right
    if pad_left < 0 or pad_right < 0 or order < 1 or order & (order - 1):
        raise ConfigError(f"Hadamard block length {order} must be a positive power of two")
    if cfg.m_tx_chains > order:
        raise ConfigError(f"M_T={cfg.m_tx_chains} exceeds Hadamard order {order}")
    had = scipy.linalg.hadamard(order)[: cfg.m_tx_chains].astype(complex)
    s = np.zeros((cfg.m_tx_chains, width), dtype=complex)
    s[:, pad_left: pad_left + order] = had
    return s


def kron_dft(nx: int, ny: int) -> np.ndarray:
    return np.kron(scipy.linalg.dft(nx), scipy.linalg.dft(ny))


def codebook_columns(n: int, chains: int, group: int) -> np.ndarray:
    return (group * chains + np.arange(chains)) % n


def make_codebooks(cfg: TrainingConfig, n_tx: tuple[int, int], n_rx: tuple[int, int],
                   frame_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Round-robin Kronecker-DFT precoder/combiner for a 1-based frame index.

    The transmit column group advances every frame; the receive group advances
    once per full transmit cycle.
    """
    if frame_index < 1:
        raise ConfigError("frame_index is 1-based")
    dft_t = kron_dft(*n_tx)
    dft_r = kron_dft(*n_rx)
    n_t, n_r = dft_t.shape[0], dft_r.shape[0]
    if cfg.m_tx_chains > n_t or cfg.m_rx_chains > n_r:
        raise ConfigError("more RF chains than antennas")
    g_t = -(-n_t // cfg.m_tx_chains)
    g_r = -(-n_r // cfg.m_rx_chains)
    m = frame_index - 1
    f = dft_t[:, codebook_columns(n_t, cfg.m_tx_chains, m % g_t)]
    w = dft_r[:, codebook_columns(n_r, cfg.m_rx_chains, (m // g_t) % g_r)]
    return f, w


def cholesky_whitener(combiner: np.ndarray) -> np.ndarray:
    gram = combiner.conj().T @ combiner
    try:
        return np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCombinerError("W^H W is not positive definite") from exc


def make_frames(cfg: TrainingConfig, n_tx, n_rx, pilot: np.ndarray | None = None,
                pad_left: int | None = None, pad_right: int = 0) -> list[TrainingFrame]:
    if pilot is None:
        pilot = make_pilots(cfg, cfg.d_taps if pad_left is None else pad_left, pad_right)
    frames = []
    for m in range(1, cfg.m_frames + 1):
        f, w = make_codebooks(cfg, n_tx, n_rx, m)
        frames.append(TrainingFrame.create(f, w, pilot))
    return frames


def shifted_pilot(frame: TrainingFrame, q_symbols: int, d_taps: int) -> np.ndarray:
    """``out[t, q, d] = (F S)[t, q + D - 1 - d]``, shape N_T x Q x D."""
    fs = frame.precoder @ frame.pilot
    if fs.shape[1] != q_symbols + d_taps:
        raise ShapeError(f"pilot has {fs.shape[1]} columns, expected Q + D = {q_symbols + d_taps}")
    idx = np.arange(q_symbols)[:, None] + d_taps - 1 - np.arange(d_taps)[None, :]
    return fs[:, idx]


def frame_rngs(seed, m_frames: int) -> list[np.random.Generator]:
    """Independent per-frame generators derived from one seed."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(m_frames)]


def simulate_rx(channel: ChannelTensor, frame: TrainingFrame, cfg: TrainingConfig,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Received M_R x Q block: sqrt(P) sum_d W^H H_d F S_shift + W^H N."""
    h = channel.taps
    n_r, n_t, d = h.shape
    if d != cfg.d_taps:
        raise ShapeError(f"channel has {d} taps, config says {cfg.d_taps}")
    if frame.combiner.shape[0] != n_r or frame.precoder.shape[0] != n_t:
        raise ShapeError("precoder/combiner do not match the channel dimensions")
    s = shifted_pilot(frame, cfg.q_symbols, d)
    wh = frame.combiner.conj().T
    y = np.sqrt(cfg.tx_power_w) * np.einsum("ri,itd,tqd->rq", wh, h, s, optimize=True)
    if cfg.noise_power_w > 0:
        if rng is None:
            raise ValueError("an rng is required when noise_power_w > 0")
        scale = np.sqrt(cfg.noise_power_w / 2)
        noise = scale * (rng.standard_normal((n_r, cfg.q_symbols))
                         + 1j * rng.standard_normal((n_r, cfg.q_symbols)))
        y = y + wh @ noise
    return y


def whiten(frame: TrainingFrame, y_m: np.ndarray) -> np.ndarray:
    return scipy.linalg.solve_triangular(frame.whitener, y_m, lower=True)


def assemble_observation(frames: Sequence[TrainingFrame], received: Sequence[np.ndarray]) -> Observation:
    """Whitened blocks are expected; stacks them frame-major."""
    if len(frames) != len(received) or not received:
        raise ShapeError("need one received block per frame")
    shapes = {np.shape(r) for r in received}
    if len(shapes) != 1 or len(next(iter(shapes))) != 2:
        raise ShapeError(f"ragged received blocks: {shapes}")
    blocks = np.stack([np.asarray(r, dtype=complex) for r in received])
    m, m_r, q = blocks.shape
    return Observation(blocks.reshape(-1), m, m_r, q)


def split_observation(obs: Observation) -> list[np.ndarray]:
    return list(obs.blocks())


def observe(channel: ChannelTensor, frames: Sequence[TrainingFrame], cfg: TrainingConfig,
            seed=None) -> Observation:
    """Simulate, whiten and stack all frames. Frame m uses its own RNG substream."""
    rngs = frame_rngs(cfg.rng_seed if seed is None else seed, len(frames))
    blocks = [whiten(f, simulate_rx(channel, f, cfg, g)) for f, g in zip(frames, rngs)]
    return assemble_observation(frames, blocks)


class SensingTensor:
    """Factored sensing operator.

    ``phi[(m, m_r, q), i_r, i_t, d] = rx[m, m_r, i_r] * tx[m, i_t, q, d]`` where
    ``rx[m] = sqrt(P) L_m^{-1} W_m^H`` and ``tx[m, :, q, d] = (F_m S_m)[:, q + D - 1 - d]``.
    """

    def __init__(self, rx: np.ndarray, tx: np.ndarray, n_rx, n_tx):
        self.rx = rx  # M x M_R x N_R
        self.tx = tx  # M x N_T x Q x D
        self.n_rx = tuple(n_rx)
        self.n_tx = tuple(n_tx)
        m, self.m_rx_chains, n_r = rx.shape
        m2, n_t, self.q_symbols, self.d_taps = tx.shape
        if m != m2 or n_r != self.n_rx[0] * self.n_rx[1] or n_t != self.n_tx[0] * self.n_tx[1]:
            raise ShapeError("inconsistent sensing factors")
        self.m_frames = m
        self._rx_gram = None
        self._tx_gram = None

    @property
    def n_rows(self) -> int:
        return self.m_frames * self.m_rx_chains * self.q_symbols

    @property
    def channel_shape(self) -> tuple[int, int, int, int, int]:
        return (*self.n_rx, *self.n_tx, self.d_taps)

    def column(self, i) -> np.ndarray:
        """Materialise the column for channel multi-index (i1, i2, i3, i4, i5)."""
        i1, i2, i3, i4, i5 = i
        ir = i1 * self.n_rx[1] + i2
        it = i3 * self.n_tx[1] + i4
        return np.einsum("mr,mq->mrq", self.rx[:, :, ir], self.tx[:, it, :, i5]).reshape(-1)

    def dense(self, max_entries: int = 2 ** 24) -> np.ndarray:
        """Dense (rows x N_R^x x N_R^y x N_T^x x N_T^y x D) array; tiny instances only."""
        size = self.n_rows * int(np.prod(self.channel_shape))
        if size > max_entries:
            raise MemoryError(f"dense sensing tensor would hold {size} entries")
        full = np.einsum("mri,mtqd->mrqitd", self.rx, self.tx)
        return full.reshape(self.n_rows, *self.channel_shape)

    def apply(self, h: np.ndarray) -> np.ndarray:
        """Noiseless whitened observation of channel taps ``h`` (N_R x N_T x D)."""
        h = np.asarray(h).reshape(self.rx.shape[2], self.tx.shape[1], self.d_taps)
        return np.einsum("mri,itd,mtqd->mrq", self.rx, h, self.tx, optimize=True).reshape(-1)

    def adjoint(self, r: np.ndarray) -> np.ndarray:
        """Back-projection ``Phi^H r`` as an N_R^x x N_R^y x N_T^x x N_T^y x D tensor."""
        r = r.reshape(self.m_frames, self.m_rx_chains, self.q_symbols)
        g = np.einsum("mri,mrq->miq", self.rx.conj(), r)
        out = np.einsum("miq,mtqd->itd", g, self.tx.conj(), optimize=True)
        return out.reshape(self.channel_shape)

    @property
    def rx_gram(self) -> np.ndarray:
        """Per-frame ``rx^H rx``, M x N_R x N_R."""
        if self._rx_gram is None:
            self._rx_gram = np.matmul(self.rx.conj().transpose(0, 2, 1), self.rx)
        return self._rx_gram

    @property
    def tx_gram(self) -> np.ndarray:
        """Per-frame Gram over (i_t, d) such that ||sum t*tx||^2 = t^H G t; M x (N_T D) x (N_T D)."""
        if self._tx_gram is None:
            m, n_t, q, d = self.tx.shape
            mat = self.tx.transpose(0, 1, 3, 2).reshape(m, n_t * d, q)
            self._tx_gram = np.matmul(mat.conj(), mat.transpose(0, 2, 1))
        return self._tx_gram


def build_sensing(frames: Sequence[TrainingFrame], cfg: TrainingConfig, n_tx, n_rx) -> SensingTensor:
    rx = np.stack([
        np.sqrt(cfg.tx_power_w) * scipy.linalg.solve_triangular(f.whitener, f.combiner.conj().T, lower=True)
        for f in frames
    ])
    tx = np.stack([shifted_pilot(f, cfg.q_symbols, cfg.d_taps) for f in frames])
    return SensingTensor(rx, tx, n_rx, n_tx)


LAYOUT = "frame-rxchain-symbol"


def dump_observation(obs: Observation, path) -> None:
    """Write a length-prefixed JSON header followed by little-endian complex64 samples."""
    header = json.dumps({"M": obs.m_frames, "M_R": obs.m_rx_chains, "Q": obs.q_symbols,
                         "layout": LAYOUT}).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(obs.y.astype("<c8").tobytes())


def load_observation(path) -> Observation:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n))
        data = np.frombuffer(fh.read(), dtype="<c8")
    if header.get("layout") != LAYOUT:
        raise ValueError(f"unsupported layout {header.get('layout')!r}")
    return Observation(data.astype(complex), header["M"], header["M_R"], header["Q"])
