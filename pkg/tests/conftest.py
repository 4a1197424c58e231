import numpy as np
import pytest

from momploc.channel import PulseShape, UraGeometry, build_channel, Path, UnitDirection
from momploc.dictionaries import DictionaryConfig, build_dictionaries
from momploc.training import TrainingConfig, TrainingFrame, build_sensing, make_frames


def random_unit_phase(rng, *shape):
    return np.exp(2j * np.pi * rng.random(shape))


def random_frames(rng, cfg: TrainingConfig, n_r: int, n_t: int):
    """Frames with random phase-only precoders/combiners and random QPSK pilots."""
    frames = []
    for _ in range(cfg.m_frames):
        f = random_unit_phase(rng, n_t, cfg.m_tx_chains)
        w = random_unit_phase(rng, n_r, cfg.m_rx_chains)
        s = (rng.choice([-1, 1], (cfg.m_tx_chains, cfg.q_symbols + cfg.d_taps))
             + 1j * rng.choice([-1, 1], (cfg.m_tx_chains, cfg.q_symbols + cfg.d_taps))) / np.sqrt(2)
        frames.append(TrainingFrame.create(f, w, s))
    return frames


def brute_force_rx(h, frame, cfg):
    """Triple loop over taps, symbols and antennas; no vectorisation shared with the library."""
    n_r, n_t, d_taps = h.shape
    fs = frame.precoder @ frame.pilot
    out = np.zeros((frame.combiner.shape[1], cfg.q_symbols), dtype=complex)
    for q in range(cfg.q_symbols):
        acc = np.zeros(n_r, dtype=complex)
        for d in range(d_taps):
            col = q + d_taps - 1 - d
            for t in range(n_t):
                acc += h[:, t, d] * fs[t, col]
        out[:, q] = np.sqrt(cfg.tx_power_w) * (frame.combiner.conj().T @ acc)
    return out


class Tiny:
    """Small DFT-trained system used across solver tests."""

    def __init__(self, n_rx=(2, 2), n_tx=(2, 2), d_taps=4, k_res=2.0, m_frames=4, q=12,
                 m_t=2, m_r=2, power=1.0):
        self.cfg = TrainingConfig(m_frames=m_frames, m_tx_chains=m_t, m_rx_chains=m_r,
                                  q_symbols=q, d_taps=d_taps, tx_power_w=power, noise_power_w=0.0)
        order = 1 << int(np.log2(q))
        self.frames = make_frames(self.cfg, n_tx, n_rx, pad_left=d_taps, pad_right=q - order)
        self.phi = build_sensing(self.frames, self.cfg, n_tx, n_rx)
        self.rx_geom, self.tx_geom = UraGeometry(*n_rx), UraGeometry(*n_tx)
        self.pulse = PulseShape()
        self.dset = build_dictionaries(
            DictionaryConfig(k_res, d_taps, self.pulse.sample_period_s, self.rx_geom, self.tx_geom), self.pulse)

    def path(self, j, gain=1.0 + 0j, tau0=0.0) -> Path:
        g = self.dset.grids
        return Path(gain, tau0 + g[4][j[4]], UnitDirection.from_xy(g[0][j[0]], g[1][j[1]]),
                    UnitDirection.from_xy(g[2][j[2]], g[3][j[3]]))

    def disc_indices(self, rng, n=1, min_sep=0):
        """Random on-grid multi-indices whose angular grid points lie in the unit disc."""
        g = self.dset.grids
        out = []
        while len(out) < n:
            j = tuple(int(rng.integers(0, s)) for s in self.dset.shape)
            if g[0][j[0]] ** 2 + g[1][j[1]] ** 2 > 1 or g[2][j[2]] ** 2 + g[3][j[3]] ** 2 > 1:
                continue
            if any(max(abs(a - b) for a, b in zip(j, o)) < min_sep for o in out):
                continue
            out.append(j)
        return out

    def observe(self, paths, tau0=0.0):
        ch = build_channel(paths, self.rx_geom, self.tx_geom, self.pulse, self.cfg.d_taps, tau0)
        return self.phi.apply(ch.taps)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
