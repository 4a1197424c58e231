"""Greedy sparse recovery over the five-dimensional dictionary product.

``momp_solve`` never forms the Kronecker dictionary: correlations come from the
back-projected residual ``Phi^H r`` contracted one dimension at a time, and
atom norms from per-frame Gram matrices of the sensing factors.
``omp_solve`` is the classical baseline that scores every column of the
flattened ``Phi (Psi_1 x ... x Psi_5)`` matrix each iteration.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .channel import Path, UnitDirection
from .dictionaries import N_DIMS, DictionarySet, atom
from .errors import CapacityError, ConfigError, ShapeError
from .training import Observation, SensingTensor

log = logging.getLogger(__name__)

# delay first, then rx-x, rx-y, tx-x, tx-y
SWEEP_ORDER = (4, 0, 1, 2, 3)
TIE_RTOL = 1e-9
RANK_TOL = 1e-10
_LETTERS = "abcde"


@dataclass(frozen=True)
class SolverConfig:
    n_paths_max: int = 10
    refine_sweeps: int = 2
    mode: str = "alternating"
    residual_stop_ratio: float = 0.01
    init: str = "coarse"
    max_atoms: int = 2 ** 26
    max_cache_entries: int = 2 ** 26

    def __post_init__(self):
        if self.n_paths_max < 1 or self.refine_sweeps < 1:
            raise ConfigError("n_paths_max and refine_sweeps must be >= 1")
        if self.mode not in ("alternating", "exhaustive"):
            raise ConfigError(f"unknown solver mode {self.mode!r}")
        if self.init not in ("coarse", "flat"):
            raise ConfigError(f"unknown initialisation {self.init!r}")


@dataclass
class SparseEstimate:
    support: list[tuple[int, ...]]
    coeffs: np.ndarray
    residual_energy: float
    rank_deficient: bool = False
    residual_history: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "support": [list(map(int, j)) for j in self.support],
            "coeffs": [{"re": float(c.real), "im": float(c.imag)} for c in self.coeffs],
            "residual_energy": float(self.residual_energy),
        })

    @classmethod
    def from_json(cls, text: str) -> "SparseEstimate":
        d = json.loads(text)
        return cls([tuple(j) for j in d["support"]],
                   np.array([complex(c["re"], c["im"]) for c in d["coeffs"]]),
                   float(d["residual_energy"]))


def _check(y, phi: SensingTensor, dset: DictionarySet) -> np.ndarray:
    y = y.y if isinstance(y, Observation) else np.asarray(y)
    if y.shape != (phi.n_rows,):
        raise ShapeError(f"observation length {y.shape} does not match sensing rows {phi.n_rows}")
    if tuple(p.shape[0] for p in dset.psi) != phi.channel_shape:
        raise ShapeError(f"dictionary atom sizes {[p.shape[0] for p in dset.psi]} "
                         f"do not match channel shape {phi.channel_shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("observation contains non-finite samples")
    return y.astype(complex, copy=False)


def _factor_atom(phi: SensingTensor, factors) -> np.ndarray:
    f1, f2, f3, f4, f5 = factors
    a_r = np.kron(f1, f2)
    t = np.outer(np.kron(f3, f4), f5)
    g = phi.rx @ a_r
    k = np.einsum("td,mtqd->mq", t, phi.tx)
    return (g[:, :, None] * k[:, None, :]).reshape(-1)


def measured_atom(phi: SensingTensor, dset: DictionarySet, j) -> np.ndarray:
    """Observation-domain image of dictionary atom ``j``."""
    return _factor_atom(phi, atom(dset, j).factors)


def _argmax_lex(scores: np.ndarray):
    """Flat index of the maximum; near-ties resolve to the lowest index."""
    flat = scores.reshape(-1)
    best = flat.max() if flat.size else 0.0
    if not np.isfinite(best) or best <= 0:
        return None
    return int(np.flatnonzero(flat >= best * (1 - TIE_RTOL))[0])


def _scores(corr: np.ndarray, norms: np.ndarray) -> np.ndarray:
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, np.abs(corr) ** 2 / safe, 0.0)


def _greedy(y: np.ndarray, select: Callable, make_atom: Callable, cfg: SolverConfig) -> SparseEstimate:
    y_energy = float(np.vdot(y, y).real)
    support: list[tuple[int, ...]] = []
    cols: list[np.ndarray] = []
    coeffs = np.zeros(0, dtype=complex)
    r = y.copy()
    r_energy = y_energy
    history = [r_energy]
    rank_deficient = False
    while len(support) < cfg.n_paths_max:
        ratio = r_energy / y_energy if y_energy > 0 else 0.0
        if ratio <= cfg.residual_stop_ratio:
            break
        j = select(r)
        if j is None or j in support:
            break
        q = make_atom(j)
        trial = np.column_stack(cols + [q])
        sv = np.linalg.svd(trial, compute_uv=False)
        if sv[-1] <= RANK_TOL * sv[0]:
            rank_deficient = True
            log.debug("atom %s is numerically dependent on the support; stopping", j)
            break
        support.append(j)
        cols.append(q)
        coeffs = np.linalg.lstsq(trial, y, rcond=None)[0]
        r = y - trial @ coeffs
        r_energy = float(np.vdot(r, r).real)
        history.append(r_energy)
    return SparseEstimate(support, coeffs, r_energy, rank_deficient, history)


class _FactoredScorer:
    """Correlation and norm evaluation against the factored sensing operator."""

    def __init__(self, phi: SensingTensor, dset: DictionarySet):
        self.phi = phi
        self.psi = dset.psi
        self.sizes = phi.channel_shape
        n1, n2, n3, n4, n5 = self.sizes
        self.rx_gram = phi.rx_gram  # M x N_R x N_R
        self.tx_gram = phi.tx_gram  # M x (N_T D) x (N_T D)

    def backproject(self, r) -> np.ndarray:
        return self.phi.adjoint(r)

    def corr_along(self, g: np.ndarray, factors, k: int) -> np.ndarray:
        """Correlations of every atom in dimension ``k`` with the others fixed."""
        others = [i for i in range(N_DIMS) if i != k]
        subs = _LETTERS + "," + ",".join(_LETTERS[i] for i in others) + "->" + _LETTERS[k]
        v = np.einsum(subs, g, *[factors[i].conj() for i in others], optimize=True)
        return self.psi[k].conj().T @ v

    @staticmethod
    def _quad(gram: np.ndarray, v: np.ndarray) -> np.ndarray:
        return ((gram @ v) @ v.conj()).real

    def norms_along(self, factors, k: int) -> np.ndarray:
        """Squared norms of the measured atoms along dimension ``k``."""
        f = factors
        n1, n2, n3, n4, n5 = self.sizes
        if k < 2:
            w = self._quad(self.tx_gram, np.kron(np.kron(f[2], f[3]), f[4]))
            gram = np.tensordot(w, self.rx_gram, axes=1).reshape(n1, n2, n1, n2)
            other = f[1 - k]
            if k == 0:
                gamma = np.einsum("abcd,b,d->ac", gram, other.conj(), other)
            else:
                gamma = np.einsum("abcd,a,c->bd", gram, other.conj(), other)
        else:
            w = self._quad(self.rx_gram, np.kron(f[0], f[1]))
            gram = np.tensordot(w, self.tx_gram, axes=1).reshape(n3, n4, n5, n3, n4, n5)
            o = [i for i in (2, 3, 4) if i != k]
            ax = {2: "a", 3: "b", 4: "c"}
            bx = {2: "d", 3: "e", 4: "f"}
            subs = ("abcdef," + ax[o[0]] + "," + ax[o[1]] + "," + bx[o[0]] + "," + bx[o[1]]
                    + "->" + ax[k] + bx[k])
            gamma = np.einsum(subs, gram, f[o[0]].conj(), f[o[1]].conj(), f[o[0]], f[o[1]],
                              optimize=True)
        p = self.psi[k]
        return np.einsum("ia,ij,ja->a", p.conj(), gamma, p, optimize=True).real

    def full_corr(self, g: np.ndarray, psi) -> np.ndarray:
        out = g
        for k in range(N_DIMS):
            out = np.moveaxis(np.tensordot(out, psi[k].conj(), axes=([k], [0])), -1, k)
        return out

    def full_norms(self, psi) -> np.ndarray:
        """Norms of every atom of the (sub-)dictionary ``psi``, shape = atom counts."""
        m = self.phi.m_frames
        rx_atoms = np.kron(psi[0], psi[1])
        rxn = np.sum(np.abs(self.phi.rx @ rx_atoms) ** 2, axis=1)
        tx_atoms = np.kron(np.kron(psi[2], psi[3]), psi[4])
        n_t, q, d = self.phi.tx.shape[1:]
        mat = self.phi.tx.transpose(0, 1, 3, 2).reshape(m, n_t * d, q)
        txn = np.empty((m, tx_atoms.shape[1]))
        for i in range(m):
            txn[i] = np.sum(np.abs(tx_atoms.T @ mat[i]) ** 2, axis=1)
        shape = tuple(p.shape[1] for p in psi)
        return (rxn.T @ txn).reshape(shape)


def _exhaustive_selector(scorer: _FactoredScorer, dset: DictionarySet, cfg: SolverConfig):
    if dset.n_total > cfg.max_atoms:
        raise CapacityError(f"exhaustive scoring of {dset.n_total} atoms exceeds {cfg.max_atoms}")
    norms = scorer.full_norms(dset.psi)

    def select(r):
        corr = scorer.full_corr(scorer.backproject(r), dset.psi)
        idx = _argmax_lex(_scores(corr, norms))
        return None if idx is None else tuple(int(v) for v in np.unravel_index(idx, dset.shape))

    return select


def coarse_indices(n_atoms: int, n_size: int) -> np.ndarray:
    """About one atom per array element, taken from the fine grid."""
    idx = np.floor(np.arange(n_size) * n_atoms / n_size + 0.5).astype(int) % n_atoms
    return np.unique(idx)


def _alternating_selector(scorer: _FactoredScorer, dset: DictionarySet, cfg: SolverConfig):
    psi = dset.psi
    if cfg.init == "coarse":
        sub = [coarse_indices(p.shape[1], p.shape[0]) for p in psi]
        sub_psi = [p[:, s] for p, s in zip(psi, sub)]
        sub_norms = scorer.full_norms(sub_psi)

    def select(r):
        g = scorer.backproject(r)
        if cfg.init == "coarse":
            corr = scorer.full_corr(g, sub_psi)
            idx = _argmax_lex(_scores(corr, sub_norms))
            if idx is None:
                return None
            start = np.unravel_index(idx, sub_norms.shape)
            j = [int(s[i]) for s, i in zip(sub, start)]
            factors = [p[:, jk] for p, jk in zip(psi, j)]
        else:
            j = [None] * N_DIMS
            factors = [np.ones(p.shape[0], dtype=complex) for p in psi]
        for _ in range(cfg.refine_sweeps):
            for k in SWEEP_ORDER:
                s = _scores(scorer.corr_along(g, factors, k), scorer.norms_along(factors, k))
                best = _argmax_lex(s)
                if best is None:
                    return None
                j[k] = best
                factors[k] = psi[k][:, best]
        return tuple(j)

    return select


def momp_solve(y, phi: SensingTensor, dset: DictionarySet, cfg: SolverConfig = SolverConfig()) -> SparseEstimate:
    y = _check(y, phi, dset)
    scorer = _FactoredScorer(phi, dset)
    if cfg.mode == "exhaustive":
        select = _exhaustive_selector(scorer, dset, cfg)
    else:
        select = _alternating_selector(scorer, dset, cfg)
    return _greedy(y, select, lambda j: measured_atom(phi, dset, j), cfg)


def omp_solve(y, phi: SensingTensor, dset: DictionarySet, cfg: SolverConfig = SolverConfig()) -> SparseEstimate:
    """OMP over the Kronecker-flattened dictionary.

    The measured dictionary is held per frame as ``g_m (M_R x J_rx)`` and
    ``K_m (J_tx x Q)`` so that column ``(a, b)`` of frame ``m`` is
    ``outer(g_m[:, a], K_m[b])``; every one of the ``prod(N_a)`` columns is
    scored each iteration.
    """
    y = _check(y, phi, dset)
    if dset.n_total > cfg.max_atoms:
        raise CapacityError(f"flattened dictionary has {dset.n_total} atoms (limit {cfg.max_atoms})")
    psi = dset.psi
    psi_rx = np.kron(psi[0], psi[1])
    psi_tx = np.kron(np.kron(psi[2], psi[3]), psi[4])
    m = phi.m_frames
    cache = m * (psi_tx.shape[1] * phi.q_symbols + phi.m_rx_chains * psi_rx.shape[1])
    if cache > cfg.max_cache_entries or psi_tx.size > cfg.max_cache_entries:
        raise CapacityError(f"measured dictionary needs {cache} cached entries "
                            f"(limit {cfg.max_cache_entries})")
    n_t, q, d = phi.tx.shape[1:]
    mat = phi.tx.transpose(0, 1, 3, 2).reshape(m, n_t * d, q)
    g = phi.rx @ psi_rx  # M x M_R x J_rx
    k = np.einsum("xb,mxq->mbq", psi_tx, mat, optimize=True)  # M x J_tx x Q
    norms = np.einsum("ma,mb->ab", np.sum(np.abs(g) ** 2, axis=1), np.sum(np.abs(k) ** 2, axis=2))
    gh = g.conj().transpose(0, 2, 1)
    kh = k.conj().transpose(0, 2, 1)
    n_tx_atoms = psi_tx.shape[1]

    def select(r):
        r = r.reshape(m, phi.m_rx_chains, q)
        corr = np.zeros((psi_rx.shape[1], n_tx_atoms), dtype=complex)
        for i in range(m):
            corr += (gh[i] @ r[i]) @ kh[i]
        idx = _argmax_lex(_scores(corr, norms))
        return None if idx is None else tuple(int(v) for v in np.unravel_index(idx, dset.shape))

    # refits share measured_atom with momp_solve so equal supports give equal coefficients
    return _greedy(y, select, lambda j: measured_atom(phi, dset, j), cfg)


def extract_paths(est: SparseEstimate, dset: DictionarySet) -> list[Path]:
    """Physical paths (relative delays) from a recovered support.

    The z components are completed as ``+sqrt(1 - x^2 - y^2)``; grid points outside
    the unit disc are pulled onto its edge and marked ``clamped``.
    """
    out = []
    for j, c in zip(est.support, est.coeffs):
        info = atom(dset, j)
        dirs, clamped = [], False
        for x, y in (info.aoa_xy, info.aod_xy):
            r = np.hypot(x, y)
            if r > 1.0:
                x, y, clamped = x / r, y / r, True
            dirs.append(UnitDirection.from_xy(x, y))
        out.append(Path(complex(c), info.delay_s, dirs[0], dirs[1], clamped=clamped, relative=True))
    return out
