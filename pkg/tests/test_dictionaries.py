import json

import numpy as np
import pytest

from momploc.channel import Path, PulseShape, UnitDirection, UraGeometry, build_channel
from momploc.dictionaries import (DictionaryConfig, atom, atom_channel, build_dictionaries, n_atoms,
                                  nearest_index)
from momploc.errors import ConfigError


def _dset(k_res=1.0, rx=(2, 2), tx=(2, 2), d=4):
    cfg = DictionaryConfig(k_res, d, 1e-9, UraGeometry(*rx), UraGeometry(*tx))
    return build_dictionaries(cfg, PulseShape())


def test_atom_counts():
    assert n_atoms(1.6, 3) == 5
    assert n_atoms(1.6, 6) == 10
    assert n_atoms(128, 64) == 8192
    assert _dset(1.5, (2, 3), (1, 2), 4).shape == (3, 5, 2, 3, 6)
    with pytest.raises(ConfigError):
        DictionaryConfig(0.5, 4, 1e-9, UraGeometry(2, 2), UraGeometry(2, 2))


def test_unit_modulus_and_zero_grid_point():
    ds = _dset()
    assert ds.psi[0].shape == (2, 2)
    for p in ds.psi[:4]:
        np.testing.assert_allclose(np.abs(p), 1.0)
    ds4 = _dset(4.0)
    k = int(np.flatnonzero(ds4.grids[0] == 0.0)[0])
    np.testing.assert_allclose(ds4.psi[0][:, k], 1.0)


def test_delay_dictionary_canonical_columns():
    cfg = DictionaryConfig(16, 64, 1e-9, UraGeometry(1, 1), UraGeometry(1, 1))
    ds = build_dictionaries(cfg, PulseShape())
    assert ds.psi[4].shape == (64, 1024)
    for d0 in (0, 1, 17, 63):
        np.testing.assert_array_equal(ds.psi[4][:, 16 * d0], np.eye(64)[d0])


@pytest.mark.parametrize("n", [2, 4, 8])
def test_kres1_dictionaries_are_dft(n):
    ds = _dset(1.0, (n, n), (n, n))
    for p in ds.psi[:4]:
        np.testing.assert_allclose(p.conj().T @ p, n * np.eye(n), atol=1e-10)


def test_first_atom_and_round_trip(rng):
    ds = _dset(2.0, (3, 2), (2, 3), 5)
    info = atom(ds, (0, 0, 0, 0, 0))
    assert info.aoa_xy == (-1.0, -1.0) and info.aod_xy == (-1.0, -1.0) and info.delay_s == 0.0
    for _ in range(50):
        j = tuple(int(rng.integers(0, s)) for s in ds.shape)
        a = atom(ds, j)
        assert nearest_index(ds, a.aoa_xy, a.aod_xy, a.delay_s) == j
    with pytest.raises(IndexError):
        atom(ds, (0, 0, 0, 0, 99))


def test_atom_channel_matches_product_form(rng):
    ds = _dset(2.0, (3, 2), (2, 2), 5)
    for _ in range(10):
        j = tuple(int(rng.integers(0, s)) for s in ds.shape)
        f = atom(ds, j).factors
        h = atom_channel(ds, j)
        n_ry, n_ty = 2, 2
        for i1, i2, i3, i4, d in [tuple(int(rng.integers(0, s)) for s in (3, 2, 2, 2, 5)) for _ in range(20)]:
            expect = f[0][i1] * f[1][i2] * f[2][i3] * f[3][i4] * f[4][d]
            assert h[i1 * n_ry + i2, i3 * n_ty + i4, d] == pytest.approx(expect, abs=1e-14)


def test_on_grid_channel_has_exact_sparse_representation(rng):
    ds = _dset(2.0, (2, 3), (2, 2), 6)
    g = ds.grids
    picked, paths, coeffs = [], [], []
    while len(picked) < 3:
        j = tuple(int(rng.integers(0, s)) for s in ds.shape)
        if g[0][j[0]] ** 2 + g[1][j[1]] ** 2 > 1 or g[2][j[2]] ** 2 + g[3][j[3]] ** 2 > 1 or j in picked:
            continue
        c = complex(*rng.standard_normal(2))
        picked.append(j)
        coeffs.append(c)
        paths.append(Path(c, g[4][j[4]], UnitDirection.from_xy(g[0][j[0]], g[1][j[1]]),
                          UnitDirection.from_xy(g[2][j[2]], g[3][j[3]])))
    h = build_channel(paths, UraGeometry(2, 3), UraGeometry(2, 2), PulseShape(), 6).taps
    recon = sum(c * atom_channel(ds, j) for c, j in zip(coeffs, picked))
    assert np.linalg.norm(h - recon) < 1e-10 * np.linalg.norm(h)


def test_grids_json():
    ds = _dset(1.0)
    d = json.loads(ds.to_json())
    assert d["rx_x"] == [-1.0, 0.0] and len(d["delay"]) == 4
