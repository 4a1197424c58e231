"""End-to-end experiments: scene -> training -> recovery -> localization -> metrics.

One JSON document configures a run. Every user draws its clock offset and noise
from a generator seeded by ``(seed, user)``, so rows do not depend on the order
or the process in which users are handled.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path as FsPath

import numpy as np

from .channel import Path, PulseShape, UnitDirection, UraGeometry, build_channel, dump_paths
from .dictionaries import DictionaryConfig, DictionarySet, build_dictionaries
from .errors import ConfigError, UnlocalizableError
from .localization import ClassifierConfig, PathLabel, classify, solve_position
from .scene import (RoomScene, associate_ap, sample_clock_offset, scene_from_dict, to_room_frame,
                    trace_labeled)
from .solver import SolverConfig, SparseEstimate, extract_paths, momp_solve, omp_solve
from .training import (SensingTensor, TrainingConfig, build_sensing, dbm_to_watts,
                       dump_observation, make_frames, observe)

log = logging.getLogger(__name__)

METHODS = {"MOMP": momp_solve, "OMP": omp_solve}
CSV_COLUMNS = ("user", "ap", "method", "k_res", "aoa_err_deg", "aod_err_deg", "loc_err_m",
               "runtime_s", "status", "rx_array")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    k_res: tuple[float, ...]

    def __post_init__(self):
        if self.name not in METHODS:
            raise ConfigError(f"unknown method {self.name!r}; expected one of {sorted(METHODS)}")
        if not self.k_res or any(not k >= 1 for k in self.k_res):
            raise ConfigError(f"K_res values must be >= 1, got {list(self.k_res)}")


@dataclass(frozen=True)
class ExperimentConfig:
    scene: dict = field(default_factory=lambda: {"preset": "default"})
    users: tuple[int, ...] | None = None
    training: TrainingConfig = TrainingConfig()
    hadamard_order: int = 64
    pad_left: int | None = None
    tx_array: tuple[int, int] = (3, 3)
    rx_arrays: tuple[tuple[int, int], ...] = ((6, 6),)
    match_rx_chains: bool = False
    sample_period_s: float = 1e-9
    pulse: str = "sinc"
    methods: tuple[MethodSpec, ...] = (MethodSpec("MOMP", (128.0,)), MethodSpec("OMP", (1.6,)))
    solver: SolverConfig = SolverConfig()
    classifier: ClassifierConfig = ClassifierConfig()
    clock_offset_range_s: float = 16e-9
    noise: str = "normal"  # "normal" | "none" | "inf"
    snap_to_grid: bool = False
    seed: int = 0
    out: str = "results"
    workers: int = 1
    record_runtime: bool = False
    max_failure_rate: float = 1.0

    def __post_init__(self):
        if self.noise not in ("normal", "none", "inf"):
            raise ConfigError(f"noise must be normal, none or inf; got {self.noise!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 <= self.max_failure_rate <= 1:
            raise ConfigError("max_failure_rate must lie in [0, 1]")
        for shape in (self.tx_array, *self.rx_arrays):
            if len(shape) != 2 or min(shape) < 1:
                raise ConfigError(f"array shape must be two positive ints, got {shape}")
        if not self.rx_arrays:
            raise ConfigError("at least one rx array is required")
        pilot_pads(self)  # raises on an impossible Hadamard layout

    def with_overrides(self, seed=None, out=None) -> "ExperimentConfig":
        kw = {}
        if seed is not None:
            kw["seed"] = int(seed)
        if out is not None:
            kw["out"] = str(out)
        return replace(self, **kw)


def _build(cls, d: dict, name: str):
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad {name} section: {exc}") from exc


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    kw = {}
    if "training" in d:
        t = dict(d.pop("training"))
        if "tx_power_dbm" in t:
            t["tx_power_w"] = dbm_to_watts(float(t.pop("tx_power_dbm")))
        if "noise_power_dbm" in t:
            t["noise_power_w"] = dbm_to_watts(float(t.pop("noise_power_dbm")))
        for key in ("hadamard_order", "pad_left"):
            if key in t:
                kw[key] = t.pop(key)
        kw["training"] = _build(TrainingConfig, t, "training")
    if "arrays" in d:
        a = d.pop("arrays")
        kw["tx_array"] = tuple(a.get("tx", (3, 3)))
        rx = a.get("rx", [(6, 6)])
        rx = [rx] if rx and isinstance(rx[0], int) else rx
        kw["rx_arrays"] = tuple(tuple(r) for r in rx)
        kw["match_rx_chains"] = bool(a.get("match_rx_chains", False))
    if "methods" in d:
        kw["methods"] = tuple(MethodSpec(m["name"], tuple(float(k) for k in np.atleast_1d(m["k_res"])))
                              for m in d.pop("methods"))
    if "solver" in d:
        kw["solver"] = _build(SolverConfig, d.pop("solver"), "solver")
    if "classifier" in d:
        kw["classifier"] = _build(ClassifierConfig, d.pop("classifier"), "classifier")
    if "users" in d:
        u = d.pop("users")
        if isinstance(u, dict):
            u = range(u.get("start", 0), u["stop"], u.get("step", 1))
        kw["users"] = None if u is None else tuple(int(v) for v in u)
    if "dictionary" in d:
        dd = dict(d.pop("dictionary"))
        kw["sample_period_s"] = float(dd.pop("sample_period_s", 1e-9))
        kw["pulse"] = dd.pop("pulse", "sinc")
        if dd:
            raise ConfigError(f"unknown dictionary keys {sorted(dd)}")
    kw.update(d)
    return _build(ExperimentConfig, kw, "top-level")


def load_config(path) -> ExperimentConfig:
    try:
        text = FsPath(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(d)


def pilot_pads(cfg: ExperimentConfig) -> tuple[int, int]:
    t = cfg.training
    left = t.d_taps if cfg.pad_left is None else cfg.pad_left
    right = t.q_symbols + t.d_taps - left - cfg.hadamard_order
    order = cfg.hadamard_order
    if right < 0 or order < 1 or order & (order - 1):
        raise ConfigError(f"Hadamard order {order} with left padding {left} does not fit "
                          f"Q + D = {t.q_symbols + t.d_taps} columns")
    return left, right


def angular_error(a: UnitDirection, b: UnitDirection) -> float:
    """Angle between two directions in degrees."""
    dot = float(np.dot(a.as_array(), b.as_array()))
    return float(np.degrees(np.arccos(np.clip(dot, -1.0, 1.0))))


@dataclass
class MetricsRow:
    user: int
    ap: int
    method: str
    k_res: float
    aoa_err_deg: float = math.nan
    aod_err_deg: float = math.nan
    loc_err_m: float = math.nan
    runtime_s: float = math.nan
    status: str = "ok"
    rx_array: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def csv_fields(self) -> list[str]:
        def num(v):
            return "nan" if not np.isfinite(v) else repr(float(v))
        return [str(self.user), str(self.ap), self.method, repr(float(self.k_res)), num(self.aoa_err_deg),
                num(self.aod_err_deg), num(self.loc_err_m), num(self.runtime_s), self.status, self.rx_array]


# per-process caches; frames and dictionaries are deterministic in the config
@lru_cache(maxsize=8)
def _sensing(training: TrainingConfig, tx: tuple, rx: tuple, pads: tuple) -> tuple[list, SensingTensor]:
    frames = make_frames(training, tx, rx, pad_left=pads[0], pad_right=pads[1])
    return frames, build_sensing(frames, training, tx, rx)


@lru_cache(maxsize=16)
def _dictionary(k_res: float, d_taps: int, ts: float, rx: tuple, tx: tuple, pulse: str) -> DictionarySet:
    cfg = DictionaryConfig(k_res, d_taps, ts, UraGeometry(*rx), UraGeometry(*tx))
    return build_dictionaries(cfg, PulseShape(pulse, ts))


def training_for(cfg: ExperimentConfig, rx: tuple) -> TrainingConfig:
    t = cfg.training
    if cfg.match_rx_chains:
        t = replace(t, m_rx_chains=rx[0])
    if cfg.noise == "none":
        t = replace(t, noise_power_w=0.0)
    elif cfg.noise == "inf":
        t = replace(t, noise_power_w=math.inf)
    return t


def user_rngs(seed: int, user: int) -> tuple[np.random.Generator, np.random.SeedSequence]:
    """Clock-offset generator and noise seed for one user."""
    offset_ss, noise_ss = np.random.SeedSequence([seed, user]).spawn(2)
    return np.random.default_rng(offset_ss), noise_ss


def scene_for(cfg: ExperimentConfig) -> RoomScene:
    d = dict(cfg.scene)
    d.setdefault("seed", cfg.seed)
    return scene_from_dict(d)


def _disc_point(gx: np.ndarray, gy: np.ndarray, x: float, y: float) -> tuple[float, float]:
    """Nearest grid point (wrapping at +/-1) that lies in the closed unit disc."""
    gxx, gyy = np.meshgrid(gx, gy, indexing="ij")
    dx = np.abs((gxx - x + 1.0) % 2.0 - 1.0)
    dy = np.abs((gyy - y + 1.0) % 2.0 - 1.0)
    d = np.where(gxx ** 2 + gyy ** 2 <= 1.0, dx ** 2 + dy ** 2, np.inf)
    i = np.unravel_index(np.argmin(d), d.shape)
    return float(gxx[i]), float(gyy[i])


def _snap(paths: list[Path], dset: DictionarySet, tau0: float) -> list[Path]:
    """Move every path onto the dictionary grid (directions and delay relative to ``tau0``)."""
    g = dset.grids
    out = []
    for p in paths:
        aoa = UnitDirection.from_xy(*_disc_point(g[0], g[1], p.aoa.x, p.aoa.y))
        aod = UnitDirection.from_xy(*_disc_point(g[2], g[3], p.aod.x, p.aod.y))
        j5 = int(np.argmin(np.abs(g[4] - (p.delay_s - tau0))))
        out.append(Path(p.gain, tau0 + float(g[4][j5]), aoa, aod))
    return out


@dataclass
class UserCase:
    """Everything one user contributes before recovery."""
    user: int
    ap: int
    position: np.ndarray  # relative to the serving AP
    paths: list[Path]  # array frames, absolute delays
    labels: list[PathLabel]
    clock_offset_s: float
    ap_rotation: np.ndarray
    user_rotation: np.ndarray


def prepare_user(cfg: ExperimentConfig, scene: RoomScene, user: int, snap_dset: DictionarySet | None = None):
    ap = associate_ap(scene, user)
    traced = trace_labeled(scene, ap, user)
    if not traced:
        raise UnlocalizableError(f"user {user} sees no path from AP {ap}", np.eye(4))
    paths = [p for p, _ in traced]
    labels = [lab for _, lab in traced]
    rng, _ = user_rngs(cfg.seed, user)
    tau0 = min(p.delay_s for p in paths) - sample_clock_offset(rng, cfg.clock_offset_range_s)
    if snap_dset is not None:
        paths = _snap(paths, snap_dset, tau0)
    pos = np.asarray(scene.users[user], float) - np.asarray(scene.aps[ap].position, float)
    if snap_dset is not None:
        # snapped geometry no longer matches the room; score against the exact fix
        # the pipeline would compute from the snapped paths themselves
        room = to_room_frame(paths, scene.aps[ap].rotation, scene.user_rotation)
        rel = [Path(p.gain, p.delay_s - tau0, p.aoa, p.aod, relative=True) for p in room]
        pos = solve_position(rel, [classify(p, cfg.classifier) for p in rel]).u
    return UserCase(user, ap, pos, paths, labels, tau0, scene.aps[ap].rotation, scene.user_rotation)


def _main_path(paths):
    return max(paths, key=lambda p: abs(p.gain))


def score(case: UserCase, est: SparseEstimate, dset: DictionarySet, cfg: ExperimentConfig, row: MetricsRow):
    """Fill the error columns of ``row``; returns the fix (or None)."""
    rec = extract_paths(est, dset)
    if not rec:
        row.status = "no_paths"
        return None
    truth, found = _main_path(case.paths), _main_path(rec)
    row.aoa_err_deg = angular_error(found.aoa, truth.aoa)
    row.aod_err_deg = angular_error(found.aod, truth.aod)
    room = to_room_frame(rec, case.ap_rotation, case.user_rotation)
    labels = [classify(p, cfg.classifier) for p in room]
    try:
        fix = solve_position(room, labels)
    except UnlocalizableError:
        row.status = "unlocalizable"
        return None
    row.loc_err_m = float(np.linalg.norm(fix.u - case.position))
    return fix


def observe_user(cfg: ExperimentConfig, case: UserCase, rx: tuple):
    training = training_for(cfg, rx)
    frames, phi = _sensing(training, tuple(cfg.tx_array), rx, pilot_pads(cfg))
    pulse = PulseShape(cfg.pulse, cfg.sample_period_s)
    ch = build_channel(case.paths, UraGeometry(*rx), UraGeometry(*cfg.tx_array), pulse,
                       training.d_taps, case.clock_offset_s)
    _, noise_ss = user_rngs(cfg.seed, case.user)
    # the same noise realisation feeds every method and K_res of this user
    with np.errstate(invalid="ignore", over="ignore"):
        y = observe(ch, frames, training, seed=noise_ss)
    return y, phi, training


def run_user(cfg: ExperimentConfig, user: int) -> list[MetricsRow]:
    scene = scene_for(cfg)
    rows = []
    for rx in cfg.rx_arrays:
        rx = tuple(rx)
        tag = f"{rx[0]}x{rx[1]}"
        case = None
        try:
            snap = None
            if cfg.snap_to_grid:
                m0 = cfg.methods[0]
                snap = _dictionary(m0.k_res[0], cfg.training.d_taps, cfg.sample_period_s, rx,
                                   tuple(cfg.tx_array), cfg.pulse)
            case = prepare_user(cfg, scene, user, snap)
            y, phi, training = observe_user(cfg, case, rx)
        except Exception as exc:  # noqa: BLE001 - isolate the user
            log.warning("user %d (%s) failed before recovery: %s", user, tag, exc)
            for m in cfg.methods:
                for k in m.k_res:
                    rows.append(MetricsRow(user, -1 if case is None else case.ap, m.name, k,
                                           status=f"error:{type(exc).__name__}", rx_array=tag))
            continue
        for m in cfg.methods:
            for k in m.k_res:
                row = MetricsRow(user, case.ap, m.name, k, rx_array=tag)
                try:
                    dset = _dictionary(k, training.d_taps, cfg.sample_period_s, rx, tuple(cfg.tx_array),
                                       cfg.pulse)
                    t = time.perf_counter()
                    est = METHODS[m.name](y, phi, dset, cfg.solver)
                    if cfg.record_runtime:
                        row.runtime_s = time.perf_counter() - t
                    score(case, est, dset, cfg, row)
                except Exception as exc:  # noqa: BLE001
                    log.warning("user %d %s K_res=%g failed: %s", user, m.name, k, exc)
                    row.status = f"error:{type(exc).__name__}"
                rows.append(row)
    return rows


def _run_user_safe(args):
    cfg, user = args
    try:
        return run_user(cfg, user)
    except Exception as exc:  # noqa: BLE001
        return [MetricsRow(user, -1, m.name, k, status=f"error:{type(exc).__name__}", rx_array=f"{r[0]}x{r[1]}")
                for r in cfg.rx_arrays for m in cfg.methods for k in m.k_res]


def user_ids(cfg: ExperimentConfig, scene: RoomScene | None = None) -> list[int]:
    scene = scene_for(cfg) if scene is None else scene
    n = len(scene.users)
    users = list(range(n)) if cfg.users is None else list(cfg.users)
    bad = [u for u in users if not 0 <= u < n]
    if bad:
        raise ConfigError(f"user ids {bad} outside the scene's {n} users")
    return users


def run_experiment(cfg: ExperimentConfig) -> list[MetricsRow]:
    users = user_ids(cfg)
    jobs = [(cfg, u) for u in users]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            chunks = list(pool.map(_run_user_safe, jobs))
    else:
        chunks = [_run_user_safe(j) for j in jobs]
    rows = [r for c in chunks for r in c]
    order = {(m.name, k): i for i, (m, k) in enumerate((m, k) for m in cfg.methods for k in m.k_res)}
    arrays = [f"{r[0]}x{r[1]}" for r in cfg.rx_arrays]
    rows.sort(key=lambda r: (r.user, arrays.index(r.rx_array), order[(r.method, r.k_res)]))
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def _stat(values, fn):
    v = np.asarray([x for x in values if np.isfinite(x)], float)
    return float(fn(v)) if v.size else None


def summarize(rows) -> dict:
    """Medians, 90th percentiles, failure rates and CDF samples per group."""
    rows = list(rows)
    if not rows:
        raise ValueError("summarize needs at least one row")
    groups = {}
    for r in rows:
        groups.setdefault((r.method, float(r.k_res), r.rx_array), []).append(r)
    out = []
    for (method, k, arr), rs in groups.items():
        good = [r for r in rs if r.ok]
        loc = sorted(r.loc_err_m for r in good)
        out.append({
            "method": method, "k_res": k, "rx_array": arr, "n": len(rs),
            "failure_rate": 1.0 - len(good) / len(rs),
            "median_aoa_err_deg": _stat([r.aoa_err_deg for r in good], np.median),
            "median_aod_err_deg": _stat([r.aod_err_deg for r in good], np.median),
            "median_loc_err_m": _stat(loc, np.median),
            "p90_loc_err_m": _stat(loc, lambda v: np.percentile(v, 90)),
            "mean_runtime_s": _stat([r.runtime_s for r in good], np.mean),
            "loc_cdf": {"error_m": loc, "p": [(i + 1) / len(loc) for i in range(len(loc))]},
        })
    n_bad = sum(not r.ok for r in rows)
    return {"groups": out, "n_rows": len(rows), "failure_rate": n_bad / len(rows)}


def write_results(rows, cfg: ExperimentConfig) -> dict:
    out = FsPath(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(rows_to_csv(rows))
    summary = summarize(rows)
    (out / "summary.json").write_text(json.dumps(summary, indent=1, allow_nan=False,
                                                 default=float) + "\n")
    return summary


def bench(cfg: ExperimentConfig, repeats: int = 3, user: int | None = None) -> list[dict]:
    """Best-of-``repeats`` solver time per method and K_res on one user."""
    scene = scene_for(cfg)
    user = user_ids(cfg, scene)[0] if user is None else user
    out = []
    for rx in cfg.rx_arrays:
        rx = tuple(rx)
        case = prepare_user(cfg, scene, user)
        y, phi, training = observe_user(cfg, case, rx)
        for m in cfg.methods:
            for k in m.k_res:
                dset = _dictionary(k, training.d_taps, cfg.sample_period_s, rx, tuple(cfg.tx_array), cfg.pulse)
                times = []
                for _ in range(repeats):
                    # fresh sensing tensor so cached Gram matrices count toward the time
                    phi_r = SensingTensor(phi.rx, phi.tx, phi.n_rx, phi.n_tx)
                    t = time.perf_counter()
                    METHODS[m.name](y, phi_r, dset, cfg.solver)
                    times.append(time.perf_counter() - t)
                out.append({"method": m.name, "k_res": k, "rx_array": f"{rx[0]}x{rx[1]}",
                            "atoms": dset.n_total, "best_s": min(times), "times_s": times})
    return out


def trace_user(cfg: ExperimentConfig, user: int, out_dir=None) -> FsPath:
    """Dump ground truth, observation, estimates and fixes of one user."""
    scene = scene_for(cfg)
    user_ids(replace(cfg, users=(user,)), scene)
    out = FsPath(out_dir or FsPath(cfg.out) / f"trace_user{user}")
    out.mkdir(parents=True, exist_ok=True)
    for rx in cfg.rx_arrays:
        rx = tuple(rx)
        tag = f"{rx[0]}x{rx[1]}"
        case = prepare_user(cfg, scene, user)
        (out / f"truth_{tag}.json").write_text(json.dumps({
            "user": user, "ap": case.ap, "position_rel_ap": case.position.tolist(),
            "clock_offset_s": case.clock_offset_s, "labels": [lab.value for lab in case.labels],
            "paths": json.loads(dump_paths(case.paths))}, indent=1))
        y, phi, training = observe_user(cfg, case, rx)
        dump_observation(y, out / f"observation_{tag}.bin")
        for m in cfg.methods:
            for k in m.k_res:
                dset = _dictionary(k, training.d_taps, cfg.sample_period_s, rx, tuple(cfg.tx_array), cfg.pulse)
                name = f"{m.name}_k{k:g}_{tag}"
                row = MetricsRow(user, case.ap, m.name, k, rx_array=tag)
                try:
                    est = METHODS[m.name](y, phi, dset, cfg.solver)
                except Exception as exc:  # noqa: BLE001
                    (out / f"{name}_error.txt").write_text(f"{type(exc).__name__}: {exc}\n")
                    continue
                (out / f"{name}_estimate.json").write_text(est.to_json())
                rec = to_room_frame(extract_paths(est, dset), case.ap_rotation, case.user_rotation)
                (out / f"{name}_paths.json").write_text(dump_paths(rec))
                fix = score(case, est, dset, cfg, row)
                if fix is not None:
                    (out / f"{name}_fix.json").write_text(fix.to_json())
                (out / f"{name}_metrics.csv").write_text(rows_to_csv([row]))
    return out
