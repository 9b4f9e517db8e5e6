"""Monte-Carlo sweeps comparing WD-EM against the baselines.

A trial draws a random scene, synthesizes its variance profile, draws one
channel realization and one noisy pilot, runs every enabled estimator on
those same observations and scores each estimated profile with the
covariance NMSE.  A sweep repeats trials over SNR or RF-chain values and
aggregates them to medians and means.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import statistics
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import baselines
from .channel import build_dictionary, covariance_nmse, sample_channel, variance_profile
from .lattice import ApertureConfig, build_lattice
from .observation import build_selection, noise_var_for_snr, observe, sample_values
from .vmf import random_scene
from .wd_em import EmSettings, run

log = logging.getLogger(__name__)

METHODS = ("wd_em", "naive_gmm", "kmeans", "omp", "ls")
RAW_FIELDS = ["sweep_axis", "sweep_value", "trial", "method", "nmse_linear", "nmse_db",
              "wall_ms", "iterations", "pruned"]
AGG_FIELDS = ["sweep_axis", "sweep_value", "method", "median_nmse_db", "mean_nmse_db",
              "trials_ok", "trials_failed"]


class ConfigError(ValueError):
    """The experiment configuration is malformed or inconsistent."""


@dataclass(frozen=True)
class SceneConfig:
    n_c: int = 3
    alpha_range: tuple = (50.0, 100.0)
    theta_range: tuple = (0.0, math.pi / 2)
    phi_range: tuple = (0.0, 2 * math.pi)
    # when set, scenes are redrawn until their smallest weight is at most this
    max_min_weight: float | None = None


@dataclass(frozen=True)
class BaselineSettings:
    omp_sparsity: int = 64
    kmeans_k: int = 4
    gmm_components: int = 4


@dataclass(frozen=True)
class SweepConfig:
    axis: str = "snr"
    values: tuple = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
    # the operating point of whichever axis is not being swept
    snr_db: float = 10.0
    n_rf: int = 200


def _default_aperture() -> ApertureConfig:
    # 21 x 21 elements over 0.1 m: odd count keeps the dictionary Gram exactly diagonal
    return ApertureConfig(l_x=0.1, l_y=0.1, f_c=30e9, delta=0.1 / 21, n_x=21, n_y=21)


@dataclass(frozen=True)
class ExperimentConfig:
    aperture: ApertureConfig = field(default_factory=_default_aperture)
    scene: SceneConfig = SceneConfig()
    wd_em: EmSettings = EmSettings()
    baselines: BaselineSettings = BaselineSettings()
    sweep: SweepConfig = SweepConfig()
    trials: int = 50
    base_seed: int = 0
    nmse_mode: str = "wavenumber"
    methods: tuple = METHODS
    theta_branch: str = "principal"
    exact_gram: bool = False
    denoise_floor: bool = False
    oracle: bool = False
    timing: bool = False
    workers: int = 1
    out_dir: str = "results"
    format: str = "csv"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.sweep.axis not in ("snr", "nrf"):
            raise ConfigError(f"sweep axis must be snr or nrf, got {self.sweep.axis!r}")
        if not self.sweep.values:
            raise ConfigError("sweep values must be nonempty")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ConfigError(f"unknown or empty methods: {sorted(unknown)}")
        if self.nmse_mode not in ("wavenumber", "full"):
            raise ConfigError(f"unknown nmse mode {self.nmse_mode!r}")
        if self.theta_branch not in ("principal", "quadrant_shift"):
            raise ConfigError(f"unknown theta branch {self.theta_branch!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown output format {self.format!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        size = len(build_lattice(self.aperture))
        n_rf_values = self.sweep.values if self.sweep.axis == "nrf" else (self.sweep.n_rf,)
        for v in n_rf_values:
            if int(v) != v or not 1 <= v <= size:
                raise ConfigError(f"N_RF={v} must be an integer in 1..{size}")
        snr_values = self.sweep.values if self.sweep.axis == "snr" else (self.sweep.snr_db,)
        for v in snr_values:
            if not math.isfinite(v):
                raise ConfigError(f"SNR {v} dB is not finite")

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a table")
    names = {f.name for f in fields(cls)}
    extra = set(data) - names
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    kwargs = {}
    for k, v in data.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    nested = {"aperture": ApertureConfig, "scene": SceneConfig, "wd_em": EmSettings,
              "baselines": BaselineSettings, "sweep": SweepConfig}
    for key, cls in nested.items():
        if key in data:
            sub = dict(data[key])
            if key == "sweep" and "values" in sub:
                sub["values"] = [int(v) if sub.get("axis") == "nrf" else float(v) for v in sub["values"]]
            data[key] = _build(cls, sub, key)
    return _build(ExperimentConfig, data, "config")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            data = tomllib.loads(text.decode())
        else:
            data = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class TrialResult:
    sweep_axis: str
    sweep_value: float
    trial: int
    method: str
    nmse_linear: float | None
    nmse_db: float | None
    wall_ms: float
    iterations: int
    pruned: int
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def row(self) -> dict:
        return {
            "sweep_axis": self.sweep_axis,
            "sweep_value": _fmt(self.sweep_value),
            "trial": str(self.trial),
            "method": self.method,
            "nmse_linear": "" if self.nmse_linear is None else repr(self.nmse_linear),
            "nmse_db": "" if self.nmse_db is None else repr(self.nmse_db),
            "wall_ms": repr(self.wall_ms),
            "iterations": str(self.iterations),
            "pruned": str(self.pruned),
        }


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def _value_key(v) -> int:
    return zlib.crc32(_fmt(v).encode())


class _Context:
    """Per-process cache of the geometry shared by every trial of a config."""

    _cache: dict = {}

    @classmethod
    def of(cls, cfg: ExperimentConfig):
        key = (cfg.aperture, cfg.nmse_mode, cfg.exact_gram)
        if key not in cls._cache:
            lattice = build_lattice(cfg.aperture)
            need_dict = cfg.nmse_mode == "full" or cfg.exact_gram
            dictionary = build_dictionary(cfg.aperture, lattice) if need_dict else None
            cls._cache = {key: (lattice, dictionary)}
        return cls._cache[key]


def trial_seeds(cfg: ExperimentConfig, value, trial: int):
    """Independent streams for one trial.

    The scene depends on ``(base_seed, trial)`` only, so every sweep point
    of a given trial index sees the same scene; channel, noise and
    estimator streams also depend on the sweep value.
    """
    scene = np.random.SeedSequence([cfg.base_seed, trial, 0])
    rest = np.random.SeedSequence([cfg.base_seed, trial, 1, _value_key(value)])
    channel, noise, *methods = rest.spawn(2 + len(METHODS))
    return scene, channel, noise, dict(zip(METHODS, methods))


def _draw_scene(cfg: ExperimentConfig, seq: np.random.SeedSequence):
    sc = cfg.scene
    for child in seq.spawn(1000):
        scene = random_scene(child, sc.n_c, sc.alpha_range, sc.theta_range, sc.phi_range)
        if sc.max_min_weight is None or scene.weights.min() <= sc.max_min_weight:
            return scene
    raise ConfigError(f"no scene with min weight <= {sc.max_min_weight} in 1000 draws")


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, np.uint32)[0])


def run_trial(cfg: ExperimentConfig, value, trial: int) -> list[TrialResult]:
    """Run every enabled method on one shared set of observations."""
    axis = cfg.sweep.axis
    n_rf = int(value) if axis == "nrf" else cfg.sweep.n_rf
    snr_db = float(value) if axis == "snr" else cfg.sweep.snr_db
    try:
        lattice, dictionary = _Context.of(cfg)
        s_scene, s_channel, s_noise, s_methods = trial_seeds(cfg, value, trial)
        scene = _draw_scene(cfg, s_scene)
        truth = variance_profile(scene, lattice)
        sel = build_selection(lattice, n_rf)
        g = sample_channel(truth, s_channel)
        noise_var = noise_var_for_snr(truth, sel, snr_db)
        y = observe(g, sel, noise_var=noise_var, seed=s_noise,
                    exact_gram=cfg.exact_gram, dictionary=dictionary)
        samples = sample_values(y, sel, lattice, noise_var, theta_branch=cfg.theta_branch,
                                denoise_floor=cfg.denoise_floor)
    except Exception as exc:  # recorded, not raised: one bad trial must not sink a sweep
        log.warning("trial %s/%s setup failed: %s", value, trial, exc)
        return [TrialResult(axis, value, trial, m, None, None, 0.0, 0, 0, repr(exc))
                for m in cfg.methods]

    out = []
    for method in cfg.methods:
        start = time.perf_counter()
        try:
            est, iterations, pruned = _estimate(cfg, method, scene, truth, y, sel, lattice,
                                                dictionary, samples, _seed_int(s_methods[method]))
            nmse = covariance_nmse(truth, est, dictionary, cfg.nmse_mode)
            wall = (time.perf_counter() - start) * 1e3 if cfg.timing else 0.0
            db = 10.0 * math.log10(nmse) if nmse > 0 else -math.inf
            out.append(TrialResult(axis, value, trial, method, nmse, db, wall, iterations, pruned))
        except Exception as exc:
            log.warning("trial %s/%s method %s failed: %s", value, trial, method, exc)
            out.append(TrialResult(axis, value, trial, method, None, None, 0.0, 0, 0, repr(exc)))
    return out


def _estimate(cfg, method, scene, truth, y, sel, lattice, dictionary, samples, seed):
    b = cfg.baselines
    if method == "wd_em":
        if cfg.oracle:
            return variance_profile(scene, lattice), 0, 0
        report = run(samples, replace(cfg.wd_em, seed=seed))
        return variance_profile(report.mixture, lattice), report.iterations, report.pruned
    if method == "naive_gmm":
        report = baselines.naive_gmm_fit(samples, b.gmm_components, seed, cfg.wd_em)
        return variance_profile(report.mixture, lattice), report.iterations, report.pruned
    if method == "kmeans":
        return baselines.kmeans_estimate(samples, lattice, b.kmeans_k, seed), 0, 0
    if method == "omp":
        k = b.omp_sparsity
        gram_dict = dictionary if cfg.exact_gram else None
        return baselines.omp_estimate(y, sel, lattice, k, gram_dict), 0, 0
    if method == "ls":
        return baselines.ls_estimate(y, sel, lattice), 0, 0
    raise ValueError(f"unknown method {method!r}")


def _trial_job(args):
    cfg, value, trial = args
    return run_trial(cfg, value, trial)


def sweep(cfg: ExperimentConfig) -> list[TrialResult]:
    """All sweep values times all trials, sorted by (value, trial, method)."""
    jobs = [(cfg, v, t) for v in cfg.sweep.values for t in range(cfg.trials)]
    if cfg.workers == 1:
        chunks = map(_trial_job, jobs)
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_trial_job, jobs, chunksize=1))
    rows = [r for chunk in chunks for r in chunk]
    order = {v: i for i, v in enumerate(cfg.sweep.values)}
    rank = {m: i for i, m in enumerate(METHODS)}
    rows.sort(key=lambda r: (order[r.sweep_value], r.trial, rank[r.method]))
    return rows


@dataclass(frozen=True)
class AggregateRow:
    sweep_axis: str
    sweep_value: float
    method: str
    median_nmse_db: float | None
    mean_nmse_db: float | None
    trials_ok: int
    trials_failed: int

    def row(self) -> dict:
        return {
            "sweep_axis": self.sweep_axis,
            "sweep_value": _fmt(self.sweep_value),
            "method": self.method,
            "median_nmse_db": "" if self.median_nmse_db is None else repr(self.median_nmse_db),
            "mean_nmse_db": "" if self.mean_nmse_db is None else repr(self.mean_nmse_db),
            "trials_ok": str(self.trials_ok),
            "trials_failed": str(self.trials_failed),
        }


def aggregate(results: list[TrialResult]) -> list[AggregateRow]:
    """Median and mean of the dB NMSE per (sweep value, method), in first-seen order."""
    groups: dict = {}
    for r in results:
        groups.setdefault((r.sweep_axis, r.sweep_value, r.method), []).append(r)
    out = []
    for (axis, value, method), rs in groups.items():
        vals = [r.nmse_db for r in rs if r.ok]
        med = float(statistics.median(vals)) if vals else None
        mean = math.fsum(vals) / len(vals) if vals else None
        out.append(AggregateRow(axis, value, method, med, mean, len(vals), len(rs) - len(vals)))
    return out


# ---------------------------------------------------------------------------
# output


def emit(results: list[TrialResult], out_dir, fmt: str = "csv") -> tuple[Path, Path]:
    """Write ``raw_<axis>.<fmt>`` and ``aggregate_<axis>.<fmt>``; returns both paths."""
    if not results:
        raise ValueError("nothing to emit")
    out_dir = Path(out_dir)
    axis = results[0].sweep_axis
    raw_path = out_dir / f"raw_{axis}.{fmt}"
    agg_path = out_dir / f"aggregate_{axis}.{fmt}"
    raw = [r.row() for r in results]
    agg = [a.row() for a in aggregate(results)]
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            _write_csv(raw_path, RAW_FIELDS, raw)
            _write_csv(agg_path, AGG_FIELDS, agg)
        elif fmt == "json":
            raw_path.write_text(json.dumps([_typed(r) for r in raw], indent=1) + "\n")
            agg_path.write_text(json.dumps([_typed(a) for a in agg], indent=1) + "\n")
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise OSError(f"writing results under {out_dir}: {exc}") from exc
    return raw_path, agg_path


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _typed(row: dict) -> dict:
    out = {}
    for k, v in row.items():
        if k in ("sweep_axis", "method"):
            out[k] = v
        elif v == "":
            out[k] = None
        elif k in ("trial", "iterations", "pruned", "trials_ok", "trials_failed"):
            out[k] = int(v)
        else:
            out[k] = float(v)
    return out


def read_raw_csv(path) -> list[TrialResult]:
    """Inverse of the raw CSV written by :func:`emit`."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        value = int(r["sweep_value"]) if r["sweep_axis"] == "nrf" else float(r["sweep_value"])
        lin = float(r["nmse_linear"]) if r["nmse_linear"] else None
        db = float(r["nmse_db"]) if r["nmse_db"] else None
        out.append(TrialResult(r["sweep_axis"], value, int(r["trial"]), r["method"], lin, db,
                               float(r["wall_ms"]), int(r["iterations"]), int(r["pruned"]),
                               None if lin is not None else "failed"))
    return out
