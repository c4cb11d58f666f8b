"""Experiment orchestration: config files, seeded multi-chain runs, CSV output.

An experiment is a JSON config (target, sampler list, chain count, chain
length, seed, output directory).  `run_experiment` runs every sampler x
chain combination with chain seeds `base_seed + i`, persists full traces
plus autocorrelation and running-mean tables as CSV, and writes a
manifest recording seeds, wall times, evaluation counters and tuned
hyperparameters.  `summarize_directory` rebuilds summary.csv purely from
the persisted files, so a run followed by a re-summarize is
byte-identical; run_experiment itself calls it to produce summary.csv.

All text output is UTF-8 with LF line endings; floats are written with
shortest-round-trip precision, so parsed values are bit-identical to the
in-memory chain.  Chains are independent work units; the GAMC_THREADS
environment variable bounds the worker pool (default: serial).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import targets as tg
from .diagnostics import acf_table, running_mean_table, summarize, trace_header, trace_rows
from .sampler import ChainRecord, SamplerConfig, Schedule, run_chain

__all__ = [
    "ParseError",
    "ValidationError",
    "ExperimentConfig",
    "RunManifest",
    "load_config",
    "config_from_dict",
    "config_hash",
    "build_target",
    "build_sampler_config",
    "simulate_datasets",
    "run_experiment",
    "summarize_directory",
    "load_manifest",
    "VERSION",
]

VERSION = "0.1.0"

MANIFEST_NAME = "manifest.json"
SUMMARY_NAME = "summary.csv"

SUMMARY_COLUMNS = [
    "sampler",
    "chain",
    "seed",
    "acceptance_rate",
    "ess_min",
    "ess_mean",
    "ess_median",
    "ess_max",
    "runtime_seconds",
    "efficiency",
    "speed_vs_mala",
]


class ParseError(ValueError):
    """Config file is not valid JSON."""


class ValidationError(ValueError):
    """Config tree violates the schema; message carries the field path."""


# --- config schema -------------------------------------------------------

_SAMPLER_DEFAULTS = {
    "epsilon0": 1.0,
    "beta0": None,
    "lam": 0.01,
    "gamma_fixed": 0.001,
    "softabs_alpha": 1000.0,
    "geometric_variant": "smmala",
    "tune": True,
    "schedule": None,
}

_SCHEDULE_DEFAULTS = {"family": "exponential", "r": 1e-4, "value": 0.0, "values": None}

_STUDENT_T_DEFAULTS = {"n": 20, "nu": 30.0, "xi": 0.9}

_SIMULATE_DEFAULTS = {
    "params": None,
    "n_obs": 50,
    "span_days": 730.0,
    "sigma": 2.0,
    "seed": None,
    "zero_noise": False,
}

# Desk-scale run sizes; --paper-scale restores the published 1e5/1e4 split.
_RUN_DEFAULTS = {
    "chains": 10,
    "iterations": 10_000,
    "burn_in": 1_000,
    "base_seed": 1,
    "output_dir": "gamc-output",
    "force_refactorization": False,
    "c_additive": False,
}

_PAPER_SCALE = {"iterations": 100_000, "burn_in": 10_000}

_SAMPLER_NAMES = ("mala", "smmala", "mmala", "am", "gamc")


@dataclass(frozen=True)
class ExperimentConfig:
    target: dict
    samplers: list
    chains: int
    iterations: int
    burn_in: int
    base_seed: int
    output_dir: str
    force_refactorization: bool = False
    c_additive: bool = False

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.__dict__))  # deep copy, JSON types only


def _fail(path: str, why: str):
    raise ValidationError(f"{path}: {why}")


def _check_keys(d: dict, allowed, path: str):
    for key in d:
        if key not in allowed:
            _fail(f"{path}.{key}" if path else key, "unknown key")


def _as_int(value, path: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, "must be an integer")
    if minimum is not None and value < minimum:
        _fail(path, f"must be >= {minimum}")
    return value


def _as_float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, "must be a number")
    v = float(value)
    if not math.isfinite(v):
        _fail(path, "must be finite")
    return v


def _as_bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        _fail(path, "must be true or false")
    return value


def _resolve_schedule(raw, path: str) -> dict:
    if raw is None:
        return dict(_SCHEDULE_DEFAULTS)
    if not isinstance(raw, dict):
        _fail(path, "must be an object")
    _check_keys(raw, _SCHEDULE_DEFAULTS, path)
    sched = {**_SCHEDULE_DEFAULTS, **raw}
    if sched["family"] not in ("exponential", "constant", "table"):
        _fail(f"{path}.family", f"unknown schedule family {sched['family']!r}")
    if sched["family"] == "exponential":
        r = _as_float(sched["r"], f"{path}.r")
        if r <= 0.0:
            _fail(f"{path}.r", "must be > 0 for exponential schedules")
        sched["r"] = r
    if sched["family"] == "constant":
        v = _as_float(sched["value"], f"{path}.value")
        if not 0.0 <= v <= 1.0:
            _fail(f"{path}.value", "must lie in [0, 1]")
        sched["value"] = v
    if sched["family"] == "table":
        vals = sched["values"]
        if not isinstance(vals, list) or not vals:
            _fail(f"{path}.values", "table schedules need a non-empty list")
        sched["values"] = [_as_float(v, f"{path}.values") for v in vals]
    return sched


def _resolve_sampler(raw, idx: int) -> dict:
    path = f"samplers[{idx}]"
    if not isinstance(raw, dict):
        _fail(path, "must be an object")
    _check_keys(raw, {"name", "label", *_SAMPLER_DEFAULTS}, path)
    if "name" not in raw:
        _fail(f"{path}.name", "required")
    name = raw["name"]
    if name not in _SAMPLER_NAMES:
        _fail(f"{path}.name", f"unknown sampler {name!r}")
    s = {**_SAMPLER_DEFAULTS, **raw}
    s.setdefault("label", name)
    if not isinstance(s["label"], str) or not s["label"]:
        _fail(f"{path}.label", "must be a non-empty string")
    eps = _as_float(s["epsilon0"], f"{path}.epsilon0")
    if eps <= 0.0:
        _fail(f"{path}.epsilon0", "must be > 0")
    s["epsilon0"] = eps
    if s["beta0"] is not None:
        b = _as_float(s["beta0"], f"{path}.beta0")
        if b <= 0.0:
            _fail(f"{path}.beta0", "must be > 0")
        s["beta0"] = b
    lam = _as_float(s["lam"], f"{path}.lam")
    if not 0.0 < lam < 1.0:
        _fail(f"{path}.lam", "must lie in (0, 1)")
    s["lam"] = lam
    gam = _as_float(s["gamma_fixed"], f"{path}.gamma_fixed")
    if gam <= 0.0:
        _fail(f"{path}.gamma_fixed", "must be > 0")
    s["gamma_fixed"] = gam
    alpha = _as_float(s["softabs_alpha"], f"{path}.softabs_alpha")
    if alpha <= 0.0:
        _fail(f"{path}.softabs_alpha", "must be > 0")
    s["softabs_alpha"] = alpha
    if s["geometric_variant"] not in ("mala", "smmala", "mmala"):
        _fail(f"{path}.geometric_variant", f"unknown variant {s['geometric_variant']!r}")
    s["tune"] = _as_bool(s["tune"], f"{path}.tune")
    s["schedule"] = _resolve_schedule(s["schedule"], f"{path}.schedule")
    return s


def _resolve_target(raw, base_seed: int) -> dict:
    if not isinstance(raw, dict):
        _fail("target", "must be an object")
    kind = raw.get("kind")
    if kind == "student_t":
        _check_keys(raw, {"kind", *_STUDENT_T_DEFAULTS}, "target")
        t = {**_STUDENT_T_DEFAULTS, **raw}
        t["n"] = _as_int(t["n"], "target.n", minimum=1)
        nu = _as_float(t["nu"], "target.nu")
        if nu <= 2.0:
            _fail("target.nu", "degrees of freedom must exceed 2")
        t["nu"] = nu
        xi = _as_float(t["xi"], "target.xi")
        if not -1.0 < xi < 1.0:
            _fail("target.xi", "correlation must lie in (-1, 1)")
        t["xi"] = xi
        return t
    if kind == "rv":
        _check_keys(raw, {"kind", "n_planets", "dataset", "simulate", "init_center"}, "target")
        t = {"dataset": None, "simulate": None, "init_center": None, **raw}
        n_p = _as_int(t.get("n_planets"), "target.n_planets", minimum=1)
        t["n_planets"] = n_p
        if t["dataset"] is not None and t["simulate"] is not None:
            _fail("target", "give either a dataset path or simulation params, not both")
        if t["dataset"] is not None and not isinstance(t["dataset"], str):
            _fail("target.dataset", "must be a path string")
        if t["dataset"] is None:
            sim = t["simulate"] if isinstance(t["simulate"], dict) else {}
            if t["simulate"] is not None and not isinstance(t["simulate"], dict):
                _fail("target.simulate", "must be an object")
            _check_keys(sim, _SIMULATE_DEFAULTS, "target.simulate")
            sim = {**_SIMULATE_DEFAULTS, **sim}
            if sim["params"] is None:
                if n_p == 1:
                    sim["params"] = list(tg.default_one_planet_params())
                elif n_p == 2:
                    sim["params"] = list(tg.default_two_planet_params())
                else:
                    _fail("target.simulate.params", f"required for n_planets={n_p}")
            sim["params"] = [_as_float(v, "target.simulate.params") for v in sim["params"]]
            if len(sim["params"]) != tg.rv_dim(n_p):
                _fail(
                    "target.simulate.params",
                    f"need {tg.rv_dim(n_p)} values for {n_p} planet(s)",
                )
            sim["n_obs"] = _as_int(sim["n_obs"], "target.simulate.n_obs", minimum=2)
            span = _as_float(sim["span_days"], "target.simulate.span_days")
            if span <= 0.0:
                _fail("target.simulate.span_days", "must be > 0")
            sim["span_days"] = span
            sigma = _as_float(sim["sigma"], "target.simulate.sigma")
            if sigma <= 0.0:
                _fail("target.simulate.sigma", "must be > 0")
            sim["sigma"] = sigma
            if sim["seed"] is None:
                sim["seed"] = base_seed + 7919  # disjoint from the chain seeds
            else:
                sim["seed"] = _as_int(sim["seed"], "target.simulate.seed", minimum=0)
            sim["zero_noise"] = _as_bool(sim["zero_noise"], "target.simulate.zero_noise")
            t["simulate"] = sim
        if t["init_center"] is not None:
            ic = t["init_center"]
            if not isinstance(ic, list) or len(ic) != tg.rv_dim(n_p):
                _fail("target.init_center", f"need {tg.rv_dim(n_p)} values")
            t["init_center"] = [_as_float(v, "target.init_center") for v in ic]
        return t
    _fail("target.kind", f"expected 'student_t' or 'rv', got {kind!r}")


def config_from_dict(
    raw: dict,
    paper_scale: bool = False,
    seed_override: int | None = None,
    output_override: str | None = None,
) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ValidationError("config root must be an object")
    allowed = {"target", "samplers", *_RUN_DEFAULTS}
    _check_keys(raw, allowed, "")
    d = {**_RUN_DEFAULTS, **raw}
    if paper_scale:
        d.update(_PAPER_SCALE)
    if seed_override is not None:
        d["base_seed"] = seed_override
    if output_override is not None:
        d["output_dir"] = output_override

    if "target" not in d:
        _fail("target", "required")
    base_seed = _as_int(d["base_seed"], "base_seed", minimum=0)
    samplers = d.get("samplers")
    if not isinstance(samplers, list) or not samplers:
        _fail("samplers", "must be a non-empty list")
    resolved = [_resolve_sampler(s, i) for i, s in enumerate(samplers)]
    labels = [s["label"] for s in resolved]
    if len(set(labels)) != len(labels):
        _fail("samplers", "labels must be unique")
    if not isinstance(d["output_dir"], str) or not d["output_dir"]:
        _fail("output_dir", "must be a non-empty path string")
    return ExperimentConfig(
        target=_resolve_target(d["target"], base_seed),
        samplers=resolved,
        chains=_as_int(d["chains"], "chains", minimum=1),
        iterations=_as_int(d["iterations"], "iterations", minimum=1),
        burn_in=_as_int(d["burn_in"], "burn_in", minimum=0),
        base_seed=base_seed,
        output_dir=d["output_dir"],
        force_refactorization=_as_bool(d["force_refactorization"], "force_refactorization"),
        c_additive=_as_bool(d["c_additive"], "c_additive"),
    )


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return config_from_dict(raw, **overrides)


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# --- wiring config to samplers and targets ------------------------------

def build_sampler_config(spec: dict, cfg: ExperimentConfig) -> SamplerConfig:
    sched = spec["schedule"]
    schedule = Schedule(
        family=sched["family"],
        r=sched["r"],
        value=sched["value"],
        values=None if sched["values"] is None else tuple(sched["values"]),
    )
    return SamplerConfig(
        name=spec["name"],
        epsilon0=spec["epsilon0"],
        beta0=spec["beta0"],
        lam=spec["lam"],
        gamma_fixed=spec["gamma_fixed"],
        softabs_alpha=spec["softabs_alpha"],
        schedule=schedule,
        geometric_variant=spec["geometric_variant"],
        tune=spec["tune"],
        force_refactorization=cfg.force_refactorization,
    )


def build_target(cfg: ExperimentConfig, dataset: tg.RVDataset | None = None):
    t = cfg.target
    if t["kind"] == "student_t":
        return tg.StudentTTarget(t["n"], dof=t["nu"], xi=t["xi"])
    if dataset is None:
        raise ValidationError("target.dataset: no dataset available for the rv target")
    if t["init_center"] is not None:
        center = np.asarray(t["init_center"], dtype=float)
    elif t["simulate"] is not None:
        center = np.asarray(t["simulate"]["params"], dtype=float)
    elif t["n_planets"] == 1:
        center = tg.default_one_planet_params()
    elif t["n_planets"] == 2:
        center = tg.default_two_planet_params()
    else:
        raise ValidationError("target.init_center: required for this dataset")
    return tg.RVTarget(
        dataset,
        t["n_planets"],
        c_additive=cfg.c_additive,
        init_center=center,
    )


# --- dataset simulation --------------------------------------------------

def simulate_datasets(cfg: ExperimentConfig, rng: np.random.Generator | None = None) -> dict:
    """Write the configured RV dataset plus an injected-noise sidecar.

    Returns {"dataset": path, "noise": path} relative to the output dir.
    The sidecar stores v - model_curve, i.e. exactly the residuals the
    likelihood sees, enabling chi-square checks against the noise model.
    """
    t = cfg.target
    if t["kind"] != "rv" or t["simulate"] is None:
        raise ValidationError("target: simulate requires an rv target with simulation params")
    sim = t["simulate"]
    if rng is None:
        rng = np.random.default_rng(sim["seed"])
    times = tg.uniform_time_grid(sim["n_obs"], sim["span_days"])
    sigmas = np.full(sim["n_obs"], sim["sigma"])
    params = np.asarray(sim["params"], dtype=float)
    curve = tg.rv_model_velocity(params, times, c_additive=cfg.c_additive)
    if sim["zero_noise"]:
        dataset = tg.RVDataset(times=times, velocities=curve.copy(), sigmas=sigmas)
    else:
        dataset = tg.simulate_rv_dataset(params, times, sigmas, rng, c_additive=cfg.c_additive)

    out = Path(cfg.output_dir) / "datasets"
    out.mkdir(parents=True, exist_ok=True)
    stem = f"rv_{t['n_planets']}planet"
    dataset_rel = f"datasets/{stem}.csv"
    noise_rel = f"datasets/{stem}_noise.csv"
    dataset.write_csv(out / f"{stem}.csv")
    noise = dataset.velocities - curve
    _write_csv(
        out / f"{stem}_noise.csv",
        ["t", "noise"],
        [[float(times[i]), float(noise[i])] for i in range(len(times))],
    )
    return {"dataset": dataset_rel, "noise": noise_rel}


# --- manifest ------------------------------------------------------------

@dataclass(frozen=True)
class RunManifest:
    directory: str
    version: str
    config: dict
    config_hash: str
    seeds: list
    chains: list  # per sampler x chain: seed, output files, wall time, counters, tuned
    outputs: list = field(default_factory=list)
    summary: str = SUMMARY_NAME

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "config": self.config,
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "chains": self.chains,
            "outputs": self.outputs,
            "summary": self.summary,
        }


def _write_manifest(manifest: RunManifest) -> None:
    path = Path(manifest.directory) / MANIFEST_NAME
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(directory) -> RunManifest:
    path = Path(directory) / MANIFEST_NAME
    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    return RunManifest(
        directory=str(directory),
        version=d["version"],
        config=d["config"],
        config_hash=d["config_hash"],
        seeds=d["seeds"],
        chains=d["chains"],
        outputs=d["outputs"],
        summary=d["summary"],
    )


# --- running -------------------------------------------------------------

def _worker_count() -> int:
    raw = os.environ.get("GAMC_THREADS")
    if raw is None:
        return 1
    try:
        workers = int(raw)
    except ValueError:
        raise ValidationError("GAMC_THREADS: must be a positive integer") from None
    if workers < 1:
        raise ValidationError("GAMC_THREADS: must be a positive integer")
    return workers


def _chain_job(job):
    """Worker body; must stay exception-free so one bad chain cannot
    take down its siblings or the pool."""
    key, scfg, target, m, burn_in, seed = job
    try:
        record = run_chain(scfg, target, m=m, burn_in=burn_in, seed=seed)
        return key, record, None
    except Exception as exc:  # noqa: BLE001 - isolation boundary
        return key, None, f"{type(exc).__name__}: {exc}"


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _chain_files(label: str, chain: int) -> dict:
    stem = f"{label}_{chain:02d}"
    return {
        "trace": f"trace_{stem}.csv",
        "acf": f"acf_{stem}.csv",
        "runmean": f"runmean_{stem}.csv",
    }


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    outputs = []
    dataset = None
    if cfg.target["kind"] == "rv":
        if cfg.target["dataset"] is not None:
            dataset = tg.RVDataset.read_csv(cfg.target["dataset"])
        else:
            files = simulate_datasets(cfg)
            outputs.extend(files.values())
            # consume exactly the persisted bytes
            dataset = tg.RVDataset.read_csv(out / files["dataset"])
    target = build_target(cfg, dataset)

    seeds = [cfg.base_seed + i for i in range(cfg.chains)]
    jobs = []
    for spec in cfg.samplers:
        scfg = build_sampler_config(spec, cfg)
        for chain, seed in enumerate(seeds):
            jobs.append(((spec["label"], chain), scfg, target, cfg.iterations, cfg.burn_in, seed))

    workers = _worker_count()
    if workers == 1 or len(jobs) == 1:
        results = [_chain_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_chain_job, jobs))

    chains_meta = []
    for (label, chain), record, error in results:
        seed = seeds[chain]
        if record is None:
            chains_meta.append(
                {
                    "sampler": label,
                    "chain": chain,
                    "seed": seed,
                    "failed": True,
                    "error": error,
                }
            )
            continue
        files = _chain_files(label, chain)
        _write_csv(out / files["trace"], trace_header(record.states.shape[1]), trace_rows(record))
        header, rows = acf_table(record)
        _write_csv(out / files["acf"], header, rows)
        header, rows = running_mean_table(record)
        _write_csv(out / files["runmean"], header, rows)
        outputs.extend(files.values())
        chains_meta.append(
            {
                "sampler": label,
                "chain": chain,
                "seed": seed,
                "failed": False,
                "error": None,
                "wall_time": record.wall_time,
                "counters": {
                    "target": record.n_target_evals,
                    "gradient": record.n_gradient_evals,
                    "hessian": record.n_hessian_evals,
                },
                "tuned": record.tuned,
                **files,
            }
        )

    manifest = RunManifest(
        directory=str(out),
        version=VERSION,
        config=cfg.to_dict(),
        config_hash=config_hash(cfg),
        seeds=seeds,
        chains=chains_meta,
        outputs=[*outputs, SUMMARY_NAME],
    )
    _write_manifest(manifest)
    summarize_directory(out)
    return manifest


# --- summaries from persisted runs --------------------------------------

def _read_trace(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = header.index("logp") - 1
        states, logps, accepted, geometric = [], [], [], []
        for row in reader:
            states.append([float(v) for v in row[1 : dim + 1]])
            logps.append(float(row[dim + 1]))
            accepted.append(bool(int(row[dim + 2])))
            geometric.append(bool(int(row[dim + 3])))
    return (
        np.asarray(states),
        np.asarray(logps),
        np.asarray(accepted, dtype=bool),
        np.asarray(geometric, dtype=bool),
    )


def summarize_directory(directory) -> Path:
    """Recompute summary.csv from the manifest and persisted traces.

    Reads only on-disk artifacts, so rerunning it on an existing output
    directory reproduces the file byte-for-byte.
    """
    directory = Path(directory)
    manifest = load_manifest(directory)
    burn_in = manifest.config["burn_in"]

    summaries = {}
    for meta in manifest.chains:
        if meta["failed"]:
            continue
        states, logps, accepted, geometric = _read_trace(directory / meta["trace"])
        record = ChainRecord(
            sampler=meta["sampler"],
            states=states,
            log_densities=logps,
            accepted=accepted,
            geometric_step=geometric,
            wall_time=meta["wall_time"],
            n_target_evals=meta["counters"]["target"],
            n_gradient_evals=meta["counters"]["gradient"],
            n_hessian_evals=meta["counters"]["hessian"],
            burn_in=burn_in,
            tuned=meta["tuned"],
        )
        summaries[(meta["sampler"], meta["chain"])] = summarize(record)

    rows = []
    for meta in manifest.chains:
        key = (meta["sampler"], meta["chain"])
        if meta["failed"] or key not in summaries:
            continue
        s = summaries[key]
        reference = summaries.get(("mala", meta["chain"]))
        speed = "" if reference is None else repr(s.efficiency / reference.efficiency)
        rows.append(
            [
                meta["sampler"],
                meta["chain"],
                meta["seed"],
                repr(s.acceptance_rate),
                repr(s.ess.minimum),
                repr(s.ess.mean),
                repr(s.ess.median),
                repr(s.ess.maximum),
                repr(s.runtime_seconds),
                repr(s.efficiency),
                speed,
            ]
        )
    path = directory / manifest.summary
    _write_csv(path, SUMMARY_COLUMNS, rows)
    return path
