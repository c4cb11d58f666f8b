"""Harness and CLI tests: config validation, determinism, persistence."""

import json
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from gamc import cli
from gamc import harness
from gamc.harness import (
    ExperimentConfig,
    ParseError,
    ValidationError,
    build_sampler_config,
    build_target,
    config_from_dict,
    config_hash,
    load_config,
    load_manifest,
    run_experiment,
    simulate_datasets,
    summarize_directory,
)
from gamc.targets import RVDataset, rv_model_velocity


def minimal_config(tmp_path, **extra):
    d = {
        "target": {"kind": "student_t", "n": 3},
        "samplers": [{"name": "mala"}],
        "chains": 2,
        "iterations": 60,
        "burn_in": 30,
        "base_seed": 5,
        "output_dir": str(tmp_path / "out"),
    }
    d.update(extra)
    return d


# --- config loading ------------------------------------------------------

def test_defaults_match_published_constants(tmp_path):
    cfg = config_from_dict({"target": {"kind": "student_t"}, "samplers": [{"name": "gamc"}]})
    assert (cfg.target["n"], cfg.target["nu"], cfg.target["xi"]) == (20, 30.0, 0.9)
    s = cfg.samplers[0]
    assert s["lam"] == 0.01
    assert s["gamma_fixed"] == 0.001
    assert s["schedule"] == {"family": "exponential", "r": 1e-4, "value": 0.0, "values": None}
    assert (cfg.chains, cfg.iterations, cfg.burn_in) == (10, 10_000, 1_000)


def test_paper_scale_and_overrides(tmp_path):
    raw = minimal_config(tmp_path)
    cfg = config_from_dict(raw, paper_scale=True, seed_override=99, output_override="elsewhere")
    assert (cfg.iterations, cfg.burn_in) == (100_000, 10_000)
    assert cfg.base_seed == 99
    assert cfg.output_dir == "elsewhere"


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda d: d.update(samplers=[]), "samplers"),
        (lambda d: d.update(samplers=[{"name": "hmc"}]), "samplers[0].name"),
        (lambda d: d["samplers"][0].update(lam=1.0), "lam"),
        (lambda d: d["samplers"][0].update(schedule={"family": "exponential", "r": 0.0}), "schedule.r"),
        (lambda d: d["samplers"][0].update(typo=1), "typo"),
        (lambda d: d.update(samplers=[{"name": "mala"}, {"name": "mala"}]), "labels"),
        (lambda d: d.update(target={"kind": "gaussian"}), "target.kind"),
        (lambda d: d.update(target={"kind": "student_t", "nu": 2.0}), "target.nu"),
        (lambda d: d.update(iterations=0), "iterations"),
        (lambda d: d.update(chains=0), "chains"),
        (lambda d: d.update(burn_in=-1), "burn_in"),
    ],
)
def test_validation_reports_field_path(tmp_path, mutate, fragment):
    raw = minimal_config(tmp_path)
    mutate(raw)
    with pytest.raises(ValidationError, match=fragment.replace("[", r"\[")):
        config_from_dict(raw)


def test_config_round_trip(tmp_path):
    raw = minimal_config(
        tmp_path,
        samplers=[
            {"name": "gamc", "schedule": {"family": "exponential", "r": 1e-3}},
            {"name": "mala", "epsilon0": 0.5},
        ],
    )
    cfg = config_from_dict(raw)
    again = config_from_dict(cfg.to_dict())
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)


def test_load_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ParseError):
        load_config(bad)
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.json")


def test_rv_config_defaults():
    cfg = config_from_dict(
        {"target": {"kind": "rv", "n_planets": 1}, "samplers": [{"name": "am"}]}
    )
    sim = cfg.target["simulate"]
    assert sim["params"][:3] == [1.0, 20.0, 50.0]
    assert (sim["n_obs"], sim["sigma"]) == (50, 2.0)
    assert sim["seed"] == cfg.base_seed + 7919
    with pytest.raises(ValidationError, match="not both"):
        config_from_dict(
            {
                "target": {"kind": "rv", "n_planets": 1, "dataset": "x.csv", "simulate": {}},
                "samplers": [{"name": "am"}],
            }
        )
    with pytest.raises(ValidationError, match="params"):
        config_from_dict(
            {"target": {"kind": "rv", "n_planets": 3}, "samplers": [{"name": "am"}]}
        )


def test_build_sampler_config_wires_flags(tmp_path):
    raw = minimal_config(tmp_path, force_refactorization=True)
    raw["samplers"] = [{"name": "gamc", "schedule": {"family": "constant", "value": 0.5}}]
    cfg = config_from_dict(raw)
    scfg = build_sampler_config(cfg.samplers[0], cfg)
    assert scfg.force_refactorization is True
    assert scfg.schedule.family == "constant" and scfg.schedule.value == 0.5


# --- dataset simulation --------------------------------------------------

def _rv_cfg(tmp_path, **sim):
    return config_from_dict(
        {
            "target": {"kind": "rv", "n_planets": 1, "simulate": sim or None},
            "samplers": [{"name": "am"}],
            "output_dir": str(tmp_path / "out"),
            "iterations": 50,
            "burn_in": 10,
            "chains": 1,
        }
    )


def test_simulate_one_planet_defaults(tmp_path):
    cfg = _rv_cfg(tmp_path)
    files = simulate_datasets(cfg)
    ds = RVDataset.read_csv(Path(cfg.output_dir) / files["dataset"])
    assert len(ds.times) == 50
    assert np.all(ds.sigmas == 2.0)
    assert ds.times[0] == 0.0 and ds.times[-1] == 730.0


def test_simulate_zero_noise_equals_model_curve(tmp_path):
    cfg = _rv_cfg(tmp_path, zero_noise=True)
    files = simulate_datasets(cfg)
    ds = RVDataset.read_csv(Path(cfg.output_dir) / files["dataset"])
    params = np.asarray(cfg.target["simulate"]["params"])
    assert np.array_equal(ds.velocities, rv_model_velocity(params, ds.times))


def test_simulate_noise_sidecar_chi_square(tmp_path):
    cfg = _rv_cfg(tmp_path, seed=123)
    files = simulate_datasets(cfg)
    out = Path(cfg.output_dir)
    rows = (out / files["noise"]).read_text(encoding="utf-8").strip().splitlines()
    assert rows[0] == "t,noise"
    noise = np.array([float(r.split(",")[1]) for r in rows[1:]])
    chi2 = np.sum((noise / 2.0) ** 2)
    lo, hi = stats.chi2.ppf([0.001, 0.999], df=50)
    assert lo < chi2 < hi


def test_simulate_deterministic_per_seed(tmp_path):
    a = _rv_cfg(tmp_path / "a", seed=7)
    b = _rv_cfg(tmp_path / "b", seed=7)
    fa, fb = simulate_datasets(a), simulate_datasets(b)
    bytes_a = (Path(a.output_dir) / fa["dataset"]).read_bytes()
    bytes_b = (Path(b.output_dir) / fb["dataset"]).read_bytes()
    assert bytes_a == bytes_b


def test_simulate_rejects_non_rv_target(tmp_path):
    cfg = config_from_dict(minimal_config(tmp_path))
    with pytest.raises(ValidationError, match="rv target"):
        simulate_datasets(cfg)


# --- experiments ---------------------------------------------------------

def _two_sampler_cfg(tmp_path, out="out", **extra):
    raw = minimal_config(
        tmp_path,
        samplers=[{"name": "mala"}, {"name": "gamc", "schedule": {"family": "exponential", "r": 0.05}}],
        output_dir=str(tmp_path / out),
        **extra,
    )
    return config_from_dict(raw)


def test_run_experiment_bookkeeping(tmp_path):
    cfg = _two_sampler_cfg(tmp_path)
    manifest = run_experiment(cfg)
    out = Path(cfg.output_dir)
    traces = sorted(p.name for p in out.glob("trace_*.csv"))
    assert traces == [
        "trace_gamc_00.csv",
        "trace_gamc_01.csv",
        "trace_mala_00.csv",
        "trace_mala_01.csv",
    ]
    assert manifest.seeds == [5, 6]
    assert all(not c["failed"] for c in manifest.chains)
    assert {c["sampler"] for c in manifest.chains} == {"mala", "gamc"}
    for c in manifest.chains:
        assert c["counters"]["target"] > 0
        assert "epsilon" in c["tuned"]
    lines = (out / "summary.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(harness.SUMMARY_COLUMNS)
    assert len(lines) == 5  # header + 2 samplers x 2 chains
    reloaded = load_manifest(out)
    assert reloaded.config_hash == manifest.config_hash
    assert reloaded.chains == manifest.chains


def test_trace_round_trips_states_bitwise(tmp_path):
    cfg = _two_sampler_cfg(tmp_path)
    run_experiment(cfg)
    out = Path(cfg.output_dir)
    # independent rerun of the same chain must match the persisted floats
    scfg = build_sampler_config(cfg.samplers[0], cfg)
    from gamc.sampler import run_chain

    record = run_chain(scfg, build_target(cfg), m=60, burn_in=30, seed=5)
    states, logps, accepted, _ = harness._read_trace(out / "trace_mala_00.csv")
    assert np.array_equal(states, record.states)
    assert np.array_equal(logps, record.log_densities)
    assert np.array_equal(accepted, record.accepted)


def test_summary_speed_column_uses_mala_reference(tmp_path):
    cfg = _two_sampler_cfg(tmp_path)
    run_experiment(cfg)
    lines = (Path(cfg.output_dir) / "summary.csv").read_text(encoding="utf-8").splitlines()
    rows = [line.split(",") for line in lines[1:]]
    by_sampler = {}
    for r in rows:
        by_sampler.setdefault(r[0], []).append(r)
    assert [float(r[-1]) for r in by_sampler["mala"]] == [1.0, 1.0]
    for r in by_sampler["gamc"]:
        assert float(r[-1]) == float(r[-2]) / float(by_sampler["mala"][int(r[1])][-2])


def test_summary_speed_blank_without_mala(tmp_path):
    raw = minimal_config(tmp_path, samplers=[{"name": "am"}])
    cfg = config_from_dict(raw)
    run_experiment(cfg)
    lines = (Path(cfg.output_dir) / "summary.csv").read_text(encoding="utf-8").splitlines()
    assert all(line.endswith(",") for line in lines[1:])


def test_rerun_identical_bytes(tmp_path):
    cfg_a = _two_sampler_cfg(tmp_path, out="a")
    cfg_b = _two_sampler_cfg(tmp_path, out="b")
    run_experiment(cfg_a)
    run_experiment(cfg_b)
    for name in ("trace_mala_00.csv", "trace_gamc_01.csv", "acf_gamc_00.csv", "runmean_mala_01.csv"):
        assert (Path(cfg_a.output_dir) / name).read_bytes() == (
            Path(cfg_b.output_dir) / name
        ).read_bytes()


def test_parallel_run_identical_bytes(tmp_path, monkeypatch):
    cfg_serial = _two_sampler_cfg(tmp_path, out="serial")
    cfg_pool = _two_sampler_cfg(tmp_path, out="pool")
    monkeypatch.delenv("GAMC_THREADS", raising=False)
    run_experiment(cfg_serial)
    monkeypatch.setenv("GAMC_THREADS", "2")
    run_experiment(cfg_pool)
    for p in sorted(Path(cfg_serial.output_dir).glob("*.csv")):
        if p.name == "summary.csv":
            continue  # timing columns differ
        assert p.read_bytes() == (Path(cfg_pool.output_dir) / p.name).read_bytes()


def test_worker_count_env_validation(monkeypatch):
    monkeypatch.setenv("GAMC_THREADS", "three")
    with pytest.raises(ValidationError, match="GAMC_THREADS"):
        harness._worker_count()
    monkeypatch.setenv("GAMC_THREADS", "0")
    with pytest.raises(ValidationError):
        harness._worker_count()
    monkeypatch.setenv("GAMC_THREADS", "4")
    assert harness._worker_count() == 4


def test_chain_failure_is_isolated(tmp_path, monkeypatch):
    cfg = _two_sampler_cfg(tmp_path)
    real_run_chain = harness.run_chain

    def failing(scfg, target, m, burn_in, seed):
        if seed == 6 and scfg.name == "gamc":
            raise RuntimeError("injected fault")
        return real_run_chain(scfg, target, m=m, burn_in=burn_in, seed=seed)

    monkeypatch.setattr(harness, "run_chain", failing)
    manifest = run_experiment(cfg)
    failed = [c for c in manifest.chains if c["failed"]]
    assert len(failed) == 1
    assert failed[0]["sampler"] == "gamc" and failed[0]["chain"] == 1
    assert "injected fault" in failed[0]["error"]
    out = Path(cfg.output_dir)
    assert not (out / "trace_gamc_01.csv").exists()
    lines = (out / "summary.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 4  # header + 3 surviving chains


def test_summarize_directory_idempotent(tmp_path):
    cfg = _two_sampler_cfg(tmp_path)
    run_experiment(cfg)
    out = Path(cfg.output_dir)
    first = (out / "summary.csv").read_bytes()
    (out / "summary.csv").unlink()
    summarize_directory(out)
    assert (out / "summary.csv").read_bytes() == first


def test_rv_experiment_via_dataset_file(tmp_path):
    sim_cfg = _rv_cfg(tmp_path / "sim", seed=3)
    files = simulate_datasets(sim_cfg)
    dataset_path = str(Path(sim_cfg.output_dir) / files["dataset"])
    cfg = config_from_dict(
        {
            "target": {"kind": "rv", "n_planets": 1, "dataset": dataset_path},
            "samplers": [{"name": "am"}],
            "chains": 1,
            "iterations": 40,
            "burn_in": 20,
            "output_dir": str(tmp_path / "run"),
        }
    )
    manifest = run_experiment(cfg)
    assert not manifest.chains[0]["failed"]
    states, _, _, _ = harness._read_trace(Path(cfg.output_dir) / "trace_am_00.csv")
    assert states.shape == (60, 6)


# --- CLI -----------------------------------------------------------------

def _write_cfg(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path


def test_cli_run_missing_config():
    assert cli.main(["run", "/no/such/config.json"]) == 2


def test_cli_bad_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{", encoding="utf-8")
    assert cli.main(["run", str(path)]) == 2


def test_cli_invalid_config(tmp_path):
    path = _write_cfg(tmp_path, {"target": {"kind": "student_t"}, "samplers": []})
    assert cli.main(["run", str(path)]) == 2


def test_cli_complexity(capsys):
    assert cli.main(["complexity", "--n", "20"]) == 0
    out = capsys.readouterr().out
    assert "400.0" in out and "8000.0" in out and "am" in out


def test_cli_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2


def test_cli_run_then_summarize_idempotent(tmp_path, capsys):
    raw = minimal_config(tmp_path)
    path = _write_cfg(tmp_path, raw)
    assert cli.main(["run", str(path)]) == 0
    out = Path(raw["output_dir"])
    first = (out / "summary.csv").read_bytes()
    (out / "summary.csv").unlink()
    assert cli.main(["summarize", str(out)]) == 0
    assert (out / "summary.csv").read_bytes() == first


def test_cli_summarize_missing_dir(tmp_path):
    assert cli.main(["summarize", str(tmp_path / "nowhere")]) == 2


def test_cli_simulate(tmp_path, capsys):
    raw = {
        "target": {"kind": "rv", "n_planets": 1},
        "samplers": [{"name": "am"}],
        "output_dir": str(tmp_path / "sim"),
    }
    path = _write_cfg(tmp_path, raw)
    assert cli.main(["simulate", str(path)]) == 0
    assert (tmp_path / "sim" / "datasets" / "rv_1planet.csv").exists()


def test_cli_seed_override_changes_traces(tmp_path):
    raw_a = minimal_config(tmp_path, output_dir=str(tmp_path / "a"))
    raw_b = minimal_config(tmp_path, output_dir=str(tmp_path / "b"))
    pa = _write_cfg(tmp_path, raw_a, "a.json")
    pb = _write_cfg(tmp_path, raw_b, "b.json")
    assert cli.main(["run", str(pa)]) == 0
    assert cli.main(["run", str(pb), "--seed", "77"]) == 0
    ta = (Path(raw_a["output_dir"]) / "trace_mala_00.csv").read_bytes()
    tb = (Path(raw_b["output_dir"]) / "trace_mala_00.csv").read_bytes()
    assert ta != tb
