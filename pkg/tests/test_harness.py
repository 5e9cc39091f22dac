import numpy as np
import pytest
import yaml

from sketch4dvar.harness import ConfigError, ExperimentConfig, generate_scenario, preset, run_experiment
from sketch4dvar.harness.cli import main
from sketch4dvar.harness.config import PRESETS, from_mapping, load_config
from sketch4dvar.harness.run import (SUMMARY_COLUMNS, parse_axes, read_csv, report, sweep, write_csv)
from sketch4dvar.harness.scenario import burgers_sensor_indices, bve_sensor_indices


def tiny(**kw):
    base = dict(n=49, n_obs=7, n_t=4, n_forecast=6, steps_per_interval=None, max_gn_iters=6,
                sketch_sizes=[2, 6], sweep_seeds=2, reference_n=49, spectrum_rank=10)
    base.update(kw)
    return preset("burgers_1_1").replace(**base)


def test_presets_build():
    for name in PRESETS:
        cfg = preset(name)
        assert cfg.experiment == name
    assert preset("bve_2").state_size == 64 * 129
    with pytest.raises(ConfigError):
        preset("nope")


def test_table_defaults():
    cfg = preset("burgers_1_1")
    assert (cfg.n, cfg.nu, cfg.n_t, cfg.n_forecast, cfg.n_obs) == (399, 0.1, 20, 81, 15)
    assert (cfg.alpha, cfg.beta, cfg.obs_variance) == (0.5, 500.0, 0.01)
    assert cfg.sketch.l == 15 and cfg.sketch.l2_eff == 31


@pytest.mark.parametrize("bad", [dict(model="lorenz"), dict(task="plot"), dict(mode="Newton"),
                                 dict(n_t=100), dict(obs_variance=0.0), dict(alpha=0.0, beta=0.0),
                                 dict(n_obs=500), dict(sketch_sizes=[0]), dict(sweep_methods=["qr"])])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        preset("burgers_1_1").replace(**bad)


def test_yaml_config_roundtrip(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"preset": "burgers_1_2", "nu": 0.05, "sketch": {"method": "nystrom", "l": 7}}))
    cfg = load_config(path)
    assert cfg.task == "sketch_size" and cfg.nu == 0.05
    assert cfg.sketch.method == "nystrom" and cfg.sketch.l == 7
    assert from_mapping(cfg.to_dict()) == cfg


def test_config_errors_from_mapping(tmp_path):
    with pytest.raises(ConfigError):
        from_mapping({"bogus": 1})
    with pytest.raises(ConfigError):
        from_mapping({"sketch": {"l": 0}})
    bad = tmp_path / "bad.yaml"
    bad.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_sensor_layouts():
    idx = burgers_sensor_indices(399, 15)
    assert np.allclose((idx + 1) / 400, np.arange(1, 16) / 16, atol=1.5 / 400)
    b = bve_sensor_indices(64, 129, 16, 16)
    assert b.size == 256 and np.all(np.diff(b) > 0)
    with pytest.raises(ValueError):
        burgers_sensor_indices(5, 15)


def test_scenario_is_seeded():
    a, b = generate_scenario(tiny()), generate_scenario(tiny())
    assert np.array_equal(a.background, b.background)
    assert np.array_equal(a.problem.observations, b.problem.observations)
    c = generate_scenario(tiny(seed=1))
    assert not np.array_equal(a.background, c.background)


def test_noise_free_observations_match_truth():
    sc = generate_scenario(tiny(noise_scale=0.0))
    traj = sc.trajectory(sc.truth, sc.config.n_t)
    assert np.allclose(sc.problem.observations, traj[1:, sc.problem.obs_indices])


def test_assimilate_artifacts(tmp_path):
    art = run_experiment(tiny(), tmp_path)
    assert art.ok
    summary = read_csv(art.files["summary"])
    assert list(summary[0]) == SUMMARY_COLUMNS
    its = read_csv(art.files["iterations"])
    # counters reconcile with the per-iteration log
    assert sum(int(r["pcg_iterations"]) for r in its) == int(summary[0]["pcg_total"])
    errs = read_csv(art.files["errors"])
    assert len(errs) == 7
    for r in errs[: 5]:
        assert float(r["analysis_error"]) <= float(r["forecast_error"])
    raw = art.files["summary"].read_bytes()
    assert raw.count(b"\r\n") == 2


def test_forecast_only_errors_equal_background(tmp_path):
    sc = generate_scenario(tiny())
    a = sc.trajectory(sc.background)
    b = sc.trajectory(sc.background)
    assert np.array_equal(a, b)


def test_artifacts_are_byte_identical(tmp_path):
    run_experiment(tiny(mode="SketchPrecA"), tmp_path / "a")
    run_experiment(tiny(mode="SketchPrecA"), tmp_path / "b")
    for name in ("summary.csv", "iterations.csv", "errors.csv", "config.yaml"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sketch_size_and_conditioning_tasks(tmp_path):
    art = run_experiment(tiny(task="sketch_size"), tmp_path / "s")
    rows = read_csv(art.files["sketch_size"])
    assert rows[0]["method"] == "none"
    assert len(rows) == 1 + 3 * 2 * 2 + 2
    art = run_experiment(tiny(task="conditioning", sketch={"l": 6}), tmp_path / "c")
    row = read_csv(art.files["conditioning"])[0]
    assert float(row["cond_shifted"]) > 1
    assert len(read_csv(art.files["spectrum"])) == 10


def test_sweep_and_report(tmp_path):
    cfg = tiny(out=str(tmp_path))
    axes = parse_axes(["sketch.method=randsvd,nystrom", "sketch.l=4"], cfg)
    assert axes == {"sketch.method": ["randsvd", "nystrom"], "sketch.l": [4]}
    path = sweep(cfg, axes)
    rows = read_csv(path)
    assert [r["sketch.method"] for r in rows] == ["randsvd", "nystrom"]
    assert all(r["status"] == "ok" for r in rows)
    rep = read_csv(report(tmp_path))
    assert len(rep) == 2


def test_single_point_sweep_matches_run(tmp_path):
    cfg = tiny(out=str(tmp_path / "sw"))
    sweep(cfg, parse_axes(["nu=0.1"], cfg))
    run_experiment(cfg, tmp_path / "run")
    a = (tmp_path / "sw" / "nu-0.1" / "summary.csv").read_bytes()
    assert a == (tmp_path / "run" / "summary.csv").read_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_sweep_records_failures(tmp_path):
    cfg = tiny(out=str(tmp_path))
    # an explicit step count far above the stability limit blows up at run time
    path = sweep(cfg, {"steps_per_interval": [6, 1]})
    status = [r["status"] for r in read_csv(path)]
    assert status[0] == "ok" and status[1].startswith("failed")


def test_parse_axes_errors():
    cfg = tiny()
    with pytest.raises(ConfigError):
        parse_axes(["nonsense=1"], cfg)
    with pytest.raises(ConfigError):
        parse_axes(["n"], cfg)


def test_cli_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.yaml"
    good.write_text(yaml.safe_dump({**tiny().to_dict(), "out": str(tmp_path / "out")}))
    assert main(["run", str(good)]) == 0
    assert (tmp_path / "out" / "summary.csv").exists()
    assert main(["report", str(tmp_path / "out")]) == 0

    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"preset": "burgers_1_1", "nu": -1.0}))
    assert main(["run", str(bad)]) == 2
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2
    assert main(["sweep", str(good)]) == 2
    assert main(["report", str(tmp_path / "empty")]) == 2

    stalled = tmp_path / "stalled.yaml"
    stalled.write_text(yaml.safe_dump({**tiny().to_dict(), "max_gn_iters": 1, "grad_tol": 1e-12,
                                       "out": str(tmp_path / "stalled")}))
    assert main(["run", str(stalled)]) == 1


def test_cli_seed_and_sweep(tmp_path):
    good = tmp_path / "good.yaml"
    good.write_text(yaml.safe_dump(tiny().to_dict()))
    out = tmp_path / "sw"
    assert main(["sweep", str(good), "--axis", "sketch.l=3,5", "--seed", "4", "--out", str(out)]) == 0
    rows = read_csv(out / "sweep.csv")
    assert len(rows) == 2
    cfg = yaml.safe_load((out / "l-3" / "config.yaml").read_text())
    assert cfg["seed"] == 4
