import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from shrinkmatch.harness import cli
from shrinkmatch.harness.config import ConfigError, ExperimentConfig, load_config, parse_config_text
from shrinkmatch.harness.experiments import HEADERS, TrialError, run_experiment, run_trial, splitmix64, trial_seed
from shrinkmatch.signal_model import SystemDims, read_observations

TINY = """
experiment = mse
trials = 2
seed = 3
N = 8
L_p = 2
N_R = 2
B = 12
A = 12
I = 1
L = 1
K = 4, 12   # two sample sizes
subcarriers_per_pu = 3
"""


def test_parse_config_text():
    cfg = parse_config_text(TINY)
    assert cfg.experiment == "mse" and cfg.trials == 2 and cfg.seed == 3
    assert cfg.dims == SystemDims(N=8, L_p=2, N_R=2, B=12, A=12, I=1, L=1)
    assert cfg.K == (4, 12)


@pytest.mark.parametrize("text,fragment", [
    ("bogus = 1", "unknown key"),
    ("trials = 1\ntrials = 2", "duplicate"),
    ("trials = many", "bad value"),
    ("no equals sign", "key = value"),
    ("experiment = nope", "experiment"),
    ("estimators = sample, magic", "estimators"),
    ("N = 0", "N"),
    ("seed = -1", "seed"),
])
def test_config_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config_text(text)


def test_presets_load():
    for name in ("desk", "scaled", "paper"):
        cfg = load_config(name)
        assert isinstance(cfg, ExperimentConfig)
    assert load_config("paper").dims.N == 64
    with pytest.raises(ConfigError):
        load_config("/nonexistent/file.cfg")


def test_spatial_cap():
    cfg = load_config("desk")
    assert cfg.spatial_cap() == min(2 * cfg.dims.I * cfg.dims.L, cfg.dims.N_R)
    assert cfg.with_overrides(spatial_max_support=1).spatial_cap() == 1


def test_splitmix_reference_values():
    # first outputs of the reference generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert splitmix64(0x9E3779B97F4A7C15) == 0x6E789E6AA1B965F4


@given(st.integers(0, 2**64 - 1), st.integers(0, 10_000), st.integers(0, 10_000))
def test_trial_seeds_distinct(master, i, j):
    if i != j:
        assert trial_seed(master, i) != trial_seed(master, j)
    assert trial_seed(master, i) == trial_seed(master, i)


def test_mse_experiment_schema():
    cfg = parse_config_text(TINY)
    res = run_experiment(cfg)
    rows = list(csv.reader(io.StringIO(res.to_csv())))
    assert tuple(rows[0]) == HEADERS["mse"]
    assert len(rows) == 1 + 2 * 3
    assert [r[1] for r in rows[1:4]] == ["sample", "shrink", "sm"]
    data = json.loads(res.to_json())
    assert data["trials"] == 2 and len(data["rows"]) == 6


def test_throughput_and_aoa_schema():
    base = parse_config_text(TINY.replace("experiment = mse", "experiment = throughput"))
    cfg = base.with_overrides(snr_db=(0.0, 10.0), K=(4,), trials=1)
    res = run_experiment(cfg)
    assert res.header == HEADERS["throughput"] and len(res.rows) == 2
    res = run_experiment(cfg.with_overrides(experiment="aoa", n_r=(2,), aoa_K=4))
    assert res.header == HEADERS["aoa"] and [r[2] for r in res.rows] == ["sm", "music"] * 2


def test_run_trial_error_carries_index():
    cfg = parse_config_text(TINY).with_overrides(min_aoa_sep_deg=179.0)
    cfg = cfg.with_overrides(dims=SystemDims(N=8, L_p=2, N_R=2, B=12, A=12, I=3, L=2))
    with pytest.raises(TrialError) as info:
        run_trial(cfg, 4)
    assert info.value.index == 4
    with pytest.raises(RuntimeError, match="all 2 trials failed"):
        run_experiment(cfg)


def _write_cfg(tmp_path, text=TINY):
    p = tmp_path / "tiny.cfg"
    p.write_text(text)
    return str(p)


def test_cli_exp_csv(tmp_path, capsys):
    assert cli.main(["exp", "mse", "--config", _write_cfg(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == ",".join(HEADERS["mse"])
    assert len(out.splitlines()) == 7


def test_cli_usage_errors(tmp_path, capsys):
    assert cli.main([]) == 2
    assert cli.main(["exp", "nope"]) == 2
    assert cli.main(["exp", "mse", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert cli.main(["exp", "mse", "--config", _write_cfg(tmp_path), "--threads", "0"]) == 2
    assert cli.main(["gen", "--config", _write_cfg(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_dict_info(capsys):
    assert cli.main(["dict", "info", "--kind", "spatial"]) == 0
    lines = dict(l.split(" = ") for l in capsys.readouterr().out.splitlines())
    assert lines["D"] == str(load_config("desk").dims.B)
    assert float(lines["coherence_sampled"]) <= 1.0


def test_cli_gen_then_sm_and_ssm(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    obs = tmp_path / "full.bin"
    scen = tmp_path / "scenario.json"
    assert cli.main(["gen", "--config", cfg, "--kind", "full", "-K", "6", "--out", str(obs),
                     "--scenario-out", str(scen)]) == 0
    loaded = read_observations(obs)
    dims = parse_config_text(TINY).dims
    assert loaded.kind == "full" and loaded.data.shape == (dims.M * dims.N_R, 6)
    assert "paths" in json.loads(scen.read_text())
    assert cli.main(["ssm", "--config", cfg, "--obs", str(obs), "--snr-db", "10", "--format", "json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) >= {"aoas", "subcarriers"}
    sp = tmp_path / "sp.bin"
    assert cli.main(["gen", "--config", cfg, "--kind", "spatial", "-K", "6", "--out", str(sp)]) == 0
    assert cli.main(["sm", "--config", cfg, "--obs", str(sp), "--dict", "spatial"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "index,params,value"
    # a spatial file fed to the temporal dictionary is a usage error
    assert cli.main(["sm", "--config", cfg, "--obs", str(sp), "--dict", "temporal"]) == 2


def test_cli_ssm_synthesized(tmp_path, capsys):
    assert cli.main(["ssm", "--config", _write_cfg(tmp_path), "-K", "8"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["key", "value"] and rows[1][0] == "aoas"


def test_common_random_numbers_across_grid():
    # the same trial index sees the same scenario whatever the grid
    cfg = parse_config_text(TINY)
    a = run_trial(cfg, 0)
    b = run_trial(cfg.with_overrides(K=(12,)), 0)
    assert a[12].nmse == pytest.approx(b[12].nmse)
    assert not np.isnan(a[4].nmse["sm"])
