import filecmp

import numpy as np
import pytest
import yaml

from minemfg.cli import main
from minemfg.config import ConfigError, ExperimentConfig, config_from_dict, load_config

SMALL = {
    "model": {"c": 0.05, "r": 2.0, "M": 5.0, "L": 2.0},
    "time": {"n": 0, "T": 12},
    "grid": {"wealth_nodes": 64, "action_nodes": 12, "x_min": -14.0, "x_max": 40.0},
    "initial": {"mean": 5.0, "sd": 1.5},
    "simulation": {"N": 200, "seed": 3},
}


def write_cfg(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(d / "c.cfg", SMALL)
    assert run("solve", "--config", cfg, "--out", d / "a") == 0
    return d, cfg


def test_defaults_validate():
    cfg = ExperimentConfig().validate()
    assert cfg.game().time.K == 600


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict({"model": {"cc": 1.0}})
    with pytest.raises(ConfigError):
        config_from_dict({"modle": {}})
    assert run("solve", "--config", write_cfg(tmp_path / "x.cfg", {"grid": {"nodes": 3}})) == 2
    assert run("solve", "--config", write_cfg(tmp_path / "y.cfg", {"model": {"c": -1}})) == 2
    assert run("solve", "--config", tmp_path / "missing.cfg") == 2


def test_solve_artifacts(solved):
    d, _ = solved
    out = d / "a"
    for name in ("eta_bar.csv", "policy.csv", "value.csv", "distribution.csv", "trace.csv", "manifest.yaml"):
        assert (out / name).exists()
    assert (out / "eta_bar.csv").read_text().splitlines()[0] == "k,t,eta_bar"
    assert (out / "policy.csv").read_text().splitlines()[0] == "k,t,x,a_star"
    man = yaml.safe_load((out / "manifest.yaml").read_text())
    assert man["run"]["converged"] is True
    assert set(man["artifacts"]) >= {"eta_bar.csv", "policy.csv"}
    eta = np.loadtxt(out / "eta_bar.csv", delimiter=",", skiprows=1)[:, 2]
    assert eta.min() > 0


def test_rerun_and_manifest_round_trip(solved):
    d, cfg = solved
    assert run("solve", "--config", cfg, "--out", d / "b") == 0
    assert run("solve", "--config", d / "a" / "manifest.yaml", "--out", d / "c") == 0
    for name in ("eta_bar.csv", "policy.csv", "value.csv", "distribution.csv", "trace.csv"):
        assert filecmp.cmp(d / "a" / name, d / "b" / name, shallow=False)
        assert filecmp.cmp(d / "a" / name, d / "c" / name, shallow=False)
    # the resolved config in the manifest is itself a valid config
    again = load_config(d / "a" / "manifest.yaml")
    assert again.model.c == SMALL["model"]["c"]


def test_simulate_and_best_response(solved):
    d, cfg = solved
    assert run("simulate", "--config", cfg, "--out", d / "a") == 0
    cs = np.loadtxt(d / "a" / "control_surface.csv", delimiter=",", skiprows=1)
    assert cs[:, 3].min() >= 0 and cs[:, 3].max() <= SMALL["model"]["L"]
    header = (d / "a" / "stats.csv").read_text().splitlines()[0]
    assert header == "k,t,mean,variance,skewness,gini,dropout_fraction,empirical_control_mean,eta_bar"
    assert (d / "a" / "manifest-simulate.yaml").exists()
    assert run("best-response", "--config", cfg, "--out", d / "a", "--seed", 11) == 0
    rows = (d / "a" / "best_response.csv").read_text().splitlines()
    assert rows[0] == "quantity,value" and rows[1].startswith("value_gap,")


def test_simulate_needs_equilibrium(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", SMALL)
    assert run("simulate", "--config", cfg, "--out", tmp_path / "empty") == 4
    assert run("best-response", "--config", cfg, "--out", tmp_path / "empty") == 4


def test_zero_policy_keeps_initial_density(tmp_path):
    data = dict(SMALL, simulation={"N": 50, "seed": 1, "policy": "zero"})
    cfg = write_cfg(tmp_path / "z.cfg", data)
    assert run("simulate", "--config", cfg, "--out", tmp_path / "z") == 0
    w = np.loadtxt(tmp_path / "z" / "wealth_evolution.csv", delimiter=",", skiprows=1)
    m = SMALL["grid"]["wealth_nodes"]
    dens = w[:, 3].reshape(-1, m)
    assert np.all(dens == dens[0])
    game = config_from_dict(data).game()
    xs = game.grid.points
    width = np.diff(np.concatenate(([xs[0]], 0.5 * (xs[1:] + xs[:-1]), [xs[-1]])))
    np.testing.assert_allclose(dens[0] * width, game.mu0, atol=1e-15)


def test_constant_utility_gives_zero_flow(tmp_path):
    data = dict(SMALL, utility={"kind": "constant", "value": 1.0})
    cfg = write_cfg(tmp_path / "k.cfg", data)
    assert run("solve", "--config", cfg, "--out", tmp_path / "k") == 0
    eta = np.loadtxt(tmp_path / "k" / "eta_bar.csv", delimiter=",", skiprows=1)[:, 2]
    pol = np.loadtxt(tmp_path / "k" / "policy.csv", delimiter=",", skiprows=1)[:, 3]
    assert np.all(pol == 0)
    # the damped iterate decays geometrically to within the stopping bound
    assert np.all(eta <= 1e-6)


def test_refine_single_row_and_determinism(tmp_path):
    cfg = write_cfg(tmp_path / "r.cfg", SMALL)
    assert run("refine", "--config", cfg, "--out", tmp_path / "r", "--n-min", 1, "--n-max", 1) == 0
    lines = (tmp_path / "r" / "refinement_study.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[1].split(",")[2] == ""
    assert run("refine", "--config", cfg, "--out", tmp_path / "s", "--n-min", 0, "--n-max", 2) == 0
    assert run("refine", "--config", cfg, "--out", tmp_path / "t", "--n-min", 0, "--n-max", 2) == 0
    col = lambda p: [l.split(",")[2] for l in (p / "refinement_study.csv").read_text().splitlines()]
    assert col(tmp_path / "s") == col(tmp_path / "t")
    assert (tmp_path / "s" / "n2" / "eta_bar.csv").exists()
    assert run("refine", "--config", cfg, "--out", tmp_path / "u", "--n-min", 2, "--n-max", 1) == 2


def test_nonconvergence_exit_code(tmp_path):
    data = dict(SMALL, solver={"max_iter": 2})
    cfg = write_cfg(tmp_path / "n.cfg", data)
    assert run("solve", "--config", cfg, "--out", tmp_path / "n") == 3
    assert (tmp_path / "n" / "trace.csv").exists()
