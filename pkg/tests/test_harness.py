import json

import numpy as np
import pytest

from abcmodel.harness.cli import main
from abcmodel.harness.config import ConfigError, ExperimentConfig, load_config, parse_overrides
from abcmodel.harness.experiments import (comparison_error, initial_profile, mc_vs_exact,
                                          run_ensemble, run_pde)
from abcmodel.harness.io import (RunManifest, params_from_dict, params_to_dict,
                                 read_trajectories, write_ensemble, write_trajectory)
from abcmodel.simulator import simulate, simulate_ensemble
from conftest import MisSignedRightRates, make_params

SMALL = ["sim.N=[8, 16]", "sim.replicas=4", "sim.t_end=0.02", "sim.times=[0.0, 0.01, 0.02]",
         "pde.M=32"]


def test_overrides_parse_toml_values():
    o = parse_overrides(["model.beta=2", "model.left=[0.4, 0.4, 0.2]", "regime.kind=robin"])
    assert o == {"model.beta": 2, "model.left": [0.4, 0.4, 0.2], "regime.kind": "robin"}
    with pytest.raises(ConfigError):
        parse_overrides(["model.beta"])


def test_config_file_and_override_precedence(tmp_path):
    f = tmp_path / "c.toml"
    f.write_text('model.beta = 2.0\n[sim]\nreplicas = 7\n')
    cfg = load_config(f, {"model.beta": 3.0})
    assert cfg["model.beta"] == 3.0 and cfg["sim.replicas"] == 7


@pytest.mark.parametrize("overrides,needle", [
    ({"model.bogus": 1}, "unknown config keys: model.bogus"),
    ({"model.theta": 0.5, "model.delta": 0.5}, "theta"),
    ({"model.left": [0.5, 0.5, 0.5]}, "model.left"),
    ({"sim.N": [64, 32]}, "ascending"),
    ({"sim.times": [0.0, 0.5]}, "sim.t_end"),
    ({"compare.norm": "L7"}, "compare.norm"),
    ({"regime.kind": "neumann"}, "regime.kind"),
])
def test_config_rejections(overrides, needle):
    with pytest.raises(ConfigError, match=needle):
        load_config(None, overrides)


def test_config_rejects_unreadable_file(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("model.beta = = 1\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_regime_auto_and_with_key():
    cfg = load_config()
    assert cfg.regime().is_dirichlet
    assert not cfg.replace(**{"model.theta": 1.0, "model.delta": 1.0}).regime().is_dirichlet
    assert cfg.with_key("model.beta", 0.0)["model.beta"] == 0.0
    with pytest.raises(ConfigError):
        cfg.with_key("nope", 1)


@pytest.mark.parametrize("preset", ["constant", "linear", "step", "bump"])
def test_initial_profiles_are_probability_triples(preset):
    g = initial_profile(load_config(None, {"initial.preset": preset}))
    v = g(np.linspace(0, 1, 33))
    assert v.shape == (3, 33) and v.min() >= 0 and np.allclose(v.sum(axis=0), 1)


def test_params_dict_roundtrip():
    p = make_params(N=12, beta=0.7)
    assert params_from_dict(json.loads(json.dumps(params_to_dict(p)))) == p


def test_trajectory_io_roundtrip(tmp_path, params):
    ens = simulate_ensemble(params, (0.4, 0.3, 0.3), 0.05, [0.0, 0.02, 0.05], 11, 5)
    write_ensemble(tmp_path / "e.bin", ens)
    header, times, snaps = read_trajectories(tmp_path / "e.bin")
    assert header["format"] == "abctraj-1" and header["replica_ids"] == list(range(5))
    assert np.array_equal(times, ens.times) and np.array_equal(snaps, ens.snapshots)
    traj = simulate(params, (0.4, 0.3, 0.3), 0.05, [0.0, 0.05], 11)
    write_trajectory(tmp_path / "t.bin", traj)
    _, _, s1 = read_trajectories(tmp_path / "t.bin")
    assert np.array_equal(s1[0], traj.snapshots)


def test_trajectory_io_detects_truncation(tmp_path, params):
    ens = simulate_ensemble(params, (0.4, 0.3, 0.3), 0.01, [0.01], 1, 3)
    path = tmp_path / "e.bin"
    write_ensemble(path, ens)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(ValueError):
        read_trajectories(path)


def test_manifest_refuses_missing_outputs(tmp_path):
    man = RunManifest("x", {}, "0")
    man.add(tmp_path / "missing.csv")
    with pytest.raises(FileNotFoundError):
        man.write(tmp_path)


def test_run_ensemble_independent_of_jobs():
    p = make_params(N=12)
    g = initial_profile(load_config())
    a = run_ensemble(p, g, 0.02, [0.01, 0.02], 5, 6, jobs=1)
    b = run_ensemble(p, g, 0.02, [0.01, 0.02], 5, 6, jobs=3)
    assert np.array_equal(a.snapshots, b.snapshots)


def test_comparison_stderr_scales_like_inverse_sqrt_R():
    cfg = load_config(None, {"sim.N": [32], "pde.M": 64, "initial.preset": "constant"})
    sol = run_pde(cfg)
    p = cfg.params(32)
    se = []
    for R in (100, 400):
        ens = simulate_ensemble(p, (1 / 3, 1 / 3, 1 / 3), 0.1, [0.1], 3, R)
        se.append(comparison_error(ens, 0, sol, "L1", 16)[1])
    assert 1.6 < se[0] / se[1] < 2.5


def test_comparison_error_of_exact_profile_is_small():
    # a frozen deterministic state compared with a PDE started from its own profile
    cfg = load_config(None, {"sim.N": [16], "pde.M": 32, "sim.t_end": 0.0, "sim.times": [0.0],
                             "initial.preset": "constant", "initial.value": [1.0 / 3] * 3})
    sol = run_pde(cfg)
    ens = simulate_ensemble(cfg.params(16), (1 / 3, 1 / 3, 1 / 3), 0.0, [0.0], 2, 3000)
    err, se = comparison_error(ens, 0, sol, "L1", 4)
    assert err < 5 * se + 1e-12
    for norm, bins in (("L2", 4), ("L1", None), ("sup-pairing", None)):
        assert np.isfinite(comparison_error(ens, 0, sol, norm, bins)[0])


def test_mc_vs_exact_passes_for_reference_rates():
    rep, rows = mc_vs_exact(make_params(N=3), (0.05, 0.2), 4000, 9)
    assert rep.passed, rep.line()
    assert len(rows) == 2 * 2 * 3


def test_cli_bad_config_exit_code(tmp_path, capsys):
    assert main(["solve", "--set", "model.theta=0.5", "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err
    assert main(["solve", "--set", "pde.nope=1", "--out", str(tmp_path)]) == 2


def test_cli_solve_writes_outputs(tmp_path):
    out = tmp_path / "solve"
    assert main(["solve", "--out", str(out), "--set", "pde.M=32", "--set", "pde.refine=true"]) == 0
    for name in ("pde_solution.csv", "residuals.csv", "pde_summary.txt", "manifest.json"):
        assert (out / name).exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "solve" and man["status"] == "ok"


def test_cli_simulate_is_deterministic(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        args = ["simulate", "--out", str(out), "--seed", "123", "--set", "sim.write_trajectories=true"]
        for s in SMALL:
            args += ["--set", s]
        assert main(args) == 0
        outs.append(out)
    files = sorted(p.name for p in outs[0].glob("*.csv"))
    assert files and files == sorted(p.name for p in outs[1].glob("*.csv"))
    for name in files + ["trajectories_N8.bin"]:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_cli_compare_and_sweep(tmp_path):
    args = []
    for s in SMALL:
        args += ["--set", s]
    assert main(["compare", "--out", str(tmp_path / "c")] + args) == 0
    lines = (tmp_path / "c" / "convergence.csv").read_text().splitlines()
    assert lines[0] == "N,R,t,norm,error,stderr" and len(lines) == 1 + 2 * 2
    assert main(["sweep", "--out", str(tmp_path / "s"), "--set", "sweep.key=model.beta",
                 "--set", "sweep.values=[0.0, 1.0]"] + args) == 0
    assert len((tmp_path / "s" / "sweep.csv").read_text().splitlines()) == 1 + 2 * 2 * 2
    assert main(["sweep", "--out", str(tmp_path / "s2")] + args) == 2


def test_cli_oracle_pass_and_negative_control(tmp_path, capsys):
    base = ["--set", "oracle.mc_replicas=4000", "--set", "oracle.pairs=20"]
    assert main(["oracle", "--out", str(tmp_path / "ok")] + base) == 0
    assert "FAIL" not in (tmp_path / "ok" / "oracle_report.txt").read_text()
    code = main(["oracle", "--out", str(tmp_path / "bad")] + base, rates_factory=MisSignedRightRates)
    assert code == 4
    report = (tmp_path / "bad" / "oracle_report.txt").read_text()
    assert "FAIL adjoint_right" in report
    assert "failed identities" in capsys.readouterr().err
