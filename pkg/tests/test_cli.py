import csv
import json
from pathlib import Path

import numpy as np
import pytest

from coupon_llrl.cli import ConfigError, ExperimentConfig, load_config, main, worker_count

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL_OCC = {
    "experiment": "occ_run",
    "seeds": [0, 1, 2, 3],
    "params": {"T": 500, "env": {"kind": "hard_instance", "C": 4}, "write_games": True, "curve_stride": 50,
               "collectors": [{"name": "forcedexp", "alpha": 0.5}, {"name": "expfirst", "E": 20}]},
}
SMALL_LLRL = {
    "experiment": "llrl_run",
    "seeds": [0, 1, 2],
    "params": {"env": {"kind": "gridworld"}, "schedule": {"kind": "nonstationary", "params": {"E": 3, "total": 8, "block": 2}},
               "tasks": 8, "E": 3, "algorithms": ["forced", "expfirst"],
               "llrl": {"H": 400, "m": 3, "L": 20, "count_mistakes": True}},
}


def run(tmp_path, cfg, group=("occ", "run"), name="out"):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / name
    return main([*group, "--config", str(path), "--out", str(out)]), out


def read(path):
    return list(csv.reader(open(path)))


def test_occ_run_outputs(tmp_path):
    code, out = run(tmp_path, SMALL_OCC)
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["games_expfirst_E20.csv", "games_forcedexp_a0.5.csv", "regret_expfirst_E20.csv",
                     "regret_forcedexp_a0.5.csv", "summary.csv"]
    curve = read(out / "regret_forcedexp_a0.5.csv")
    assert curve[0] == ["t", "mean_regret", "std_regret", "n"] and curve[-1][0] == "500" and len(curve) == 11
    # the curve's last point equals the mean of per-seed final cumulative regrets
    games = read(out / "games_forcedexp_a0.5.csv")
    finals = [float(r[-1]) for r in games[1:] if r[1] == "500"]
    assert len(finals) == 4 and float(curve[-1][1]) == pytest.approx(np.mean(finals), rel=1e-9)


def test_replay_bit_identical(tmp_path):
    _, a = run(tmp_path, SMALL_LLRL, ("llrl", "run"), "a")
    _, b = run(tmp_path, SMALL_LLRL, ("llrl", "run"), "b")
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_parallel_matches_serial(tmp_path, monkeypatch):
    _, a = run(tmp_path, SMALL_LLRL, ("llrl", "run"), "serial")
    monkeypatch.setenv("COUPON_LLRL_PARALLELISM", "2")
    _, b = run(tmp_path, SMALL_LLRL, ("llrl", "run"), "parallel")
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_worker_count(monkeypatch):
    cfg = ExperimentConfig("occ_run", parallelism=3)
    monkeypatch.delenv("COUPON_LLRL_PARALLELISM", raising=False)
    assert worker_count(cfg) == 3
    monkeypatch.setenv("COUPON_LLRL_PARALLELISM", "5")
    assert worker_count(cfg) == 5
    monkeypatch.setenv("COUPON_LLRL_PARALLELISM", "many")
    with pytest.raises(ConfigError, match="COUPON_LLRL_PARALLELISM"):
        worker_count(cfg)


def test_summary_consistent_with_task_logs(tmp_path):
    code, out = run(tmp_path, SMALL_LLRL, ("llrl", "run"))
    assert code == 0
    summary = {(r[0], r[1]): r for r in read(out / "summary.csv")[1:]}
    bounds = {"phase1": slice(0, 3), "phase2": slice(3, 8), "overall": slice(0, 8)}
    for algo in ("forced", "expfirst"):
        rows = read(out / f"tasks_{algo}.csv")[1:]
        R = np.zeros((3, 8))
        for r in rows:
            R[int(r[0]), int(r[1]) - 1] = float(r[5])
        for phase, sl in bounds.items():
            v = R[:, sl].mean(axis=1)
            row = summary[(algo, f"reward_{phase}")]
            assert float(row[2]) == pytest.approx(v.mean(), rel=1e-9, abs=1e-9)
            assert float(row[3]) == pytest.approx(v.std(ddof=1), rel=1e-9, abs=1e-9)
            assert row[4] == "3"
    assert summary[("expfirst", "reward_overall")][5] != "" and summary[("forced", "reward_overall")][5] == ""
    curve = read(out / "curve_forced.csv")
    assert curve[0] == ["task", "mean_smoothed_reward", "std_error"] and len(curve) == 9


def test_config_errors_name_the_field(tmp_path, capsys):
    cases = [
        ({**SMALL_OCC, "seeds": []}, "seeds"),
        ({**SMALL_OCC, "colour": 1}, "colour"),
        ({k: v for k, v in SMALL_OCC.items() if k != "experiment"}, "experiment"),
        ({**SMALL_OCC, "params": {**SMALL_OCC["params"], "T": "ten"}}, "params.T"),
        ({**SMALL_OCC, "params": {k: v for k, v in SMALL_OCC["params"].items() if k != "T"}}, "params.T"),
        ({**SMALL_OCC, "params": {**SMALL_OCC["params"], "env": {"kind": "hard_instance"}}}, "params.env.C"),
        ({**SMALL_OCC, "params": {**SMALL_OCC["params"], "collectors": [{"name": "greedy"}]}}, "params.collectors"),
        ({**SMALL_OCC, "experiment": "llrl_run"}, "experiment"),
    ]
    for i, (cfg, field) in enumerate(cases):
        code, out = run(tmp_path, cfg, name=f"bad{i}")
        assert code == 2, field
        assert field in capsys.readouterr().err
        assert not out.exists()
    bad_llrl = {**SMALL_LLRL, "params": {**SMALL_LLRL["params"], "llrl": {"H": 10, "gamma": 0.9}}}
    assert run(tmp_path, bad_llrl, ("llrl", "run"), "badl")[0] == 2
    assert "params.llrl" in capsys.readouterr().err


def test_missing_and_invalid_config_file(tmp_path):
    assert main(["occ", "run", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["occ", "run", "--config", str(tmp_path / "broken.json"), "--out", str(tmp_path / "o")]) == 2
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.json")


def test_runtime_failure_cleans_up(tmp_path, capsys):
    # a 12-task run on an 8-task schedule writes the first algorithm then fails
    cfg = {**SMALL_LLRL, "params": {**SMALL_LLRL["params"], "tasks": 12}}
    code, out = run(tmp_path, cfg, ("llrl", "run"))
    assert code == 3 and "runtime failure" in capsys.readouterr().err
    assert not out.exists()
    # an existing directory keeps its earlier contents and loses only the new files
    keep = tmp_path / "kept"
    keep.mkdir()
    (keep / "notes.txt").write_text("x")
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["llrl", "run", "--config", str(tmp_path / "c.json"), "--out", str(keep)]) == 3
    assert [p.name for p in keep.iterdir()] == ["notes.txt"]


def test_env_describe_v4(tmp_path, capsys):
    cfg = json.loads((CONFIGS / "describe_gridworld_v4.json").read_text())
    code, out = run(tmp_path, cfg, ("env", "describe"))
    assert code == 0
    info = json.loads(capsys.readouterr().out)
    assert info["S"] == 25 and info["A"] == 4
    assert info["reward_sites"] == {"s1": 0.99, "s25": 0.75}
    assert json.loads((out / "describe.json").read_text()) == info
    assert json.loads((out / "mdp.json").read_text())["S"] == 25


def test_bounds_and_lowerbound(tmp_path):
    code, out = run(tmp_path, json.loads((CONFIGS / "occ_bounds.json").read_text()), ("occ", "bounds"))
    rows = read(out / "bounds.csv")
    assert code == 0 and rows[0][:4] == ["algo", "T", "alpha_or_E", "delta"] and len(rows) == 5
    assert rows[3][2] == "53"  # ceil(10 ln 200)
    lb = {"experiment": "occ_lowerbound", "seeds": [0, 1, 2],
          "params": {"T_values": [100, 1000], "C": 4}}
    code, out = run(tmp_path, lb, ("occ", "lowerbound"), "lb")
    assert code == 0 and len(read(out / "lowerbound.csv")) == 3
    assert read(out / "summary.csv")[1][1] == "loglog_slope"


def test_sweep(tmp_path):
    cfg = json.loads((CONFIGS / "sweep_alpha.json").read_text())
    cfg["seeds"] = [0, 1]
    cfg["params"]["base"]["params"]["T"] = 300
    code, out = run(tmp_path, cfg, ("sweep",))
    assert code == 0
    runs = sorted(p.name for p in out.iterdir())
    assert runs == ["run000", "run001", "run002"]
    alphas = [json.loads((out / r / "config.json").read_text())["params"]["collectors"][0]["alpha"] for r in runs]
    assert alphas == [0.3, 0.5, 0.7]
    assert (out / "run002" / "regret_forcedexp_a0.7.csv").exists()


def test_shipped_configs_parse():
    for path in sorted(CONFIGS.glob("*.json")):
        if path.name == "acceptance.json":  # acceptance parameters, not an experiment
            assert {f"c{i}" for i in range(2, 11)} <= set(json.loads(path.read_text()))
            continue
        assert load_config(path).seeds
