import csv
import math

import numpy as np
import pytest

from coupon_llrl.envs import StochasticSchedule, gridworld_family, nonstationary_schedule
from coupon_llrl.lifelong import (EXPFIRST, LOG_HEADER, LlrlConfig, count_mistakes, draw_tasks,
                                  lifelong_streams, probe_decision, run_lifelong, run_rmax_tasks,
                                  theorem3_budget, write_lifelong_csv)
from coupon_llrl.mdp import FiniteMdp, value_iteration

FAMILY = gridworld_family()
UNIFORM = StochasticSchedule((0.25,) * 4)
GRID = LlrlConfig(H=40_000)


def test_config_validation():
    for bad in (dict(alpha=1.0), dict(alpha=0.0), dict(H=0), dict(epsilon=0), dict(probe_rule="sometimes")):
        with pytest.raises(ValueError):
            LlrlConfig(**bad)
    assert LlrlConfig().elim == 119 and LlrlConfig(n_elim=50).elim == 50


def test_probe_decision():
    cfg = LlrlConfig()
    assert all(probe_decision(1, cfg, xi) for xi in np.linspace(0, 0.999999, 50))
    assert probe_decision(4, cfg, 0.49) and not probe_decision(4, cfg, 0.5)
    ef = LlrlConfig(probe_rule=EXPFIRST, E=3)
    assert probe_decision(3, ef, 0.99) and not probe_decision(4, ef, 0.0)


def test_probe_frequency_law():
    n, alpha = 500, 0.5
    cfg = LlrlConfig(alpha=alpha)
    hits = {t: 0 for t in (1, 4, 25, 100)}
    for seed in range(n):
        rng = lifelong_streams(seed)[1]
        xi = rng.random(100)
        for t in hits:
            hits[t] += probe_decision(t, cfg, xi[t - 1])
    for t, h in hits.items():
        p = t ** -alpha
        assert abs(h / n - p) <= 3 * math.sqrt(p * (1 - p) / n) + 1e-12


def test_run_uses_probe_stream():
    cfg = LlrlConfig(H=300, m=2, L=20)
    log = run_lifelong(UNIFORM, FAMILY, cfg, 30, seed=7)
    xi = lifelong_streams(7)[1].random(30)
    assert [r.probed for r in log.records] == [probe_decision(t, cfg, xi[t - 1]) for t in range(1, 31)]
    assert [r.true_model for r in log.records] == draw_tasks(UNIFORM, 30, 7)


def test_empty_library_exploit_falls_back():
    cfg = LlrlConfig(H=500, m=5, probe_rule=EXPFIRST, E=0)
    log = run_lifelong(UNIFORM, FAMILY, cfg, 3, seed=0)
    assert all(not r.probed and r.fallback and r.model_id is None for r in log.records)
    assert len(log.library) == 0


def test_incomplete_probe_leaves_library():
    cfg = LlrlConfig(H=1000)  # far below one m=119 probe
    log = run_lifelong(UNIFORM, FAMILY, cfg, 1, seed=0)
    r = log.records[0]
    assert r.probed and r.classified == "Incomplete" and r.steps == 1000
    assert len(log.library) == 0


def test_replay_and_shared_tasks():
    cfg = LlrlConfig(H=40_000)
    a = run_lifelong(UNIFORM, FAMILY, cfg, 8, seed=3)
    b = run_lifelong(UNIFORM, FAMILY, cfg, 8, seed=3)
    assert np.array_equal(a.rewards, b.rewards)
    assert [r.classified for r in a.records] == [r.classified for r in b.records]
    c = run_lifelong(UNIFORM, FAMILY, LlrlConfig(H=40_000, probe_rule=EXPFIRST, E=2), 8, seed=3)
    assert [r.true_model for r in a.records] == [r.true_model for r in c.records]
    assert all(r.steps == 40_000 for r in a.records)


def test_library_converges_and_is_monotone():
    exact = 0
    for seed in range(30):
        log = run_lifelong(UNIFORM, FAMILY, GRID, 50, seed)
        sizes = np.array(log.library_sizes)
        probed = np.cumsum([r.probed for r in log.records])
        assert np.all(np.diff(sizes) >= 0) and np.all(sizes <= probed)
        exact += sizes[-1] == 4
        # every matched entry points at the same true model it was created from
        owner = {}
        for r in log.records:
            if r.probed and r.model_id is not None:
                assert owner.setdefault(r.model_id, r.true_model) == r.true_model
    assert exact >= 27


def test_count_mistakes():
    eps, gamma = 0.1, 0.9
    R = np.array([[1.0, 1.0 - 2 * eps * (1 - gamma)]])
    mdp = FiniteMdp(np.ones((1, 2, 1)), R, gamma)
    states = np.zeros(7, dtype=int)
    assert count_mistakes(states, np.zeros((7, 1), dtype=int), mdp, eps) == 0
    assert count_mistakes(states, np.ones((7, 1), dtype=int), mdp, eps) == 7
    pi = value_iteration(FAMILY[2], tol=1e-10).policy
    assert count_mistakes(np.arange(25), np.tile(pi, (25, 1)), FAMILY[2], eps) == 0


def test_theorem3_budget():
    b = theorem3_budget(4, 10, 0.5, 1000, 100, 0.1)
    assert b == pytest.approx(160 * 100 + 4 * 1000 * 10 * math.log(40), rel=1e-12)
    assert round(b) == 163_555
    small = theorem3_budget(4, 10, 0.5, 1e-6, 100, 0.1)
    assert theorem3_budget(4, 10, 0.5, 1e-6, 400, 0.1) / small == pytest.approx(4, rel=1e-6)
    rho0_term = lambda g: theorem3_budget(4, 10, g, 1e-9, 100, 0.1)
    assert rho0_term(0.25) / rho0_term(0.5) == pytest.approx(4, rel=1e-6)


def test_rmax_tasks_share_sequence_and_count():
    cfg = LlrlConfig(H=2000, m=5, count_mistakes=True)
    log = run_rmax_tasks(nonstationary_schedule(18), FAMILY, cfg, 30, seed=2)
    assert [r.true_model for r in log.records] == draw_tasks(nonstationary_schedule(18), 30, 2)
    assert all(0 <= r.mistakes <= 2000 for r in log.records)
    assert log.total_mistakes == sum(r.mistakes for r in log.records)


def test_lifelong_csv(tmp_path):
    log = run_lifelong(UNIFORM, FAMILY, LlrlConfig(H=300, m=2, L=20, count_mistakes=True), 5, seed=1)
    write_lifelong_csv([log], tmp_path / "l.csv")
    rows = list(csv.reader(open(tmp_path / "l.csv")))
    assert rows[0] == LOG_HEADER and len(rows) == 6
    assert [int(r[1]) for r in rows[1:]] == [1, 2, 3, 4, 5]
    assert all(r[6] != "" for r in rows[1:])
