"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run just these with ``pytest tests/test_acceptance.py -v -s``; the slow rate and
RL studies are marked ``slow`` (deselect with ``-m "not slow"``).
"""
import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from amgd.harness import ExperimentConfig, execute, run_rate_study
from amgd.markov import random_chain, validate_ergodic, mixing_time
from amgd.oracles import (
    FeasibleSet,
    exact_gradient,
    exact_objective,
    make_least_squares,
    make_robust_nonconvex,
    markov_bias,
    markov_bias_curve,
    random_least_squares_data,
)
from amgd.optim import (
    CONVEX_THM2,
    NONCONVEX_THM1,
    STRONGLY_CONVEX_THM3,
    OptimizerTrace,
    build_schedule,
    gamma_product,
    output_weights,
    prox_step,
    select_output,
)
from amgd.rl import GridWorld, SoftmaxPolicy, policy_rollout, reinforce_gradient, surrogate
from conftest import ACCEPTANCE_LINES
from reference import brute_force_prox

SEEDS_10 = list(range(10))


def verdict(number, ok, detail, elapsed=None):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
    if elapsed is not None:
        line += f" [{elapsed:.2f}s]"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def central_diff(fun, x, h=1e-5):
    out = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return out


def test_c01_schedule_identity():
    t0 = time.perf_counter()
    worst = 0.0
    ks = np.arange(2, 100_001, dtype=float)
    for mu in (0.1, 1.0, 10.0):
        s = build_schedule(STRONGLY_CONVEX_THM3, 1.0, mu=mu)
        a, b, g = s.alpha(ks), s.beta(ks), s.gamma(ks)
        dev = np.abs(b * (1 - a) / (a * (1 - b)) - 1.0 / (1.0 + mu * g))
        # k = 1 has alpha = beta = 1 (0/0 ratio); it holds in cross-multiplied form
        worst = max(worst, float(dev.max()), s.coupling_residual(1))
    elapsed = time.perf_counter() - t0
    verdict(1, worst <= 1e-12 and elapsed < 1.0, f"max identity deviation {worst:.3e} (<= 1e-12)", elapsed)


def test_c02_gamma_closed_form():
    t0 = time.perf_counter()
    s = build_schedule(CONVEX_THM2, 1.0)
    worst = max(abs(gamma_product(s, k) - 2 / (k * (k + 1))) / (2 / (k * (k + 1))) for k in range(1, 100_001))
    elapsed = time.perf_counter() - t0
    verdict(2, worst <= 1e-9 and elapsed < 1.0, f"max relative error {worst:.3e} (<= 1e-9)", elapsed)


def test_c03_output_rule():
    t0 = time.perf_counter()
    sums_ok = True
    rng = np.random.default_rng(0)
    for _ in range(20):
        K = int(rng.integers(1, 5000))
        p = output_weights(rng.uniform(0.01, 0.9, K), 1.0)
        sums_ok &= abs(p.sum() - 1.0) <= 1e-12
    sched = build_schedule(NONCONVEX_THM1, 2.0, K=10_000, gamma_end="upper")
    p = output_weights([sched.gamma(k) for k in range(1, 10_001)], 2.0)
    sums_ok &= abs(p.sum() - 1.0) <= 1e-12
    uniform_ok = bool(np.allclose(output_weights([0.37] * 50, 0.0), 1 / 50, rtol=0, atol=1e-15))

    gammas = [0.05, 0.1, 0.2, 0.3, 0.4]
    trace = OptimizerTrace("amgd_nonconvex", 0, gammas=gammas, ys=[np.array([float(k)]) for k in range(1, 6)])
    p = output_weights(gammas, 1.0)
    n = 100_000
    draw_rng = np.random.default_rng(1)
    counts = np.zeros(5)
    for _ in range(n):
        R, _y = select_output(trace, 1.0, draw_rng)
        counts[R - 1] += 1
    z = np.abs(counts / n - p) / np.sqrt(p * (1 - p) / n)
    elapsed = time.perf_counter() - t0
    ok = sums_ok and uniform_ok and bool(np.all(z <= 3)) and elapsed < 5.0
    verdict(3, ok, f"sums ok={sums_ok}, uniform ok={uniform_ok}, max |z|={z.max():.2f} (<= 3)", elapsed)


def test_c04_prox_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(100):
        if i % 2 == 0:
            fs = FeasibleSet.ball(rng.normal(size=2), rng.uniform(0.3, 2.0))
        else:
            lo = rng.normal(size=2)
            fs = FeasibleSet.box(lo, lo + rng.uniform(0.3, 2.5, 2))
        x_prev, y, g = rng.normal(size=2) * 2, rng.normal(size=2) * 2, rng.normal(size=2) * 3
        gamma = rng.uniform(0.05, 2.0)
        mu = 0.0 if i % 4 < 2 else rng.uniform(0.1, 5.0)
        closed = prox_step(x_prev, y, g, gamma, mu, fs)
        worst = max(worst, float(np.max(np.abs(closed - brute_force_prox(x_prev, y, g, gamma, mu, fs)))))
    elapsed = time.perf_counter() - t0
    verdict(4, worst <= 1e-6 and elapsed < 10.0, f"max deviation {worst:.3e} over 100 instances (<= 1e-6)", elapsed)


def test_c05_bias_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    chain = random_chain(5, rng)
    A, b = random_least_squares_data(5, 3, rng)
    ball = FeasibleSet.ball(np.zeros(3), 2.0)
    obj = make_least_squares(chain, A, b, ball)
    worst_slack = -np.inf
    spot_ok = True
    for _ in range(20):
        x = ball.sample(rng, 3)
        for xi0 in range(5):
            biases, tvs = markov_bias_curve(obj, chain, x, xi0, 200)
            slack = np.linalg.norm(biases, axis=1) - 2 * obj.M * tvs
            worst_slack = max(worst_slack, float(slack.max()))
            for k in (0, 7, 200):
                spot_ok &= bool(np.allclose(markov_bias(obj, chain, x, xi0, k), biases[k], atol=1e-14))
    elapsed = time.perf_counter() - t0
    ok = worst_slack <= 1e-10 and spot_ok and elapsed < 5.0
    verdict(5, ok, f"max (||bias|| - 2M TV) = {worst_slack:.3e} (<= 1e-10)", elapsed)


def test_c06_mixing_time():
    t0 = time.perf_counter()
    chain = validate_ergodic([[0.9, 0.1], [0.2, 0.8]])
    got, want = [], []
    for gamma in (0.1, 0.01, 0.001):
        got.append(mixing_time(chain, gamma))
        # worst-case TV is (2/3) 0.7^k, attained from state 1
        want.append(next(k for k in range(10_000) if (2 / 3) * 0.7**k <= gamma))
    elapsed = time.perf_counter() - t0
    verdict(6, got == want and elapsed < 1.0, f"tau = {got}, closed form {want}", elapsed)


def _rate(number, regime, lo, hi, seeds, **params):
    t0 = time.perf_counter()
    cfg = ExperimentConfig.from_dict({"kind": "rates", "regime": regime, "seeds": seeds, **params})
    report = run_rate_study(cfg)
    elapsed = time.perf_counter() - t0
    s = report.slope
    verdict(number, lo <= s.slope <= hi,
            f"fitted slope {s.slope:.3f} in [{lo}, {hi}] (window {s.window[0]:g}..{s.window[1]:g}, "
            f"{s.n_points} points, rms {s.residual:.3f})", elapsed)


@pytest.mark.slow
def test_c07_strongly_convex_rate():
    _rate(7, STRONGLY_CONVEX_THM3, -1.4, -0.6, SEEDS_10, horizons=[100_000], window=[1e3, 1e5])


@pytest.mark.slow
def test_c08_convex_rate():
    _rate(8, CONVEX_THM2, -0.8, -0.3, SEEDS_10, horizons=[100_000], window=[1e3, 1e5])


@pytest.mark.slow
def test_c09_nonconvex_rate():
    Ks = [round(10**e) for e in (2, 2.5, 3, 3.5, 4)]
    _rate(9, NONCONVEX_THM1, -0.8, -0.25, list(range(20)), horizons=Ks)


@pytest.mark.slow
def test_c10_td_acc_vs_td():
    t0 = time.perf_counter()
    finals = {}
    for method in ("td0", "td0_acc"):
        rep = execute(ExperimentConfig.from_dict({"kind": "rl-td", "method": method, "size": 10, "seeds": SEEDS_10}))
        assert rep.ks[-1] % 10 == 0
        finals[method] = float(rep.mean[-1])
    elapsed = time.perf_counter() - t0
    verdict(10, finals["td0_acc"] <= finals["td0"],
            f"final mean NEU td0_acc={finals['td0_acc']:.4f} <= td0={finals['td0']:.4f}", elapsed)


@pytest.mark.slow
def test_c11_reinforce_acc_vs_reinforce():
    t0 = time.perf_counter()
    res = {}
    for method in ("reinforce", "reinforce_acc"):
        rep = execute(ExperimentConfig.from_dict({"kind": "rl-pg", "method": method, "seeds": SEEDS_10}))
        res[method] = (float(rep.mean[0]), float(rep.mean[-1]))
    elapsed = time.perf_counter() - t0
    (i0, f0), (i1, f1) = res["reinforce"], res["reinforce_acc"]
    ok = f1 >= f0 and f0 > i0 and f1 > i1
    verdict(11, ok, f"final mean return reinforce_acc={f1:.3f} >= reinforce={f0:.3f}; "
                    f"initial {i0:.3f} / {i1:.3f}", elapsed)


def test_c12_gradient_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(12)
    chain = random_chain(8, rng)
    A, b = random_least_squares_data(8, 4, rng)
    objectives = [
        (make_least_squares(chain, A, b, FeasibleSet.ball(np.zeros(4), 3.0)), FeasibleSet.ball(np.zeros(4), 3.0)),
        (make_least_squares(chain, A, b, FeasibleSet.box(-np.ones(4), np.ones(4))), FeasibleSet.box(-np.ones(4), np.ones(4))),
        (make_robust_nonconvex(chain, 2 * A, b, 0.7), FeasibleSet.box(-4 * np.ones(4), 4 * np.ones(4))),
    ]
    worst = 0.0
    for obj, region in objectives:
        for _ in range(100):
            x, xi = region.sample(rng, 4), int(rng.integers(8))
            g = obj.grad(x, xi)
            fd = central_diff(lambda z: obj.value(z, xi), x)
            worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-3)))
        for _ in range(20):
            x = region.sample(rng, 4)
            fd = central_diff(lambda z: exact_objective(obj, chain, z), x)
            worst = max(worst, float(np.linalg.norm(exact_gradient(obj, chain, x) - fd) / max(np.linalg.norm(fd), 1e-3)))

    env = GridWorld(3)
    pol = SoftmaxPolicy.tabular(env.n_states, env.n_actions)
    pg_worst = 0.0
    for seed in range(5):
        theta = np.random.default_rng(seed).normal(size=pol.dim) * 0.5
        batch_rng = np.random.default_rng([seed, 9])
        batch = [policy_rollout(env, pol, theta, batch_rng) for _ in range(4)]
        for baseline in ("none", "mean_return"):
            g = reinforce_gradient(pol, theta, batch, env.discount, baseline)
            fd = central_diff(lambda t: surrogate(pol, t, batch, env.discount, baseline), theta)
            pg_worst = max(pg_worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1.0)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and pg_worst <= 1e-6 and elapsed < 30.0
    verdict(12, ok, f"objective FD rel err {worst:.2e}, policy-gradient FD err {pg_worst:.2e} (<= 1e-6)", elapsed)


CLI_CASES = [
    ["rates", "--regime", "strongly_convex_thm3", "--horizons", "3000", "--n-points", "25", "--window", "100", "3000"],
    ["rates", "--regime", "convex_thm2", "--horizons", "3000", "--n-points", "25", "--window", "100", "3000"],
    ["rates", "--regime", "nonconvex_thm1", "--horizons", "100", "316", "1000", "3162"],
    ["rl-td", "--size", "5", "--episodes", "40", "--method", "td0_acc"],
    ["rl-pg", "--size", "3", "--iterations", "5", "--batch", "4", "--method", "reinforce_acc"],
]


def test_c13_cli_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "td.json"
    cfg.write_text(json.dumps({"kind": "rl-td", "size": 4, "episodes": 20, "method": "td0", "seeds": [3, 4]}))
    cases = CLI_CASES + [["run", str(cfg)]]
    mismatches, n_files = [], 0
    for i, argv in enumerate(cases):
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"case{i}{rep}"
            env = dict(os.environ, AMGD_WORKERS="2" if rep == "a" else "1")
            subprocess.run([sys.executable, "-m", "amgd", *argv, "--seeds", "0", "1", "2", "--out", str(out)],
                           check=True, capture_output=True, env=env)
            outs.append(out)
        for f in sorted(p.name for p in outs[0].iterdir()):
            n_files += 1
            if (outs[0] / f).read_bytes() != (outs[1] / f).read_bytes():
                mismatches.append(f"{' '.join(argv[:1])}/{f}")
    elapsed = time.perf_counter() - t0
    verdict(13, not mismatches, f"{n_files} output files compared, mismatches: {mismatches or 'none'}", elapsed)
