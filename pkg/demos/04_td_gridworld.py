"""
TD(0) and its accelerated variant on GridWorld
==============================================

Evaluate the uniform random policy on a 10x10 grid with three Fourier
features and compare the norm of the expected TD update.
"""
from amgd.rl import GridWorld, run_policy_eval_experiment

env = GridWorld(10)
seeds = [0, 1, 2]
for method in ("td0", "td0_acc"):
    rep = run_policy_eval_experiment(env, method, 100, seeds)
    mean, lo, hi = rep.band
    print(f"{method:8s}", " ".join(f"{v:.3f}" for v in mean), f"  (last CI {lo[-1]:.3f}..{hi[-1]:.3f})")
