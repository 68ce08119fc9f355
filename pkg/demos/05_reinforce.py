"""
REINFORCE with and without acceleration
=======================================

A tabular softmax policy learns to walk to the corner of a 4x4 grid.
The accelerated version feeds the negated policy gradient to the
nonconvex accelerated step.
"""
from amgd.rl import GridWorld, run_policy_gradient_experiment

env = GridWorld(4)
for method in ("reinforce", "reinforce_acc"):
    rep = run_policy_gradient_experiment(env, method, 20, 10, [0, 1, 2], lr=0.05, discount=0.99)
    print(f"{method:14s} return at iteration 0: {rep.mean[0]:7.2f}   at 20: {rep.mean[-1]:7.2f}")
