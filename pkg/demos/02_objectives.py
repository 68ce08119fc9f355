"""
Objectives sampled along a Markov chain
=======================================

Least squares and a bounded rational loss whose data index follows a chain.
The gradient seen after k steps is biased, and the bias fades with mixing.
"""
import numpy as np

from amgd.markov import random_chain
from amgd.oracles import (FeasibleSet, make_least_squares, make_robust_nonconvex, markov_bias_curve,
                          random_least_squares_data, f_star)

rng = np.random.default_rng(1)
chain = random_chain(10, rng)
A, b = random_least_squares_data(10, 3, rng)
ball = FeasibleSet.ball(np.zeros(3), 1.0)

ls = make_least_squares(chain, A, b, ball)
print(f"least squares: L={ls.L:.3f}  M={ls.M:.3f}  mu={ls.mu:.4f}  ({ls.convexity})")

fs, xs = f_star(ls, chain, ball)
print("constrained optimum:", np.round(xs, 4), " |x*| =", round(float(np.linalg.norm(xs)), 4), " f* =", round(fs, 6))

rat = make_robust_nonconvex(chain, A, b, scale=1.0)
print(f"rational loss: L={rat.L:.3f}  M={rat.M:.3f}  ({rat.convexity})")

# bias of the k-step gradient from state 0, next to its 2 M TV envelope
biases, tvs = markov_bias_curve(ls, chain, xs, 0, 30)
for k in (0, 1, 2, 5, 10, 30):
    print(f"k={k:2d}  |bias|={np.linalg.norm(biases[k]):.2e}  2M*TV={2 * ls.M * tvs[k]:.2e}")
