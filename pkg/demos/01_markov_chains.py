"""
Finite Markov chains: stationarity and mixing
=============================================

Build a small chain, check it is ergodic, and watch the worst-case
total-variation distance to the stationary distribution shrink.
"""
import numpy as np

from amgd.markov import validate_ergodic, mixing_time, tv_curve, sample_path, state_frequencies, tv_distance

chain = validate_ergodic([[0.9, 0.1],
                          [0.2, 0.8]])
print("stationary distribution:", chain.pi)

# the second eigenvalue is 0.7, so the TV curve is geometric
curve = tv_curve(chain, 20)
print("worst-case TV for k = 0..5:", np.round(curve[:6], 4))

for gamma in (0.1, 0.01, 0.001):
    print(f"mixing time at {gamma:g}: {mixing_time(chain, gamma)}")

# a long sample path visits states in proportion to pi
path = sample_path(chain, 0, 100_000, np.random.default_rng(0))
freq = state_frequencies(path, chain.n_states)
print("empirical frequencies:", freq, " TV to pi:", round(tv_distance(freq, chain.pi), 5))

# a periodic chain is rejected
try:
    validate_ergodic([[0, 1], [1, 0]])
except ValueError as err:
    print("flip chain:", err)
