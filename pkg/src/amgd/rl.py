"""Desk-scale reinforcement learning on GridWorld.

Policy evaluation with TD(0) and its accelerated variant (the convex AMGD
step driven by semi-gradient TD directions), measured by the norm of the
expected TD update (NEU). Also policy optimization with REINFORCE and its
accelerated variant (the nonconvex AMGD step fed the negated policy
gradient), using a linear softmax policy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .markov import FiniteMarkovChain, validate_ergodic
from .optim import (
    ConvexState,
    NonconvexState,
    StepSchedule,
    amgd_convex_step,
    amgd_nonconvex_step,
    constant,
    convex_query,
    coupled_beta,
    custom_schedule,
    nonconvex_query,
)
from .report import ExperimentReport, aggregate

# up, down, left, right as (row, col) offsets
ACTIONS = ((-1, 0), (1, 0), (0, -1), (0, 1))
FOURIER_COEFFS = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)


class EmptyBatch(ValueError):
    pass


class Transition(NamedTuple):
    s: int
    a: int
    r: float
    s_next: int
    terminal: bool


@dataclass(frozen=True, eq=False)
class GridWorld:
    """``n x n`` grid, start top-left, absorbing goal bottom-right.

    Every move costs ``reward`` (so the goal has value 0); moves off the
    grid leave the agent in place. Episodes stop at the goal or after
    ``episode_cap`` steps (``10 n`` by default).
    """

    n: int
    reward: float = -1.0
    discount: float = 0.9
    episode_cap: Optional[int] = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("grid needs n >= 2")
        if self.episode_cap is None:
            object.__setattr__(self, "episode_cap", 10 * self.n)

    @property
    def n_states(self) -> int:
        return self.n * self.n

    @property
    def n_actions(self) -> int:
        return len(ACTIONS)

    @property
    def start(self) -> int:
        return 0

    @property
    def goal(self) -> int:
        return self.n_states - 1

    def coords(self, s: int):
        return divmod(int(s), self.n)

    @cached_property
    def next_state(self) -> np.ndarray:
        table = np.empty((self.n_states, self.n_actions), dtype=np.int64)
        for s in range(self.n_states):
            r, c = self.coords(s)
            for a, (dr, dc) in enumerate(ACTIONS):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < self.n and 0 <= cc < self.n):
                    rr, cc = r, c
                table[s, a] = rr * self.n + cc
        return table

    def step(self, s: int, a: int) -> Transition:
        s2 = int(self.next_state[s, a])
        return Transition(int(s), int(a), self.reward, s2, s2 == self.goal)

    def uniform_transition_matrix(self) -> np.ndarray:
        """State-to-state matrix of the uniform random walk, goal treated as an ordinary cell.

        Stay-in-place at walls makes it symmetric, hence doubly stochastic.
        """
        P = np.zeros((self.n_states, self.n_states))
        for s in range(self.n_states):
            for a in range(self.n_actions):
                P[s, self.next_state[s, a]] += 1.0 / self.n_actions
        return P

    def restart_chain(self) -> FiniteMarkovChain:
        """The episodic walk as one ergodic chain: the goal jumps back to the start."""
        P = self.uniform_transition_matrix()
        P[self.goal] = 0.0
        P[self.goal, self.start] = 1.0
        return validate_ergodic(P)

    @cached_property
    def features(self) -> np.ndarray:
        return np.stack([fourier_features(self.coords(s), self.n) for s in range(self.n_states)])


def fourier_features(s, n: int) -> np.ndarray:
    """``cos(pi c . s~)`` for ``c`` in ``{(0,0), (1,0), (0,1)}``, ``s~ = (row, col) / (n - 1)``."""
    st = np.asarray(s, dtype=float) / (n - 1)
    return np.cos(np.pi * FOURIER_COEFFS @ st)


def uniform_rollout(env: GridWorld, rng: np.random.Generator, start: Optional[int] = None):
    s = env.start if start is None else start
    episode = []
    for _ in range(env.episode_cap):
        tr = env.step(s, int(rng.integers(env.n_actions)))
        episode.append(tr)
        if tr.terminal:
            break
        s = tr.s_next
    return episode


# -- policy evaluation -----------------------------------------------------------------------


def td_error(theta, tr: Transition, env: GridWorld) -> float:
    phi = env.features
    boot = 0.0 if tr.terminal else env.discount * float(theta @ phi[tr.s_next])
    return tr.r + boot - float(theta @ phi[tr.s])


def td0_update(theta, tr: Transition, lr: float, env: GridWorld) -> np.ndarray:
    if not lr > 0:
        raise ValueError("lr must be positive")
    return theta + lr * td_error(theta, tr, env) * env.features[tr.s]


def td_acc_schedule(mu: float = 1.0, delta: float = 0.1) -> StepSchedule:
    """``alpha_k = 2/(k+1)``, ``gamma_k = 2 delta / (mu (k+1))`` and the coupled ``beta_k``."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    alpha = lambda k: 2.0 / (k + 1)  # noqa: E731
    gamma = lambda k: 2.0 * delta / (mu * (k + 1))  # noqa: E731
    return custom_schedule(alpha, coupled_beta(alpha, gamma, mu), gamma, "convex", L=0.0, mu=mu)


def td0_acc_update(state: ConvexState, tr: Transition, schedule: StepSchedule, mu: float,
                   env: GridWorld, k: Optional[int] = None) -> ConvexState:
    """One convex AMGD step with ``G(y; xi) = -delta_TD(y) phi(s)``; ``k`` freezes the step sizes."""
    k = state.k + 1 if k is None else k
    y = convex_query(state, schedule, k)
    g = -td_error(y, tr, env) * env.features[tr.s]
    return amgd_convex_step(state, g, schedule, mu, k=k)


def neu(theta, env: GridWorld, n_test_episodes: int = 10, rng: Optional[np.random.Generator] = None) -> float:
    """Norm of the mean TD update ``delta * phi(s)`` over freshly sampled test episodes."""
    if n_test_episodes < 1:
        raise ValueError("need at least one test episode")
    rng = np.random.default_rng() if rng is None else rng
    transitions = [tr for _ in range(n_test_episodes) for tr in uniform_rollout(env, rng)]
    return neu_of(theta, transitions, env)


def neu_of(theta, transitions: Sequence[Transition], env: GridWorld) -> float:
    total = np.zeros(env.features.shape[1])
    for tr in transitions:
        total += td_error(theta, tr, env) * env.features[tr.s]
    return float(np.linalg.norm(total / len(transitions)))


def run_td(env: GridWorld, method: str, episodes: int, seed: int, measure_every: int = 10, lr: float = 0.001,
           mu: float = 1.0, delta: float = 0.1, n_test: int = 10, per_step: bool = False):
    """One seed of TD(0) or TD(0)-Acc; returns ``(episode_indices, neu_values)``."""
    train_rng = np.random.default_rng([seed, 0])
    test_rng = np.random.default_rng([seed, 1])
    theta = np.zeros(env.features.shape[1])
    if method == "td0_acc":
        schedule = td_acc_schedule(mu, delta)
        state = ConvexState.initial(theta)
    elif method != "td0":
        raise ValueError(f"unknown policy-evaluation method {method!r}")
    step = 0
    idx, vals = [], []
    for ep in range(1, episodes + 1):
        for tr in uniform_rollout(env, train_rng):
            if method == "td0":
                theta = td0_update(theta, tr, lr, env)
            else:
                step += 1
                state = td0_acc_update(state, tr, schedule, mu, env, k=step if per_step else ep)
        if ep % measure_every == 0:
            current = theta if method == "td0" else state.x_bar
            idx.append(ep)
            vals.append(neu(current, env, n_test, test_rng))
    return np.asarray(idx), np.asarray(vals)


def run_policy_eval_experiment(env: GridWorld, method: str, episodes: int, seeds: Sequence[int],
                               measure_every: int = 10, **kwargs) -> ExperimentReport:
    per_seed = {}
    idx = None
    for s in seeds:
        idx, vals = run_td(env, method, episodes, s, measure_every, **kwargs)
        per_seed[s] = vals
    return aggregate(idx, per_seed, "neu", index_name="episode_index", mean_name="mean_metric",
                     metadata={"method": method, "grid": env.n, "episodes": episodes})


# -- policy optimization ---------------------------------------------------------------------


class SoftmaxPolicy:
    """``pi_theta(a|s) ~ exp(theta . psi(s, a))`` with a fixed feature tensor ``psi[s, a, :]``."""

    def __init__(self, features):
        self.features = np.asarray(features, dtype=float)
        self.n_states, self.n_actions, self.dim = self.features.shape

    @classmethod
    def tabular(cls, n_states: int, n_actions: int) -> "SoftmaxPolicy":
        psi = np.eye(n_states * n_actions).reshape(n_states, n_actions, n_states * n_actions)
        return cls(psi)

    def logits(self, theta, s):
        return self.features[s] @ theta

    def probs(self, theta, s) -> np.ndarray:
        z = self.logits(theta, s)
        z = np.exp(z - z.max())
        return z / z.sum()

    def all_probs(self, theta) -> np.ndarray:
        z = self.features @ theta
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def log_prob(self, theta, s, a) -> float:
        z = self.logits(theta, s)
        zmax = z.max()
        return float(z[a] - zmax - math.log(np.exp(z - zmax).sum()))

    def score(self, theta, s, a) -> np.ndarray:
        """``grad_theta log pi(a|s) = psi(s, a) - sum_a' pi(a'|s) psi(s, a')``."""
        return self.features[s, a] - self.probs(theta, s) @ self.features[s]


def policy_rollout(env: GridWorld, policy: SoftmaxPolicy, theta, rng: np.random.Generator):
    probs = policy.all_probs(theta)
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    s = env.start
    episode = []
    for _ in range(env.episode_cap):
        a = int(np.searchsorted(cdf[s], 1.0 - rng.random(), side="left"))
        tr = env.step(s, a)
        episode.append(tr)
        if tr.terminal:
            break
        s = tr.s_next
    return episode


def returns_to_go(episode: Sequence[Transition], discount: float) -> np.ndarray:
    out = np.empty(len(episode))
    acc = 0.0
    for t in range(len(episode) - 1, -1, -1):
        acc = episode[t].r + discount * acc
        out[t] = acc
    return out


def _weights(batch, discount, baseline):
    rets = [returns_to_go(ep, discount) for ep in batch]
    if baseline == "mean_return":
        b = float(np.mean(np.concatenate(rets))) if any(len(r) for r in rets) else 0.0
    elif baseline == "none":
        b = 0.0
    else:
        raise ValueError(f"unknown baseline {baseline!r}")
    return [r - b for r in rets]


def reinforce_gradient(policy: SoftmaxPolicy, theta, batch, discount: float, baseline: str = "mean_return"):
    """Ascent direction ``(1/|B|) sum_ep sum_t score(s_t, a_t) (R_t - b)``."""
    if not batch:
        raise EmptyBatch("empty episode batch")
    grad = np.zeros(policy.dim)
    for ep, w in zip(batch, _weights(batch, discount, baseline)):
        for tr, wt in zip(ep, w):
            grad += wt * policy.score(theta, tr.s, tr.a)
    return grad / len(batch)


def surrogate(policy: SoftmaxPolicy, theta, batch, discount: float, baseline: str = "mean_return") -> float:
    """``(1/|B|) sum log pi(a_t|s_t) (R_t - b)`` with the weights held fixed."""
    total = 0.0
    for ep, w in zip(batch, _weights(batch, discount, baseline)):
        for tr, wt in zip(ep, w):
            total += wt * policy.log_prob(theta, tr.s, tr.a)
    return total / len(batch)


def average_return(env: GridWorld, policy: SoftmaxPolicy, theta, n_episodes: int, rng) -> float:
    """Mean undiscounted return over ``n_episodes`` fresh episodes."""
    return float(np.mean([sum(tr.r for tr in policy_rollout(env, policy, theta, rng)) for _ in range(n_episodes)]))


def run_pg(env: GridWorld, method: str, iterations: int, batch_size: int, seed: int, eval_episodes: int = 50,
           lr: float = 0.1, baseline: str = "mean_return", discount: Optional[float] = None):
    """One seed of REINFORCE or REINFORCE-Acc; returns ``(iteration_indices, mean_returns)``.

    The accelerated variant feeds ``-g`` into the nonconvex AMGD step with
    ``beta_k = lr`` and ``gamma_k = (1 + alpha_k) lr``. Evaluation uses the
    policy the next iteration would sample with (``y_{k+1}``).
    """
    discount = env.discount if discount is None else discount
    policy = SoftmaxPolicy.tabular(env.n_states, env.n_actions)
    train_rng = np.random.default_rng([seed, 0])
    eval_rng = np.random.default_rng([seed, 1])
    theta = np.zeros(policy.dim)
    if method == "reinforce_acc":
        alpha = lambda k: 2.0 / (k + 1)  # noqa: E731
        schedule = custom_schedule(alpha, constant(lr), lambda k: (1.0 + alpha(k)) * lr, "nonconvex",
                                   horizon=max(iterations, 1))
        state = NonconvexState.initial(theta)
    elif method != "reinforce":
        raise ValueError(f"unknown policy-gradient method {method!r}")

    idx = [0]
    vals = [average_return(env, policy, theta, eval_episodes, eval_rng)]
    for k in range(1, iterations + 1):
        if method == "reinforce":
            batch = [policy_rollout(env, policy, theta, train_rng) for _ in range(batch_size)]
            theta = theta + lr * reinforce_gradient(policy, theta, batch, discount, baseline)
            current = theta
        else:
            y = nonconvex_query(state, schedule, k)
            batch = [policy_rollout(env, policy, y, train_rng) for _ in range(batch_size)]
            state = amgd_nonconvex_step(state, -reinforce_gradient(policy, y, batch, discount, baseline), schedule, k)
            current = nonconvex_query(state, schedule, k + 1)
        idx.append(k)
        vals.append(average_return(env, policy, current, eval_episodes, eval_rng))
    return np.asarray(idx), np.asarray(vals)


def run_policy_gradient_experiment(env: GridWorld, method: str, iterations: int, batch_size: int,
                                   seeds: Sequence[int], eval_episodes: int = 50, **kwargs) -> ExperimentReport:
    per_seed = {}
    idx = None
    for s in seeds:
        idx, vals = run_pg(env, method, iterations, batch_size, s, eval_episodes, **kwargs)
        per_seed[s] = vals
    return aggregate(idx, per_seed, "average_return", index_name="iteration", mean_name="mean_metric",
                     metadata={"method": method, "grid": env.n, "iterations": iterations, "batch": batch_size})
