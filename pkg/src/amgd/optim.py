"""Accelerated Markov gradient descent (AMGD).

Two algorithms share the three-sequence structure
``y_k -> (x_k, xbar_k)`` with step sizes ``alpha_k, beta_k, gamma_k``:

* the nonconvex variant (unconstrained) with the randomized output rule
  ``P(R = k) ~ gamma_k (1 - L gamma_k)``;
* the convex variant, a projected prox step with an optional strong-convexity
  term.

Every step is split in two phases so the optimizer never calls the oracle:
``*_query`` returns the point ``y_k`` at which a gradient sample is needed,
and ``amgd_*_step`` consumes that sample. Iteration counters are 1-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np

from .oracles import (
    NONCONVEX,
    FeasibleSet,
    GradientStream,
    MarkovObjective,
    exact_gradient,
    exact_objective,
    f_star as reference_optimum,
)

NONCONVEX_THM1 = "nonconvex_thm1"
CONVEX_THM2 = "convex_thm2"
STRONGLY_CONVEX_THM3 = "strongly_convex_thm3"
CUSTOM = "custom"
REGIMES = (NONCONVEX_THM1, CONVEX_THM2, STRONGLY_CONVEX_THM3, CUSTOM)

AMGD_NONCONVEX = "amgd_nonconvex"
AMGD_CONVEX = "amgd_convex"
MARKOV_SGD = "markov_sgd"
ALGORITHMS = (AMGD_NONCONVEX, AMGD_CONVEX, MARKOV_SGD)

_ALL_SPACE = FeasibleSet.all_space()


class ScheduleError(ValueError):
    pass


class HorizonTooSmall(ScheduleError):
    pass


class BadConstants(ScheduleError):
    pass


class ScheduleMismatch(ScheduleError):
    pass


class ScheduleViolation(ScheduleError):
    pass


class NonpositiveWeight(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StepSchedule:
    """Step-size sequences ``k -> (alpha_k, beta_k, gamma_k)`` for ``k >= 1``.

    ``family`` names the algorithm the schedule drives (``"nonconvex"`` or
    ``"convex"``). Custom schedules are validated against the algorithm's
    step-size conditions every time a step is taken.
    """

    regime: str
    alpha: Callable[[int], float]
    beta: Callable[[int], float]
    gamma: Callable[[int], float]
    family: str
    horizon: Optional[int] = None
    L: float = 0.0
    mu: float = 0.0
    strict: bool = False
    _gamma_cache: list = field(default_factory=lambda: [1.0, 1.0], repr=False)

    def steps(self, k: int):
        return self.alpha(k), self.beta(k), self.gamma(k)

    def gamma_product(self, k: int) -> float:
        return gamma_product(self, k)

    def validate(self, k: int, tol: float = 1e-9) -> None:
        """Raise if step ``k`` breaks the conditions of its algorithm."""
        if self.horizon is not None and k > self.horizon:
            raise ScheduleMismatch(f"iteration {k} exceeds horizon {self.horizon}")
        a, b, g = self.steps(k)
        if self.family == NONCONVEX:
            if not (b * (1 - tol) <= g <= (1 + a) * b * (1 + tol)):
                raise ScheduleViolation(f"k={k}: gamma={g} outside [beta, (1+alpha) beta] = [{b}, {(1 + a) * b}]")
            return
        if k == 1 and abs(a - 1.0) > tol:
            raise ScheduleViolation(f"convex schedules need alpha_1 = 1, got {a}")
        # cross-multiplied form of beta(1-a)/(a(1-b)) = 1/(1+mu g); also valid at alpha = beta = 1
        lhs = b * (1 - a) * (1 + self.mu * g)
        rhs = a * (1 - b)
        if abs(lhs - rhs) > tol * max(abs(rhs), abs(lhs)):
            raise ScheduleViolation(f"k={k}: beta/alpha coupling violated ({lhs} vs {rhs})")
        if self.L > 0 and not 1 + self.mu * g > self.L * a * g:
            raise ScheduleViolation(f"k={k}: 1 + mu*gamma = {1 + self.mu * g} <= L*alpha*gamma = {self.L * a * g}")
        if self.strict and k >= 2:
            a0, _, g0 = self.steps(k - 1)
            now = a / (g * self.gamma_product(k))
            before = a0 * (1 + self.mu * g0) / (g0 * self.gamma_product(k - 1))
            if now > before * (1 + tol):
                raise ScheduleViolation(f"k={k}: alpha/(gamma Gamma) grows faster than allowed")

    def coupling_residual(self, k: int) -> float:
        """``|beta(1-alpha)/(alpha(1-beta)) - 1/(1+mu gamma)|`` (0 when ``alpha = beta = 1``)."""
        a, b, g = self.steps(k)
        if a == 1.0 and b == 1.0:
            return 0.0
        return abs(b * (1 - a) / (a * (1 - b)) - 1.0 / (1.0 + self.mu * g))


def gamma_product(schedule: StepSchedule, k: int) -> float:
    """``Gamma_1 = 1``, ``Gamma_k = (1 - alpha_k) Gamma_{k-1}``; memoized on the schedule."""
    if k < 1:
        raise ValueError("Gamma_k is defined for k >= 1")
    cache = schedule._gamma_cache
    while len(cache) <= k:
        j = len(cache)
        cache.append((1.0 - schedule.alpha(j)) * cache[-1])
    return cache[k]


def _nesterov_alpha(k):
    return 2.0 / (k + 1)


def build_schedule(regime: str, L: float, mu: float = 0.0, K: Optional[int] = None,
                   gamma_end: str = "lower") -> StepSchedule:
    """Step sizes for the three named regimes.

    ``nonconvex_thm1``: ``alpha_k = 2/(k+1)``, ``beta_k = 1/sqrt(K)``, ``gamma_k``
    at the lower (``beta_k``) or upper (``(1+alpha_k) beta_k``) end of its interval.
    ``convex_thm2``: ``alpha_k = beta_k = 2/(k+1)``, ``gamma_k = 1/(2 L sqrt(k+1))``.
    ``strongly_convex_thm3``: ``alpha_k = 2/(k+1)``, ``gamma_k = 2/(mu k)``,
    ``beta_k = alpha_k / (alpha_k + (1 - alpha_k)(1 + mu gamma_k))``.
    """
    if not L > 0:
        raise BadConstants(f"L must be positive, got {L}")
    if regime == NONCONVEX_THM1:
        if K is None:
            raise HorizonTooSmall("the nonconvex schedule needs a horizon K")
        if K < 16 * L * L:
            raise HorizonTooSmall(f"K={K} < 16 L^2 = {16 * L * L}; beta = 1/sqrt(K) would exceed 1/(4L)")
        beta = 1.0 / math.sqrt(K)
        if gamma_end == "lower":
            gamma = lambda k: beta  # noqa: E731
        elif gamma_end == "upper":
            gamma = lambda k: (1.0 + _nesterov_alpha(k)) * beta  # noqa: E731
        else:
            raise ValueError("gamma_end must be 'lower' or 'upper'")
        return StepSchedule(regime, _nesterov_alpha, lambda k: beta, gamma, NONCONVEX, int(K), L, 0.0)
    if regime == CONVEX_THM2:
        return StepSchedule(regime, _nesterov_alpha, _nesterov_alpha,
                            lambda k: 1.0 / (2.0 * L * math.sqrt(k + 1)), "convex", K, L, 0.0)
    if regime == STRONGLY_CONVEX_THM3:
        if not mu > 0:
            raise BadConstants(f"mu must be positive for the strongly convex schedule, got {mu}")
        gamma = lambda k: 2.0 / (mu * k)  # noqa: E731
        return StepSchedule(regime, _nesterov_alpha, coupled_beta(_nesterov_alpha, gamma, mu), gamma,
                            "convex", K, L, mu)
    raise ValueError(f"unknown regime {regime!r}")


def coupled_beta(alpha, gamma, mu):
    """``beta_k = alpha_k / (alpha_k + (1 - alpha_k)(1 + mu gamma_k))``."""
    def beta(k):
        a = alpha(k)
        return a / (a + (1.0 - a) * (1.0 + mu * gamma(k)))
    return beta


def custom_schedule(alpha, beta, gamma, family: str, L: float = 0.0, mu: float = 0.0,
                    horizon: Optional[int] = None, strict: bool = False) -> StepSchedule:
    return StepSchedule(CUSTOM, alpha, beta, gamma, family, horizon, L, mu, strict)


def constant(value: float) -> Callable[[int], float]:
    return lambda k: value


# -- states and steps ------------------------------------------------------------------------


@dataclass(frozen=True)
class NonconvexState:
    x: np.ndarray
    x_bar: np.ndarray
    y: np.ndarray
    k: int = 0

    @classmethod
    def initial(cls, x0, x_bar0=None):
        x0 = np.asarray(x0, dtype=float)
        x_bar0 = x0 if x_bar0 is None else np.asarray(x_bar0, dtype=float)
        return cls(x0, x_bar0, x_bar0, 0)


@dataclass(frozen=True)
class ConvexState:
    x: np.ndarray
    x_bar: np.ndarray
    y: np.ndarray
    k: int = 0

    @classmethod
    def initial(cls, x0, x_bar0=None, feasible: FeasibleSet = _ALL_SPACE):
        x0 = feasible.project(np.asarray(x0, dtype=float))
        x_bar0 = x0 if x_bar0 is None else feasible.project(np.asarray(x_bar0, dtype=float))
        return cls(x0, x_bar0, x_bar0, 0)


def nonconvex_query(state: NonconvexState, schedule: StepSchedule, k: Optional[int] = None):
    """Phase A: ``y_k = (1 - alpha_k) xbar_{k-1} + alpha_k x_{k-1}``."""
    k = state.k + 1 if k is None else k
    a = schedule.alpha(k)
    return (1.0 - a) * state.x_bar + a * state.x


def amgd_nonconvex_step(state: NonconvexState, g, schedule: StepSchedule, k: Optional[int] = None) -> NonconvexState:
    """Phase B: ``x_k = x_{k-1} - gamma_k g`` and ``xbar_k = y_k - beta_k g`` with ``g = G(y_k; xi_k)``."""
    k = state.k + 1 if k is None else k
    if schedule.horizon is not None and k > schedule.horizon:
        raise ScheduleMismatch(f"iteration {k} exceeds horizon {schedule.horizon}")
    if schedule.regime == CUSTOM:
        schedule.validate(k)
    _, b, gam = schedule.steps(k)
    y = nonconvex_query(state, schedule, k)
    g = np.asarray(g, dtype=float)
    return NonconvexState(state.x - gam * g, y - b * g, y, k)


def prox_step(x_prev, y, g, gamma: float, mu: float, feasible: FeasibleSet = _ALL_SPACE):
    """Minimizer over X of ``gamma [<g, x - y> + mu/2 ||y - x||^2] + 1/2 ||x - x_prev||^2``.

    The unconstrained minimizer is ``(x_prev + mu gamma y - gamma g) / (1 + mu gamma)``;
    the objective is isotropic quadratic in ``x``, so the constrained minimizer is
    its Euclidean projection onto ``X``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    z = (np.asarray(x_prev, dtype=float) + mu * gamma * np.asarray(y, dtype=float)
         - gamma * np.asarray(g, dtype=float)) / (1.0 + mu * gamma)
    return feasible.project(z)


def convex_query(state: ConvexState, schedule: StepSchedule, k: Optional[int] = None):
    """Phase A: ``y_k = (1 - beta_k) xbar_{k-1} + beta_k x_{k-1}``."""
    k = state.k + 1 if k is None else k
    b = schedule.beta(k)
    return (1.0 - b) * state.x_bar + b * state.x


def amgd_convex_step(state: ConvexState, g, schedule: StepSchedule, mu: Optional[float] = None,
                     feasible: FeasibleSet = _ALL_SPACE, k: Optional[int] = None) -> ConvexState:
    """Phase B: prox step for ``x_k`` then ``xbar_k = (1 - alpha_k) xbar_{k-1} + alpha_k x_k``.

    Passing ``k`` explicitly freezes the step sizes (e.g. one ``k`` per episode);
    the returned state then carries that ``k``.
    """
    k = state.k + 1 if k is None else k
    mu = schedule.mu if mu is None else mu
    if schedule.horizon is not None and k > schedule.horizon:
        raise ScheduleMismatch(f"iteration {k} exceeds horizon {schedule.horizon}")
    if schedule.regime == CUSTOM:
        schedule.validate(k)
    a, _, gam = schedule.steps(k)
    y = convex_query(state, schedule, k)
    x = prox_step(state.x, y, g, gam, mu, feasible)
    x_bar = feasible.project((1.0 - a) * state.x_bar + a * x)
    return ConvexState(x, x_bar, y, k)


def markov_sgd_step(x, g, lr: float, feasible: FeasibleSet = _ALL_SPACE):
    if not lr > 0:
        raise ValueError("lr must be positive")
    return feasible.project(np.asarray(x, dtype=float) - lr * np.asarray(g, dtype=float))


# -- output rule -----------------------------------------------------------------------------


def output_weights(gammas, L: float) -> np.ndarray:
    """``p_k = gamma_k (1 - L gamma_k) / sum_j gamma_j (1 - L gamma_j)``."""
    g = np.asarray(gammas, dtype=float)
    w = g * (1.0 - L * g)
    if np.any(w <= 0):
        bad = int(np.argmax(w <= 0)) + 1
        raise NonpositiveWeight(f"weight at k={bad} is nonpositive (gamma_k >= 1/L)")
    return w / w.sum()


# -- traces and the driver -------------------------------------------------------------------


@dataclass
class OptimizerTrace:
    """Per-iteration record of one run.

    ``ys`` holds every ``y_k`` for the nonconvex algorithm (the output rule
    needs them) and for any algorithm under the ``"full"`` storage policy.
    ``metric_ks``/``metric_values`` hold the exact diagnostics when enabled.
    """

    algorithm: str
    seed: Optional[int]
    storage: str = "metrics"
    metric_name: Optional[str] = None
    ks: list = field(default_factory=list)
    xis: list = field(default_factory=list)
    gammas: list = field(default_factory=list)
    metric_ks: list = field(default_factory=list)
    metric_values: list = field(default_factory=list)
    ys: list = field(default_factory=list)
    x_bars: list = field(default_factory=list)
    final_state: object = None

    def __len__(self):
        return len(self.ks)

    def metric_array(self):
        return np.asarray(self.metric_ks, dtype=np.int64), np.asarray(self.metric_values, dtype=float)


def select_output(trace: OptimizerTrace, L: float, rng: np.random.Generator):
    """Draw ``R`` with probability ``p_R`` and return ``(R, y_R)`` (``R`` is 1-based)."""
    if not trace.ys:
        raise ValueError("trace holds no y_k iterates")
    p = output_weights(trace.gammas, L)
    R = int(rng.choice(len(p), p=p)) + 1
    return R, trace.ys[R - 1]


def _metric_name(algorithm, objective):
    if algorithm == AMGD_NONCONVEX or objective.convexity == NONCONVEX:
        return "grad_norm_sq"
    return "suboptimality"


def run(algorithm: str, objective: MarkovObjective, chain, K: int, seed=None, schedule: Optional[StepSchedule] = None,
        lr: Optional[float] = None, feasible: FeasibleSet = _ALL_SPACE, x0=None, f_star: Optional[float] = None,
        diagnostics: bool = True, record_at: Optional[Iterable[int]] = None, trace_policy: str = "metrics",
        initial_state: Optional[int] = None) -> OptimizerTrace:
    """Drive one algorithm against a seeded :class:`GradientStream` for ``K`` iterations.

    Diagnostics (when enabled) are exact: ``||grad f(y_k)||^2`` for the nonconvex
    algorithm, ``f(xbar_k) - f*`` for the convex one, and the matching quantity at
    ``x_k`` for Markov SGD. ``record_at`` restricts them to a subset of ``k``.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if trace_policy not in ("metrics", "full"):
        raise ValueError("trace_policy must be 'metrics' or 'full'")
    if algorithm == MARKOV_SGD:
        if lr is None:
            raise ValueError("markov_sgd needs lr")
    else:
        if schedule is None:
            raise ValueError(f"{algorithm} needs a schedule")
        want = NONCONVEX if algorithm == AMGD_NONCONVEX else "convex"
        if schedule.family != want:
            raise ScheduleMismatch(f"{schedule.regime} schedule cannot drive {algorithm}")
        if algorithm == AMGD_CONVEX and objective.convexity == NONCONVEX:
            raise ValueError("the convex algorithm needs a convex objective; use amgd_nonconvex")
        if algorithm == AMGD_NONCONVEX and feasible.kind != "all_space":
            raise ValueError("the nonconvex algorithm is unconstrained")

    metric_name = _metric_name(algorithm, objective) if diagnostics else None
    if diagnostics and metric_name == "suboptimality" and f_star is None:
        f_star = reference_optimum(objective, chain, feasible)[0]
    wanted = None if record_at is None else set(int(k) for k in record_at)

    trace = OptimizerTrace(algorithm, seed, trace_policy, metric_name)
    stream = GradientStream.start(chain, objective, seed, initial_state)
    x0 = np.zeros(objective.dim) if x0 is None else np.asarray(x0, dtype=float)
    keep_ys = algorithm == AMGD_NONCONVEX or trace_policy == "full"

    if algorithm == AMGD_NONCONVEX:
        state = NonconvexState.initial(x0)
    elif algorithm == AMGD_CONVEX:
        state = ConvexState.initial(x0, feasible=feasible)
    else:
        state = feasible.project(x0)

    for k in range(1, K + 1):
        if algorithm == AMGD_NONCONVEX:
            y = nonconvex_query(state, schedule, k)
            xi, g = stream.next_gradient(y)
            state = amgd_nonconvex_step(state, g, schedule, k)
            gam, probe, xb = schedule.gamma(k), y, state.x_bar
        elif algorithm == AMGD_CONVEX:
            y = convex_query(state, schedule, k)
            xi, g = stream.next_gradient(y)
            state = amgd_convex_step(state, g, schedule, feasible=feasible, k=k)
            gam, probe, xb = schedule.gamma(k), state.x_bar, state.x_bar
        else:
            xi, g = stream.next_gradient(state)
            state = markov_sgd_step(state, g, lr, feasible)
            gam, probe, xb = lr, state, state
            y = state

        trace.ks.append(k)
        trace.xis.append(xi)
        trace.gammas.append(gam)
        if keep_ys:
            trace.ys.append(np.array(y))
        if trace_policy == "full":
            trace.x_bars.append(np.array(xb))
        if diagnostics and (wanted is None or k in wanted):
            if metric_name == "grad_norm_sq":
                gf = exact_gradient(objective, chain, probe)
                val = float(gf @ gf)
            else:
                val = exact_objective(objective, chain, probe) - f_star
            trace.metric_ks.append(k)
            trace.metric_values.append(val)

    trace.final_state = state
    return trace


def with_horizon(schedule: StepSchedule, K: int) -> StepSchedule:
    return replace(schedule, horizon=K, _gamma_cache=[1.0, 1.0])
