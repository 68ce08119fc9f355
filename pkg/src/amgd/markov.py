"""Finite ergodic Markov chains.

Validation (irreducible + aperiodic), stationary distributions, total
variation distances, k-step laws, mixing times and seeded sampling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from functools import cached_property, reduce
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import breadth_first_order, connected_components

ROW_SUM_TOL = 1e-12
LOAD_ROW_SUM_TOL = 1e-9
STATIONARY_TOL = 1e-10
DEFAULT_MIXING_CAP = 10**6


class MarkovError(ValueError):
    """Base class for chain construction and analysis failures."""

    violated: str = "unknown"


class NotStochastic(MarkovError):
    violated = "stochastic"


class Reducible(MarkovError):
    violated = "irreducible"


class Periodic(MarkovError):
    violated = "aperiodic"

    def __init__(self, message, period):
        super().__init__(message)
        self.period = period


class NumericalFailure(MarkovError):
    violated = "numerical"


class CapExceeded(MarkovError):
    violated = "mixing_cap"


class LengthMismatch(MarkovError):
    violated = "length"


def _check_stochastic(P, tol):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise NotStochastic(f"transition matrix must be square and nonempty, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise NotStochastic("transition matrix has non-finite entries")
    if P.min() < 0.0 or P.max() > 1.0:
        raise NotStochastic("transition probabilities must lie in [0, 1]")
    worst = np.max(np.abs(P.sum(axis=1) - 1.0))
    if worst > tol:
        raise NotStochastic(f"row sums deviate from 1 by {worst:.3e} (tolerance {tol:.0e})")
    return P


def chain_period(P) -> int:
    """Period of an irreducible chain: gcd of level[u] + 1 - level[v] over edges u->v.

    Levels are BFS distances from state 0 in the graph of positive entries.
    """
    adj = np.asarray(P) > 0
    order = breadth_first_order(adj.astype(np.int8), 0, directed=True, return_predecessors=False)
    level = np.full(adj.shape[0], -1, dtype=np.int64)
    level[0] = 0
    for u in order:
        nxt = np.flatnonzero(adj[u])
        unseen = nxt[level[nxt] < 0]
        level[unseen] = level[u] + 1
    us, vs = np.nonzero(adj)
    diffs = np.abs(level[us] + 1 - level[vs])
    return int(reduce(math.gcd, diffs.tolist(), 0))


def diagnose(transition, tol: float = ROW_SUM_TOL) -> Optional[str]:
    """Name the first violated ergodicity property, or ``None`` if the chain is ergodic."""
    try:
        validate_ergodic(transition, tol=tol)
    except MarkovError as err:
        return err.violated
    return None


def validate_ergodic(transition, tol: float = ROW_SUM_TOL, labels=None) -> "FiniteMarkovChain":
    """Build a chain from ``transition`` or raise the violated property.

    Raises
    ------
    NotStochastic
        Non-square matrix, entries outside [0, 1], or row sums off by more than ``tol``.
    Reducible
        The graph of positive entries is not strongly connected.
    Periodic
        The gcd of cycle lengths exceeds one.
    """
    P = _check_stochastic(transition, tol)
    n = P.shape[0]
    n_comp, _ = connected_components(P > 0, directed=True, connection="strong")
    if n_comp != 1:
        raise Reducible(f"chain splits into {n_comp} communicating classes")
    period = chain_period(P)
    if period != 1:
        raise Periodic(f"chain has period {period}", period)
    P = P.copy()
    P.setflags(write=False)
    return FiniteMarkovChain(n, P, tuple(labels) if labels is not None else None)


@dataclass(frozen=True, eq=False)
class FiniteMarkovChain:
    """An ergodic chain on states ``0..n_states-1``.

    Construct through :func:`validate_ergodic` (or :meth:`from_matrix`);
    the dataclass constructor itself performs no checks.
    """

    n_states: int
    transition: np.ndarray
    labels: Optional[tuple] = field(default=None)

    @classmethod
    def from_matrix(cls, transition, labels=None) -> "FiniteMarkovChain":
        return validate_ergodic(transition, labels=labels)

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.transition, axis=1)
        c[:, -1] = 1.0
        return c

    @cached_property
    def pi(self) -> np.ndarray:
        return stationary_distribution(self)


@dataclass(frozen=True)
class MixingProfile:
    second_eigenvalue_modulus: float
    tv_curve: np.ndarray


def stationary_distribution(chain: FiniteMarkovChain) -> np.ndarray:
    """Solve ``(P^T - I) pi = 0`` with ``sum(pi) = 1`` by least squares."""
    P = chain.transition
    n = chain.n_states
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    residual = np.max(np.abs(pi @ P - pi))
    if residual > STATIONARY_TOL:
        raise NumericalFailure(f"stationary residual {residual:.3e} exceeds {STATIONARY_TOL:.0e}")
    pi.setflags(write=False)
    return pi


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise LengthMismatch(f"distributions have shapes {p.shape} and {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def k_step_distribution(chain: FiniteMarkovChain, xi0: int, k: int) -> np.ndarray:
    """Row ``xi0`` of ``P^k`` by repeated vector-matrix products."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if not 0 <= xi0 < chain.n_states:
        raise IndexError(f"state {xi0} out of range for {chain.n_states} states")
    dist = np.zeros(chain.n_states)
    dist[xi0] = 1.0
    for _ in range(k):
        dist = dist @ chain.transition
    return dist


def worst_case_tv(chain: FiniteMarkovChain, k: int) -> float:
    """``max_xi0 TV(P^k(xi0, .), pi)``."""
    Pk = np.linalg.matrix_power(chain.transition, k)
    return 0.5 * float(np.abs(Pk - chain.pi).sum(axis=1).max())


def tv_curve(chain: FiniteMarkovChain, k_max: int) -> np.ndarray:
    """Worst-case TV distance to ``pi`` for ``k = 0..k_max``."""
    out = np.empty(k_max + 1)
    Pk = np.eye(chain.n_states)
    for k in range(k_max + 1):
        out[k] = 0.5 * np.abs(Pk - chain.pi).sum(axis=1).max()
        Pk = Pk @ chain.transition
    return out


def second_eigenvalue_modulus(chain: FiniteMarkovChain) -> float:
    if chain.n_states == 1:
        return 0.0
    mods = np.sort(np.abs(np.linalg.eigvals(chain.transition)))[::-1]
    return float(mods[1])


def mixing_profile(chain: FiniteMarkovChain, k_max: int = 100) -> MixingProfile:
    return MixingProfile(second_eigenvalue_modulus(chain), tv_curve(chain, k_max))


def mixing_time(chain: FiniteMarkovChain, gamma: float, cap: int = DEFAULT_MIXING_CAP) -> int:
    """Smallest ``k`` with worst-case TV to ``pi`` at most ``gamma``.

    Doubling search brackets the crossing, bisection pins it down; both rely
    on the worst-case TV curve being nonincreasing in ``k``.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if worst_case_tv(chain, 0) <= gamma:
        return 0
    lo, hi = 0, 1
    while worst_case_tv(chain, hi) > gamma:
        if hi >= cap:
            raise CapExceeded(f"TV still above {gamma} after {cap} steps")
        lo, hi = hi, min(2 * hi, cap)
    # invariant: tv(lo) > gamma >= tv(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if worst_case_tv(chain, mid) > gamma:
            lo = mid
        else:
            hi = mid
    return hi


def inverse_cdf(cdf: np.ndarray, u: float) -> int:
    """First index whose cumulative mass is >= ``u``."""
    idx = int(np.searchsorted(cdf, u, side="left"))
    return min(idx, len(cdf) - 1)


def sample_step(chain: FiniteMarkovChain, state: int, rng: np.random.Generator) -> int:
    # u in (0, 1] so zero-probability leading states are never chosen
    u = 1.0 - rng.random()
    return inverse_cdf(chain.cdf[state], u)


def sample_path(chain: FiniteMarkovChain, start: int, n_steps: int, rng: np.random.Generator) -> np.ndarray:
    """States ``xi_1..xi_n`` following ``start``."""
    path = np.empty(n_steps, dtype=np.int64)
    s = start
    for i in range(n_steps):
        s = sample_step(chain, s, rng)
        path[i] = s
    return path


def random_chain(n_states: int, rng: np.random.Generator, extra_edges: int = 2, laziness: float = 0.2):
    """Sparse random ergodic chain: ring + self-loops + a few random edges per state."""
    P = np.zeros((n_states, n_states))
    for i in range(n_states):
        targets = {i, (i + 1) % n_states}
        targets.update(rng.choice(n_states, size=min(extra_edges, n_states), replace=False).tolist())
        targets.discard(i)
        targets = sorted(targets)
        w = rng.dirichlet(np.ones(len(targets))) if targets else np.array([])
        P[i, targets] = (1.0 - laziness) * w
        P[i, i] += laziness if targets else 1.0
    P /= P.sum(axis=1, keepdims=True)
    return validate_ergodic(P)


def _parse_decimal(tok: str, path) -> Decimal:
    try:
        return Decimal(tok)
    except InvalidOperation as err:
        raise NotStochastic(f"{path}: cannot parse probability {tok!r}") from err


def load_chain(path) -> FiniteMarkovChain:
    """Read ``n`` followed by ``n`` rows of ``n`` probabilities.

    Row sums are checked in exact decimal arithmetic to 1e-9, then the float
    rows are renormalised so the chain invariant (1e-12) holds.
    """
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise NotStochastic(f"{path}: empty chain file")
    n = int(lines[0].strip())
    rows = [ln.split() for ln in lines[1:]]
    if len(rows) != n or any(len(r) != n for r in rows):
        raise NotStochastic(f"{path}: expected {n} rows of {n} entries")
    dec = [[_parse_decimal(tok, path) for tok in r] for r in rows]
    for i, r in enumerate(dec):
        if abs(sum(r) - 1) > Decimal(str(LOAD_ROW_SUM_TOL)):
            raise NotStochastic(f"{path}: row {i} sums to {sum(r)}")
    P = np.array([[float(v) for v in r] for r in dec])
    P /= P.sum(axis=1, keepdims=True)
    return validate_ergodic(P)


def save_chain(chain: FiniteMarkovChain, path) -> None:
    rows = [" ".join(repr(float(v)) for v in row) for row in chain.transition]
    Path(path).write_text(f"{chain.n_states}\n" + "\n".join(rows) + "\n")


def state_frequencies(path: Sequence[int], n_states: int) -> np.ndarray:
    counts = np.bincount(np.asarray(path), minlength=n_states)
    return counts / counts.sum()
