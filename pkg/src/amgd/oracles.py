"""Markov-sampled stochastic objectives ``f(x) = E_pi[F(x; xi)]``.

Each objective carries its constants: smoothness ``L``, the gradient bound
``M``, and the strong-convexity modulus ``mu``. It also carries a convexity
class that the optimizers use to pick an algorithm.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .markov import FiniteMarkovChain, k_step_distribution, load_chain, sample_step, save_chain, validate_ergodic

NONCONVEX = "nonconvex"
CONVEX = "convex"
STRONGLY_CONVEX = "strongly_convex"
CONVEXITY_CLASSES = (NONCONVEX, CONVEX, STRONGLY_CONVEX)


class UnboundedGradient(ValueError):
    """No finite gradient bound exists for the requested feasible set."""


class NotConvex(ValueError):
    pass


class UnsupportedSet(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FeasibleSet:
    """``R^d``, a Euclidean ball, or a box; all with exact projections."""

    kind: str = "all_space"
    center: Optional[np.ndarray] = None
    radius: Optional[float] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "ball":
            if self.radius is None or not self.radius > 0:
                raise ValueError("ball radius must be positive")
            object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        elif self.kind == "box":
            lo = np.asarray(self.lower, dtype=float)
            hi = np.asarray(self.upper, dtype=float)
            if lo.shape != hi.shape or not np.all(lo < hi):
                raise ValueError("box needs lower < upper componentwise")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
        elif self.kind != "all_space":
            raise UnsupportedSet(f"no exact projection for feasible set kind {self.kind!r}")

    @classmethod
    def all_space(cls):
        return cls("all_space")

    @classmethod
    def ball(cls, center, radius):
        return cls("ball", center=center, radius=float(radius))

    @classmethod
    def box(cls, lower, upper):
        return cls("box", lower=lower, upper=upper)

    @property
    def compact(self) -> bool:
        return self.kind != "all_space"

    def project(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "all_space":
            return x
        if self.kind == "ball":
            diff = x - self.center
            nrm = np.linalg.norm(diff)
            if nrm <= self.radius:
                return x
            return self.center + diff * (self.radius / nrm)
        return np.clip(x, self.lower, self.upper)

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        if self.kind == "all_space":
            return True
        if self.kind == "ball":
            return bool(np.linalg.norm(x - self.center) <= self.radius * (1 + tol) + tol)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def max_norm(self) -> float:
        """``D = max_{x in X} ||x||``."""
        if self.kind == "ball":
            return float(np.linalg.norm(self.center) + self.radius)
        if self.kind == "box":
            return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))
        return math.inf

    def affine_range(self, a, b) -> float:
        """``sup_{x in X} |a.x - b|``."""
        a = np.asarray(a, dtype=float)
        if self.kind == "ball":
            return float(abs(a @ self.center - b) + self.radius * np.linalg.norm(a))
        if self.kind == "box":
            hi = np.sum(np.maximum(a * self.lower, a * self.upper))
            lo = np.sum(np.minimum(a * self.lower, a * self.upper))
            return float(max(abs(hi - b), abs(lo - b)))
        if np.any(a != 0):
            return math.inf
        return float(abs(b))

    def sample(self, rng: np.random.Generator, dim: int):
        """Uniform draw from the set (from a unit-scale box when unbounded)."""
        if self.kind == "ball":
            d = len(self.center)
            u = rng.standard_normal(d)
            u /= np.linalg.norm(u)
            return self.center + self.radius * rng.random() ** (1.0 / d) * u
        if self.kind == "box":
            return rng.uniform(self.lower, self.upper)
        return rng.uniform(-1.0, 1.0, size=dim)

    def to_dict(self) -> dict:
        if self.kind == "ball":
            return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}
        if self.kind == "box":
            return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}
        return {"kind": "all_space"}

    @classmethod
    def from_dict(cls, d: dict) -> "FeasibleSet":
        kind = d.get("kind", "all_space")
        if kind == "ball":
            return cls.ball(d["center"], d["radius"])
        if kind == "box":
            return cls.box(d["lower"], d["upper"])
        return cls(kind)


class MarkovObjective:
    """Per-sample values ``F(x; xi)`` and gradients ``G(x; xi)`` on a finite sample space.

    Subclasses override :meth:`values` and :meth:`grads` (all states at once);
    the per-sample accessors are derived from them.
    """

    def __init__(self, dim, n_states, L, M, mu=0.0, convexity=NONCONVEX):
        if convexity not in CONVEXITY_CLASSES:
            raise ValueError(f"unknown convexity class {convexity!r}")
        if convexity == STRONGLY_CONVEX and not mu > 0:
            raise ValueError("strongly convex objectives need mu > 0")
        if convexity == CONVEX and mu != 0:
            raise ValueError("convex (not strongly) objectives carry mu = 0")
        self.dim = int(dim)
        self.n_states = int(n_states)
        self.L = float(L)
        self.M = float(M)
        self.mu = float(mu)
        self.convexity = convexity

    def values(self, x) -> np.ndarray:
        raise NotImplementedError

    def grads(self, x) -> np.ndarray:
        raise NotImplementedError

    def value(self, x, xi: int) -> float:
        return float(self.values(x)[xi])

    def grad(self, x, xi: int) -> np.ndarray:
        return self.grads(x)[xi]

    def check_gradient_bound(self, x, rtol: float = 1e-9) -> None:
        worst = float(np.linalg.norm(self.grads(x), axis=1).max())
        if worst > self.M * (1 + rtol):
            raise UnboundedGradient(f"||G(x; xi)|| = {worst:.6g} exceeds M = {self.M:.6g}")


class FunctionObjective(MarkovObjective):
    """Wrap plain callables ``value(x, xi)`` and ``grad(x, xi)``."""

    def __init__(self, dim, n_states, value: Callable, grad: Callable, L, M, mu=0.0, convexity=NONCONVEX):
        super().__init__(dim, n_states, L, M, mu, convexity)
        self._value = value
        self._grad = grad

    def value(self, x, xi):
        return float(self._value(np.asarray(x, dtype=float), xi))

    def grad(self, x, xi):
        return np.asarray(self._grad(np.asarray(x, dtype=float), xi), dtype=float)

    def values(self, x):
        return np.array([self.value(x, xi) for xi in range(self.n_states)])

    def grads(self, x):
        return np.stack([self.grad(x, xi) for xi in range(self.n_states)])


class LeastSquares(MarkovObjective):
    """``F(x; xi) = 0.5 (a_xi . x - b_xi)^2`` over a compact feasible set."""

    family = "least_squares"

    def __init__(self, A, b, pi, feasible: FeasibleSet, mu_tol: float = 1e-10):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise ValueError("need one (a, b) pair per state")
        if not feasible.compact:
            raise UnboundedGradient("least-squares gradients are unbounded on all of R^d")
        self.A = A
        self.b = b
        self.feasible = feasible
        norms = np.linalg.norm(A, axis=1)
        L = float(np.max(norms**2))
        M = max(norms[i] * feasible.affine_range(A[i], b[i]) for i in range(len(b)))
        pi = np.asarray(pi, dtype=float)
        self.hessian = (A * pi[:, None]).T @ A
        mu = float(np.linalg.eigvalsh(self.hessian)[0])
        if mu > mu_tol * max(L, 1.0):
            super().__init__(A.shape[1], A.shape[0], L, M, mu, STRONGLY_CONVEX)
        else:
            super().__init__(A.shape[1], A.shape[0], L, M, 0.0, CONVEX)

    def residuals(self, x):
        return self.A @ np.asarray(x, dtype=float) - self.b

    def values(self, x):
        return 0.5 * self.residuals(x) ** 2

    def grads(self, x):
        return self.residuals(x)[:, None] * self.A

    def params(self) -> dict:
        return {}


class RobustRational(MarkovObjective):
    """``F(x; xi) = r^2 / (s + r^2)`` with ``r = a_xi . x - b_xi``.

    Bounded in ``[0, 1)``; with ``h(r) = r^2/(s+r^2)``,
    ``max |h'| = 9 / (8 sqrt(3 s))`` at ``r^2 = s/3`` and ``max |h''| = 2/s`` at ``r = 0``.
    """

    family = "robust_nonconvex"

    def __init__(self, A, b, scale: float = 1.0):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise ValueError("need one (a, b) pair per state")
        if not scale > 0:
            raise ValueError("scale must be positive")
        self.A = A
        self.b = b
        self.scale = float(scale)
        sq = float(np.max(np.sum(A**2, axis=1)))
        L = 2.0 / self.scale * sq
        M = 9.0 / (8.0 * math.sqrt(3.0 * self.scale)) * math.sqrt(sq)
        super().__init__(A.shape[1], A.shape[0], L, M, 0.0, NONCONVEX)

    def residuals(self, x):
        return self.A @ np.asarray(x, dtype=float) - self.b

    def values(self, x):
        r2 = self.residuals(x) ** 2
        return r2 / (self.scale + r2)

    def grads(self, x):
        r = self.residuals(x)
        dh = 2.0 * self.scale * r / (self.scale + r * r) ** 2
        return dh[:, None] * self.A

    def params(self) -> dict:
        return {"scale": self.scale}


def make_least_squares(chain: FiniteMarkovChain, A, b, feasible: FeasibleSet) -> LeastSquares:
    return LeastSquares(A, b, chain.pi, feasible)


def make_robust_nonconvex(chain: FiniteMarkovChain, A, b, scale: float = 1.0) -> RobustRational:
    obj = RobustRational(A, b, scale)
    if obj.n_states != chain.n_states:
        raise ValueError("need one (a, b) pair per chain state")
    return obj


def exact_objective(obj: MarkovObjective, chain: FiniteMarkovChain, x) -> float:
    return float(chain.pi @ obj.values(x))


def exact_gradient(obj: MarkovObjective, chain: FiniteMarkovChain, x) -> np.ndarray:
    return chain.pi @ obj.grads(x)


def markov_bias(obj: MarkovObjective, chain: FiniteMarkovChain, x, xi0: int, k: int) -> np.ndarray:
    """``E[G(x; xi_k) | xi_0] - grad f(x)`` computed exactly from ``P^k``."""
    dist = k_step_distribution(chain, xi0, k)
    return (dist - chain.pi) @ obj.grads(x)


def markov_bias_curve(obj: MarkovObjective, chain: FiniteMarkovChain, x, xi0: int, k_max: int):
    """Biases for ``k = 0..k_max`` (rows) alongside ``TV(P^k(xi0, .), pi)``."""
    grads = obj.grads(x)
    dist = k_step_distribution(chain, xi0, 0)
    biases, tvs = [], []
    for _ in range(k_max + 1):
        biases.append((dist - chain.pi) @ grads)
        tvs.append(0.5 * float(np.abs(dist - chain.pi).sum()))
        dist = dist @ chain.transition
    return np.array(biases), np.array(tvs)


def f_star(obj: MarkovObjective, chain: FiniteMarkovChain, feasible: FeasibleSet,
           x0=None, tol: float = 1e-10, max_iter: int = 2_000_000):
    """Reference optimum by deterministic projected gradient descent on the exact gradient.

    Stops once the gradient-mapping norm ``L ||x - P(x - g/L)||`` drops below ``tol``.
    Returns ``(f*, x*)``.
    """
    if obj.convexity == NONCONVEX:
        raise NotConvex("f* is only certified for convex objectives")
    hess = getattr(obj, "hessian", None)
    # exact curvature when available, otherwise the per-sample bound
    L = float(np.linalg.eigvalsh(hess)[-1]) if hess is not None else obj.L
    L = max(L, 1e-300)
    x = feasible.project(np.zeros(obj.dim) if x0 is None else np.asarray(x0, dtype=float))
    for _ in range(max_iter):
        g = exact_gradient(obj, chain, x)
        x_new = feasible.project(x - g / L)
        gmap = L * np.linalg.norm(x - x_new)
        x = x_new
        if gmap <= tol:
            break
    else:
        raise RuntimeError(f"projected gradient did not reach {tol:.0e} in {max_iter} iterations")
    return exact_objective(obj, chain, x), x


@dataclass(eq=False)
class GradientStream:
    """Single-owner stream of Markov samples ``xi_1, xi_2, ...`` and their gradients."""

    chain: FiniteMarkovChain
    objective: MarkovObjective
    current_state: int
    rng: np.random.Generator = field(repr=False)

    @classmethod
    def start(cls, chain, objective, seed=None, initial_state=None):
        rng = np.random.default_rng(seed)
        if initial_state is None:
            initial_state = int(rng.integers(chain.n_states))
        return cls(chain, objective, int(initial_state), rng)

    def next_sample(self) -> int:
        self.current_state = sample_step(self.chain, self.current_state, self.rng)
        return self.current_state

    def next_gradient(self, x):
        xi = self.next_sample()
        return xi, self.objective.grad(x, xi)


# -- problem generators and (de)serialization ---------------------------------------------


def random_least_squares_data(n_states, dim, rng: np.random.Generator, rank=None, noise=1.0):
    """Rows ``a_xi`` with unit-scale norms (optionally confined to a rank-``rank`` subspace) and noisy targets."""
    A = rng.standard_normal((n_states, dim))
    if rank is not None and rank < dim:
        basis, _ = np.linalg.qr(rng.standard_normal((dim, rank)))
        A = (A @ basis) @ basis.T
    A /= np.sqrt(np.max(np.sum(A**2, axis=1)))
    x_true = rng.standard_normal(dim)
    b = A @ x_true + noise * rng.standard_normal(n_states)
    return A, b


def problem_to_dict(obj: MarkovObjective, chain_ref, feasible: Optional[FeasibleSet] = None) -> dict:
    """Structured description; ``chain_ref`` is a file path or an inline matrix (list of rows)."""
    if isinstance(chain_ref, FiniteMarkovChain):
        chain_ref = chain_ref.transition.tolist()
    out = {
        "family": obj.family,
        "dim": obj.dim,
        "chain": str(chain_ref) if isinstance(chain_ref, (str, Path)) else chain_ref,
        "a": obj.A.tolist(),
        "b": obj.b.tolist(),
    }
    out.update(obj.params())
    fs = feasible if feasible is not None else getattr(obj, "feasible", None)
    if fs is not None:
        out["feasible"] = fs.to_dict()
    return out


def problem_from_dict(d: dict, base_dir=None):
    """Inverse of :func:`problem_to_dict`; returns ``(objective, chain, feasible)``."""
    ref = d["chain"]
    if isinstance(ref, str):
        path = Path(ref)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        chain = load_chain(path)
    else:
        chain = validate_ergodic(np.asarray(ref, dtype=float))
    feasible = FeasibleSet.from_dict(d.get("feasible", {"kind": "all_space"}))
    if d["family"] == LeastSquares.family:
        obj = make_least_squares(chain, d["a"], d["b"], feasible)
    elif d["family"] == RobustRational.family:
        obj = make_robust_nonconvex(chain, d["a"], d["b"], d.get("scale", 1.0))
    else:
        raise ValueError(f"unknown objective family {d['family']!r}")
    if obj.dim != d["dim"]:
        raise ValueError(f"dimension mismatch: file says {d['dim']}, rows have {obj.dim}")
    return obj, chain, feasible


def dump_problem(obj, chain_ref, path, feasible=None) -> None:
    if isinstance(chain_ref, FiniteMarkovChain):
        chain_path = Path(path).with_suffix(".chain")
        save_chain(chain_ref, chain_path)
        chain_ref = chain_path.name
    text = json.dumps(problem_to_dict(obj, chain_ref, feasible), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n")


def load_problem(path):
    return problem_from_dict(json.loads(Path(path).read_text()), base_dir=Path(path).parent)
