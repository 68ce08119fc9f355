"""Independent brute-force oracles shared by the unit and acceptance tests."""
import numpy as np
from scipy.optimize import minimize


def prox_objective(x, x_prev, y, g, gamma, mu):
    return gamma * (g @ (x - y) + 0.5 * mu * np.sum((y - x) ** 2)) + 0.5 * np.sum((x - x_prev) ** 2)


def brute_force_prox(x_prev, y, g, gamma, mu, feasible, n_grid=201):
    """Fine grid over the set's bounding box, then constrained local refinement (d=2)."""
    if feasible.kind == "ball":
        lo, hi = feasible.center - feasible.radius, feasible.center + feasible.radius
        cons = [{"type": "ineq", "fun": lambda x: feasible.radius**2 - np.sum((x - feasible.center) ** 2)}]
        bounds = None
    else:
        lo, hi = feasible.lower, feasible.upper
        cons = []
        bounds = list(zip(lo, hi))
    gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], n_grid), np.linspace(lo[1], hi[1], n_grid))
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    if feasible.kind == "ball":
        pts = pts[np.sum((pts - feasible.center) ** 2, axis=1) <= feasible.radius**2]
    vals = (gamma * ((pts - y) @ g + 0.5 * mu * np.sum((pts - y) ** 2, axis=1))
            + 0.5 * np.sum((pts - x_prev) ** 2, axis=1))
    start = pts[np.argmin(vals)]
    res = minimize(prox_objective, start, args=(x_prev, y, g, gamma, mu), method="SLSQP",
                   jac=lambda x, *a: gamma * (g - mu * (y - x)) + (x - x_prev),
                   bounds=bounds, constraints=cons, options={"ftol": 1e-16, "maxiter": 500})
    return res.x
