#  Copyright (c) 2024 ltc-stability developers

"""Dense log-barrier solver for least-squares objectives under hyperbolic and linear constraints.

    minimize    ||A x - b||^2
    subject to  x[i_u] * x[i_V] >= k^2,  x[i_u] >= 0,  x[i_V] >= 0   for every hyperbolic constraint
                G x <= g
                x >= lower                                             (finite entries only)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import nnls

from ltc_stability.common import CONIC_KKT_TOL, CONIC_MAX_ITER, CONIC_TOL

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
MAX_ITER = "MaxIter"

T_FACTOR = 10.0
CENTERING_TOL = 1e-10
ARMIJO = 0.25
MAX_HALVINGS = 60
FEASIBILITY_TOL = 1e-8
PHASE_ONE_RADIUS = 1e4
PHASE_ONE_GAP = 1e-10
SHIFT_FLOOR = -1.0


@dataclass(frozen=True, eq=False)
class ConicProblem:
    A: np.ndarray
    b: np.ndarray
    hyperbolic: tuple = ()
    G: np.ndarray | None = None
    g: np.ndarray | None = None
    lower: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(A.shape[0]))
        n = A.shape[1]
        hyperbolic = tuple((int(i_u), int(i_V), float(k)) for i_u, i_V, k in self.hyperbolic)
        for i_u, i_V, k in hyperbolic:
            assert i_u != i_V, "Hyperbolic constraint has to reference two distinct variables!"
            assert 0 <= i_u < n and 0 <= i_V < n, f"Hyperbolic constraint ({i_u}, {i_V}) out of range!"
            assert k >= 0, "Hyperbolic constant has to be non-negative!"
        object.__setattr__(self, "hyperbolic", hyperbolic)

        G = np.zeros((0, n)) if self.G is None else np.atleast_2d(np.asarray(self.G, dtype=float))
        g = np.zeros(0) if self.g is None else np.asarray(self.g, dtype=float).reshape(-1)
        assert G.shape == (g.size, n), f"Linear constraints have shape {G.shape}, expected ({g.size}, {n})!"
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g", g)
        lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).reshape(n)
        object.__setattr__(self, "lower", lower)

    @property
    def n_var(self) -> int:
        return self.A.shape[1]

    @property
    def barrier_degree(self) -> int:
        return 2 * len(self.hyperbolic) + self.G.shape[0] + int(np.sum(np.isfinite(self.lower)))

    def objective(self, x: np.ndarray) -> float:
        residual = self.A @ x - self.b
        return float(residual @ residual)

    def margin(self, x: np.ndarray) -> float:
        """Smallest constraint slack; positive exactly for strictly feasible points, +inf without constraints."""
        worst = -np.inf
        for i_u, i_V, k in self.hyperbolic:
            worst = max(worst, k * k - x[i_u] * x[i_V], -x[i_u], -x[i_V])
        if self.G.shape[0]:
            worst = max(worst, float(np.max(self.G @ x - self.g)))
        finite = np.isfinite(self.lower)
        if np.any(finite):
            worst = max(worst, float(np.max(self.lower[finite] - x[finite])))
        return float(-worst)

    def violation(self, x: np.ndarray) -> float:
        """Largest violation of any constraint; zero for feasible points."""
        return max(0.0, -self.margin(x))


@dataclass(frozen=True, eq=False)
class ConicSolution:
    x: np.ndarray
    objective: float
    kkt_residual: float
    status: str
    iterations: int = 0
    history: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def project_hyperbolic(u: float, V: float, k: float) -> tuple[float, float]:
    """Euclidean projection of (u, V) onto {uV >= k^2, u >= 0, V >= 0}.

    Points outside are projected on the branch (k e^s, k e^-s); the parameter s solves the
    stationarity condition by Newton steps safeguarded with bisection.
    """
    assert k >= 0, "Hyperbolic constant has to be non-negative!"
    if u >= 0 and V >= 0 and u * V >= k * k * (1 - 4 * np.finfo(float).eps):
        return float(u), float(V)
    if k == 0:
        return max(float(u), 0.0), max(float(V), 0.0)

    def stationarity(s: float) -> tuple[float, float]:
        a, c = k * np.exp(s), k * np.exp(-s)
        value = (a - u) * a - (c - V) * c
        slope = (2 * a - u) * a + (2 * c - V) * c
        return value, slope

    low, high = -1.0, 1.0
    while stationarity(low)[0] > 0:
        low *= 2
    while stationarity(high)[0] < 0:
        high *= 2
    s = float(np.clip(0.5 * np.log(max(u, k * 1e-8) / max(V, k * 1e-8)), low, high))
    for _ in range(200):
        value, slope = stationarity(s)
        if value > 0:
            high = s
        else:
            low = s
        if abs(value) <= 1e-15 * k * k or high - low <= 1e-15:
            break
        candidate = s - value / slope if slope > 0 else np.nan
        s = candidate if low < candidate < high else 0.5 * (low + high)
    return float(k * np.exp(s)), float(k * np.exp(-s))


class _Barrier:
    """Logarithmic barrier of the constraint set, optionally relaxed by a shift `sigma` (phase 1)."""

    def __init__(self, problem: ConicProblem):
        self.problem = problem
        self.finite = np.flatnonzero(np.isfinite(problem.lower))

    def slacks(self, x: np.ndarray, sigma: float = 0.0):
        p = self.problem
        hyp = [(x[i_u] + sigma, x[i_V] + sigma, k) for i_u, i_V, k in p.hyperbolic]
        linear = p.g - p.G @ x + sigma
        bounds = x[self.finite] - p.lower[self.finite] + sigma
        return hyp, linear, bounds

    def inside(self, x: np.ndarray, sigma: float = 0.0) -> bool:
        hyp, linear, bounds = self.slacks(x, sigma)
        if any(a <= 0 or c <= 0 or a * c - k * k <= 0 for a, c, k in hyp):
            return False
        return bool(np.all(linear > 0) and np.all(bounds > 0))

    def value(self, x: np.ndarray, sigma: float = 0.0) -> float:
        hyp, linear, bounds = self.slacks(x, sigma)
        total = -np.sum(np.log(linear)) - np.sum(np.log(bounds))
        for a, c, k in hyp:
            total -= np.log(a * c - k * k)
        return float(total)

    def derivatives(self, x: np.ndarray, sigma: float = 0.0, with_sigma: bool = False):
        """Gradient and Hessian in x, or in (x, sigma) when `with_sigma` is set."""
        p = self.problem
        n = p.n_var
        size = n + 1 if with_sigma else n
        grad = np.zeros(size)
        hess = np.zeros((size, size))
        hyp, linear, bounds = self.slacks(x, sigma)

        for (i_u, i_V, _), (a, c, k) in zip(p.hyperbolic, hyp):
            s = a * c - k * k
            index = [i_u, i_V] + ([n] if with_sigma else [])
            ds = np.array([c, a] + ([a + c] if with_sigma else []))
            d2s = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 2.0]])[: len(index), : len(index)]
            grad[index] -= ds / s
            hess[np.ix_(index, index)] += np.outer(ds, ds) / s**2 - d2s / s

        G = p.G
        if with_sigma:
            G = np.hstack([G, -np.ones((G.shape[0], 1))])
        grad += G.T @ (1 / linear)
        hess += G.T @ (G / linear[:, None] ** 2)

        E = np.zeros((self.finite.size, size))
        E[np.arange(self.finite.size), self.finite] = 1.0
        if with_sigma:
            E[:, n] = 1.0
        grad -= E.T @ (1 / bounds)
        hess += E.T @ (E / bounds[:, None] ** 2)
        return grad, hess

    def jacobian(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gradients of all slacks (one row each) and the slacks, sign conditions of hyperbolic pairs included."""
        p = self.problem
        n = p.n_var
        rows, slacks = [], []
        for i_u, i_V, k in p.hyperbolic:
            a, c = x[i_u], x[i_V]
            row = np.zeros(n)
            row[i_u], row[i_V] = c, a
            rows.extend([row, np.eye(n)[i_u], np.eye(n)[i_V]])
            slacks.extend([a * c - k * k, a, c])
        rows.extend(-p.G)
        slacks.extend(p.g - p.G @ x)
        rows.extend(np.eye(n)[self.finite])
        slacks.extend(x[self.finite] - p.lower[self.finite])
        return np.array(rows).reshape(len(slacks), n), np.array(slacks, dtype=float)


def _newton_direction(hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(hess, -grad)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(hess, -grad, rcond=None)[0]


def _centering(
    value: Callable[[np.ndarray], float],
    derivatives: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    inside: Callable[[np.ndarray], bool],
    y: np.ndarray,
    budget: int,
    stop: Callable[[np.ndarray], bool] | None = None,
) -> tuple[np.ndarray, int]:
    used = 0
    while used < budget:
        grad, hess = derivatives(y)
        step = _newton_direction(hess, grad)
        decrement = -float(grad @ step)
        if decrement / 2 <= CENTERING_TOL:
            break
        used += 1
        current = value(y)
        size = 1.0
        for _ in range(MAX_HALVINGS):
            candidate = y + size * step
            if inside(candidate) and value(candidate) <= current - ARMIJO * size * decrement:
                break
            size *= 0.5
        else:
            break
        y = candidate
        if stop is not None and stop(y):
            break
    return y, used


def kkt_residual(problem: ConicProblem, x: np.ndarray) -> float:
    """Stationarity and complementarity error of `x` under the best non-negative multipliers.

    The multipliers minimize ||grad f - J^T lam||^2 + ||slack * lam||^2 over lam >= 0.
    """
    grad = 2 * problem.A.T @ (problem.A @ x - problem.b)
    jacobian, slacks = _Barrier(problem).jacobian(x)
    if not slacks.size:
        return float(np.max(np.abs(grad), initial=0.0))
    system = np.vstack([jacobian.T, np.diag(slacks)])
    target = np.concatenate([grad, np.zeros(slacks.size)])
    try:
        multipliers, _ = nnls(system, target)
    except RuntimeError:
        return float(np.inf)
    return float(np.max(np.abs(system @ multipliers - target)))


def find_interior_point(problem: ConicProblem, x_start: np.ndarray | None = None, max_iter: int = CONIC_MAX_ITER):
    """Phase 1: minimize the shift sigma that makes (x, sigma) strictly feasible; negative sigma gives an interior point.

    The search is confined to a ball around `x_start` and to sigma > SHIFT_FLOOR, which keeps the
    phase 1 barrier bounded below on unbounded feasible sets. Returns None when the smallest
    achievable shift is non-negative.
    """
    barrier = _Barrier(problem)
    n = problem.n_var
    x = np.zeros(n) if x_start is None else np.array(x_start, dtype=float).reshape(n)
    if not problem.barrier_degree:
        return x

    needed = [0.0]
    for i_u, i_V, k in problem.hyperbolic:
        needed.append(k - min(x[i_u], x[i_V]))
    _, linear, bounds = barrier.slacks(x)
    needed.extend(-linear)
    needed.extend(-bounds)
    y = np.append(x, max(needed) + 1.0)
    center = x.copy()
    radius2 = (PHASE_ONE_RADIUS * (1.0 + float(np.max(np.abs(x), initial=0.0)))) ** 2

    def confinement(y):
        offset = y[:n] - center
        return radius2 - offset @ offset, y[n] - SHIFT_FLOOR

    def inside(y):
        room, floor = confinement(y)
        return room > 0 and floor > 0 and barrier.inside(y[:n], y[n])

    degree = problem.barrier_degree + 2
    t = 1.0
    used = 0
    while used < max_iter:

        def value(y, t=t):
            room, floor = confinement(y)
            return t * y[n] + barrier.value(y[:n], y[n]) - np.log(room) - np.log(floor)

        def derivatives(y, t=t):
            grad, hess = barrier.derivatives(y[:n], y[n], with_sigma=True)
            room, floor = confinement(y)
            offset = y[:n] - center
            grad[:n] += 2 * offset / room
            hess[:n, :n] += 2 * np.eye(n) / room + 4 * np.outer(offset, offset) / room**2
            grad[n] += t - 1 / floor
            hess[n, n] += 1 / floor**2
            return grad, hess

        y, steps = _centering(value, derivatives, inside, y, max_iter - used, stop=lambda y: y[n] < 0)
        used += steps
        if y[n] < 0:
            return y[:n]
        if degree / t <= PHASE_ONE_GAP:
            break
        t *= T_FACTOR
    logging.debug(f"Phase 1 ended with shift {y[n]:.3e} after {used} Newton steps")
    return None


def solve(
    problem: ConicProblem,
    tol: float = CONIC_TOL,
    max_iter: int = CONIC_MAX_ITER,
    x0: Sequence[float] | np.ndarray | None = None,
    record: bool = False,
) -> ConicSolution:
    """Path-following log-barrier method; the barrier weight 1/t shrinks tenfold per outer step.

    The status is Optimal once the gap estimate is at most `tol`, the point is feasible and the
    KKT residual is at most CONIC_KKT_TOL * (1 + ||A^T b||).

    Args:
        problem: Problem to solve.
        tol: Required duality gap estimate (barrier degree / t).
        max_iter: Budget of Newton steps, counted separately for phase 1 and the main phase.
        x0: Optional starting point. If it is not strictly feasible, hyperbolic pairs are projected
            inside their cones first and phase 1 runs when that is still not enough.
        record: Keep a per outer step history (iter, mu, objective, kkt_residual).
    """
    barrier = _Barrier(problem)
    n = problem.n_var
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float).reshape(n)

    if not barrier.inside(x):
        repaired = x.copy()
        for i_u, i_V, k in problem.hyperbolic:
            repaired[i_u], repaired[i_V] = project_hyperbolic(repaired[i_u], repaired[i_V], 1.1 * k + 1e-3)
        if barrier.inside(repaired):
            x = repaired
        else:
            logging.info("Starting point is not strictly feasible, running phase 1")
            interior = find_interior_point(problem, repaired, max_iter=max_iter)
            if interior is None:
                return ConicSolution(x=x, objective=problem.objective(x), kkt_residual=np.inf, status=INFEASIBLE)
            x = interior

    AtA = problem.A.T @ problem.A
    Atb = problem.A.T @ problem.b
    scale = 1.0 + float(np.linalg.norm(Atb))
    degree = problem.barrier_degree
    history: list = []

    t = 1.0
    used = 0
    while True:

        def value(x, t=t):
            return t * problem.objective(x) + barrier.value(x)

        def derivatives(x, t=t):
            grad, hess = barrier.derivatives(x)
            return t * 2 * (AtA @ x - Atb) + grad, t * 2 * AtA + hess

        x, steps = _centering(value, derivatives, barrier.inside, x, max_iter - used)
        used += steps
        residual = kkt_residual(problem, x)
        if record:
            history.append({"iter": used, "mu": 1 / t, "objective": problem.objective(x), "kkt_residual": residual})

        if degree / t <= tol:
            accepted = residual <= CONIC_KKT_TOL * scale and problem.violation(x) <= FEASIBILITY_TOL
            status = OPTIMAL if accepted else MAX_ITER
            break
        if used >= max_iter:
            logging.warning(f"Barrier method stopped after {used} Newton steps with gap {degree / t:.2e}")
            status = MAX_ITER
            break
        t *= T_FACTOR

    return ConicSolution(
        x=x,
        objective=problem.objective(x),
        kkt_residual=residual,
        status=status,
        iterations=used,
        history=history,
    )
