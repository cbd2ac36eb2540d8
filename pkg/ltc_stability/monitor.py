#  Copyright (c) 2024 ltc-stability developers

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.optimize import minimize

from ltc_stability import conic
from ltc_stability.common import (
    CONIC_MAX_ITER,
    CONIC_TOL,
    R_MIN,
    ZERO_TOL,
    LocalSolveFailed,
    NoFeasiblePoint,
    SolverError,
    SupportInfeasible,
    as_vector,
)
from ltc_stability.equilibria import Equilibrium, Infeasible, RegionPWitness, find_alpha, in_region_P
from ltc_stability.network import Network, check_taps, load_voltages

CLIP_TOL = 1e-10
BOUND_TOL = 1e-8
AL_MAX_OUTER = 50
AL_FEASIBILITY_TOL = 1e-9
AL_RHO_MAX = 1e8


@dataclass(frozen=True, eq=False)
class Stable:
    V: np.ndarray
    u: np.ndarray
    underline_r: np.ndarray
    kind = "Stable"


@dataclass(frozen=True)
class NeedsSupport:
    objective: float
    kind = "NeedsSupport"


@dataclass(frozen=True, eq=False)
class StabilityCertificate:
    r0: np.ndarray
    status: Union[Stable, NeedsSupport]
    optimal_cost: float
    solution: conic.ConicSolution

    @property
    def stable(self) -> bool:
        return isinstance(self.status, Stable)

    def report(self) -> dict:
        record = {"status": self.status.kind, "cost": self.optimal_cost, "r0": self.r0}
        if isinstance(self.status, Stable):
            record["witness"] = {"V": self.status.V, "u": self.status.u, "underline_r": self.status.underline_r}
        return record


@dataclass(frozen=True, eq=False)
class SupportPlan:
    """Susceptance reduction per load that brings `r0` back into the region of attraction.

    Percentages relate the reduction to the total demand: `percentage` uses the equilibrium reactive
    powers V_0^2 b_s, `susceptance_percentage` the plain susceptances.
    """

    r0: np.ndarray
    d: np.ndarray
    load_susceptances: np.ndarray
    setpoints: np.ndarray
    post_support_alpha: np.ndarray | None
    post_support_certified: bool
    optimal_cost: float

    @property
    def total_support(self) -> float:
        return float(np.sum(self.d))

    @property
    def reactive_reduction(self) -> float:
        return float(np.sum(self.setpoints**2 * self.d))

    @property
    def percentage(self) -> float:
        return 100 * self.reactive_reduction / float(np.sum(self.setpoints**2 * self.load_susceptances))

    @property
    def susceptance_percentage(self) -> float:
        return 100 * self.total_support / float(np.sum(self.load_susceptances))

    def per_bus_rows(self, labels: Sequence | None = None) -> list[dict]:
        labels = list(labels) if labels is not None else list(range(1, self.d.size + 1))
        demand = self.setpoints**2 * self.load_susceptances
        reduction = self.setpoints**2 * self.d
        return [
            {"bus": label, "b_s": b, "d": d, "demand": q, "reduction": dq}
            for label, b, d, q, dq in zip(labels, self.load_susceptances, self.d, demand, reduction)
        ]

    def report(self) -> dict:
        return {
            "d": self.d,
            "total": self.total_support,
            "reactive_reduction": self.reactive_reduction,
            "percentage": self.percentage,
            "susceptance_percentage": self.susceptance_percentage,
            "post_support_alpha": self.post_support_alpha,
            "post_support_certified": self.post_support_certified,
        }


def build_surrogate(net: Network, r0, cap_voltages: bool = True) -> conic.ConicProblem:
    """Convex surrogate in x = (V, u) with u standing for V / r^2.

    minimize ||B~ V + [b_s] u - h||^2 subject to u_i V_i >= V_0,i^2, V <= [r_0]^2 u, V >= 0 and,
    when `cap_voltages` is set, B~ V <= h.
    """
    r0 = check_taps(net, r0)
    n = net.n_load
    tilde = np.asarray(net.susceptance[:n, :n])
    eye = np.eye(n)

    A = np.hstack([tilde, np.diag(net.load_susceptances)])
    hyperbolic = [(n + i, i, net.setpoints[i]) for i in range(n)]
    rows = [np.hstack([eye, -np.diag(r0**2)]), np.hstack([-eye, np.zeros((n, n))])]
    bounds = [np.zeros(n), np.zeros(n)]
    if cap_voltages:
        rows.append(np.hstack([tilde, np.zeros((n, n))]))
        bounds.append(np.asarray(net.h))
    return conic.ConicProblem(A=A, b=np.asarray(net.h), hyperbolic=hyperbolic, G=np.vstack(rows), g=np.concatenate(bounds))


def interior_start(net: Network, r0) -> np.ndarray:
    """Strictly feasible (V, u) for the surrogate built from the open-circuit solution."""
    r0 = check_taps(net, r0)
    E, Z = net.open_circuit
    eps = 0.5 * float(np.min(E / (Z @ np.ones(net.n_load))))
    V = E - eps * (Z @ np.ones(net.n_load))
    u = 2 * np.maximum(net.setpoints**2 / V, V / r0**2)
    return np.concatenate([V, u])


def certify_stability(
    net: Network,
    r0,
    zero_tol: float = ZERO_TOL,
    cap_voltages: bool = True,
    tol: float = CONIC_TOL,
    max_iter: int = CONIC_MAX_ITER,
) -> StabilityCertificate:
    """Zero optimal cost of the surrogate certifies that `r0` lies in the region of attraction.

    The witness is a point of P below `r0`; `r0` itself is preferred whenever it already lies in P.
    """
    r0 = check_taps(net, r0)
    n = net.n_load
    problem = build_surrogate(net, r0, cap_voltages=cap_voltages)
    solution = conic.solve(problem, tol=tol, max_iter=max_iter, x0=interior_start(net, r0))
    if solution.status == conic.INFEASIBLE:
        raise SolverError("Surrogate problem reported infeasible, which can not happen for a valid network")
    if solution.status != conic.OPTIMAL:
        logging.warning(f"Surrogate solve ended with status {solution.status}, certificate uses the last iterate")

    cost = solution.objective
    if cost > zero_tol:
        return StabilityCertificate(r0=r0, status=NeedsSupport(objective=cost), optimal_cost=cost, solution=solution)

    V, u = solution.x[:n], solution.x[n:]
    if isinstance(in_region_P(net, r0), RegionPWitness):
        V, _ = load_voltages(net, r0)
        u = V / r0**2
    status = Stable(V=V, u=u, underline_r=np.sqrt(V / u))
    return StabilityCertificate(r0=r0, status=status, optimal_cost=cost, solution=solution)


def recover_support(net: Network, V: np.ndarray, u: np.ndarray) -> np.ndarray:
    """d = [u]^-1 (B~ V + [b_s] u - h), with roundoff below CLIP_TOL removed."""
    n = net.n_load
    tilde = np.asarray(net.susceptance[:n, :n])
    d = (tilde @ V + net.load_susceptances * u - net.h) / u
    if np.any(d < -BOUND_TOL) or np.any(d > net.load_susceptances + BOUND_TOL):
        raise SupportInfeasible(f"Recovered support {d!r} violates 0 <= d <= b_s")
    d = np.where(np.abs(d) <= CLIP_TOL, 0.0, d)
    return np.clip(d, 0.0, net.load_susceptances)


def compute_support(net: Network, r0, backoff: float = 0.0, zero_tol: float = ZERO_TOL) -> SupportPlan:
    """Susceptance reduction that makes `r0` a member of the region of attraction.

    Args:
        net: Network.
        r0: Current tap ratios.
        backoff: Solve for `r0 - backoff` instead, so that `r0` ends up strictly inside the enlarged region.
        zero_tol: Cost below which `r0` counts as already stable; the plan is then zero.
    """
    r0 = check_taps(net, r0)
    target = np.maximum(r0 - backoff, R_MIN)
    certificate = certify_stability(net, target, zero_tol=zero_tol)
    if certificate.stable:
        logging.info("Tap position is already certified stable, no support needed")
        alpha = find_alpha(net)
        return SupportPlan(
            r0=r0,
            d=np.zeros(net.n_load),
            load_susceptances=np.asarray(net.load_susceptances),
            setpoints=np.asarray(net.setpoints),
            post_support_alpha=alpha.r_star if isinstance(alpha, Equilibrium) else None,
            post_support_certified=True,
            optimal_cost=certificate.optimal_cost,
        )

    n = net.n_load
    x = certificate.solution.x
    d = recover_support(net, x[:n], x[n:])
    reduced_b_s = net.load_susceptances - d
    if np.any(reduced_b_s <= 0):
        raise SupportInfeasible("Support would remove a load completely")
    reduced = net.with_load_susceptances(reduced_b_s)

    alpha = find_alpha(reduced)
    post_alpha = alpha.r_star if isinstance(alpha, Equilibrium) else None
    try:
        certified = certify_stability(reduced, r0, zero_tol=max(zero_tol, 1e-8)).stable
    except SolverError:
        certified = False
    logging.info(f"Support plan: total reduction {float(np.sum(d)):.6g}, certified on the reduced network: {certified}")
    return SupportPlan(
        r0=r0,
        d=d,
        load_susceptances=np.asarray(net.load_susceptances),
        setpoints=np.asarray(net.setpoints),
        post_support_alpha=post_alpha,
        post_support_certified=certified,
        optimal_cost=certificate.optimal_cost,
    )


def normalize_direction(c, n: int) -> np.ndarray:
    c = as_vector(c, n, "direction")
    assert np.all(c >= 0) and np.sum(c) > 0, "Direction has to be non-negative and non-zero!"
    return c / np.sum(c)


def roa_direction_opt(net: Network, c, alpha: Equilibrium | None = None, tol: float = AL_FEASIBILITY_TOL) -> np.ndarray:
    """Smallest point of P along direction `c`, a local solution of min c^T r over P.

    Works in (V, u) with r = sqrt(V / u): the balance B~ V + [b_s] u = h is an equality and
    u V >= V_0^2 an inequality, both handled by an augmented Lagrangian whose bound-constrained
    subproblems are solved by L-BFGS-B. Starts from the stable equilibrium.
    """
    n = net.n_load
    c = normalize_direction(c, n)
    if alpha is None:
        result = find_alpha(net)
        if isinstance(result, Infeasible):
            raise NoFeasiblePoint("Network has no equilibrium, P is empty")
        alpha = result
    r_alpha = alpha.r_star

    tilde = np.asarray(net.susceptance[:n, :n])
    b_s, h, V_0sq = net.load_susceptances, np.asarray(net.h), net.setpoints**2
    V_alpha, _ = load_voltages(net, r_alpha)
    y = np.concatenate([V_alpha, V_alpha / r_alpha**2])
    scale = float(np.max(np.abs(h))) or 1.0

    lam = np.zeros(n)
    mu = np.zeros(n)
    rho = 10.0
    floor = 1e-9
    bounds = [(floor, None)] * (2 * n)

    def violation(y):
        V, u = y[:n], y[n:]
        balance = tilde @ V + b_s * u - h
        return balance, u * V - V_0sq

    def lagrangian(y, lam, mu, rho):
        V, u = y[:n], y[n:]
        ratio = np.sqrt(V / u)
        value = float(c @ ratio)
        grad = np.concatenate([c * ratio / (2 * V), -c * ratio / (2 * u)])

        balance, hyp = violation(y)
        value += float(lam @ balance) + 0.5 * rho * float(balance @ balance)
        weight = lam + rho * balance
        grad += np.concatenate([tilde.T @ weight, b_s * weight])

        shifted = np.maximum(0.0, mu - rho * hyp)
        value += float((shifted @ shifted - mu @ mu) / (2 * rho))
        grad += np.concatenate([-shifted * u, -shifted * V])
        return value, grad

    previous = np.inf
    for outer in range(AL_MAX_OUTER):
        result = minimize(lagrangian, y, args=(lam, mu, rho), jac=True, method="L-BFGS-B", bounds=bounds,
                          options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-12})
        if not np.all(np.isfinite(result.x)):
            raise LocalSolveFailed(f"Quasi-Newton step diverged: {result.message}")
        y = result.x
        balance, hyp = violation(y)
        infeasibility = max(float(np.max(np.abs(balance))) / scale, float(np.max(np.maximum(0.0, -hyp))))
        lam = lam + rho * balance
        mu = np.maximum(0.0, mu - rho * hyp)
        if infeasibility <= tol:
            break
        if infeasibility > 0.25 * previous:
            rho = min(10 * rho, AL_RHO_MAX)
        previous = infeasibility
    else:
        # Tangent boundaries (double roots) stall the multiplier updates slightly above tol
        r_star = np.sqrt(y[:n] / y[n:])
        if not isinstance(in_region_P(net, r_star), RegionPWitness):
            raise LocalSolveFailed(f"Augmented Lagrangian did not reach feasibility {tol:g}, last {infeasibility:.3g}")
        logging.warning(f"Augmented Lagrangian stopped at feasibility {infeasibility:.3g}, the point lies in P")
        return r_star

    r_star = np.sqrt(y[:n] / y[n:])
    if not isinstance(in_region_P(net, r_star), RegionPWitness):
        raise LocalSolveFailed(f"Local solution {r_star!r} is not in P")
    return r_star


def union_roa(net: Network, directions: Iterable) -> list[tuple[np.ndarray, np.ndarray]]:
    """Witnesses r*(c) for every direction; their upper orthants together approximate the region of attraction."""
    directions = list(directions)
    assert directions, "At least one direction is needed!"
    result = find_alpha(net)
    if isinstance(result, Infeasible):
        raise NoFeasiblePoint("Network has no equilibrium, P is empty")
    return [(normalize_direction(c, net.n_load), roa_direction_opt(net, c, alpha=result)) for c in directions]


def staircase_corners(witnesses: Sequence[np.ndarray], i: int, j: int, upper: tuple[float, float]) -> list[tuple[float, float]]:
    """Corner list of the 2-D projection onto (r_i, r_j) of the union of {r >= w} over all witnesses w.

    The polygon runs from (w_i, upper_j) down the staircase to (upper_i, w_j) of the Pareto-minimal witnesses.
    """
    points = sorted({(float(w[i]), float(w[j])) for w in witnesses})
    pareto: list[tuple[float, float]] = []
    for x, y in points:
        if not pareto or y < pareto[-1][1]:
            pareto.append((x, y))
    corners = [(pareto[0][0], upper[1])]
    for index, (x, y) in enumerate(pareto):
        corners.append((x, y))
        if index + 1 < len(pareto):
            corners.append((pareto[index + 1][0], y))
    corners.append((upper[0], pareto[-1][1]))
    return corners
