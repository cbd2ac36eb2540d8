#  Copyright (c) 2024 ltc-stability developers

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from ltc_stability.common import (
    ALPHA_FLOOR,
    ALPHA_MAX_ITER,
    ALPHA_TOL,
    REGION_TOL,
    BoxTooLarge,
    as_vector,
)
from ltc_stability.network import Network, check_taps, load_voltages

MARGINAL_TOL = 1e-4
GRID_BUDGET = 2_000_000
NEWTON_MAX_ITER = 100


@dataclass(frozen=True, eq=False)
class Equilibrium:
    """Equilibrium of the tap dynamics together with the spectrum of the Jacobian there.

    `stability` is "stable" when every eigenvalue has real part below -MARGINAL_TOL, "unstable" when one
    is above MARGINAL_TOL and "marginal" otherwise.
    """

    r_star: np.ndarray
    residual: float
    eigenvalues: np.ndarray
    iterations: int = 0

    @property
    def stability(self) -> str:
        real = np.real(self.eigenvalues)
        if np.all(real < -MARGINAL_TOL):
            return "stable"
        if np.any(real > MARGINAL_TOL):
            return "unstable"
        return "marginal"

    @property
    def stable(self) -> bool:
        return self.stability == "stable"

    def report(self) -> dict:
        return {
            "r_star": self.r_star,
            "residual": self.residual,
            "eigenvalues": [complex(x) for x in self.eigenvalues],
            "stable": self.stable,
            "stability": self.stability,
        }


@dataclass(frozen=True, eq=False)
class Infeasible:
    """No equilibrium exists: the fixed-point iteration left the positive orthant or did not settle."""

    reason: str
    iterations: int
    last_iterate: np.ndarray

    stable = False


@dataclass(frozen=True, eq=False)
class RegionPWitness:
    r: np.ndarray
    slack: np.ndarray


@dataclass(frozen=True, eq=False)
class NotInP:
    r: np.ndarray
    violations: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class RoaCertificate:
    r0: np.ndarray
    witness: np.ndarray


@dataclass(frozen=True, eq=False)
class Unknown:
    """The sufficient condition failed; this is not a proof of instability."""

    r0: np.ndarray
    optimal_cost: float


def fixed_point_map(net: Network, r) -> np.ndarray:
    """f_i(r) = (E_i - sum_k Z_ik V_0,k b_s,k / r_k) / V_0,i with open-circuit E and Z."""
    r = as_vector(r, net.n_load, "r")
    E, Z = net.open_circuit
    return (E - Z @ (net.setpoints * net.load_susceptances / r)) / net.setpoints


def _map_batch(net: Network, points: np.ndarray) -> np.ndarray:
    E, Z = net.open_circuit
    demand = net.setpoints * net.load_susceptances
    return (E - (demand / points) @ Z.T) / net.setpoints


def _map_jacobian(net: Network, r: np.ndarray) -> np.ndarray:
    _, Z = net.open_circuit
    demand = net.setpoints * net.load_susceptances
    return Z * (demand / r**2)[None, :] / net.setpoints[:, None]


def jacobian(net: Network, r) -> np.ndarray:
    """Analytic Jacobian of the tap dynamics, d r_dot_i / d r_k.

    Differentiating B_LL(r) V = h gives dV/dr_k = B_LL^-1 e_k (2 b_s,k / r_k^3) V_k.
    """
    r = check_taps(net, r)
    V, _ = load_voltages(net, r)
    n = net.n_load
    B_LL = net.susceptance[:n, :n] + np.diag(net.load_susceptances / r**2)
    dV = np.linalg.solve(B_LL, np.diag(2 * net.load_susceptances * V / r**3))
    dV_s = dV / r[:, None] - np.diag(V / r**2)
    return dV_s / net.time_constants[:, None]


def _equilibrium(net: Network, r: np.ndarray, iterations: int = 0) -> Equilibrium:
    residual = float(np.max(np.abs(fixed_point_map(net, r) - r)))
    eigenvalues = np.linalg.eigvals(jacobian(net, r))
    return Equilibrium(r_star=r, residual=residual, eigenvalues=np.sort_complex(eigenvalues), iterations=iterations)


def find_alpha(
    net: Network,
    tol: float = ALPHA_TOL,
    max_iter: int = ALPHA_MAX_ITER,
    r_floor: float = ALPHA_FLOOR,
) -> Equilibrium | Infeasible:
    """Largest equilibrium by monotone fixed-point iteration from the upper bound E_open / V_0.

    The iterates never increase. The search gives up when a component drops to `r_floor`
    or when `max_iter` iterations did not settle, both meaning that no equilibrium exists.
    """
    E, Z = net.open_circuit
    V_0 = net.setpoints
    demand = V_0 * net.load_susceptances
    r = E / V_0

    for iteration in range(1, max_iter + 1):
        r_next = (E - Z @ (demand / r)) / V_0
        if np.any(r_next <= r_floor):
            logging.warning(f"Fixed-point iteration left the positive orthant after {iteration} steps, no equilibrium")
            return Infeasible(reason="floor", iterations=iteration, last_iterate=r_next)
        assert np.all(r_next <= r + 1e-12 * np.abs(r)), "Fixed-point iterates have to be non-increasing!"
        if np.max(np.abs(r_next - r)) <= tol:
            polished = _descend(net, r_next, tol)
            assert np.all(polished <= r_next), "Newton polish has to stay below the last iterate!"
            return _equilibrium(net, polished, iterations=iteration)
        r = r_next

    logging.warning(f"Fixed-point iteration did not settle in {max_iter} steps")
    return Infeasible(reason="max_iter", iterations=max_iter, last_iterate=r)


def in_region_P(net: Network, r, tol: float = REGION_TOL) -> RegionPWitness | NotInP:
    """Test V_s(r) >= V_0 at every load, allowing `tol` of numerical slack."""
    r = check_taps(net, r)
    _, V_s = load_voltages(net, r)
    slack = V_s - net.setpoints
    if np.all(slack >= -tol):
        return RegionPWitness(r=r, slack=slack)
    return NotInP(r=r, violations={int(i): float(-slack[i]) for i in np.flatnonzero(slack < -tol)})


def roa_membership(net: Network, r0, zero_tol: float | None = None) -> RoaCertificate | Unknown:
    """Look for a point of P below `r0`; such a point certifies that `r0` is attracted to the stable equilibrium."""
    from ltc_stability.monitor import Stable, certify_stability

    kwds = {} if zero_tol is None else {"zero_tol": zero_tol}
    certificate = certify_stability(net, r0, **kwds)
    if isinstance(certificate.status, Stable):
        return RoaCertificate(r0=certificate.r0, witness=certificate.status.underline_r)
    return Unknown(r0=certificate.r0, optimal_cost=certificate.optimal_cost)


def _descend(net: Network, r: np.ndarray, tol: float) -> np.ndarray:
    # Newton on f(r) - r from above: iterates decrease and stay above the largest equilibrium,
    # halving the error per step even at a double root
    eye = np.eye(net.n_load)
    for _ in range(NEWTON_MAX_ITER):
        g = fixed_point_map(net, r) - r
        try:
            step = np.linalg.solve(_map_jacobian(net, r) - eye, -g)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)) or np.any(step > tol) or np.any(r + step <= 0):
            break
        r = np.minimum(r + step, r)
        if np.max(np.abs(step)) <= tol:
            break
    return r


def _refine(net: Network, r: np.ndarray, tol: float) -> np.ndarray | None:
    # Damped Newton on f(r) - r, never moving a component by more than half of its value
    eye = np.eye(net.n_load)
    for _ in range(NEWTON_MAX_ITER):
        g = fixed_point_map(net, r) - r
        if np.max(np.abs(g)) <= tol:
            return r
        try:
            step = np.linalg.solve(_map_jacobian(net, r) - eye, -g)
        except np.linalg.LinAlgError:
            return None
        ratio = np.max(np.abs(step) / (0.5 * r))
        if ratio > 1:
            step = step / ratio
        r = r + step
    return r if np.max(np.abs(fixed_point_map(net, r) - r)) <= tol else None


def brute_force_equilibria(
    net: Network,
    box=None,
    grid_density: int = 60,
    refine_tol: float = 1e-12,
    budget: int = GRID_BUDGET,
) -> list[Equilibrium]:
    """Every isolated equilibrium inside `box`, found by scanning a grid for sign changes of f(r) - r.

    Args:
        net: Network with at most three loads.
        box: Pair (lower, upper) of scalars or per-load vectors. Defaults to (1e-2, 1.05 E_open / V_0).
        grid_density: Grid points per dimension.
        refine_tol: Residual accepted by the Newton refinement.
        budget: Largest number of grid points allowed.
    """
    n = net.n_load
    if n > 3:
        raise BoxTooLarge(f"Grid search is limited to 3 loads, network has {n}")
    if grid_density**n > budget:
        raise BoxTooLarge(f"Grid with {grid_density}^{n} points exceeds the budget of {budget}")

    E, _ = net.open_circuit
    lower, upper = box if box is not None else (1e-2, 1.05 * E / net.setpoints)
    lower, upper = as_vector(lower, n, "lower"), as_vector(upper, n, "upper")
    assert np.all(lower > 0) and np.all(upper > lower), "Box has to lie in the positive orthant!"

    axes = [np.linspace(lower[i], upper[i], grid_density) for i in range(n)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    values = _map_batch(net, mesh.reshape(-1, n)).reshape(mesh.shape) - mesh

    # A cell is a candidate when every component of f(r) - r changes sign over its corners
    cells = tuple(slice(0, grid_density - 1) for _ in range(n))
    corner_values = []
    for offset in itertools.product((0, 1), repeat=n):
        corner_values.append(values[tuple(slice(o, grid_density - 1 + o) for o in offset)])
    corner_values = np.stack(corner_values)
    candidate = np.all((corner_values.min(axis=0) <= 0) & (corner_values.max(axis=0) >= 0), axis=-1)

    spacing = (upper - lower) / (grid_density - 1)
    found: list[np.ndarray] = []
    for index in np.argwhere(candidate):
        start = mesh[cells][tuple(index)] + 0.5 * spacing
        r = _refine(net, start, refine_tol)
        if r is None or np.any(r < lower - 1e-9) or np.any(r > upper + 1e-9):
            continue
        if any(np.max(np.abs(r - other)) <= 1e-7 for other in found):
            continue
        found.append(r)

    found.sort(key=lambda x: tuple(x))
    return [_equilibrium(net, r) for r in found]
