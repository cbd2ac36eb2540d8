#  Copyright (c) 2024 ltc-stability developers

"""Consensus ADMM for the support surrogate, split over agents that own connected groups of buses.

Every agent keeps the voltages V and auxiliaries u of its own load buses and a copy W of every
foreign load bus adjacent to them. Shared values agree through consensus variables z, one per
boundary bus, computed by the agent owning that bus. A round consists of three bulk-synchronous
steps: local solves (W and mu sent to owners), z updates (z sent back) and dual updates.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Hashable, Mapping, Sequence

import networkx as nx
import numpy as np

from ltc_stability import conic
from ltc_stability.common import (
    CONIC_TOL,
    RHO_DEFAULT,
    ZERO_TOL,
    AgentSolveError,
    DisconnectedAgent,
    MissingContribution,
    PartitionError,
    as_vector,
)
from ltc_stability.monitor import build_surrogate, interior_start
from ltc_stability.network import Network, check_taps
from ltc_stability.table import IterationTable

CONVERGED = "Converged"
MAX_ITER = "MaxIter"
MESSAGE_KINDS = ("W", "mu", "z")
OBJECTIVE_TOL = 1e-4


@dataclass(frozen=True, eq=False)
class Partition:
    """Agents with their own load buses (N_i), adjacent foreign load buses (N_i^a) and the boundary set B.

    Load buses are internal indices of the network; `neighbors[j]` lists the agents holding a copy of boundary bus j.
    """

    agents: tuple
    assignment: dict
    own: dict
    adjacent: dict
    boundary: tuple
    owner: dict
    neighbors: dict


@dataclass(frozen=True, eq=False)
class LocalProblem:
    agent: Hashable
    own: tuple
    adjacent: tuple
    shared: np.ndarray
    B_own: np.ndarray
    B_adj: np.ndarray
    load_susceptances: np.ndarray
    h: np.ndarray
    setpoints: np.ndarray
    r0: np.ndarray
    cap_voltages: bool = True
    interior: np.ndarray | None = None

    def residual(self, V: np.ndarray, u: np.ndarray, W: np.ndarray) -> np.ndarray:
        return self.B_own @ V + self.B_adj @ W + self.load_susceptances * u - self.h


@dataclass(frozen=True, eq=False)
class AgentState:
    """Primal block (V, u, W), multipliers lam (own buses, used on shared ones) and mu (copies) and the known z."""

    problem: LocalProblem
    V: np.ndarray
    u: np.ndarray
    W: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    z: dict

    @property
    def agent(self):
        return self.problem.agent


@dataclass(frozen=True)
class Message:
    sender: Hashable
    recipient: Hashable
    round: int
    bus: Hashable
    kind: str
    value: float

    def __post_init__(self):
        assert self.kind in MESSAGE_KINDS, f"Unknown message kind '{self.kind}'. Available: {', '.join(MESSAGE_KINDS)}"


class MessageBus:
    """In-process bulk-synchronous transport: posted messages become visible only after `sync`."""

    def __init__(self):
        self._outbox: list[Message] = []
        self._inboxes: dict = defaultdict(list)
        self.delivered = 0

    def post(self, message: Message):
        self._outbox.append(message)

    def sync(self):
        self._inboxes = defaultdict(list)
        for message in self._outbox:
            self._inboxes[message.recipient].append(message)
        self.delivered += len(self._outbox)
        self._outbox = []

    def inbox(self, agent) -> list[Message]:
        return list(self._inboxes.get(agent, ()))


@dataclass(frozen=True, eq=False)
class AdmmReport:
    iterations: int
    objective_history: list
    primal_residual_history: list
    dual_residual_history: list
    V: np.ndarray
    u: np.ndarray
    z: dict
    verdict: str
    states: tuple

    @property
    def converged(self) -> bool:
        return self.verdict == CONVERGED

    @property
    def objective(self) -> float:
        return self.objective_history[-1] if self.objective_history else math.nan

    def rows(self) -> tuple[list[str], list[list]]:
        """Residual history for CSV export."""
        header = ["iter", "objective", "primal_res", "dual_res"]
        rows = [
            [k + 1, obj, primal, dual]
            for k, (obj, primal, dual) in enumerate(zip(self.objective_history, self.primal_residual_history, self.dual_residual_history))
        ]
        return header, rows

    def report(self) -> dict:
        return {
            "verdict": self.verdict,
            "iterations": self.iterations,
            "objective": self.objective,
            "primal_residual": self.primal_residual_history[-1] if self.iterations else None,
            "dual_residual": self.dual_residual_history[-1] if self.iterations else None,
            "V": self.V,
            "u": self.u,
        }


def build_partition(net: Network, assignment: Mapping) -> Partition:
    """Validate a bus -> agent assignment given with external bus ids."""
    missing = [bus for bus in net.bus_ids if bus not in assignment]
    if missing:
        raise PartitionError(f"Assignment misses buses {missing!r}")
    unknown = [bus for bus in assignment if bus not in net.bus_ids]
    if unknown:
        raise PartitionError(f"Assignment references unknown buses {unknown!r}")

    agents: list = []
    members: dict = defaultdict(list)
    for index, bus in enumerate(net.bus_ids):
        agent = assignment[bus]
        if agent not in members:
            agents.append(agent)
        members[agent].append(index)

    n = net.n_load
    graph = net.graph
    own, owner = {}, {}
    for agent in agents:
        if not nx.is_connected(graph.subgraph(members[agent])):
            raise DisconnectedAgent(f"Buses of agent {agent!r} do not form a connected subgraph")
        loads = tuple(j for j in members[agent] if j < n)
        if not loads:
            raise PartitionError(f"Agent {agent!r} owns no load bus")
        own[agent] = loads
        owner.update({j: agent for j in loads})

    adjacent = {}
    neighbors: dict = defaultdict(list)
    for agent in agents:
        foreign = sorted({k for j in own[agent] for k in graph.neighbors(j) if k < n and owner[k] != agent})
        adjacent[agent] = tuple(foreign)
        for k in foreign:
            neighbors[k].append(agent)

    return Partition(
        agents=tuple(agents),
        assignment=dict(assignment),
        own=own,
        adjacent=adjacent,
        boundary=tuple(sorted(neighbors)),
        owner=owner,
        neighbors={k: tuple(v) for k, v in sorted(neighbors.items())},
    )


def local_problem(net: Network, r0, partition: Partition, agent, cap_voltages: bool = True) -> LocalProblem:
    r0 = check_taps(net, r0)
    own, adjacent = list(partition.own[agent]), list(partition.adjacent[agent])
    tilde = np.asarray(net.susceptance)
    n = net.n_load
    start = interior_start(net, r0)
    return LocalProblem(
        agent=agent,
        own=tuple(own),
        adjacent=tuple(adjacent),
        shared=np.array([j in partition.neighbors for j in own], dtype=bool),
        B_own=tilde[np.ix_(own, own)],
        B_adj=tilde[np.ix_(own, adjacent)],
        load_susceptances=net.load_susceptances[own],
        h=np.asarray(net.h)[own],
        setpoints=net.setpoints[own],
        r0=r0[own],
        cap_voltages=cap_voltages,
        interior=np.concatenate([start[own], start[[n + j for j in own]], start[adjacent]]),
    )


def initial_states(net: Network, r0, partition: Partition, init="flat", cap_voltages: bool = True) -> list[AgentState]:
    """Flat start V = 1, u = max(V_0)^2, z = 1 or a warm start {"V": ..., "u": ...} over all load buses; duals start at 0."""
    n = net.n_load
    if isinstance(init, str):
        assert init == "flat", f"Unknown initialization '{init}'!"
        V = np.ones(n)
        u = np.full(n, float(np.max(net.setpoints)) ** 2)
    else:
        V = as_vector(init["V"], n, "V")
        u = as_vector(init["u"], n, "u")

    states = []
    for agent in partition.agents:
        problem = local_problem(net, r0, partition, agent, cap_voltages=cap_voltages)
        own, adjacent = list(problem.own), list(problem.adjacent)
        known = [j for j in own if j in partition.neighbors] + adjacent
        states.append(
            AgentState(
                problem=problem,
                V=V[own].copy(),
                u=u[own].copy(),
                W=V[adjacent].copy(),
                lam=np.zeros(len(own)),
                mu=np.zeros(len(adjacent)),
                z={j: float(V[j]) for j in known},
            )
        )
    return states


def local_program(state: AgentState, z: Mapping, rho: float) -> conic.ConicProblem:
    """Conic form of the local step over x = (V, u, W): f_i, dual terms and rho/2 proximal terms over X_i."""
    problem = state.problem
    p, q = len(problem.own), len(problem.adjacent)
    eye_p, eye_q = np.eye(p), np.eye(q)
    scale = math.sqrt(rho / 2)

    rows = [np.hstack([problem.B_own, np.diag(problem.load_susceptances), problem.B_adj])]
    targets = [problem.h]
    shared = np.flatnonzero(problem.shared)
    if shared.size and rho > 0:
        z_own = np.array([z[problem.own[a]] for a in shared])
        rows.append(scale * np.hstack([eye_p[shared], np.zeros((shared.size, p + q))]))
        targets.append(scale * (z_own - state.lam[shared] / rho))
    if q and rho > 0:
        z_adj = np.array([z[k] for k in problem.adjacent])
        rows.append(scale * np.hstack([np.zeros((q, 2 * p)), eye_q]))
        targets.append(scale * (z_adj - state.mu / rho))

    zeros_pq = np.zeros((p, q))
    constraints = [
        np.hstack([eye_p, -np.diag(problem.r0**2), zeros_pq]),
        np.hstack([-eye_p, np.zeros((p, p)), zeros_pq]),
        np.hstack([np.zeros((q, 2 * p)), -eye_q]),
    ]
    bounds = [np.zeros(p), np.zeros(p), np.zeros(q)]
    if problem.cap_voltages:
        constraints.append(np.hstack([problem.B_own, np.zeros((p, p)), problem.B_adj]))
        bounds.append(problem.h)

    return conic.ConicProblem(
        A=np.vstack(rows),
        b=np.concatenate(targets),
        hyperbolic=[(p + a, a, problem.setpoints[a]) for a in range(p)],
        G=np.vstack(constraints),
        g=np.concatenate(bounds),
    )


def x_update(state: AgentState, z: Mapping | None = None, rho: float = RHO_DEFAULT, tol: float = CONIC_TOL) -> AgentState:
    """Minimize f_i + dual terms + rho/2 proximal terms over the local set X_i of the agent.

    The solve starts from the carried (V, u, W), or from the interior point of the local set when
    the carried values are not strictly feasible (flat start at small taps).
    """
    assert rho >= 0, "Penalty parameter has to be non-negative!"
    problem = state.problem
    z = state.z if z is None else {**state.z, **z}
    p = len(problem.own)
    local = local_program(state, z, rho)

    x0 = np.concatenate([state.V, state.u, state.W])
    if local.margin(x0) <= 0 and problem.interior is not None:
        logging.debug(f"Agent {state.agent!r}: carried state is not strictly feasible, starting from the interior point")
        x0 = problem.interior
    solution = conic.solve(local, tol=tol, x0=x0)
    if solution.status == conic.INFEASIBLE:
        raise AgentSolveError(state.agent, "local problem is infeasible")
    if solution.status != conic.OPTIMAL:
        logging.debug(f"Agent {state.agent!r}: local solve ended with status {solution.status}")

    x = solution.x
    return replace(state, V=x[:p], u=x[p : 2 * p], W=x[2 * p :], z=z)


def z_update(
    bus, lam: float, V_new: float, contributions: Sequence[tuple[float, float]], rho: float, n_neighbors: int | None = None
) -> float:
    """Closed-form consensus value of a boundary bus.

    Args:
        bus: Bus the value belongs to, used in error messages.
        lam: Multiplier of the owner's voltage.
        V_new: Owner's new voltage.
        contributions: Pairs (mu, W) from every agent holding a copy of the bus.
        rho: Penalty parameter.
        n_neighbors: Number of copies expected; a mismatch is a protocol violation.
    """
    if not contributions or (n_neighbors is not None and len(contributions) != n_neighbors):
        expected = "at least one" if n_neighbors is None else n_neighbors
        raise MissingContribution(f"Bus {bus!r}: expected {expected} contributions, got {len(contributions)}")
    total = lam + rho * V_new + sum(mu + rho * W for mu, W in contributions)
    return total / (rho * (1 + len(contributions)))


def dual_update(state: AgentState, z_new: Mapping, rho: float = RHO_DEFAULT) -> AgentState:
    """lam += rho (V - z) on shared own buses, mu += rho (W - z) on copies."""
    problem = state.problem
    z = {**state.z, **z_new}
    lam = state.lam.copy()
    for a, j in enumerate(problem.own):
        if problem.shared[a]:
            lam[a] += rho * (state.V[a] - z[j])
    mu = state.mu + rho * (state.W - np.array([z[k] for k in problem.adjacent]))
    return replace(state, lam=lam, mu=mu, z=z)


def assemble(net: Network, states: Sequence[AgentState]) -> tuple[np.ndarray, np.ndarray]:
    """Network-wide (V, u) taken from the owners of every load bus."""
    V, u = np.zeros(net.n_load), np.zeros(net.n_load)
    for state in states:
        own = list(state.problem.own)
        V[own], u[own] = state.V, state.u
    return V, u


def run(
    net: Network,
    r0,
    partition: Partition | Mapping,
    rho: float = RHO_DEFAULT,
    tol: float = 1e-4,
    max_iter: int = 1000,
    init="flat",
    table: IterationTable | None = None,
    workers: int = 1,
    cap_voltages: bool = True,
    local_tol: float = CONIC_TOL,
) -> AdmmReport:
    """Consensus ADMM rounds until residuals and objective settle.

    Stops with Converged once the primal residual max |V - z| and the consensus change max |z_k - z_{k-1}|
    are at most `tol` and the objective moved by at most 1e-4 * max(1, objective) since the previous round;
    MaxIter otherwise. The reported dual residual is rho * max |z_k - z_{k-1}|.

    Args:
        net: Network.
        r0: Tap position to certify.
        partition: Partition or bus -> agent assignment.
        rho: Penalty parameter.
        tol: Residual tolerance.
        max_iter: Largest number of rounds.
        init: "flat" or a warm start {"V": ..., "u": ...}.
        table: Optional display receiving one row per round.
        workers: Threads running the local solves of a round.
        cap_voltages: Include B~ V <= h in the local sets.
        local_tol: Tolerance of every local conic solve.
    """
    assert rho > 0, "Penalty parameter has to be positive!"
    r0 = check_taps(net, r0)
    if not isinstance(partition, Partition):
        partition = build_partition(net, partition)
    states = initial_states(net, r0, partition, init=init, cap_voltages=cap_voltages)
    index = {state.agent: position for position, state in enumerate(states)}
    centralized = build_surrogate(net, r0, cap_voltages=cap_voltages)
    bus = MessageBus()

    objective_history: list[float] = []
    primal_history: list[float] = []
    dual_history: list[float] = []
    z = {j: states[index[partition.owner[j]]].z[j] for j in partition.boundary}
    verdict = MAX_ITER
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def solve_local(state: AgentState) -> AgentState:
        return x_update(state, rho=rho, tol=local_tol)

    try:
        for k in range(1, max_iter + 1):
            # Step 1: local solves, copies and their multipliers go to the owners
            states = list(executor.map(solve_local, states)) if executor else [solve_local(s) for s in states]
            for state in states:
                for c, j in enumerate(state.problem.adjacent):
                    owner = partition.owner[j]
                    bus.post(Message(state.agent, owner, k, net.bus_ids[j], "W", float(state.W[c])))
                    bus.post(Message(state.agent, owner, k, net.bus_ids[j], "mu", float(state.mu[c])))
            bus.sync()

            # Step 2: owners combine the contributions and broadcast z
            z_new = {}
            for state in states:
                received: dict = defaultdict(dict)
                for message in bus.inbox(state.agent):
                    received[(message.bus, message.sender)][message.kind] = message.value
                for a, j in enumerate(state.problem.own):
                    if not state.problem.shared[a]:
                        continue
                    bus_id = net.bus_ids[j]
                    contributions = [
                        (received[(bus_id, sender)]["mu"], received[(bus_id, sender)]["W"])
                        for sender in partition.neighbors[j]
                        if (bus_id, sender) in received
                    ]
                    z_new[j] = z_update(bus_id, state.lam[a], state.V[a], contributions, rho, len(partition.neighbors[j]))
                    for recipient in partition.neighbors[j]:
                        bus.post(Message(state.agent, recipient, k, bus_id, "z", z_new[j]))
            bus.sync()

            # Step 3: dual updates with the own z values and the received ones
            updated = []
            for state in states:
                known = {j: z_new[j] for j in state.problem.own if j in z_new}
                known.update({net.bus_index(m.bus): m.value for m in bus.inbox(state.agent) if m.kind == "z"})
                updated.append(dual_update(state, known, rho))
            states = updated

            gaps = [0.0]
            for state in states:
                gaps.extend(abs(state.V[a] - z_new[j]) for a, j in enumerate(state.problem.own) if state.problem.shared[a])
                gaps.extend(abs(state.W[c] - z_new[j]) for c, j in enumerate(state.problem.adjacent))
            primal = max(gaps)
            dual = rho * max([abs(z_new[j] - z[j]) for j in z_new], default=0.0)
            z = z_new

            V, u = assemble(net, states)
            objective = centralized.objective(np.concatenate([V, u]))
            previous = objective_history[-1] if objective_history else math.inf
            objective_history.append(objective)
            primal_history.append(primal)
            dual_history.append(dual)

            if table is not None:
                table.update_from_dict({"iter": k, "objective": objective, "primal_res": primal, "dual_res": dual})
                table.next_row()

            if primal <= tol and dual <= tol * rho and abs(objective - previous) <= OBJECTIVE_TOL * max(1.0, objective):
                verdict = CONVERGED
                break
    finally:
        if executor is not None:
            executor.shutdown()

    if verdict == CONVERGED:
        logging.info(f"ADMM converged after {len(objective_history)} rounds, objective {objective_history[-1]:.6g}")
    else:
        logging.warning(f"ADMM stopped after {max_iter} rounds without convergence")

    V, u = assemble(net, states)
    return AdmmReport(
        iterations=len(objective_history),
        objective_history=objective_history,
        primal_residual_history=primal_history,
        dual_residual_history=dual_history,
        V=V,
        u=u,
        z={net.bus_ids[j]: value for j, value in z.items()},
        verdict=verdict,
        states=tuple(states),
    )


def relative_error_history(report: AdmmReport, reference: float, zero_tol: float = ZERO_TOL) -> np.ndarray:
    """Objective error per round, relative to `reference` or absolute when the reference is zero."""
    history = np.asarray(report.objective_history)
    if abs(reference) <= zero_tol:
        return np.abs(history - reference)
    return np.abs(history - reference) / abs(reference)
