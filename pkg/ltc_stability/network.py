#  Copyright (c) 2024 ltc-stability developers

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Hashable, Sequence

import networkx as nx
import numpy as np
from scipy.linalg import lapack, lu_factor, lu_solve

from ltc_stability.common import (
    RCOND_MIN,
    DisconnectedGraph,
    DisconnectedLoadSubgraph,
    NetworkError,
    NonPositiveParameter,
    NonPositiveTap,
    SingularSystem,
    UnknownBus,
    as_vector,
)

EVENT_ACTIONS = ("scale_bs", "scale_line", "remove_line")
BUS_KEYS = {"gen": {"id", "kind", "V_G"}, "load": {"id", "kind", "b_s", "V_0", "T"}}
LINE_KEYS = {"from", "to", "b"}


def _freeze(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


def _check_positive(name: str, values: np.ndarray):
    for index, value in enumerate(values):
        if not value > 0:
            raise NonPositiveParameter(name, index, float(value))


@dataclass(frozen=True, eq=False)
class Network:
    """Lossless network with constant-voltage generators and LTC-fed constant-susceptance loads.

    Load buses have internal indices 0..n_load-1 and generator buses n_load..n_load+n_gen-1.
    Every line is a triple (i, k, b_ik) of internal indices and a positive susceptance in p.u.
    The instance is validated on construction and never modified afterwards; use `replace`-style
    helpers (`scale_loads`, `apply_event`, `with_load_susceptances`) to derive new networks.
    """

    n_load: int
    n_gen: int
    lines: tuple
    gen_voltages: np.ndarray
    load_susceptances: np.ndarray
    setpoints: np.ndarray
    time_constants: np.ndarray
    bus_ids: tuple = field(default=())

    def __post_init__(self):
        n, m = self.n_load, self.n_gen
        if n < 1:
            raise NetworkError("Network needs at least one load bus!")
        if m < 1:
            raise NetworkError("Network needs at least one generator bus!")

        object.__setattr__(self, "gen_voltages", _freeze(as_vector(self.gen_voltages, m, "gen_voltages")))
        object.__setattr__(self, "load_susceptances", _freeze(as_vector(self.load_susceptances, n, "load_susceptances")))
        object.__setattr__(self, "setpoints", _freeze(as_vector(self.setpoints, n, "setpoints")))
        object.__setattr__(self, "time_constants", _freeze(as_vector(self.time_constants, n, "time_constants")))
        object.__setattr__(self, "lines", tuple((int(i), int(k), float(b)) for i, k, b in self.lines))
        if not self.bus_ids:
            object.__setattr__(self, "bus_ids", tuple(range(1, n + m + 1)))
        if len(self.bus_ids) != n + m or len(set(self.bus_ids)) != n + m:
            raise NetworkError(f"Expected {n + m} distinct bus ids, got {self.bus_ids!r}")

        for index, (i, k, b) in enumerate(self.lines):
            if not (0 <= i < n + m and 0 <= k < n + m):
                raise UnknownBus(f"Line {index} connects unknown buses ({i}, {k})")
            if i == k:
                raise NetworkError(f"Line {index} is a self-loop at bus {self.bus_ids[i]!r}")
            if not b > 0:
                raise NonPositiveParameter("lines.b", index, b)
        _check_positive("gen_voltages", self.gen_voltages)
        _check_positive("load_susceptances", self.load_susceptances)
        _check_positive("setpoints", self.setpoints)
        _check_positive("time_constants", self.time_constants)

        graph = self.graph
        if not nx.is_connected(graph):
            raise DisconnectedGraph("Network graph is not connected!")
        if not nx.is_connected(graph.subgraph(range(n))):
            raise DisconnectedLoadSubgraph("Subgraph induced by the load buses is not connected!")

    @property
    def n_bus(self) -> int:
        return self.n_load + self.n_gen

    @cached_property
    def graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n_bus))
        graph.add_edges_from((i, k) for i, k, _ in self.lines)
        return graph

    @cached_property
    def susceptance(self) -> np.ndarray:
        """Full susceptance matrix without the load shunts."""
        matrix = np.zeros((self.n_bus, self.n_bus))
        for i, k, b in self.lines:
            matrix[i, k] -= b
            matrix[k, i] -= b
            matrix[i, i] += b
            matrix[k, k] += b
        matrix.setflags(write=False)
        return matrix

    @cached_property
    def open_circuit(self) -> tuple[np.ndarray, np.ndarray]:
        """Open-circuit voltages and impedances of the load block; independent of the taps."""
        n = self.n_load
        tilde = self.susceptance[:n, :n]
        z_open = np.linalg.inv(tilde)
        e_open = z_open @ self.h
        return _freeze(e_open), _freeze(z_open)

    @cached_property
    def h(self) -> np.ndarray:
        n = self.n_load
        return _freeze(-self.susceptance[:n, n:] @ self.gen_voltages)

    def bus_index(self, bus_id: Hashable) -> int:
        try:
            return self.bus_ids.index(bus_id)
        except ValueError:
            raise UnknownBus(f"Unknown bus id {bus_id!r}") from None

    def load_ids(self) -> tuple:
        return self.bus_ids[: self.n_load]

    def with_load_susceptances(self, load_susceptances) -> Network:
        return replace(self, load_susceptances=as_vector(load_susceptances, self.n_load, "load_susceptances"))

    def scale_loads(self, factor: float) -> Network:
        """Scale every load susceptance by `factor` (stressed-system studies)."""
        return self.with_load_susceptances(np.asarray(self.load_susceptances) * factor)

    def scale_voltages(self, factor: float) -> Network:
        return replace(self, gen_voltages=np.asarray(self.gen_voltages) * factor, setpoints=np.asarray(self.setpoints) * factor)

    def scale_time_constants(self, factor: float) -> Network:
        return replace(self, time_constants=np.asarray(self.time_constants) * factor)

    def apply_event(self, event: Event) -> Network:
        """Network in force after `event`."""
        if event.action == "scale_bs":
            b_s = np.array(self.load_susceptances)
            if event.target is None:
                b_s *= event.factor
            else:
                index = self.bus_index(event.target)
                if index >= self.n_load:
                    raise NetworkError(f"Bus {event.target!r} is not a load bus")
                b_s[index] *= event.factor
            return self.with_load_susceptances(b_s)

        i, k = (self.bus_index(x) for x in event.target)
        matching = [index for index, (a, c, _) in enumerate(self.lines) if {a, c} == {i, k}]
        if not matching:
            raise UnknownBus(f"There is no line between {event.target[0]!r} and {event.target[1]!r}")
        if event.action == "scale_line":
            lines = [(a, c, b * event.factor) if index in matching else (a, c, b) for index, (a, c, b) in enumerate(self.lines)]
        else:
            lines = [line for index, line in enumerate(self.lines) if index not in matching]
        logging.info(f"Applying {event.action} on line {tuple(event.target)!r}")
        return replace(self, lines=tuple(lines))


@dataclass(frozen=True)
class Event:
    """Timed change of the network: scale a load susceptance, scale a line or remove a line.

    `target` is a load bus id (or None for every load) for `scale_bs` and a pair of bus ids for line actions.
    """

    time: float
    action: str
    target: Any = None
    factor: float = 1.0

    def __post_init__(self):
        if self.action not in EVENT_ACTIONS:
            raise ValueError(f"Unknown event action '{self.action}'. Available: {', '.join(EVENT_ACTIONS)}")
        if self.action != "scale_bs":
            if not isinstance(self.target, (list, tuple)) or len(self.target) != 2:
                raise ValueError(f"Line events need a pair of bus ids, got {self.target!r}")
            object.__setattr__(self, "target", tuple(self.target))
        if self.action != "remove_line" and not self.factor > 0:
            raise NonPositiveParameter("events.factor", None, self.factor)


@dataclass(frozen=True, eq=False)
class SusceptanceBlocks:
    B_LL: np.ndarray
    B_tilde_LL: np.ndarray
    B_LG: np.ndarray
    B_GG: np.ndarray
    h: np.ndarray
    E_open: np.ndarray
    Z_open: np.ndarray


def validate_network(raw: dict) -> Network:
    """Build a validated `Network` from the `buses`/`lines` sections of a parsed network document.

    Example:
        >>> net = validate_network({
        ...     "buses": [{"id": "G", "kind": "gen", "V_G": 1.0}, {"id": "L", "kind": "load", "b_s": 0.1875, "V_0": 1.0, "T": 1.0}],
        ...     "lines": [{"from": "G", "to": "L", "b": 1.0}],
        ... })
        >>> net.n_load, net.n_gen
        (1, 1)
    """
    buses = raw.get("buses")
    lines = raw.get("lines")
    if not isinstance(buses, list) or not isinstance(lines, list):
        raise NetworkError("Network description needs lists 'buses' and 'lines'!")

    for bus in buses:
        if not isinstance(bus, dict) or "id" not in bus:
            raise NetworkError(f"Every bus has to be an object with an 'id', got {bus!r}")
        unknown = sorted(set(bus) - BUS_KEYS.get(bus.get("kind"), set(bus)))
        if unknown:
            raise NetworkError(f"Unknown keys in bus {bus['id']!r}: {', '.join(unknown)}")

    loads = [bus for bus in buses if bus.get("kind") == "load"]
    gens = [bus for bus in buses if bus.get("kind") == "gen"]
    others = [bus for bus in buses if bus.get("kind") not in ("load", "gen")]
    if others:
        raise NetworkError(f"Unknown bus kind in {others[0]!r}; expected 'gen' or 'load'")

    ordered = loads + gens
    bus_ids = tuple(bus["id"] for bus in ordered)
    index = {bus_id: position for position, bus_id in enumerate(bus_ids)}
    if len(index) != len(bus_ids):
        raise NetworkError("Bus ids have to be unique!")

    parsed_lines = []
    for position, line in enumerate(lines):
        if isinstance(line, dict):
            unknown = sorted(set(line) - LINE_KEYS)
            if unknown:
                raise NetworkError(f"Unknown keys in line {position}: {', '.join(unknown)}")
            i, k, b = line.get("from"), line.get("to"), line.get("b")
        elif isinstance(line, (list, tuple)) and len(line) == 3:
            i, k, b = line
        else:
            raise NetworkError(f"Line {position} has to be an object or a triple (from, to, b), got {line!r}")
        if i not in index or k not in index:
            raise UnknownBus(f"Line {position} references unknown bus ({i!r}, {k!r})")
        try:
            parsed_lines.append((index[i], index[k], float(b)))
        except (TypeError, ValueError):
            raise NetworkError(f"Line {position} needs a numeric susceptance 'b', got {b!r}") from None

    def column(rows: Sequence[dict], key: str) -> list[float]:
        try:
            return [float(row[key]) for row in rows]
        except KeyError:
            raise NetworkError(f"Every bus needs '{key}'") from None
        except (TypeError, ValueError):
            raise NetworkError(f"Bus values of '{key}' have to be numbers") from None

    return Network(
        n_load=len(loads),
        n_gen=len(gens),
        lines=tuple(parsed_lines),
        gen_voltages=column(gens, "V_G"),
        load_susceptances=column(loads, "b_s"),
        setpoints=column(loads, "V_0"),
        time_constants=column(loads, "T"),
        bus_ids=bus_ids,
    )


def check_taps(net: Network, r) -> np.ndarray:
    r = as_vector(r, net.n_load, "taps")
    if not np.all(r > 0):
        raise NonPositiveTap(f"Tap ratios have to be positive, got {r!r}")
    return r


def assemble_blocks(net: Network, r) -> SusceptanceBlocks:
    r = check_taps(net, r)
    n = net.n_load
    B = net.susceptance
    tilde = np.array(B[:n, :n])
    e_open, z_open = net.open_circuit
    return SusceptanceBlocks(
        B_LL=tilde + np.diag(net.load_susceptances / r**2),
        B_tilde_LL=tilde,
        B_LG=np.array(B[:n, n:]),
        B_GG=np.array(B[n:, n:]),
        h=np.array(net.h),
        E_open=np.array(e_open),
        Z_open=np.array(z_open),
    )


def load_voltages(net: Network, r, rcond_min: float = RCOND_MIN) -> tuple[np.ndarray, np.ndarray]:
    """Primary (network side) and secondary load voltages for tap vector `r`.

    Solves B_LL(r) V_L = h by LU with partial pivoting and refuses systems whose reciprocal
    1-norm condition estimate is below `rcond_min`.
    """
    r = check_taps(net, r)
    n = net.n_load
    B_LL = net.susceptance[:n, :n] + np.diag(net.load_susceptances / r**2)
    lu, piv = lu_factor(B_LL, check_finite=False)
    rcond, _ = lapack.dgecon(lu, np.linalg.norm(B_LL, 1))
    if not rcond >= rcond_min:
        raise SingularSystem(float(rcond))
    V_L = lu_solve((lu, piv), net.h, check_finite=False)
    return V_L, V_L / r


def reactive_power(net: Network, r) -> np.ndarray:
    """Reactive power drawn by every load, V_s^2 b_s."""
    _, V_s = load_voltages(net, r)
    return V_s**2 * net.load_susceptances
