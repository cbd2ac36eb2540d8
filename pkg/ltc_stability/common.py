#  Copyright (c) 2024 ltc-stability developers

from __future__ import annotations

from typing import Union

import numpy as np

NoneType = type(None)
ArrayLike = Union[np.ndarray, list, tuple, float]

# Numerical defaults shared between modules
R_MIN = 1e-3  # collapse floor for tap ratios
RCOND_MIN = 1e-12  # below this a susceptance block is treated as singular
ALPHA_TOL = 1e-10
ALPHA_MAX_ITER = 100_000
ALPHA_FLOOR = 1e-6
CONIC_TOL = 1e-8
CONIC_KKT_TOL = 1e-6
CONIC_MAX_ITER = 200
ZERO_TOL = 1e-10
REGION_TOL = 1e-8
RHO_DEFAULT = 200.0
DISCRETE_DEADBAND = 0.01
DISCRETE_STEP = 0.0125
DISCRETE_PERIOD = 10.0
SIGNIFICANT_DIGITS = 12


class LtcError(Exception):
    """Base class of all errors raised by the package."""


class NetworkError(LtcError, ValueError):
    pass


class DisconnectedGraph(NetworkError):
    pass


class DisconnectedLoadSubgraph(NetworkError):
    pass


class UnknownBus(NetworkError):
    pass


class NonPositiveParameter(NetworkError):
    def __init__(self, field: str, index: int | None, value: float):
        self.field = field
        self.index = index
        self.value = value
        where = field if index is None else f"{field}[{index}]"
        super().__init__(f"Parameter {where} has to be positive, got {value!r}!")


class NonPositiveTap(LtcError, ValueError):
    pass


class SingularSystem(LtcError):
    def __init__(self, rcond: float):
        self.rcond = rcond
        super().__init__(f"Susceptance block is numerically singular (rcond={rcond:.3e})")


class NoFeasiblePoint(LtcError):
    pass


class UnboundedFamily(LtcError):
    pass


class BoxTooLarge(LtcError, ValueError):
    pass


class SolverError(LtcError):
    pass


class LocalSolveFailed(SolverError):
    pass


class SupportInfeasible(LtcError):
    pass


class PartitionError(LtcError, ValueError):
    pass


class DisconnectedAgent(PartitionError):
    pass


class MissingContribution(LtcError):
    pass


class AgentSolveError(LtcError):
    def __init__(self, agent, message: str):
        self.agent = agent
        super().__init__(f"Agent {agent!r}: {message}")


class NetworkFileError(LtcError, ValueError):
    pass


def as_vector(value: ArrayLike, size: int | None = None, name: str = "vector") -> np.ndarray:
    """Convert scalars and sequences to a 1-D float array, broadcasting scalars to `size`."""
    array = np.asarray(value, dtype=float)
    if array.ndim == 0:
        assert size is not None, f"Size of {name} has to be known to broadcast a scalar!"
        array = np.full(size, float(array))
    assert array.ndim == 1, f"{name} has to be one-dimensional, not {array.ndim}-dimensional!"
    if size is not None:
        assert array.shape[0] == size, f"{name} has {array.shape[0]} entries, expected {size}!"
    return array


def format_float(value, digits: int = SIGNIFICANT_DIGITS) -> str:
    return format(float(value), f".{digits}g")


def to_jsonable(value):
    """Recursively convert numpy values into plain python objects rounded to the output precision."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, complex):
        return [to_jsonable(value.real), to_jsonable(value.imag)]
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not np.isfinite(value):
            return None
        return float(format_float(value))
    return value
