#  Copyright (c) 2024 ltc-stability developers

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ltc_stability import admm, dynamics, equilibria, monitor, twobus
from ltc_stability.common import ZERO_TOL, LtcError, NetworkFileError, UnboundedFamily, to_jsonable
from ltc_stability.network import Event, Network, validate_network
from ltc_stability.styles import VERDICT_COLORS
from ltc_stability.table import IterationTable

FILE_VERSION = 1
FILE_KEYS = {"version", "name", "description", "buses", "lines", "r0", "partition", "events"}
DATA_DIR = Path(__file__).parent / "data"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNSTABLE = 2


@dataclass(frozen=True, eq=False)
class NetworkFile:
    network: Network
    name: str = ""
    description: str = ""
    r0: np.ndarray | None = None
    partition: dict | None = None
    events: tuple = ()
    document: dict = field(default_factory=dict)


@dataclass
class RunResult:
    command: str
    inputs: dict
    outputs: dict
    verdict: str
    exit_code: int = EXIT_OK

    def envelope(self) -> dict:
        return {"command": self.command, "inputs": digest(self.inputs), "outputs": to_jsonable(self.outputs), "verdict": self.verdict}


def canonical_json(value: Any) -> str:
    return json.dumps(to_jsonable(value), sort_keys=True, separators=(",", ":"))


def digest(value: Any) -> str:
    return hashlib.sha256(canonical_json(value).encode("utf-8")).hexdigest()


def bundled_networks() -> list[str]:
    return sorted(path.stem for path in DATA_DIR.glob("*.json"))


def parse_network_document(document: dict) -> NetworkFile:
    """Validate a parsed network document; bus ids in `partition` may be given as strings."""
    if not isinstance(document, dict):
        raise NetworkFileError("Network file has to contain a JSON object")
    unknown = sorted(set(document) - FILE_KEYS)
    if unknown:
        raise NetworkFileError(f"Unknown keys in network file: {', '.join(unknown)}")
    if document.get("version") != FILE_VERSION:
        raise NetworkFileError(f"Unsupported network file version {document.get('version')!r}, expected {FILE_VERSION}")

    try:
        net = validate_network(document)
    except TypeError as error:
        raise NetworkFileError(f"Malformed network description: {error}") from None
    r0 = None if document.get("r0") is None else np.asarray(document["r0"], dtype=float)

    partition = document.get("partition")
    if partition is not None:
        by_name = {str(bus): bus for bus in net.bus_ids}
        try:
            partition = {by_name[str(bus)]: agent for bus, agent in partition.items()}
        except KeyError as error:
            raise NetworkFileError(f"Partition references unknown bus {error.args[0]!r}") from None

    try:
        events = tuple(Event(**event) for event in document.get("events", ()))
    except (TypeError, ValueError) as error:
        raise NetworkFileError(f"Malformed event: {error}") from None

    return NetworkFile(
        network=net,
        name=document.get("name", ""),
        description=document.get("description", ""),
        r0=r0,
        partition=partition,
        events=events,
        document=document,
    )


def read_network_file(path: str | os.PathLike) -> NetworkFile:
    """Read a network file, or a bundled network when `path` names one (see `bundled_networks`)."""
    path = Path(path)
    if not path.exists() and str(path) in bundled_networks():
        path = DATA_DIR / f"{path}.json"
    try:
        with open(path) as f:
            document = json.load(f)
    except json.JSONDecodeError as error:
        raise NetworkFileError(f"{path} is not valid JSON: {error}") from None
    return parse_network_document(document)


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Sequence[Sequence]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(to_jsonable(list(row)) for row in rows)


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _taps(args, loaded: NetworkFile) -> np.ndarray:
    n = loaded.network.n_load
    if args.r0 is not None:
        values = np.asarray(args.r0, dtype=float)
    elif loaded.r0 is not None:
        values = loaded.r0
    else:
        values = np.ones(n)
    return np.full(n, values[0]) if values.size == 1 else values


def _load(args) -> tuple[NetworkFile, Network]:
    loaded = read_network_file(args.network)
    net = loaded.network
    if args.load_scale != 1.0:
        net = net.scale_loads(args.load_scale)
    return loaded, net


def _inputs(args, loaded: NetworkFile | None = None) -> dict:
    values = {key: value for key, value in vars(args).items() if key not in ("handler", "log_level", "csv")}
    if loaded is not None:
        values["network"] = loaded.document
    return values


def cmd_twobus(args) -> RunResult:
    p = twobus.TwoBusParams(E=args.E, R=args.R, X=args.X, G_L=args.GL, B_L=args.BL, V_0=args.V0, T=args.T)
    q = twobus.quartic_coefficients(p)
    pair = twobus.tap_equilibria(p)
    outputs: dict = {"coefficients": {"a": q.a, "b": q.b, "c": q.c, "delta": q.delta}}
    if isinstance(pair, twobus.FeasiblePair):
        outputs["equilibria"] = {"r_minus": pair.r_minus, "r_plus": pair.r_plus}
        verdict, code = "Feasible", EXIT_OK
    else:
        outputs["equilibria"] = None
        verdict, code = "Infeasible", EXIT_UNSTABLE

    family = twobus.SusceptanceFamily(
        E=p.E,
        R=p.R,
        X=p.X,
        V_0=p.V_0,
        kappa=p.G_L / abs(p.B_L) if p.B_L else args.kappa,
        sign=-1 if p.B_L < 0 or args.inductive else 1,
        T=p.T,
    )
    try:
        outputs["critical_susceptance"] = twobus.critical_susceptance(family)
    except UnboundedFamily:
        outputs["critical_susceptance"] = None

    if args.curve:
        rows = [("base", *row) for row in twobus.bl_r_curve(family, args.samples)]
        if args.x_scale != 1.0:
            post = replace(family, X=family.X * args.x_scale)
            rows += [("post", *row) for row in twobus.bl_r_curve(post, args.samples)]
            header = ["case", "B_L", "r_minus", "r_plus"]
        else:
            rows = [row[1:] for row in rows]
            header = ["B_L", "r_minus", "r_plus"]
        outputs["curve_rows"] = len(rows)
        if args.csv:
            write_csv(args.csv, header, rows)
        else:
            outputs["curve"] = [dict(zip(header, row)) for row in rows]

    if args.simulate:
        events = [twobus.TwoBusEvent(*event) for event in args.event]
        trajectory = twobus.simulate_twobus(p, args.r0, horizon=args.horizon, events=events, dt=args.dt)
        outputs["simulation"] = dynamics.verdict_record(trajectory.verdict)
        outputs["simulation"]["final_r"] = float(trajectory.final[0])
        if args.csv and not args.curve:
            write_csv(args.csv, *twobus.twobus_rows(trajectory))
        verdict = trajectory.verdict.kind
        code = EXIT_UNSTABLE if verdict == "Collapsed" else code
    return RunResult("twobus", _inputs(args), outputs, verdict, code)


def cmd_simulate(args) -> RunResult:
    loaded, net = _load(args)
    r0 = _taps(args, loaded)
    events = () if args.no_events else loaded.events
    cfg = dynamics.DiscreteLtcConfig(deadband=args.deadband, step=args.step, period=args.period)

    if args.model == "discrete":
        trajectory = dynamics.simulate_discrete(net, r0, cfg=cfg, max_steps=args.max_steps, events=events)
        outputs = {"model": "discrete", **dynamics.verdict_record(trajectory.verdict)}
    elif args.model == "continuous":
        trajectory = dynamics.integrate_continuous(net, r0, horizon=args.horizon, dt=args.dt, events=events)
        outputs = {"model": "continuous", **dynamics.verdict_record(trajectory.verdict)}
    else:
        comparison = dynamics.compare_models(net, r0, cfg=cfg, horizon=args.horizon, dt=args.dt, max_steps=args.max_steps, events=events)
        trajectory = comparison.continuous
        outputs = {
            "model": "both",
            "continuous": dynamics.verdict_record(comparison.continuous.verdict),
            "discrete": dynamics.verdict_record(comparison.discrete.verdict),
            "agree": comparison.agree,
        }

    outputs["final_r"] = trajectory.final
    if args.csv:
        write_csv(args.csv, *dynamics.trajectory_rows(trajectory, net.load_ids()))
    verdict = trajectory.verdict.kind
    return RunResult("simulate", _inputs(args, loaded), outputs, verdict, EXIT_UNSTABLE if verdict == "Collapsed" else EXIT_OK)


def cmd_alpha(args) -> RunResult:
    loaded, net = _load(args)
    result = equilibria.find_alpha(net)
    if isinstance(result, equilibria.Infeasible):
        outputs = {"alpha": None, "stable": False, "reason": result.reason, "iterations": result.iterations}
        return RunResult("alpha", _inputs(args, loaded), outputs, "Infeasible", EXIT_UNSTABLE)

    outputs = {"alpha": result.r_star, **result.report(), "iterations": result.iterations}
    if args.brute_force:
        outputs["equilibria"] = [eq.report() for eq in equilibria.brute_force_equilibria(net, grid_density=args.grid_density)]
    return RunResult("alpha", _inputs(args, loaded), outputs, result.stability, EXIT_OK)


def cmd_roa(args) -> RunResult:
    loaded, net = _load(args)
    n = net.n_load
    if args.direction:
        directions = [_floats(text) for text in args.direction]
    else:
        directions = [list(row) for row in np.eye(n)] + ([[1.0] * n] if n > 1 else [])
    witnesses = monitor.union_roa(net, directions)
    outputs: dict = {"witnesses": [{"c": c, "r": r} for c, r in witnesses]}

    if args.pair:
        upper = args.upper
        header, rows = ["pair", "r_i", "r_j"], []
        for text in args.pair:
            i, j = (net.bus_index(_bus_id(net, x)) for x in text.split(","))
            corners = monitor.staircase_corners([r for _, r in witnesses], i, j, (upper, upper))
            rows.extend([text, x, y] for x, y in corners)
        outputs["corners"] = len(rows)
        if args.csv:
            write_csv(args.csv, header, rows)
        else:
            outputs["projection"] = [dict(zip(header, row)) for row in rows]
    return RunResult("roa", _inputs(args, loaded), outputs, "Computed", EXIT_OK)


def _bus_id(net: Network, text: str):
    by_name = {str(bus): bus for bus in net.bus_ids}
    return by_name.get(text.strip(), text.strip())


def cmd_monitor(args) -> RunResult:
    loaded, net = _load(args)
    certificate = monitor.certify_stability(net, _taps(args, loaded), zero_tol=args.zero_tol, cap_voltages=not args.no_cap)
    code = EXIT_OK if certificate.stable else EXIT_UNSTABLE
    return RunResult("monitor", _inputs(args, loaded), certificate.report(), certificate.status.kind, code)


def cmd_support(args) -> RunResult:
    loaded, net = _load(args)
    plan = monitor.compute_support(net, _taps(args, loaded), backoff=args.backoff, zero_tol=args.zero_tol)
    if args.csv:
        rows = plan.per_bus_rows(net.load_ids())
        write_csv(args.csv, list(rows[0]), [list(row.values()) for row in rows])
    needed = bool(np.any(plan.d > 0))
    verdict = "NeedsSupport" if needed else "Stable"
    return RunResult("support", _inputs(args, loaded), plan.report(), verdict, EXIT_UNSTABLE if needed else EXIT_OK)


def cmd_admm(args) -> RunResult:
    loaded, net = _load(args)
    if args.partition:
        with open(args.partition) as f:
            assignment = json.load(f)
        assignment = assignment.get("partition", assignment)
        by_name = {str(bus): bus for bus in net.bus_ids}
        assignment = {by_name.get(str(bus), bus): agent for bus, agent in assignment.items()}
    elif loaded.partition is not None:
        assignment = loaded.partition
    else:
        raise NetworkFileError("No partition given and the network file has none")

    init: Any = "flat"
    if args.init:
        with open(args.init) as f:
            init = json.load(f)

    table = IterationTable(["iter", "objective", "primal_res", "dual_res"], file=sys.stderr) if args.progress else None
    report = admm.run(
        net,
        _taps(args, loaded),
        assignment,
        rho=args.rho,
        tol=args.tol,
        max_iter=args.max_iter,
        init=init,
        table=table,
        workers=args.workers,
    )
    if table is not None:
        table.close()
    if args.csv:
        write_csv(args.csv, *report.rows())
    code = EXIT_OK if report.converged else EXIT_UNSTABLE
    return RunResult("admm", _inputs(args, loaded), report.report(), report.verdict, code)


def cmd_sweep(args) -> RunResult:
    """Certify and simulate uniform tap positions; a Stable certificate with a Collapsed simulation is a counterexample."""
    loaded, net = _load(args)
    table = IterationTable(["r0", "certificate", "cost", "simulation"], file=sys.stderr) if args.progress else None
    results, counterexamples = [], 0
    for value in np.linspace(args.start, args.stop, args.num):
        r0 = np.full(net.n_load, value)
        certificate = monitor.certify_stability(net, r0, zero_tol=args.zero_tol)
        trajectory = dynamics.integrate_continuous(net, r0, horizon=args.horizon)
        outcome = trajectory.verdict.kind
        counterexamples += int(certificate.stable and outcome == "Collapsed")
        row = {"r0": float(value), "certificate": certificate.status.kind, "cost": certificate.optimal_cost, "simulation": outcome}
        results.append(row)
        if table is not None:
            table.add_row(*row.values(), color=VERDICT_COLORS.get(outcome))
    if table is not None:
        table.close()
    if args.csv:
        write_csv(args.csv, list(results[0]), [list(row.values()) for row in results])
    verdict = "Sound" if counterexamples == 0 else "Counterexample"
    outputs = {"points": results, "counterexamples": counterexamples}
    return RunResult("sweep", _inputs(args, loaded), outputs, verdict, EXIT_OK if counterexamples == 0 else EXIT_UNSTABLE)


def _event(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(":")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("Event has to look like TIME:X_FACTOR:LOAD_FACTOR")
    return parts[0], parts[1], parts[2]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ltc-stability", description="Voltage stability analysis of LTC-controlled loads.")
    parser.add_argument(
        "--log-level", default=os.environ.get("LTC_LOG_LEVEL", "WARNING"), help="Logging level (default: $LTC_LOG_LEVEL or WARNING)"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    network_parent = argparse.ArgumentParser(add_help=False)
    network_parent.add_argument("network", help=f"Network file or a bundled network: {', '.join(bundled_networks())}")
    network_parent.add_argument("--load-scale", type=float, default=1.0, help="Multiply every load susceptance by this factor")
    network_parent.add_argument("--csv", default=None, help="Write tabular output to this CSV file")

    taps_parent = argparse.ArgumentParser(add_help=False)
    taps_parent.add_argument("--r0", type=float, nargs="+", default=None, help="Tap ratios, one value or one per load (default: file r0)")
    taps_parent.add_argument("--zero-tol", type=float, default=ZERO_TOL, help="Largest surrogate cost counted as zero")

    p = subparsers.add_parser("twobus", help="Closed-form two-bus analysis")
    p.add_argument("--E", type=float, default=1.0)
    p.add_argument("--R", type=float, default=0.0)
    p.add_argument("--X", type=float, default=1.0)
    p.add_argument("--GL", type=float, default=0.0)
    p.add_argument("--BL", type=float, default=0.0)
    p.add_argument("--V0", type=float, default=1.0)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--curve", action="store_true", help="Emit the B_L - r equilibrium curve")
    p.add_argument("--kappa", type=float, default=0.0, help="G_L / B_L ratio of the curve family when B_L is 0")
    p.add_argument("--inductive", action="store_true", help="Sweep inductive loads B_L = -s")
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--x-scale", type=float, default=1.0, help="Also emit the curve with the reactance scaled by this factor")
    p.add_argument("--simulate", action="store_true", help="Integrate the tap dynamics")
    p.add_argument("--r0", type=float, default=1.0)
    p.add_argument("--horizon", type=float, default=50.0)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--event", type=_event, action="append", default=[], help="TIME:X_FACTOR:LOAD_FACTOR, repeatable")
    p.add_argument("--csv", default=None)
    p.set_defaults(handler=cmd_twobus)

    p = subparsers.add_parser("simulate", parents=[network_parent], help="Simulate the tap changers")
    p.add_argument("--r0", type=float, nargs="+", default=None)
    p.add_argument("--model", choices=("continuous", "discrete", "both"), default="continuous")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--no-events", action="store_true", help="Ignore the events of the network file")
    p.add_argument("--deadband", type=float, default=dynamics.DISCRETE_DEADBAND)
    p.add_argument("--step", type=float, default=dynamics.DISCRETE_STEP)
    p.add_argument("--period", type=float, default=dynamics.DISCRETE_PERIOD)
    p.add_argument("--max-steps", type=int, default=1000)
    p.set_defaults(handler=cmd_simulate)

    p = subparsers.add_parser("alpha", parents=[network_parent], help="Stable equilibrium by fixed-point iteration")
    p.add_argument("--brute-force", action="store_true", help="Also list every equilibrium by grid search (up to 3 loads)")
    p.add_argument("--grid-density", type=int, default=60)
    p.set_defaults(handler=cmd_alpha)

    p = subparsers.add_parser("roa", parents=[network_parent], help="Inner approximation of the region of attraction")
    p.add_argument("--direction", action="append", default=[], help="Direction weights, e.g. '1,0'; repeatable")
    p.add_argument("--pair", action="append", default=[], help="Bus ids 'i,j' of a 2-D projection; repeatable")
    p.add_argument("--upper", type=float, default=1.5, help="Upper tap limit closing the projected polygon")
    p.set_defaults(handler=cmd_roa)

    p = subparsers.add_parser("monitor", parents=[network_parent, taps_parent], help="Certify that r0 is stable")
    p.add_argument("--no-cap", action="store_true", help="Drop the voltage cap constraint from the surrogate")
    p.set_defaults(handler=cmd_monitor)

    p = subparsers.add_parser("support", parents=[network_parent, taps_parent], help="Susceptance reduction restoring stability")
    p.add_argument("--backoff", type=float, default=0.0, help="Plan for r0 - backoff to stay clear of the region boundary")
    p.set_defaults(handler=cmd_support)

    p = subparsers.add_parser("admm", parents=[network_parent, taps_parent], help="Distributed certification by consensus ADMM")
    p.add_argument("--partition", default=None, help="JSON file mapping bus ids to agents (default: file partition)")
    p.add_argument("--init", default=None, help="JSON warm start {\"V\": [...], \"u\": [...]}")
    p.add_argument("--rho", type=float, default=admm.RHO_DEFAULT)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--progress", action="store_true", help="Show one table row per round on stderr")
    p.set_defaults(handler=cmd_admm)

    p = subparsers.add_parser("sweep", parents=[network_parent], help="Certify and simulate a range of uniform tap positions")
    p.add_argument("--start", type=float, default=0.1)
    p.add_argument("--stop", type=float, default=1.2)
    p.add_argument("--num", type=int, default=12)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--zero-tol", type=float, default=ZERO_TOL)
    p.add_argument("--progress", action="store_true", help="Show one table row per tap position on stderr")
    p.set_defaults(handler=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(message)s")

    try:
        result = args.handler(args)
    except (LtcError, ValueError, OSError) as error:
        logging.error(f"{type(error).__name__}: {error}")
        print(json.dumps({"command": args.command, "error": type(error).__name__, "message": str(error)}))
        return EXIT_ERROR

    print(json.dumps(result.envelope(), indent=2))
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
