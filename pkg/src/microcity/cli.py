"""Command-line entry point: run scenarios, serve teleoperation, replay and
analyze sessions, compare backends, fit profiles, generate maps.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .canonical import canonical_json
from .errors import MicrocityError


def data_dir() -> str:
    return os.environ.get("MICROCITY_DATA_DIR", os.getcwd())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="microcity",
        description="Desk-scale urban driving testbed: simulator, teleoperation, analytics.",
    )
    sub = p.add_subparsers(dest="subcommand", required=True)

    run = sub.add_parser("run", help="run a scenario headless and record a session")
    run.add_argument("--scenario", required=True, help="scenario file path")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--out", default=None, help="output directory (default MICROCITY_DATA_DIR)")
    run.add_argument("--baseline", default=None, help="baseline stats file for the metrics summary")

    serve = sub.add_parser("serve", help="serve the teleoperation service")
    serve.add_argument("--scenario", required=True)
    serve.add_argument("--config", default=None,
                       help="JSON service config; command-line flags override it")
    serve.add_argument("--listen", default=None)
    serve.add_argument("--port", type=int, default=None, help="TCP line-protocol port")
    serve.add_argument("--ws-port", type=int, default=None, help="WebSocket port")
    serve.add_argument("--http-port", type=int, default=None, help="static client + map port")
    serve.add_argument("--state-rate", type=float, default=None,
                       help="state messages per second")
    serve.add_argument("--out", default=None, help="session output directory")
    serve.add_argument("--realtime", action=argparse.BooleanOptionalAction, default=True,
                       help="pace the world at wall-clock rate")
    serve.add_argument("--pace", type=float, default=None,
                       help="simulation speed multiple of wall time")
    serve.add_argument("--static-dir", default=None,
                       help="directory of browser client assets to serve")

    rep = sub.add_parser("replay", help="verify a session regenerates bit-exactly")
    rep.add_argument("--session", required=True, help="session file prefix (no extension)")

    an = sub.add_parser("analyze", help="compute style metrics for a session")
    an.add_argument("--session", required=True)
    an.add_argument("--vehicle", default=None)
    an.add_argument("--baseline", default=None)

    cmp_p = sub.add_parser("compare", help="compare two sessions on the same route")
    cmp_p.add_argument("session_a")
    cmp_p.add_argument("session_b")
    cmp_p.add_argument("--baseline", default=None)
    cmp_p.add_argument("--out", default=None)

    fit = sub.add_parser("fit", help="fit a personality profile to a session")
    fit.add_argument("--session", required=True)
    fit.add_argument("--scenario", required=True)
    fit.add_argument("--grid", required=True,
                     help="JSON object of parameter -> candidate list, or @file")
    fit.add_argument("--baseline", default=None)
    fit.add_argument("--out", default=None)

    gm = sub.add_parser("gen-map", help="generate a grid map file")
    gm.add_argument("--rows", type=int, required=True)
    gm.add_argument("--cols", type=int, required=True)
    gm.add_argument("--block-length", type=float, default=1.2)
    gm.add_argument("--lane-width", type=float, default=0.15)
    gm.add_argument("--limit", type=float, default=0.6)
    gm.add_argument("--out", required=True)

    return p


def parse_args(argv):
    return build_parser().parse_args(argv)


def _cmd_run(args) -> int:
    from .sim_core import load_scenario, run_headless, build_scenario_graph
    from .telemetry_analytics import compute_metrics, load_baseline, write_log

    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    log = run_headless(scenario, base_dir=os.path.dirname(os.path.abspath(args.scenario)))
    out_dir = args.out or data_dir()
    prefix = os.path.join(out_dir, log.header["session_id"])
    write_log(log, prefix)
    graph = build_scenario_graph(scenario)
    metrics = compute_metrics(log, graph, baseline=load_baseline(args.baseline))
    print(canonical_json({
        "session": log.header["session_id"],
        "files": prefix,
        "events": len(log.events),
        "metrics": metrics.to_obj(),
    }))
    return 0


def _cmd_replay(args) -> int:
    from .sim_core import verify_replay
    from .telemetry_analytics import read_log

    log = read_log(args.session)
    mismatch = verify_replay(log)
    if mismatch is None:
        print("replay OK: session regenerates bit-exactly")
        return 0
    print(f"replay MISMATCH: {mismatch}", file=sys.stderr)
    return 1


def _cmd_analyze(args) -> int:
    from .sim_core import parse_scenario, build_scenario_graph
    from .telemetry_analytics import compute_metrics, load_baseline, read_log

    log = read_log(args.session)
    graph = build_scenario_graph(parse_scenario(log.header["scenario"]))
    metrics = compute_metrics(log, graph, vehicle_id=args.vehicle,
                              baseline=load_baseline(args.baseline))
    print(canonical_json(metrics.to_obj()))
    return 0


def _cmd_compare(args) -> int:
    from .sim_core import parse_scenario, build_scenario_graph
    from .telemetry_analytics import compare_sessions, load_baseline, read_log

    a = read_log(args.session_a)
    b = read_log(args.session_b)
    graph = build_scenario_graph(parse_scenario(a.header["scenario"]))
    report = compare_sessions(a, b, graph, baseline=load_baseline(args.baseline))
    text = canonical_json(report.to_obj())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    print(text)
    return 0


def _cmd_fit(args) -> int:
    from .sim_core import load_scenario
    from .telemetry_analytics import fit_profile, load_baseline, read_log

    if args.grid.startswith("@"):
        with open(args.grid[1:], "r", encoding="utf-8") as f:
            grid = json.load(f)
    else:
        grid = json.loads(args.grid)
    log = read_log(args.session)
    scenario = load_scenario(args.scenario)
    result = fit_profile(log, scenario, grid, baseline=load_baseline(args.baseline))
    out_obj = {"profile": result["profile"].to_obj(), "loss": result["loss"]}
    text = canonical_json(out_obj)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    print(text)
    return 0


def _cmd_gen_map(args) -> int:
    from .map_model import generate_grid, serialize_map

    spec = generate_grid(args.rows, args.cols, args.block_length, args.lane_width,
                         args.limit)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(serialize_map(spec))
    print(f"wrote {args.out} (digest {spec.digest()})")
    return 0


def _cmd_serve(args) -> int:
    from .server import serve_forever

    config = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            config = json.load(f)

    def pick(flag, key, fallback):
        return flag if flag is not None else config.get(key, fallback)

    serve_forever(
        scenario_path=args.scenario,
        listen=pick(args.listen, "listen", "127.0.0.1"),
        tcp_port=pick(args.port, "port", 8700),
        ws_port=pick(args.ws_port, "ws_port", 8701),
        http_port=pick(args.http_port, "http_port", 8702),
        state_rate=pick(args.state_rate, "state_rate", 20.0),
        out_dir=pick(args.out, "out", data_dir()),
        realtime=args.realtime,
        pace=pick(args.pace, "pace", 1.0),
        static_dir=pick(args.static_dir, "static_dir", None),
        failsafe_timeout_s=config.get("failsafe_timeout_s", 0.5),
        mock_channel=config.get("mock_channel"),
    )
    return 0


def execute(args) -> int:
    handlers = {
        "run": _cmd_run, "serve": _cmd_serve, "replay": _cmd_replay,
        "analyze": _cmd_analyze, "compare": _cmd_compare, "fit": _cmd_fit,
        "gen-map": _cmd_gen_map,
    }
    return handlers[args.subcommand](args)


def main(argv=None) -> int:
    args = parse_args(argv if argv is not None else sys.argv[1:])
    try:
        return execute(args)
    except MicrocityError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 0


if __name__ == "__main__":
    sys.exit(main())
