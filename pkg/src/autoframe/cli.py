"""Operator command line: validate configs, inspect blueprints, run the
simulator, deploy stacks and extend running deployments.

Exit codes: 0 success, 1 validation/compile error, 2 runtime failure.
``AUTOFRAME_PORT_BASE`` overrides the default dataflow port base (42000).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
import time
from pathlib import Path

from .blueprint import (
    BlueprintError,
    bind_blueprint,
    blueprint_json,
    build_blueprint,
    to_dot,
)
from .config import ConfigError, parse_config_structure, validate_config
from .deploy import (
    Deployment,
    DeploymentError,
    ProcessBackend,
    control_request,
    load_module_dir,
    plan_deployment,
    supervise,
)
from .hal import build_hal

log = logging.getLogger(__name__)

OK, VALIDATION_ERROR, RUNTIME_ERROR = 0, 1, 2


def _port_base(args) -> int:
    if args.port_base is not None:
        return args.port_base
    return int(os.environ.get("AUTOFRAME_PORT_BASE", "42000"))


def _read_config(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {path}: {exc}") from exc
    return parse_config_structure(text)


def _load_app_manifests(modules_dir: str, exclude=()):
    out = []
    root = Path(modules_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"modules directory {modules_dir} not found")
    for child in sorted(root.iterdir()):
        if child.name in exclude:
            continue
        if (child / "manifest.json").is_file():
            out.append(load_module_dir(child))
    return out


def cmd_validate(args) -> int:
    try:
        cfg = _read_config(args.config)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return RUNTIME_ERROR
    except ConfigError as exc:
        if args.format == "json":
            print(json.dumps({"valid": False, "violations": [
                {"path": exc.path, "rule": exc.rule or "structure",
                 "message": exc.problem}]}))
        else:
            print(f"invalid: {exc}")
        return VALIDATION_ERROR
    violations = validate_config(cfg)
    if args.format == "json":
        print(json.dumps({
            "valid": not violations,
            "model": cfg.model_name,
            "violations": [
                {"path": v.path, "rule": v.rule, "message": v.message}
                for v in violations],
        }, indent=2))
    else:
        if violations:
            for v in violations:
                print(f"{v.path}: {v.message} [{v.rule}]")
        else:
            print(f"ok: {cfg.model_name} ({len(cfg.sensors)} sensors, "
                  f"{len(cfg.actuators)} actuators)")
    return VALIDATION_ERROR if violations else OK


def cmd_graph(args) -> int:
    try:
        cfg = _read_config(args.config)
        violations = validate_config(cfg)
        if violations:
            v = violations[0]
            raise ConfigError(v.message, v.path, rule=v.rule)
        manifests = [spec.manifest() for spec in build_hal(cfg)]
        manifests += [m for m, _ in _load_app_manifests(args.modules,
                                                        args.exclude)]
        bp = build_blueprint(manifests)
        bound = bind_blueprint(bp, port_base=_port_base(args))
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return RUNTIME_ERROR
    except (ConfigError, BlueprintError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_ERROR
    if args.artifact:
        Path(args.artifact).write_text(blueprint_json(bp, bound))
    if args.format == "json":
        print(blueprint_json(bp, bound), end="")
    else:
        print(to_dot(bp), end="")
    return OK


def cmd_sim(args) -> int:
    from .sim.scenario import make_scenario
    from .sim.server import SimServer
    try:
        scenario = make_scenario(args.scenario, host=args.host,
                                 device_port_base=args.device_port_base)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_ERROR
    pace = 1.0 if args.realtime else args.pace
    server = SimServer(scenario, rate_hz=args.rate, pace=pace,
                       record_dir=args.record, display_dir=args.display_dir,
                       debug_port=args.debug_server)
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: server.stop())
    if args.swap_after is not None:
        def swapper():
            time.sleep(args.swap_after)
            server.request_scenario(make_scenario(
                args.swap_to, host=args.host,
                device_port_base=args.device_port_base))
        threading.Thread(target=swapper, daemon=True).start()
    print(f"sim: scenario={scenario.name} rate={args.rate}Hz "
          f"pace={'free-run' if pace is None else pace}", flush=True)
    try:
        server.start()
        server.run(args.duration)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    return OK


def cmd_deploy(args) -> int:
    try:
        cfg_text = Path(args.config).read_text()
        from .config import parse_vehicle_config
        cfg = parse_vehicle_config(cfg_text)
        app_modules = _load_app_manifests(args.modules, args.exclude)
        plan = plan_deployment(cfg, app_modules, args.root, host=args.host,
                               port_base=_port_base(args))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except (ConfigError, BlueprintError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_ERROR

    backend = ProcessBackend(Path(args.root) / "sandboxes")
    try:
        deployment = Deployment(plan, backend).start()
    except (DeploymentError, OSError) as exc:
        print(f"deploy failed: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    print(f"control socket: {deployment.control_path}", flush=True)
    if args.debug_endpoint:
        host, _, port = args.debug_endpoint.rpartition(":")
        deployment.attach_debug_endpoint(host or "127.0.0.1", int(port))

    stop_requested = threading.Event()

    def request_stop(*_):
        stop_requested.set()

    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, request_stop)
    try:
        while not stop_requested.is_set():
            for ev in supervise(deployment, timeout=0.5):
                print(f"[{ev.kind}] {ev.module} {ev.detail}".strip(), flush=True)
                break
    finally:
        deployment.stop()
    return OK


def cmd_add_module(args) -> int:
    try:
        report = control_request(args.deployment,
                                 {"cmd": "add-module",
                                  "path": str(Path(args.module_dir).resolve())})
    except (OSError, ValueError) as exc:
        print(f"error: cannot reach deployment: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    if "error" in report:
        print(f"error: {report['error']}", file=sys.stderr)
        return VALIDATION_ERROR
    if args.format == "json":
        print(json.dumps(report, indent=2))
    else:
        print(f"added: {', '.join(report['added'])}")
        for edge in report["new_edges"]:
            print(f"  {edge['producer']}.{edge['producer_port']} -> "
                  f"{edge['consumer']}.{edge['consumer_port']} [{edge['topic']}]")
        for name, box in report["sandboxes"].items():
            print(f"  sandbox {name}: {box}")
    return OK


def cmd_status(args) -> int:
    try:
        status = control_request(args.deployment, {"cmd": "status"})
    except (OSError, ValueError) as exc:
        print(f"error: cannot reach deployment: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    if args.format == "json":
        print(json.dumps(status, indent=2))
    else:
        print(f"model: {status['model']}")
        for m in status["modules"]:
            extra = ""
            if m.get("timed_out_inputs"):
                extra = f" timed_out={','.join(m['timed_out_inputs'])}"
            print(f"  {m['name']:16s} {m['state']:10s} sandbox={m['sandbox_id']}"
                  f" restarts={m['restarts']}{extra}")
    return OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autoframe",
        description="Centralized vehicle middleware: config-driven HAL, "
                    "dataflow deployment, sandboxed modules.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a vehicle configuration")
    p.add_argument("config")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("graph", help="compile and render the blueprint")
    p.add_argument("config")
    p.add_argument("--modules", required=True, help="directory of module dirs")
    p.add_argument("--format", choices=["dot", "json"], default="dot")
    p.add_argument("--artifact", default="blueprint.json",
                   help="write the bound blueprint JSON here ('' to skip)")
    p.add_argument("--port-base", type=int, default=None)
    p.add_argument("--exclude", action="append", default=[], metavar="NAME",
                   help="skip this module directory (repeatable)")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("sim", help="run the vehicle simulator")
    p.add_argument("--scenario", default="stadium")
    p.add_argument("--rate", type=float, default=20.0)
    p.add_argument("--realtime", action="store_true",
                   help="pace simulation time to the wall clock")
    p.add_argument("--pace", type=float, default=None,
                   help="simulated seconds per wall second (default: free-run)")
    p.add_argument("--duration", type=float, default=None,
                   help="stop after this much simulation time (seconds)")
    p.add_argument("--record", default=None, help="write per-tick state CSV here")
    p.add_argument("--display-dir", default=None,
                   help="write display actuator frames here")
    p.add_argument("--debug-server", type=int, default=None,
                   help="serve configuration pushes on this port")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--device-port-base", type=int, default=46000)
    p.add_argument("--swap-after", type=float, default=None,
                   help="swap scenario after this many wall seconds")
    p.add_argument("--swap-to", default="stadium_twin")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("deploy", help="deploy the full stack against a config")
    p.add_argument("config")
    p.add_argument("--modules", required=True)
    p.add_argument("--root", default="deployment",
                   help="deployment working directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port-base", type=int, default=None)
    p.add_argument("--debug-endpoint", default=None, metavar="HOST:PORT",
                   help="subscribe to simulator config pushes")
    p.add_argument("--exclude", action="append", default=[], metavar="NAME",
                   help="skip this module directory (repeatable)")
    p.set_defaults(func=cmd_deploy)

    p = sub.add_parser("add-module", help="add a module to a running deployment")
    p.add_argument("module_dir")
    p.add_argument("--deployment", required=True,
                   help="deployment root or control socket path")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_add_module)

    p = sub.add_parser("status", help="query a running deployment")
    p.add_argument("--deployment", required=True)
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_status)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("AUTOFRAME_LOG", "WARNING"))
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return OK


if __name__ == "__main__":
    sys.exit(main())
