"""Command line entry point: run, replay, report, stub-server."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .agents import BACKEND_KINDS, BackendSpec
from .errors import MirrorBenchError
from .harness import RunConfig, replay, run_experiment
from .report import DELIMITERS, report
from .world import Condition

EXIT_INFRA = 3


def _param(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def _conditions(values):
    out = []
    for v in values:
        out += [c for c in v.split(",") if c]
    return tuple(Condition.parse(c).value for c in out)


def _backend(args) -> BackendSpec:
    params = dict(args.backend_param or [])
    if args.backend == "remote":
        for key in ("base_url", "model", "temperature", "max_retries", "timeout", "max_in_flight"):
            value = getattr(args, key)
            if value is not None:
                params["model_id" if key == "model" else key] = value
    return BackendSpec(args.backend, params)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mirrorbench", description="Mirror self-recognition benchmark harness.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run episodes and write traces plus aggregates")
    run.add_argument("--condition", action="append", default=None,
                     help="E1..E5; repeat or comma-separate (default E1)")
    run.add_argument("--backend", choices=BACKEND_KINDS, default="perfect_oracle")
    run.add_argument("--backend-param", action="append", type=_param, metavar="KEY=VALUE",
                     help="backend-specific parameter, value parsed as JSON when possible")
    run.add_argument("--base-url")
    run.add_argument("--model")
    run.add_argument("--temperature", type=float)
    run.add_argument("--max-retries", type=int)
    run.add_argument("--timeout", type=float)
    run.add_argument("--max-in-flight", type=int)
    run.add_argument("--base-seed", type=int, default=0)
    run.add_argument("--seeds", type=int, default=3)
    run.add_argument("--runs", type=int, default=7)
    run.add_argument("--max-steps", type=int, default=100)
    run.add_argument("--out", type=Path, default=Path("results"))
    run.add_argument("--save-frames", action="store_true")
    run.add_argument("--parallel", type=int, default=1)

    rep = sub.add_parser("replay", help="recompute aggregates from a trace file")
    rep.add_argument("--in", dest="inputs", type=Path, nargs="+", required=True)

    tab = sub.add_parser("report", help="build result tables from results directories")
    tab.add_argument("--in", dest="inputs", type=Path, nargs="+", required=True)
    tab.add_argument("--format", choices=tuple(DELIMITERS), default="csv")
    tab.add_argument("--out", type=Path, default=Path("report"))
    tab.add_argument("--precision", type=int, default=2)

    stub = sub.add_parser("stub-server", help="serve a local chat-completions stub")
    stub.add_argument("--port", type=int, default=8765)
    stub.add_argument("--fail-first", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = RunConfig(
                conditions=_conditions(args.condition or ["E1"]),
                backend=_backend(args),
                base_seed=args.base_seed,
                seeds_per_condition=args.seeds,
                runs_per_seed=args.runs,
                max_steps=args.max_steps,
                output_dir=args.out,
                save_frames=args.save_frames,
                parallel=args.parallel,
            )
            result = run_experiment(cfg)
            for cond, path in result.aggregates.items():
                print(f"{cond}: {result.traces[cond]} {path}")
            if result.infrastructure_failures:
                print(f"{result.infrastructure_failures} episode(s) excluded after backend failures", file=sys.stderr)
                return EXIT_INFRA
            return 0
        if args.command == "replay":
            out = {str(p): replay(p).to_dict() for p in args.inputs}
            print(json.dumps(out, indent=2))
            return 0
        if args.command == "report":
            for path in report(args.inputs, args.out, args.format, args.precision):
                print(path)
            return 0
        if args.command == "stub-server":
            from .agents.stub import StubChatServer

            server = StubChatServer(port=args.port, fail_first=args.fail_first).start()
            print(f"serving on {server.url}", flush=True)
            try:
                while True:
                    time.sleep(3600)
            except KeyboardInterrupt:
                server.stop()
            return 0
    except MirrorBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
