"""Command-line client.

Subcommands: run, train, inspect, policies, serve. Each command talks to
a running service when --server is given and otherwise executes against
the local package. Exit codes: 0 ok, 2 scenario error, 3 validation
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import EmptyInput, MalformedCapture, OranError, ScenarioInvalid

EXIT_OK = 0
EXIT_SCENARIO = 2
EXIT_VALIDATION = 3


def _client(server: str):
    import httpx
    return httpx.Client(base_url=server.rstrip("/"), timeout=600.0)


def _print_report_summary(report: dict) -> None:
    print(f"scenario:        {report['scenario']} (seed {report['seed']})")
    print(f"state hash:      {report['state_hash']}")
    print(f"windows scored:  {report['windows']}")
    print(f"violation rate:  {report['violation_rate']:.4f}")
    print(f"mean cost:       {report['mean_cost']:.4f}")
    for slice_id, rate in sorted(report.get("objective_satisfaction", {}).items()):
        print(f"  {slice_id:8s} satisfaction {rate:.4f}")
    metrics = report.get("ric_metrics", {})
    print(f"inserts:         {metrics.get('inserts_received', 0)} "
          f"(accept {metrics.get('insert_replied_accept', 0)}, "
          f"deny {metrics.get('insert_replied_deny', 0)}, "
          f"timeout {metrics.get('insert_timeout', 0)})")
    print(f"conflicts:       {metrics.get('conflict_rejections', 0)}")
    print(f"consistent:      {report.get('consistent')}")
    for kind, path in sorted(report.get("csv_paths", {}).items()):
        print(f"  {kind}: {path}")


def cmd_run(args) -> int:
    if args.server:
        with _client(args.server) as client:
            body = {"seed": args.seed, "tcp": args.tcp,
                    "capture": bool(args.capture)}
            path = Path(args.scenario)
            if path.exists():
                body["scenario_yaml"] = path.read_text(encoding="utf-8")
            else:
                body["scenario"] = args.scenario
            resp = client.post("/runs", json=body)
            if resp.status_code == 422:
                print(f"scenario error: {resp.json()['detail']}", file=sys.stderr)
                return EXIT_SCENARIO
            resp.raise_for_status()
            summary = resp.json()
            detail = client.get(f"/runs/{summary['run_id']}")
            detail.raise_for_status()
            _print_report_summary(detail.json()["report"])
            return EXIT_OK
    from .runner import run_scenario
    from .scenario import load_scenario
    try:
        scenario = load_scenario(args.scenario)
        report = run_scenario(scenario, out_dir=args.out, seed=args.seed,
                              capture_path=args.capture, tcp=args.tcp)
    except ScenarioInvalid as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    _print_report_summary(json.loads(report.to_json()))
    return EXIT_OK


def cmd_train(args) -> int:
    if args.server:
        with _client(args.server) as client:
            resp = client.post("/train", json={
                "train": [args.glob],
                "validate_with": [args.validate] if args.validate else [],
            })
            if resp.status_code == 422:
                print(f"error: {resp.json()['detail']}", file=sys.stderr)
                return EXIT_SCENARIO
            resp.raise_for_status()
            out = resp.json()
            print(out["model_id"])
            if not out["published"]:
                print(f"validation failed: pass rate {out['pass_rate']:.3f}",
                      file=sys.stderr)
                return EXIT_VALIDATION
            return EXIT_OK
    from .mlops import train_pipeline
    from .service.app import resolve_scenarios
    try:
        trains = resolve_scenarios([args.glob])
        vals = resolve_scenarios([args.validate]) if args.validate else []
        model_id, record = train_pipeline(
            trains, vals, catalog_dir=args.catalog, workdir=args.workdir)
    except (ScenarioInvalid, EmptyInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except OranError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    print(model_id)
    if not record.passed:
        print(f"validation failed: pass rate {record.pass_rate:.3f}",
              file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_inspect(args) -> int:
    if args.server:
        with _client(args.server) as client:
            resp = client.post("/inspect", json={"path": args.capture})
            if resp.status_code in (404, 422):
                print(f"error: {resp.json()['detail']}", file=sys.stderr)
                return EXIT_SCENARIO
            resp.raise_for_status()
            sys.stdout.write(resp.json()["text"])
            return EXIT_OK
    from .runner import inspect_capture
    try:
        sys.stdout.write(inspect_capture(args.capture))
    except (MalformedCapture, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    return EXIT_OK


def cmd_policies(args) -> int:
    try:
        op = json.loads(args.op_json)
    except json.JSONDecodeError as exc:
        print(f"error: not valid JSON: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    if args.server:
        with _client(args.server) as client:
            body = {"op": op.get("op"), "policy": op, "policy_id": op.get("policy_id")}
            resp = client.post("/policies", json=body)
            if resp.status_code == 422:
                print(f"error: {resp.json()['detail']}", file=sys.stderr)
                return EXIT_SCENARIO
            resp.raise_for_status()
            print(json.dumps(resp.json()["policies"], indent=2, sort_keys=True))
            return EXIT_OK
    from .nonrt import PolicyStore
    store_path = Path(args.store)
    frames: list[bytes] = []
    store = PolicyStore(frames.append)
    if store_path.exists():
        for policy in json.loads(store_path.read_text()):
            store.policies[policy["policy_id"]] = policy
    try:
        kind = op.get("op")
        if kind == "create":
            store.create(op)
        elif kind == "update":
            store.update(op)
        elif kind == "delete":
            store.delete(op.get("policy_id"))
        elif kind != "query":
            print(f"error: unknown op {kind!r}", file=sys.stderr)
            return EXIT_SCENARIO
    except OranError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    store_path.write_text(json.dumps(store.query(), indent=2, sort_keys=True))
    print(json.dumps(store.query(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(args.data_dir), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oranlab",
        description="Desk-scale O-RAN control plane: run scenarios, train "
                    "slicing models, inspect wire captures, manage policies.")
    parser.add_argument("--server", default=None,
                        help="service base URL; default runs locally")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario end to end")
    run.add_argument("scenario", help="bundled scenario name or YAML path")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--capture", default=None, help="write a wire capture here")
    run.add_argument("--tcp", action="store_true",
                     help="run the RIC in a child process over TCP")
    run.add_argument("--out", default=None, help="artifact directory")
    run.set_defaults(fn=cmd_run)

    train = sub.add_parser("train", help="train, validate, and publish a model")
    train.add_argument("glob", help="training scenario names/paths/globs")
    train.add_argument("--validate", default=None,
                       help="held-out validation scenario glob")
    train.add_argument("--catalog", default="catalog", help="catalog directory")
    train.add_argument("--workdir", default="train-work")
    train.set_defaults(fn=cmd_train)

    inspect = sub.add_parser("inspect", help="render a wire capture")
    inspect.add_argument("capture", help="capture file path")
    inspect.set_defaults(fn=cmd_inspect)

    policies = sub.add_parser("policies", help="apply an A1 policy operation")
    policies.add_argument("op_json", help='e.g. \'{"op":"create","policy_id":...}\'')
    policies.add_argument("--store", default="policies.json",
                          help="local policy store file (local mode)")
    policies.set_defaults(fn=cmd_policies)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8080)
    serve.add_argument("--data-dir", default="oranlab-data")
    serve.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
