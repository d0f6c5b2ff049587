"""Command-line interface.  Output is line-delimited JSON; exit codes are
0 on success, 1 on assertion/step failure, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import demo
from .config import ROLE_DISTRICT, ROLE_TOP, InstanceConfig
from .errors import ConfigError, EregError, StepFailed
from .scenario import normalize_transcript, scenario_run
from .transport import HttpClient


def _emit(payload) -> None:
    print(json.dumps(payload, ensure_ascii=False, default=str))


def _parse_attrs(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"attribute must be name=value, got {pair!r}")
        name, value = pair.split("=", 1)
        out[name] = value
    return out


def cmd_init(args) -> int:
    data_dir = Path(args.data_dir)
    overrides = {}
    if args.role == ROLE_TOP and not args.metamodel:
        path = data_dir / "metamodel.json"
        data_dir.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(demo.demo_metamodel().to_json(), indent=2,
                                   sort_keys=True))
        overrides["metamodel_path"] = str(path)
    config = InstanceConfig(
        role=args.role, data_dir=str(data_dir), listen=args.listen,
        parent=args.parent, sync_mode=args.sync_mode, id_start=args.id_start,
        metamodel_path=args.metamodel or overrides.get("metamodel_path"),
        permissions_path=args.permissions, gazetteer_path=args.gazetteer,
        batch_interval_s=args.batch_interval)
    config.validate()
    path = data_dir / "config.json"
    config.dump(path)
    _emit({"config": str(path), "role": config.role})
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    if args.config:
        config = InstanceConfig.load(args.config)
    else:
        config = InstanceConfig.load(Path(args.data_dir) / "config.json")
    serve(config)
    return 0


def cmd_ingest(args) -> int:
    client = HttpClient(args.instance)
    path = "/ingest/raw" if args.raw else "/ingest"
    status = 0
    for file_name in args.files:
        doc = json.loads(Path(file_name).read_text())
        result = client.post(path, {"doc": doc})
        _emit({"file": file_name, **result})
    return status


def cmd_query(args) -> int:
    client = HttpClient(args.instance)
    result = client.get("/query/entities", {
        "type": args.type, "attributes": _parse_attrs(args.attr),
        "as_user": args.as_user,
        "federated": "false" if args.no_federated else "true"})
    _emit(result)
    return 0


def cmd_requests_list(args) -> int:
    client = HttpClient(args.instance)
    for row in client.get("/action-requests",
                          {"status": args.status})["requests"]:
        _emit(row)
    return 0


def cmd_requests_resolve(args) -> int:
    client = HttpClient(args.instance)
    decision = {"kind": args.decision}
    if args.global_id:
        decision["global_id"] = args.global_id
    if args.edits:
        decision["edits"] = json.loads(args.edits)
    result = client.post(f"/action-requests/{args.id}/resolution",
                         {"decision": decision, "actor": args.actor})
    _emit(result)
    return 0


def cmd_scenario_run(args) -> int:
    transcript = scenario_run(args.file, workdir=args.workdir)
    for entry in (normalize_transcript(transcript) if args.normalize
                  else transcript):
        _emit(entry)
    return 0


def cmd_export(args) -> int:
    client = HttpClient(args.instance)
    register = client.get("/export/register")
    for entity in register["entities"]:
        _emit({"record": "entity", **entity})
    for rel in register["relationships"]:
        _emit({"record": "relationship", **rel})
    return 0


def cmd_sync(args) -> int:
    client = HttpClient(args.instance)
    _emit(client.post("/sync/flush", {"limit": args.limit}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ereg",
        description="Federated entity register over court document corpora")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write an instance config")
    p.add_argument("--role", choices=[ROLE_DISTRICT, ROLE_TOP], required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--listen", default="127.0.0.1:0")
    p.add_argument("--parent")
    p.add_argument("--sync-mode", default="eager",
                   choices=["eager", "batch", "on_query"])
    p.add_argument("--batch-interval", type=float, default=30.0)
    p.add_argument("--id-start", type=int, default=1)
    p.add_argument("--metamodel")
    p.add_argument("--permissions")
    p.add_argument("--gazetteer")
    p.set_defaults(fn=cmd_init)

    p = sub.add_parser("serve", help="run an instance")
    p.add_argument("--data-dir")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("ingest", help="ingest pre-annotated documents")
    p.add_argument("--instance", required=True)
    p.add_argument("--raw", action="store_true",
                   help="run the gazetteer annotator instead")
    p.add_argument("files", nargs="+")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("query", help="query entities")
    p.add_argument("--instance", required=True)
    p.add_argument("--type", required=True)
    p.add_argument("--attr", action="append", metavar="NAME=VALUE")
    p.add_argument("--as-user", default="")
    p.add_argument("--no-federated", action="store_true")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("requests", help="action-request queue")
    requests_sub = p.add_subparsers(dest="requests_command", required=True)
    pl = requests_sub.add_parser("list")
    pl.add_argument("--instance", required=True)
    pl.add_argument("--status", default="open")
    pl.set_defaults(fn=cmd_requests_list)
    pr = requests_sub.add_parser("resolve")
    pr.add_argument("--instance", required=True)
    pr.add_argument("--id", required=True)
    pr.add_argument("--decision", required=True,
                    choices=["merge", "create_new", "split", "fix_attributes"])
    pr.add_argument("--global-id")
    pr.add_argument("--edits", help="JSON object of attribute edits")
    pr.add_argument("--actor", required=True)
    pr.set_defaults(fn=cmd_requests_resolve)

    p = sub.add_parser("scenario", help="scenario harness")
    scenario_sub = p.add_subparsers(dest="scenario_command", required=True)
    ps = scenario_sub.add_parser("run")
    ps.add_argument("file")
    ps.add_argument("--workdir")
    ps.add_argument("--normalize", action="store_true",
                    help="normalize volatile fields in the transcript")
    ps.set_defaults(fn=cmd_scenario_run)

    p = sub.add_parser("export", help="dump a district register as JSON lines")
    p.add_argument("--instance", required=True)
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("sync", help="flush a district's sync backlog")
    p.add_argument("--instance", required=True)
    p.add_argument("--limit", type=int)
    p.set_defaults(fn=cmd_sync)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        _emit({"error": exc.to_json()})
        return 2
    except StepFailed as exc:
        _emit({"error": exc.to_json()})
        return 1
    except EregError as exc:
        _emit({"error": exc.to_json()})
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
