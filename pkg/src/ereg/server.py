"""JSON-over-HTTP façade for an instance: a threaded stdlib server routing
to the instance's ``api_*`` methods.  Mutations are serialized by the
instance's own writer lock, so concurrent handlers are safe.
"""

from __future__ import annotations

import json
import re
import threading
import urllib.parse
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .config import ROLE_DISTRICT, InstanceConfig
from .errors import (
    AddressInUse,
    AlreadyResolved,
    DuplicateDocId,
    EregError,
    PermissionDenied,
    TargetUnreachable,
    UnauthorizedActor,
)
from .instance import DistrictInstance, TopInstance

_STATUS_BY_ERROR = [
    ((PermissionDenied, UnauthorizedActor), 403),
    ((AlreadyResolved, DuplicateDocId), 409),
    ((TargetUnreachable,), 502),
]


def _status_for(error: EregError) -> int:
    for classes, status in _STATUS_BY_ERROR:
        if isinstance(error, classes):
            return status
    if error.code.startswith("unknown_") or error.code in ("not_a_key",):
        return 404
    return 400


def _routes_for(instance) -> list[tuple[str, re.Pattern, callable]]:
    routes = [
        ("GET", r"/health", lambda m, q, b: instance.api_health()),
        ("GET", r"/metamodel", lambda m, q, b: instance.api_metamodel()),
        ("GET", r"/state/digest", lambda m, q, b: instance.api_digest()),
        ("GET", r"/query/pending/(?P<token>[^/]+)",
         lambda m, q, b: instance.api_poll_pending(m["token"])),
    ]
    if isinstance(instance, TopInstance):
        routes += [
            ("GET", r"/registry/instances",
             lambda m, q, b: instance.api_instances()),
            ("POST", r"/registry/instances",
             lambda m, q, b: instance.api_register_instance(b)),
            ("POST", r"/registry/instances/(?P<iid>\d+)/address",
             lambda m, q, b: instance.api_set_address(int(m["iid"]),
                                                      b["address"])),
            ("POST", r"/registry/instances/(?P<iid>\d+)/permissions",
             lambda m, q, b: instance.api_upload_permissions(int(m["iid"]),
                                                             b["tables"])),
            ("POST", r"/sync/events",
             lambda m, q, b: instance.api_ingest_events(int(b["iid"]),
                                                        b["events"])),
            ("POST", r"/sync/run/(?P<iid>\d+)",
             lambda m, q, b: instance.run_batch_sync(int(m["iid"]))),
            ("GET", r"/sync/watermarks",
             lambda m, q, b: instance.api_watermarks()),
            ("GET", r"/action-requests",
             lambda m, q, b: instance.api_action_requests(q.get("status"))),
            ("POST", r"/action-requests/(?P<rid>[^/]+)/resolution",
             lambda m, q, b: instance.api_resolve_request(
                 m["rid"], b["decision"], b["actor"])),
            ("GET", r"/entities/global/(?P<gid>[^/]+)/bindings",
             lambda m, q, b: instance.api_global_bindings(m["gid"])),
            ("GET", r"/entities/global/(?P<gid>[^/]+)",
             lambda m, q, b: instance.api_global_entity(m["gid"])),
            ("GET", r"/query/entities",
             lambda m, q, b: instance.api_federated_query(q)),
        ]
    else:
        routes += [
            ("POST", r"/ingest/raw",
             lambda m, q, b: instance.api_ingest(b["doc"], use_rules=True,
                                                 strategy=b.get("strategy"))),
            ("POST", r"/ingest",
             lambda m, q, b: instance.api_ingest(b["doc"] if "doc" in b else b,
                                                 use_rules=False,
                                                 strategy=b.get("strategy"))),
            ("GET", r"/query/entities",
             lambda m, q, b: instance.api_query_entities(q)),
            ("GET", r"/entities/(?P<id>\d+)/graph",
             lambda m, q, b: instance.api_entity_graph(
                 int(m["id"]), q.get("as_user", ""),
                 int(q.get("depth", 1)), q.get("scope"))),
            ("GET", r"/entities/(?P<id>\d+)",
             lambda m, q, b: instance.api_entity_detail(
                 int(m["id"]), q.get("as_user", ""), q.get("scope"))),
            ("GET", r"/stats", lambda m, q, b: instance.api_stats(q)),
            ("GET", r"/documents/(?P<id>[^/]+)/export",
             lambda m, q, b: instance.api_replica_export(m["id"])),
            ("GET", r"/documents/(?P<id>[^/]+)",
             lambda m, q, b: instance.api_document(m["id"],
                                                   q.get("as_user", ""),
                                                   q.get("scope"))),
            ("POST", r"/documents/replica",
             lambda m, q, b: instance.api_accept_replica(
                 b["payload"], b.get("strategy"))),
            ("POST", r"/annotations/copy-in",
             lambda m, q, b: instance.api_copy_annotation_in(b["payload"])),
            ("GET", r"/search", lambda m, q, b: instance.api_search(q)),
            ("GET", r"/sync/outbox",
             lambda m, q, b: instance.api_outbox(int(q.get("after", 0)))),
            ("POST", r"/sync/ack",
             lambda m, q, b: instance.api_record_ack(int(b["upto"]),
                                                     b.get("bindings", {}))),
            ("POST", r"/sync/flush",
             lambda m, q, b: instance.api_sync_flush(
                 int(b["limit"]) if b.get("limit") else None)),
            ("GET", r"/sync/status",
             lambda m, q, b: instance.api_sync_status()),
            ("GET", r"/pending-mentions",
             lambda m, q, b: instance.api_pending_mentions(
                 q.get("status", "open"))),
            ("POST", r"/pending-mentions/(?P<id>\d+)/resolution",
             lambda m, q, b: instance.api_resolve_pending(int(m["id"]),
                                                          b["decision"])),
            ("POST", r"/relationships",
             lambda m, q, b: instance.api_add_relationship(b)),
            ("POST", r"/entities/(?P<id>\d+)/merge",
             lambda m, q, b: instance.api_merge_entities(int(m["id"]),
                                                         int(b["absorb_id"]))),
            ("POST", r"/entities/(?P<id>\d+)/split",
             lambda m, q, b: instance.api_split_entity(b)),
            ("GET", r"/export/register",
             lambda m, q, b: instance.api_export_register()),
        ]
    return [(method, re.compile(f"^{pattern}$"), fn)
            for method, pattern, fn in routes]


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):  # quiet by default
        pass

    def _dispatch(self, method: str) -> None:
        parsed = urllib.parse.urlsplit(self.path)
        query = {k: v[-1] for k, v in
                 urllib.parse.parse_qs(parsed.query).items()}
        body = {}
        length = int(self.headers.get("Content-Length") or 0)
        if length:
            try:
                body = json.loads(self.rfile.read(length).decode("utf-8"))
            except ValueError:
                self._send(400, {"error": {"code": "validation_error",
                                           "message": "body is not JSON"}})
                return
        for route_method, pattern, fn in self.server.routes:
            if route_method != method:
                continue
            match = pattern.match(parsed.path)
            if not match:
                continue
            try:
                result = fn(match.groupdict(), query, body)
            except EregError as exc:
                self._send(_status_for(exc), {"error": exc.to_json()})
                return
            except Exception as exc:  # noqa: BLE001 - wire boundary
                self._send(500, {"error": {"code": "internal",
                                           "message": repr(exc)}})
                return
            self._send_ok(result)
            return
        self._send(404, {"error": {"code": "unknown_route",
                                   "message": f"{method} {parsed.path}"}})

    def _send_ok(self, result) -> None:
        if result is None:
            result = {}
        self._send(200, result)

    def _send(self, status: int, payload: dict) -> None:
        data = json.dumps(payload, ensure_ascii=False, default=str).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def do_OPTIONS(self):  # CORS preflight for the browser frontend
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    do_GET = lambda self: self._dispatch("GET")            # noqa: E731
    do_POST = lambda self: self._dispatch("POST")          # noqa: E731


class InstanceServer:
    """Owns the socket, the instance, and the optional batch-sync timer."""

    def __init__(self, config: InstanceConfig):
        self.config = config.validate()
        host, _, port = config.listen.partition(":")
        try:
            self.httpd = ThreadingHTTPServer((host or "127.0.0.1",
                                              int(port or 0)), _Handler)
        except OSError as exc:
            raise AddressInUse(f"cannot bind {config.listen}: {exc}") from exc
        self.address = f"http://{self.httpd.server_address[0]}:" \
                       f"{self.httpd.server_port}"
        if config.role == ROLE_DISTRICT:
            self.instance = DistrictInstance(config, address=self.address)
        else:
            self.instance = TopInstance(config)
        self.httpd.instance = self.instance
        self.httpd.routes = _routes_for(self.instance)
        self._timer: threading.Timer | None = None
        self._write_serving_file()

    def _write_serving_file(self) -> None:
        info = {"address": self.address, "role": self.instance.role,
                "iid": self.instance.iid}
        path = Path(self.config.data_dir) / "serving.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(info))
        tmp.rename(path)

    def _batch_tick(self) -> None:
        try:
            self.instance.sync_now()
        except EregError:
            pass  # retried next tick
        self._schedule_batch()

    def _schedule_batch(self) -> None:
        self._timer = threading.Timer(self.config.batch_interval_s,
                                      self._batch_tick)
        self._timer.daemon = True
        self._timer.start()

    def serve_forever(self) -> None:
        if self.config.role == ROLE_DISTRICT and self.config.sync_mode == "batch":
            self._schedule_batch()
        try:
            self.httpd.serve_forever(poll_interval=0.05)
        finally:
            self.shutdown()

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(
            target=lambda: self.httpd.serve_forever(poll_interval=0.05),
            daemon=True)
        thread.start()
        if self.config.role == ROLE_DISTRICT and self.config.sync_mode == "batch":
            self._schedule_batch()
        return thread

    def shutdown(self) -> None:
        if self._timer is not None:
            self._timer.cancel()
        self.httpd.shutdown()
        self.httpd.server_close()
        self.instance.close()


def serve(config: InstanceConfig) -> None:
    InstanceServer(config).serve_forever()
