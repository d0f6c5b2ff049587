"""Instance runtimes: durability, the single-writer lock, parent/child
links, and the role-specific operation surface the HTTP server and the
in-process links both call (the ``api_*`` methods).

Every mutation is a command: validated by a trial run on a deep copy of the
state, appended to the journal, then applied for real.  Restart rebuilds the
state by replaying the journal, so acknowledged work is never lost and
half-written tail records are ignored.
"""

from __future__ import annotations

import copy
import json
import threading
from pathlib import Path

from .access import AccessTables, PseudonymScope
from .config import ROLE_DISTRICT, ROLE_TOP, InstanceConfig
from .corpus import ChunkStrategy
from .demo import demo_access_tables, demo_gazetteer, demo_metamodel
from .errors import (
    ConfigError,
    EregError,
    PermissionDenied,
    RegistrationFailed,
    TargetUnreachable,
    UnknownToken,
)
from .federation import PROTO_VERSION
from .ingest import GazetteerRule
from .journal import Journal
from .metamodel import Metamodel
from .query import (
    navigate_graph,
    query_entities,
    render_document,
    stat_query,
    visible_entity_view,
)
from .state import DistrictState, TopState
from .transport import InProcessRegistry, child_link, parent_link


def _load_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


class BaseInstance:
    role: str

    def __init__(self, config: InstanceConfig,
                 registry: InProcessRegistry | None = None):
        self.config = config.validate()
        self.registry = registry
        self.data_dir = Path(config.data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.lock = threading.RLock()
        self.journal: Journal | None = None
        self.address: str | None = None

    # -- durability -------------------------------------------------------------

    def _open_journal_and_replay(self, state) -> None:
        path = self.data_dir / "journal.jsonl"
        for record in Journal.replay(path):
            state.apply_command(record["cmd"])
        self.journal = Journal(path)

    def execute(self, cmd: dict) -> dict:
        """Trial-apply on a copy (validation), journal, then apply for real."""
        with self.lock:
            trial = copy.deepcopy(self.state)
            trial.apply_command(cmd)
            self.journal.append({"cmd": cmd})
            return self.state.apply_command(cmd)

    def digest(self) -> str:
        with self.lock:
            return self.state.digest()

    def close(self) -> None:
        if self.journal is not None:
            self.journal.close()

    # -- shared api --------------------------------------------------------------

    def api_health(self) -> dict:
        return {"ok": True, "role": self.role, "iid": self.iid,
                "proto_version": PROTO_VERSION}

    def api_metamodel(self) -> dict:
        return self.metamodel.to_json()

    def api_digest(self) -> dict:
        return {"digest": self.digest()}


class TopInstance(BaseInstance):
    role = ROLE_TOP
    iid = 0

    def __init__(self, config: InstanceConfig,
                 registry: InProcessRegistry | None = None,
                 metamodel: Metamodel | None = None,
                 tables: AccessTables | None = None, clock=None):
        super().__init__(config, registry)
        if metamodel is not None:
            self.metamodel = metamodel
        elif config.metamodel_path:
            self.metamodel = Metamodel.from_json(_load_json(config.metamodel_path))
        else:
            self.metamodel = demo_metamodel()
        if tables is not None:
            self.tables = tables
        elif config.permissions_path:
            self.tables = AccessTables.from_json(_load_json(config.permissions_path))
        else:
            self.tables = demo_access_tables(self.metamodel)
        self.state = TopState(self.metamodel, self.tables,
                              masters=tuple(config.masters), clock=clock)
        self._open_journal_and_replay(self.state)

    # -- child plumbing -----------------------------------------------------------

    def _child_link(self, iid: int):
        record = self.state.directory.require(iid)
        return child_link(record.address, self.registry)

    def run_batch_sync(self, iid: int) -> dict:
        """Pull one child's backlog, apply it, acknowledge with bindings."""
        self.state.directory.require(iid)
        link = self._child_link(iid)
        watermark = self.state.top_register.watermarks.get(iid, 0)
        events = link.pull_outbox(after=watermark)
        if not events:
            return {"iid": iid, "applied": 0, "watermark": watermark,
                    "outcomes": []}
        report = self.execute({"op": "ingest_events", "iid": iid,
                               "events": events})
        link.record_ack(report["watermark"], report["bindings"])
        return {"iid": iid, "applied": len(events),
                "watermark": report["watermark"],
                "outcomes": report["outcomes"]}

    def sync_all_children(self) -> list[dict]:
        reports = []
        for record in sorted(self.state.directory.children(0),
                             key=lambda r: r.iid):
            try:
                reports.append(self.run_batch_sync(record.iid))
            except TargetUnreachable as exc:
                reports.append({"iid": record.iid, "error": str(exc)})
        return reports

    def _push_bindings(self, bindings_by_instance: dict) -> None:
        for iid_str, bindings in bindings_by_instance.items():
            try:
                self._child_link(int(iid_str)).record_ack(0, bindings)
            except (TargetUnreachable, EregError):
                pass  # districts catch up on their next sync response

    # -- api ----------------------------------------------------------------------

    def api_register_instance(self, payload: dict) -> dict:
        result = self.execute({"op": "register_instance",
                               "parent_iid": payload.get("parent_iid", 0),
                               "address": payload["address"],
                               "permissions": payload.get("permissions")})
        return result

    def api_set_address(self, iid: int, address: str) -> dict:
        return self.execute({"op": "set_address", "iid": iid, "address": address})

    def api_upload_permissions(self, iid: int, tables: dict) -> dict:
        return self.execute({"op": "upload_permissions", "iid": iid,
                             "tables": tables})

    def api_instances(self) -> dict:
        with self.lock:
            return {"proto_version": PROTO_VERSION,
                    **self.state.directory.to_json()}

    def api_ingest_events(self, iid: int, events: list[dict]) -> dict:
        return self.execute({"op": "ingest_events", "iid": iid, "events": events})

    def api_outbox_ack_passthrough(self):  # top has no outbox
        raise ConfigError("the top-level instance has no sync outbox")

    def api_action_requests(self, status: str | None = None) -> dict:
        with self.lock:
            rows = self.state.top_register.list_requests(status or None)
            return {"requests": [r.to_json() for r in rows]}

    def api_resolve_request(self, request_id: str, decision: dict,
                            actor: str) -> dict:
        result = self.execute({"op": "resolve_request", "request_id": request_id,
                               "decision": decision, "actor": actor})
        self._push_bindings(result.get("bindings_by_instance", {}))
        return result

    def api_watermarks(self) -> dict:
        with self.lock:
            return {"watermarks": {
                str(k): v for k, v in
                sorted(self.state.top_register.watermarks.items())}}

    def api_global_bindings(self, global_id: str) -> dict:
        with self.lock:
            pairs = self.state.top_register.map_global_local(global_id)
            return {"global_id": global_id,
                    "bindings": [{"iid": i, "local_id": l} for i, l in pairs]}

    def api_global_entity(self, global_id: str) -> dict:
        with self.lock:
            entity = self.state.top_register.require_global(global_id)
            return {"global_id": entity.global_id, "type": entity.type_name,
                    "attributes": self.metamodel.attributes_to_json(
                        entity.type_name, entity.attributes),
                    "bindings": [b.to_json() for b in entity.bindings]}

    def api_federated_query(self, params: dict) -> dict:
        user = params.get("as_user", "")
        type_name = params["type"]
        attributes = params.get("attributes", {})
        if isinstance(attributes, str):
            attributes = json.loads(attributes)
        scope = PseudonymScope(params.get("scope") or user)
        if self.config.sync_mode == "on_query" and not params.get("_resync"):
            result = self.execute({"op": "open_pending_query",
                                   "params": {"as_user": user, "type": type_name,
                                              "attributes": attributes,
                                              "scope": scope.scope_key}})
            return {"completeness": "pending_sync", "token": result["token"],
                    "proto_version": PROTO_VERSION}
        with self.lock:
            hits = self.state.federated_candidates(user, type_name, attributes,
                                                   scope)
        return {"completeness": "fresh", "hits": hits,
                "proto_version": PROTO_VERSION}

    def api_poll_pending(self, token: str) -> dict:
        with self.lock:
            job = self.state.pending_queries.get(token)
        if job is None:
            raise UnknownToken(f"no pending query {token}")
        if job["status"] == "pending":
            self.sync_all_children()
            self.execute({"op": "close_pending_query", "token": token})
        params = dict(job["params"])
        params["_resync"] = True
        return self.api_federated_query(params)


class DistrictInstance(BaseInstance):
    role = ROLE_DISTRICT

    def __init__(self, config: InstanceConfig,
                 registry: InProcessRegistry | None = None,
                 address: str | None = None):
        super().__init__(config, registry)
        self.address = address or f"http://{config.listen}"
        self.parent = parent_link(config.parent, registry)
        self.metamodel = self._obtain_metamodel()
        self.tables = self._obtain_tables()
        self.gazetteer = self._obtain_gazetteer()
        self.iid = self._obtain_iid()
        self.state = DistrictState(
            iid=self.iid, metamodel=self.metamodel, tables=self.tables,
            gazetteer=self.gazetteer, id_start=config.id_start,
            auto_create_on_ambiguous=config.auto_create_on_ambiguous,
            default_chunking=ChunkStrategy.from_json(config.default_chunking),
            graph_depth_max=config.graph_depth_max,
            graph_node_cap=config.graph_node_cap)
        self._open_journal_and_replay(self.state)
        self._announce()

    # -- bootstrap ---------------------------------------------------------------

    def _obtain_metamodel(self) -> Metamodel:
        cache = self.data_dir / "metamodel.json"
        try:
            data = self.parent.fetch_metamodel()
            cache.write_text(json.dumps(data, indent=2, sort_keys=True))
            return Metamodel.from_json(data)
        except TargetUnreachable:
            if self.config.metamodel_path:
                return Metamodel.from_json(_load_json(self.config.metamodel_path))
            if cache.exists():
                return Metamodel.from_json(_load_json(cache))
            raise RegistrationFailed(
                "cannot reach the top level and no cached metamodel exists")

    def _obtain_tables(self) -> AccessTables:
        if self.config.permissions_path:
            return AccessTables.from_json(_load_json(self.config.permissions_path))
        return demo_access_tables(self.metamodel)

    def _obtain_gazetteer(self) -> list[GazetteerRule]:
        if self.config.gazetteer_path:
            raw = _load_json(self.config.gazetteer_path)
        else:
            raw = demo_gazetteer()
        return [GazetteerRule.from_json(r) for r in raw]

    def _obtain_iid(self) -> int:
        iid_file = self.data_dir / "iid.json"
        if iid_file.exists():
            return int(json.loads(iid_file.read_text())["iid"])
        try:
            response = self.parent.register({
                "address": self.address, "parent_iid": 0,
                "permissions": self.tables.to_json()})
        except TargetUnreachable as exc:
            raise RegistrationFailed(f"top level unreachable: {exc}") from exc
        tmp = iid_file.with_suffix(".tmp")
        tmp.write_text(json.dumps({"iid": response["iid"]}))
        tmp.rename(iid_file)
        return int(response["iid"])

    def _announce(self) -> None:
        try:
            self.parent.set_address(self.iid, self.address)
            self.parent.upload_permissions(self.iid, self.tables.to_json())
        except (TargetUnreachable, EregError):
            pass  # registration already holds an address; retry on next start

    # -- sync --------------------------------------------------------------------

    def sync_now(self, limit: int | None = None) -> dict:
        with self.lock:
            events = [e.to_json() for e in self.state.pending_events(limit)]
        if not events:
            return {"pushed": 0, "acked_seq": self.state.acked_seq}
        report = self.parent.push_events(self.iid, events)
        self.execute({"op": "record_ack", "upto": report["watermark"],
                      "bindings": report.get("bindings", {})})
        return {"pushed": len(events), "acked_seq": report["watermark"],
                "outcomes": report["outcomes"]}

    def _after_mutation(self, result: dict) -> dict:
        if self.config.sync_mode == "eager" and result.get("events_emitted"):
            try:
                result["sync"] = self.sync_now()
            except TargetUnreachable:
                result["sync"] = {"deferred": "top level unreachable"}
        return result

    # -- api ----------------------------------------------------------------------

    def api_ingest(self, doc_payload: dict, use_rules: bool = False,
                   strategy: dict | None = None) -> dict:
        return self._after_mutation(self.execute({
            "op": "ingest_document", "doc": doc_payload,
            "use_rules": bool(use_rules), "strategy": strategy}))

    def api_resolve_pending(self, pending_id: int, decision: dict) -> dict:
        return self._after_mutation(self.execute({
            "op": "resolve_pending", "pending_id": pending_id,
            "decision": decision}))

    def api_pending_mentions(self, status: str = "open") -> dict:
        with self.lock:
            rows = [p.to_json() for p in self.state.pending.values()
                    if not status or p.status == status]
        return {"pending": rows}

    def api_add_relationship(self, payload: dict) -> dict:
        return self._after_mutation(self.execute({
            "op": "add_relationship", "rel_name": payload["rel_name"],
            "source_id": payload["source_id"], "target_id": payload["target_id"],
            "validity": payload.get("validity")}))

    def api_merge_entities(self, keep_id: int, absorb_id: int) -> dict:
        return self._after_mutation(self.execute({
            "op": "merge_entities", "keep_id": keep_id, "absorb_id": absorb_id}))

    def api_split_entity(self, payload: dict) -> dict:
        return self._after_mutation(self.execute({
            "op": "split_entity", **payload}))

    def api_outbox(self, after: int = 0) -> dict:
        with self.lock:
            events = [e.to_json() for e in self.state.outbox if e.seq > after]
        return {"proto_version": PROTO_VERSION, "iid": self.iid, "events": events}

    def api_record_ack(self, upto: int, bindings: dict) -> dict:
        return self.execute({"op": "record_ack", "upto": upto,
                             "bindings": bindings})

    def api_sync_flush(self, limit: int | None = None) -> dict:
        return self.sync_now(limit)

    def api_sync_status(self) -> dict:
        with self.lock:
            return {"iid": self.iid, "acked_seq": self.state.acked_seq,
                    "outbox_max_seq": self.state.outbox[-1].seq
                    if self.state.outbox else 0,
                    "global_bindings": {
                        str(k): v for k, v in
                        sorted(self.state.global_bindings.items())}}

    def api_replica_export(self, doc_id: str) -> dict:
        with self.lock:
            return self.state.corpus.export_replica(doc_id)

    def api_accept_replica(self, payload: dict, strategy: dict | None = None) -> dict:
        return self.execute({"op": "accept_replica", "payload": payload,
                             "strategy": strategy})

    def api_copy_annotation_in(self, payload: dict) -> dict:
        return self._after_mutation(self.execute({
            "op": "copy_annotation_in", "payload": payload}))

    def copy_annotation_to(self, ann_id: str, target) -> dict:
        """Ship an annotation, its document, and its entity to a peer."""
        with self.lock:
            ann = self.state.corpus.get_annotation(ann_id)
            payload = {
                "document": self.state.corpus.export_replica(ann.doc_id),
                "annotation": {"doc_id": ann.doc_id, "tag": ann.tag,
                               "start": ann.start, "end": ann.end},
                "entity": None,
            }
            if ann.entity_ref is not None:
                entity = self.state.register.get_entity(ann.entity_ref)
                payload["entity"] = {
                    "type_name": entity.type_name,
                    "attributes": self.metamodel.attributes_to_json(
                        entity.type_name, entity.attributes)}
        return target.api_copy_annotation_in(payload)

    # -- queries ------------------------------------------------------------------

    def api_query_entities(self, params: dict) -> dict:
        user = params.get("as_user", "")
        type_name = params["type"]
        attributes = params.get("attributes", {})
        if isinstance(attributes, str):
            attributes = json.loads(attributes)
        scope = PseudonymScope(params.get("scope") or user)
        local_denied = False
        with self.lock:
            try:
                local_hits = query_entities(self.state.context(), user,
                                            type_name, attributes, scope)
            except PermissionDenied:
                local_hits, local_denied = [], True
        federated_hits, completeness, token = [], "fresh", None
        if params.get("federated", True) not in (False, "false", "0"):
            try:
                response = self.parent.federated_query({
                    "as_user": user, "type": type_name,
                    "attributes": attributes, "scope": scope.scope_key})
                completeness = response.get("completeness", "fresh")
                federated_hits = response.get("hits", [])
                token = response.get("token")
            except TargetUnreachable:
                completeness = "top_level_unreachable"
        if local_denied and not federated_hits and completeness == "fresh":
            raise PermissionDenied("permissions too low for every fragment")
        result = {"proto_version": PROTO_VERSION, "local_hits": local_hits,
                  "federated_hits": federated_hits,
                  "completeness": completeness}
        if token:
            result["token"] = token
        return result

    def api_poll_pending(self, token: str) -> dict:
        return self.parent.poll_pending(token)

    def api_entity_detail(self, local_id: int, user: str,
                          scope_key: str | None = None) -> dict:
        scope = PseudonymScope(scope_key or user)
        with self.lock:
            entity = self.state.register.get_entity(local_id)
            view = visible_entity_view(self.state.context(), user, entity, scope)
        global_id = self.state.global_bindings.get(
            self.state.register.resolve_id(local_id))
        if global_id:
            view["global_id"] = global_id
        return view

    def api_entity_graph(self, local_id: int, user: str, depth: int,
                         scope_key: str | None = None) -> dict:
        scope = PseudonymScope(scope_key or user)
        with self.lock:
            return navigate_graph(self.state.context(), user, local_id,
                                  depth, scope)

    def api_stats(self, params: dict) -> dict:
        filters = params.get("filters", params.get("filter", {}))
        if isinstance(filters, str):
            filters = json.loads(filters)
        with self.lock:
            return stat_query(self.state.context(), params.get("as_user", ""),
                              group_by=params["group_by"],
                              type_name=params.get("type"),
                              metadata_filters=filters or None,
                              tag=params.get("tag"))

    def api_document(self, doc_id: str, user: str,
                     scope_key: str | None = None) -> dict:
        scope = PseudonymScope(scope_key or user)
        with self.lock:
            return render_document(self.state.context(), user, doc_id, scope)

    def api_search(self, params: dict) -> dict:
        terms = params.get("text_terms")
        if isinstance(terms, str):
            terms = json.loads(terms)
        filters = params.get("metadata_filters")
        if isinstance(filters, str):
            filters = json.loads(filters)
        with self.lock:
            hits = self.state.corpus.search(
                text_terms=terms, metadata_filters=filters,
                tag=params.get("tag"),
                entity_ref=int(params["entity_ref"])
                if params.get("entity_ref") is not None else None)
        return {"hits": [{"doc_id": h.doc_id, "score": h.score,
                          "spans": [list(s) for s in h.spans]} for h in hits]}

    def api_export_register(self) -> dict:
        with self.lock:
            return self.state.register.to_json()
