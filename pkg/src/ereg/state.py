"""Deterministic instance state machines.

``DistrictState`` and ``TopState`` hold every mutable structure of an
instance and apply journaled commands; given the same command sequence they
rebuild byte-identical state (ids, sequence numbers, and digests included),
which is what crash recovery and sync replay lean on.  Network, locking,
and durability live in ``instance``; nothing here does I/O.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from .access import AccessTables, PseudonymScope
from .corpus import ChunkStrategy, CorpusStore
from .errors import (
    DuplicateDocId,
    SpanOutOfBounds,
    UnknownRequest,
    ValidationError,
)
from .events import SyncEvent
from .federation import PROTO_VERSION, InstanceDirectory, TopRegister
from .ingest import GazetteerRule, annotate
from .metamodel import Metamodel
from .query import QueryContext
from .register import EntityRegister, OutcomeKind, RelationshipSpec, Validity


def state_digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, ensure_ascii=False,
                                     default=str).encode("utf-8")).hexdigest()


@dataclass
class PendingMention:
    """A mention whose upsert needs a human: ambiguous candidates or a local
    conflict.  The annotation is stored unbound until resolution."""

    pending_id: int
    doc_id: str
    ann_id: str
    kind: str  # ambiguous | conflict
    payload: dict  # {type, attributes, relationships}
    outcome: dict
    status: str = "open"

    def to_json(self) -> dict:
        return {"pending_id": self.pending_id, "doc_id": self.doc_id,
                "ann_id": self.ann_id, "kind": self.kind, "payload": self.payload,
                "outcome": self.outcome, "status": self.status}


class DistrictState:
    def __init__(self, iid: int, metamodel: Metamodel, tables: AccessTables,
                 gazetteer: list[GazetteerRule] = (), id_start: int = 1,
                 auto_create_on_ambiguous: bool = False,
                 default_chunking: ChunkStrategy | None = None,
                 graph_depth_max: int = 3, graph_node_cap: int = 500):
        self.iid = iid
        self.metamodel = metamodel
        self.tables = tables
        self.gazetteer = list(gazetteer)
        self.default_chunking = default_chunking or ChunkStrategy()
        self.corpus = CorpusStore(instance_id=iid)
        self.register = EntityRegister(metamodel, instance_id=iid,
                                       id_start=id_start,
                                       auto_create_on_ambiguous=auto_create_on_ambiguous)
        self.outbox: list[SyncEvent] = []
        self.acked_seq = 0
        self.global_bindings: dict[int, str] = {}
        self.pending: dict[int, PendingMention] = {}
        self._pending_counter = 0
        self.graph_depth_max = graph_depth_max
        self.graph_node_cap = graph_node_cap

    # -- plumbing ---------------------------------------------------------------

    def context(self) -> QueryContext:
        return QueryContext(metamodel=self.metamodel, corpus=self.corpus,
                            register=self.register, tables=self.tables,
                            graph_depth_max=self.graph_depth_max,
                            graph_node_cap=self.graph_node_cap)

    def _drain_events(self) -> list[SyncEvent]:
        fresh = []
        for kind, payload in self.register.event_log:
            seq = (self.outbox[-1].seq if self.outbox else 0) + 1
            event = SyncEvent(iid=self.iid, seq=seq, kind=kind, payload=payload)
            self.outbox.append(event)
            fresh.append(event)
        self.register.event_log.clear()
        return fresh

    def pending_events(self, limit: int | None = None) -> list[SyncEvent]:
        backlog = [e for e in self.outbox if e.seq > self.acked_seq]
        return backlog[:limit] if limit else backlog

    # -- commands -----------------------------------------------------------------

    def apply_command(self, cmd: dict) -> dict:
        op = cmd["op"]
        handler = getattr(self, f"_cmd_{op}", None)
        if handler is None:
            raise ValidationError(f"unknown district command {op!r}")
        return handler(cmd)

    def _cmd_ingest_document(self, cmd: dict) -> dict:
        doc_payload = cmd["doc"]
        doc_id = doc_payload["doc_id"]
        if doc_id in self.corpus.documents:
            raise DuplicateDocId(f"document already ingested: {doc_id}")
        strategy = ChunkStrategy.from_json(cmd.get("strategy")) \
            if cmd.get("strategy") else self.default_chunking
        doc = self.corpus.ingest_document(
            doc_id, doc_payload.get("metadata", {}),
            [(s["name"], s["content"]) for s in doc_payload.get("sections", [])],
            strategy)

        if cmd.get("use_rules"):
            drafts = [
                {"tag": d.tag, "start": d.start, "end": d.end,
                 "entity": ({"type": d.tag, "attributes": dict(d.attributes)}
                            if d.attributes and d.tag in self.metamodel.entity_types
                            else None)}
                for d in annotate(doc.text, self.gazetteer)]
        else:
            drafts = doc_payload.get("annotations", [])

        report = {"doc_id": doc_id, "annotations": [], "outcomes": [],
                  "pending": []}
        for draft in drafts:
            span = (draft["start"], draft["end"])
            if not (0 <= span[0] < span[1] <= len(doc.text)):
                raise SpanOutOfBounds(f"annotation span {span} outside document")
            ann = self.corpus.add_annotation(doc_id, draft["tag"], span)
            report["annotations"].append(ann.ann_id)
            entity_payload = draft.get("entity")
            if not entity_payload:
                report["outcomes"].append({"ann_id": ann.ann_id,
                                           "kind": "type_only"})
                continue
            specs = [RelationshipSpec.from_json(r)
                     for r in entity_payload.get("relationships", [])]
            outcome = self.register.upsert_from_mention(
                entity_payload["type"], entity_payload["attributes"], specs,
                provenance=(doc_id, ann.ann_id))
            if outcome.committed:
                self.corpus.bind_annotation(ann.ann_id, outcome.local_id)
                report["outcomes"].append({"ann_id": ann.ann_id,
                                           "kind": outcome.kind,
                                           "local_id": outcome.local_id})
            else:
                self._pending_counter += 1
                item = PendingMention(
                    pending_id=self._pending_counter, doc_id=doc_id,
                    ann_id=ann.ann_id,
                    kind="conflict" if outcome.kind == OutcomeKind.CONFLICT
                         else "ambiguous",
                    payload={"type": entity_payload["type"],
                             "attributes": entity_payload["attributes"],
                             "relationships": entity_payload.get(
                                 "relationships", [])},
                    outcome=outcome.to_json())
                self.pending[item.pending_id] = item
                report["pending"].append(item.to_json())
                report["outcomes"].append({"ann_id": ann.ann_id,
                                           "kind": outcome.kind,
                                           "pending_id": item.pending_id})
        fresh = self._drain_events()
        report["events_emitted"] = [e.seq for e in fresh]
        return report

    def _cmd_resolve_pending(self, cmd: dict) -> dict:
        item = self.pending.get(cmd["pending_id"])
        if item is None or item.status != "open":
            raise UnknownRequest(f"no open pending mention {cmd['pending_id']}")
        decision = cmd["decision"]
        if decision["kind"] == "choose_existing":
            outcome = self.register.enlarge_with(
                decision["local_id"], item.payload["attributes"],
                [RelationshipSpec.from_json(r)
                 for r in item.payload.get("relationships", [])],
                provenance=(item.doc_id, item.ann_id))
            if not outcome.committed:
                raise ValidationError(
                    f"chosen entity is incompatible: {outcome.kind}")
            local_id = outcome.local_id
        elif decision["kind"] == "create_new":
            flag = self.register.auto_create_on_ambiguous
            self.register.auto_create_on_ambiguous = True
            try:
                outcome = self.register.upsert_from_mention(
                    item.payload["type"], item.payload["attributes"],
                    [RelationshipSpec.from_json(r)
                     for r in item.payload.get("relationships", [])],
                    provenance=(item.doc_id, item.ann_id))
            finally:
                self.register.auto_create_on_ambiguous = flag
            if not outcome.committed:
                raise ValidationError(
                    f"pending mention still cannot commit: {outcome.kind}")
            local_id = outcome.local_id
        elif decision["kind"] == "skip":
            item.status = "skipped"
            return {"pending_id": item.pending_id, "status": "skipped"}
        else:
            raise ValidationError(f"unknown pending decision {decision['kind']!r}")
        self.corpus.bind_annotation(item.ann_id, local_id)
        item.status = "resolved"
        fresh = self._drain_events()
        return {"pending_id": item.pending_id, "status": "resolved",
                "local_id": local_id, "events_emitted": [e.seq for e in fresh]}

    def _cmd_add_relationship(self, cmd: dict) -> dict:
        inst = self.register.add_relationship(
            cmd["rel_name"], cmd["source_id"], cmd["target_id"],
            Validity.from_json(cmd.get("validity")))
        fresh = self._drain_events()
        return {"stored": inst is not None,
                "events_emitted": [e.seq for e in fresh]}

    def _cmd_merge_entities(self, cmd: dict) -> dict:
        keep = self.register.resolve_id(cmd["keep_id"])
        absorb = self.register.resolve_id(cmd["absorb_id"])
        entity = self.register.merge_entities(keep, absorb)
        if keep != absorb:
            self.corpus.rebind_entity(absorb, entity.local_id)
        fresh = self._drain_events()
        return {"local_id": entity.local_id,
                "events_emitted": [e.seq for e in fresh]}

    def _cmd_split_entity(self, cmd: dict) -> dict:
        side_a, side_b = self.register.split_entity(
            cmd["entity_id"], cmd["mentions_a"], cmd["mentions_b"],
            cmd["attributes_a"], cmd["attributes_b"],
            [tuple(r) for r in cmd.get("relationships_to_b", [])])
        for entity in (side_a, side_b):
            for _doc, ann_id in entity.provenance:
                self.corpus.bind_annotation(ann_id, entity.local_id)
        fresh = self._drain_events()
        return {"local_ids": [side_a.local_id, side_b.local_id],
                "events_emitted": [e.seq for e in fresh]}

    def _cmd_accept_replica(self, cmd: dict) -> dict:
        doc = self.corpus.accept_replica(cmd["payload"],
                                         ChunkStrategy.from_json(
                                             cmd.get("strategy")))
        return {"doc_id": doc.doc_id, "instance_id": doc.instance_id}

    def _cmd_copy_annotation_in(self, cmd: dict) -> dict:
        payload = cmd["payload"]
        if payload["document"]["doc_id"] not in self.corpus.documents:
            self.corpus.accept_replica(payload["document"])
        entity_record = payload.get("entity")
        local_id = None
        if entity_record is not None:
            local_id = self.register.import_entity(entity_record)
        ann_spec = payload["annotation"]
        ann = self.corpus.add_annotation(
            ann_spec["doc_id"], ann_spec["tag"],
            (ann_spec["start"], ann_spec["end"]), entity_ref=local_id,
            entity_exists=self.register.has_entity)
        if local_id is not None:
            self.register.get_entity(local_id).provenance.add(
                (ann.doc_id, ann.ann_id))
        fresh = self._drain_events()
        return {"ann_id": ann.ann_id, "entity_ref": local_id,
                "events_emitted": [e.seq for e in fresh]}

    def _cmd_record_ack(self, cmd: dict) -> dict:
        self.acked_seq = max(self.acked_seq, int(cmd["upto"]))
        for local_id, gid in cmd.get("bindings", {}).items():
            self.global_bindings[int(local_id)] = gid
        return {"acked_seq": self.acked_seq}

    def _cmd_re_chunk(self, cmd: dict) -> dict:
        doc = self.corpus.re_chunk(cmd["doc_id"],
                                   ChunkStrategy.from_json(cmd["strategy"]))
        return {"doc_id": doc.doc_id, "sections": len(doc.sections)}

    # -- export ---------------------------------------------------------------------

    def export(self) -> dict:
        return {
            "iid": self.iid,
            "corpus": self.corpus.to_json(),
            "register": self.register.to_json(),
            "outbox": [e.to_json() for e in self.outbox],
            "acked_seq": self.acked_seq,
            "global_bindings": {str(k): v for k, v in
                                sorted(self.global_bindings.items())},
            "pending": [self.pending[k].to_json() for k in sorted(self.pending)],
        }

    def digest(self) -> str:
        return state_digest(self.export())


class TopState:
    def __init__(self, metamodel: Metamodel, tables: AccessTables,
                 masters=("root",), address: str = "top", clock=None):
        self.metamodel = metamodel
        self.tables = tables
        self.directory = InstanceDirectory(root_address=address)
        kwargs = {"masters": masters}
        if clock is not None:
            kwargs["clock"] = clock
        self.top_register = TopRegister(metamodel, **kwargs)
        self.district_tables: dict[int, AccessTables] = {}
        self.pending_queries: dict[str, dict] = {}
        self._query_counter = 0

    def apply_command(self, cmd: dict) -> dict:
        op = cmd["op"]
        handler = getattr(self, f"_cmd_{op}", None)
        if handler is None:
            raise ValidationError(f"unknown top-level command {op!r}")
        return handler(cmd)

    def _cmd_register_instance(self, cmd: dict) -> dict:
        record = self.directory.register(cmd.get("parent_iid", 0), cmd["address"])
        if cmd.get("permissions"):
            self.district_tables[record.iid] = AccessTables.from_json(
                cmd["permissions"])
        return {"iid": record.iid, "level": record.level,
                "proto_version": PROTO_VERSION}

    def _cmd_set_address(self, cmd: dict) -> dict:
        self.directory.set_address(int(cmd["iid"]), cmd["address"])
        return {"iid": int(cmd["iid"]), "address": cmd["address"]}

    def _cmd_upload_permissions(self, cmd: dict) -> dict:
        iid = int(cmd["iid"])
        self.directory.require(iid)
        self.district_tables[iid] = AccessTables.from_json(cmd["tables"])
        return {"iid": iid}

    def _cmd_ingest_events(self, cmd: dict) -> dict:
        iid = int(cmd["iid"])
        self.directory.require(iid)
        events = [SyncEvent.from_json(e) for e in cmd["events"]]
        return self.top_register.ingest_events(iid, events)

    def _cmd_resolve_request(self, cmd: dict) -> dict:
        return self.top_register.resolve_action_request(
            cmd["request_id"], cmd["decision"], cmd["actor"])

    def _cmd_open_pending_query(self, cmd: dict) -> dict:
        self._query_counter += 1
        token = f"q{self._query_counter}"
        self.pending_queries[token] = {"params": cmd["params"], "status": "pending"}
        return {"token": token}

    def _cmd_close_pending_query(self, cmd: dict) -> dict:
        job = self.pending_queries.get(cmd["token"])
        if job is None:
            raise UnknownRequest(f"no pending query {cmd['token']}")
        job["status"] = "done"
        return {"token": cmd["token"]}

    # -- federated read side -----------------------------------------------------

    def federated_candidates(self, user: str, type_name: str,
                             attributes: dict, scope: PseudonymScope) -> list[dict]:
        """Global candidates, each with per-district fragments rendered under
        that district's permission tables."""
        from .access import Permission, apply_visibility, strongest

        hits = []
        for candidate in self.top_register.find_global_candidates(type_name,
                                                                  attributes):
            entity = self.top_register.require_global(candidate.local_id)
            fragments = []
            perms = []
            for binding in sorted(entity.bindings,
                                  key=lambda b: (b.iid, b.local_id)):
                tables = self.district_tables.get(binding.iid)
                doc_ids = sorted({doc for doc, _ann in binding.provenance})
                if tables is None or not doc_ids:
                    perm = Permission.DENIED
                else:
                    perm = tables.best_permission(user, doc_ids, entity.type_name)
                perms.append(perm)
                if perm is Permission.DENIED:
                    fragments.append({"iid": binding.iid, "denied": True})
                    continue
                view = {
                    "entity": {"ref": entity.global_id, "type": entity.type_name,
                               "attributes": self.metamodel.attributes_to_json(
                                   entity.type_name, entity.attributes)},
                    "relationships": [],
                    "mentions": [{"iid": binding.iid, "doc_id": doc, "ann_id": ann}
                                 for doc, ann in binding.provenance],
                    "documents": [{"iid": binding.iid, "doc_id": d}
                                  for d in doc_ids],
                    "counts": {"mentions": len(binding.provenance),
                               "documents": len(doc_ids)},
                }
                fragments.append({"iid": binding.iid, "local_id": binding.local_id,
                                  "view": apply_visibility(view, perm, scope)})
            best = strongest(perms)
            if best is Permission.DENIED:
                continue
            summary_view = {
                "entity": {"ref": entity.global_id, "type": entity.type_name,
                           "attributes": self.metamodel.attributes_to_json(
                               entity.type_name, entity.attributes)},
                "relationships": [],
                "mentions": [],
                "documents": [],
                "counts": {"bindings": len(entity.bindings)},
            }
            hits.append({
                "global_id": entity.global_id,
                "match": {"attr_score": candidate.attr_score,
                          "rel_score": candidate.rel_score},
                "view": apply_visibility(summary_view, best, scope),
                "fragments": fragments,
            })
        return hits

    # -- export -------------------------------------------------------------------

    def export(self) -> dict:
        data = {
            "directory": self.directory.to_json(),
            "register": self.top_register.to_json(),
            "district_tables": {str(i): t.to_json()
                                for i, t in sorted(self.district_tables.items())},
        }
        for request in data["register"]["requests"]:
            for entry in request.get("history", []):
                entry.pop("timestamp", None)
        return data

    def digest(self) -> str:
        return state_digest(self.export())
