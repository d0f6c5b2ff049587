"""Top-level federation: instance hierarchy and id issuance, the global
entity register with per-district local-id bindings, and the queue of human
conflict-resolution requests.

The global register is derived deterministically from the full set of
received sync events (ordered by instance id, then per-instance sequence)
plus the recorded human decisions.  Because the derived state is a pure
function of that set, eager and batch delivery converge to identical global
registers, redelivery changes nothing, and crash recovery is a replay.
Stable identifiers make decisions survive re-derivation: a global entity
created by event (iid, seq) is always ``g-<iid>-<seq>`` and the request
raised by that event is always ``ar-<iid>-<seq>``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from . import events as ev
from .errors import (
    AlreadyResolved,
    CardinalityViolation,
    ContradictionViolation,
    InvalidDecision,
    MissingValidity,
    OutOfOrderDelivery,
    ReverseDirectionViolation,
    UnauthorizedActor,
    UnknownGlobalEntity,
    UnknownInstance,
    UnknownParent,
    UnknownRequest,
    ValidationError,
)
from .events import SyncEvent
from .metamodel import Direction, Metamodel
from .register import (
    CompatReport,
    RelationshipInstance,
    Validity,
    check_edge,
    compare_attribute_maps,
    rank_candidates,
)
from .values import ValueType, hash_token

PROTO_VERSION = "1"

EDGE_VIOLATIONS = (CardinalityViolation, ContradictionViolation,
                   ReverseDirectionViolation, MissingValidity, ValidationError)


# -- instance hierarchy ----------------------------------------------------------


@dataclass
class InstanceRecord:
    iid: int
    address: str
    level: int  # depth below the root (root = 0)
    parent_iid: int | None

    def to_json(self) -> dict:
        return {"iid": self.iid, "address": self.address, "level": self.level,
                "parent_iid": self.parent_iid}


class InstanceDirectory:
    """Tree of registered instances; ids are issued only here, at the root."""

    def __init__(self, root_address: str = "top"):
        self.records: dict[int, InstanceRecord] = {
            0: InstanceRecord(iid=0, address=root_address, level=0, parent_iid=None)}
        self._next_iid = 1

    def register(self, parent_iid: int, address: str) -> InstanceRecord:
        parent = self.records.get(parent_iid)
        if parent is None:
            raise UnknownParent(f"no instance {parent_iid}")
        record = InstanceRecord(iid=self._next_iid, address=address,
                                level=parent.level + 1, parent_iid=parent_iid)
        self.records[record.iid] = record
        self._next_iid += 1
        return record

    def require(self, iid: int) -> InstanceRecord:
        record = self.records.get(iid)
        if record is None:
            raise UnknownInstance(f"no instance {iid}")
        return record

    def children(self, iid: int) -> list[InstanceRecord]:
        return [r for r in self.records.values() if r.parent_iid == iid]

    def set_address(self, iid: int, address: str) -> None:
        self.require(iid).address = address

    def to_json(self) -> dict:
        return {"instances": [self.records[i].to_json()
                              for i in sorted(self.records)],
                "next_iid": self._next_iid}


# -- global entities and requests -------------------------------------------------


@dataclass
class Binding:
    iid: int
    local_id: int
    identifier_keys: list[list[str]] = field(default_factory=list)
    provenance: list[list[str]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"iid": self.iid, "local_id": self.local_id,
                "identifier_keys": self.identifier_keys,
                "provenance": self.provenance}


@dataclass
class GlobalEntity:
    global_id: str
    type_name: str
    attributes: dict  # canonical values
    bindings: list[Binding] = field(default_factory=list)

    def binding_pairs(self) -> list[tuple[int, int]]:
        return [(b.iid, b.local_id) for b in self.bindings]

    def doc_refs(self) -> list[tuple[int, str]]:
        refs = []
        for b in self.bindings:
            for doc_id, _ann in b.provenance:
                if (b.iid, doc_id) not in refs:
                    refs.append((b.iid, doc_id))
        return refs


@dataclass
class ActionRequest:
    request_id: str
    ids: list[str]
    data: dict
    iid: int
    message: dict
    status: str = "open"  # open | in_progress | resolved | rejected
    history: list[dict] = field(default_factory=list)
    dependents: list[list[int]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"request_id": self.request_id, "ids": list(self.ids),
                "data": self.data, "iid": self.iid, "message": self.message,
                "status": self.status, "history": list(self.history),
                "dependents": [list(d) for d in self.dependents]}


class SyncOutcome:
    MERGED_INTO = "merged_into"
    CREATED_GLOBAL = "created_global"
    ACTION_REQUIRED = "action_required"
    APPLIED = "applied"
    PARKED = "parked"
    SKIPPED_DUPLICATE = "skipped_duplicate"


def _gid(iid: int, seq: int, suffix: str = "") -> str:
    return f"g-{iid}-{seq}{suffix}"


def _gid_sort_key(gid: str) -> tuple:
    parts = gid.split("-")
    try:
        return (int(parts[1]), int(parts[2]), gid)
    except (IndexError, ValueError):
        return (1 << 31, 0, gid)


class TopRegister:
    """Event-sourced global register plus the action-request queue."""

    def __init__(self, metamodel: Metamodel, masters=("root",), clock=time.time):
        self.metamodel = metamodel
        self.masters = set(masters)
        self.clock = clock
        # durable inputs
        self.events: dict[tuple[int, int], SyncEvent] = {}
        self.decisions: dict[str, dict] = {}
        self.request_meta: dict[str, dict] = {}  # persistent history per request id
        self.watermarks: dict[int, int] = {}
        # derived state (rebuilt by _derive)
        self.globals: dict[str, GlobalEntity] = {}
        self.bindings: dict[tuple[int, int], str] = {}
        self.edges: list[RelationshipInstance] = []
        self.requests: dict[str, ActionRequest] = {}
        self.outcomes: dict[tuple[int, int], dict] = {}
        self._key_index: dict[tuple, str] = {}
        self._edges_by_gid: dict[str, list[RelationshipInstance]] = {}
        self._open_by_entity: dict[tuple[int, int], str] = {}

    # -- event intake ------------------------------------------------------------

    def ingest_events(self, iid: int, incoming: list[SyncEvent]) -> dict:
        """Apply a batch in per-instance seq order; duplicates below the
        watermark are skipped, gaps are rejected so the sender retries."""
        watermark = self.watermarks.get(iid, 0)
        fresh: list[SyncEvent] = []
        skipped: list[int] = []
        for event in sorted(incoming, key=lambda e: e.seq):
            if event.iid != iid:
                raise ValidationError(f"event iid {event.iid} in batch for {iid}")
            if event.seq <= watermark:
                known = self.events.get((iid, event.seq))
                if known is not None and known.payload != event.payload:
                    raise ValidationError(
                        f"redelivery of ({iid},{event.seq}) with different payload")
                skipped.append(event.seq)
                continue
            if event.seq != watermark + 1:
                raise OutOfOrderDelivery(
                    f"expected seq {watermark + 1} from instance {iid}, "
                    f"got {event.seq}")
            self.events[(iid, event.seq)] = event
            watermark = event.seq
            fresh.append(event)
        if fresh:
            self.watermarks[iid] = watermark
            self._derive()
        report_outcomes = [
            {"seq": e.seq,
             "outcome": self.outcomes.get((iid, e.seq),
                                          {"kind": SyncOutcome.SKIPPED_DUPLICATE})}
            for e in sorted(incoming, key=lambda e: e.seq)]
        for seq in skipped:
            for row in report_outcomes:
                if row["seq"] == seq:
                    row["outcome"] = {
                        **self.outcomes.get((iid, seq),
                                            {"kind": SyncOutcome.SKIPPED_DUPLICATE}),
                        "redelivery": True}
        return {"proto_version": PROTO_VERSION, "iid": iid,
                "watermark": self.watermarks.get(iid, 0),
                "outcomes": report_outcomes,
                "bindings": self.bindings_for(iid)}

    def bindings_for(self, iid: int) -> dict[str, str]:
        return {str(local): gid for (i, local), gid in sorted(self.bindings.items())
                if i == iid}

    # -- derivation --------------------------------------------------------------

    def _derive(self) -> None:
        self.globals = {}
        self.bindings = {}
        self.edges = []
        self.requests = {}
        self.outcomes = {}
        self._key_index = {}
        self._edges_by_gid = {}
        self._open_by_entity = {}
        for key in sorted(self.events):
            self._apply_event(self.events[key])

    # -- helpers -----------------------------------------------------------------

    def _now(self) -> float:
        return self.clock()

    def _history(self, rid: str) -> list[dict]:
        return self.request_meta.setdefault(rid, {"history": [], "seen": []})["history"]

    def _note_history(self, rid: str, actor: str, action: str, status: str,
                      dedup_key: str | None = None) -> None:
        meta = self.request_meta.setdefault(rid, {"history": [], "seen": []})
        if dedup_key is not None:
            if dedup_key in meta["seen"]:
                return
            meta["seen"].append(dedup_key)
        meta["history"].append({"timestamp": self._now(), "actor": actor,
                                "action": action, "status": status})

    def _key_signatures(self, type_name: str, attributes: dict):
        etype = self.metamodel.require_type(type_name)
        for key in self.metamodel.complete_keys(type_name, attributes):
            names = tuple(sorted(key))
            yield (type_name, names,
                   tuple(hash_token(etype.features[n].value_type, attributes[n])
                         for n in names))

    def _index_global(self, entity: GlobalEntity) -> None:
        for sig in self._key_signatures(entity.type_name, entity.attributes):
            self._key_index[sig] = entity.global_id

    def _drop_global_keys(self, entity: GlobalEntity) -> None:
        for sig in self._key_signatures(entity.type_name, entity.attributes):
            if self._key_index.get(sig) == entity.global_id:
                del self._key_index[sig]

    def _candidates(self, type_name: str, attributes: dict):
        records = ((g.global_id, g.attributes, set())
                   for g in sorted(self.globals.values(),
                                   key=lambda g: _gid_sort_key(g.global_id))
                   if g.type_name == type_name)
        return [c for c in rank_candidates(self.metamodel, type_name, attributes,
                                           set(), records)
                if c.attr_score or c.rel_score]

    def _snapshot_attrs(self, snap: dict) -> dict:
        return self.metamodel.attributes_from_json(snap["type_name"],
                                                   snap["attributes"])

    def _union_into(self, entity: GlobalEntity, attrs: dict,
                    report: CompatReport) -> None:
        etype = self.metamodel.require_type(entity.type_name)
        self._drop_global_keys(entity)
        for name in report.complementary_incoming:
            entity.attributes[name] = attrs[name]
        for name in report.coincident:
            if etype.features[name].value_type is ValueType.TEXT_LIST:
                seen = {v.casefold() for v in entity.attributes[name]}
                entity.attributes[name] += [v for v in attrs[name]
                                            if v.casefold() not in seen]
        self._index_global(entity)

    def _attach_binding(self, entity: GlobalEntity, iid: int, snap: dict) -> None:
        local_id = snap["local_id"]
        for b in entity.bindings:
            if (b.iid, b.local_id) == (iid, local_id):
                b.identifier_keys = snap.get("complete_keys", b.identifier_keys)
                merged = {tuple(p) for p in b.provenance} | \
                    {tuple(p) for p in snap.get("provenance", [])}
                b.provenance = sorted([list(p) for p in merged])
                break
        else:
            entity.bindings.append(Binding(
                iid=iid, local_id=local_id,
                identifier_keys=snap.get("complete_keys", []),
                provenance=snap.get("provenance", [])))
        self.bindings[(iid, local_id)] = entity.global_id

    def _detach_binding(self, iid: int, local_id: int) -> None:
        gid = self.bindings.pop((iid, local_id), None)
        if gid and gid in self.globals:
            entity = self.globals[gid]
            entity.bindings = [b for b in entity.bindings
                               if (b.iid, b.local_id) != (iid, local_id)]
            if not entity.bindings:
                self._remove_global(entity)

    def _remove_global(self, entity: GlobalEntity) -> None:
        self._drop_global_keys(entity)
        self.globals.pop(entity.global_id, None)
        self.edges = [e for e in self.edges if not e.touches(entity.global_id)]
        self._edges_by_gid.pop(entity.global_id, None)
        for rels in self._edges_by_gid.values():
            rels[:] = [r for r in rels if not r.touches(entity.global_id)]

    def _store_edge(self, inst: RelationshipInstance) -> None:
        self.edges.append(inst)
        self._edges_by_gid.setdefault(inst.source_id, []).append(inst)
        if inst.target_id != inst.source_id:
            self._edges_by_gid.setdefault(inst.target_id, []).append(inst)

    def _rewire_edges(self, old_gid: str, new_gid: str) -> None:
        moved = [e for e in self.edges if e.touches(old_gid)]
        self.edges = [e for e in self.edges if not e.touches(old_gid)]
        self._edges_by_gid.pop(old_gid, None)
        for rels in self._edges_by_gid.values():
            rels[:] = [r for r in rels if not r.touches(old_gid)]
        for e in moved:
            src = new_gid if e.source_id == old_gid else e.source_id
            tgt = new_gid if e.target_id == old_gid else e.target_id
            if src == tgt:
                continue  # merged endpoints collapse the edge
            symmetric = self.metamodel.require_relationship(
                e.rel_name).direction is Direction.BIDIRECTIONAL
            duplicate = any(
                r.rel_name == e.rel_name and r.validity == e.validity
                and r.same_pair(src, tgt, symmetric) for r in self.edges)
            if not duplicate:
                self._store_edge(RelationshipInstance(e.rel_name, src, tgt,
                                                      e.validity))

    # -- requests ------------------------------------------------------------------

    def _raise_request(self, event: SyncEvent, ids: list[str], message: dict,
                       entity_key: tuple[int, int] | None = None,
                       snap: dict | None = None, suffix: str = "") -> dict:
        rid = f"ar-{event.iid}-{event.seq}{suffix}"
        if rid in self.decisions:
            return self._apply_decision(rid, event, ids, message, entity_key,
                                        snap, suffix)
        if entity_key is not None:
            open_rid = self._open_by_entity.get(entity_key)
            if open_rid is not None and open_rid != rid:
                request = self.requests[open_rid]
                request.data = event.payload
                request.ids = sorted(set(request.ids) | set(ids),
                                     key=_gid_sort_key)
                request.message = message
                request.dependents.append([event.iid, event.seq])
                self._note_history(open_rid, "system", "superseded-data", "open",
                                   dedup_key=f"fold-{event.iid}-{event.seq}")
                return {"kind": SyncOutcome.ACTION_REQUIRED, "request_id": open_rid}
        request = ActionRequest(
            request_id=rid, ids=sorted(set(ids), key=_gid_sort_key),
            data=event.payload, iid=event.iid, message=message,
            status="open", history=[], dependents=[])
        self._note_history(rid, "system", "created", "open", dedup_key="created")
        request.history = self._history(rid)
        self.requests[rid] = request
        if entity_key is not None:
            self._open_by_entity[entity_key] = rid
        return {"kind": SyncOutcome.ACTION_REQUIRED, "request_id": rid}

    def _apply_decision(self, rid: str, event: SyncEvent, ids: list[str],
                        message: dict, entity_key: tuple[int, int] | None,
                        snap: dict | None, suffix: str = "") -> dict:
        decision = self.decisions[rid]
        kind = decision["kind"]
        resolved = None
        if kind == "merge" and snap is not None:
            target = self.globals.get(decision["global_id"])
            if target is not None and target.type_name == snap["type_name"]:
                attrs = self._snapshot_attrs(snap)
                report = compare_attribute_maps(self.metamodel, target.type_name,
                                                target.attributes, attrs)
                self._union_into(target, attrs, report)  # global values win clashes
                self._attach_binding(target, event.iid, snap)
                resolved = {"kind": SyncOutcome.MERGED_INTO,
                            "global_id": target.global_id,
                            "request_id": rid, "decision": "merge"}
        elif kind == "create_new" and snap is not None:
            resolved = self._create_global(event, snap, suffix=suffix)
            resolved.update({"request_id": rid, "decision": "create_new"})
        elif kind == "fix_attributes" and snap is not None:
            fixed = dict(snap["attributes"])
            for name, value in decision.get("edits", {}).items():
                if value is None:
                    fixed.pop(name, None)
                else:
                    fixed[name] = value
            patched = {**snap, "attributes": fixed}
            resolved = self._resolve_unbound(event, patched, suffix=suffix,
                                             honor_decision=False)
            if resolved["kind"] == SyncOutcome.ACTION_REQUIRED:
                resolved = None
            else:
                resolved = {**resolved, "request_id": rid,
                            "decision": "fix_attributes"}
        elif kind == "split":
            donor = self.globals.get(decision["global_id"])
            if donor is not None:
                moved = [tuple(b) for b in decision.get("move_bindings", [])]
                new_entity = GlobalEntity(
                    global_id=f"{_gid(event.iid, event.seq)}-split",
                    type_name=donor.type_name,
                    attributes=self.metamodel.attributes_from_json(
                        donor.type_name, decision.get("attributes_for_new", {})))
                self.globals[new_entity.global_id] = new_entity
                for b in list(donor.bindings):
                    if (b.iid, b.local_id) in moved:
                        donor.bindings.remove(b)
                        new_entity.bindings.append(b)
                        self.bindings[(b.iid, b.local_id)] = new_entity.global_id
                self._index_global(new_entity)
                if snap is not None:
                    resolved = self._resolve_unbound(event, snap, suffix=suffix,
                                                     honor_decision=False)
                    if resolved["kind"] == SyncOutcome.ACTION_REQUIRED:
                        resolved = None
                    else:
                        resolved = {**resolved, "request_id": rid,
                                    "decision": "split"}
                else:
                    resolved = {"kind": SyncOutcome.APPLIED, "request_id": rid,
                                "decision": "split"}

        if resolved is None:
            # the decision no longer applies to the current state: reopen
            self._note_history(rid, decision.get("actor", "unknown"),
                               f"decision-{kind}-stale", "open",
                               dedup_key=f"stale-{kind}")
            request = ActionRequest(
                request_id=rid, ids=sorted(set(ids), key=_gid_sort_key),
                data=event.payload, iid=event.iid, message=message,
                status="open", history=self._history(rid))
            self.requests[rid] = request
            if entity_key is not None:
                self._open_by_entity[entity_key] = rid
            return {"kind": SyncOutcome.ACTION_REQUIRED, "request_id": rid}

        request = ActionRequest(
            request_id=rid, ids=sorted(set(ids) | {resolved.get("global_id", "")},
                                       key=_gid_sort_key),
            data=event.payload, iid=event.iid, message=message,
            status="resolved", history=self._history(rid))
        request.ids = [i for i in request.ids if i]
        self.requests[rid] = request
        if entity_key is not None:
            self._open_by_entity.pop(entity_key, None)
        return resolved

    # -- entity resolution -----------------------------------------------------------

    def _create_global(self, event: SyncEvent, snap: dict, suffix: str = "") -> dict:
        gid = _gid(event.iid, event.seq, suffix)
        entity = GlobalEntity(global_id=gid, type_name=snap["type_name"],
                              attributes=self._snapshot_attrs(snap))
        self.globals[gid] = entity
        self._attach_binding(entity, event.iid, snap)
        self._index_global(entity)
        return {"kind": SyncOutcome.CREATED_GLOBAL, "global_id": gid}

    def _resolve_unbound(self, event: SyncEvent, snap: dict, suffix: str = "",
                         honor_decision: bool = True) -> dict:
        attrs = self._snapshot_attrs(snap)
        type_name = snap["type_name"]
        entity_key = (event.iid, snap["local_id"])

        matched: list[str] = []
        for sig in self._key_signatures(type_name, attrs):
            gid = self._key_index.get(sig)
            if gid is not None and gid not in matched:
                matched.append(gid)

        def request(ids, message):
            if not honor_decision:
                return {"kind": SyncOutcome.ACTION_REQUIRED, "request_id": None}
            return self._raise_request(event, ids, message, entity_key,
                                       snap=snap, suffix=suffix)

        if len(matched) > 1:
            return request(matched, {
                "kind": "multiple_identities",
                "notes": [f"identifiers match distinct global entities {matched}"]})
        if len(matched) == 1:
            entity = self.globals[matched[0]]
            report = compare_attribute_maps(self.metamodel, type_name,
                                            entity.attributes, attrs)
            if not report.compatible:
                return request([entity.global_id], {
                    "kind": "contradictory_attributes",
                    "report": report.to_json()})
            self._union_into(entity, attrs, report)
            self._attach_binding(entity, event.iid, snap)
            return {"kind": SyncOutcome.MERGED_INTO, "global_id": entity.global_id}

        candidates = self._candidates(type_name, attrs)
        if candidates:
            return request([c.local_id for c in candidates], {
                "kind": "partial_identifier" if not snap.get("complete_keys")
                        else "compatible_candidates",
                "candidates": [c.to_json() for c in candidates]})
        return self._create_global(event, snap, suffix)

    def _apply_entity_snapshot(self, event: SyncEvent, snap: dict) -> dict:
        entity_key = (event.iid, snap["local_id"])
        gid = self.bindings.get(entity_key)
        if gid is not None:
            entity = self.globals[gid]
            attrs = self._snapshot_attrs(snap)
            if entity.type_name != snap["type_name"]:
                return self._raise_request(event, [gid], {
                    "kind": "type_mismatch",
                    "notes": [f"bound to {entity.type_name}"]}, entity_key,
                    snap=snap)
            report = compare_attribute_maps(self.metamodel, entity.type_name,
                                            entity.attributes, attrs)
            if not report.compatible:
                return self._raise_request(event, [gid], {
                    "kind": "contradictory_attributes",
                    "report": report.to_json()}, entity_key, snap=snap)
            self._union_into(entity, attrs, report)
            self._attach_binding(entity, event.iid, snap)
            return {"kind": SyncOutcome.MERGED_INTO, "global_id": gid}
        return self._resolve_unbound(event, snap)

    # -- edge / merge / split events ---------------------------------------------

    def _apply_edge_event(self, event: SyncEvent) -> dict:
        payload = event.payload
        src_key = (event.iid, payload["source_id"])
        tgt_key = (event.iid, payload["target_id"])
        src_gid = self.bindings.get(src_key)
        tgt_gid = self.bindings.get(tgt_key)
        if src_gid is None or tgt_gid is None:
            # the unbound endpoint has an open request; ride along with it
            for key in (src_key, tgt_key):
                if key in self._open_by_entity:
                    rid = self._open_by_entity[key]
                    request = self.requests[rid]
                    if [event.iid, event.seq] not in request.dependents:
                        request.dependents.append([event.iid, event.seq])
                    return {"kind": SyncOutcome.PARKED, "request_id": rid}
            return self._raise_request(event, [], {
                "kind": "unbound_endpoint",
                "notes": [f"no binding for {src_key} or {tgt_key}"]})
        if src_gid == tgt_gid:
            return self._raise_request(event, [src_gid], {
                "kind": "self_relationship",
                "notes": ["endpoints merged into the same global entity"]})
        validity = Validity.from_json(payload.get("validity"))
        neighborhood = self._edges_by_gid.get(src_gid, []) + \
            self._edges_by_gid.get(tgt_gid, [])
        try:
            inst = check_edge(self.metamodel, payload["rel_name"], src_gid, tgt_gid,
                              validity, neighborhood, [])
        except EDGE_VIOLATIONS as exc:
            return self._raise_request(event, [src_gid, tgt_gid], {
                "kind": "relationship_violation", "notes": [str(exc)]})
        if inst is not None:
            self._store_edge(inst)
        return {"kind": SyncOutcome.APPLIED, "edge": payload["rel_name"],
                "source": src_gid, "target": tgt_gid}

    def _obsolete_request(self, entity_key: tuple[int, int], reason: str) -> None:
        """A later event removed the local entity a pending request was
        about; the request is closed as rejected, which still leaves the
        triggering event represented by exactly one request."""
        rid = self._open_by_entity.pop(entity_key, None)
        if rid is not None and rid in self.requests:
            self._note_history(rid, "system", reason, "rejected",
                               dedup_key=f"{reason}-{entity_key}")
            self.requests[rid].status = "rejected"

    def _apply_merge_event(self, event: SyncEvent) -> dict:
        payload = event.payload
        snap = payload["snapshot"]
        keep_key = (event.iid, payload["keep_local_id"])
        absorb_key = (event.iid, payload["absorb_local_id"])
        self._obsolete_request(absorb_key, "superseded-by-merge")
        keep_gid = self.bindings.get(keep_key)
        absorb_gid = self.bindings.get(absorb_key)

        if absorb_gid is not None and keep_gid is not None and keep_gid != absorb_gid:
            # the district says two globals describe one real entity
            winner_gid, loser_gid = sorted((keep_gid, absorb_gid),
                                           key=_gid_sort_key)
            winner, loser = self.globals[winner_gid], self.globals[loser_gid]
            report = compare_attribute_maps(self.metamodel, winner.type_name,
                                            winner.attributes, loser.attributes)
            if winner.type_name != loser.type_name or not report.compatible:
                return self._raise_request(event, [winner_gid, loser_gid], {
                    "kind": "global_merge_conflict",
                    "report": report.to_json()}, keep_key, snap=snap)
            self._union_into(winner, loser.attributes, report)
            for b in loser.bindings:
                winner.bindings.append(b)
                self.bindings[(b.iid, b.local_id)] = winner_gid
            self._rewire_edges(loser_gid, winner_gid)
            self._drop_global_keys(loser)
            self.globals.pop(loser_gid, None)
            keep_gid = winner_gid
        elif absorb_gid is not None and keep_gid is None:
            keep_gid = absorb_gid
            self.bindings[keep_key] = keep_gid

        # the absorbed local id is retired in the district
        retired_gid = self.bindings.pop(absorb_key, None)
        if retired_gid is not None and retired_gid in self.globals:
            entity = self.globals[retired_gid]
            entity.bindings = [b for b in entity.bindings
                               if (b.iid, b.local_id) != absorb_key]

        patched = {**snap, "local_id": payload["keep_local_id"]}
        if keep_gid is None:
            return self._resolve_unbound(event, patched)
        entity = self.globals[keep_gid]
        attrs = self._snapshot_attrs(patched)
        report = compare_attribute_maps(self.metamodel, entity.type_name,
                                        entity.attributes, attrs)
        if not report.compatible:
            return self._raise_request(event, [keep_gid], {
                "kind": "contradictory_attributes",
                "report": report.to_json()}, keep_key, snap=patched)
        self._union_into(entity, attrs, report)
        self._attach_binding(entity, event.iid, patched)
        return {"kind": SyncOutcome.MERGED_INTO, "global_id": keep_gid}

    def _apply_split_event(self, event: SyncEvent) -> dict:
        payload = event.payload
        self._obsolete_request((event.iid, payload["old_local_id"]),
                               "superseded-by-split")
        self._detach_binding(event.iid, payload["old_local_id"])
        results = []
        for suffix, snap in zip(("-a", "-b"), payload["parts"]):
            results.append(self._resolve_unbound(event, snap, suffix=suffix))
        return {"kind": SyncOutcome.APPLIED, "parts": results}

    def _apply_event(self, event: SyncEvent) -> None:
        if event.kind in (ev.ENTITY_CREATED, ev.ENTITY_ENLARGED):
            outcome = self._apply_entity_snapshot(event, event.payload)
        elif event.kind == ev.RELATIONSHIP_ADDED:
            outcome = self._apply_edge_event(event)
        elif event.kind == ev.MERGE_PERFORMED:
            outcome = self._apply_merge_event(event)
        elif event.kind == ev.SPLIT_PERFORMED:
            outcome = self._apply_split_event(event)
        else:
            raise ValidationError(f"unknown event kind {event.kind}")
        self.outcomes[(event.iid, event.seq)] = outcome

    # -- queries -------------------------------------------------------------------

    def require_global(self, global_id: str) -> GlobalEntity:
        entity = self.globals.get(global_id)
        if entity is None:
            raise UnknownGlobalEntity(f"no global entity {global_id}")
        return entity

    def map_global_local(self, global_id: str) -> list[tuple[int, int]]:
        return self.require_global(global_id).binding_pairs()

    def list_requests(self, status: str | None = None) -> list[ActionRequest]:
        rows = sorted(self.requests.values(), key=lambda r: r.request_id)
        if status:
            rows = [r for r in rows if r.status == status]
        return rows

    def find_global_candidates(self, type_name: str, attributes: dict):
        canon = self.metamodel.validate_attributes(type_name, attributes)
        matched: list[str] = []
        for sig in self._key_signatures(type_name, canon):
            gid = self._key_index.get(sig)
            if gid is not None and gid not in matched:
                matched.append(gid)
        records = ((g.global_id, g.attributes, set())
                   for g in sorted(self.globals.values(),
                                   key=lambda g: _gid_sort_key(g.global_id))
                   if g.type_name == type_name)
        ranked = rank_candidates(self.metamodel, type_name, canon, set(), records)
        return [c for c in ranked
                if c.attr_score or c.rel_score or c.local_id in matched]

    # -- decisions -------------------------------------------------------------------

    def resolve_action_request(self, request_id: str, decision: dict,
                               actor: str) -> dict:
        if actor not in self.masters:
            raise UnauthorizedActor(f"{actor} is not a top-level master user")
        request = self.requests.get(request_id)
        if request is None:
            raise UnknownRequest(f"no action request {request_id}")
        if request.status == "resolved":
            raise AlreadyResolved(f"{request_id} was already resolved")
        kind = decision.get("kind")
        if kind not in ("merge", "create_new", "split", "fix_attributes"):
            raise InvalidDecision(f"unknown decision kind {kind!r}")
        if kind == "merge" and decision.get("global_id") not in self.globals:
            raise InvalidDecision("merge decision needs an existing global_id")
        if kind == "split" and decision.get("global_id") not in self.globals:
            raise InvalidDecision("split decision needs an existing global_id")

        self.decisions[request_id] = {**decision, "actor": actor}
        self._note_history(request_id, actor, f"decision-{kind}", "resolved",
                           dedup_key=f"decision-{kind}-{actor}")
        self._derive()
        refreshed = self.requests.get(request_id)
        return {"request_id": request_id,
                "status": refreshed.status if refreshed else "resolved",
                "bindings_by_instance": {
                    str(iid): self.bindings_for(iid)
                    for iid in sorted({i for i, _ in self.bindings})}}

    # -- export ---------------------------------------------------------------------

    def to_json(self) -> dict:
        globals_json = []
        for gid in sorted(self.globals, key=_gid_sort_key):
            g = self.globals[gid]
            globals_json.append({
                "global_id": g.global_id, "type_name": g.type_name,
                "attributes": self.metamodel.attributes_to_json(
                    g.type_name, g.attributes),
                "bindings": [b.to_json() for b in sorted(
                    g.bindings, key=lambda b: (b.iid, b.local_id))]})
        return {
            "globals": globals_json,
            "edges": sorted((e.to_json() for e in self.edges),
                            key=lambda e: (e["rel_name"], str(e["source_id"]),
                                           str(e["target_id"]), str(e["validity"]))),
            "requests": [self.requests[rid].to_json()
                         for rid in sorted(self.requests)],
            "watermarks": {str(k): v for k, v in sorted(self.watermarks.items())},
        }

    def normalized_state(self) -> dict:
        """Register + request multiset with volatile fields (request ids,
        timestamps, histories) stripped: the convergence comparison target."""
        data = self.to_json()
        for request in data["requests"]:
            request.pop("request_id", None)
            request.pop("history", None)
            request.pop("dependents", None)
        data["requests"].sort(key=lambda r: str(sorted(r.items())))
        return data
