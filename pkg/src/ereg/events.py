"""Synchronization events flowing from district registers to the top level.

Every event carries its originating instance id and a per-instance strictly
increasing sequence number, so redelivery is detectable and replay is safe.
"""

from __future__ import annotations

from dataclasses import dataclass

ENTITY_CREATED = "entity_created"
ENTITY_ENLARGED = "entity_enlarged"
RELATIONSHIP_ADDED = "relationship_added"
MERGE_PERFORMED = "merge_performed"
SPLIT_PERFORMED = "split_performed"

EVENT_KINDS = (ENTITY_CREATED, ENTITY_ENLARGED, RELATIONSHIP_ADDED,
               MERGE_PERFORMED, SPLIT_PERFORMED)


@dataclass(frozen=True)
class SyncEvent:
    iid: int
    seq: int
    kind: str
    payload: dict  # JSON-safe

    def sort_key(self) -> tuple[int, int]:
        return (self.iid, self.seq)

    def to_json(self) -> dict:
        return {"iid": self.iid, "seq": self.seq, "kind": self.kind,
                "payload": self.payload}

    @staticmethod
    def from_json(raw: dict) -> "SyncEvent":
        return SyncEvent(iid=int(raw["iid"]), seq=int(raw["seq"]),
                         kind=raw["kind"], payload=raw["payload"])
