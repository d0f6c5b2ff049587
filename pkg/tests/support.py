"""Shared helpers for the federation and acceptance suites."""

from __future__ import annotations

import itertools

from ereg.demo import demo_metamodel
from ereg.events import SyncEvent
from ereg.federation import TopRegister
from ereg.register import EntityRegister


class FakeDistrict:
    """Drives a real register and packages its event drafts as SyncEvents."""

    def __init__(self, iid: int, id_start: int = 1):
        self.iid = iid
        self.register = EntityRegister(demo_metamodel(), instance_id=iid,
                                       id_start=id_start,
                                       auto_create_on_ambiguous=True)
        self.seq = 0
        self.outbox: list[SyncEvent] = []

    def run(self, fn):
        result = fn(self.register)
        for kind, payload in self.register.event_log:
            self.seq += 1
            self.outbox.append(SyncEvent(iid=self.iid, seq=self.seq, kind=kind,
                                         payload=payload))
        self.register.event_log.clear()
        return result

    def upsert(self, type_name, attrs, **kw):
        return self.run(lambda reg: reg.upsert_from_mention(type_name, attrs,
                                                            **kw))

    def pending(self, after: int = 0) -> list[SyncEvent]:
        return [e for e in self.outbox if e.seq > after]


def fresh_top(**kw) -> TopRegister:
    return TopRegister(demo_metamodel(), clock=itertools.count(1).__next__, **kw)


def apply_script(script, batch: bool, district_order):
    """Run the same mutation script eagerly or batched; returns the top."""
    top = fresh_top()
    districts = {iid: FakeDistrict(iid, id_start=10 * iid) for iid in (1, 2, 3)}
    watermarks = {1: 0, 2: 0, 3: 0}

    def flush(iid):
        events = districts[iid].pending(after=watermarks[iid])
        if events:
            top.ingest_events(iid, events)
            watermarks[iid] = events[-1].seq

    for iid, type_name, attrs in script:
        districts[iid].upsert(type_name, attrs)
        if not batch:
            flush(iid)
    for iid in district_order:
        flush(iid)
    return top
