from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from ereg.errors import (
    AlreadyResolved,
    InvalidDecision,
    OutOfOrderDelivery,
    UnauthorizedActor,
    UnknownParent,
    UnknownRequest,
)
from ereg.federation import InstanceDirectory, SyncOutcome

from support import FakeDistrict, apply_script, fresh_top



MARIO_D1 = {"name": "Mario", "surname": "Rossi", "birth_date": "1980-01-01",
            "birth_place": "Roma"}
MARIO_D2 = {"name": "Mario", "surname": "Rossi", "birth_year": 1980,
            "father": "Giuseppe Rossi", "mother": "Anna Bianchi"}


class TestDirectory:
    def test_two_districts_get_sequential_iids(self):
        directory = InstanceDirectory()
        a = directory.register(0, "http://127.0.0.1:8001")
        b = directory.register(0, "http://127.0.0.1:8002")
        assert (a.iid, b.iid) == (1, 2)
        assert a.level == 1 and a.parent_iid == 0
        assert len(directory.children(0)) == 2

    def test_unknown_parent_rejected(self):
        with pytest.raises(UnknownParent):
            InstanceDirectory().register(77, "http://x")

    def test_many_registrations_all_distinct(self):
        directory = InstanceDirectory()
        issued = [directory.register(0, f"addr-{i}").iid for i in range(100)]
        assert len(set(issued)) == 100

    def test_deep_tree_levels(self):
        directory = InstanceDirectory()
        region = directory.register(0, "region")
        leaf = directory.register(region.iid, "leaf")
        assert leaf.level == 2


class TestEntitySync:
    def test_first_entity_creates_global(self):
        top = fresh_top()
        d1 = FakeDistrict(1, id_start=22)
        d1.upsert("person", MARIO_D1)
        report = top.ingest_events(1, d1.pending())
        assert report["outcomes"][0]["outcome"]["kind"] == SyncOutcome.CREATED_GLOBAL
        gid = report["outcomes"][0]["outcome"]["global_id"]
        assert top.map_global_local(gid) == [(1, 22)]
        assert report["bindings"] == {"22": gid}

    def test_same_key_from_second_district_binds(self):
        top = fresh_top()
        d1, d2 = FakeDistrict(1, 22), FakeDistrict(2, 85)
        d1.upsert("person", MARIO_D1)
        d2.upsert("person", MARIO_D1)
        top.ingest_events(1, d1.pending())
        report = top.ingest_events(2, d2.pending())
        outcome = report["outcomes"][0]["outcome"]
        assert outcome["kind"] == SyncOutcome.MERGED_INTO
        assert top.map_global_local(outcome["global_id"]) == [(1, 22), (2, 85)]

    def test_incompatible_update_raises_request(self):
        top = fresh_top()
        d1, d2 = FakeDistrict(1), FakeDistrict(2)
        d1.upsert("person", {**MARIO_D1, "eyes_color": "brown"})
        d2.upsert("person", {**MARIO_D1, "eyes_color": "green"})
        top.ingest_events(1, d1.pending())
        report = top.ingest_events(2, d2.pending())
        outcome = report["outcomes"][0]["outcome"]
        assert outcome["kind"] == SyncOutcome.ACTION_REQUIRED
        request = top.requests[outcome["request_id"]]
        assert request.message["kind"] == "contradictory_attributes"
        assert request.message["report"]["contradictory"][0]["attribute"] == \
            "eyes_color"

    def test_fig3_candidate_match_needs_human(self):
        top = fresh_top()
        d1, d2 = FakeDistrict(1, 22), FakeDistrict(2, 85)
        d1.upsert("person", MARIO_D1)
        d2.upsert("person", MARIO_D2)
        top.ingest_events(1, d1.pending())
        report = top.ingest_events(2, d2.pending())
        outcome = report["outcomes"][0]["outcome"]
        assert outcome["kind"] == SyncOutcome.ACTION_REQUIRED
        request = top.requests[outcome["request_id"]]
        assert request.iid == 2
        assert request.status == "open"
        assert request.message["candidates"][0]["local_id"] == "g-1-1"

    def test_fig3_merge_decision_unions_and_binds(self):
        top = fresh_top()
        d1, d2 = FakeDistrict(1, 22), FakeDistrict(2, 85)
        d1.upsert("person", MARIO_D1)
        d2.upsert("person", MARIO_D2)
        top.ingest_events(1, d1.pending())
        report = top.ingest_events(2, d2.pending())
        rid = report["outcomes"][0]["outcome"]["request_id"]
        result = top.resolve_action_request(
            rid, {"kind": "merge", "global_id": "g-1-1"}, actor="root")
        assert result["status"] == "resolved"
        assert top.map_global_local("g-1-1") == [(1, 22), (2, 85)]
        merged = top.require_global("g-1-1")
        assert merged.attributes["father"] == "Giuseppe Rossi"
        assert merged.attributes["birth_place"] == "Roma"
        assert len(top.globals) == 1

    def test_create_new_decision_keeps_entities_apart(self):
        top = fresh_top()
        d1, d2 = FakeDistrict(1, 22), FakeDistrict(2, 85)
        d1.upsert("person", MARIO_D1)
        d2.upsert("person", MARIO_D2)
        top.ingest_events(1, d1.pending())
        report = top.ingest_events(2, d2.pending())
        rid = report["outcomes"][0]["outcome"]["request_id"]
        top.resolve_action_request(rid, {"kind": "create_new"}, actor="root")
        assert len(top.globals) == 2
        assert top.map_global_local("g-1-1") == [(1, 22)]
        assert top.map_global_local("g-2-1") == [(2, 85)]

    def test_resolving_twice_rejected(self):
        top = fresh_top()
        d1, d2 = FakeDistrict(1), FakeDistrict(2)
        d1.upsert("person", MARIO_D1)
        d2.upsert("person", MARIO_D2)
        top.ingest_events(1, d1.pending())
        report = top.ingest_events(2, d2.pending())
        rid = report["outcomes"][0]["outcome"]["request_id"]
        top.resolve_action_request(rid, {"kind": "create_new"}, actor="root")
        with pytest.raises(AlreadyResolved):
            top.resolve_action_request(rid, {"kind": "create_new"}, actor="root")

    def test_unauthorized_actor_rejected(self):
        top = fresh_top()
        d1 = FakeDistrict(1)
        d1.upsert("person", {"name": "Mario", "surname": "Rossi"})
        d2 = FakeDistrict(2)
        d2.upsert("person", {"name": "Mario", "surname": "Rossi"})
        top.ingest_events(1, d1.pending())
        report = top.ingest_events(2, d2.pending())
        rid = report["outcomes"][0]["outcome"]["request_id"]
        with pytest.raises(UnauthorizedActor):
            top.resolve_action_request(rid, {"kind": "create_new"}, actor="mallory")
        with pytest.raises(UnknownRequest):
            top.resolve_action_request("ar-9-9", {"kind": "create_new"},
                                       actor="root")
        with pytest.raises(InvalidDecision):
            top.resolve_action_request(rid, {"kind": "flip-a-coin"}, actor="root")

    def test_fix_attributes_decision_reresolves(self):
        top = fresh_top()
        d1, d2 = FakeDistrict(1), FakeDistrict(2)
        d1.upsert("person", {**MARIO_D1, "eyes_color": "brown"})
        d2.upsert("person", {**MARIO_D1, "eyes_color": "green"})
        top.ingest_events(1, d1.pending())
        report = top.ingest_events(2, d2.pending())
        rid = report["outcomes"][0]["outcome"]["request_id"]
        top.resolve_action_request(
            rid, {"kind": "fix_attributes", "edits": {"eyes_color": None}},
            actor="root")
        assert top.requests[rid].status == "resolved"
        assert len(top.globals) == 1
        assert top.map_global_local("g-1-1") == [(1, 1), (2, 1)]


class TestBatchesAndIdempotency:
    def test_redelivery_changes_nothing(self):
        top = fresh_top()
        d1 = FakeDistrict(1)
        d1.upsert("person", MARIO_D1)
        d1.upsert("person", {**MARIO_D1, "eyes_color": "brown"})
        batch = d1.pending()
        top.ingest_events(1, batch)
        before = json.dumps(top.normalized_state(), sort_keys=True, default=str)
        report = top.ingest_events(1, batch)  # full redelivery
        after = json.dumps(top.normalized_state(), sort_keys=True, default=str)
        assert before == after
        assert all(r["outcome"].get("redelivery") for r in report["outcomes"])

    def test_gap_rejected(self):
        top = fresh_top()
        d1 = FakeDistrict(1)
        d1.upsert("person", MARIO_D1)
        d1.upsert("person", {**MARIO_D1, "eyes_color": "brown"})
        with pytest.raises(OutOfOrderDelivery):
            top.ingest_events(1, d1.pending()[1:])

    def test_batch_with_conflict_advances_watermark(self):
        top = fresh_top()
        d1 = FakeDistrict(1)
        d2 = FakeDistrict(2)
        d1.upsert("person", {**MARIO_D1, "eyes_color": "green"})
        top.ingest_events(1, d1.pending())
        # nine clean people plus one contradicting Mario
        for i in range(9):
            d2.upsert("person", {"name": f"N{i}", "surname": f"S{i}",
                                 "birth_date": "1970-01-01", "birth_place": "Bari"})
        d2.upsert("person", {**MARIO_D1, "eyes_color": "brown"})
        report = top.ingest_events(2, d2.pending())
        kinds = [r["outcome"]["kind"] for r in report["outcomes"]]
        assert kinds.count(SyncOutcome.CREATED_GLOBAL) == 9
        assert kinds.count(SyncOutcome.ACTION_REQUIRED) == 1
        assert report["watermark"] == 10
        assert len(top.list_requests("open")) == 1

    def test_binding_soundness_audit(self):
        rng = random.Random(5)
        top = fresh_top()
        districts = {iid: FakeDistrict(iid, id_start=10 * iid)
                     for iid in (1, 2)}
        for i in range(20):
            iid = rng.choice([1, 2])
            districts[iid].upsert("person", {
                "name": rng.choice(["Mario", "Anna"]),
                "surname": rng.choice(["Rossi", "Bianchi"]),
                "birth_date": f"19{40 + i}-01-01",
                "birth_place": rng.choice(["Roma", "Pisa"])})
            top.ingest_events(iid, districts[iid].pending(
                after=top.watermarks.get(iid, 0)))
        from ereg.register import compare_attribute_maps
        for (iid, local_id), gid in top.bindings.items():
            entity = districts[iid].register.get_entity(local_id)
            global_entity = top.require_global(gid)
            report = compare_attribute_maps(
                top.metamodel, entity.type_name,
                global_entity.attributes, entity.attributes)
            assert report.compatible, (iid, local_id, gid)

    def test_every_event_applied_or_represented(self):
        top = fresh_top()
        d1, d2 = FakeDistrict(1), FakeDistrict(2)
        d1.upsert("person", {**MARIO_D1, "eyes_color": "brown"})
        d2.upsert("person", {**MARIO_D1, "eyes_color": "green"})
        d2.upsert("person", {"name": "Luca", "surname": "Verdi",
                             "birth_date": "1960-06-06", "birth_place": "Pisa"})
        top.ingest_events(1, d1.pending())
        top.ingest_events(2, d2.pending())
        represented = set()
        for request in top.requests.values():
            represented.add((request.iid, int(request.request_id.split("-")[2])))
            represented.update((i, s) for i, s in request.dependents)
        for key, outcome in top.outcomes.items():
            assert outcome["kind"] != SyncOutcome.ACTION_REQUIRED or \
                key in represented or key in {
                    (r.iid, int(r.request_id.split("-")[2]))
                    for r in top.requests.values()}


class TestRelationshipSync:
    def _family(self, top):
        d1 = FakeDistrict(1)
        father = d1.upsert("person", {"name": "Giuseppe", "surname": "Rossi",
                                      "birth_date": "1950-01-01",
                                      "birth_place": "Roma"}).local_id
        child = d1.upsert("person", MARIO_D1).local_id
        d1.run(lambda reg: reg.add_relationship("FatherOf", father, child))
        top.ingest_events(1, d1.pending())
        return d1

    def test_edge_applies_when_both_bound(self):
        top = fresh_top()
        self._family(top)
        assert len(top.edges) == 1
        assert top.edges[0].rel_name == "FatherOf"

    def test_cross_district_second_father_raises_request(self):
        top = fresh_top()
        self._family(top)
        d2 = FakeDistrict(2)
        other_father = d2.upsert(
            "person", {"name": "Ugo", "surname": "Neri",
                       "birth_date": "1940-02-02", "birth_place": "Bari"}).local_id
        child = d2.upsert("person", MARIO_D1).local_id
        d2.run(lambda reg: reg.add_relationship("FatherOf", other_father, child))
        report = top.ingest_events(2, d2.pending())
        edge_outcome = report["outcomes"][-1]["outcome"]
        assert edge_outcome["kind"] == SyncOutcome.ACTION_REQUIRED
        request = top.requests[edge_outcome["request_id"]]
        assert request.message["kind"] == "relationship_violation"

    def test_edge_parks_behind_pending_entity_and_applies_after(self):
        top = fresh_top()
        d1, d2 = FakeDistrict(1), FakeDistrict(2)
        d1.upsert("person", MARIO_D1)
        top.ingest_events(1, d1.pending())
        # district 2: ambiguous Mario plus a relationship to him
        mario = d2.upsert("person", MARIO_D2).local_id
        friend = d2.upsert("person", {"name": "Carla", "surname": "Blu",
                                      "birth_date": "1982-02-02",
                                      "birth_place": "Pisa"}).local_id
        d2.run(lambda reg: reg.add_relationship("FriendOf", mario, friend))
        report = top.ingest_events(2, d2.pending())
        outcomes = {r["seq"]: r["outcome"] for r in report["outcomes"]}
        assert outcomes[1]["kind"] == SyncOutcome.ACTION_REQUIRED
        assert outcomes[3]["kind"] == SyncOutcome.PARKED
        rid = outcomes[1]["request_id"]
        assert [2, 3] in top.requests[rid].dependents
        top.resolve_action_request(rid, {"kind": "merge", "global_id": "g-1-1"},
                                   actor="root")
        assert any(e.rel_name == "FriendOf" for e in top.edges)


class TestMergeSplitSync:
    def test_local_merge_closes_pending_request_and_unions(self):
        top = fresh_top()
        d1 = FakeDistrict(1)
        a = d1.upsert("person", MARIO_D1).local_id
        b = d1.upsert("person", {"name": "Mario", "surname": "Rossi",
                                 "father": "Giuseppe Rossi",
                                 "mother": "Anna Bianchi"}).local_id
        top.ingest_events(1, d1.pending())
        # the second Mario is a candidate match pending a human decision
        assert len(top.globals) == 1
        assert len(top.list_requests("open")) == 1
        d1.run(lambda reg: reg.merge_entities(a, b))
        top.ingest_events(1, d1.pending())
        assert len(top.globals) == 1
        only = next(iter(top.globals.values()))
        assert only.binding_pairs() == [(1, a)]
        assert only.attributes["father"] == "Giuseppe Rossi"
        assert top.list_requests("open") == []
        assert top.list_requests("rejected")[0].iid == 1

    def test_local_merge_of_distinct_globals_merges_them(self):
        top = fresh_top()
        d1 = FakeDistrict(1)
        a = d1.upsert("person", MARIO_D1).local_id
        # no shared attribute with a, so it becomes its own global entity
        b = d1.upsert("person", {"eyes_color": "brown"}).local_id
        top.ingest_events(1, d1.pending())
        assert len(top.globals) == 2
        d1.run(lambda reg: reg.merge_entities(a, b))
        top.ingest_events(1, d1.pending())
        assert len(top.globals) == 1
        only = next(iter(top.globals.values()))
        assert only.binding_pairs() == [(1, a)]
        assert only.attributes["eyes_color"] == "brown"
        assert only.attributes["birth_place"] == "Roma"

    def test_local_split_rebinds_parts(self):
        top = fresh_top()
        d1 = FakeDistrict(1)
        outcome = d1.upsert("person", {"name": "Mario", "surname": "Rossi"},
                            provenance=("doc1", "a1"))
        eid = outcome.local_id
        d1.register.get_entity(eid).provenance.add(("doc2", "a2"))
        top.ingest_events(1, d1.pending())
        d1.run(lambda reg: reg.split_entity(
            eid, [("doc1", "a1")], [("doc2", "a2")],
            {"name": "Mario", "surname": "Rossi", "eyes_color": "brown"},
            {"name": "Mario", "surname": "Rossi", "eyes_color": "green"}))
        top.ingest_events(1, d1.pending())
        pairs = sorted(p for g in top.globals.values() for p in g.binding_pairs())
        assert pairs == [(1, eid + 1), (1, eid + 2)]
        assert (1, eid) not in top.bindings


ATTR_POOL = st.fixed_dictionaries(
    {"name": st.sampled_from(["Mario", "Anna"]),
     "surname": st.sampled_from(["Rossi", "Bianchi"])},
    optional={
        "birth_date": st.sampled_from(["1980-01-01", "1990-05-05"]),
        "birth_place": st.sampled_from(["Roma", "Pisa"]),
        "eyes_color": st.sampled_from(["brown", "green"]),
        "father": st.sampled_from(["Ugo Rossi", "Gino Neri"]),
        "mother": st.just("Eva Blu"),
        "qualification": st.just(["judge"]),
    })


@settings(max_examples=60, deadline=None)
@given(steps=st.lists(st.tuples(st.sampled_from([1, 2, 3]), ATTR_POOL),
                      min_size=1, max_size=12),
       order=st.permutations([1, 2, 3]))
def test_eager_equals_batch_convergence(steps, order):
    script = [(iid, "person", attrs) for iid, attrs in steps]
    eager = apply_script(script, batch=False, district_order=[1, 2, 3])
    batched = apply_script(script, batch=True, district_order=list(order))
    assert json.dumps(eager.normalized_state(), sort_keys=True, default=str) == \
        json.dumps(batched.normalized_state(), sort_keys=True, default=str)


@settings(max_examples=25, deadline=None)
@given(steps=st.lists(st.tuples(st.sampled_from([1, 2, 3]), ATTR_POOL),
                      min_size=1, max_size=8),
       seed=st.integers(min_value=0, max_value=999))
def test_redelivery_of_any_prefix_is_noop(steps, seed):
    script = [(iid, "person", attrs) for iid, attrs in steps]
    top = fresh_top()
    districts = {iid: FakeDistrict(iid, id_start=10 * iid) for iid in (1, 2, 3)}
    for iid, type_name, attrs in script:
        districts[iid].upsert(type_name, attrs)
        events = districts[iid].pending()
        if events:
            top.ingest_events(iid, events)
    before = json.dumps(top.normalized_state(), sort_keys=True, default=str)
    rng = random.Random(seed)
    iid = rng.choice([1, 2, 3])
    events = districts[iid].pending()
    if events:
        cut = rng.randint(0, len(events) - 1)
        top.ingest_events(iid, events[:cut + 1])
    assert json.dumps(top.normalized_state(), sort_keys=True, default=str) == before
