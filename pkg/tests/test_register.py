from __future__ import annotations

from datetime import date

import pytest
from hypothesis import given, settings, strategies as st

from ereg import events as ev
from ereg.demo import demo_metamodel
from ereg.errors import (
    CardinalityViolation,
    ContradictionViolation,
    EntityCopyFailed,
    EntityTypeMismatch,
    IncompatibleAttributes,
    IncompletePartition,
    MissingValidity,
    NotAKey,
    ReferentialIntegrity,
    ReverseDirectionViolation,
    ValidationError,
)
from ereg.register import (
    EntityRegister,
    OutcomeKind,
    RelationshipSpec,
    Validity,
)

MARIO = {"name": "Mario", "surname": "Rossi", "birth_date": "1980-01-01",
         "birth_place": "Roma"}


@pytest.fixture
def reg():
    return EntityRegister(demo_metamodel(), instance_id=1, id_start=22)


def person(reg, n, **attrs):
    base = {"name": f"P{n}", "surname": f"S{n}", "birth_date": f"19{50 + n}-01-01",
            "birth_place": "Roma"}
    base.update(attrs)
    outcome = reg.upsert_from_mention("person", base)
    assert outcome.committed
    return outcome.local_id


class TestUpsert:
    def test_new_identifier_creates(self, reg):
        outcome = reg.upsert_from_mention("person", MARIO)
        assert outcome.kind == OutcomeKind.CREATED
        assert outcome.local_id == 22
        assert reg.event_log[-1][0] == ev.ENTITY_CREATED

    def test_same_identifier_with_extra_attribute_enlarges(self, reg):
        reg.upsert_from_mention("person", MARIO)
        outcome = reg.upsert_from_mention("person",
                                          {**MARIO, "eyes_color": "brown"})
        assert outcome.kind == OutcomeKind.ENLARGED
        assert outcome.local_id == 22
        assert outcome.added_attributes == ["eyes_color"]

    def test_single_valued_clash_is_conflict(self, reg):
        reg.upsert_from_mention("person", {**MARIO, "eyes_color": "brown"})
        outcome = reg.upsert_from_mention("person", {**MARIO, "eyes_color": "green"})
        assert outcome.kind == OutcomeKind.CONFLICT
        assert outcome.report.contradictory[0]["attribute"] == "eyes_color"
        assert reg.get_entity(22).attributes["eyes_color"] == "brown"  # unchanged

    def test_exact_repeat_is_matched(self, reg):
        reg.upsert_from_mention("person", MARIO)
        outcome = reg.upsert_from_mention("person", MARIO)
        assert outcome.kind == OutcomeKind.MATCHED
        assert outcome.local_id == 22

    def test_list_values_union_on_enlarge(self, reg):
        reg.upsert_from_mention("person", {**MARIO, "qualification": ["engineer"]})
        outcome = reg.upsert_from_mention(
            "person", {**MARIO, "qualification": ["judge", "Engineer"]})
        assert outcome.kind == OutcomeKind.ENLARGED
        assert reg.get_entity(22).attributes["qualification"] == ["engineer", "judge"]

    def test_no_complete_key_with_candidates_is_ambiguous(self, reg):
        reg.upsert_from_mention("person", MARIO)
        outcome = reg.upsert_from_mention("person",
                                          {"name": "Mario", "surname": "Rossi"})
        assert outcome.kind == OutcomeKind.AMBIGUOUS
        assert [c.local_id for c in outcome.candidates] == [22]

    def test_no_key_no_candidates_creates(self, reg):
        outcome = reg.upsert_from_mention("person",
                                          {"name": "Nobody", "surname": "Else"})
        assert outcome.kind == OutcomeKind.CREATED

    def test_auto_create_flag_bypasses_ambiguity(self):
        reg = EntityRegister(demo_metamodel(), instance_id=1,
                             auto_create_on_ambiguous=True)
        reg.upsert_from_mention("person", MARIO)
        outcome = reg.upsert_from_mention("person",
                                          {"name": "Mario", "surname": "Rossi"})
        assert outcome.kind == OutcomeKind.CREATED

    def test_derivation_completes_identifier(self, reg):
        # fiscal code alone both satisfies its own key and derives birth facts
        outcome = reg.upsert_from_mention("person",
                                          {"fiscal_code": "RSSMRA80A01H501U"})
        assert outcome.kind == OutcomeKind.CREATED
        entity = reg.get_entity(outcome.local_id)
        assert entity.attributes["birth_date"] == date(1980, 1, 1)
        assert entity.attributes["gender"] == "M"

    def test_rule_violation_is_conflict(self, reg):
        outcome = reg.upsert_from_mention(
            "person", {**MARIO, "phd_date": "1999-01-01"})
        assert outcome.kind == OutcomeKind.CONFLICT
        assert outcome.violations

    def test_two_keys_matching_distinct_entities_is_conflict(self, reg):
        reg.upsert_from_mention("person", MARIO)
        reg.upsert_from_mention("person", {"fiscal_code": "RSSMRA80A01H501U",
                                           "birth_place": "Milano"})
        # carries Mario's civil key AND the other entity's fiscal key
        outcome = reg.upsert_from_mention(
            "person", {**MARIO, "fiscal_code": "RSSMRA80A01H501U"})
        assert outcome.kind == OutcomeKind.CONFLICT

    def test_determinism_ids_included(self):
        def run():
            reg = EntityRegister(demo_metamodel(), instance_id=1, id_start=5)
            reg.upsert_from_mention("person", MARIO)
            reg.upsert_from_mention("person", {**MARIO, "eyes_color": "brown"})
            reg.upsert_from_mention("person", {"name": "Anna", "surname": "Bianchi",
                                               "father": "Carlo Bianchi",
                                               "mother": "Elena Verdi"})
            reg.add_relationship("FriendOf", 5, 6)
            return reg.to_json()
        assert run() == run()


class TestLookup:
    def test_lookup_by_fiscal_code(self, reg):
        reg.upsert_from_mention("person", {**MARIO,
                                           "fiscal_code": "RSSMRA80A01H501U"})
        hit = reg.lookup_by_identifier("person",
                                       {"fiscal_code": "RSSMRA80A01H501U"})
        assert hit.local_id == 22
        assert reg.lookup_by_identifier("person", {"fiscal_code": "XXXXXX99X99X999X"}) \
            is None

    def test_non_key_subset_rejected(self, reg):
        with pytest.raises(NotAKey):
            reg.lookup_by_identifier("person", {"name": "Mario"})

    def test_read_your_write(self, reg):
        reg.upsert_from_mention("person", MARIO)
        hit = reg.lookup_by_identifier("person", MARIO)
        assert hit.local_id == 22

    def test_lookup_case_insensitive(self, reg):
        reg.upsert_from_mention("person", MARIO)
        hit = reg.lookup_by_identifier("person", {**MARIO, "name": "MARIO",
                                                  "birth_place": "roma"})
        assert hit is not None


class TestCandidates:
    def test_two_homonyms_ranked_by_overlap(self, reg):
        a = person(reg, 1, name="Mario", surname="Rossi", eyes_color="brown")
        b = person(reg, 2, name="Mario", surname="Rossi")
        hits = reg.find_candidates("person", {"name": "Mario", "surname": "Rossi",
                                              "eyes_color": "brown"})
        assert [c.local_id for c in hits] == [a, b]

    def test_contradicting_single_value_excludes(self, reg):
        person(reg, 1, name="Mario", eyes_color="brown")
        hits = reg.find_candidates("person", {"name": "P1", "eyes_color": "green"})
        assert hits == []

    def test_empty_register_empty_list(self, reg):
        assert reg.find_candidates("person", {"name": "Mario"}) == []

    def test_relationship_endpoints_break_ties(self, reg):
        a = person(reg, 1, name="Mario", surname="Rossi")
        b = person(reg, 2, name="Mario", surname="Rossi")
        friend = person(reg, 3)
        reg.add_relationship("FriendOf", b, friend)
        hits = reg.find_candidates(
            "person", {"name": "Mario", "surname": "Rossi"},
            [RelationshipSpec("FriendOf", other_id=friend)])
        assert [c.local_id for c in hits] == [b, a]

    @settings(max_examples=40)
    @given(data=st.data())
    def test_matches_brute_force_oracle(self, data):
        reg = EntityRegister(demo_metamodel(), instance_id=1)
        names = ["Mario", "Anna", "Luca"]
        colors = ["brown", "green", "blue"]
        n = data.draw(st.integers(min_value=0, max_value=12))
        stored = {}
        for i in range(n):
            attrs = {"name": data.draw(st.sampled_from(names)),
                     "surname": f"S{i}"}
            if data.draw(st.booleans()):
                attrs["eyes_color"] = data.draw(st.sampled_from(colors))
            outcome = reg.upsert_from_mention("person", attrs)
            assert outcome.committed  # surnames distinct -> no candidates
            stored[outcome.local_id] = attrs
        query = {"name": data.draw(st.sampled_from(names))}
        if data.draw(st.booleans()):
            query["eyes_color"] = data.draw(st.sampled_from(colors))

        # independent oracle: filter + rank over the raw dicts
        expected = []
        for local_id in sorted(stored):
            attrs = stored[local_id]
            score, clash = 0, False
            for k, v in query.items():
                if k in attrs:
                    if attrs[k].casefold() == v.casefold():
                        score += 1
                    else:
                        clash = True
            if not clash:
                expected.append((-score, local_id))
        expected.sort()

        got = reg.find_candidates("person", query)
        assert [(-c.attr_score, c.local_id) for c in got] == expected


class TestRelationships:
    def test_second_father_same_child_cardinality(self, reg):
        f1, f2, child = person(reg, 1), person(reg, 2), person(reg, 3)
        reg.add_relationship("FatherOf", f1, child)
        with pytest.raises(CardinalityViolation):
            reg.add_relationship("FatherOf", f2, child)

    def test_father_and_mother_same_pair_contradict(self, reg):
        a, b = person(reg, 1), person(reg, 2)
        reg.add_relationship("FatherOf", a, b)
        with pytest.raises(ContradictionViolation):
            reg.add_relationship("MotherOf", a, b)

    def test_reverse_direction_of_mono_contradictory(self, reg):
        a, b = person(reg, 1), person(reg, 2)
        reg.add_relationship("FatherOf", a, b)
        with pytest.raises(ReverseDirectionViolation):
            reg.add_relationship("FatherOf", b, a)

    def test_marriage_periods_non_overlapping_ok(self, reg):
        a, b, c = person(reg, 1), person(reg, 2), person(reg, 3)
        reg.add_relationship("MarriedWith", a, b,
                             Validity(date(2000, 1, 1), date(2005, 1, 1)))
        reg.add_relationship("MarriedWith", a, c, Validity(date(2010, 1, 1)))
        assert len(reg.relationships_of(a)) == 2

    def test_marriage_periods_overlapping_violate(self, reg):
        a, b, c = person(reg, 1), person(reg, 2), person(reg, 3)
        reg.add_relationship("MarriedWith", a, b, Validity(date(2000, 1, 1)))
        with pytest.raises(CardinalityViolation):
            reg.add_relationship("MarriedWith", a, c, Validity(date(2010, 1, 1)))

    def test_marriage_requires_validity(self, reg):
        a, b = person(reg, 1), person(reg, 2)
        with pytest.raises(MissingValidity):
            reg.add_relationship("MarriedWith", a, b)

    def test_bidirectional_queryable_from_both_ends(self, reg):
        a, b = person(reg, 1), person(reg, 2)
        reg.add_relationship("FriendOf", a, b)
        assert any(r.touches(b) for r in reg.relationships_of(a))
        assert any(r.touches(a) for r in reg.relationships_of(b))

    def test_bidirectional_duplicate_either_orientation(self, reg):
        a, b = person(reg, 1), person(reg, 2)
        assert reg.add_relationship("FriendOf", a, b) is not None
        assert reg.add_relationship("FriendOf", b, a) is None  # same edge

    def test_exact_duplicate_is_noop(self, reg):
        a, b = person(reg, 1), person(reg, 2)
        reg.add_relationship("FatherOf", a, b)
        events_before = len(reg.event_log)
        assert reg.add_relationship("FatherOf", a, b) is None
        assert len(reg.event_log) == events_before

    def test_grandfather_bounded_by_two(self, reg):
        g1, g2, g3, child = (person(reg, i) for i in range(1, 5))
        reg.add_relationship("GrandfatherOf", g1, child)
        reg.add_relationship("GrandfatherOf", g2, child)
        with pytest.raises(CardinalityViolation):
            reg.add_relationship("GrandfatherOf", g3, child)

    def test_upsert_with_inline_father_mention(self, reg):
        outcome = reg.upsert_from_mention(
            "person", MARIO,
            [RelationshipSpec("FatherOf",
                              other_mention=("person",
                                             {"name": "Giuseppe", "surname": "Rossi",
                                              "birth_date": "1950-03-03",
                                              "birth_place": "Roma"}),
                              entity_is_source=False)])
        assert outcome.kind == OutcomeKind.CREATED
        assert outcome.added_relationships == 1
        father = reg.lookup_by_identifier(
            "person", {"name": "Giuseppe", "surname": "Rossi",
                       "birth_date": "1950-03-03", "birth_place": "Roma"})
        assert any(r.source_id == father.local_id
                   for r in reg.relationships_of(outcome.local_id))

    def test_quoted_father_for_child_who_has_one_conflicts(self, reg):
        child = person(reg, 1)
        father = person(reg, 2)
        reg.add_relationship("FatherOf", father, child)
        outcome = reg.upsert_from_mention(
            "person", {"name": "Ugo", "surname": "Neri", "birth_date": "1940-01-01",
                       "birth_place": "Bari"},
            [RelationshipSpec("FatherOf", other_id=child)])
        assert outcome.kind == OutcomeKind.CONFLICT
        assert isinstance(outcome.violations[0], CardinalityViolation)

    def test_constraint_soundness_after_operations(self, reg):
        a, b, c = person(reg, 1), person(reg, 2), person(reg, 3)
        reg.add_relationship("FatherOf", a, b)
        reg.add_relationship("FriendOf", b, c)
        reg.add_relationship("MarriedWith", a, c, Validity(date(1999, 1, 1)))
        assert reg.revalidate_relationships() == []


class TestMergeSplit:
    def test_merge_unions_disjoint_attributes(self, reg):
        a = person(reg, 1, name="Mario", surname="Rossi", eyes_color="brown")
        b_outcome = reg.upsert_from_mention(
            "person", {"name": "Mario", "surname": "Rossi",
                       "father": "Giuseppe Rossi", "mother": "Anna Bianchi"})
        b = b_outcome.local_id
        merged = reg.merge_entities(a, b)
        assert merged.local_id == a
        assert merged.attributes["father"] == "Giuseppe Rossi"
        assert merged.attributes["eyes_color"] == "brown"
        assert reg.resolve_id(b) == a
        assert reg.event_log[-1][0] == ev.MERGE_PERFORMED

    def test_merge_with_clashing_birth_date_rejected(self, reg):
        a = person(reg, 1)
        b = person(reg, 2, name="P1", surname="S1", birth_date="1990-09-09",
                   birth_place="Milano")
        with pytest.raises(IncompatibleAttributes):
            reg.merge_entities(a, b)

    def test_remerge_is_idempotent_noop(self, reg):
        a = reg.upsert_from_mention(
            "person", {"name": "Mario", "surname": "Rossi",
                       "father": "Giuseppe Rossi", "mother": "Anna Bianchi"}
        ).local_id
        b = reg.upsert_from_mention(
            "person", {"fiscal_code": "RSSMRA80A01H501U"}).local_id
        reg.merge_entities(a, b)
        events = len(reg.event_log)
        again = reg.merge_entities(a, b)  # b now forwards to a
        assert again.local_id == a
        assert len(reg.event_log) == events  # nothing re-emitted

    def test_merge_type_mismatch(self, reg):
        a = person(reg, 1)
        law = reg.upsert_from_mention("law_article", {"code": "642"}).local_id
        with pytest.raises(EntityTypeMismatch):
            reg.merge_entities(a, law)

    def test_merge_rejects_relationship_violations(self, reg):
        a = reg.upsert_from_mention(
            "person", {"name": "Mario", "surname": "Rossi",
                       "father": "Giuseppe Rossi", "mother": "Anna Bianchi"}
        ).local_id
        b = reg.upsert_from_mention(
            "person", {"fiscal_code": "RSSMRA80A01H501U"}).local_id
        child = person(reg, 3)
        reg.add_relationship("FatherOf", a, child)
        reg.add_relationship("MotherOf", b, child)
        # merging would make one entity both father and mother of the child
        with pytest.raises(IncompatibleAttributes):
            reg.merge_entities(a, b)

    def test_split_by_provenance(self, reg):
        outcome = reg.upsert_from_mention(
            "person", {"name": "Mario", "surname": "Rossi"},
            provenance=("doc1", "a1"))
        eid = outcome.local_id
        reg.get_entity(eid).provenance.add(("doc2", "a2"))
        a, b = reg.split_entity(
            eid, [("doc1", "a1")], [("doc2", "a2")],
            {"name": "Mario", "surname": "Rossi", "eyes_color": "brown"},
            {"name": "Mario", "surname": "Rossi", "eyes_color": "green"})
        assert a.provenance == {("doc1", "a1")}
        assert b.provenance == {("doc2", "a2")}
        assert not reg.has_entity(eid)
        hits = reg.find_candidates("person", {"name": "Mario", "surname": "Rossi"})
        assert {c.local_id for c in hits} == {a.local_id, b.local_id}

    def test_split_with_empty_side_rejected(self, reg):
        outcome = reg.upsert_from_mention("person", MARIO, provenance=("d", "a"))
        with pytest.raises(IncompletePartition):
            reg.split_entity(outcome.local_id, [("d", "a")], [], MARIO, MARIO)

    def test_merge_then_split_restores_mention_partition(self, reg):
        out_a = reg.upsert_from_mention(
            "person", {"name": "Mario", "surname": "Rossi", "eyes_color": "brown"},
            provenance=("doc1", "a1"))
        out_b = reg.upsert_from_mention(
            "person", {"name": "Mario", "surname": "Rossi", "father": "Ugo Rossi"},
            provenance=("doc2", "a2"))
        assert out_b.kind == OutcomeKind.AMBIGUOUS  # human chose "new entity":
        reg.auto_create_on_ambiguous = True
        out_b = reg.upsert_from_mention(
            "person", {"name": "Mario", "surname": "Rossi", "father": "Ugo Rossi"},
            provenance=("doc2", "a2"))
        reg.auto_create_on_ambiguous = False
        merged = reg.merge_entities(out_a.local_id, out_b.local_id)
        a2, b2 = reg.split_entity(
            merged.local_id, [("doc1", "a1")], [("doc2", "a2")],
            {"name": "Mario", "surname": "Rossi", "eyes_color": "brown"},
            {"name": "Mario", "surname": "Rossi", "father": "Ugo Rossi"})
        assert a2.provenance == {("doc1", "a1")}
        assert b2.provenance == {("doc2", "a2")}


class TestImportAndIntegrity:
    def test_import_reuses_existing_by_key(self, reg):
        reg.upsert_from_mention("person", MARIO)
        local = reg.import_entity({"type_name": "person", "attributes": MARIO})
        assert local == 22

    def test_import_of_ambiguous_record_fails(self, reg):
        person(reg, 1, name="Mario", surname="Rossi")
        with pytest.raises(EntityCopyFailed):
            reg.import_entity({"type_name": "person",
                               "attributes": {"name": "Mario", "surname": "Rossi"}})

    def test_delete_with_mentions_rejected(self, reg):
        outcome = reg.upsert_from_mention("person", MARIO, provenance=("d", "a"))
        with pytest.raises(ReferentialIntegrity):
            reg.delete_entity(outcome.local_id)

    def test_key_uniqueness_audit_clean(self, reg):
        for i in range(5):
            person(reg, i)
        assert reg.audit_key_uniqueness() == []

    def test_self_relationship_rejected(self, reg):
        a = person(reg, 1)
        with pytest.raises(ValidationError):
            reg.add_relationship("FriendOf", a, a)
