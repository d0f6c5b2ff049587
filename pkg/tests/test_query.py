from __future__ import annotations

import json

import pytest

from ereg.access import PseudonymScope
from ereg.demo import (
    demo_access_tables,
    demo_metamodel,
    permission_fixture_doc,
    permission_fixture_ownership,
    stat_fixture_docs,
)
from ereg.errors import InvalidDepth, PermissionDenied, UnknownAttribute
from ereg.query import navigate_graph, render_document, stat_query, query_entities
from ereg.state import DistrictState


def make_state(ownership=None, docs=(), graph_node_cap=500):
    mm = demo_metamodel()
    tables = demo_access_tables(mm, ownership=ownership or [
        {"user": "root", "doc_id": "*", "level": "owner"},
        {"user": "rhea", "doc_id": "*", "level": "reader"},
        {"user": "gus", "doc_id": "*", "level": "generic"},
    ])
    state = DistrictState(iid=1, metamodel=mm, tables=tables,
                          graph_node_cap=graph_node_cap)
    for doc in docs:
        state.apply_command({"op": "ingest_document", "doc": doc,
                             "use_rules": False, "strategy": None})
    return state


def family_docs():
    """Three documents wiring a small family via inline relationships."""
    base = {"name": "Mario", "surname": "Rossi", "birth_date": "1980-01-01",
            "birth_place": "Roma"}
    father = {"name": "Giuseppe", "surname": "Rossi",
              "birth_date": "1950-02-02", "birth_place": "Roma"}
    friend = {"name": "Carla", "surname": "Blu", "birth_date": "1981-03-03",
              "birth_place": "Pisa"}
    return [
        {"doc_id": "fam-1", "metadata": {"year": "2020"},
         "sections": [{"name": "B", "content": "Mario Rossi appeared."}],
         "annotations": [{"tag": "person", "start": 0, "end": 11,
                          "entity": {"type": "person", "attributes": base,
                                     "relationships": [
                                         {"rel_name": "FatherOf",
                                          "other_mention": {
                                              "type": "person",
                                              "attributes": father},
                                          "entity_is_source": False}]}}]},
        {"doc_id": "fam-2", "metadata": {"year": "2021"},
         "sections": [{"name": "B", "content": "Carla Blu testified."}],
         "annotations": [{"tag": "person", "start": 0, "end": 9,
                          "entity": {"type": "person", "attributes": friend,
                                     "relationships": [
                                         {"rel_name": "FriendOf",
                                          "other_mention": {
                                              "type": "person",
                                              "attributes": base}}]}}]},
        {"doc_id": "fam-3", "metadata": {"year": "2021"},
         "sections": [{"name": "B", "content": "Mario Rossi returned."}],
         "annotations": [{"tag": "person", "start": 0, "end": 11,
                          "entity": {"type": "person", "attributes": base}}]},
    ]


def brute_force_graph(state, start_id: int, depth: int):
    """Oracle: plain BFS over raw stores, no permission filtering."""
    nodes = {("e", start_id)}
    frontier = {("e", start_id)}
    edges = set()
    for _ in range(depth):
        nxt = set()
        for kind, key in frontier:
            if kind == "e":
                for ann in state.corpus.annotations_for_entity(key):
                    edges.add(("mention", key, ann.doc_id))
                    if ("d", ann.doc_id) not in nodes:
                        nxt.add(("d", ann.doc_id))
                for inst in state.register.relationships_of(key):
                    other = inst.target_id if inst.source_id == key \
                        else inst.source_id
                    edges.add(("rel", inst.rel_name,
                               min(key, other), max(key, other)))
                    if ("e", other) not in nodes:
                        nxt.add(("e", other))
            else:
                for ann in state.corpus.annotations_for_doc(key):
                    if ann.entity_ref is None:
                        continue
                    edges.add(("mention", ann.entity_ref, key))
                    if ("e", ann.entity_ref) not in nodes:
                        nxt.add(("e", ann.entity_ref))
        nodes |= nxt
        frontier = nxt
    return nodes, edges


class TestGraph:
    def test_depth_one_from_entity(self):
        state = make_state(docs=family_docs())
        mario = state.register.lookup_by_identifier("person", {
            "name": "Mario", "surname": "Rossi", "birth_date": "1980-01-01",
            "birth_place": "Roma"}).local_id
        graph = navigate_graph(state.context(), "root", mario, 1,
                               PseudonymScope("s"))
        kinds = {n["kind"] for n in graph["nodes"].values()}
        assert kinds == {"entity", "document"}
        doc_nodes = [k for k in graph["nodes"] if k.startswith("d:")]
        assert sorted(doc_nodes) == ["d:fam-1", "d:fam-3"]
        # one hop also reaches the father and the friend through relationships
        entity_refs = {n["ref"] for n in graph["nodes"].values()
                       if n["kind"] == "entity"}
        assert len(entity_refs) == 3
        two_hops = navigate_graph(state.context(), "root", mario, 2,
                                  PseudonymScope("s"))
        assert "d:fam-2" in two_hops["nodes"]  # the friend's own document

    def test_invalid_depth(self):
        state = make_state(docs=family_docs())
        with pytest.raises(InvalidDepth):
            navigate_graph(state.context(), "root", 1, 0, PseudonymScope("s"))
        with pytest.raises(InvalidDepth):
            navigate_graph(state.context(), "root", 1, 99, PseudonymScope("s"))

    @pytest.mark.parametrize("depth", [1, 2, 3])
    def test_full_permission_graph_matches_bfs_oracle(self, depth):
        state = make_state(docs=family_docs())
        mario = state.register.lookup_by_identifier("person", {
            "name": "Mario", "surname": "Rossi", "birth_date": "1980-01-01",
            "birth_place": "Roma"}).local_id
        graph = navigate_graph(state.context(), "root", mario, depth,
                               PseudonymScope("s"))
        expected_nodes, expected_edges = brute_force_graph(state, mario, depth)

        got_entities = {int(n["ref"]) for n in graph["nodes"].values()
                        if n["kind"] == "entity"}
        got_docs = {n["doc_id"] for n in graph["nodes"].values()
                    if n["kind"].startswith("document")}
        assert got_entities == {k for t, k in expected_nodes if t == "e"}
        assert got_docs == {k for t, k in expected_nodes if t == "d"}
        got_mentions = {(e["source"], e["target"]) for e in graph["edges"]
                        if e["kind"] == "mention"}
        expected_mentions = {(f"e:{e[1]}", f"d:{e[2]}") for e in expected_edges
                             if e[0] == "mention"}
        assert got_mentions == expected_mentions
        got_rels = {(e["rel"], e["source"], e["target"])
                    for e in graph["edges"] if e["kind"] == "relationship"}
        assert len(got_rels) == len({e for e in expected_edges if e[0] == "rel"})

    def test_permission_denied_start_node(self):
        state = make_state(docs=[permission_fixture_doc()],
                           ownership=permission_fixture_ownership())
        informant = state.register.lookup_by_identifier(
            "informant", {"codename": "Falco"}).local_id
        with pytest.raises(PermissionDenied):
            navigate_graph(state.context(), "gus", informant, 1,
                           PseudonymScope("s"))

    def test_anonymized_nodes_leak_nothing(self):
        state = make_state(docs=[permission_fixture_doc()],
                           ownership=permission_fixture_ownership())
        person = state.register.lookup_by_identifier("person", {
            "name": "Mario", "surname": "Rossi", "birth_date": "1980-01-01",
            "birth_place": "Roma"}).local_id
        graph = navigate_graph(state.context(), "rhea", person, 2,
                               PseudonymScope("s"))
        blob = json.dumps(graph)
        assert "Mario" not in blob and "Luigi Verdi" not in blob
        assert any(n["kind"] == "entity" and str(n["ref"]).startswith("PERS-")
                   for n in graph["nodes"].values())

    def test_node_cap_respected(self):
        docs = family_docs()
        state = make_state(docs=docs, graph_node_cap=2)
        mario = state.register.lookup_by_identifier("person", {
            "name": "Mario", "surname": "Rossi", "birth_date": "1980-01-01",
            "birth_place": "Roma"}).local_id
        graph = navigate_graph(state.context(), "root", mario, 3,
                               PseudonymScope("s"))
        assert len(graph["nodes"]) <= 2


class TestStats:
    def test_gender_counts_in_divorce_cases(self):
        state = make_state(docs=stat_fixture_docs())
        result = stat_query(state.context(), "root", group_by="gender",
                            type_name="person",
                            metadata_filters={"case_type": "divorce"})
        # oracle: linear scan over the fixture docs
        expected = {}
        for doc in stat_fixture_docs():
            if doc["metadata"]["case_type"] != "divorce":
                continue
            for ann in doc["annotations"]:
                g = ann["entity"]["attributes"]["gender"]
                expected[g] = expected.get(g, 0) + 1
        assert result["counts"] == expected
        assert result["counts"] == {"F": 3, "M": 1}

    def test_counts_invariant_under_caller_permission(self):
        state = make_state(docs=stat_fixture_docs())
        rows = [stat_query(state.context(), user, group_by="gender",
                           type_name="person")["counts"]
                for user in ("root", "rhea", "gus")]
        assert rows[0] == rows[1] == rows[2]

    def test_unknown_user_rejected(self):
        state = make_state(docs=stat_fixture_docs())
        with pytest.raises(PermissionDenied):
            stat_query(state.context(), "stranger", group_by="gender",
                       type_name="person")

    def test_unknown_attribute_rejected(self):
        state = make_state(docs=stat_fixture_docs())
        with pytest.raises(UnknownAttribute):
            stat_query(state.context(), "root", group_by="hat_size",
                       type_name="person")

    def test_empty_corpus_empty_table(self):
        state = make_state()
        result = stat_query(state.context(), "root", group_by="type")
        assert result["counts"] == {}

    def test_group_by_type(self):
        state = make_state(docs=[permission_fixture_doc()])
        result = stat_query(state.context(), "root", group_by="type")
        assert result["counts"] == {"court": 1, "informant": 1,
                                    "law_article": 1, "person": 1}


class TestDocumentRendering:
    def _state(self):
        return make_state(docs=[permission_fixture_doc()],
                          ownership=permission_fixture_ownership())

    def test_owner_sees_raw_text(self):
        state = self._state()
        doc = render_document(state.context(), "ada", "case-100",
                              PseudonymScope("s"))
        assert "Mario Rossi" in doc["sections"][0]["content"]
        assert "Falco" in doc["sections"][0]["content"]

    def test_reader_sees_person_anonymized_everything_else(self):
        state = self._state()
        doc = render_document(state.context(), "rhea", "case-100",
                              PseudonymScope("s"))
        body = doc["sections"][0]["content"]
        assert "Mario" not in body
        assert "PERS-" in body
        assert "[informant]" in body  # without_mentions: span redacted
        assert "Falco" not in body
        assert "Tribunale di Milano" in body  # pl 1, readable for readers
        renderings = {a["rendering"] for a in doc["annotations"]}
        assert renderings == {"plain", "anonymized", "redacted"}

    def test_generic_sees_only_entity_free_sections_and_counts(self):
        state = self._state()
        doc = render_document(state.context(), "gus", "case-100",
                              PseudonymScope("s"))
        assert [s["name"] for s in doc["sections"]] == ["Note"]
        assert doc["counts"]["person"] == 1
        blob = json.dumps(doc)
        assert "Mario" not in blob and "Falco" not in blob

    def test_no_standing_denied(self):
        state = self._state()
        with pytest.raises(PermissionDenied):
            render_document(state.context(), "stranger", "case-100",
                            PseudonymScope("s"))

    def test_unannotated_value_occurrences_scrubbed(self):
        doc = permission_fixture_doc()
        doc["doc_id"] = "case-101"
        # the informant's real name appears in running text, unannotated
        doc["sections"][1]["content"] += " Luigi Verdi was absent."
        state = make_state(docs=[doc], ownership=[
            {"user": "rhea", "doc_id": "case-101", "level": "reader"}])
        rendered = render_document(state.context(), "rhea", "case-101",
                                   PseudonymScope("s"))
        blob = json.dumps(rendered)
        assert "Luigi Verdi" not in blob


class TestQueryEntities:
    def test_monotone_information_across_users(self):
        state = make_state(docs=[permission_fixture_doc()],
                           ownership=permission_fixture_ownership())
        fields_by_user = {}
        for user in ("ada", "ed", "rhea", "gus"):
            hits = query_entities(state.context(), user, "person",
                                  {"name": "Mario", "surname": "Rossi"},
                                  PseudonymScope(user))
            view = hits[0]["view"]
            present = {k for k in ("mentions", "documents", "relationships")
                       if k in view}
            if "attributes" in view.get("entity", {}):
                present.add("attributes")
            fields_by_user[user] = present
        assert fields_by_user["gus"] <= fields_by_user["rhea"] \
            <= fields_by_user["ed"] <= fields_by_user["ada"]

    def test_permission_levels_match_demo_grid(self):
        state = make_state(docs=[permission_fixture_doc()],
                           ownership=permission_fixture_ownership())
        expected = {"ada": "full_control", "ed": "read_only",
                    "rhea": "read_anonymized", "gus": "count_only"}
        for user, permission in expected.items():
            hits = query_entities(state.context(), user, "person",
                                  {"name": "Mario", "surname": "Rossi"},
                                  PseudonymScope(user))
            assert hits[0]["view"]["permission"] == permission
