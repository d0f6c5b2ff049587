#!/usr/bin/env python3
"""Record live API responses into frontend/tests/fixtures/.

The frontend's contract tests check that its views render only data present
in these recorded responses, so they must be regenerated (and the tests
re-run) whenever a wire format changes.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from ereg import demo  # noqa: E402
from ereg.config import InstanceConfig  # noqa: E402
from ereg.instance import DistrictInstance, TopInstance  # noqa: E402
from ereg.transport import InProcessRegistry  # noqa: E402

FIXTURES = ROOT / "frontend" / "tests" / "fixtures"


def dump(name: str, payload) -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    (FIXTURES / f"{name}.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False,
                   default=str) + "\n")
    print(f"recorded {name}.json")


def build_federation(tmp: Path, ownership):
    registry = InProcessRegistry()
    top = TopInstance(InstanceConfig(role="top_level",
                                     data_dir=str(tmp / "top")),
                      registry=registry)
    registry.add("top", top)
    permissions = tmp / "permissions.json"
    permissions.write_text(json.dumps(
        demo.demo_access_tables(ownership=ownership).to_json()))
    districts = []
    for name, id_start in (("d1", 22), ("d2", 85)):
        district = DistrictInstance(
            InstanceConfig(role="district", data_dir=str(tmp / name),
                           parent="local:top", id_start=id_start,
                           permissions_path=str(permissions)),
            registry=registry, address=f"local:{name}")
        registry.add(name, district)
        districts.append(district)
    return top, districts


def main() -> int:
    import tempfile

    ownership = [{"user": "root", "doc_id": "*", "level": "owner"},
                 {"user": "rhea", "doc_id": "*", "level": "reader"},
                 {"user": "gus", "doc_id": "*", "level": "generic"}]
    with tempfile.TemporaryDirectory() as tmp_name:
        tmp = Path(tmp_name)

        # federation state: the two-district merge pending a human decision
        top, (d1, d2) = build_federation(tmp / "fed", ownership)
        d1.api_ingest(demo.fig3_district1_doc())
        d2.api_ingest(demo.fig3_district2_doc())
        queue = top.api_action_requests("open")
        dump("queue_open", queue)
        rid = queue["requests"][0]["request_id"]
        resolution = top.api_resolve_request(
            rid, {"kind": "merge", "global_id": "g-1-1"}, actor="root")
        dump("resolution", resolution)
        dump("bindings", top.api_global_bindings("g-1-1"))
        dump("query_result", d1.api_query_entities({
            "type": "person",
            "attributes": {"name": "Mario", "surname": "Rossi"},
            "as_user": "root"}))

        # exploration state: one document covering every privacy level
        top2, (e1, _e2) = build_federation(tmp / "explore",
                                           demo.permission_fixture_ownership())
        e1.api_ingest(demo.permission_fixture_doc())
        person = e1.state.register.lookup_by_identifier("person", {
            "name": "Mario", "surname": "Rossi", "birth_date": "1980-01-01",
            "birth_place": "Roma"}).local_id
        dump("entity_full", e1.api_entity_detail(person, "ada"))
        dump("entity_anonymized", e1.api_entity_detail(person, "rhea"))
        dump("entity_count_only", e1.api_entity_detail(person, "gus"))
        dump("document_reader", e1.api_document("case-100", "rhea"))
        dump("document_generic", e1.api_document("case-100", "gus"))
        dump("graph_depth2", e1.api_entity_graph(person, "ada", 2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
