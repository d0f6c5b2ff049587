#!/usr/bin/env python3
"""Render one fixture document for every ownership level and print what each
user actually sees: the full ownership x privacy grid in action, without
starting any server.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from ereg.access import PseudonymScope  # noqa: E402
from ereg.demo import (  # noqa: E402
    demo_access_tables,
    demo_metamodel,
    permission_fixture_doc,
    permission_fixture_ownership,
)
from ereg.errors import PermissionDenied  # noqa: E402
from ereg.query import render_document, visible_entity_view  # noqa: E402
from ereg.state import DistrictState  # noqa: E402


def main() -> int:
    mm = demo_metamodel()
    tables = demo_access_tables(mm, ownership=permission_fixture_ownership())
    state = DistrictState(iid=1, metamodel=mm, tables=tables)
    state.apply_command({"op": "ingest_document",
                         "doc": permission_fixture_doc(),
                         "use_rules": False, "strategy": None})

    entities = sorted(state.register.entities.values(),
                      key=lambda e: e.local_id)
    for user in ("ada", "ed", "rhea", "gus"):
        scope = PseudonymScope(f"session-{user}")
        print(f"\n======== user {user!r}")
        doc = render_document(state.context(), user, "case-100", scope)
        for section in doc["sections"]:
            print(f"  [{section['name']}] {section['content']}")
        for entity in entities:
            try:
                view = visible_entity_view(state.context(), user, entity, scope)
            except PermissionDenied:
                print(f"  {entity.type_name:12} -> denied")
                continue
            summary = view["entity"].get("attributes", view.get("counts"))
            print(f"  {entity.type_name:12} -> {view['permission']:16} "
                  f"{json.dumps(summary, ensure_ascii=False, default=str)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
