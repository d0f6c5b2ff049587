"""Built-in demonstration fixtures: a court-domain metamodel, permission
tables covering every ownership x privacy combination, gazetteer rules, and
small pre-annotated documents.  Used by the scenario files, the test suite,
and the demo scripts.
"""

from __future__ import annotations

from .access import AccessTables
from .metamodel import (
    AttributeDef,
    Cardinality,
    Direction,
    Metamodel,
    RelationshipDef,
    Rule,
    RuleKind,
)
from .values import ValueType

T = ValueType


def demo_metamodel() -> Metamodel:
    mm = Metamodel()
    mm.define_entity_type(
        "person",
        [AttributeDef("name", T.TEXT), AttributeDef("surname", T.TEXT),
         AttributeDef("birth_date", T.DATE), AttributeDef("birth_place", T.TEXT),
         AttributeDef("birth_place_code", T.TEXT), AttributeDef("birth_year", T.INTEGER),
         AttributeDef("fiscal_code", T.TEXT), AttributeDef("father", T.TEXT),
         AttributeDef("mother", T.TEXT), AttributeDef("eyes_color", T.TEXT),
         AttributeDef("gender", T.TEXT), AttributeDef("phd_date", T.DATE),
         AttributeDef("qualification", T.TEXT_LIST)],
        keys=[{"name", "surname", "birth_date", "birth_place"},
              {"fiscal_code"},
              {"name", "surname", "father", "mother"}],
        privacy_level=2)
    mm.define_entity_type(
        "law_article", [AttributeDef("code", T.TEXT)],
        keys=[{"code"}], privacy_level=0)
    mm.define_entity_type(
        "court", [AttributeDef("name", T.TEXT), AttributeDef("city", T.TEXT)],
        keys=[{"name"}], privacy_level=1)
    mm.define_entity_type(
        "informant", [AttributeDef("codename", T.TEXT),
                      AttributeDef("real_name", T.TEXT)],
        keys=[{"codename"}], privacy_level=3)

    person = lambda name, **kw: RelationshipDef(  # noqa: E731
        name=name, source_type="person", target_type="person", **kw)
    mm.define_relationship(person(
        "FatherOf", direction=Direction.MONO_CONTRADICTORY,
        target_cardinality=Cardinality.unbounded(),
        source_cardinality=Cardinality.bounded(1)))
    mm.define_relationship(person(
        "MotherOf", direction=Direction.MONO_CONTRADICTORY,
        target_cardinality=Cardinality.unbounded(),
        source_cardinality=Cardinality.bounded(1)))
    mm.define_relationship(person(
        "GrandfatherOf", direction=Direction.MONO_CONTRADICTORY,
        target_cardinality=Cardinality.unbounded(),
        source_cardinality=Cardinality.bounded(2)))
    mm.define_relationship(person(
        "FriendOf", direction=Direction.BIDIRECTIONAL))
    mm.define_relationship(person(
        "MarriedWith", direction=Direction.BIDIRECTIONAL,
        target_cardinality=Cardinality.bounded(1),
        source_cardinality=Cardinality.bounded(1), has_validity_period=True))
    mm.define_relationship(person(
        "InLoveWith", direction=Direction.MONO_COMPATIBLE))

    mm.declare_contradiction("FatherOf", "MotherOf")
    mm.declare_contradiction("FatherOf", "GrandfatherOf")
    mm.declare_contradiction("MotherOf", "GrandfatherOf")

    mm.add_rule(Rule(kind=RuleKind.DERIVATION, entity_type="person",
                     source_attribute="fiscal_code",
                     derived_bindings=(("birth_date", "fiscal_code_birth_date"),
                                       ("birth_place_code", "fiscal_code_birth_place"),
                                       ("gender", "fiscal_code_gender"))))
    mm.add_rule(Rule(kind=RuleKind.CONSTRAINT, entity_type="person",
                     attr_x="phd_date", operator=">=", attr_y="birth_date",
                     offset_years=20))
    return mm


def demo_permission_rules() -> list[dict]:
    """Grid exercising all five visibility outcomes (N=3, M=1)."""
    rows = []
    for pl in range(4):
        rows.append(("owner", pl, "full_control"))
    for pl, perm in ((0, "read_only"), (1, "read_only"), (2, "read_only"),
                     (3, "read_anonymized")):
        rows.append(("editor", pl, perm))
    for pl, perm in ((0, "read_only"), (1, "read_only"), (2, "read_anonymized"),
                     (3, "without_mentions")):
        rows.append(("reader", pl, perm))
    for pl, perm in ((0, "read_only"), (1, "without_mentions"), (2, "count_only"),
                     (3, "denied")):
        rows.append(("generic", pl, perm))
    return [{"ownership_level": o, "privacy_level": pl, "permission": p}
            for o, pl, p in rows]


def demo_access_tables(metamodel: Metamodel | None = None,
                       ownership: list[dict] | None = None) -> AccessTables:
    mm = metamodel or demo_metamodel()
    return AccessTables.from_json({
        "entity_type_privacy": [
            {"type_name": t.name, "privacy_level": t.privacy_level}
            for t in mm.entity_types.values()],
        "ownership": ownership or [],
        "permission_rules": demo_permission_rules(),
        "max_privacy_level": 3,
    })


def demo_gazetteer() -> list[dict]:
    return [
        {"pattern": r"art\.\s*(\d+)\s*c\.p\.", "tag": "law_article",
         "attribute_extractors": {"code": 1}},
        {"pattern": r"\b([A-Z]{6}\d{2}[ABCDEHLMPRST]\d{2}[A-Z]\d{3}[A-Z])\b",
         "tag": "person", "attribute_extractors": {"fiscal_code": 1}},
        {"pattern": r"Sig\.\s+([A-Z][a-zà-ù]+)\s+([A-Z][a-zà-ù]+)", "tag": "person",
         "attribute_extractors": {"name": 1, "surname": 2}},
    ]


def fig3_district1_doc() -> dict:
    """First district's view of the running example: a person carrying the
    full civil-registry identifier."""
    text = ("Preliminary hearing. Mario Rossi, born 1980-01-01 in Roma, "
            "appeared before the court regarding art. 642 c.p. claims.")
    return {
        "doc_id": "d1-001",
        "metadata": {"case_no": "123/2020", "year": "2020", "judge": "Verdi"},
        "sections": [{"name": "Preamble", "content": text}],
        "annotations": [
            {"tag": "person", "start": 21, "end": 32,
             "entity": {"type": "person",
                        "attributes": {"name": "Mario", "surname": "Rossi",
                                       "birth_date": "1980-01-01",
                                       "birth_place": "Roma"}}},
            {"tag": "law_article",
             "start": text.index("art. 642 c.p."),
             "end": text.index("art. 642 c.p.") + len("art. 642 c.p."),
             "entity": {"type": "law_article", "attributes": {"code": "642"}}},
        ],
    }


def permission_fixture_doc() -> dict:
    """One document mentioning an entity at every privacy level (0..3), with
    an entity-free closing section for the generic-ownership rendering."""
    body = ("Hearing at Tribunale di Milano. Mario Rossi appeared citing "
            "art. 642 c.p. Witness Falco testified in camera.")
    note = "Procedural note. The session adjourned until further notice."

    def span(needle):
        return body.index(needle), body.index(needle) + len(needle)

    return {
        "doc_id": "case-100",
        "metadata": {"case_no": "100/2022", "year": "2022"},
        "sections": [{"name": "Body", "content": body + " "},
                     {"name": "Note", "content": note}],
        "annotations": [
            {"tag": "court", "start": span("Tribunale di Milano")[0],
             "end": span("Tribunale di Milano")[1],
             "entity": {"type": "court",
                        "attributes": {"name": "Tribunale di Milano",
                                       "city": "Milano"}}},
            {"tag": "person", "start": span("Mario Rossi")[0],
             "end": span("Mario Rossi")[1],
             "entity": {"type": "person",
                        "attributes": {"name": "Mario", "surname": "Rossi",
                                       "birth_date": "1980-01-01",
                                       "birth_place": "Roma"}}},
            {"tag": "law_article", "start": span("art. 642 c.p.")[0],
             "end": span("art. 642 c.p.")[1],
             "entity": {"type": "law_article", "attributes": {"code": "642"}}},
            {"tag": "informant", "start": span("Falco")[0],
             "end": span("Falco")[1],
             "entity": {"type": "informant",
                        "attributes": {"codename": "Falco",
                                       "real_name": "Luigi Verdi"}}},
        ],
    }


def permission_fixture_ownership() -> list[dict]:
    return [{"user": "ada", "doc_id": "case-100", "level": "owner"},
            {"user": "ed", "doc_id": "case-100", "level": "editor"},
            {"user": "rhea", "doc_id": "case-100", "level": "reader"},
            {"user": "gus", "doc_id": "case-100", "level": "generic"}]


def stat_fixture_docs() -> list[dict]:
    """Divorce and contract cases with gendered plaintiffs for count queries."""
    people = [
        ("Anna", "Bianchi", "F", "divorce"), ("Luca", "Verdi", "M", "divorce"),
        ("Elena", "Neri", "F", "divorce"), ("Paola", "Gallo", "F", "divorce"),
        ("Marco", "Fontana", "M", "contract"),
    ]
    docs = []
    for i, (name, surname, gender, case_type) in enumerate(people, start=1):
        full = f"{name} {surname}"
        text = f"{full} filed the claim before the court."
        docs.append({
            "doc_id": f"stat-{i:03d}",
            "metadata": {"case_type": case_type, "year": "2023"},
            "sections": [{"name": "Body", "content": text}],
            "annotations": [
                {"tag": "person", "start": 0, "end": len(full),
                 "entity": {"type": "person",
                            "attributes": {"name": name, "surname": surname,
                                           "gender": gender,
                                           "birth_date": f"19{60 + i}-01-01",
                                           "birth_place": "Roma"}}}],
        })
    return docs


def fig3_district2_doc() -> dict:
    """Second district's view: same person identified through the parents."""
    text = ("Civil claim. Mario Rossi, son of Giuseppe Rossi and Anna "
            "Bianchi, born in 1980, filed an appeal.")
    return {
        "doc_id": "d2-001",
        "metadata": {"case_no": "77/2021", "year": "2021", "judge": "Neri"},
        "sections": [{"name": "Preamble", "content": text}],
        "annotations": [
            {"tag": "person", "start": 13, "end": 24,
             "entity": {"type": "person",
                        "attributes": {"name": "Mario", "surname": "Rossi",
                                       "birth_year": 1980,
                                       "father": "Giuseppe Rossi",
                                       "mother": "Anna Bianchi"}}},
        ],
    }
