"""Shared object-template definitions: entity types with identifying keys,
typed attributes, relationship types with direction/cardinality/validity
constraints, contradiction pairs, and derivation/constraint rules.

Definitions are append-only: nothing is ever removed or redefined, only
extended additively, so data accepted once stays valid.  One metamodel
instance is authored at the top level and distributed read-only to every
district.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from . import fiscal_code
from .errors import (
    DuplicateRelationship,
    DuplicateType,
    InvalidRule,
    MultiValuedKeyAttribute,
    SelfContradictionRejected,
    TypeMismatch,
    UnknownAttribute,
    UnknownEntityType,
    UnknownKeyAttribute,
    UnknownRelationship,
    ValidationError,
)
from .values import ValueType, add_years, canonicalize, from_json, to_json, values_equal

UNBOUNDED = 0  # cardinality sentinel: no upper bound


@dataclass(frozen=True)
class AttributeDef:
    name: str
    value_type: ValueType

    @property
    def multi_valued(self) -> bool:
        return self.value_type is ValueType.TEXT_LIST

    def to_json(self) -> dict:
        return {"name": self.name, "value_type": self.value_type.value,
                "multi_valued": self.multi_valued}


@dataclass
class EntityType:
    """Object template: named features plus identifying key combinations.

    ``keys`` may be empty for abstract types; every key is a non-empty set
    of single-valued feature names.  ``privacy_level`` is owned by access
    control but rides on the type since the table is global.
    """

    name: str
    features: dict[str, AttributeDef]
    keys: tuple[frozenset[str], ...]
    privacy_level: int = 0

    def key_list(self) -> list[list[str]]:
        return [sorted(k) for k in self.keys]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "features": [f.to_json() for f in self.features.values()],
            "keys": self.key_list(),
            "privacy_level": self.privacy_level,
        }


class Direction(str, Enum):
    BIDIRECTIONAL = "bidirectional"
    MONO_CONTRADICTORY = "mono_contradictory"
    MONO_COMPATIBLE = "mono_compatible"


@dataclass(frozen=True)
class Cardinality:
    """Upper bound on linked entities; ``bound == UNBOUNDED`` means no limit."""

    bound: int = UNBOUNDED

    def admits(self, count: int) -> bool:
        return self.bound == UNBOUNDED or count < self.bound

    @staticmethod
    def bounded(n: int) -> "Cardinality":
        if n < 1:
            raise ValidationError(f"cardinality bound must be >= 1, got {n}")
        return Cardinality(n)

    @staticmethod
    def unbounded() -> "Cardinality":
        return Cardinality(UNBOUNDED)

    def to_json(self):
        return None if self.bound == UNBOUNDED else self.bound

    @staticmethod
    def from_json(raw) -> "Cardinality":
        return Cardinality.unbounded() if raw in (None, 0) else Cardinality.bounded(int(raw))


@dataclass(frozen=True)
class RelationshipDef:
    name: str
    source_type: str
    target_type: str
    direction: Direction
    target_cardinality: Cardinality = Cardinality(UNBOUNDED)  # targets per source
    source_cardinality: Cardinality = Cardinality(UNBOUNDED)  # sources per target
    has_validity_period: bool = False

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "source_type": self.source_type,
            "target_type": self.target_type,
            "direction": self.direction.value,
            "target_cardinality": self.target_cardinality.to_json(),
            "source_cardinality": self.source_cardinality.to_json(),
            "has_validity_period": self.has_validity_period,
        }


@dataclass(frozen=True)
class ContradictionPair:
    """Unordered pair of relationship names that cannot coexist over the
    same ordered (source, target) entity pair."""

    rel_a: str
    rel_b: str

    def names(self) -> frozenset[str]:
        return frozenset((self.rel_a, self.rel_b))

    def other(self, name: str) -> str:
        return self.rel_b if name == self.rel_a else self.rel_a

    def to_json(self) -> dict:
        return {"rel_a": self.rel_a, "rel_b": self.rel_b, "label": "CONTR"}


class RuleKind(str, Enum):
    DERIVATION = "derivation"
    CONSTRAINT = "constraint"


# Built-in extraction functions available to derivation rules, keyed by id.
EXTRACTION_FUNCTIONS = {
    "fiscal_code_birth_date": fiscal_code.extract_birth_date,
    "fiscal_code_birth_place": fiscal_code.extract_birth_place_code,
    "fiscal_code_gender": fiscal_code.extract_gender,
}

COMPARISON_OPS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


@dataclass(frozen=True)
class Rule:
    """Either derives absent attributes from a source attribute via built-in
    extraction functions, or constrains two date attributes with a year
    offset (``attr_x OP attr_y + offset_years``)."""

    kind: RuleKind
    entity_type: str
    source_attribute: str | None = None
    derived_bindings: tuple[tuple[str, str], ...] = ()  # (target attr, function id)
    attr_x: str | None = None
    operator: str | None = None
    attr_y: str | None = None
    offset_years: int = 0

    def to_json(self) -> dict:
        if self.kind is RuleKind.DERIVATION:
            return {"kind": self.kind.value, "entity_type": self.entity_type,
                    "source_attribute": self.source_attribute,
                    "derived_bindings": [list(b) for b in self.derived_bindings]}
        return {"kind": self.kind.value, "entity_type": self.entity_type,
                "attr_x": self.attr_x, "operator": self.operator,
                "attr_y": self.attr_y, "offset_years": self.offset_years}


@dataclass(frozen=True)
class ConstraintViolationReport:
    rule: str
    message: str

    def to_json(self) -> dict:
        return {"rule": self.rule, "message": self.message}


class Metamodel:
    """Registry of every definition; append-only."""

    def __init__(self):
        self.entity_types: dict[str, EntityType] = {}
        self.relationships: dict[str, RelationshipDef] = {}
        self.contradictions: list[ContradictionPair] = []
        self.rules: list[Rule] = []

    def __deepcopy__(self, memo):
        # written only during bootstrap, immutable shared data afterwards
        return self

    # -- definition ----------------------------------------------------------

    def define_entity_type(self, name: str, features, keys,
                           privacy_level: int = 0) -> EntityType:
        if name in self.entity_types:
            raise DuplicateType(f"entity type already defined: {name}")
        feature_map: dict[str, AttributeDef] = {}
        for item in features:
            attr = item if isinstance(item, AttributeDef) else AttributeDef(*item)
            if attr.name in feature_map:
                raise ValidationError(f"duplicate attribute name: {attr.name}")
            feature_map[attr.name] = attr
        key_sets = []
        for key in keys:
            names = frozenset(key)
            if not names:
                raise UnknownKeyAttribute("empty key")
            for attr_name in names:
                if attr_name not in feature_map:
                    raise UnknownKeyAttribute(
                        f"key attribute {attr_name!r} not a feature of {name!r}")
                if feature_map[attr_name].multi_valued:
                    raise MultiValuedKeyAttribute(
                        f"key attribute {attr_name!r} is multi-valued")
            if names not in key_sets:
                key_sets.append(names)
        etype = EntityType(name=name, features=feature_map, keys=tuple(key_sets),
                           privacy_level=privacy_level)
        self.entity_types[name] = etype
        return etype

    def extend_entity_type(self, name: str, features) -> EntityType:
        """Additive feature extension; existing features are untouchable."""
        etype = self.require_type(name)
        for item in features:
            attr = item if isinstance(item, AttributeDef) else AttributeDef(*item)
            if attr.name in etype.features:
                raise ValidationError(f"feature already defined: {attr.name}")
            etype.features[attr.name] = attr
        return etype

    def define_relationship(self, rel: RelationshipDef) -> RelationshipDef:
        if rel.name in self.relationships:
            raise DuplicateRelationship(f"relationship already defined: {rel.name}")
        for tname in (rel.source_type, rel.target_type):
            if tname not in self.entity_types:
                raise UnknownEntityType(f"unknown entity type: {tname}")
        self.relationships[rel.name] = rel
        return rel

    def declare_contradiction(self, rel_a: str, rel_b: str) -> ContradictionPair:
        for name in (rel_a, rel_b):
            if name not in self.relationships:
                raise UnknownRelationship(f"unknown relationship: {name}")
        if rel_a == rel_b and \
                self.relationships[rel_a].direction is not Direction.MONO_CONTRADICTORY:
            raise SelfContradictionRejected(
                f"{rel_a} cannot contradict itself unless it is mono-contradictory")
        pair = ContradictionPair(rel_a, rel_b)
        if not any(p.names() == pair.names() for p in self.contradictions):
            self.contradictions.append(pair)
        return pair

    def add_rule(self, rule: Rule) -> Rule:
        etype = self.require_type(rule.entity_type)
        if rule.kind is RuleKind.DERIVATION:
            if rule.source_attribute not in etype.features:
                raise InvalidRule(f"unknown source attribute: {rule.source_attribute}")
            for target, fn_id in rule.derived_bindings:
                if target not in etype.features:
                    raise InvalidRule(f"unknown derived attribute: {target}")
                if fn_id not in EXTRACTION_FUNCTIONS:
                    raise InvalidRule(f"unknown extraction function: {fn_id}")
        else:
            for attr in (rule.attr_x, rule.attr_y):
                if attr not in etype.features:
                    raise InvalidRule(f"unknown constraint attribute: {attr}")
                if etype.features[attr].value_type is not ValueType.DATE:
                    raise InvalidRule(f"constraint attribute {attr!r} is not a date")
            if rule.operator not in COMPARISON_OPS:
                raise InvalidRule(f"unknown operator: {rule.operator}")
        self.rules.append(rule)
        return rule

    # -- lookup ----------------------------------------------------------------

    def require_type(self, name: str) -> EntityType:
        try:
            return self.entity_types[name]
        except KeyError:
            raise UnknownEntityType(f"unknown entity type: {name}") from None

    def require_relationship(self, name: str) -> RelationshipDef:
        try:
            return self.relationships[name]
        except KeyError:
            raise UnknownRelationship(f"unknown relationship: {name}") from None

    def contradiction_partners(self, rel_name: str) -> set[str]:
        partners = set()
        for pair in self.contradictions:
            if rel_name in pair.names():
                partners.add(pair.other(rel_name))
        return partners

    # -- validation --------------------------------------------------------------

    def validate_value(self, attr: AttributeDef, value):
        return canonicalize(attr.value_type, value)

    def attribute_def(self, type_name: str, attr_name: str) -> AttributeDef:
        etype = self.require_type(type_name)
        try:
            return etype.features[attr_name]
        except KeyError:
            raise UnknownAttribute(
                f"{type_name!r} has no attribute {attr_name!r}") from None

    def validate_attributes(self, type_name: str, attributes: dict) -> dict:
        """Canonicalize a full attribute map; unknown names are rejected."""
        out = {}
        for name, raw in attributes.items():
            out[name] = self.validate_value(self.attribute_def(type_name, name), raw)
        return out

    def complete_keys(self, type_name: str, attributes: dict) -> list[frozenset[str]]:
        etype = self.require_type(type_name)
        return [k for k in etype.keys if k <= attributes.keys()]

    def apply_rules(self, type_name: str, attributes: dict
                    ) -> tuple[dict, list[ConstraintViolationReport]]:
        """Populate absent attributes via derivation rules and evaluate
        constraints; never overwrites, runs derivations to a fixpoint so the
        result is independent of rule ordering."""
        etype = self.require_type(type_name)
        current = dict(attributes)
        violations: list[ConstraintViolationReport] = []
        rules = [r for r in self.rules if r.entity_type == type_name]

        changed = True
        while changed:
            changed = False
            proposals: dict[str, list[tuple[str, object]]] = {}
            for rule in rules:
                if rule.kind is not RuleKind.DERIVATION:
                    continue
                source = current.get(rule.source_attribute)
                if source is None:
                    continue
                for target, fn_id in rule.derived_bindings:
                    try:
                        value = EXTRACTION_FUNCTIONS[fn_id](source)
                    except TypeMismatch as exc:
                        violations.append(ConstraintViolationReport(
                            rule=fn_id, message=str(exc)))
                        continue
                    if value is None:
                        continue
                    value = canonicalize(etype.features[target].value_type, value)
                    proposals.setdefault(target, []).append((fn_id, value))
            for target in sorted(proposals):
                candidates = proposals[target]
                vt = etype.features[target].value_type
                distinct = []
                for _, value in candidates:
                    if not any(values_equal(vt, value, seen) for seen in distinct):
                        distinct.append(value)
                if len(distinct) > 1:
                    violations.append(ConstraintViolationReport(
                        rule="derivation", message=f"conflicting derivations for {target}"))
                    continue
                derived = distinct[0]
                if target not in current:
                    current[target] = derived
                    changed = True
                elif not values_equal(vt, current[target], derived):
                    violations.append(ConstraintViolationReport(
                        rule="derivation",
                        message=f"{target} present as {current[target]!r} but "
                                f"derives to {derived!r}"))

        for rule in rules:
            if rule.kind is not RuleKind.CONSTRAINT:
                continue
            x, y = current.get(rule.attr_x), current.get(rule.attr_y)
            if x is None or y is None:
                continue  # evaluated only when both operands present
            shifted = add_years(y, rule.offset_years)
            if not COMPARISON_OPS[rule.operator](x, shifted):
                violations.append(ConstraintViolationReport(
                    rule="constraint",
                    message=f"{rule.attr_x}={x.isoformat()} violates "
                            f"{rule.attr_x} {rule.operator} {rule.attr_y} + "
                            f"{rule.offset_years}y"))

        dedup: list[ConstraintViolationReport] = []
        for v in sorted(violations, key=lambda v: (v.rule, v.message)):
            if v not in dedup:
                dedup.append(v)
        return current, dedup

    # -- value (de)serialization ---------------------------------------------

    def attributes_to_json(self, type_name: str, attributes: dict) -> dict:
        etype = self.require_type(type_name)
        return {name: to_json(etype.features[name].value_type, value)
                for name, value in attributes.items()}

    def attributes_from_json(self, type_name: str, raw: dict) -> dict:
        etype = self.require_type(type_name)
        out = {}
        for name, value in raw.items():
            if name not in etype.features:
                raise UnknownAttribute(f"{type_name!r} has no attribute {name!r}")
            out[name] = from_json(etype.features[name].value_type, value)
        return out

    # -- serialization ---------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "entity_types": [t.to_json() for t in self.entity_types.values()],
            "relationships": [r.to_json() for r in self.relationships.values()],
            "contradictions": [c.to_json() for c in self.contradictions],
            "rules": [r.to_json() for r in self.rules],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Metamodel":
        mm = cls()
        for t in data.get("entity_types", []):
            features = [AttributeDef(f["name"], ValueType(f["value_type"]))
                        for f in t["features"]]
            mm.define_entity_type(t["name"], features, t.get("keys", []),
                                  privacy_level=t.get("privacy_level", 0))
        for r in data.get("relationships", []):
            mm.define_relationship(RelationshipDef(
                name=r["name"], source_type=r["source_type"],
                target_type=r["target_type"], direction=Direction(r["direction"]),
                target_cardinality=Cardinality.from_json(r.get("target_cardinality")),
                source_cardinality=Cardinality.from_json(r.get("source_cardinality")),
                has_validity_period=r.get("has_validity_period", False)))
        for c in data.get("contradictions", []):
            mm.declare_contradiction(c["rel_a"], c["rel_b"])
        for r in data.get("rules", []):
            kind = RuleKind(r["kind"])
            if kind is RuleKind.DERIVATION:
                mm.add_rule(Rule(kind=kind, entity_type=r["entity_type"],
                                 source_attribute=r["source_attribute"],
                                 derived_bindings=tuple(
                                     (t, f) for t, f in r["derived_bindings"])))
            else:
                mm.add_rule(Rule(kind=kind, entity_type=r["entity_type"],
                                 attr_x=r["attr_x"], operator=r["operator"],
                                 attr_y=r["attr_y"],
                                 offset_years=r.get("offset_years", 0)))
        return mm

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "Metamodel":
        return cls.from_json(json.loads(Path(path).read_text()))
