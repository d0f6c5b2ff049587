"""Per-instance entity register: a typed attribute-value graph with key
uniqueness, relationship constraints, and the mention-driven upsert.

Mutations are deterministic: identical mention sequences rebuild identical
registers, ids included.  Local ids are never reused; ids retired by a merge
keep a forwarding record so stale references still resolve.

The register never talks to other stores directly; it records draft sync
events in ``event_log`` and the owning instance drains them into its outbox.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date

from . import events as ev
from .errors import (
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
    UnknownEntity,
    ValidationError,
)
from .metamodel import Direction, Metamodel
from .values import ValueType, hash_token, values_equal


@dataclass(frozen=True)
class Validity:
    """Inclusive date interval; an open end means still in force."""

    start: date
    end: date | None = None

    def overlaps(self, other: "Validity") -> bool:
        a_end = self.end or date.max
        b_end = other.end or date.max
        return self.start <= b_end and other.start <= a_end

    def to_json(self) -> dict:
        return {"start": self.start.isoformat(),
                "end": self.end.isoformat() if self.end else None}

    @staticmethod
    def from_json(raw) -> "Validity | None":
        if raw is None:
            return None
        return Validity(start=date.fromisoformat(raw["start"]),
                        end=date.fromisoformat(raw["end"]) if raw.get("end") else None)


@dataclass
class Entity:
    local_id: int
    instance_id: int
    type_name: str
    attributes: dict[str, object]
    provenance: set[tuple[str, str]] = field(default_factory=set)


@dataclass(frozen=True)
class RelationshipInstance:
    rel_name: str
    source_id: int
    target_id: int
    validity: Validity | None = None

    def touches(self, entity_id: int) -> bool:
        return entity_id in (self.source_id, self.target_id)

    def same_pair(self, source_id: int, target_id: int, symmetric: bool) -> bool:
        if (self.source_id, self.target_id) == (source_id, target_id):
            return True
        return symmetric and (self.target_id, self.source_id) == (source_id, target_id)

    def to_json(self) -> dict:
        return {"rel_name": self.rel_name, "source_id": self.source_id,
                "target_id": self.target_id,
                "validity": self.validity.to_json() if self.validity else None}


@dataclass
class RelationshipSpec:
    """A relationship carried by an incoming mention.  The other endpoint is
    an existing local id or an inline mention (type, attributes)."""

    rel_name: str
    other_id: int | None = None
    other_mention: tuple[str, dict] | None = None
    entity_is_source: bool = True
    validity: Validity | None = None

    @staticmethod
    def from_json(raw: dict) -> "RelationshipSpec":
        mention = raw.get("other_mention")
        return RelationshipSpec(
            rel_name=raw["rel_name"], other_id=raw.get("other_id"),
            other_mention=(mention["type"], mention["attributes"]) if mention else None,
            entity_is_source=raw.get("entity_is_source", True),
            validity=Validity.from_json(raw.get("validity")))


@dataclass
class CompatReport:
    """Attribute/relationship comparison in the three buckets conflict
    resolution needs: contradictory, coincident, and complementary."""

    contradictory: list[dict] = field(default_factory=list)
    coincident: list[str] = field(default_factory=list)
    complementary_existing: list[str] = field(default_factory=list)
    complementary_incoming: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def compatible(self) -> bool:
        return not self.contradictory and not self.notes

    def to_json(self) -> dict:
        return {"contradictory": self.contradictory, "coincident": self.coincident,
                "complementary_existing": self.complementary_existing,
                "complementary_incoming": self.complementary_incoming,
                "notes": self.notes, "compatible": self.compatible}


def compare_attribute_maps(metamodel: Metamodel, type_name: str,
                           existing: dict, incoming: dict) -> CompatReport:
    """Single-valued attributes must agree where both present; list-valued
    attributes are always compatible (their union is taken on enlargement)."""
    etype = metamodel.require_type(type_name)
    report = CompatReport()
    for name in sorted(set(existing) | set(incoming)):
        vt = etype.features[name].value_type
        if name in existing and name in incoming:
            if vt is ValueType.TEXT_LIST or values_equal(vt, existing[name], incoming[name]):
                report.coincident.append(name)
            else:
                report.contradictory.append({
                    "attribute": name,
                    "existing": str(existing[name]),
                    "incoming": str(incoming[name])})
        elif name in existing:
            report.complementary_existing.append(name)
        else:
            report.complementary_incoming.append(name)
    return report


@dataclass
class Candidate:
    local_id: int
    attr_score: int
    rel_score: int
    report: CompatReport

    def to_json(self) -> dict:
        return {"local_id": self.local_id, "attr_score": self.attr_score,
                "rel_score": self.rel_score, "report": self.report.to_json()}


def rank_candidates(metamodel: Metamodel, type_name: str, attributes: dict,
                    rel_endpoints: set[tuple[str, int, bool]],
                    records) -> list[Candidate]:
    """Shared ranking core: ``records`` yields (id, attributes, endpoint set)
    where an endpoint is (rel_name, other id, candidate_is_source).  Entities
    with a contradicting single-valued attribute are excluded; the rest rank
    by (equal attribute values desc, shared endpoints desc, id asc)."""
    etype = metamodel.require_type(type_name)
    out: list[Candidate] = []
    for record_id, record_attrs, endpoints in records:
        report = compare_attribute_maps(metamodel, type_name, record_attrs, attributes)
        if report.contradictory:
            continue
        attr_score = 0
        for name in report.coincident:
            vt = etype.features[name].value_type
            if vt is ValueType.TEXT_LIST:
                shared = {v.casefold() for v in record_attrs[name]} & \
                         {v.casefold() for v in attributes[name]}
                attr_score += len(shared)
            else:
                attr_score += 1
        rel_score = len(rel_endpoints & endpoints)
        out.append(Candidate(local_id=record_id, attr_score=attr_score,
                             rel_score=rel_score, report=report))
    out.sort(key=lambda c: (-c.attr_score, -c.rel_score, c.local_id))
    return out


def check_edge(metamodel: Metamodel, rel_name: str, source_id, target_id,
               validity: Validity | None, neighborhood, planned):
    """Constraint checks shared by the local and top-level registers.

    ``neighborhood`` holds every stored instance touching either endpoint;
    ``planned`` holds instances accepted earlier in the same operation.
    Ids are opaque (district local ids or global id strings).  Raises on any
    violation; returns the instance to store, or None for an exact duplicate
    (idempotent insert).
    """
    rdef = metamodel.require_relationship(rel_name)
    if rdef.has_validity_period and validity is None:
        raise MissingValidity(f"{rel_name} requires a validity period")
    if not rdef.has_validity_period and validity is not None:
        raise ValidationError(f"{rel_name} does not carry a validity period")
    if source_id == target_id:
        raise ValidationError(f"{rel_name} cannot relate an entity to itself")

    symmetric = rdef.direction is Direction.BIDIRECTIONAL
    pool = {id(r): r for r in neighborhood}
    for r in planned:
        pool[id(r)] = r
    pool_list = list(pool.values())

    candidate = RelationshipInstance(rel_name=rel_name, source_id=source_id,
                                     target_id=target_id, validity=validity)
    for r in pool_list:
        if r.rel_name == rel_name and r.same_pair(source_id, target_id, symmetric) \
                and r.validity == validity:
            return None  # exact duplicate: insert is a no-op

    if rdef.direction is Direction.MONO_CONTRADICTORY:
        for r in pool_list:
            if r.rel_name == rel_name and (r.source_id, r.target_id) == \
                    (target_id, source_id):
                raise ReverseDirectionViolation(
                    f"{rel_name}({target_id},{source_id}) already stored; the "
                    f"reverse direction is contradictory")

    for partner in sorted(metamodel.contradiction_partners(rel_name)):
        partner_sym = symmetric or metamodel.require_relationship(
            partner).direction is Direction.BIDIRECTIONAL
        for r in pool_list:
            if r.rel_name == partner and \
                    r.same_pair(source_id, target_id, partner_sym):
                raise ContradictionViolation(
                    f"{rel_name} and {partner} cannot coexist over "
                    f"({source_id},{target_id})")

    def concurrent(r: RelationshipInstance) -> bool:
        if not rdef.has_validity_period:
            return True
        return r.validity is not None and validity is not None \
            and r.validity.overlaps(validity)

    same_rel = [r for r in pool_list if r.rel_name == rel_name and concurrent(r)]
    if symmetric:
        degree_source = sum(1 for r in same_rel if r.touches(source_id))
        degree_target = sum(1 for r in same_rel if r.touches(target_id))
    else:
        degree_source = sum(1 for r in same_rel if r.source_id == source_id)
        degree_target = sum(1 for r in same_rel if r.target_id == target_id)
    if not rdef.target_cardinality.admits(degree_source):
        raise CardinalityViolation(
            f"{source_id} already linked to {degree_source} targets via {rel_name}")
    if not rdef.source_cardinality.admits(degree_target):
        raise CardinalityViolation(
            f"{target_id} already linked to {degree_target} sources via {rel_name}")
    return candidate


class OutcomeKind:
    CREATED = "created"
    MATCHED = "matched"
    ENLARGED = "enlarged"
    CONFLICT = "conflict"
    AMBIGUOUS = "ambiguous"


@dataclass
class UpsertOutcome:
    kind: str
    local_id: int | None = None
    added_attributes: list[str] = field(default_factory=list)
    added_relationships: int = 0
    report: CompatReport | None = None
    candidates: list[Candidate] = field(default_factory=list)
    violations: list = field(default_factory=list)

    @property
    def committed(self) -> bool:
        return self.kind in (OutcomeKind.CREATED, OutcomeKind.MATCHED,
                             OutcomeKind.ENLARGED)

    def to_json(self) -> dict:
        return {
            "kind": self.kind, "local_id": self.local_id,
            "added_attributes": self.added_attributes,
            "added_relationships": self.added_relationships,
            "report": self.report.to_json() if self.report else None,
            "candidates": [c.to_json() for c in self.candidates],
            "violations": [getattr(v, "to_json", lambda: str(v))() for v in self.violations],
        }


class EntityRegister:
    def __init__(self, metamodel: Metamodel, instance_id: int = 0,
                 id_start: int = 1, auto_create_on_ambiguous: bool = False):
        self.metamodel = metamodel
        self.instance_id = instance_id
        self.next_id = id_start
        self.auto_create_on_ambiguous = auto_create_on_ambiguous
        self.entities: dict[int, Entity] = {}
        self.relationships: list[RelationshipInstance] = []
        self.event_log: list[tuple[str, dict]] = []  # drained by the instance
        self._forward: dict[int, int] = {}
        self._key_index: dict[tuple[str, tuple[str, ...], tuple[str, ...]], int] = {}
        self._by_type: dict[str, list[int]] = {}
        self._rels_by_entity: dict[int, list[RelationshipInstance]] = {}

    # -- id plumbing -----------------------------------------------------------

    def resolve_id(self, local_id: int) -> int:
        seen = set()
        while local_id in self._forward:
            if local_id in seen:
                raise UnknownEntity(f"forwarding cycle at {local_id}")
            seen.add(local_id)
            local_id = self._forward[local_id]
        return local_id

    def has_entity(self, local_id: int) -> bool:
        try:
            return self.resolve_id(local_id) in self.entities
        except UnknownEntity:
            return False

    def get_entity(self, local_id: int) -> Entity:
        resolved = self.resolve_id(local_id)
        try:
            return self.entities[resolved]
        except KeyError:
            raise UnknownEntity(f"unknown entity {local_id}") from None

    def entities_of_type(self, type_name: str) -> list[Entity]:
        return [self.entities[i] for i in self._by_type.get(type_name, [])
                if i in self.entities]

    def relationships_of(self, local_id: int) -> list[RelationshipInstance]:
        return list(self._rels_by_entity.get(self.resolve_id(local_id), []))

    # -- key index ---------------------------------------------------------------

    def _key_signatures(self, type_name: str, attributes: dict):
        etype = self.metamodel.require_type(type_name)
        for key in self.metamodel.complete_keys(type_name, attributes):
            names = tuple(sorted(key))
            tokens = tuple(hash_token(etype.features[n].value_type, attributes[n])
                           for n in names)
            yield (type_name, names, tokens)

    def _index_entity_keys(self, entity: Entity) -> None:
        for sig in self._key_signatures(entity.type_name, entity.attributes):
            self._key_index[sig] = entity.local_id

    def _drop_entity_keys(self, entity: Entity) -> None:
        for sig in self._key_signatures(entity.type_name, entity.attributes):
            if self._key_index.get(sig) == entity.local_id:
                del self._key_index[sig]

    def _key_collisions(self, type_name: str, attributes: dict,
                        own_id: int | None) -> list[int]:
        hits = []
        for sig in self._key_signatures(type_name, attributes):
            found = self._key_index.get(sig)
            if found is not None and found != own_id and found not in hits:
                hits.append(found)
        return hits

    # -- lookup --------------------------------------------------------------------

    def lookup_by_identifier(self, type_name: str, key_values: dict) -> Entity | None:
        etype = self.metamodel.require_type(type_name)
        names = frozenset(key_values)
        if names not in etype.keys:
            raise NotAKey(f"{sorted(names)} is not a declared key of {type_name}")
        canon = {n: self.metamodel.validate_value(etype.features[n], v)
                 for n, v in key_values.items()}
        sig_names = tuple(sorted(names))
        sig = (type_name, sig_names,
               tuple(hash_token(etype.features[n].value_type, canon[n])
                     for n in sig_names))
        found = self._key_index.get(sig)
        return self.entities.get(self.resolve_id(found)) if found is not None else None

    def _endpoints_of(self, local_id: int) -> set[tuple[str, int, bool]]:
        out = set()
        for inst in self._rels_by_entity.get(local_id, []):
            symmetric = self.metamodel.require_relationship(
                inst.rel_name).direction is Direction.BIDIRECTIONAL
            if inst.source_id == local_id:
                out.add((inst.rel_name, inst.target_id, True))
                if symmetric:
                    out.add((inst.rel_name, inst.target_id, False))
            if inst.target_id == local_id:
                out.add((inst.rel_name, inst.source_id, False))
                if symmetric:
                    out.add((inst.rel_name, inst.source_id, True))
        return out

    def find_candidates(self, type_name: str, partial_attributes: dict,
                        relationships: list[RelationshipSpec] = ()) -> list[Candidate]:
        canon = self.metamodel.validate_attributes(type_name, partial_attributes)
        wanted: set[tuple[str, int, bool]] = set()
        for spec in relationships:
            if spec.other_id is not None and self.has_entity(spec.other_id):
                wanted.add((spec.rel_name, self.resolve_id(spec.other_id),
                            spec.entity_is_source))
        records = ((e.local_id, e.attributes, self._endpoints_of(e.local_id))
                   for e in self.entities_of_type(type_name))
        return rank_candidates(self.metamodel, type_name, canon, wanted, records)

    # -- relationship constraints -----------------------------------------------

    def _validate_relationship(self, rel_name: str, source_id: int, target_id: int,
                               validity: Validity | None,
                               planned: list[RelationshipInstance]):
        """Raises on any violation; returns the instance to store, or None
        when an identical instance already exists (idempotent insert)."""
        rdef = self.metamodel.require_relationship(rel_name)
        source = self.get_entity(source_id)
        target = self.get_entity(target_id)
        source_id, target_id = source.local_id, target.local_id
        if source.type_name != rdef.source_type or target.type_name != rdef.target_type:
            raise ValidationError(
                f"{rel_name} links {rdef.source_type}->{rdef.target_type}, got "
                f"{source.type_name}->{target.type_name}")
        neighborhood = self._rels_by_entity.get(source_id, []) + \
            self._rels_by_entity.get(target_id, [])
        return check_edge(self.metamodel, rel_name, source_id, target_id,
                          validity, neighborhood, planned)

    def _store_relationship(self, inst: RelationshipInstance, emit: bool = True):
        self.relationships.append(inst)
        self._rels_by_entity.setdefault(inst.source_id, []).append(inst)
        if inst.target_id != inst.source_id:
            self._rels_by_entity.setdefault(inst.target_id, []).append(inst)
        if emit:
            self.event_log.append((ev.RELATIONSHIP_ADDED, inst.to_json()))

    def add_relationship(self, rel_name: str, source_id: int, target_id: int,
                         validity: Validity | None = None
                         ) -> RelationshipInstance | None:
        inst = self._validate_relationship(rel_name, self.resolve_id(source_id),
                                           self.resolve_id(target_id), validity, [])
        if inst is not None:
            self._store_relationship(inst)
        return inst

    # -- snapshots / events --------------------------------------------------------

    def snapshot(self, entity: Entity) -> dict:
        return {
            "local_id": entity.local_id,
            "type_name": entity.type_name,
            "attributes": self.metamodel.attributes_to_json(
                entity.type_name, entity.attributes),
            "complete_keys": [sorted(k) for k in self.metamodel.complete_keys(
                entity.type_name, entity.attributes)],
            "provenance": sorted([list(p) for p in entity.provenance]),
        }

    def _emit_entity(self, kind: str, entity: Entity) -> None:
        self.event_log.append((kind, self.snapshot(entity)))

    # -- upsert ------------------------------------------------------------------

    def _resolve_spec_endpoints(self, specs, provenance=None) -> tuple[list, list]:
        """Resolve every spec's other endpoint, upserting inline mentions
        (which inherit the host mention's provenance, since they were named
        in the same document).  Returns (resolved specs, blockers) where a
        blocker is a spec whose inline mention could not be committed."""
        resolved, blockers = [], []
        for spec in specs:
            if spec.other_id is not None:
                if not self.has_entity(spec.other_id):
                    blockers.append((spec, "unknown endpoint"))
                    continue
                resolved.append((spec, self.resolve_id(spec.other_id)))
            elif spec.other_mention is not None:
                mention_type, mention_attrs = spec.other_mention
                outcome = self.upsert_from_mention(mention_type, mention_attrs,
                                                   provenance=provenance)
                if not outcome.committed:
                    blockers.append((spec, f"endpoint mention {outcome.kind}"))
                    continue
                resolved.append((spec, outcome.local_id))
            else:
                blockers.append((spec, "no endpoint given"))
        return resolved, blockers

    def upsert_from_mention(self, type_name: str, attributes: dict,
                            relationships=(), provenance=None) -> UpsertOutcome:
        """Mention-driven insert-or-extend.

        With a complete identifier present: exact lookup, then create /
        enlarge / conflict.  Without one: ranked candidate search, answered
        with an ambiguity for a human to settle (unless the register is
        configured to auto-create, or there are no candidates at all).
        """
        canon = self.metamodel.validate_attributes(type_name, attributes)
        enriched, rule_violations = self.metamodel.apply_rules(type_name, canon)
        if rule_violations:
            return UpsertOutcome(kind=OutcomeKind.CONFLICT,
                                 violations=list(rule_violations))

        resolved_specs, blockers = self._resolve_spec_endpoints(
            list(relationships), provenance)
        if blockers:
            report = CompatReport(notes=[f"{spec.rel_name}: {why}"
                                         for spec, why in blockers])
            return UpsertOutcome(kind=OutcomeKind.CONFLICT, report=report)

        matches: list[int] = []
        for sig in self._key_signatures(type_name, enriched):
            found = self._key_index.get(sig)
            if found is not None:
                found = self.resolve_id(found)
                if found not in matches:
                    matches.append(found)

        if len(matches) > 1:
            report = CompatReport(notes=[
                f"identifiers match distinct entities {sorted(matches)}"])
            return UpsertOutcome(kind=OutcomeKind.CONFLICT, report=report,
                                 candidates=[Candidate(m, 0, 0, CompatReport())
                                             for m in sorted(matches)])
        if len(matches) == 1:
            return self._enlarge(matches[0], type_name, enriched, resolved_specs,
                                 provenance)

        has_key = bool(self.metamodel.complete_keys(type_name, enriched))
        if not has_key:
            # only candidates sharing something observable are worth a human
            # decision; vacuous zero-overlap compatibility never blocks a create
            candidates = [c for c in self.find_candidates(
                type_name, enriched, [s for s, _ in resolved_specs])
                if c.attr_score or c.rel_score]
            if candidates and not self.auto_create_on_ambiguous:
                return UpsertOutcome(kind=OutcomeKind.AMBIGUOUS, candidates=candidates)
        return self._create(type_name, enriched, resolved_specs, provenance)

    def _plan_relationships(self, entity_id: int, specs_resolved):
        planned: list[RelationshipInstance] = []
        for spec, other_id in specs_resolved:
            if spec.entity_is_source:
                source_id, target_id = entity_id, other_id
            else:
                source_id, target_id = other_id, entity_id
            inst = self._validate_relationship(spec.rel_name, source_id, target_id,
                                               spec.validity, planned)
            if inst is not None:
                planned.append(inst)
        return planned

    def _create(self, type_name: str, attributes: dict, specs_resolved,
                provenance) -> UpsertOutcome:
        entity_id = self.next_id
        entity = Entity(local_id=entity_id, instance_id=self.instance_id,
                        type_name=type_name, attributes=dict(attributes),
                        provenance={tuple(provenance)} if provenance else set())
        self.entities[entity_id] = entity  # visible to relationship validation
        try:
            planned = self._plan_relationships(entity_id, specs_resolved)
        except (CardinalityViolation, ContradictionViolation,
                ReverseDirectionViolation, MissingValidity) as exc:
            del self.entities[entity_id]
            return UpsertOutcome(kind=OutcomeKind.CONFLICT,
                                 report=CompatReport(notes=[str(exc)]),
                                 violations=[exc])
        except Exception:
            del self.entities[entity_id]
            raise
        self.next_id += 1
        self._by_type.setdefault(type_name, []).append(entity_id)
        self._index_entity_keys(entity)
        self._emit_entity(ev.ENTITY_CREATED, entity)
        for inst in planned:
            self._store_relationship(inst)
        return UpsertOutcome(kind=OutcomeKind.CREATED, local_id=entity_id,
                             added_attributes=sorted(attributes),
                             added_relationships=len(planned))

    def _merged_attributes(self, type_name: str, existing: dict, incoming: dict,
                           report: CompatReport) -> tuple[dict, list[str]]:
        etype = self.metamodel.require_type(type_name)
        merged = dict(existing)
        added: list[str] = []
        for name in report.complementary_incoming:
            merged[name] = incoming[name]
            added.append(name)
        for name in report.coincident:
            if etype.features[name].value_type is ValueType.TEXT_LIST:
                seen = {v.casefold() for v in merged[name]}
                extra = [v for v in incoming[name] if v.casefold() not in seen]
                if extra:
                    merged[name] = list(merged[name]) + extra
                    added.append(name)
        return merged, added

    def _enlarge(self, entity_id: int, type_name: str, incoming: dict,
                 specs_resolved, provenance) -> UpsertOutcome:
        entity = self.entities[entity_id]
        if entity.type_name != type_name:
            report = CompatReport(notes=[
                f"identifier collision across types {entity.type_name}/{type_name}"])
            return UpsertOutcome(kind=OutcomeKind.CONFLICT, report=report)
        report = compare_attribute_maps(self.metamodel, type_name,
                                        entity.attributes, incoming)
        if not report.compatible:
            return UpsertOutcome(kind=OutcomeKind.CONFLICT, local_id=entity_id,
                                 report=report)
        merged, added = self._merged_attributes(type_name, entity.attributes,
                                                incoming, report)
        collisions = self._key_collisions(type_name, merged, entity_id)
        if collisions:
            report.notes.append(
                f"enlargement would collide with entities {collisions} on a key")
            return UpsertOutcome(kind=OutcomeKind.CONFLICT, local_id=entity_id,
                                 report=report)
        try:
            planned = self._plan_relationships(entity_id, specs_resolved)
        except (CardinalityViolation, ContradictionViolation,
                ReverseDirectionViolation, MissingValidity) as exc:
            report.notes.append(str(exc))
            return UpsertOutcome(kind=OutcomeKind.CONFLICT, local_id=entity_id,
                                 report=report, violations=[exc])

        self._drop_entity_keys(entity)
        entity.attributes = merged
        self._index_entity_keys(entity)
        if provenance:
            entity.provenance.add(tuple(provenance))
        for inst in planned:
            self._store_relationship(inst)
        kind = OutcomeKind.ENLARGED if (added or planned) else OutcomeKind.MATCHED
        self._emit_entity(ev.ENTITY_ENLARGED, entity)
        return UpsertOutcome(kind=kind, local_id=entity_id,
                             added_attributes=sorted(added),
                             added_relationships=len(planned), report=report)

    def enlarge_with(self, entity_id: int, attributes: dict, relationships=(),
                     provenance=None) -> UpsertOutcome:
        """Fold a mention into a specific existing entity (the human's
        choice for an ambiguous mention): attributes must be compatible."""
        entity = self.get_entity(entity_id)
        canon = self.metamodel.validate_attributes(entity.type_name, attributes)
        enriched, rule_violations = self.metamodel.apply_rules(entity.type_name,
                                                               canon)
        if rule_violations:
            return UpsertOutcome(kind=OutcomeKind.CONFLICT,
                                 violations=list(rule_violations))
        resolved_specs, blockers = self._resolve_spec_endpoints(
            list(relationships), provenance)
        if blockers:
            return UpsertOutcome(kind=OutcomeKind.CONFLICT, report=CompatReport(
                notes=[f"{spec.rel_name}: {why}" for spec, why in blockers]))
        return self._enlarge(entity.local_id, entity.type_name, enriched,
                             resolved_specs, provenance)

    def import_entity(self, record: dict) -> int:
        """Deep-copy a foreign entity record; reuses an existing entity when
        an identifier matches.  Raises EntityCopyFailed when the record
        cannot be committed without a human decision."""
        specs = [RelationshipSpec.from_json(r)
                 for r in record.get("relationships", [])]
        outcome = self.upsert_from_mention(record["type_name"],
                                           record["attributes"], specs)
        if not outcome.committed:
            raise EntityCopyFailed(f"import ended in {outcome.kind}",
                                   outcome=outcome.to_json())
        return outcome.local_id

    # -- merge / split ---------------------------------------------------------

    def merge_entities(self, keep_id: int, absorb_id: int) -> Entity:
        keep_id, absorb_id = self.resolve_id(keep_id), self.resolve_id(absorb_id)
        if keep_id == absorb_id:
            return self.get_entity(keep_id)  # idempotent via forwarding
        keep, absorb = self.get_entity(keep_id), self.get_entity(absorb_id)
        if keep.type_name != absorb.type_name:
            raise EntityTypeMismatch(
                f"cannot merge {keep.type_name} with {absorb.type_name}")
        report = compare_attribute_maps(self.metamodel, keep.type_name,
                                        keep.attributes, absorb.attributes)
        if not report.compatible:
            raise IncompatibleAttributes("attribute sets clash",
                                         report=report.to_json())
        merged, _ = self._merged_attributes(keep.type_name, keep.attributes,
                                            absorb.attributes, report)
        collisions = self._key_collisions(keep.type_name, merged, keep_id)
        collisions = [c for c in collisions if c != absorb_id]
        if collisions:
            raise IncompatibleAttributes(
                f"merged identifiers collide with entities {collisions}")

        moved = [r for r in self.relationships if r.touches(absorb_id)]
        survivors = [r for r in self.relationships if not r.touches(absorb_id)]
        rewritten: list[RelationshipInstance] = []
        for r in moved:
            src = keep_id if r.source_id == absorb_id else r.source_id
            tgt = keep_id if r.target_id == absorb_id else r.target_id
            if src == tgt:
                raise IncompatibleAttributes(
                    f"merge would turn {r.rel_name} into a self-relationship")
            rewritten.append(RelationshipInstance(r.rel_name, src, tgt, r.validity))

        # re-validate the whole rewritten set against the surviving graph
        saved = (self.relationships, self._rels_by_entity)
        self.relationships = list(survivors)
        self._rels_by_entity = {}
        for r in survivors:
            self._rels_by_entity.setdefault(r.source_id, []).append(r)
            if r.target_id != r.source_id:
                self._rels_by_entity.setdefault(r.target_id, []).append(r)
        try:
            accepted: list[RelationshipInstance] = []
            for r in rewritten:
                inst = self._validate_relationship(r.rel_name, r.source_id,
                                                   r.target_id, r.validity, accepted)
                if inst is not None:
                    accepted.append(inst)
        except Exception as exc:
            self.relationships, self._rels_by_entity = saved
            raise IncompatibleAttributes(
                f"merged relationships violate constraints: {exc}") from exc
        for inst in accepted:
            self._store_relationship(inst, emit=False)

        self._drop_entity_keys(keep)
        self._drop_entity_keys(absorb)
        keep.attributes = merged
        keep.provenance |= absorb.provenance
        self._index_entity_keys(keep)
        del self.entities[absorb_id]
        self._by_type[absorb.type_name].remove(absorb_id)
        self._forward[absorb_id] = keep_id
        self.event_log.append((ev.MERGE_PERFORMED, {
            "keep_local_id": keep_id, "absorb_local_id": absorb_id,
            "snapshot": self.snapshot(keep)}))
        return keep

    def split_entity(self, entity_id: int, mentions_a, mentions_b,
                     attributes_a: dict, attributes_b: dict,
                     relationships_to_b=()) -> tuple[Entity, Entity]:
        entity_id = self.resolve_id(entity_id)
        entity = self.get_entity(entity_id)
        part_a = {tuple(m) for m in mentions_a}
        part_b = {tuple(m) for m in mentions_b}
        if not part_a or not part_b:
            raise IncompletePartition("both sides need at least one mention")
        if part_a & part_b or (part_a | part_b) != entity.provenance:
            raise IncompletePartition(
                "mention partition must cover the entity's provenance exactly")
        canon_a = self.metamodel.validate_attributes(entity.type_name, attributes_a)
        canon_b = self.metamodel.validate_attributes(entity.type_name, attributes_b)

        to_b = {(r[0], r[1], r[2]) for r in relationships_to_b}
        mine = [r for r in self.relationships if r.touches(entity_id)]
        keep_rest = [r for r in self.relationships if not r.touches(entity_id)]

        for attrs in (canon_a, canon_b):
            collisions = self._key_collisions(entity.type_name, attrs, entity_id)
            if collisions:
                raise ValidationError(
                    f"split side identifiers collide with entities {collisions}")

        self._drop_entity_keys(entity)
        del self.entities[entity_id]
        self._by_type[entity.type_name].remove(entity_id)

        halves = []
        for attrs, part in ((canon_a, part_a), (canon_b, part_b)):
            new = Entity(local_id=self.next_id, instance_id=self.instance_id,
                         type_name=entity.type_name, attributes=dict(attrs),
                         provenance=set(part))
            self.next_id += 1
            self.entities[new.local_id] = new
            self._by_type.setdefault(entity.type_name, []).append(new.local_id)
            self._index_entity_keys(new)
            halves.append(new)
        side_a, side_b = halves

        self.relationships = keep_rest
        self._rels_by_entity = {}
        for r in keep_rest:
            self._rels_by_entity.setdefault(r.source_id, []).append(r)
            if r.target_id != r.source_id:
                self._rels_by_entity.setdefault(r.target_id, []).append(r)
        for r in mine:
            owner = side_b.local_id if (r.rel_name, r.source_id, r.target_id) in to_b \
                else side_a.local_id
            src = owner if r.source_id == entity_id else r.source_id
            tgt = owner if r.target_id == entity_id else r.target_id
            self._store_relationship(
                RelationshipInstance(r.rel_name, src, tgt, r.validity), emit=False)

        self.event_log.append((ev.SPLIT_PERFORMED, {
            "old_local_id": entity_id,
            "parts": [self.snapshot(side_a), self.snapshot(side_b)]}))
        return side_a, side_b

    def delete_entity(self, local_id: int) -> None:
        entity = self.get_entity(local_id)
        if entity.provenance:
            raise ReferentialIntegrity(
                f"entity {entity.local_id} still has bound annotations")
        self._drop_entity_keys(entity)
        self.relationships = [r for r in self.relationships
                              if not r.touches(entity.local_id)]
        self._rels_by_entity.pop(entity.local_id, None)
        for rels in self._rels_by_entity.values():
            rels[:] = [r for r in rels if not r.touches(entity.local_id)]
        del self.entities[entity.local_id]
        self._by_type[entity.type_name].remove(entity.local_id)

    # -- audits / export ---------------------------------------------------------

    def audit_key_uniqueness(self) -> list[str]:
        seen: dict[tuple, int] = {}
        problems = []
        for entity in self.entities.values():
            for sig in self._key_signatures(entity.type_name, entity.attributes):
                if sig in seen and seen[sig] != entity.local_id:
                    problems.append(
                        f"key {sig} shared by {seen[sig]} and {entity.local_id}")
                seen[sig] = entity.local_id
        return problems

    def revalidate_relationships(self) -> list[str]:
        """Re-check every stored instance against the metamodel from scratch."""
        saved = (self.relationships, self._rels_by_entity)
        instances = list(self.relationships)
        self.relationships, self._rels_by_entity = [], {}
        problems = []
        try:
            for r in instances:
                try:
                    inst = self._validate_relationship(r.rel_name, r.source_id,
                                                       r.target_id, r.validity, [])
                except Exception as exc:
                    problems.append(f"{r.to_json()}: {exc}")
                else:
                    if inst is not None:
                        self._store_relationship(inst, emit=False)
        finally:
            self.relationships, self._rels_by_entity = saved
        return problems

    def to_json(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "next_id": self.next_id,
            "entities": [self.snapshot(self.entities[i])
                         for i in sorted(self.entities)],
            "relationships": sorted((r.to_json() for r in self.relationships),
                                    key=lambda r: (r["rel_name"], r["source_id"],
                                                   r["target_id"], str(r["validity"]))),
            "forwarding": {str(k): v for k, v in sorted(self._forward.items())},
        }
