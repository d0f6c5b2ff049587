"""Entity and document views with per-document permission filtering, the
mention/relationship graph walk, and privacy-exempt count queries.

Every rendering decision funnels through the access tables: an entity's
aggregated view takes the most permissive rendering the user earned through
any document mentioning it, while each mention keeps the permission of its
own document.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .access import (
    AccessTables,
    Permission,
    PseudonymScope,
    apply_visibility,
    at_least,
    mask_attributes,
    strongest,
)
from .corpus import CorpusStore
from .errors import InvalidDepth, PermissionDenied, UnknownAttribute
from .metamodel import Metamodel
from .register import Entity, EntityRegister
from .values import to_json as value_to_json


@dataclass
class QueryContext:
    metamodel: Metamodel
    corpus: CorpusStore
    register: EntityRegister
    tables: AccessTables
    graph_depth_max: int = 3
    graph_node_cap: int = 500


def _attributes_json(ctx: QueryContext, entity: Entity) -> dict:
    return ctx.metamodel.attributes_to_json(entity.type_name, entity.attributes)


def _relationship_rows(ctx: QueryContext, entity: Entity) -> list[dict]:
    rows = []
    for inst in sorted(ctx.register.relationships_of(entity.local_id),
                       key=lambda r: (r.rel_name, r.source_id, r.target_id)):
        other = inst.target_id if inst.source_id == entity.local_id else inst.source_id
        other_type = ctx.register.get_entity(other).type_name \
            if ctx.register.has_entity(other) else None
        rows.append({"rel": inst.rel_name, "other": other,
                     "other_type": other_type,
                     "role": "source" if inst.source_id == entity.local_id
                             else "target",
                     "validity": inst.validity.to_json() if inst.validity else None})
    return rows


def full_entity_view(ctx: QueryContext, entity: Entity) -> dict:
    """Unrestricted detail view; the raw material for visibility filtering."""
    mentions, documents = [], []
    seen_docs = []
    for ann in ctx.corpus.annotations_for_entity(entity.local_id):
        mentions.append({"iid": ann.instance_id, "doc_id": ann.doc_id,
                         "ann_id": ann.ann_id, "start": ann.start, "end": ann.end,
                         "text": ctx.corpus.mention_text(ann.ann_id)})
        if ann.doc_id not in seen_docs:
            seen_docs.append(ann.doc_id)
            documents.append({"iid": ann.instance_id, "doc_id": ann.doc_id,
                              "metadata": dict(ctx.corpus.get_document(
                                  ann.doc_id).metadata)})
    relationships = _relationship_rows(ctx, entity)
    return {
        "entity": {"ref": entity.local_id, "type": entity.type_name,
                   "attributes": _attributes_json(ctx, entity)},
        "relationships": relationships,
        "mentions": mentions,
        "documents": documents,
        "counts": {"mentions": len(mentions), "documents": len(documents),
                   "relationships": len(relationships)},
    }


def entity_permission(ctx: QueryContext, user: str, entity: Entity) -> Permission:
    doc_ids = {a.doc_id for a in ctx.corpus.annotations_for_entity(entity.local_id)}
    doc_ids |= {doc_id for doc_id, _ann in entity.provenance}
    if not doc_ids:
        return Permission.DENIED  # nothing grounds the user's standing
    return ctx.tables.best_permission(user, sorted(doc_ids), entity.type_name)


def visible_entity_view(ctx: QueryContext, user: str, entity: Entity,
                        scope: PseudonymScope) -> dict:
    """One of the five rendering outcomes, chosen per source document and
    aggregated at the most permissive level earned; raises PermissionDenied
    for the error outcome."""
    best = entity_permission(ctx, user, entity)
    view = full_entity_view(ctx, entity)

    filtered_mentions, filtered_docs, kept_docs = [], [], set()
    for mention in view["mentions"]:
        doc_perm = ctx.tables.resolve_permission(user, mention["doc_id"],
                                                 entity.type_name)
        if not at_least(doc_perm, Permission.READ_ANONYMIZED):
            continue
        row = dict(mention)
        if doc_perm is Permission.READ_ANONYMIZED:
            row["text"] = scope.pseudonym(str(entity.local_id), entity.type_name)
        filtered_mentions.append(row)
        kept_docs.add(mention["doc_id"])
    for doc in view["documents"]:
        if doc["doc_id"] not in kept_docs:
            continue
        doc_perm = ctx.tables.resolve_permission(user, doc["doc_id"],
                                                 entity.type_name)
        row = dict(doc)
        if not at_least(doc_perm, Permission.READ_ONLY):
            row.pop("metadata", None)
        filtered_docs.append(row)
    view["mentions"] = filtered_mentions
    view["documents"] = filtered_docs
    return apply_visibility(view, best, scope)


def query_entities(ctx: QueryContext, user: str, type_name: str,
                   attributes: dict, scope: PseudonymScope) -> list[dict]:
    """Local hits for an attribute query: compatible candidates with at
    least one point of overlap, each rendered per the user's permissions.
    Denied candidates are silently dropped; PermissionDenied is raised only
    when every candidate was denied."""
    candidates = [c for c in ctx.register.find_candidates(type_name, attributes)
                  if c.attr_score or c.rel_score]
    hits, denied = [], 0
    for candidate in candidates:
        entity = ctx.register.get_entity(candidate.local_id)
        try:
            rendered = visible_entity_view(ctx, user, entity, scope)
        except PermissionDenied:
            denied += 1
            continue
        hits.append({"match": {"attr_score": candidate.attr_score,
                               "rel_score": candidate.rel_score},
                     "view": rendered})
    if candidates and denied == len(candidates):
        raise PermissionDenied("permissions too low for every matching entity")
    return hits


# -- entity graph -------------------------------------------------------------


def _doc_node(ctx: QueryContext, user: str, doc_id: str) -> tuple[str, dict] | None:
    """Document node rendered at the strongest permission the user holds
    over the entity types mentioned in it; CountOnly yields an opaque node."""
    anns = ctx.corpus.annotations_for_doc(doc_id)
    type_names = sorted({ctx.register.get_entity(a.entity_ref).type_name
                         for a in anns if a.entity_ref is not None
                         and ctx.register.has_entity(a.entity_ref)})
    perms = [ctx.tables.resolve_permission(user, doc_id, t) for t in type_names] \
        or [ctx.tables.resolve_permission(user, doc_id, "")]
    best = strongest(perms)
    if best is Permission.DENIED:
        return None
    counts: dict[str, int] = {}
    for ann in anns:
        if ann.entity_ref is not None and ctx.register.has_entity(ann.entity_ref):
            t = ctx.register.get_entity(ann.entity_ref).type_name
            counts[t] = counts.get(t, 0) + 1
    if best is Permission.COUNT_ONLY:
        return (f"d:{doc_id}", {"kind": "document_counts", "doc_id": doc_id,
                                "counts": counts})
    node = {"kind": "document", "doc_id": doc_id, "counts": counts}
    if at_least(best, Permission.READ_ONLY):
        node["metadata"] = dict(ctx.corpus.get_document(doc_id).metadata)
    return (f"d:{doc_id}", node)


def _entity_node(ctx: QueryContext, user: str, entity: Entity,
                 scope: PseudonymScope) -> tuple[str, dict] | None:
    best = entity_permission(ctx, user, entity)
    if best is Permission.DENIED:
        return None
    if at_least(best, Permission.READ_ONLY):
        node_id = f"e:{entity.local_id}"
        node = {"kind": "entity", "ref": entity.local_id,
                "type": entity.type_name,
                "attributes": _attributes_json(ctx, entity)}
    else:
        token = scope.pseudonym(str(entity.local_id), entity.type_name)
        node_id = f"e:{token}"
        node = {"kind": "entity", "ref": token, "type": entity.type_name}
        if best is Permission.READ_ANONYMIZED:
            node["attributes"] = mask_attributes(_attributes_json(ctx, entity),
                                                 token)
        elif best is Permission.COUNT_ONLY:
            node["counts"] = {"mentions": ctx.corpus.entity_mention_count(
                entity.local_id)}
    return (node_id, node)


def navigate_graph(ctx: QueryContext, user: str, start_entity: int, depth: int,
                   scope: PseudonymScope) -> dict:
    """Breadth-first expansion over mention and relationship edges, each node
    filtered by the user's permission before inclusion.  Deterministic order:
    entities by local id, then documents by id."""
    if depth < 1 or depth > ctx.graph_depth_max:
        raise InvalidDepth(f"depth must be in 1..{ctx.graph_depth_max}")
    start = ctx.register.get_entity(start_entity)
    rendered = _entity_node(ctx, user, start, scope)
    if rendered is None:
        raise PermissionDenied("permissions too low for the start entity")

    nodes: dict[str, dict] = {rendered[0]: rendered[1]}
    node_ids: dict[tuple[str, object], str] = {("e", start.local_id): rendered[0]}
    edges: list[dict] = []
    frontier: list[tuple[str, object]] = [("e", start.local_id)]
    seen: set[tuple[str, object]] = {("e", start.local_id)}

    def try_add(kind: str, key, render) -> str | None:
        if (kind, key) in node_ids:
            return node_ids[(kind, key)]
        if len(nodes) >= ctx.graph_node_cap:
            return None
        result = render()
        if result is None:
            return None
        node_id, node = result
        nodes[node_id] = node
        node_ids[(kind, key)] = node_id
        return node_id

    for _ in range(depth):
        next_frontier: list[tuple[str, object]] = []
        entity_hops = sorted(k for k in frontier if k[0] == "e")
        doc_hops = sorted(k for k in frontier if k[0] == "d")
        for kind, key in entity_hops + doc_hops:
            if kind == "e":
                entity = ctx.register.get_entity(key)
                here = node_ids[(kind, key)]
                for ann in ctx.corpus.annotations_for_entity(key):
                    doc_node_id = try_add("d", ann.doc_id,
                                          lambda d=ann.doc_id: _doc_node(
                                              ctx, user, d))
                    if doc_node_id is None:
                        continue
                    edge = {"kind": "mention", "source": here,
                            "target": doc_node_id}
                    if edge not in edges:
                        edges.append(edge)
                    if ("d", ann.doc_id) not in seen:
                        seen.add(("d", ann.doc_id))
                        next_frontier.append(("d", ann.doc_id))
                for row in _relationship_rows(ctx, entity):
                    other = row["other"]
                    if not ctx.register.has_entity(other):
                        continue
                    other_node_id = try_add(
                        "e", other,
                        lambda o=other: _entity_node(
                            ctx, user, ctx.register.get_entity(o), scope))
                    if other_node_id is None:
                        continue
                    edge = {"kind": "relationship", "rel": row["rel"],
                            "source": here if row["role"] == "source"
                                      else other_node_id,
                            "target": other_node_id if row["role"] == "source"
                                      else here}
                    if edge not in edges:
                        edges.append(edge)
                    if ("e", other) not in seen:
                        seen.add(("e", other))
                        next_frontier.append(("e", other))
            else:
                here = node_ids[(kind, key)]
                if nodes[here].get("kind") == "document_counts":
                    continue  # opaque nodes do not expand
                for ann in ctx.corpus.annotations_for_doc(key):
                    if ann.entity_ref is None or \
                            not ctx.register.has_entity(ann.entity_ref):
                        continue
                    ref = ctx.register.resolve_id(ann.entity_ref)
                    entity_node_id = try_add(
                        "e", ref,
                        lambda r=ref: _entity_node(
                            ctx, user, ctx.register.get_entity(r), scope))
                    if entity_node_id is None:
                        continue
                    edge = {"kind": "mention", "source": entity_node_id,
                            "target": here}
                    if edge not in edges:
                        edges.append(edge)
                    if ("e", ref) not in seen:
                        seen.add(("e", ref))
                        next_frontier.append(("e", ref))
        frontier = next_frontier
        if not frontier:
            break
    return {"nodes": nodes, "edges": edges}


# -- statistics ----------------------------------------------------------------


def stat_query(ctx: QueryContext, user: str, group_by: str,
               type_name: str | None = None,
               metadata_filters: dict | None = None,
               tag: str | None = None) -> dict:
    """Counts of distinct entities grouped by an attribute (or by type),
    over documents passing the metadata/annotation filters.  Bypasses
    per-entity permissions; only requires a known user."""
    if not ctx.tables.is_known_user(user):
        raise PermissionDenied(f"unknown user {user!r}")
    if group_by != "type":
        if type_name is None:
            raise UnknownAttribute("group_by attribute requires a type_name")
        etype = ctx.metamodel.require_type(type_name)
        if group_by not in etype.features:
            raise UnknownAttribute(f"{type_name!r} has no attribute {group_by!r}")

    if metadata_filters or tag:
        hits = ctx.corpus.search(metadata_filters=metadata_filters or None,
                                 tag=tag)
        doc_ids = {h.doc_id for h in hits}
    else:
        doc_ids = set(ctx.corpus.documents)

    entity_ids: set[int] = set()
    for doc_id in doc_ids:
        for ann in ctx.corpus.annotations_for_doc(doc_id):
            if ann.entity_ref is None or not ctx.register.has_entity(ann.entity_ref):
                continue
            entity = ctx.register.get_entity(ann.entity_ref)
            if type_name is not None and entity.type_name != type_name:
                continue
            entity_ids.add(entity.local_id)

    counts: dict[str, int] = {}
    for local_id in entity_ids:
        entity = ctx.register.get_entity(local_id)
        if group_by == "type":
            key = entity.type_name
        else:
            value = entity.attributes.get(group_by)
            if value is None:
                key = "unknown"
            else:
                etype = ctx.metamodel.require_type(entity.type_name)
                key = str(value_to_json(etype.features[group_by].value_type, value))
        counts[key] = counts.get(key, 0) + 1
    return {"group_by": group_by, "counts": dict(sorted(counts.items()))}


# -- document rendering ----------------------------------------------------------


def _replace_spans(text: str, replacements: list[tuple[int, int, str, dict]]
                   ) -> tuple[str, list[dict]]:
    """Apply non-overlapping span replacements; returns the rendered text and
    the surviving annotation rows with offsets into the rendered text."""
    replacements = sorted(replacements, key=lambda r: (r[0], r[1]))
    out, spans = [], []
    cursor, delta = 0, 0
    last_end = -1
    for start, end, new_text, meta in replacements:
        if start < last_end:
            continue  # overlapping replacement loses deterministically
        out.append(text[cursor:start])
        rendered_start = start + delta
        out.append(new_text)
        if meta is not None:
            spans.append({**meta, "start": rendered_start,
                          "end": rendered_start + len(new_text)})
        delta += len(new_text) - (end - start)
        cursor = end
        last_end = end
    out.append(text[cursor:])
    return "".join(out), spans


def render_document(ctx: QueryContext, user: str, doc_id: str,
                    scope: PseudonymScope) -> dict:
    """Document view under the user's ownership: generic users see only
    sections free of non-public entities plus counts; everyone else sees the
    text with each mention rendered per that entity's permission, and the
    values of shielded entities scrubbed from the running text."""
    doc = ctx.corpus.get_document(doc_id)
    ownership = ctx.tables.ownership_level(user, doc_id)
    if ownership is None:
        raise PermissionDenied(f"no standing on document {doc_id}")

    anns = ctx.corpus.annotations_for_doc(doc_id)
    counts: dict[str, int] = {}
    for ann in anns:
        counts[ann.tag] = counts.get(ann.tag, 0) + 1

    if ownership.value == "generic":
        visible_sections = []
        for section in doc.sections:
            lo, hi = section.char_offset, section.char_offset + len(section.content)
            has_private = any(
                ann.start < hi and ann.end > lo and
                ctx.tables.privacy_level(
                    ctx.register.get_entity(ann.entity_ref).type_name
                    if ann.entity_ref is not None
                    and ctx.register.has_entity(ann.entity_ref) else ann.tag) > 0
                for ann in anns)
            if not has_private:
                visible_sections.append({"name": section.name,
                                         "content": section.content})
        return {"doc_id": doc_id, "metadata": dict(doc.metadata),
                "sections": visible_sections, "counts": counts,
                "annotations": []}

    replacements: list[tuple[int, int, str, dict]] = []
    scrub_values: list[str] = []
    for ann in anns:
        if ann.entity_ref is None or not ctx.register.has_entity(ann.entity_ref):
            replacements.append((ann.start, ann.end, doc.text[ann.start:ann.end],
                                 {"tag": ann.tag, "rendering": "plain"}))
            continue
        entity = ctx.register.get_entity(ann.entity_ref)
        perm = ctx.tables.resolve_permission(user, doc_id, entity.type_name)
        if at_least(perm, Permission.READ_ONLY):
            replacements.append((ann.start, ann.end, doc.text[ann.start:ann.end],
                                 {"tag": ann.tag, "entity_ref": entity.local_id,
                                  "rendering": "plain"}))
            continue
        token = scope.pseudonym(str(entity.local_id), entity.type_name)
        if perm is Permission.READ_ANONYMIZED:
            replacements.append((ann.start, ann.end, token,
                                 {"tag": ann.tag, "entity_ref": token,
                                  "rendering": "anonymized"}))
        else:
            replacements.append((ann.start, ann.end, f"[{entity.type_name}]",
                                 {"tag": ann.tag, "rendering": "redacted"}))
        for value in entity.attributes.values():
            for item in (value if isinstance(value, list) else [value]):
                text_value = str(item)
                if len(text_value) >= 3:
                    scrub_values.append(text_value)

    # scrub shielded values from the running text, outside annotation spans,
    # in the same replacement pass so annotation offsets stay consistent
    occupied = [(s, e) for s, e, _t, _m in replacements]
    for value in sorted(set(scrub_values), key=len, reverse=True):
        for m in re.finditer(re.escape(value), doc.text, flags=re.IGNORECASE):
            if any(m.start() < e and m.end() > s for s, e in occupied):
                continue
            replacements.append((m.start(), m.end(), "[…]", None))
            occupied.append((m.start(), m.end()))

    rendered_sections = []
    all_spans: list[dict] = []
    for section in doc.sections:
        lo, hi = section.char_offset, section.char_offset + len(section.content)
        local = [(s - lo, e - lo, t, m) for s, e, t, m in replacements
                 if lo <= s and e <= hi]
        content, spans = _replace_spans(section.content, local)
        rendered_sections.append({"name": section.name, "content": content})
        for span in spans:
            span["section"] = section.name
        all_spans.extend(spans)

    return {"doc_id": doc_id, "metadata": dict(doc.metadata),
            "sections": rendered_sections, "counts": counts,
            "annotations": all_spans}
