"""Permission tables, effective-permission resolution, visibility filtering,
and deterministic anonymization.

Three tables drive everything: entity-type privacy levels (0 = public),
per-document user ownership, and the ownership x privacy permission grid.
Missing cells default to denied.  Permissions are totally ordered so that
each level's rendered field set contains every lower level's.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import PermissionDenied, PseudonymCollision, ValidationError


class OwnershipLevel(str, Enum):
    OWNER = "owner"
    EDITOR = "editor"
    READER = "reader"
    GENERIC = "generic"


class Permission(str, Enum):
    FULL_CONTROL = "full_control"
    READ_ONLY = "read_only"
    READ_ANONYMIZED = "read_anonymized"
    WITHOUT_MENTIONS = "without_mentions"
    COUNT_ONLY = "count_only"
    DENIED = "denied"


# descending information order
PERMISSION_ORDER = [
    Permission.FULL_CONTROL,
    Permission.READ_ONLY,
    Permission.READ_ANONYMIZED,
    Permission.WITHOUT_MENTIONS,
    Permission.COUNT_ONLY,
    Permission.DENIED,
]
_RANK = {p: i for i, p in enumerate(PERMISSION_ORDER)}


def strongest(permissions) -> Permission:
    perms = list(permissions)
    if not perms:
        return Permission.DENIED
    return min(perms, key=lambda p: _RANK[p])


def at_least(permission: Permission, floor: Permission) -> bool:
    return _RANK[permission] <= _RANK[floor]


# Field presence per permission level; each set contains all lower sets.
VISIBLE_FIELDS = {
    Permission.FULL_CONTROL: {"attributes", "relationships", "mentions",
                              "documents", "counts"},
    Permission.READ_ONLY: {"attributes", "relationships", "mentions",
                           "documents", "counts"},
    Permission.READ_ANONYMIZED: {"attributes", "relationships", "mentions",
                                 "documents", "counts"},
    Permission.WITHOUT_MENTIONS: {"attributes", "relationships", "counts"},
    Permission.COUNT_ONLY: {"counts"},
    Permission.DENIED: set(),
}


@dataclass
class AccessTables:
    """The per-instance permission configuration."""

    privacy: dict[str, int] = field(default_factory=dict)  # type name -> level
    ownership: dict[tuple[str, str], OwnershipLevel] = field(default_factory=dict)
    rules: dict[tuple[OwnershipLevel, int], Permission] = field(default_factory=dict)
    max_privacy_level: int = 3

    def privacy_level(self, type_name: str) -> int:
        return self.privacy.get(type_name, 0)

    def ownership_level(self, user: str, doc_id: str) -> OwnershipLevel | None:
        hit = self.ownership.get((user, doc_id))
        if hit is not None:
            return hit
        return self.ownership.get((user, "*"))

    def is_known_user(self, user: str) -> bool:
        return any(u == user for u, _ in self.ownership)

    def resolve_permission(self, user: str, doc_id: str, type_name: str) -> Permission:
        """Pure lookup: PermissionRule[ownership, privacy]; default denied."""
        own = self.ownership_level(user, doc_id)
        if own is None:
            return Permission.DENIED
        return self.rules.get((own, self.privacy_level(type_name)), Permission.DENIED)

    def best_permission(self, user: str, doc_ids, type_name: str) -> Permission:
        return strongest(self.resolve_permission(user, d, type_name) for d in doc_ids)

    # -- serialization --------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "entity_type_privacy": [
                {"type_name": t, "privacy_level": pl}
                for t, pl in sorted(self.privacy.items())],
            "ownership": [
                {"user": u, "doc_id": d, "level": lv.value}
                for (u, d), lv in sorted(self.ownership.items())],
            "permission_rules": [
                {"ownership_level": o.value, "privacy_level": pl,
                 "permission": p.value}
                for (o, pl), p in sorted(self.rules.items(),
                                         key=lambda kv: (kv[0][0].value, kv[0][1]))],
            "max_privacy_level": self.max_privacy_level,
        }

    @classmethod
    def from_json(cls, data: dict) -> "AccessTables":
        tables = cls(max_privacy_level=data.get("max_privacy_level", 3))
        for row in data.get("entity_type_privacy", []):
            pl = int(row["privacy_level"])
            if pl < 0:
                raise ValidationError("privacy level must be >= 0")
            tables.privacy[row["type_name"]] = pl
        for row in data.get("ownership", []):
            key = (row["user"], row["doc_id"])
            if key in tables.ownership:
                raise ValidationError(f"duplicate ownership entry for {key}")
            tables.ownership[key] = OwnershipLevel(row["level"])
        for row in data.get("permission_rules", []):
            key = (OwnershipLevel(row["ownership_level"]), int(row["privacy_level"]))
            tables.rules[key] = Permission(row["permission"])
        return tables

    @classmethod
    def load(cls, path: str | Path) -> "AccessTables":
        return cls.from_json(json.loads(Path(path).read_text()))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))


# -- anonymization -------------------------------------------------------------


class PseudonymScope:
    """Issues pseudonyms that are stable within one scope (query session) so
    coreference survives, different across scopes so sessions cannot be
    linked, and never derived from attribute values."""

    def __init__(self, scope_key: str):
        self.scope_key = scope_key
        self._issued: dict[str, str] = {}   # entity ref -> pseudonym
        self._reverse: dict[str, str] = {}  # pseudonym -> entity ref

    def pseudonym(self, entity_ref: str, type_name: str) -> str:
        ref = str(entity_ref)
        hit = self._issued.get(ref)
        if hit is not None:
            return hit
        digest = hashlib.sha256(
            f"{self.scope_key}\x1f{type_name}\x1f{ref}".encode()).hexdigest()[:8]
        prefix = re.sub(r"[^a-z]", "", type_name.lower())[:4].upper() or "ENT"
        token = f"{prefix}-{digest}"
        claimed = self._reverse.get(token)
        if claimed is not None and claimed != ref:
            raise PseudonymCollision(f"pseudonym {token} already issued")
        self._issued[ref] = token
        self._reverse[token] = ref
        return token


_DIGITS = re.compile(r"\d")


def mask_value(value, pseudonym: str, attr_name: str):
    """Replace an attribute value with a non-leaking stand-in: digits become
    '#' for numeric/date shapes, text becomes a pseudonym-qualified token."""
    if isinstance(value, bool):
        return "#"
    if isinstance(value, (int, float)):
        return _DIGITS.sub("#", str(value))
    if isinstance(value, list):
        return [mask_value(v, pseudonym, attr_name) for v in value]
    text = str(value)
    if text and _DIGITS.search(text) and all(
            ch.isdigit() or not ch.isalnum() for ch in text):
        return _DIGITS.sub("#", text)  # date-like / numeric string: keep shape
    return f"{pseudonym}/{attr_name}"


def mask_attributes(attributes: dict, pseudonym: str) -> dict:
    return {name: mask_value(value, pseudonym, name)
            for name, value in attributes.items()}


def apply_visibility(view: dict, permission: Permission,
                     scope: PseudonymScope | None = None) -> dict:
    """Filter an assembled entity view down to one of the five outcomes.

    ``view`` carries the full-detail rendering: ``entity`` (ref, type,
    attributes), ``relationships``, ``mentions`` (doc, span, text),
    ``documents`` and ``counts``.  Raises PermissionDenied for the denied
    outcome so callers produce the error payload.
    """
    if permission is Permission.DENIED:
        raise PermissionDenied("permissions too low for this entity")

    entity = view.get("entity", {})
    counts = dict(view.get("counts", {}))
    out: dict = {"permission": permission.value, "counts": counts}
    if permission is Permission.COUNT_ONLY:
        out["entity"] = {"type": entity.get("type")}
        return out

    attributes = dict(entity.get("attributes", {}))
    relationships = [dict(r) for r in view.get("relationships", [])]
    if permission is Permission.READ_ANONYMIZED:
        if scope is None:
            scope = PseudonymScope("default")
        token = scope.pseudonym(str(entity.get("ref")), entity.get("type", ""))
        attributes = mask_attributes(attributes, token)
        for rel in relationships:
            rel["other"] = scope.pseudonym(str(rel.get("other")),
                                           rel.get("other_type", ""))
        out["entity"] = {"ref": token, "type": entity.get("type"),
                         "attributes": attributes}
    else:
        out["entity"] = {"ref": entity.get("ref"), "type": entity.get("type"),
                         "attributes": attributes}
    out["relationships"] = relationships

    if permission is Permission.WITHOUT_MENTIONS:
        return out

    mentions = [dict(m) for m in view.get("mentions", [])]
    if permission is Permission.READ_ANONYMIZED:
        token = out["entity"]["ref"]
        for m in mentions:
            if "text" in m:
                m["text"] = token
    out["mentions"] = mentions
    out["documents"] = [dict(d) for d in view.get("documents", [])]
    if permission is Permission.FULL_CONTROL:
        out["editable"] = True
    if permission is Permission.READ_ONLY:
        out["read_only"] = True
    return out


def scan_for_values(payload, values) -> list[str]:
    """Leak scanner: report which canonical values appear as substrings in a
    JSON-serializable payload (case-insensitive; short values ignored)."""
    haystack = json.dumps(payload, ensure_ascii=False, default=str).casefold()
    leaks = []
    for value in values:
        needle = str(value).casefold().strip()
        if len(needle) >= 3 and needle in haystack:
            leaks.append(str(value))
    return leaks
