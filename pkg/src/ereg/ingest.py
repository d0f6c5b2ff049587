"""Deterministic rule-based annotator: the ingestion pipeline's stand-in for
model-based entity recognition.

Rules are literal or regular-expression patterns bound to a tag (an entity
type name or a plain label) plus capture-group extractors that turn matched
text into attribute values.  Overlap between matches resolves by longer
span, then earlier start, then rule order, so output never depends on scan
incidentals.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import InvalidRule


@dataclass(frozen=True)
class GazetteerRule:
    pattern: str
    tag: str
    attribute_extractors: dict[str, int] = field(default_factory=dict)

    def compile(self) -> re.Pattern:
        try:
            compiled = re.compile(self.pattern)
        except re.error as exc:
            raise InvalidRule(f"pattern does not compile: {exc}") from exc
        for attr, group in self.attribute_extractors.items():
            if not isinstance(group, int) or not 0 < group <= compiled.groups:
                raise InvalidRule(
                    f"extractor for {attr!r} references missing group {group}")
        return compiled

    @staticmethod
    def from_json(raw: dict) -> "GazetteerRule":
        return GazetteerRule(pattern=raw["pattern"], tag=raw["tag"],
                             attribute_extractors={
                                 k: int(v) for k, v in
                                 raw.get("attribute_extractors", {}).items()})

    def to_json(self) -> dict:
        return {"pattern": self.pattern, "tag": self.tag,
                "attribute_extractors": dict(self.attribute_extractors)}


@dataclass(frozen=True)
class AnnotationDraft:
    start: int
    end: int
    tag: str
    attributes: dict[str, str]
    rule_index: int

    @property
    def length(self) -> int:
        return self.end - self.start


def enumerate_matches(text: str, rules: list[GazetteerRule]) -> list[AnnotationDraft]:
    """Every match of every rule, unresolved."""
    drafts: list[AnnotationDraft] = []
    for index, rule in enumerate(rules):
        compiled = rule.compile()
        for m in compiled.finditer(text):
            if m.start() == m.end():
                continue
            attributes = {}
            for attr, group in rule.attribute_extractors.items():
                captured = m.group(group)
                if captured is not None:
                    attributes[attr] = captured
            drafts.append(AnnotationDraft(start=m.start(), end=m.end(),
                                          tag=rule.tag, attributes=attributes,
                                          rule_index=index))
    return drafts


def resolve_overlaps(drafts: list[AnnotationDraft]) -> list[AnnotationDraft]:
    """Greedy selection by (longer span, earlier start, rule order)."""
    chosen: list[AnnotationDraft] = []
    for draft in sorted(drafts, key=lambda d: (-d.length, d.start, d.rule_index)):
        if all(draft.end <= kept.start or draft.start >= kept.end
               for kept in chosen):
            chosen.append(draft)
    chosen.sort(key=lambda d: d.start)
    return chosen


def annotate(text: str, rules: list[GazetteerRule]) -> list[AnnotationDraft]:
    return resolve_overlaps(enumerate_matches(text, rules))
