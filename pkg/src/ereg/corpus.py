"""Document store: metadata, sectioned and chunked text, span annotations,
and the embedded inverted index for full-text / metadata / annotation search.

Annotation spans are full-document character offsets (section-relative
addressing is derived, never stored), so they survive re-sectioning after
replication.  Every section satisfies the reconstruction property: the
concatenation of its chunks equals its content exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import (
    DanglingEntityRef,
    DuplicateDocId,
    EmptyDocument,
    EmptyQuery,
    SpanOutOfBounds,
    UnknownAnnotation,
    UnknownDocument,
    ValidationError,
)

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)
_WORD_CHUNK = re.compile(r"\S+\s*")
_PARAGRAPH_BREAK = re.compile(r"\n[ \t\r]*\n\s*")


# -- chunking -----------------------------------------------------------------

@dataclass(frozen=True)
class ChunkStrategy:
    """One of ``fixed_size`` (split at whitespace when possible), ``paragraph``
    (split on blank lines), or ``words`` (whitespace attaches to the
    preceding chunk)."""

    kind: str = "paragraph"
    size: int = 0

    def __post_init__(self):
        if self.kind not in ("fixed_size", "paragraph", "words"):
            raise ValidationError(f"unknown chunk strategy: {self.kind}")
        if self.kind == "fixed_size" and self.size < 1:
            raise ValidationError("fixed_size strategy needs size >= 1")

    def to_json(self) -> dict:
        return {"kind": self.kind, "size": self.size}

    @staticmethod
    def from_json(raw) -> "ChunkStrategy":
        if raw is None:
            return ChunkStrategy()
        if isinstance(raw, str):
            return ChunkStrategy(kind=raw) if raw != "fixed_size" \
                else ChunkStrategy(kind=raw, size=200)
        return ChunkStrategy(kind=raw.get("kind", "paragraph"), size=raw.get("size", 0))


def split_chunks(content: str, strategy: ChunkStrategy) -> list[str]:
    """Partition ``content`` into chunk strings; concatenation is identity."""
    if content == "":
        return []
    if strategy.kind == "words":
        pieces = _WORD_CHUNK.findall(content)
        leading = content[: len(content) - len("".join(pieces))]
        if leading:  # all-whitespace prefix folds into the first chunk
            pieces = [leading + pieces[0], *pieces[1:]] if pieces else [leading]
        return pieces
    if strategy.kind == "paragraph":
        pieces, last = [], 0
        for m in _PARAGRAPH_BREAK.finditer(content):
            pieces.append(content[last:m.end()])  # separator rides with its paragraph
            last = m.end()
        if last < len(content):
            pieces.append(content[last:])
        return pieces
    # fixed_size: hard cap of `size` chars, backing up to the last whitespace
    # inside the window when one exists.
    n = strategy.size
    pieces, pos = [], 0
    while pos < len(content):
        if len(content) - pos <= n:
            pieces.append(content[pos:])
            break
        window = content[pos:pos + n]
        spaces = [i for i, ch in enumerate(window) if ch.isspace()]
        # cut right after the last whitespace in the window; hard cut otherwise
        cut = spaces[-1] + 1 if spaces else n
        pieces.append(content[pos:pos + cut])
        pos += cut
    return pieces


@dataclass(frozen=True)
class Chunk:
    index: int
    content: str
    start: int  # offsets within the owning section
    end: int


@dataclass
class Section:
    name: str
    content: str
    chunks: list[Chunk]
    char_offset: int  # start of this section within the full document text


@dataclass
class Document:
    doc_id: str
    instance_id: int
    metadata: dict[str, str]
    sections: list[Section]
    replica_of: int | None = None  # source instance when this copy was replicated

    @property
    def text(self) -> str:
        return "".join(s.content for s in self.sections)

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "instance_id": self.instance_id,
            "metadata": dict(self.metadata),
            "sections": [{"name": s.name, "content": s.content} for s in self.sections],
            "replica_of": self.replica_of,
        }


@dataclass
class Annotation:
    ann_id: str
    instance_id: int
    doc_id: str
    tag: str
    start: int
    end: int
    entity_ref: int | None = None

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    def to_json(self) -> dict:
        return {"ann_id": self.ann_id, "instance_id": self.instance_id,
                "doc_id": self.doc_id, "tag": self.tag, "start": self.start,
                "end": self.end, "entity_ref": self.entity_ref}


@dataclass(frozen=True)
class SearchHit:
    doc_id: str
    spans: tuple[tuple[int, int], ...]
    score: int


def _build_sections(sections_text, strategy: ChunkStrategy) -> list[Section]:
    sections, offset = [], 0
    for name, content in sections_text:
        if not name:
            raise ValidationError("section name must be non-empty")
        if not isinstance(content, str):
            raise ValidationError("section content must be text")
        chunks, cursor = [], 0
        for i, piece in enumerate(split_chunks(content, strategy)):
            chunks.append(Chunk(index=i, content=piece, start=cursor,
                                end=cursor + len(piece)))
            cursor += len(piece)
        assert "".join(c.content for c in chunks) == content
        sections.append(Section(name=name, content=content, chunks=chunks,
                                char_offset=offset))
        offset += len(content)
    return sections


class CorpusStore:
    """Per-instance document, annotation, and index store."""

    def __init__(self, instance_id: int = 0):
        self.instance_id = instance_id
        self.documents: dict[str, Document] = {}
        self.annotations: dict[str, Annotation] = {}
        self.doc_annotations: dict[str, list[str]] = {}
        self._ann_counter = 0
        # term -> doc_id -> [(start, end), ...] in full-document offsets
        self._text_index: dict[str, dict[str, list[tuple[int, int]]]] = {}
        self._metadata_index: dict[tuple[str, str], set[str]] = {}
        self._tag_index: dict[str, set[str]] = {}
        self._entity_index: dict[int, list[str]] = {}

    # -- documents -------------------------------------------------------------

    def ingest_document(self, doc_id: str, metadata: dict, sections_text,
                        strategy: ChunkStrategy | None = None,
                        replica_of: int | None = None) -> Document:
        if doc_id in self.documents:
            raise DuplicateDocId(f"document already stored: {doc_id}")
        sections_text = list(sections_text)
        if not sections_text:
            raise EmptyDocument("a document needs at least one section")
        doc = Document(doc_id=doc_id, instance_id=self.instance_id,
                       metadata={str(k): str(v) for k, v in dict(metadata).items()},
                       sections=_build_sections(sections_text, strategy or ChunkStrategy()),
                       replica_of=replica_of)
        self.documents[doc_id] = doc
        self.doc_annotations[doc_id] = []
        self._index_document(doc)
        return doc

    def get_document(self, doc_id: str) -> Document:
        try:
            return self.documents[doc_id]
        except KeyError:
            raise UnknownDocument(f"unknown document: {doc_id}") from None

    def export_replica(self, doc_id: str) -> dict:
        """Payload a peer instance needs to host a copy of this document."""
        doc = self.get_document(doc_id)
        return {"doc_id": doc.doc_id, "source_instance": self.instance_id,
                "metadata": dict(doc.metadata),
                "sections": [{"name": s.name, "content": s.content}
                             for s in doc.sections]}

    def accept_replica(self, payload: dict,
                       strategy: ChunkStrategy | None = None) -> Document:
        """Idempotent per (source instance, doc_id); the copy keeps the text
        byte-identical while metadata and chunking may diverge afterwards."""
        doc_id = payload["doc_id"]
        source = payload["source_instance"]
        if source == self.instance_id:
            raise DuplicateDocId(f"document {doc_id} already lives here")
        existing = self.documents.get(doc_id)
        if existing is not None:
            if existing.replica_of == source:
                return existing
            raise DuplicateDocId(f"document id {doc_id} already taken")
        return self.ingest_document(
            doc_id, payload["metadata"],
            [(s["name"], s["content"]) for s in payload["sections"]],
            strategy, replica_of=source)

    def re_chunk(self, doc_id: str, strategy: ChunkStrategy) -> Document:
        doc = self.get_document(doc_id)
        doc.sections = _build_sections(
            [(s.name, s.content) for s in doc.sections], strategy)
        return doc

    def re_section(self, doc_id: str, sections_text,
                   strategy: ChunkStrategy | None = None) -> Document:
        """Replace section structure; the full text must stay byte-identical
        so stored annotation spans keep their meaning."""
        doc = self.get_document(doc_id)
        new_sections = _build_sections(list(sections_text), strategy or ChunkStrategy())
        if "".join(s.content for s in new_sections) != doc.text:
            raise ValidationError("re-sectioning must preserve the document text")
        doc.sections = new_sections
        return doc

    # -- annotations -----------------------------------------------------------

    def add_annotation(self, doc_id: str, tag: str, span: tuple[int, int],
                       entity_ref: int | None = None,
                       entity_exists=None) -> Annotation:
        doc = self.get_document(doc_id)
        start, end = span
        if not (0 <= start < end <= len(doc.text)):
            raise SpanOutOfBounds(f"span {span} invalid for document of length "
                                  f"{len(doc.text)}")
        if entity_ref is not None and entity_exists is not None \
                and not entity_exists(entity_ref):
            raise DanglingEntityRef(f"no local entity {entity_ref}")
        self._ann_counter += 1
        ann = Annotation(ann_id=f"a{self._ann_counter}", instance_id=self.instance_id,
                         doc_id=doc_id, tag=tag, start=start, end=end,
                         entity_ref=entity_ref)
        self.annotations[ann.ann_id] = ann
        self.doc_annotations[doc_id].append(ann.ann_id)
        self._tag_index.setdefault(tag, set()).add(doc_id)
        if entity_ref is not None:
            self._entity_index.setdefault(entity_ref, []).append(ann.ann_id)
        return ann

    def get_annotation(self, ann_id: str) -> Annotation:
        try:
            return self.annotations[ann_id]
        except KeyError:
            raise UnknownAnnotation(f"unknown annotation: {ann_id}") from None

    def bind_annotation(self, ann_id: str, entity_ref: int) -> Annotation:
        ann = self.get_annotation(ann_id)
        if ann.entity_ref is not None:
            self._entity_index.get(ann.entity_ref, []).remove(ann_id)
        ann.entity_ref = entity_ref
        self._entity_index.setdefault(entity_ref, []).append(ann_id)
        return ann

    def rebind_entity(self, old_ref: int, new_ref: int) -> int:
        """Point every annotation bound to ``old_ref`` at ``new_ref``."""
        moved = 0
        for ann_id in self._entity_index.pop(old_ref, []):
            self.annotations[ann_id].entity_ref = new_ref
            self._entity_index.setdefault(new_ref, []).append(ann_id)
            moved += 1
        return moved

    def annotations_for_entity(self, entity_ref: int) -> list[Annotation]:
        return [self.annotations[a] for a in self._entity_index.get(entity_ref, [])]

    def annotations_for_doc(self, doc_id: str) -> list[Annotation]:
        return [self.annotations[a] for a in self.doc_annotations.get(doc_id, [])]

    def mention_text(self, ann_id: str) -> str:
        ann = self.get_annotation(ann_id)
        return self.get_document(ann.doc_id).text[ann.start:ann.end]

    def entity_mention_count(self, entity_ref: int) -> int:
        return len(self._entity_index.get(entity_ref, []))

    # -- search ------------------------------------------------------------------

    def _index_document(self, doc: Document) -> None:
        for key, value in doc.metadata.items():
            self._metadata_index.setdefault((key, value), set()).add(doc.doc_id)
        for section in doc.sections:
            base = section.char_offset
            for m in _TOKEN.finditer(section.content):
                term = m.group().lower()
                self._text_index.setdefault(term, {}).setdefault(
                    doc.doc_id, []).append((base + m.start(), base + m.end()))

    def search(self, text_terms=None, metadata_filters=None, tag=None,
               entity_ref=None) -> list[SearchHit]:
        """Conjunctive filtering; hits ordered by (score desc, doc_id asc)
        where score is the plain term-frequency count."""
        if not any((text_terms, metadata_filters, tag, entity_ref is not None)):
            raise EmptyQuery("at least one criterion is required")

        candidates: set[str] | None = None

        def narrow(docs: set[str]):
            nonlocal candidates
            candidates = docs if candidates is None else candidates & docs

        term_spans: dict[str, list[tuple[int, int]]] = {}
        if text_terms:
            for raw in text_terms:
                term = raw.lower()
                postings = self._text_index.get(term, {})
                narrow(set(postings))
                for doc_id, spans in postings.items():
                    term_spans.setdefault(doc_id, []).extend(spans)
        if metadata_filters:
            for name, value in dict(metadata_filters).items():
                narrow(set(self._metadata_index.get((str(name), str(value)), set())))
        if tag is not None:
            narrow(set(self._tag_index.get(tag, set())))
        if entity_ref is not None:
            narrow({self.annotations[a].doc_id
                    for a in self._entity_index.get(entity_ref, [])})

        hits = []
        for doc_id in candidates or set():
            spans: list[tuple[int, int]] = []
            score = 0
            if text_terms:
                spans.extend(term_spans.get(doc_id, []))
                score += len(term_spans.get(doc_id, []))
            for ann in self.annotations_for_doc(doc_id):
                if tag is not None and ann.tag == tag:
                    spans.append(ann.span)
                if entity_ref is not None and ann.entity_ref == entity_ref:
                    spans.append(ann.span)
            hits.append(SearchHit(doc_id=doc_id,
                                  spans=tuple(sorted(set(spans))), score=score))
        hits.sort(key=lambda h: (-h.score, h.doc_id))
        return hits

    # -- export -------------------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "documents": [self.documents[d].to_json() for d in sorted(self.documents)],
            "annotations": [self.annotations[a].to_json()
                            for a in sorted(self.annotations)],
        }
