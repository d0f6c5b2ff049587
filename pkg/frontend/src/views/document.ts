/** Document pane: section text with annotation spans highlighted in place.
 * Anonymized spans arrive already pseudonymized from the API, redacted
 * spans arrive as type placeholders; this renderer only wraps the given
 * offsets in markup.  Counts become chips (the whole view a generic user
 * gets besides entity-free sections).
 */

import type { DocumentSpan, DocumentView } from "../types.js";
import { escapeHtml } from "./html.js";

export interface DocumentSegment {
  text: string;
  span?: DocumentSpan;
}

export interface DocumentModel {
  docId: string;
  metadata: Array<{ name: string; value: string }>;
  counts: Array<{ name: string; value: number }>;
  sections: Array<{ name: string; segments: DocumentSegment[] }>;
}

/** Split one section's content at the annotation boundaries; concatenating
 * the segment texts reproduces the content exactly. */
export function segmentSection(content: string, spans: DocumentSpan[]): DocumentSegment[] {
  const ordered = [...spans].sort((a, b) => a.start - b.start);
  const segments: DocumentSegment[] = [];
  let cursor = 0;
  for (const span of ordered) {
    if (span.start < cursor || span.end > content.length) continue;
    if (span.start > cursor) {
      segments.push({ text: content.slice(cursor, span.start) });
    }
    segments.push({ text: content.slice(span.start, span.end), span });
    cursor = span.end;
  }
  if (cursor < content.length) {
    segments.push({ text: content.slice(cursor) });
  }
  return segments;
}

export function buildDocumentModel(view: DocumentView): DocumentModel {
  return {
    docId: view.doc_id,
    metadata: Object.entries(view.metadata ?? {}).map(([name, value]) => ({ name, value })),
    counts: Object.entries(view.counts ?? {}).map(([name, value]) => ({ name, value })),
    sections: view.sections.map((section) => ({
      name: section.name,
      segments: segmentSection(
        section.content,
        view.annotations.filter((span) => span.section === section.name),
      ),
    })),
  };
}

export function renderDocument(model: DocumentModel): string {
  const metadata = model.metadata
    .map((m) => `<span class="meta">${escapeHtml(m.name)}=${escapeHtml(m.value)}</span>`)
    .join(" ");
  const chips = model.counts
    .map((c) => `<span class="chip">${escapeHtml(c.name)}: ${c.value}</span>`)
    .join(" ");
  const sections = model.sections
    .map((section) => {
      const body = section.segments
        .map((segment) => {
          if (!segment.span) return escapeHtml(segment.text);
          const classes = `span ${segment.span.rendering}`;
          const ref =
            segment.span.entity_ref === undefined
              ? ""
              : ` data-entity-ref="${escapeHtml(segment.span.entity_ref)}"`;
          return `<mark class="${classes}" data-tag="${escapeHtml(segment.span.tag)}"${ref}>
            ${escapeHtml(segment.text)}</mark>`;
        })
        .join("");
      return `<section class="doc-section">
        <h4>${escapeHtml(section.name)}</h4>
        <p class="content">${body}</p>
      </section>`;
    })
    .join("\n");
  return `<article class="document" data-doc-id="${escapeHtml(model.docId)}">
    <header>${escapeHtml(model.docId)} ${metadata}</header>
    <div class="chips">${chips}</div>
    ${sections}
  </article>`;
}
