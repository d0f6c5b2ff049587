/** Entity detail pane: attributes, relationships, and mentions exactly as
 * the API granted them.  Anonymized views get a pseudonym badge, count-only
 * views get count chips; absent fields are never synthesized client-side.
 */

import type { EntityView } from "../types.js";
import { escapeHtml } from "./html.js";

export interface EntityModel {
  permission: string;
  anonymized: boolean;
  countOnly: boolean;
  editable: boolean;
  ref?: string;
  type?: string;
  globalId?: string;
  attributes: Array<{ name: string; value: string }>;
  relationships: Array<{ rel: string; other: string; otherType: string; role: string }>;
  /* presence mirrors the response: a permission level that withholds
   * mentions produces no mention section at all, not an empty one */
  hasMentions: boolean;
  mentions: Array<{ docId: string; start: number; end: number; text?: string }>;
  hasDocuments: boolean;
  documents: Array<{ docId: string; metadata: Array<{ name: string; value: string }> }>;
  counts: Array<{ name: string; value: number }>;
}

export function buildEntityModel(view: EntityView): EntityModel {
  const permission = view.permission;
  return {
    permission,
    anonymized: permission === "read_anonymized",
    countOnly: permission === "count_only",
    editable: view.editable === true,
    ref: view.entity?.ref === undefined ? undefined : String(view.entity.ref),
    type: view.entity?.type,
    globalId: view.global_id,
    attributes: Object.entries(view.entity?.attributes ?? {}).map(([name, value]) => ({
      name,
      value: Array.isArray(value) ? value.map(String).join(", ") : String(value),
    })),
    relationships: (view.relationships ?? []).map((row) => ({
      rel: row.rel,
      other: String(row.other),
      otherType: row.other_type ?? "",
      role: row.role,
    })),
    hasMentions: view.mentions !== undefined,
    mentions: (view.mentions ?? []).map((m) => ({
      docId: m.doc_id,
      start: m.start,
      end: m.end,
      text: m.text,
    })),
    hasDocuments: view.documents !== undefined,
    documents: (view.documents ?? []).map((d) => ({
      docId: d.doc_id,
      metadata: Object.entries(d.metadata ?? {}).map(([name, value]) => ({ name, value })),
    })),
    counts: Object.entries(view.counts ?? {}).map(([name, value]) => ({ name, value })),
  };
}

export function renderEntityDetail(model: EntityModel): string {
  const badge = model.anonymized
    ? `<span class="badge pseudonym">${escapeHtml(model.ref ?? "")}</span>`
    : "";
  const chips = model.counts
    .map((c) => `<span class="chip">${escapeHtml(c.name)}: ${c.value}</span>`)
    .join(" ");
  if (model.countOnly) {
    return `<section class="entity count-only">
      <h3>${escapeHtml(model.type ?? "")}</h3>
      <div class="chips">${chips}</div>
    </section>`;
  }
  const attributes = model.attributes
    .map((a) => `<tr><th>${escapeHtml(a.name)}</th><td>${escapeHtml(a.value)}</td></tr>`)
    .join("");
  const relationships = model.relationships
    .map(
      (r) => `<li>${escapeHtml(r.rel)} ${r.role === "source" ? "→" : "←"}
        <a href="#entity/${escapeHtml(r.other)}">${escapeHtml(r.otherType)} ${escapeHtml(
          r.other,
        )}</a></li>`,
    )
    .join("");
  const mentions = model.mentions
    .map(
      (m) => `<li><a href="#document/${escapeHtml(m.docId)}">${escapeHtml(m.docId)}</a>
        [${m.start}–${m.end}] ${m.text === undefined ? "" : escapeHtml(m.text)}</li>`,
    )
    .join("");
  const documents = model.documents
    .map(
      (d) => `<li><a href="#document/${escapeHtml(d.docId)}">${escapeHtml(d.docId)}</a>
        ${d.metadata.map((m) => `${escapeHtml(m.name)}=${escapeHtml(m.value)}`).join(" ")}</li>`,
    )
    .join("");
  return `<section class="entity ${model.anonymized ? "anonymized" : ""}">
    <h3>${escapeHtml(model.type ?? "")} ${badge || escapeHtml(model.ref ?? "")}
      ${model.editable ? '<span class="badge editable">editable</span>' : ""}
      ${model.globalId ? `<span class="badge global">${escapeHtml(model.globalId)}</span>` : ""}
    </h3>
    <table class="attributes"><tbody>${attributes}</tbody></table>
    <ul class="relationships">${relationships}</ul>
    ${model.hasMentions ? `<ul class="mentions">${mentions}</ul>` : ""}
    ${model.hasDocuments ? `<ul class="documents">${documents}</ul>` : ""}
    <div class="chips">${chips}</div>
  </section>`;
}
