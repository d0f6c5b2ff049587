/** Review queue: one card per open action request showing the incoming data
 * against the involved global entities — contradictory, coincident, and
 * complementary attributes side by side — plus links to the source
 * documents and the four decision controls.
 *
 * Every value in the model is copied verbatim from the API response; the
 * renderer adds markup only.
 */

import type { ApiClient } from "../api.js";
import { ApiError } from "../api.js";
import type { DecisionDedup } from "../dedup.js";
import type { ActionRequest, Decision, ResolutionResult } from "../types.js";
import { escapeHtml } from "./html.js";

export interface QueueItemModel {
  requestId: string;
  status: string;
  originInstance: number;
  kind: string;
  involvedGlobalIds: string[];
  incomingType?: string;
  incomingLocalId?: number;
  incomingAttributes: Array<{ name: string; value: string }>;
  contradictory: Array<{ attribute: string; existing: string; incoming: string }>;
  coincident: string[];
  complementaryExisting: string[];
  complementaryIncoming: string[];
  notes: string[];
  candidates: Array<{ globalId: string; attrScore: number; relScore: number }>;
  sourceDocuments: Array<{ docId: string; annId: string }>;
}

export function buildQueueModel(requests: ActionRequest[]): QueueItemModel[] {
  const items = requests.map((request) => {
    const report = request.message.report;
    return {
      requestId: request.request_id,
      status: request.status,
      originInstance: request.iid,
      kind: request.message.kind,
      involvedGlobalIds: [...request.ids],
      incomingType: request.data.type_name,
      incomingLocalId: request.data.local_id,
      incomingAttributes: Object.entries(request.data.attributes ?? {}).map(
        ([name, value]) => ({ name, value: String(value) }),
      ),
      contradictory: report?.contradictory ?? [],
      coincident: report?.coincident ?? [],
      complementaryExisting: report?.complementary_existing ?? [],
      complementaryIncoming: report?.complementary_incoming ?? [],
      notes: request.message.notes ?? [],
      candidates: (request.message.candidates ?? []).map((candidate) => ({
        globalId: String(candidate.local_id),
        attrScore: candidate.attr_score,
        relScore: candidate.rel_score,
      })),
      sourceDocuments: (request.data.provenance ?? []).map(([docId, annId]) => ({
        docId,
        annId,
      })),
    };
  });
  items.sort((a, b) => (a.requestId < b.requestId ? -1 : a.requestId > b.requestId ? 1 : 0));
  return items;
}

const DECISION_CONTROLS: Array<{ kind: Decision["kind"]; label: string }> = [
  { kind: "merge", label: "Merge" },
  { kind: "create_new", label: "Create new" },
  { kind: "split", label: "Split" },
  { kind: "fix_attributes", label: "Fix attributes" },
];

export function renderQueue(items: QueueItemModel[]): string {
  if (!items.length) {
    return `<p class="empty">No open requests.</p>`;
  }
  return items
    .map((item) => {
      const rows = item.contradictory
        .map(
          (row) => `<tr class="contradictory"><td>${escapeHtml(row.attribute)}</td>
            <td>${escapeHtml(row.existing)}</td><td>${escapeHtml(row.incoming)}</td></tr>`,
        )
        .join("");
      const incoming = item.incomingAttributes
        .map((a) => `<li>${escapeHtml(a.name)}: ${escapeHtml(a.value)}</li>`)
        .join("");
      const candidates = item.candidates
        .map(
          (c) => `<li data-global-id="${escapeHtml(c.globalId)}">
            ${escapeHtml(c.globalId)} (attributes ${c.attrScore}, links ${c.relScore})</li>`,
        )
        .join("");
      const docs = item.sourceDocuments
        .map(
          (d) => `<a href="#document/${escapeHtml(d.docId)}" class="doc-link">
            ${escapeHtml(d.docId)}</a>`,
        )
        .join(" ");
      const controls = DECISION_CONTROLS.map(
        (control) => `<button class="decision" data-request-id="${escapeHtml(item.requestId)}"
          data-kind="${control.kind}">${control.label}</button>`,
      ).join("");
      return `<article class="request" data-request-id="${escapeHtml(item.requestId)}">
        <header>
          <span class="request-id">${escapeHtml(item.requestId)}</span>
          <span class="status">${escapeHtml(item.status)}</span>
          <span class="kind">${escapeHtml(item.kind)}</span>
          <span class="origin">district ${item.originInstance}</span>
        </header>
        <section class="incoming">
          <h4>${escapeHtml(item.incomingType ?? "")} ${item.incomingLocalId ?? ""}</h4>
          <ul>${incoming}</ul>
        </section>
        <section class="comparison">
          <table><tbody>${rows}</tbody></table>
          <p class="coincident">${item.coincident.map(escapeHtml).join(", ")}</p>
          <p class="complementary">${item.complementaryExisting
            .concat(item.complementaryIncoming)
            .map(escapeHtml)
            .join(", ")}</p>
          ${item.notes.map((n) => `<p class="note">${escapeHtml(n)}</p>`).join("")}
        </section>
        <section class="candidates"><ul>${candidates}</ul></section>
        <section class="sources">${docs}</section>
        <footer class="controls">${controls}</footer>
      </article>`;
    })
    .join("\n");
}

export interface ResolveOutcome {
  deduped: boolean;
  result?: ResolutionResult;
  error?: { code: string; message: string };
}

export class QueueController {
  constructor(
    private readonly api: ApiClient,
    private readonly dedup: DecisionDedup,
  ) {}

  async load(): Promise<QueueItemModel[]> {
    const response = await this.api.listRequests("open");
    return buildQueueModel(response.requests);
  }

  /** Submit a decision exactly once per request; repeated calls are no-ops
   * reported as deduped and never reach the wire. */
  async resolve(requestId: string, decision: Decision, actor: string): Promise<ResolveOutcome> {
    if (!this.dedup.tryBegin(requestId)) {
      return { deduped: true };
    }
    try {
      const result = await this.api.resolveRequest(requestId, decision, actor);
      this.dedup.succeed(requestId);
      return { deduped: false, result };
    } catch (error) {
      this.dedup.fail(requestId);
      if (error instanceof ApiError) {
        return { deduped: false, error: { code: error.code, message: error.message } };
      }
      throw error;
    }
  }
}
