/** Application shell: wires the search, detail, document, graph, and review
 * queue panes to one district instance.  Configuration comes from query
 * parameters: ?api=http://127.0.0.1:8801&user=root&actor=root
 */

import { ApiClient, ApiError } from "./api.js";
import { DecisionDedup } from "./dedup.js";
import { buildDocumentModel, renderDocument } from "./views/document.js";
import { buildEntityModel, renderEntityDetail } from "./views/entity.js";
import { buildGraphModel, renderGraph } from "./views/graph.js";
import { escapeHtml } from "./views/html.js";
import { QueueController, renderQueue } from "./views/queue.js";
import { buildSearchModel, renderSearchResults } from "./views/search.js";
import type { Decision } from "./types.js";

function pane(id: string): HTMLElement {
  const element = document.getElementById(id);
  if (!element) throw new Error(`missing pane #${id}`);
  return element;
}

function showError(target: HTMLElement, error: unknown): void {
  const message =
    error instanceof ApiError ? `${error.code}: ${error.message}` : String(error);
  target.innerHTML = `<p class="error banner">${escapeHtml(message)}</p>`;
}

export class App {
  private readonly api: ApiClient;
  private readonly queue: QueueController;
  private readonly actor: string;

  constructor() {
    const params = new URLSearchParams(window.location.search);
    this.api = new ApiClient({
      baseUrl: params.get("api") ?? "http://127.0.0.1:8801",
      user: params.get("user") ?? "root",
    });
    this.actor = params.get("actor") ?? this.api.user;
    this.queue = new QueueController(this.api, new DecisionDedup());
  }

  async start(): Promise<void> {
    pane("identity").textContent = `user ${this.api.user}`;
    document.getElementById("search-form")?.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.runSearch();
    });
    pane("queue").addEventListener("click", (event) => {
      const button = (event.target as HTMLElement).closest<HTMLButtonElement>(
        "button.decision",
      );
      if (button) void this.submitDecision(button);
    });
    document.body.addEventListener("click", (event) => {
      const anchor = (event.target as HTMLElement).closest<HTMLAnchorElement>("a[href^='#']");
      if (!anchor) return;
      const [kind, ref] = anchor.getAttribute("href")!.slice(1).split("/");
      if (kind === "entity" && ref) {
        event.preventDefault();
        void this.showEntity(ref);
      }
      if (kind === "document" && ref) {
        event.preventDefault();
        void this.showDocument(ref);
      }
    });
    await this.refreshQueue();
  }

  async runSearch(): Promise<void> {
    const typeInput = document.getElementById("search-type") as HTMLInputElement;
    const attrsInput = document.getElementById("search-attrs") as HTMLInputElement;
    const attributes: Record<string, string> = {};
    for (const pair of attrsInput.value.split(/[,;]\s*/)) {
      const [name, value] = pair.split("=", 2);
      if (name && value) attributes[name.trim()] = value.trim();
    }
    const target = pane("results");
    try {
      const result = await this.api.queryEntities(typeInput.value.trim(), attributes);
      target.innerHTML = renderSearchResults(buildSearchModel(result));
    } catch (error) {
      showError(target, error);
    }
  }

  async showEntity(ref: string): Promise<void> {
    const detail = pane("detail");
    try {
      const view = await this.api.entityDetail(ref);
      detail.innerHTML = renderEntityDetail(buildEntityModel(view));
      const graph = await this.api.entityGraph(ref, 2);
      pane("graph").innerHTML = renderGraph(buildGraphModel(graph));
    } catch (error) {
      showError(detail, error);
    }
  }

  async showDocument(docId: string): Promise<void> {
    const target = pane("document");
    try {
      const view = await this.api.document(docId);
      target.innerHTML = renderDocument(buildDocumentModel(view));
    } catch (error) {
      showError(target, error);
    }
  }

  async refreshQueue(): Promise<void> {
    const target = pane("queue");
    try {
      target.innerHTML = renderQueue(await this.queue.load());
    } catch (error) {
      showError(target, error);
    }
  }

  async submitDecision(button: HTMLButtonElement): Promise<void> {
    const requestId = button.dataset.requestId!;
    const kind = button.dataset.kind as Decision["kind"];
    const decision: Decision = { kind };
    if (kind === "merge" || kind === "split") {
      const card = button.closest(".request");
      const globalId =
        card?.querySelector<HTMLElement>("[data-global-id]")?.dataset.globalId;
      if (!globalId) {
        showError(pane("queue-status"), new Error("no candidate to merge into"));
        return;
      }
      decision.global_id = globalId;
    }
    const outcome = await this.queue.resolve(requestId, decision, this.actor);
    const status = pane("queue-status");
    if (outcome.deduped) {
      status.innerHTML = `<p class="deduped">decision for
        ${escapeHtml(requestId)} already submitted</p>`;
      return;
    }
    if (outcome.error) {
      status.innerHTML = `<p class="error banner">${escapeHtml(outcome.error.code)}:
        ${escapeHtml(outcome.error.message)}</p>`;
      await this.refreshQueue();
      return;
    }
    const bindings = Object.entries(outcome.result!.bindings_by_instance)
      .map(([iid, rows]) => `district ${escapeHtml(iid)}: ${escapeHtml(
        JSON.stringify(rows),
      )}`)
      .join("<br>");
    status.innerHTML = `<p class="resolved">${escapeHtml(requestId)} resolved.</p>
      <p class="bindings">${bindings}</p>`;
    await this.refreshQueue();
  }
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  window.addEventListener("DOMContentLoaded", () => {
    void new App().start();
  });
}
