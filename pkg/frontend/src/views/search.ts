/** Search results: local hits plus federated candidates with per-district
 * fragments, each already filtered by the server.  A pending federated
 * answer keeps its poll token so the caller can ask again. */

import type { QueryResult } from "../types.js";
import { buildEntityModel, renderEntityDetail, type EntityModel } from "./entity.js";
import { escapeHtml } from "./html.js";

export interface SearchResultModel {
  completeness: string;
  pendingToken?: string;
  localHits: Array<{ attrScore: number; relScore: number; entity: EntityModel }>;
  federatedHits: Array<{
    globalId: string;
    attrScore: number;
    relScore: number;
    entity: EntityModel;
    fragments: Array<{ iid: number; denied: boolean; entity?: EntityModel }>;
  }>;
}

export function buildSearchModel(result: QueryResult): SearchResultModel {
  return {
    completeness: result.completeness,
    pendingToken: result.token,
    localHits: result.local_hits.map((hit) => ({
      attrScore: hit.match.attr_score,
      relScore: hit.match.rel_score,
      entity: buildEntityModel(hit.view),
    })),
    federatedHits: result.federated_hits.map((hit) => ({
      globalId: hit.global_id,
      attrScore: hit.match.attr_score,
      relScore: hit.match.rel_score,
      entity: buildEntityModel(hit.view),
      fragments: hit.fragments.map((fragment) => ({
        iid: fragment.iid,
        denied: fragment.denied === true,
        entity: fragment.view ? buildEntityModel(fragment.view) : undefined,
      })),
    })),
  };
}

export function renderSearchResults(model: SearchResultModel): string {
  if (model.pendingToken) {
    return `<p class="pending" data-token="${escapeHtml(model.pendingToken)}">
      Federated results are still synchronizing; poll token
      ${escapeHtml(model.pendingToken)}.</p>`;
  }
  const local = model.localHits
    .map(
      (hit) => `<li class="hit local" data-scores="${hit.attrScore}/${hit.relScore}">
        ${renderEntityDetail(hit.entity)}</li>`,
    )
    .join("");
  const federated = model.federatedHits
    .map((hit) => {
      const fragments = hit.fragments
        .map((fragment) =>
          fragment.denied
            ? `<li class="fragment denied">district ${fragment.iid}</li>`
            : `<li class="fragment">district ${fragment.iid}
                 ${fragment.entity ? renderEntityDetail(fragment.entity) : ""}</li>`,
        )
        .join("");
      return `<li class="hit federated" data-global-id="${escapeHtml(hit.globalId)}">
        ${renderEntityDetail(hit.entity)}
        <ul class="fragments">${fragments}</ul>
      </li>`;
    })
    .join("");
  return `<div class="results" data-completeness="${escapeHtml(model.completeness)}">
    <h3>Local</h3><ul class="local-hits">${local}</ul>
    <h3>Federated</h3><ul class="federated-hits">${federated}</ul>
  </div>`;
}
