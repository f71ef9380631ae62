/**
 * DOM builders for the app's screens. Pure functions of server payloads:
 * rendering the same payload twice produces identical markup, which is what
 * makes the reload-from-server-state invariant testable.
 */

import type { PromptPayload, PromptSide, ViewPayload } from "./api";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderStatus(stage: string, counts: Record<string, number | null>): HTMLElement {
  const box = el("div", "status-box");
  box.dataset.testid = "status";
  box.dataset.stage = stage;
  box.appendChild(el("span", "status-stage", `stage: ${stage}`));
  const interesting = ["candidate_groups", "join_graphs", "materializable_graphs", "views"];
  for (const key of interesting) {
    const value = counts[key];
    if (value !== null && value !== undefined) {
      box.appendChild(el("span", "status-count", `${key}=${value}`));
    }
  }
  return box;
}

function renderRowTable(side: PromptSide): HTMLElement {
  const table = el("table", "prompt-table");
  const head = el("tr");
  for (const attr of side.schema) head.appendChild(el("th", undefined, attr));
  table.appendChild(head);
  for (const entry of side.rows) {
    const tr = el("tr");
    entry.row.forEach((cell, i) => {
      const attr = side.schema[i];
      const td = el("td", undefined, cell);
      if (entry.highlight.includes(attr)) {
        td.className = "cell-conflict";
        td.dataset.conflict = "true";
      }
      tr.appendChild(td);
    });
    table.appendChild(tr);
  }
  return table;
}

export function renderPrompt(
  prompt: PromptPayload,
  onChoose: (choice: string) => void,
): HTMLElement {
  const box = el("div", "prompt-box");
  box.dataset.testid = "prompt";
  box.dataset.promptId = prompt.prompt_id;
  const title = `contradiction on ${prompt.key_attribute ?? "(no key)"}: ` +
    prompt.contradictory_keys.join(", ");
  box.appendChild(el("h2", "prompt-title", title));
  box.appendChild(
    el("p", "prompt-degree", `contradicts ${prompt.degree} view(s)`),
  );

  const panels = el("div", "prompt-panels");
  for (const side of [prompt.left, prompt.right]) {
    const panel = el("div", "prompt-panel");
    panel.dataset.viewId = side.view_id;
    panel.appendChild(el("h3", undefined, side.view_id));
    panel.appendChild(renderRowTable(side));
    const pick = el("button", "choose-button", `keep ${side.view_id}`);
    pick.dataset.testid = `choose-${side.view_id}`;
    pick.addEventListener("click", () => onChoose(side.view_id));
    panel.appendChild(pick);
    panels.appendChild(panel);
  }
  box.appendChild(panels);

  const skip = el("button", "skip-button", "skip");
  skip.dataset.testid = "skip";
  skip.addEventListener("click", () => onChoose("skip"));
  box.appendChild(skip);
  return box;
}

export function renderResults(
  views: ViewPayload[],
  exportUrl: (viewId: string) => string,
  onPage: (viewId: string, page: number) => void,
): HTMLElement {
  const box = el("div", "results-box");
  box.dataset.testid = "results";
  box.appendChild(el("h2", undefined, `surviving views (${views.length})`));
  for (const view of views) {
    const card = el("div", "view-card");
    card.dataset.viewId = view.view_id;
    card.appendChild(el("h3", undefined, `${view.view_id} — ${view.row_count} rows`));
    if (view.union_of) {
      card.appendChild(el("p", "view-union", `union of ${view.union_of.join(", ")}`));
    }
    const table = el("table", "view-table");
    const head = el("tr");
    for (const attr of view.schema) head.appendChild(el("th", undefined, attr));
    table.appendChild(head);
    for (const row of view.rows) {
      const tr = el("tr");
      for (const cell of row) tr.appendChild(el("td", undefined, cell));
      table.appendChild(tr);
    }
    card.appendChild(table);

    const pages = Math.ceil(view.row_count / view.page_size);
    if (pages > 1) {
      const nav = el("div", "pager");
      nav.appendChild(el("span", undefined, `page ${view.page + 1}/${pages}`));
      if (view.page + 1 < pages) {
        const next = el("button", "pager-next", "next page");
        next.dataset.testid = `next-${view.view_id}`;
        next.addEventListener("click", () => onPage(view.view_id, view.page + 1));
        nav.appendChild(next);
      }
      card.appendChild(nav);
    }

    const link = el("a", "export-link", "export CSV");
    link.setAttribute("href", exportUrl(view.view_id));
    link.dataset.testid = `export-${view.view_id}`;
    card.appendChild(link);
    box.appendChild(card);
  }
  return box;
}

export function renderError(message: string): HTMLElement {
  const box = el("div", "error-box", message);
  box.dataset.testid = "error";
  return box;
}
