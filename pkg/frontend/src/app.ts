/**
 * Session app: query form with attribute autocomplete, pipeline monitor,
 * side-by-side contradiction resolver, and result browser with CSV export.
 *
 * The app is stateless with respect to classification: every screen is a
 * render of the latest server responses, and `refresh()` rebuilds the whole
 * screen from server state alone (which is how a mid-session reload
 * recovers). The active session id lives in the URL hash (#/session/<id>).
 */

import { ApiClient, ApiError, PromptPayload, SessionStatus, ViewsResponse } from "./api";
import { renderError, renderPrompt, renderResults, renderStatus } from "./views";

const POLL_MS = 100;

export class App {
  sessionId: string | null = null;
  private pages = new Map<string, number>();

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
  ) {}

  /** Boot: restore the session from the URL hash or show the query form. */
  async start(): Promise<void> {
    const match = /#\/session\/([0-9a-f]+)/.exec(window.location.hash);
    if (match) {
      this.sessionId = match[1];
      await this.waitForSettled();
    } else {
      this.renderForm();
    }
  }

  renderForm(): void {
    this.root.textContent = "";
    const form = document.createElement("div");
    form.className = "query-form";
    form.dataset.testid = "query-form";

    const attrInput = document.createElement("input");
    attrInput.placeholder = "attribute name";
    attrInput.dataset.testid = "attr-input";
    const suggestions = document.createElement("ul");
    suggestions.dataset.testid = "suggestions";
    attrInput.addEventListener("input", () => {
      void this.suggest(attrInput.value, suggestions);
    });

    const attrList = document.createElement("ul");
    attrList.dataset.testid = "attr-list";
    const addButton = document.createElement("button");
    addButton.textContent = "add attribute";
    addButton.dataset.testid = "add-attribute";
    addButton.addEventListener("click", () => {
      if (attrInput.value.trim()) {
        const li = document.createElement("li");
        li.textContent = attrInput.value.trim();
        attrList.appendChild(li);
        attrInput.value = "";
        suggestions.textContent = "";
      }
    });

    const submit = document.createElement("button");
    submit.textContent = "find views";
    submit.dataset.testid = "submit-query";
    submit.addEventListener("click", () => {
      const attrs = Array.from(attrList.children).map((li) => li.textContent ?? "");
      void this.submitQuery(attrs);
    });

    form.append(attrInput, addButton, suggestions, attrList, submit);
    this.root.appendChild(form);
  }

  async suggest(prefix: string, target: HTMLElement): Promise<void> {
    target.textContent = "";
    if (!prefix.trim()) return;
    const names = await this.api.attributes(prefix.trim());
    for (const name of names.slice(0, 10)) {
      const li = document.createElement("li");
      li.textContent = name;
      target.appendChild(li);
    }
  }

  /** Create a session and poll until it needs input or completes. */
  async submitQuery(
    attributes: string[],
    tuples?: Record<string, string>[],
  ): Promise<SessionStatus> {
    const created = await this.api.createSession({ attributes, tuples });
    this.sessionId = created.session_id;
    window.location.hash = `#/session/${created.session_id}`;
    return this.waitForSettled();
  }

  async waitForSettled(): Promise<SessionStatus> {
    if (!this.sessionId) throw new Error("no active session");
    for (;;) {
      const status = await this.api.status(this.sessionId);
      if (["awaiting_choice", "complete", "failed"].includes(status.stage)) {
        await this.refresh(status);
        return status;
      }
      this.root.textContent = "";
      this.root.appendChild(renderStatus(status.stage, status.counts));
      await new Promise((resolve) => setTimeout(resolve, POLL_MS));
    }
  }

  /** Rebuild the entire screen from server state. */
  async refresh(status?: SessionStatus): Promise<void> {
    if (!this.sessionId) throw new Error("no active session");
    const sid = this.sessionId;
    const current = status ?? (await this.api.status(sid));
    this.root.textContent = "";
    this.root.appendChild(renderStatus(current.stage, current.counts));
    if (current.stage === "failed") {
      this.root.appendChild(renderError(current.error ?? "pipeline failed"));
      return;
    }
    const prompt = current.prompt_outstanding ? await this.api.prompt(sid) : null;
    if (prompt) {
      this.root.appendChild(
        renderPrompt(prompt, (choice) => void this.choose(prompt, choice)),
      );
    }
    const views = await this.fetchViews(sid);
    this.root.appendChild(
      renderResults(
        views.views,
        (viewId) => this.api.exportUrl(sid, viewId),
        (viewId, page) => {
          this.pages.set(viewId, page);
          void this.refresh();
        },
      ),
    );
  }

  private async fetchViews(sid: string): Promise<ViewsResponse> {
    // per-view pagination: fetch page 0 then patch the requested pages in
    const base = await this.api.views(sid, 0);
    for (const view of base.views) {
      const page = this.pages.get(view.view_id) ?? 0;
      if (page > 0) {
        const paged = await this.api.views(sid, page);
        const replacement = paged.views.find((v) => v.view_id === view.view_id);
        if (replacement) Object.assign(view, replacement);
      }
    }
    return base;
  }

  /** Post a choice; a stale prompt (409) auto-refreshes to the current one. */
  async choose(prompt: PromptPayload, choice: string): Promise<void> {
    if (!this.sessionId) throw new Error("no active session");
    try {
      await this.api.choice(this.sessionId, prompt.prompt_id, choice);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        await this.refresh();
        return;
      }
      throw err;
    }
    await this.refresh();
  }
}

export async function initApp(root: HTMLElement, api: ApiClient): Promise<App> {
  const app = new App(root, api);
  await app.start();
  return app;
}

declare global {
  interface Window {
    viewfinderApp?: App;
  }
}

if (typeof document !== "undefined" && document.getElementById("app-root")) {
  const root = document.getElementById("app-root") as HTMLElement;
  void initApp(root, new ApiClient("")).then((app) => {
    window.viewfinderApp = app;
  });
}
