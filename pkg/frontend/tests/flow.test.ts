/**
 * Round-trip test against the real service: submit the employee/address
 * query, resolve the home-vs-work contradiction, verify pruning and CSV
 * export, and check that each screen is reconstructable after a reload
 * purely from server state.
 */

// @vitest-environment jsdom

import { spawn, ChildProcess } from "node:child_process";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { App, initApp } from "../src/app";

let service: ChildProcess;
let base = "";
let api: ApiClient;

function startService(): Promise<string> {
  const here = dirname(fileURLToPath(import.meta.url));
  const script = join(here, "start_service.py");
  service = spawn("python3", [script], { stdio: ["ignore", "pipe", "inherit"] });
  return new Promise((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("service did not start")), 30000);
    service.stdout!.on("data", (chunk: Buffer) => {
      const match = /PORT (\d+)/.exec(chunk.toString());
      if (match) {
        clearTimeout(timer);
        resolve(`http://127.0.0.1:${match[1]}`);
      }
    });
    service.on("exit", (code) => reject(new Error(`service exited early: ${code}`)));
  });
}

beforeAll(async () => {
  base = await startService();
  api = new ApiClient(base);
}, 40000);

afterAll(() => {
  service?.kill();
});

function freshRoot(): HTMLElement {
  const root = document.createElement("main");
  document.body.appendChild(root);
  return root;
}

describe("interactive session round trip", () => {
  let app: App;
  let appRoot: HTMLElement;
  let sessionId: string;

  it("autocompletes attribute names from the index", async () => {
    const names = await api.attributes("add");
    expect(names).toContain("address");
  });

  it("submits the query and reaches the contradiction prompt", async () => {
    window.location.hash = "";
    appRoot = freshRoot();
    app = new App(appRoot, api);
    const status = await app.submitQuery(
      ["employee", "address"],
      [{ employee: "Raul CF" }],
    );
    expect(status.stage).toBe("awaiting_choice");
    sessionId = app.sessionId!;
    expect(window.location.hash).toBe(`#/session/${sessionId}`);
    expect(status.counts["views"]).toBeGreaterThanOrEqual(4);
  }, 30000);

  it("renders the prompt side by side with server-marked conflict cells", async () => {
    const prompt = await api.prompt(sessionId);
    expect(prompt).not.toBeNull();
    const box = appRoot.querySelector('[data-testid="prompt"]') as HTMLElement;
    expect(box).not.toBeNull();
    expect(box.dataset.promptId).toBe(prompt!.prompt_id);
    const panels = box.querySelectorAll(".prompt-panel");
    expect(panels.length).toBe(2);
    // highlighted cells are exactly the server's conflict evidence
    const highlighted = box.querySelectorAll('td[data-conflict="true"]');
    const expected =
      prompt!.left.rows.reduce((n, r) => n + r.highlight.length, 0) +
      prompt!.right.rows.reduce((n, r) => n + r.highlight.length, 0);
    expect(highlighted.length).toBe(expected);
    expect(expected).toBeGreaterThan(0);
  });

  it("reconstructs the same screen after a reload from server state alone", async () => {
    const before = appRoot.innerHTML;
    const root2 = freshRoot();
    window.location.hash = `#/session/${sessionId}`;
    await initApp(root2, api);
    expect(root2.innerHTML).toBe(before);
    root2.remove();
  }, 30000);

  it("choosing a panel prunes the losing views from the result browser", async () => {
    const prompt = await api.prompt(sessionId);
    const chosen = prompt!.left.view_id;
    const rejected = prompt!.right.view_id;
    const button = appRoot.querySelector(
      `[data-testid="choose-${chosen}"]`,
    ) as HTMLButtonElement;
    expect(button).not.toBeNull();
    await app.choose(prompt!, chosen);
    const views = await api.views(sessionId);
    expect(views.pending).toContain(chosen);
    expect(views.pending).not.toContain(rejected);
    const cards = appRoot.querySelectorAll(".view-card");
    const ids = Array.from(cards).map((c) => (c as HTMLElement).dataset.viewId);
    expect(ids).not.toContain(rejected);
    expect(ids).toContain(chosen);
  }, 30000);

  it("skipping the final prompts keeps both contradictory views", async () => {
    let prompt = await api.prompt(sessionId);
    const skippedPairs: string[][] = [];
    while (prompt) {
      skippedPairs.push([prompt.left.view_id, prompt.right.view_id]);
      await app.choose(prompt, "skip");
      prompt = await api.prompt(sessionId);
    }
    const views = await api.views(sessionId);
    for (const [left, right] of skippedPairs) {
      expect(views.pending).toContain(left);
      expect(views.pending).toContain(right);
    }
    const status = await api.status(sessionId);
    expect(status.stage).toBe("complete");
  }, 30000);

  it("exports a CSV whose row count matches the chosen view", async () => {
    const views = await api.views(sessionId);
    const target = views.views[0];
    const link = document.querySelector(
      `[data-testid="export-${target.view_id}"]`,
    ) as HTMLAnchorElement;
    expect(link).not.toBeNull();
    const csv = await api.exportCsv(sessionId, target.view_id);
    const lines = csv.trim().split(/\r?\n/);
    expect(lines.length - 1).toBe(target.row_count);
    expect(lines[0].split(",")).toEqual(target.schema);
  });

  it("a stale choice gets a 409 and the app refreshes instead of crashing", async () => {
    // fresh session, then answer the prompt behind the app's back
    const root = freshRoot();
    window.location.hash = "";
    const app2 = new App(root, api);
    await app2.submitQuery(["employee", "address"], [{ employee: "Raul CF" }]);
    const sid = app2.sessionId!;
    const prompt = await api.prompt(sid);
    await api.choice(sid, prompt!.prompt_id, "skip"); // other tab acts first
    await app2.choose(prompt!, prompt!.left.view_id); // stale: must not throw
    const fresh = await api.prompt(sid);
    const box = Array.from(root.querySelectorAll('[data-testid="prompt"]')).pop() as
      | HTMLElement
      | undefined;
    if (fresh) {
      expect(box?.dataset.promptId).toBe(fresh.prompt_id);
    }
  }, 30000);
});
