// Browser-level flows against recorded service responses: the mocked fetch
// replays fixture steps captured from the real engine service, so every
// payload the panel renders is a genuine service payload.

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { beforeEach, describe, expect, it } from "vitest";

import { EngineApi } from "../src/api.js";
import { SessionPanel, renderDiff } from "../src/panel.js";

interface FixtureStep {
  method: string;
  path: string;
  status: number;
  body: unknown;
}

interface Fixture {
  flow: string;
  source: string;
  task: string;
  steps: FixtureStep[];
}

function loadFixture(name: string): Fixture {
  const raw = readFileSync(join(__dirname, "fixtures", name), "utf-8");
  return JSON.parse(raw) as Fixture;
}

function fixtureFetch(fixture: Fixture): typeof fetch {
  const remaining = [...fixture.steps];
  return (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    const method = init?.method ?? "GET";
    const index = remaining.findIndex(
      (step) => step.method === method && url.endsWith(step.path),
    );
    if (index === -1) {
      throw new Error(`no recorded step for ${method} ${url}`);
    }
    const step = remaining.splice(index, 1)[0];
    return {
      ok: step.status >= 200 && step.status < 300,
      status: step.status,
      json: async () => step.body,
    } as Response;
  }) as typeof fetch;
}

function panelWith(fixture: Fixture): { panel: SessionPanel; root: HTMLElement } {
  const root = document.createElement("div");
  document.body.appendChild(root);
  const api = new EngineApi("", fixtureFetch(fixture));
  return { panel: new SessionPanel(root, api), root };
}

function texts(root: HTMLElement, selector: string): string[] {
  return Array.from(root.querySelectorAll(selector)).map((n) => n.textContent ?? "");
}

beforeEach(() => {
  document.body.innerHTML = "";
});

describe("candidate rendering", () => {
  it("renders the CoincidenceCount candidate diff from the fixture service", async () => {
    const fixture = loadFixture("accept_flow.json");
    const { panel, root } = panelWith(fixture);

    await panel.start(fixture.source, fixture.task);
    expect(texts(root, ".diagnostic").join(" ")).toContain("InvariantNotMaintained");
    expect(root.querySelectorAll(".source-line.line-error").length).toBe(1);

    await panel.suggest();
    const cards = root.querySelectorAll(".candidate-card");
    expect(cards.length).toBe(1);
    expect(texts(root, ".kind-badge")).toEqual(["FullFileRewrite"]);

    // faithful diff rendering: displayed lines equal the service's diff lines
    const suggestStep = fixture.steps.find((s) => s.path.endsWith("/suggest"))!;
    const serviceDiff = (suggestStep.body as {
      candidates: { diff: string }[];
    }).candidates[0].diff;
    const rendered = texts(root, ".diff .diff-line").map((t) => (t === " " ? "" : t));
    expect(rendered).toEqual(serviceDiff.replace(/\n$/, "").split("\n"));
    const added = texts(root, ".diff-line.diff-add").join("\n");
    expect(added).toContain("lemma LemmaIntersectionAfterIncrease_mn");
    expect(added).toContain("LemmaIntersectionAfterIncrease_mn(a, b, m, n);");
  });

  it("shows the empty state with a Suggest action when there are no candidates", async () => {
    const fixture = loadFixture("noop_flow.json");
    const { panel, root } = panelWith(fixture);
    await panel.start(fixture.source, fixture.task);
    expect(root.querySelector(".status-green")).not.toBeNull();

    await panel.suggest();
    expect(root.querySelectorAll(".candidate-card").length).toBe(0);
    const suggest = root.querySelector(".empty-state .suggest-btn");
    expect(suggest).not.toBeNull();
  });
});

describe("accept flow", () => {
  it("accept empties the diagnostics pane and shows the verified state", async () => {
    const fixture = loadFixture("accept_flow.json");
    const { panel, root } = panelWith(fixture);
    await panel.start(fixture.source, fixture.task);
    await panel.suggest();

    (root.querySelector(".accept-btn") as HTMLButtonElement).click();
    await vi_flush();

    expect(root.querySelectorAll(".diagnostic").length).toBe(0);
    expect(root.querySelector(".diagnostics-empty")).not.toBeNull();
    expect(root.querySelector(".status-green")).not.toBeNull();
    expect(root.querySelectorAll(".candidate-card").length).toBe(0);
    // the event feed reflects the accepted round
    expect(texts(root, ".event").some((t) => t.includes("accept"))).toBe(true);
  });
});

describe("reject flow", () => {
  it("reject then Suggest renders a round-2 candidate", async () => {
    const fixture = loadFixture("reject_flow.json");
    const { panel, root } = panelWith(fixture);
    await panel.start(fixture.source, fixture.task);
    await panel.suggest();

    const firstDiff = texts(root, ".diff .diff-line").join("\n");
    expect(texts(root, ".round-badge")).toEqual(["round 1"]);

    (root.querySelector(".reject-btn") as HTMLButtonElement).click();
    await vi_flush();
    expect(root.querySelector(".rejected-badge")).not.toBeNull();
    const suggestAgain = root.querySelector(".candidates > .suggest-btn");
    expect(suggestAgain).not.toBeNull();

    (suggestAgain as HTMLButtonElement).click();
    await vi_flush();
    expect(texts(root, ".round-badge")).toEqual(["round 2"]);
    const secondDiff = texts(root, ".diff .diff-line").join("\n");
    expect(secondDiff).not.toEqual(firstDiff);
    expect(secondDiff).toContain("assert 1 + 1 == 2;");
  });
});

describe("failure handling", () => {
  it("shows a banner and no stale data when the service is unreachable", async () => {
    const root = document.createElement("div");
    document.body.appendChild(root);
    const failing = (async () => {
      throw new TypeError("fetch failed");
    }) as unknown as typeof fetch;
    const panel = new SessionPanel(root, new EngineApi("", failing));

    await panel.start("method M() {}\n", "Repair");
    expect(root.querySelector(".banner")?.textContent).toBe("service unreachable");
    expect(root.querySelectorAll(".candidate-card").length).toBe(0);
    expect(root.querySelectorAll(".diagnostic").length).toBe(0);
    expect(root.querySelector(".source-pane")).toBeNull();
  });

  it("maps a 409 to the refresh prompt without crashing", async () => {
    const fixture = loadFixture("accept_flow.json");
    const acceptStep = fixture.steps.find((s) => s.path.includes("/candidates/"))!;
    const steps: FixtureStep[] = [
      ...fixture.steps.filter((s) => !s.path.includes("/candidates/")),
      {
        method: "POST",
        path: acceptStep.path,
        status: 409,
        body: { detail: "candidates are stale after a mutation" },
      },
    ];
    const { panel, root } = panelWith({ ...fixture, steps });
    await panel.start(fixture.source, fixture.task);
    await panel.suggest();

    (root.querySelector(".accept-btn") as HTMLButtonElement).click();
    await vi_flush();
    expect(root.querySelector(".banner")?.textContent).toBe("session changed — refresh");
  });
});

describe("diff helper", () => {
  it("classifies added, removed, and hunk lines", () => {
    const node = renderDiff("--- a/x\n+++ b/x\n@@ -1 +1 @@\n-old\n+new\n");
    expect(node.querySelectorAll(".diff-del").length).toBe(1);
    expect(node.querySelectorAll(".diff-add").length).toBe(1);
    expect(node.querySelectorAll(".diff-hunk").length).toBe(1);
    expect(node.querySelectorAll(".diff-file").length).toBe(2);
  });
});

async function vi_flush(times = 6): Promise<void> {
  for (let i = 0; i < times; i += 1) {
    await new Promise((resolve) => setTimeout(resolve, 0));
  }
}
