// Session panel: diagnostics, candidate cards with diffs, accept/reject,
// and a progress feed. All state comes from service responses; the panel
// never mutates the source on its own and never renders optimistically.

import {
  CandidateCard,
  Diagnostic,
  EngineApi,
  EventRecord,
  ServiceError,
} from "./api.js";

interface PanelState {
  sessionId: string | null;
  source: string;
  task: string;
  diagnostics: Diagnostic[];
  candidates: CandidateCard[];
  round: number;
  rejected: Set<number>;
  verified: boolean;
  events: EventRecord[];
  banner: string | null;
  note: string | null;
  busy: boolean;
}

const initialState = (): PanelState => ({
  sessionId: null,
  source: "",
  task: "LemmaInference",
  diagnostics: [],
  candidates: [],
  round: 1,
  rejected: new Set(),
  verified: false,
  events: [],
  banner: null,
  note: null,
  busy: false,
});

export class SessionPanel {
  private state: PanelState = initialState();
  private lastEventSeq = 0;

  constructor(
    private root: HTMLElement,
    private api: EngineApi,
  ) {
    this.render();
  }

  async start(source: string, task = "LemmaInference"): Promise<void> {
    this.state = initialState();
    this.state.source = source;
    this.state.task = task;
    await this.guard(async () => {
      const created = await this.api.createSession(source, task);
      this.state.sessionId = created.id;
      this.state.diagnostics = created.diagnostics;
      this.state.verified = created.diagnostics.length === 0;
      await this.pullEvents();
    });
  }

  async suggest(): Promise<void> {
    const sid = this.requireSession();
    await this.guard(async () => {
      const response = await this.api.suggest(sid);
      this.state.candidates = response.candidates;
      this.state.round = response.round;
      this.state.rejected = new Set();
      this.state.note = response.note ?? null;
      await this.pullEvents();
    });
  }

  async accept(index: number): Promise<void> {
    const sid = this.requireSession();
    await this.guard(async () => {
      const response = await this.api.accept(sid, index);
      this.state.diagnostics = response.diagnostics;
      this.state.verified = response.verified;
      this.state.candidates = [];
      this.state.rejected = new Set();
      await this.pullEvents();
    });
  }

  async reject(index: number): Promise<void> {
    const sid = this.requireSession();
    await this.guard(async () => {
      const response = await this.api.reject(sid, index);
      this.state.rejected.add(index);
      this.state.round = response.next_round;
      await this.pullEvents();
    });
  }

  getState(): Readonly<PanelState> {
    return this.state;
  }

  private requireSession(): string {
    if (!this.state.sessionId) throw new Error("no session started");
    return this.state.sessionId;
  }

  private async pullEvents(): Promise<void> {
    if (!this.state.sessionId) return;
    const feed = await this.api.events(this.state.sessionId, this.lastEventSeq);
    for (const event of feed.events) {
      this.state.events.push(event);
      if (event.seq > this.lastEventSeq) this.lastEventSeq = event.seq;
    }
  }

  private async guard(action: () => Promise<void>): Promise<void> {
    this.state.busy = true;
    this.state.banner = null;
    this.render();
    try {
      await action();
    } catch (error) {
      if (error instanceof ServiceError && error.status === 409) {
        this.state.banner = "session changed — refresh";
      } else if (error instanceof ServiceError) {
        this.state.banner = `service error: ${error.message}`;
      } else {
        // network-level failure: show the banner and drop any stale view
        this.state = initialState();
        this.state.banner = "service unreachable";
      }
    } finally {
      this.state.busy = false;
      this.render();
    }
  }

  // --- rendering ---

  private render(): void {
    const { state } = this;
    this.root.innerHTML = "";
    this.root.classList.add("dafny-pilot-panel");

    if (state.banner) {
      this.root.appendChild(el("div", "banner", state.banner));
    }
    if (state.banner === "service unreachable") {
      return; // nothing else: stale data must not be shown
    }

    const status = el(
      "div",
      state.verified ? "status status-green" : "status",
      state.verified ? "verified: no outstanding diagnostics" : `round ${state.round}`,
    );
    this.root.appendChild(status);

    this.root.appendChild(this.renderSource());
    this.root.appendChild(this.renderDiagnostics());
    this.root.appendChild(this.renderCandidates());
    this.root.appendChild(this.renderEvents());
  }

  private renderSource(): HTMLElement {
    const pane = el("div", "source-pane");
    const errorLines = new Set(this.state.diagnostics.map((d) => d.line));
    this.state.source.split("\n").forEach((text, i) => {
      const line = el("div", "source-line", text || " ");
      if (errorLines.has(i + 1)) {
        line.classList.add("line-error");
        const messages = this.state.diagnostics
          .filter((d) => d.line === i + 1)
          .map((d) => d.message)
          .join("; ");
        line.setAttribute("title", messages);
      }
      pane.appendChild(line);
    });
    return pane;
  }

  private renderDiagnostics(): HTMLElement {
    const pane = el("div", "diagnostics");
    pane.appendChild(el("h3", "", "Diagnostics"));
    if (this.state.diagnostics.length === 0) {
      pane.appendChild(el("div", "diagnostics-empty", "none"));
      return pane;
    }
    for (const diag of this.state.diagnostics) {
      pane.appendChild(
        el(
          "div",
          `diagnostic ${diag.severity}`,
          `(${diag.line},${diag.col}) ${diag.category}: ${diag.message}`,
        ),
      );
    }
    return pane;
  }

  private renderCandidates(): HTMLElement {
    const pane = el("div", "candidates");
    pane.appendChild(el("h3", "", "Candidates"));

    if (this.state.candidates.length === 0) {
      const empty = el("div", "empty-state");
      empty.appendChild(
        el("p", "", this.state.note ?? "No candidates yet for this session."),
      );
      const suggestBtn = el("button", "suggest-btn", "Suggest") as HTMLButtonElement;
      suggestBtn.disabled = this.state.busy || !this.state.sessionId || this.state.verified;
      suggestBtn.addEventListener("click", () => void this.suggest());
      empty.appendChild(suggestBtn);
      pane.appendChild(empty);
      return pane;
    }

    for (const card of this.state.candidates) {
      const rejected = this.state.rejected.has(card.index);
      const node = el("div", rejected ? "candidate-card rejected" : "candidate-card");
      const head = el("div", "card-head");
      head.appendChild(el("span", "kind-badge", card.kind));
      head.appendChild(el("span", "round-badge", `round ${this.state.round}`));
      if (rejected) head.appendChild(el("span", "rejected-badge", "rejected"));
      node.appendChild(head);

      const code = el("pre", "display-code");
      code.textContent = card.display_code;
      node.appendChild(code);
      node.appendChild(renderDiff(card.diff));

      const actions = el("div", "card-actions");
      const acceptBtn = el("button", "accept-btn", "Accept") as HTMLButtonElement;
      const rejectBtn = el("button", "reject-btn", "Reject") as HTMLButtonElement;
      acceptBtn.disabled = rejectBtn.disabled = this.state.busy || rejected;
      acceptBtn.addEventListener("click", () => void this.accept(card.index));
      rejectBtn.addEventListener("click", () => void this.reject(card.index));
      actions.appendChild(acceptBtn);
      actions.appendChild(rejectBtn);
      node.appendChild(actions);
      pane.appendChild(node);
    }

    if (this.state.rejected.size > 0) {
      const again = el("button", "suggest-btn", "Suggest") as HTMLButtonElement;
      again.disabled = this.state.busy;
      again.addEventListener("click", () => void this.suggest());
      pane.appendChild(again);
    }
    return pane;
  }

  private renderEvents(): HTMLElement {
    const pane = el("div", "events");
    pane.appendChild(el("h3", "", "Progress"));
    for (const event of this.state.events) {
      pane.appendChild(
        el("div", "event", `#${event.seq} [round ${event.round}] ${event.action}`),
      );
    }
    return pane;
  }
}

export function renderDiff(diff: string): HTMLElement {
  const pane = el("div", "diff");
  if (!diff) {
    pane.appendChild(el("div", "diff-empty", "no changes"));
    return pane;
  }
  for (const line of diff.replace(/\n$/, "").split("\n")) {
    let cls = "diff-line";
    if (line.startsWith("+++") || line.startsWith("---")) cls += " diff-file";
    else if (line.startsWith("@@")) cls += " diff-hunk";
    else if (line.startsWith("+")) cls += " diff-add";
    else if (line.startsWith("-")) cls += " diff-del";
    const node = el("div", cls);
    node.textContent = line || " ";
    pane.appendChild(node);
  }
  return pane;
}

function el(tag: string, className = "", text = ""): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}
