// Browser entry point: wire the panel to the form controls in index.html.
import { EngineApi } from "./api.js";
import { SessionPanel } from "./panel.js";
const api = new EngineApi("");
const root = document.getElementById("panel");
const sourceInput = document.getElementById("source");
const taskSelect = document.getElementById("task");
const startBtn = document.getElementById("start");
if (root && sourceInput && taskSelect && startBtn) {
    const panel = new SessionPanel(root, api);
    startBtn.addEventListener("click", () => {
        void panel.start(sourceInput.value, taskSelect.value);
    });
}
