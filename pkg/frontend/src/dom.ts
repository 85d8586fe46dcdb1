/**
 * DOM binding: renders a ChatViewModel into the page and wires the input
 * box, debug toggle, and export button.
 */

import { SessionClient } from "./client.js";
import { ChatViewModel, exportTranscript } from "./view.js";

export interface PageElements {
  log: HTMLElement;
  input: HTMLInputElement;
  send: HTMLButtonElement;
  status: HTMLElement;
  debugToggle: HTMLButtonElement;
  debugPane: HTMLElement;
  exportButton: HTMLButtonElement;
}

export function bindPage(
  model: ChatViewModel,
  client: SessionClient,
  els: PageElements,
  httpBase: string,
): void {
  const render = () => {
    els.log.replaceChildren(
      ...model.messages.map((m) => {
        const div = document.createElement("div");
        div.className = m.error ? "bubble error" : `bubble ${m.speaker}`;
        div.textContent = m.text;
        return div;
      }),
    );
    els.log.scrollTop = els.log.scrollHeight;
    els.status.textContent = model.connection;
    const ready = model.canSend(client);
    els.input.disabled = !ready;
    els.send.disabled = !ready;
    els.exportButton.disabled = model.systemTurnCount() === 0 || !client.sessionId;
    els.debugPane.hidden = !model.debugVisible;
    if (model.debugVisible) {
      els.debugPane.textContent = [
        "events:",
        ...model.eventLines().map((l) => "  " + l),
        "plan:",
        ...model.planLines().map((l) => "  " + l),
      ].join("\n");
    }
  };

  const submit = () => {
    const text = els.input.value.trim();
    if (!text) return;
    if (client.sendTurn(text)) {
      model.addLocalUserEcho(text);
      els.input.value = "";
      render();
    }
  };

  els.send.addEventListener("click", submit);
  els.input.addEventListener("keydown", (event) => {
    if (event.key === "Enter") submit();
  });
  els.debugToggle.addEventListener("click", () => {
    model.toggleDebug();
    render();
  });
  els.exportButton.addEventListener("click", async () => {
    if (!client.sessionId) return;
    const text = await exportTranscript(httpBase, client.sessionId);
    const blob = new Blob([text], { type: "application/x-ndjson" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = `${client.sessionId}.transcript.jsonl`;
    a.click();
    URL.revokeObjectURL(a.href);
  });

  const baseOnSystemTurn = client.options.onSystemTurn;
  const baseOnTrace = client.options.onTrace;
  const baseOnError = client.options.onError;
  const baseOnStatus = client.options.onStatus;
  client.options.onSystemTurn = (m) => {
    baseOnSystemTurn?.(m);
    render();
  };
  client.options.onTrace = (m) => {
    baseOnTrace?.(m);
    render();
  };
  client.options.onError = (m) => {
    baseOnError?.(m);
    render();
  };
  client.options.onStatus = (s) => {
    baseOnStatus?.(s);
    render();
  };
  render();
}
