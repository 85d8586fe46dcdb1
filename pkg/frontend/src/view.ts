/**
 * View model for the chat page: an ordered message list, the latest trace
 * for the debug pane, and the input-enabled flag. Pure TypeScript so the
 * rendering rules are testable without a DOM; dom.ts binds it to elements.
 */

import { SessionClient } from "./client.js";
import { ErrorMessage, SystemTurn, Trace, TracePayload } from "./protocol.js";

export interface ChatMessage {
  speaker: "user" | "system";
  text: string;
  seq: number | null; // server seq for system turns, null for local echoes
  turnIndex: number | null;
  error?: boolean;
}

export class ChatViewModel {
  messages: ChatMessage[] = [];
  latestTrace: TracePayload | null = null;
  latestTraceTurn: number | null = null;
  connection: string = "closed";
  debugVisible = false;
  private renderedTurnSeqs = new Set<number>();

  /** Wire the model to a client's callbacks. */
  attach(client: SessionClient): SessionClient {
    client.options.onSystemTurn = (msg) => this.addSystemTurn(msg);
    client.options.onTrace = (msg) => this.addTrace(msg);
    client.options.onError = (msg) => this.addError(msg);
    client.options.onStatus = (status) => {
      this.connection = status;
    };
    return client;
  }

  /** The one-in-flight contract at the UI level: can the user type now? */
  canSend(client: SessionClient): boolean {
    return client.status === "open" && !client.turnInFlight;
  }

  addLocalUserEcho(text: string): void {
    this.messages.push({ speaker: "user", text, seq: null, turnIndex: null });
  }

  addSystemTurn(msg: SystemTurn): void {
    // the client already deduplicates by seq; this guard keeps the render
    // list correct even if a message object is delivered twice
    if (this.renderedTurnSeqs.has(msg.seq)) return;
    this.renderedTurnSeqs.add(msg.seq);
    this.messages.push({
      speaker: "system",
      text: msg.text,
      seq: msg.seq,
      turnIndex: msg.turn.index,
    });
  }

  addTrace(msg: Trace): void {
    // the debug pane always reflects the most recent system turn
    if (this.latestTraceTurn === null || msg.turn_index >= this.latestTraceTurn) {
      this.latestTrace = msg.trace;
      this.latestTraceTurn = msg.turn_index;
    }
  }

  addError(msg: ErrorMessage): void {
    this.messages.push({
      speaker: "system",
      text: `[${msg.code}] ${msg.message}`,
      seq: null,
      turnIndex: null,
      error: true,
    });
  }

  systemTurnCount(): number {
    return this.messages.filter((m) => m.speaker === "system" && !m.error).length;
  }

  toggleDebug(): boolean {
    this.debugVisible = !this.debugVisible;
    return this.debugVisible;
  }

  /** Flattened plan lines for the debug pane. */
  planLines(): string[] {
    if (!this.latestTrace) return [];
    const out: string[] = [];
    const walk = (steps: TracePayload["plan"], depth: number) => {
      for (const step of steps) {
        const marker = step.current ? ">" : " ";
        out.push(
          `${marker} ${"  ".repeat(depth)}${step.id} ${step.episode} [${step.status}] ${step.formula}`,
        );
        if (step.subplan) walk(step.subplan, depth + 1);
      }
    };
    walk(this.latestTrace.plan, 0);
    return out;
  }

  eventLines(): string[] {
    if (!this.latestTrace) return [];
    return this.latestTrace.events.map((e) => JSON.stringify(e));
  }
}

/** Download the service's transcript document, unmodified. */
export async function exportTranscript(
  httpBase: string,
  sessionId: string,
  fetchImpl: typeof fetch = fetch,
): Promise<string> {
  const resp = await fetchImpl(`${httpBase}/sessions/${sessionId}/transcript`);
  if (!resp.ok) {
    throw new Error(`export failed: HTTP ${resp.status}`);
  }
  return await resp.text();
}
