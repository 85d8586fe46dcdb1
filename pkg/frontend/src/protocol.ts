/**
 * Wire types for the session service protocol (see PROTOCOL.md, v1).
 * The client speaks this format verbatim and nothing else.
 */

export const PROTOCOL_VERSION = 1;

export interface BaseMessage {
  v: number;
  kind: string;
  seq: number;
  session: string | null;
}

export interface SessionCreated extends BaseMessage {
  kind: "SessionCreated";
  resumed?: boolean;
}

export interface TurnPayload {
  index: number;
  speaker: "system" | "user";
  words: string[];
  text: string;
  time: number;
  kind?: string;
  provenance?: string;
}

export interface SystemTurn extends BaseMessage {
  kind: "SystemTurn";
  text: string;
  turn: TurnPayload;
}

export interface PlanStepSnapshot {
  id: string;
  episode: string;
  formula: string;
  status: string;
  certainty: number;
  token?: string;
  current?: boolean;
  subplan?: PlanStepSnapshot[];
}

export interface TracePayload {
  events: Array<Record<string, unknown>>;
  plan: PlanStepSnapshot[];
}

export interface Trace extends BaseMessage {
  kind: "Trace";
  turn_index: number;
  trace: TracePayload;
}

export interface ErrorMessage extends BaseMessage {
  kind: "Error";
  code: string;
  message: string;
}

export type ServerMessage = SessionCreated | SystemTurn | Trace | ErrorMessage;

export interface CreateSession {
  v: number;
  kind: "CreateSession";
  seq: number;
  token?: string;
  resume?: string;
  last_seq?: number;
}

export interface UserTurn {
  v: number;
  kind: "UserTurn";
  seq: number;
  session: string;
  text: string;
}

export interface EndSession {
  v: number;
  kind: "EndSession";
  seq: number;
  session: string;
}

export type ClientMessage = CreateSession | UserTurn | EndSession;

/** Parse one wire frame; returns null for frames that are not protocol v1. */
export function parseServerMessage(data: string): ServerMessage | null {
  let raw: unknown;
  try {
    raw = JSON.parse(data);
  } catch {
    return null;
  }
  if (typeof raw !== "object" || raw === null) return null;
  const msg = raw as Record<string, unknown>;
  if (msg.v !== PROTOCOL_VERSION || typeof msg.kind !== "string") return null;
  switch (msg.kind) {
    case "SessionCreated":
    case "SystemTurn":
    case "Trace":
    case "Error":
      return msg as unknown as ServerMessage;
    default:
      return null;
  }
}
