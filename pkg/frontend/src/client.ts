/**
 * Session client: connection lifecycle, sequence-number deduplication, the
 * one-in-flight-turn contract, and reconnect-with-resume.
 *
 * The transport is injected as a factory returning a minimal socket
 * interface, so the same client runs on the browser's native WebSocket and
 * on `ws` (or a scripted fake) in tests.
 */

import {
  ClientMessage,
  ErrorMessage,
  PROTOCOL_VERSION,
  ServerMessage,
  SessionCreated,
  SystemTurn,
  Trace,
  parseServerMessage,
} from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((event: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export type ConnectionStatus = "connecting" | "open" | "reconnecting" | "closed";

export interface SessionClientOptions {
  url: string;
  socketFactory: SocketFactory;
  token?: string;
  /** Called for every deduplicated, in-order-accepted server message. */
  onSystemTurn?: (msg: SystemTurn) => void;
  onTrace?: (msg: Trace) => void;
  onError?: (msg: ErrorMessage) => void;
  onStatus?: (status: ConnectionStatus) => void;
  /** Reconnect backoff base in ms (doubling, capped at 30 s). */
  backoffBaseMs?: number;
  maxReconnects?: number;
}

export class SessionClient {
  readonly options: SessionClientOptions;
  sessionId: string | null = null;
  status: ConnectionStatus = "closed";
  /** Highest server seq accepted; everything at or below is a duplicate. */
  lastServerSeq = 0;
  turnInFlight = false;

  private socket: SocketLike | null = null;
  private clientSeq = 0;
  private reconnectAttempt = 0;
  private wantReconnect = false;
  private seenSeqs = new Set<number>();

  constructor(options: SessionClientOptions) {
    this.options = options;
  }

  /** Open the socket and create (or resume) a session. */
  connect(): void {
    this.wantReconnect = true;
    this.openSocket();
  }

  disconnect(): void {
    this.wantReconnect = false;
    if (this.socket) {
      if (this.sessionId) {
        this.sendRaw({
          v: PROTOCOL_VERSION,
          kind: "EndSession",
          seq: this.nextSeq(),
          session: this.sessionId,
        });
      }
      this.socket.close();
      this.socket = null;
    }
    this.setStatus("closed");
  }

  /**
   * Send one user turn. Returns false (and sends nothing) while a previous
   * turn is still awaiting its reply or the connection is down.
   */
  sendTurn(text: string): boolean {
    if (this.turnInFlight || this.status !== "open" || !this.sessionId) {
      return false;
    }
    if (!text.trim()) {
      return false;
    }
    this.turnInFlight = true;
    this.sendRaw({
      v: PROTOCOL_VERSION,
      kind: "UserTurn",
      seq: this.nextSeq(),
      session: this.sessionId,
      text,
    });
    return true;
  }

  /** Feed one raw frame through dedup + dispatch (exposed for tests). */
  handleFrame(data: string): void {
    const msg = parseServerMessage(data);
    if (msg === null) return;
    this.handleMessage(msg);
  }

  private handleMessage(msg: ServerMessage): void {
    if (msg.kind === "Error") {
      this.turnInFlight = false;
      this.options.onError?.(msg);
      return;
    }
    if (msg.kind === "SessionCreated") {
      this.sessionId = msg.session;
      if ((msg as SessionCreated).resumed) {
        // replayed messages follow; dedup state already covers them
      } else {
        this.lastServerSeq = Math.max(this.lastServerSeq, msg.seq);
        this.seenSeqs.add(msg.seq);
      }
      return;
    }
    // SystemTurn / Trace: accept each server seq exactly once
    if (this.seenSeqs.has(msg.seq)) {
      return;
    }
    this.seenSeqs.add(msg.seq);
    this.lastServerSeq = Math.max(this.lastServerSeq, msg.seq);
    if (msg.kind === "SystemTurn") {
      this.options.onSystemTurn?.(msg);
    } else if (msg.kind === "Trace") {
      this.turnInFlight = false;
      this.options.onTrace?.(msg);
    }
  }

  private openSocket(): void {
    this.setStatus(this.reconnectAttempt > 0 ? "reconnecting" : "connecting");
    const socket = this.options.socketFactory(this.options.url);
    this.socket = socket;
    socket.onopen = () => {
      this.reconnectAttempt = 0;
      this.setStatus("open");
      const create: ClientMessage = {
        v: PROTOCOL_VERSION,
        kind: "CreateSession",
        seq: this.nextSeq(),
        ...(this.options.token ? { token: this.options.token } : {}),
        ...(this.sessionId
          ? { resume: this.sessionId, last_seq: this.lastServerSeq }
          : {}),
      };
      this.sendRaw(create);
    };
    socket.onmessage = (event) => this.handleFrame(event.data);
    socket.onclose = () => {
      this.socket = null;
      this.turnInFlight = false;
      if (this.wantReconnect) {
        this.scheduleReconnect();
      } else {
        this.setStatus("closed");
      }
    };
    socket.onerror = () => {
      // the close handler owns reconnection
    };
  }

  private scheduleReconnect(): void {
    const max = this.options.maxReconnects ?? 20;
    if (this.reconnectAttempt >= max) {
      this.setStatus("closed");
      return;
    }
    this.setStatus("reconnecting");
    const base = this.options.backoffBaseMs ?? 500;
    const delay = Math.min(base * 2 ** this.reconnectAttempt, 30_000);
    this.reconnectAttempt += 1;
    setTimeout(() => {
      if (this.wantReconnect) this.openSocket();
    }, delay);
  }

  private sendRaw(msg: ClientMessage): void {
    this.socket?.send(JSON.stringify(msg));
  }

  private nextSeq(): number {
    this.clientSeq += 1;
    return this.clientSeq;
  }

  private setStatus(status: ConnectionStatus): void {
    this.status = status;
    this.options.onStatus?.(status);
  }
}
