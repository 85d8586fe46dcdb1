import { describe, expect, it } from "vitest";

import { SessionClient } from "../src/client.js";
import { ChatViewModel } from "../src/view.js";
import { MockService, settle } from "./mock-server.js";

function makeClient(service: MockService) {
  const model = new ChatViewModel();
  const client = new SessionClient({
    url: "ws://mock/ws",
    socketFactory: service.factory(),
    backoffBaseMs: 1,
  });
  model.attach(client);
  return { model, client };
}

describe("session lifecycle", () => {
  it("renders the opening system turns after connect", async () => {
    const service = new MockService();
    const { model, client } = makeClient(service);
    client.connect();
    await settle();
    expect(client.sessionId).toBe("mock1");
    expect(model.messages.map((m) => m.text)).toEqual([
      "hello doctor . thank you for seeing me today .",
      "so , do you have the results of my test ?",
    ]);
    expect(model.connection).toBe("open");
  });

  it("sends a turn and renders the replies with the latest trace", async () => {
    const service = new MockService();
    const { model, client } = makeClient(service);
    client.connect();
    await settle();
    expect(client.sendTurn("the cancer has spread")).toBe(true);
    await settle();
    expect(model.messages.filter((m) => m.speaker === "system")).toHaveLength(4);
    expect(model.latestTrace).not.toBeNull();
    expect(model.latestTraceTurn).toBeGreaterThan(0);
  });

  it("blocks empty input client-side", async () => {
    const service = new MockService();
    const { client } = makeClient(service);
    client.connect();
    await settle();
    expect(client.sendTurn("   ")).toBe(false);
  });
});

describe("one-in-flight-turn contract", () => {
  it("rejects a second send until the reply arrives", async () => {
    const service = new MockService();
    const { client } = makeClient(service);
    client.connect();
    await settle();
    // hold replies back so the first turn stays in flight
    const pending: Array<() => void> = [];
    const realReceive = service.receive.bind(service);
    service.receive = (socket, data) => {
      const msg = JSON.parse(data);
      if (msg.kind === "UserTurn") {
        pending.push(() => realReceive(socket, data));
        return;
      }
      realReceive(socket, data);
    };
    expect(client.sendTurn("first")).toBe(true);
    expect(client.sendTurn("second")).toBe(false); // rejected: in flight
    pending.forEach((deliver) => deliver());
    await settle();
    expect(client.turnInFlight).toBe(false);
    expect(client.sendTurn("third now works")).toBe(true);
  });
});

describe("sequence-number deduplication", () => {
  it("renders every SystemTurn exactly once under duplicated frames", async () => {
    const service = new MockService();
    service.duplicateKinds = new Set(["SystemTurn", "Trace"]);
    const { model, client } = makeClient(service);
    client.connect();
    await settle();
    client.sendTurn("the cancer has spread");
    await settle();
    const texts = model.messages.filter((m) => m.speaker === "system").map((m) => m.text);
    expect(texts).toHaveLength(new Set(model.messages.map((m) => m.seq)).size);
    expect(texts).toHaveLength(4);
    // property-style sweep: keep injecting duplicates over more turns
    for (let i = 0; i < 3; i++) {
      client.sendTurn(`turn ${i}`);
      await settle();
    }
    const seqs = model.messages
      .filter((m) => m.speaker === "system")
      .map((m) => m.seq);
    expect(new Set(seqs).size).toBe(seqs.length);
  });
});

describe("reconnect with resume", () => {
  it("replays missed messages with no duplicates and no gaps", async () => {
    const service = new MockService();
    const { model, client } = makeClient(service);
    client.connect();
    await settle();
    client.sendTurn("the cancer has spread");
    await settle();
    const before = model.messages.filter((m) => m.speaker === "system").length;

    service.goDown();
    await settle();
    // messages produced while the client is away are replayed on resume
    service.goUp();
    await new Promise((resolve) => setTimeout(resolve, 10));
    await settle();
    expect(model.connection).toBe("open");
    client.sendTurn("you may have months left");
    await settle();

    const systemMessages = model.messages.filter((m) => m.speaker === "system");
    expect(systemMessages.length).toBeGreaterThan(before);
    const seqs = systemMessages.map((m) => m.seq as number);
    expect(new Set(seqs).size).toBe(seqs.length); // no duplicates
    // no gaps: together with traces, the server seqs cover a full range
    const allSeqs = [...new Set(service.log.map((f) => f.seq))].sort((a, b) => a - b);
    expect(allSeqs[allSeqs.length - 1]).toBe(allSeqs.length);
  });

  it("shows an error banner state when the service stays down", async () => {
    const service = new MockService();
    const { model, client } = makeClient(service);
    service.goDown();
    client.options.maxReconnects = 2;
    client.connect();
    await settle();
    await new Promise((resolve) => setTimeout(resolve, 20));
    expect(["reconnecting", "closed"]).toContain(model.connection);
    expect(model.messages).toHaveLength(0); // no crash, nothing fake rendered
  });
});

describe("errors", () => {
  it("renders service errors inline", async () => {
    const service = new MockService();
    const { model, client } = makeClient(service);
    client.connect();
    await settle();
    client.sendTurn("a normal turn");
    await settle();
    // bypass the client's own seq tracking to force a replay rejection
    (client as unknown as { clientSeq: number }).clientSeq = 0;
    client.sendTurn("duplicate seq");
    await settle();
    const errors = model.messages.filter((m) => m.error);
    expect(errors).toHaveLength(1);
    expect(errors[0].text).toContain("ReplayRejected");
  });
});

describe("debug pane", () => {
  it("derives its content only from Trace messages", async () => {
    const service = new MockService();
    const { model, client } = makeClient(service);
    client.connect();
    await settle();
    expect(model.debugVisible).toBe(false);
    model.toggleDebug();
    expect(model.debugVisible).toBe(true);
    client.sendTurn("the cancer has spread");
    await settle();
    expect(model.eventLines()).toEqual(['{"event":"mock"}']);
  });
});
