/** Browser entry point: connect to the service named by ?service=host:port
 * (default localhost:8140) and bind the page. */

import { SessionClient } from "./client.js";
import { bindPage, PageElements } from "./dom.js";
import { ChatViewModel } from "./view.js";

function serviceBase(): string {
  const params = new URLSearchParams(location.search);
  return params.get("service") ?? "127.0.0.1:8140";
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const base = serviceBase();
const model = new ChatViewModel();
const client = new SessionClient({
  url: `ws://${base}/ws`,
  socketFactory: (url) => new WebSocket(url) as unknown as import("./client.js").SocketLike,
});
model.attach(client);

const elements: PageElements = {
  log: el("log"),
  input: el<HTMLInputElement>("input"),
  send: el<HTMLButtonElement>("send"),
  status: el("status"),
  debugToggle: el<HTMLButtonElement>("debug-toggle"),
  debugPane: el("debug-pane"),
  exportButton: el<HTMLButtonElement>("export"),
};
bindPage(model, client, elements, `http://${base}`);
client.connect();
