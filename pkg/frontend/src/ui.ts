/**
 * Browser wiring for the control panel. All state lives in the daemon; this
 * file renders PanelClient.state and turns clicks into protocol commands.
 */

import { PanelClient } from "./client.js";
import { commands } from "./protocol.js";
import { SessionState, descriptionEntries } from "./session.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

let client: PanelClient | null = null;
let audio: AudioContext | null = null;
let lastBeepSeen: number | null = null;

function beep(): void {
  try {
    audio = audio ?? new AudioContext();
    const osc = audio.createOscillator();
    const gain = audio.createGain();
    osc.frequency.value = 880;
    gain.gain.value = 0.15;
    osc.connect(gain).connect(audio.destination);
    osc.start();
    osc.stop(audio.currentTime + 0.12);
  } catch {
    // audio is best-effort; the indicator still shows the alert
  }
}

function render(state: SessionState): void {
  el("connection").textContent = state.connection;
  el("connection").className = `badge ${state.connection}`;
  el("mode").textContent = state.mode;
  el("label-entry").style.display = state.mode === "enroll_await_label" ? "flex" : "none";

  const buzzer = el("buzzer");
  buzzer.textContent = state.buzzerState === "alerting" ? "BUZZER ON" : "buzzer off";
  buzzer.className = `buzzer ${state.buzzerState}`;
  if (state.lastBeepAt !== null && state.lastBeepAt !== lastBeepSeen) {
    lastBeepSeen = state.lastBeepAt;
    beep();
  }
  el("distance-value").textContent =
    state.lastDistanceM !== null ? `${state.lastDistanceM.toFixed(2)} m` : "—";

  const transcript = el("transcript");
  transcript.innerHTML = "";
  for (const entry of state.transcript.slice(-60)) {
    const row = document.createElement("div");
    row.className = `utterance p${entry.priority}`;
    row.textContent = `[${(entry.at / 1000).toFixed(1)}s] ${entry.text}`;
    transcript.appendChild(row);
  }
  transcript.scrollTop = transcript.scrollHeight;
  el("description-count").textContent = String(descriptionEntries(state).length);

  const assets = el("assets");
  assets.innerHTML = "";
  for (const asset of state.assets) {
    const button = document.createElement("button");
    button.textContent = asset;
    button.onclick = () => client?.send(commands.injectFrame(asset));
    assets.appendChild(button);
  }

  const overlay = el("overlay");
  overlay.innerHTML = "";
  if (state.lastDetections) {
    el("frame-name").textContent = state.lastDetections.frameId;
    for (const item of state.lastDetections.items) {
      const box = document.createElement("div");
      box.className = "det-box";
      const [x0, y0, x1, y1] = item.box;
      box.style.left = `${x0 * 100}%`;
      box.style.top = `${y0 * 100}%`;
      box.style.width = `${(x1 - x0) * 100}%`;
      box.style.height = `${(y1 - y0) * 100}%`;
      box.title = `${item.label} (${item.confidence.toFixed(2)})`;
      const tag = document.createElement("span");
      tag.textContent = item.label;
      box.appendChild(tag);
      overlay.appendChild(box);
    }
  }

  const db = el("db-list");
  db.innerHTML = "";
  for (const label of state.dbLabels) {
    const row = document.createElement("div");
    row.className = "db-row";
    const name = document.createElement("span");
    name.textContent = label;
    const remove = document.createElement("button");
    remove.textContent = "remove";
    remove.onclick = () => {
      if (window.confirm(`Remove "${label}" from the recognition database?`)) {
        client?.send(commands.removeLabel(label));
        client?.send(commands.listDb());
      }
    };
    row.append(name, remove);
    db.appendChild(row);
  }

  if (state.telemetry) {
    const { recognition, detail } = state.telemetry;
    el("telemetry").textContent =
      `recognition n=${recognition.count} mean=${fmtMs(recognition.mean_ms)} | ` +
      `detail n=${detail.count} mean=${fmtMs(detail.mean_ms)}`;
  }

  const log = el("event-log");
  log.innerHTML = "";
  for (const event of state.events.slice(-25)) {
    const row = document.createElement("div");
    row.textContent = JSON.stringify(event);
    log.appendChild(row);
  }
  log.scrollTop = log.scrollHeight;

  el("last-error").textContent = state.lastError ?? "";
  el("last-warning").textContent = state.lastWarning ?? "";
}

function fmtMs(ms: number | null): string {
  return ms === null ? "n/a" : `${ms.toFixed(0)}ms`;
}

function refreshFromDaemon(): void {
  // no panel-side authority: rebuild everything by querying after (re)connect
  client?.send(commands.listAssets());
  client?.send(commands.listDb());
  client?.send(commands.getTelemetry());
}

function connect(): void {
  client?.close();
  const url = (el<HTMLInputElement>("endpoint")).value;
  const socket = new WebSocket(url);
  client = new PanelClient(socket);
  client.onChange((state, _event) => render(state));
  socket.addEventListener("open", refreshFromDaemon);
  socket.addEventListener("close", () => render(client!.state));
  render(client.state);
}

export function init(): void {
  el<HTMLInputElement>("endpoint").value = `ws://${window.location.host}/ws`;
  el("connect").onclick = connect;
  el("green").onclick = () => client?.send(commands.pressButton("green"));
  el("blue").onclick = () => client?.send(commands.pressButton("blue"));
  el("send-label").onclick = () => {
    const input = el<HTMLInputElement>("label-text");
    if (input.value.trim()) {
      client?.send(commands.provideLabel(input.value.trim(), "text"));
      input.value = "";
      client?.send(commands.listDb());
    }
  };
  const slider = el<HTMLInputElement>("distance");
  slider.oninput = () => {
    const meters = Number(slider.value);
    el("distance-target").textContent = `${meters.toFixed(2)} m`;
    client?.send(commands.setDistance(meters));
  };
  el("refresh-db").onclick = () => client?.send(commands.listDb());
  el("refresh-telemetry").onclick = () => client?.send(commands.getTelemetry());
}

init();
