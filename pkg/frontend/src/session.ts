/**
 * Panel session state: a pure reduction of the gateway event stream. The
 * panel holds no authority of its own — everything here is reconstructable
 * by reconnecting and re-querying (list_db, get_telemetry, list_assets).
 */

import type { DetectionItem, EventMessage } from "./protocol.js";

export const EVENT_RING_SIZE = 500;

export interface TranscriptEntry {
  at: number;
  text: string;
  priority: number;
  priorityName: string;
}

export interface TelemetryPath {
  count: number;
  mean_ms: number | null;
}

export interface SessionState {
  connection: "disconnected" | "connecting" | "connected";
  mode: string;
  buzzerState: "quiet" | "alerting";
  lastBeepAt: number | null;
  lastDistanceM: number | null;
  transcript: TranscriptEntry[];
  events: EventMessage[];
  dbLabels: string[];
  assets: string[];
  telemetry: { recognition: TelemetryPath; detail: TelemetryPath } | null;
  lastDetections: { frameId: string; items: DetectionItem[] } | null;
  lastError: string | null;
  lastWarning: string | null;
}

export function initialState(): SessionState {
  return {
    connection: "disconnected",
    mode: "core",
    buzzerState: "quiet",
    lastBeepAt: null,
    lastDistanceM: null,
    transcript: [],
    events: [],
    dbLabels: [],
    assets: [],
    telemetry: null,
    lastDetections: null,
    lastError: null,
    lastWarning: null,
  };
}

function pushRing(events: EventMessage[], event: EventMessage): EventMessage[] {
  const next = events.concat(event);
  return next.length > EVENT_RING_SIZE ? next.slice(next.length - EVENT_RING_SIZE) : next;
}

/** Apply one gateway event; returns a new state object (inputs untouched). */
export function reduce(state: SessionState, event: EventMessage): SessionState {
  const next: SessionState = { ...state, events: pushRing(state.events, event) };
  switch (event.event) {
    case "announcement":
      next.transcript = state.transcript.concat({
        at: event.at ?? 0,
        text: event.text ?? "",
        priority: event.priority ?? 99,
        priorityName: event.priority_name ?? "unknown",
      });
      break;
    case "buzzer":
      next.buzzerState = event.state === "alerting" ? "alerting" : "quiet";
      if (event.beep) next.lastBeepAt = event.at ?? 0;
      if (typeof event.meters === "number") next.lastDistanceM = event.meters;
      break;
    case "mode":
      next.mode = event.mode ?? state.mode;
      break;
    case "detection":
      next.lastDetections = {
        frameId: event.frame_id ?? "",
        items: event.items ?? [],
      };
      break;
    case "ack":
      applyAck(next, event);
      break;
    case "protocol_error":
      next.lastError = event.detail ?? "protocol error";
      break;
    case "warning":
      next.lastWarning = event.text ?? "";
      break;
    default:
      break; // llm_request / llm_response / latency land in the event log only
  }
  return next;
}

function applyAck(state: SessionState, event: EventMessage): void {
  const result = event.result;
  if (!result) return;
  switch (event.cmd) {
    case "list_db":
      if (Array.isArray(result.labels)) state.dbLabels = result.labels as string[];
      break;
    case "list_assets":
      if (Array.isArray(result.assets)) state.assets = result.assets as string[];
      break;
    case "remove_label":
      // authoritative list comes from a follow-up list_db
      break;
    case "get_telemetry": {
      const recognition = result.recognition as TelemetryPath | undefined;
      const detail = result.detail as TelemetryPath | undefined;
      if (recognition && detail) state.telemetry = { recognition, detail };
      if (typeof result.mode === "string") state.mode = result.mode;
      break;
    }
    default:
      break;
  }
}

/** Description entries (priority class 1) in spoken order. */
export function descriptionEntries(state: SessionState): TranscriptEntry[] {
  return state.transcript.filter((t) => t.priorityName === "description");
}
