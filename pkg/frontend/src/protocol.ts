/**
 * Wire protocol v1 spoken by the vision-assist gateway: one JSON message per
 * LF-terminated line. The panel only ever *sends* cmd messages built here and
 * *receives* event messages parsed here — it never fabricates events.
 */

export const PROTOCOL_VERSION = 1;

export type Button = "green" | "blue";
export type LabelSource = "voice" | "text";

export interface CmdMessage {
  v: typeof PROTOCOL_VERSION;
  type: "cmd";
  cmd: string;
  id?: string;
  [key: string]: unknown;
}

export interface DetectionItem {
  label: string;
  confidence: number;
  box: [number, number, number, number];
}

export interface EventMessage {
  v: number;
  type: "event";
  event: string;
  at?: number;
  // ack
  cmd?: string;
  id?: string;
  result?: Record<string, unknown>;
  // announcement
  text?: string;
  priority?: number;
  priority_name?: string;
  // buzzer
  beep?: boolean;
  state?: string;
  meters?: number;
  // mode
  mode?: string;
  previous?: string;
  // detection
  frame_id?: string;
  items?: DetectionItem[];
  // llm
  request_id?: string;
  image_attached?: boolean;
  latency_ms?: number;
  backend?: string;
  // latency
  path?: string;
  ms?: number;
  // errors / warnings
  detail?: string;
}

let nextId = 0;

function cmd(name: string, fields: Record<string, unknown> = {}): CmdMessage {
  nextId += 1;
  return { v: PROTOCOL_VERSION, type: "cmd", cmd: name, id: `panel-${nextId}`, ...fields };
}

/** Test hook: make generated command ids predictable again. */
export function resetCommandIds(): void {
  nextId = 0;
}

export const commands = {
  pressButton: (button: Button) => cmd("press_button", { button }),
  setDistance: (meters: number) => cmd("set_distance", { meters }),
  injectFrame: (asset: string) => cmd("inject_frame", { asset }),
  provideLabel: (text: string, source: LabelSource = "text") =>
    cmd("provide_label", { text, source }),
  listDb: () => cmd("list_db"),
  removeLabel: (label: string) => cmd("remove_label", { label }),
  getTelemetry: () => cmd("get_telemetry"),
  listAssets: () => cmd("list_assets"),
  shutdown: () => cmd("shutdown"),
};

export function encode(message: CmdMessage): string {
  return JSON.stringify(message);
}

/**
 * Parse one protocol line into an event. Returns null for anything that is
 * not a well-formed v1 event message (the panel surfaces those as errors).
 */
export function parseEvent(line: string): EventMessage | null {
  let doc: unknown;
  try {
    doc = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const msg = doc as Record<string, unknown>;
  if (msg.v !== PROTOCOL_VERSION || msg.type !== "event" || typeof msg.event !== "string") {
    return null;
  }
  return msg as unknown as EventMessage;
}
