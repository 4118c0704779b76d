/**
 * PanelClient: binds a WebSocket-ish transport (one protocol message per text
 * frame) to the session reducer. The browser page hands in a native
 * WebSocket; tests hand in a `ws` client — both expose the same surface.
 */

import { CmdMessage, EventMessage, encode, parseEvent } from "./protocol.js";
import { SessionState, initialState, reduce } from "./session.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  addEventListener(type: "open" | "message" | "close" | "error",
                   listener: (event: any) => void): void;
}

export type StateListener = (state: SessionState, event: EventMessage | null) => void;

export class PanelClient {
  state: SessionState = initialState();
  private listeners: StateListener[] = [];
  private sent: CmdMessage[] = [];

  constructor(private socket: SocketLike) {
    this.state = { ...this.state, connection: "connecting" };
    socket.addEventListener("open", () => {
      this.state = { ...this.state, connection: "connected" };
      this.emit(null);
    });
    socket.addEventListener("message", (event: { data: unknown }) => {
      const text = typeof event.data === "string" ? event.data : String(event.data);
      for (const line of text.split("\n")) {
        if (!line.trim()) continue;
        const parsed = parseEvent(line);
        if (parsed === null) {
          this.state = { ...this.state, lastError: `unparseable event: ${line.slice(0, 120)}` };
          this.emit(null);
          continue;
        }
        this.state = reduce(this.state, parsed);
        this.emit(parsed);
      }
    });
    socket.addEventListener("close", () => {
      this.state = { ...this.state, connection: "disconnected" };
      this.emit(null);
    });
    socket.addEventListener("error", () => {
      this.state = { ...this.state, connection: "disconnected", lastError: "socket error" };
      this.emit(null);
    });
  }

  onChange(listener: StateListener): void {
    this.listeners.push(listener);
  }

  private emit(event: EventMessage | null): void {
    for (const listener of this.listeners) listener(this.state, event);
  }

  /** Every user action funnels through here: exactly one cmd per call. */
  send(message: CmdMessage): void {
    this.sent.push(message);
    this.socket.send(encode(message));
  }

  sentCommands(): readonly CmdMessage[] {
    return this.sent;
  }

  /** Wait until a received event satisfies the predicate (tests + UI sync). */
  waitFor(predicate: (event: EventMessage) => boolean, timeoutMs = 5000): Promise<EventMessage> {
    return new Promise((resolve, reject) => {
      const timer = setTimeout(
        () => reject(new Error(`no matching event within ${timeoutMs}ms`)), timeoutMs);
      this.onChange((_state, event) => {
        if (event !== null && predicate(event)) {
          clearTimeout(timer);
          resolve(event);
        }
      });
    });
  }

  close(): void {
    this.socket.close();
  }
}
