/**
 * Companion server for the panel: serves the static assets over HTTP and
 * bridges browser WebSocket frames to the daemon's LF-delimited TCP protocol,
 * one message per frame, verbatim in both directions.
 *
 *   node dist/bridge.js --gateway 127.0.0.1:7765 --http 8080
 */

import * as fs from "node:fs";
import * as http from "node:http";
import * as net from "node:net";
import * as path from "node:path";
import { fileURLToPath } from "node:url";
import { WebSocketServer, WebSocket } from "ws";

const HERE = path.dirname(fileURLToPath(import.meta.url));

const CONTENT_TYPES: Record<string, string> = {
  ".html": "text/html; charset=utf-8",
  ".js": "text/javascript; charset=utf-8",
  ".css": "text/css; charset=utf-8",
  ".map": "application/json",
};

export interface BridgeOptions {
  gateway: string; // host:port of the daemon
  httpPort: number;
  staticRoot?: string;
}

export interface BridgeHandle {
  port: number;
  close(): Promise<void>;
}

function parseGateway(endpoint: string): { host: string; port: number } {
  const idx = endpoint.lastIndexOf(":");
  if (idx < 0) throw new Error(`gateway endpoint must be host:port, got ${endpoint}`);
  return { host: endpoint.slice(0, idx) || "127.0.0.1", port: Number(endpoint.slice(idx + 1)) };
}

export function startBridge(options: BridgeOptions): Promise<BridgeHandle> {
  const { host, port } = parseGateway(options.gateway);
  const staticRoot = options.staticRoot ?? path.join(HERE, "..", "static");
  const distRoot = HERE;

  const server = http.createServer((req, res) => {
    const url = (req.url ?? "/").split("?")[0];
    let filePath: string | null = null;
    if (url === "/" || url === "/index.html") {
      filePath = path.join(staticRoot, "index.html");
    } else if (url.startsWith("/dist/")) {
      filePath = path.join(distRoot, url.slice("/dist/".length));
    } else {
      filePath = path.join(staticRoot, url.slice(1));
    }
    const resolved = path.resolve(filePath);
    if (!resolved.startsWith(path.resolve(staticRoot)) && !resolved.startsWith(path.resolve(distRoot))) {
      res.writeHead(403).end("forbidden");
      return;
    }
    fs.readFile(resolved, (err, data) => {
      if (err) {
        res.writeHead(404).end("not found");
        return;
      }
      res.writeHead(200, { "Content-Type": CONTENT_TYPES[path.extname(resolved)] ?? "application/octet-stream" });
      res.end(data);
    });
  });

  const wss = new WebSocketServer({ server, path: "/ws" });
  wss.on("connection", (ws: WebSocket) => {
    const tcp = net.createConnection({ host, port });
    let buffer = "";
    tcp.on("data", (chunk) => {
      buffer += chunk.toString("utf-8");
      let nl: number;
      while ((nl = buffer.indexOf("\n")) >= 0) {
        const line = buffer.slice(0, nl);
        buffer = buffer.slice(nl + 1);
        if (line.trim() && ws.readyState === WebSocket.OPEN) ws.send(line);
      }
    });
    tcp.on("error", () => ws.close(1011, "gateway unreachable"));
    tcp.on("close", () => ws.close());
    ws.on("message", (data) => {
      tcp.write(data.toString() + "\n");
    });
    ws.on("close", () => tcp.destroy());
    ws.on("error", () => tcp.destroy());
  });

  return new Promise((resolve, reject) => {
    server.once("error", reject);
    server.listen(options.httpPort, "127.0.0.1", () => {
      const address = server.address() as net.AddressInfo;
      resolve({
        port: address.port,
        close: () =>
          new Promise<void>((done) => {
            for (const clientSocket of wss.clients) clientSocket.terminate();
            wss.close(() => server.close(() => done()));
          }),
      });
    });
  });
}

function parseArgs(argv: string[]): BridgeOptions {
  let gateway = "127.0.0.1:7765";
  let httpPort = 8080;
  for (let i = 0; i < argv.length; i += 1) {
    if (argv[i] === "--gateway") gateway = argv[++i];
    else if (argv[i] === "--http") httpPort = Number(argv[++i]);
  }
  return { gateway, httpPort };
}

const isMain = process.argv[1] && path.resolve(process.argv[1]) === fileURLToPath(import.meta.url);
if (isMain) {
  const options = parseArgs(process.argv.slice(2));
  startBridge(options).then((handle) => {
    console.log(`panel bridge: http://127.0.0.1:${handle.port} -> gateway ${options.gateway}`);
  }).catch((err) => {
    console.error(`bridge failed to start: ${err}`);
    process.exit(1);
  });
}
