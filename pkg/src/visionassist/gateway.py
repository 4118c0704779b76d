"""Control wire protocol and the live daemon.

One JSON message per LF-terminated line, protocol version 1. Clients send
`{"v":1,"type":"cmd","cmd":...}`; every command yields a correlated `ack`
event (echoing an optional client `id`) or a `protocol_error`. Orchestrator
effects are broadcast to every connected client in effect order. The protocol
never carries image payloads outward.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from .context_llm import (
    DescriptionRequest,
    MockLVLMClient,
    RequestOrigin,
    client_from_env,
    describe,
)
from .errors import (
    DescriptionTimeoutError,
    DescriptionTransportError,
    PrivacyViolationError,
    ScenarioFormatError,
    VisionAssistError,
)
from .orchestrator import (
    ButtonPressed,
    DescriptionCompleted,
    DescriptionFailed,
    DispatchDescription,
    DistanceArrived,
    FrameArrived,
    LabelProvided,
    Orchestrator,
)
from .proximity import DistanceReading
from .recognition_db import RecognitionDatabase
from .simulator import (
    Scenario,
    build_system,
    effect_wire_entry,
    parse_asset_spec,
    timeline_to_event,
)

PROTOCOL_VERSION = 1
CLIENT_BUFFER_LIMIT = 1024  # outbound messages; slow clients beyond this are dropped

log = logging.getLogger("visionassist.gateway")

COMMANDS = ("press_button", "set_distance", "inject_frame", "provide_label",
            "list_db", "remove_label", "get_telemetry", "list_assets", "shutdown")


def encode_event(event: str, fields: dict) -> bytes:
    doc = {"v": PROTOCOL_VERSION, "type": "event", "event": event}
    doc.update(fields)
    return (json.dumps(doc, sort_keys=False) + "\n").encode("utf-8")


@dataclass
class _Client:
    conn: socket.socket
    address: str
    outbox: "queue.Queue[Optional[bytes]]" = field(
        default_factory=lambda: queue.Queue(maxsize=CLIENT_BUFFER_LIMIT))
    alive: bool = True
    writer: Optional[threading.Thread] = None

    def send(self, data: bytes) -> None:
        if not self.alive:
            return
        try:
            self.outbox.put_nowait(data)
        except queue.Full:
            log.warning("client %s too slow; disconnecting", self.address)
            self.alive = False
            try:
                self.conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


class GatewayDaemon:
    """Serves the wire protocol around a live orchestrator.

    endpoint: "host:port" for TCP or a filesystem path for a Unix socket.
    A loaded scenario contributes injectable assets, LLM mock config, and an
    optional background timeline feed replayed in wall-clock time.
    """

    def __init__(self, endpoint: str, scenario: Optional[Scenario] = None,
                 db: Optional[RecognitionDatabase] = None,
                 llm: str = "mock"):
        self.endpoint = endpoint
        self.scenario = scenario
        self.startup_warnings: list[str] = []

        if scenario is not None:
            system = build_system(scenario, db=db)
            self.orchestrator = system.orchestrator
            self.llm_client = system.llm_client
            self.llm_timeout_ms = system.llm_timeout_ms
        else:
            from .backends import (FixtureDetectorBackend, FixtureEmbedderBackend,
                                   FixtureFaceDetectorBackend)
            self.orchestrator = Orchestrator(
                detector=FixtureDetectorBackend(),
                face_detector=FixtureFaceDetectorBackend(),
                embedder=FixtureEmbedderBackend(),
                db=db if db is not None else RecognitionDatabase())
            self.llm_client = MockLVLMClient()
            self.llm_timeout_ms = 10_000

        if llm == "remote":
            client, warning = client_from_env(os.environ)
            if warning:
                self.startup_warnings.append(warning)
            else:
                self.llm_client = client

        self._queue: "queue.Queue[tuple]" = queue.Queue()
        self._clients: list[_Client] = []
        self._clients_lock = threading.Lock()
        self._listener: Optional[socket.socket] = None
        self._stop = threading.Event()
        self._started = threading.Event()
        self._start_monotonic = time.monotonic()
        self.bound_address: Optional[tuple] = None

    # -- clock -------------------------------------------------------------------

    def now_ms(self) -> int:
        return int((time.monotonic() - self._start_monotonic) * 1000)

    # -- lifecycle -----------------------------------------------------------------

    def serve(self) -> None:
        """Run until a shutdown command or stop(); blocks the calling thread."""
        self._listener = self._bind()
        self._started.set()
        accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        accept_thread.start()
        if self.scenario is not None and self.scenario.timeline:
            threading.Thread(target=self._feed_timeline, daemon=True).start()
        if self._is_unix():
            log.info("gateway listening on %s", self.endpoint)
        else:
            host, port = self.bound_address[:2]
            log.info("gateway listening on %s:%d", host, port)
        try:
            self._event_loop()
        finally:
            self._stop.set()
            try:
                self._listener.close()
            except OSError:
                pass
            with self._clients_lock:
                clients = list(self._clients)
            for client in clients:
                client.alive = False
                try:
                    client.outbox.put_nowait(None)
                except queue.Full:
                    pass
            for client in clients:
                # let the writer drain queued messages (e.g. the shutdown ack)
                if client.writer is not None:
                    client.writer.join(timeout=1.0)
                try:
                    client.conn.close()
                except OSError:
                    pass
            if self._is_unix() and os.path.exists(self.endpoint):
                os.unlink(self.endpoint)

    def wait_started(self, timeout: float = 5.0) -> bool:
        return self._started.wait(timeout)

    def stop(self) -> None:
        self._stop.set()
        self._queue.put(("__wake__",))

    def _is_unix(self) -> bool:
        return ":" not in self.endpoint

    def _bind(self) -> socket.socket:
        if self._is_unix():
            if os.path.exists(self.endpoint):
                os.unlink(self.endpoint)
            sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            sock.bind(self.endpoint)
            self.bound_address = (self.endpoint,)
        else:
            host, _, port = self.endpoint.rpartition(":")
            sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            sock.bind((host or "127.0.0.1", int(port)))
            self.bound_address = sock.getsockname()
        sock.listen(16)
        sock.settimeout(0.2)
        return sock

    # -- socket plumbing -------------------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            client = _Client(conn=conn, address=str(addr))
            with self._clients_lock:
                self._clients.append(client)
            client.writer = threading.Thread(target=self._writer_loop, args=(client,),
                                             daemon=True)
            client.writer.start()
            threading.Thread(target=self._reader_loop, args=(client,), daemon=True).start()
            for warning in self.startup_warnings:
                client.send(encode_event("warning", {"text": warning, "at": self.now_ms()}))

    def _writer_loop(self, client: _Client) -> None:
        # drains until the None sentinel so queued messages still flush on shutdown
        while True:
            data = client.outbox.get()
            if data is None:
                break
            try:
                client.conn.sendall(data)
            except OSError:
                break
        client.alive = False
        with self._clients_lock:
            if client in self._clients:
                self._clients.remove(client)

    def _reader_loop(self, client: _Client) -> None:
        buf = b""
        conn = client.conn
        while client.alive and not self._stop.is_set():
            try:
                chunk = conn.recv(65536)
            except OSError:
                break
            if not chunk:
                break
            buf += chunk
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                if line.strip():
                    self._handle_line(client, line)
        client.alive = False
        try:
            client.outbox.put_nowait(None)
        except queue.Full:
            pass

    def _handle_line(self, client: _Client, line: bytes) -> None:
        try:
            msg = json.loads(line.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            client.send(encode_event("protocol_error", {"detail": f"not valid JSON: {exc}"}))
            return
        if not isinstance(msg, dict):
            client.send(encode_event("protocol_error", {"detail": "message must be an object"}))
            return
        if msg.get("v") != PROTOCOL_VERSION:
            client.send(encode_event("protocol_error",
                                     {"detail": f"unsupported protocol version {msg.get('v')!r}"}))
            return
        if msg.get("type") != "cmd":
            client.send(encode_event("protocol_error",
                                     {"detail": f"unsupported message type {msg.get('type')!r}"}))
            return
        cmd = msg.get("cmd")
        if cmd not in COMMANDS:
            client.send(encode_event("protocol_error", {"detail": f"unknown cmd {cmd!r}"}))
            return
        self._queue.put(("cmd", client, msg))

    # -- broadcast ----------------------------------------------------------------

    def _broadcast(self, data: bytes) -> None:
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            client.send(data)

    def _emit_effects(self, effects) -> None:
        for effect in effects:
            if isinstance(effect, DispatchDescription):
                threading.Thread(target=self._describe_offloop,
                                 args=(effect.request,), daemon=True).start()
                continue
            entry = effect_wire_entry(effect)
            if entry is not None:
                self._broadcast(encode_event(entry[0], {**entry[1], "at": effect.at}))

    def _describe_offloop(self, request: DescriptionRequest) -> None:
        client = self.llm_client
        if isinstance(client, MockLVLMClient) and client.latency_ms:
            time.sleep(client.latency_ms / 1000.0)
        try:
            response = describe(client, request, RequestOrigin.BLUE_BUTTON,
                                timeout_ms=self.llm_timeout_ms)
        except (DescriptionTimeoutError, DescriptionTransportError,
                PrivacyViolationError) as exc:
            self._queue.put(("description_failed", request.request_id, str(exc)))
            return
        self._queue.put(("description_completed", response))

    def _feed_timeline(self) -> None:
        start = time.monotonic()
        for ev in self.scenario.timeline:
            delay = ev.at / 1000.0 - (time.monotonic() - start)
            if delay > 0:
                if self._stop.wait(delay):
                    return
            event = timeline_to_event(self.scenario, ev)
            self._queue.put(("input", event))

    # -- the loop -------------------------------------------------------------------

    def _event_loop(self) -> None:
        while not self._stop.is_set():
            due = self.orchestrator.peek_next_timer()
            timeout = 0.5 if due is None else max(0.0, (due - self.now_ms()) / 1000.0)
            try:
                item = self._queue.get(timeout=min(timeout, 0.5))
            except queue.Empty:
                self._emit_effects(self.orchestrator.advance_to(self.now_ms()))
                continue
            kind = item[0]
            if kind == "__wake__":
                continue
            if kind == "input":
                event = item[1]
                stamped = _restamp(event, self.now_ms())
                self._emit_effects(self.orchestrator.handle_event(stamped))
            elif kind == "description_completed":
                response = item[1]
                self._emit_effects(self.orchestrator.handle_event(
                    DescriptionCompleted(at=self.now_ms(), response=response)))
            elif kind == "description_failed":
                self._emit_effects(self.orchestrator.handle_event(
                    DescriptionFailed(at=self.now_ms(), request_id=item[1], reason=item[2])))
            elif kind == "cmd":
                _, client, msg = item
                self._process_cmd(client, msg)

    def _ack(self, client: _Client, msg: dict, result: Optional[dict] = None) -> None:
        fields: dict = {"cmd": msg.get("cmd"), "at": self.now_ms()}
        if "id" in msg:
            fields["id"] = msg["id"]
        if result is not None:
            fields["result"] = result
        client.send(encode_event("ack", fields))

    def _process_cmd(self, client: _Client, msg: dict) -> None:
        cmd = msg["cmd"]
        now = self.now_ms()
        orch = self.orchestrator
        try:
            if cmd == "press_button":
                button = msg.get("button")
                if button not in ("green", "blue"):
                    raise VisionAssistError("button must be green|blue")
                self._ack(client, msg)
                self._emit_effects(orch.handle_event(ButtonPressed(at=now, button=button)))
            elif cmd == "set_distance":
                reading = DistanceReading(timestamp=now, meters=msg.get("meters"),
                                          echo_round_trip_s=msg.get("echo_s"))
                self._ack(client, msg)
                self._emit_effects(orch.handle_event(DistanceArrived(at=now, reading=reading)))
            elif cmd == "inject_frame":
                frame = self._frame_from_cmd(msg, now)
                self._ack(client, msg)
                self._emit_effects(orch.handle_event(FrameArrived(at=now, frame=frame)))
            elif cmd == "provide_label":
                text = msg.get("text")
                if not isinstance(text, str):
                    raise VisionAssistError("provide_label needs string 'text'")
                source = msg.get("source", "text")
                if source not in ("voice", "text"):
                    raise VisionAssistError("source must be voice|text")
                self._ack(client, msg)
                self._emit_effects(orch.handle_event(
                    LabelProvided(at=now, text=text, source=source)))
            elif cmd == "list_db":
                self._ack(client, msg, {"labels": orch.db.list_labels()})
            elif cmd == "remove_label":
                label = msg.get("label")
                if not isinstance(label, str):
                    raise VisionAssistError("remove_label needs string 'label'")
                self._ack(client, msg, {"removed": orch.db.remove(label)})
            elif cmd == "get_telemetry":
                summary = orch.telemetry.summary()
                summary["mode"] = orch.mode.value
                self._ack(client, msg, summary)
            elif cmd == "list_assets":
                ids = sorted(self.scenario.assets) if self.scenario else []
                self._ack(client, msg, {"assets": ids})
            elif cmd == "shutdown":
                self._ack(client, msg)
                self._stop.set()
        except VisionAssistError as exc:
            client.send(encode_event("protocol_error", {"detail": str(exc)}))

    def _frame_from_cmd(self, msg: dict, now: int):
        if "asset" in msg:
            if self.scenario is None or msg["asset"] not in self.scenario.assets:
                raise VisionAssistError(f"unknown asset {msg.get('asset')!r}")
            return self.scenario.assets[msg["asset"]].build_frame(timestamp=now)
        if "frame" in msg:
            try:
                spec = parse_asset_spec(msg.get("id", "inline"), msg["frame"])
            except ScenarioFormatError as exc:
                raise VisionAssistError(f"bad inline frame: {exc}") from exc
            return spec.build_frame(timestamp=now)
        raise VisionAssistError("inject_frame needs 'asset' or 'frame'")


def _restamp(event, at: int):
    """Re-stamp a scenario-relative event onto the daemon clock."""
    from dataclasses import replace
    if isinstance(event, FrameArrived):
        event.frame.timestamp = at
        return FrameArrived(at=at, frame=event.frame)
    if isinstance(event, DistanceArrived):
        return DistanceArrived(at=at, reading=replace(event.reading, timestamp=at))
    return replace(event, at=at)


def serve(endpoint: str, scenario: Optional[Scenario] = None,
          db: Optional[RecognitionDatabase] = None, llm: str = "mock") -> GatewayDaemon:
    """Build and run a daemon on the calling thread (returns after shutdown)."""
    daemon = GatewayDaemon(endpoint=endpoint, scenario=scenario, db=db, llm=llm)
    daemon.serve()
    return daemon
