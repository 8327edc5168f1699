"""Live state streaming and teleoperation over WebSocket.

The engine publishes one frame per simulation tick; each connected
client holds a single-slot outbox, so a slow client skips straight to
the newest frame instead of queueing history (frames are droppable,
never reordered). Teleop commands latch latest-wins per agent and are
read by the engine once per control tick; commands addressed to
vessels that are not teleoperated are answered with an error message,
and with no teleop vessels configured the bridge cannot mutate the
simulation at all.

Transport is plain RFC 6455 WebSocket carrying one JSON object per
text message, so a browser can connect directly. Message kinds:

  client -> server   {"type": "hello", "v": 1}
                     {"type": "command", "agent": id, "surge": s,
                      "yaw": y, "ts": t}
  server -> client   {"type": "handshake", "v": 1, "map": {...}}
                     {"type": "frame", ...}
                     {"type": "error", "error": reason, ...}

A client whose hello carries the wrong schema version is refused at
handshake. The exact byte-level encoding is pinned by the golden
transcript in docs/protocol_transcript.jsonl.
"""

from __future__ import annotations

import base64
import hashlib
import json
import socket
import struct
import threading
import time
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def encode_message(obj) -> str:
    """Canonical wire encoding: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def map_payload(grid) -> dict:
    bits = np.packbits(grid.cells.astype(np.uint8), axis=None)
    return {
        "width": int(grid.width),
        "height": int(grid.height),
        "resolution": float(grid.resolution),
        "origin": [float(grid.origin[0]), float(grid.origin[1])],
        "hash": grid.content_hash(),
        "cells_b64": base64.b64encode(bits.tobytes()).decode(),
    }


# ---------------------------------------------------------------------------
# RFC 6455 plumbing (text frames, close, ping/pong; no extensions)

def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("socket closed")
        buf += chunk
    return buf


def read_ws_message(sock: socket.socket) -> tuple:
    """Read one complete message; returns (opcode, payload bytes)."""
    payload = b""
    opcode = None
    while True:
        b1, b2 = _read_exact(sock, 2)
        fin = b1 & 0x80
        frame_op = b1 & 0x0F
        masked = b2 & 0x80
        length = b2 & 0x7F
        if length == 126:
            (length,) = struct.unpack(">H", _read_exact(sock, 2))
        elif length == 127:
            (length,) = struct.unpack(">Q", _read_exact(sock, 8))
        key = _read_exact(sock, 4) if masked else None
        data = _read_exact(sock, length) if length else b""
        if key:
            data = bytes(b ^ key[i % 4] for i, b in enumerate(data))
        if frame_op != 0:
            opcode = frame_op
        payload += data
        if fin:
            return opcode, payload


def write_ws_frame(sock: socket.socket, payload: bytes, opcode: int = 0x1,
                   mask: bool = False) -> None:
    header = bytes([0x80 | opcode])
    length = len(payload)
    mask_bit = 0x80 if mask else 0
    if length < 126:
        header += bytes([mask_bit | length])
    elif length < 1 << 16:
        header += bytes([mask_bit | 126]) + struct.pack(">H", length)
    else:
        header += bytes([mask_bit | 127]) + struct.pack(">Q", length)
    if mask:
        key = struct.pack(">I", int(time.time() * 1e6) & 0xFFFFFFFF)
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        header += key
    sock.sendall(header + payload)


def _accept_value(key: str) -> str:
    digest = hashlib.sha1((key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


# ---------------------------------------------------------------------------
# server

class _Client:
    def __init__(self, sock: socket.socket, addr):
        self.sock = sock
        self.addr = addr
        self.lock = threading.Condition()
        self.latest: bytes | None = None
        self.closed = False

    def offer(self, payload: bytes):
        with self.lock:
            self.latest = payload  # replaces any unsent frame
            self.lock.notify()

    def next_frame(self) -> bytes | None:
        with self.lock:
            while self.latest is None and not self.closed:
                self.lock.wait(timeout=0.5)
            payload, self.latest = self.latest, None
            return payload

    def close(self):
        with self.lock:
            self.closed = True
            self.lock.notify()
        try:
            self.sock.close()
        except OSError:
            pass


class BridgeServer:
    """WebSocket fan-out of simulation frames plus teleop intake."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, grid=None,
                 controllers: dict | None = None, vessels: dict | None = None):
        self.grid = grid
        self.controllers = dict(controllers or {})
        self.vessels = dict(vessels or {})  # id -> hull (length_m, width_m)
        self._teleop_ids = {aid for aid, kind in self.controllers.items()
                            if kind == "teleop"}
        self._latches: dict = {}
        self._latch_lock = threading.Lock()
        self._clients: list[_Client] = []
        self._clients_lock = threading.Lock()
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self.host, self.port = self._listener.getsockname()
        self._running = False
        self._threads: list[threading.Thread] = []
        self._map_hash = grid.content_hash() if grid is not None else ""

    # -- lifecycle

    def start(self):
        self._running = True
        self._listener.listen(8)
        thread = threading.Thread(target=self._accept_loop, daemon=True,
                                  name="bridge-accept")
        thread.start()
        self._threads.append(thread)

    def stop(self):
        self._running = False
        try:
            self._listener.close()
        except OSError:
            pass
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            client.close()

    # -- engine-facing API

    def set_controllers(self, controllers: dict):
        self.controllers = dict(controllers)
        self._teleop_ids = {aid for aid, kind in self.controllers.items()
                            if kind == "teleop"}

    def teleop_command(self, agent_id):
        """Latest latched (surge, yaw) for an agent, or None."""
        with self._latch_lock:
            cmd = self._latches.get(agent_id)
        return None if cmd is None else (cmd["surge"], cmd["yaw"])

    def publish_tick(self, record, runner=None) -> None:
        """Build and broadcast a frame for one tick record (engine sink)."""
        with self._clients_lock:
            if not self._clients:
                return  # nobody listening; skip serialization entirely
            clients = list(self._clients)
        if runner is not None and not self.controllers:
            self.set_controllers({aid: spec.controller
                                  for aid, spec in runner.specs.items()})
        frame = self.frame_from_record(record)
        payload = encode_message(frame).encode()
        for client in clients:
            client.offer(payload)

    def frame_from_record(self, record) -> dict:
        agents = {}
        for aid in sorted(record.states):
            state = np.asarray(record.states[aid], dtype=float)
            goal = record.goals.get(aid)
            planned = record.planned.get(aid)
            agents[aid] = {
                "x": state[0], "y": state[1], "heading": state[2],
                "surge": state[3], "sway": state[4], "yaw_rate": state[5],
                "goal": None if goal is None else [float(goal[0]), float(goal[1])],
                "planned": None if planned is None
                else np.asarray(planned, dtype=float).round(3).tolist(),
                "controller": self.controllers.get(aid, "mppi"),
            }
        return {
            "type": "frame",
            "v": SCHEMA_VERSION,
            "tick": record.tick,
            "time_s": record.time_s,
            "map_hash": self._map_hash,
            "agents": agents,
            "violations": [list(v) for v in record.violations],
            "collisions": [list(c) for c in record.collisions],
        }

    # -- connection handling

    def _accept_loop(self):
        while self._running:
            try:
                sock, addr = self._listener.accept()
            except OSError:
                return
            thread = threading.Thread(target=self._serve_client,
                                      args=(sock, addr), daemon=True,
                                      name=f"bridge-client-{addr[1]}")
            thread.start()
            self._threads.append(thread)

    def _http_handshake(self, sock) -> bool:
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = sock.recv(4096)
            if not chunk:
                return False
            data += chunk
        headers = {}
        for line in data.decode("latin1").split("\r\n")[1:]:
            if ":" in line:
                name, value = line.split(":", 1)
                headers[name.strip().lower()] = value.strip()
        key = headers.get("sec-websocket-key")
        if key is None or "websocket" not in headers.get("upgrade", "").lower():
            sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            return False
        response = (
            "HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {_accept_value(key)}\r\n\r\n"
        )
        sock.sendall(response.encode("latin1"))
        return True

    def _serve_client(self, sock: socket.socket, addr):
        try:
            if not self._http_handshake(sock):
                sock.close()
                return
            opcode, payload = read_ws_message(sock)
            if opcode != 0x1:
                sock.close()
                return
            hello = json.loads(payload.decode())
            if hello.get("type") != "hello" or hello.get("v") != SCHEMA_VERSION:
                error = {"type": "error", "error": "schema_version_mismatch",
                         "expected": SCHEMA_VERSION}
                write_ws_frame(sock, encode_message(error).encode())
                write_ws_frame(sock, b"", opcode=0x8)
                sock.close()
                return
            handshake = {"type": "handshake", "v": SCHEMA_VERSION}
            if self.grid is not None:
                handshake["map"] = map_payload(self.grid)
            if self.vessels:
                handshake["vessels"] = {
                    aid: {"length_m": float(dims[0]), "width_m": float(dims[1])}
                    for aid, dims in sorted(self.vessels.items())}
            write_ws_frame(sock, encode_message(handshake).encode())
        except (ConnectionError, OSError, json.JSONDecodeError):
            sock.close()
            return

        client = _Client(sock, addr)
        with self._clients_lock:
            self._clients.append(client)
        writer = threading.Thread(target=self._write_loop, args=(client,),
                                  daemon=True)
        writer.start()
        try:
            self._read_loop(client)
        finally:
            client.close()
            with self._clients_lock:
                if client in self._clients:
                    self._clients.remove(client)

    def _write_loop(self, client: _Client):
        try:
            while not client.closed:
                payload = client.next_frame()
                if payload is None:
                    continue
                write_ws_frame(client.sock, payload)
        except (ConnectionError, OSError):
            client.close()

    def _read_loop(self, client: _Client):
        while not client.closed:
            try:
                opcode, payload = read_ws_message(client.sock)
            except (ConnectionError, OSError):
                return
            if opcode == 0x8:  # close
                try:
                    write_ws_frame(client.sock, b"", opcode=0x8)
                except (ConnectionError, OSError):
                    pass
                return
            if opcode == 0x9:  # ping
                write_ws_frame(client.sock, payload, opcode=0xA)
                continue
            if opcode != 0x1:
                continue
            try:
                message = json.loads(payload.decode())
            except json.JSONDecodeError:
                self._reply(client, {"type": "error", "error": "bad_json"})
                continue
            self._handle_message(client, message)

    def _reply(self, client: _Client, obj: dict):
        try:
            write_ws_frame(client.sock, encode_message(obj).encode())
        except (ConnectionError, OSError):
            client.close()

    def _handle_message(self, client: _Client, message: dict):
        if message.get("type") != "command":
            self._reply(client, {"type": "error", "error": "unknown_message_type"})
            return
        agent = message.get("agent")
        if agent not in self._teleop_ids:
            self._reply(client, {"type": "error", "error": "not_teleoperated",
                                 "agent": agent})
            return
        try:
            surge = max(-1.0, min(1.0, float(message["surge"])))
            yaw = max(-1.0, min(1.0, float(message["yaw"])))
        except (KeyError, TypeError, ValueError):
            self._reply(client, {"type": "error", "error": "bad_command"})
            return
        with self._latch_lock:
            self._latches[agent] = {"surge": surge, "yaw": yaw,
                                    "ts": float(message.get("ts", 0.0))}


# ---------------------------------------------------------------------------
# test / tooling client

class BridgeClient:
    """Blocking WebSocket client used by tests and scripted probes."""

    def __init__(self, host: str, port: int, timeout: float = 5.0,
                 hello_version: int = SCHEMA_VERSION):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        key = base64.b64encode(b"canalmppi-probe!").decode()
        request = (
            f"GET / HTTP/1.1\r\nHost: {host}:{port}\r\n"
            "Upgrade: websocket\r\nConnection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\nSec-WebSocket-Version: 13\r\n\r\n"
        )
        self.sock.sendall(request.encode("latin1"))
        response = b""
        while b"\r\n\r\n" not in response:
            response += self.sock.recv(4096)
        if b"101" not in response.split(b"\r\n", 1)[0]:
            raise ConnectionError(f"handshake refused: {response[:80]!r}")
        expected = _accept_value(key)
        if expected.encode() not in response:
            raise ConnectionError("bad Sec-WebSocket-Accept")
        self.send({"type": "hello", "v": hello_version})

    def send(self, obj: dict):
        write_ws_frame(self.sock, encode_message(obj).encode(), mask=True)

    def recv(self) -> dict:
        opcode, payload = read_ws_message(self.sock)
        if opcode == 0x8:
            raise ConnectionError("server closed the connection")
        return json.loads(payload.decode())

    def close(self):
        try:
            write_ws_frame(self.sock, b"", opcode=0x8, mask=True)
        except OSError:
            pass
        self.sock.close()


# ---------------------------------------------------------------------------
# replay

def replay_records(path, bridge: BridgeServer, period_s: float) -> int:
    """Stream a recorded episode (records export) at wall-clock rate."""
    from .engine import TickRecord

    ticks: dict[int, dict] = {}
    with Path(path).open() as fh:
        for line in fh:
            row = json.loads(line)
            tick = ticks.setdefault(int(row["tick"]), {
                "states": {}, "inputs": {}, "goals": {}, "planned": {},
                "violations": set(), "time_s": row["time_s"],
            })
            aid = row["agent_id"]
            tick["states"][aid] = [row["x_m"], row["y_m"], row["heading_rad"],
                                   row["surge_m_s"], row["sway_m_s"],
                                   row["yaw_rate_rad_s"]]
            tick["inputs"][aid] = [row["f1_n"], row["f2_n"], row["f3_n"], row["f4_n"]]
            tick["goals"][aid] = [row["goal_x_m"], row["goal_y_m"]]
            if row.get("planned_xy_m"):
                tick["planned"][aid] = row["planned_xy_m"]
            for item in filter(None, row.get("violations", "").split(";")):
                pair, kind = item.rsplit(":", 1)
                i, j = pair.split(">")
                tick["violations"].add((i, j, kind))

    for index in sorted(ticks):
        data = ticks[index]
        record = TickRecord(
            tick=index, time_s=data["time_s"],
            states={k: np.asarray(v) for k, v in data["states"].items()},
            inputs=data["inputs"], goals=data["goals"], planned=data["planned"],
            violations=sorted(data["violations"]), collisions=[],
            plan_times_ms=[])
        bridge.publish_tick(record)
        time.sleep(period_s)
    return len(ticks)
