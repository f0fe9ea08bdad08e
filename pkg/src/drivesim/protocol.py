"""Newline-delimited JSON planner protocol over TCP.

The engine is the server. One planner client connects per session, speaks
version "1", and answers every Observe with exactly one Act for the same
tick before the next Observe arrives. Message kinds: Hello, Reset, Observe,
Act, Bye, Error. Full schemas live in docs/protocol.md.
"""

import json
import os
import socket
import time
from dataclasses import dataclass, field

from .bev import frame_to_base64
from .kinematics import ControlAction
from .planners import PlannerInput

PROTOCOL_VERSION = "1"
DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 7788
ACT_DEADLINE_S = 5.0
HOST_ENV = "DRIVESIM_HOST"
PORT_ENV = "DRIVESIM_PORT"

KINDS = ("Hello", "Reset", "Observe", "Act", "Bye", "Error")


class ProtocolError(RuntimeError):
    """Protocol violation by the peer (bad version, tick mismatch, framing)."""


class DecodeError(ProtocolError):
    """Malformed wire data; carries the line number and byte offset."""

    def __init__(self, message, line=0, offset=0):
        super().__init__(f"{message} (line {line}, offset {offset})")
        self.line = line
        self.offset = offset


class PlannerDisconnect(RuntimeError):
    """The planner vanished or missed the Act deadline."""


@dataclass(slots=True)
class ProtocolMessage:
    kind: str
    episode_id: str | None = None
    tick: int | None = None
    payload: dict = field(default_factory=dict)


def default_endpoint() -> tuple[str, int]:
    host = os.environ.get(HOST_ENV, DEFAULT_HOST)
    port = int(os.environ.get(PORT_ENV, DEFAULT_PORT))
    return host, port


def encode_message(msg: ProtocolMessage) -> bytes:
    """One message per line; the payload never contains a raw newline."""
    body = {"kind": msg.kind, "payload": msg.payload}
    if msg.episode_id is not None:
        body["episode_id"] = msg.episode_id
    if msg.tick is not None:
        body["tick"] = msg.tick
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode() + b"\n"


def decode_message(line: bytes | str, line_no: int = 0) -> ProtocolMessage:
    if isinstance(line, bytes):
        line = line.decode("utf-8", errors="replace")
    line = line.rstrip("\r\n")
    if not line.strip():
        raise DecodeError("empty line", line=line_no, offset=0)
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as e:
        raise DecodeError(f"invalid JSON: {e.msg}", line=line_no, offset=e.pos) from e
    if not isinstance(raw, dict) or "kind" not in raw:
        raise DecodeError("message must be an object with a 'kind'", line=line_no, offset=0)
    kind = raw["kind"]
    if kind not in KINDS:
        raise DecodeError(f"unknown kind {kind!r}", line=line_no, offset=0)
    payload = raw.get("payload", {})
    if not isinstance(payload, dict):
        raise DecodeError("payload must be an object", line=line_no, offset=0)
    return ProtocolMessage(
        kind=kind,
        episode_id=raw.get("episode_id"),
        tick=raw.get("tick"),
        payload=payload,
    )


class MessageStream:
    """Line-framed message IO over a connected socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.buffer = b""
        self.lines_read = 0

    def send(self, msg: ProtocolMessage) -> None:
        self.sock.sendall(encode_message(msg))

    def recv(self, timeout: float | None = None) -> ProtocolMessage:
        self.sock.settimeout(timeout)
        while b"\n" not in self.buffer:
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout as e:
                raise PlannerDisconnect("deadline exceeded waiting for message") from e
            except OSError as e:
                raise PlannerDisconnect(f"connection lost: {e}") from e
            if not chunk:
                raise PlannerDisconnect("connection closed by peer")
            self.buffer += chunk
        line, self.buffer = self.buffer.split(b"\n", 1)
        self.lines_read += 1
        return decode_message(line, line_no=self.lines_read)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class PlannerSession:
    """Server-side session: handshake, per-episode reset, observe/act loop."""

    def __init__(self, stream: MessageStream, deadline: float = ACT_DEADLINE_S):
        self.stream = stream
        self.deadline = deadline
        self.episode_id = None
        self._pending_tick = None

    def handshake(self) -> dict:
        try:
            hello = self.stream.recv(timeout=self.deadline)
        except DecodeError as e:
            self._error("bad-handshake", str(e))
            raise
        if hello.kind != "Hello":
            self._error("bad-handshake", f"expected Hello, got {hello.kind}")
            raise ProtocolError(f"expected Hello, got {hello.kind}")
        version = hello.payload.get("version")
        if version != PROTOCOL_VERSION:
            self._error("version-mismatch", f"server speaks {PROTOCOL_VERSION!r}, client sent {version!r}")
            self.stream.close()
            raise ProtocolError(f"version mismatch: {version!r}")
        self.stream.send(
            ProtocolMessage(kind="Hello", payload={"version": PROTOCOL_VERSION, "role": "server"})
        )
        return hello.payload

    def reset(self, episode_id: str, payload: dict) -> None:
        self.episode_id = episode_id
        self._pending_tick = None
        self.stream.send(ProtocolMessage(kind="Reset", episode_id=episode_id, payload=payload))

    def observe(self, tick: int, payload: dict) -> ControlAction:
        if self._pending_tick is not None:
            raise ProtocolError(f"observe({tick}) while tick {self._pending_tick} unanswered")
        self._pending_tick = tick
        self.stream.send(
            ProtocolMessage(kind="Observe", episode_id=self.episode_id, tick=tick, payload=payload)
        )
        try:
            msg = self.stream.recv(timeout=self.deadline)
        except DecodeError as e:
            self._error("decode-error", str(e), line=e.line, offset=e.offset)
            raise
        if msg.kind != "Act":
            self._error("protocol-error", f"expected Act, got {msg.kind}")
            raise ProtocolError(f"expected Act, got {msg.kind}")
        if msg.tick != tick:
            self._error("tick-mismatch", f"expected Act for tick {tick}, got {msg.tick}")
            raise ProtocolError(f"tick mismatch: expected {tick}, got {msg.tick}")
        self._pending_tick = None
        try:
            a = float(msg.payload["a"])
            delta = float(msg.payload["delta"])
        except (KeyError, TypeError, ValueError) as e:
            self._error("bad-act", f"Act payload needs numeric a/delta: {e}")
            raise ProtocolError("bad Act payload") from e
        return ControlAction(a=a, delta=delta).clamped()

    def bye(self, payload: dict) -> None:
        try:
            self.stream.send(ProtocolMessage(kind="Bye", payload=payload))
        except OSError:
            pass

    def _error(self, code: str, message: str, **extra) -> None:
        try:
            self.stream.send(
                ProtocolMessage(kind="Error", payload={"code": code, "message": message, **extra})
            )
        except OSError:
            pass


class RemotePlanner:
    """Engine-side planner adapter backed by a live session."""

    def __init__(self, session: PlannerSession, frame_encoding: str = "reference"):
        self.session = session
        self.frame_encoding = frame_encoding

    def plan(self, inp: PlannerInput) -> ControlAction:
        if inp.observations is None or not inp.observations:
            raise ValueError("remote planner needs an observation frame")
        frame = inp.observations[-1]
        payload = {
            "ego": {"x": inp.ego.x, "y": inp.ego.y, "phi": inp.ego.phi, "v": inp.ego.v},
            "command": inp.command.value,
        }
        if self.frame_encoding == "inline":
            payload["frame"] = {"inline_pgm": frame_to_base64(frame)}
        else:
            payload["frame"] = {"path": frame.path}
        payload["visible_agents"] = {
            cam: [{"id": aid, "bearing": b, "distance": d} for aid, b, d in entries]
            for cam, entries in frame.visible_agents.items()
        }
        return self.session.observe(frame.tick, payload)


def serve_episodes(configs, out_dir, host: str | None = None, port: int | None = None,
                   deadline: float = ACT_DEADLINE_S, on_bound=None):
    """Bind, accept one planner client, and run every episode over it.

    Returns the dataset manifest. The listening socket closes when the
    session ends. `on_bound(port)` fires once the socket is listening
    (port 0 binds an ephemeral port).
    """
    from pathlib import Path

    from .engine import config_hash, log_hash, run_episode

    env_host, env_port = default_endpoint()
    host = host if host is not None else env_host
    port = port if port is not None else env_port
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    server = socket.create_server((host, port))
    if on_bound is not None:
        on_bound(server.getsockname()[1])
    try:
        conn, _ = server.accept()
        stream = MessageStream(conn)
        session = PlannerSession(stream, deadline=deadline)
        session.handshake()
        entries = []
        summaries = []
        for config in configs:
            episode_dir = out / config.name
            entry = {"name": config.name, "seed": config.world.seed, "config_hash": config_hash(config)}
            session.reset(
                config.name,
                {
                    "map_path": str(config.map_path),
                    "cameras": [c.to_dict() for c in config.cameras],
                    "frame_encoding": config.frame_encoding,
                    "dt": config.kinematics.dt,
                    "render_every": config.render_every,
                    "t_max": config.world.t_max,
                },
            )
            planner = RemotePlanner(session, frame_encoding=config.frame_encoding)
            frames_dir = episode_dir / "frames" if config.frame_encoding == "reference" else None
            log = run_episode(config, planner=planner, frames_dir=frames_dir)
            episode_dir.mkdir(parents=True, exist_ok=True)
            log.write(episode_dir)
            entry.update(
                status="ok",
                ticks=log.ticks,
                frames=len(log.frames),
                completed=log.result.completed,
                log_hash=log_hash(episode_dir),
            )
            entries.append(entry)
            summaries.append(
                {
                    "episode_id": config.name,
                    "ticks": log.ticks,
                    "completed": log.result.completed,
                    "rates": log.metrics.to_dict(),
                }
            )
        session.bye({"episodes": summaries})
        stream.close()
        manifest = {
            "episodes": entries,
            "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        }
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)
            fh.write("\n")
        return manifest
    finally:
        server.close()
