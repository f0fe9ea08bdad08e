#!/usr/bin/env python3
"""Reference planner client for the closed-loop simulation protocol.

Connects to a running simulation server, completes the version-"1"
handshake, and answers every Observe with an Act until the server says Bye.
Two built-in policies demonstrate the boundary:

  constant  -- hold the current speed, steer straight (a=0, delta=0)
  command   -- steer +-0.05 rad while the command is Left/Right and
               regulate speed toward 8 m/s

No simulator imports here: everything arrives over the wire.

Usage: client.py [--host HOST] [--port PORT] [--policy constant|command]
"""

import argparse
import json
import os
import socket
import sys

PROTOCOL_VERSION = "1"
DEFAULT_HOST = os.environ.get("DRIVESIM_HOST", "127.0.0.1")
DEFAULT_PORT = int(os.environ.get("DRIVESIM_PORT", "7788"))

EXIT_OK = 0
EXIT_CONNECT = 2
EXIT_PROTOCOL = 3


class ProtocolViolation(RuntimeError):
    pass


def encode_line(obj: dict) -> bytes:
    data = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    if "\n" in data:
        raise ProtocolViolation("message would contain a raw newline")
    return data.encode() + b"\n"


def decode_line(line: bytes) -> dict:
    try:
        obj = json.loads(line.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolViolation(f"bad frame from server: {e}") from e
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ProtocolViolation("frame is not a message object")
    return obj


class LineSocket:
    """Newline-framed JSON messages over a connected socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.buffer = b""

    def send(self, obj: dict) -> None:
        self.sock.sendall(encode_line(obj))

    def recv(self, timeout: float = 30.0) -> dict:
        self.sock.settimeout(timeout)
        while b"\n" not in self.buffer:
            chunk = self.sock.recv(65536)
            if not chunk:
                raise ProtocolViolation("server closed the connection")
            self.buffer += chunk
        line, self.buffer = self.buffer.split(b"\n", 1)
        return decode_line(line)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class ConstantVelocity:
    name = "constant"

    def act(self, observation: dict) -> dict:
        return {"a": 0.0, "delta": 0.0}


class CommandFollower:
    name = "command"
    cruise = 8.0

    def act(self, observation: dict) -> dict:
        command = observation.get("command", "Straight")
        delta = 0.05 if command == "Left" else -0.05 if command == "Right" else 0.0
        v = float(observation.get("ego", {}).get("v", self.cruise))
        a = max(-2.0, min(2.0, 0.5 * (self.cruise - v)))
        return {"a": a, "delta": delta}


POLICIES = {"constant": ConstantVelocity, "command": CommandFollower}


def run_client(host: str, port: int, policy) -> list[dict]:
    """Drive one session; returns the per-episode summaries from Bye."""
    try:
        sock = socket.create_connection((host, port), timeout=10.0)
    except OSError as e:
        raise ConnectionRefusedError(f"connection refused: {host}:{port} ({e})") from e
    stream = LineSocket(sock)
    try:
        stream.send({"kind": "Hello", "payload": {"version": PROTOCOL_VERSION, "name": policy.name}})
        ack = stream.recv()
        if ack["kind"] == "Error":
            raise ProtocolViolation(f"handshake rejected: {ack['payload']}")
        if ack["kind"] != "Hello" or ack.get("payload", {}).get("version") != PROTOCOL_VERSION:
            raise ProtocolViolation(f"unexpected handshake reply: {ack}")

        ticks = {}
        while True:
            msg = stream.recv()
            kind = msg["kind"]
            if kind == "Reset":
                ticks[msg.get("episode_id")] = 0
            elif kind == "Observe":
                action = policy.act(msg.get("payload", {}))
                stream.send({"kind": "Act", "tick": msg.get("tick"), "payload": action})
                ticks[msg.get("episode_id")] = ticks.get(msg.get("episode_id"), 0) + 1
            elif kind == "Bye":
                summaries = msg.get("payload", {}).get("episodes", [])
                for summary in summaries:
                    summary.setdefault("answered", ticks.get(summary.get("episode_id")))
                return summaries
            elif kind == "Error":
                raise ProtocolViolation(f"server error: {msg.get('payload')}")
            else:
                raise ProtocolViolation(f"unexpected message kind {kind!r}")
    finally:
        stream.close()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--host", default=DEFAULT_HOST)
    parser.add_argument("--port", type=int, default=DEFAULT_PORT)
    parser.add_argument("--policy", choices=sorted(POLICIES), default="constant")
    args = parser.parse_args(argv)
    policy = POLICIES[args.policy]()
    try:
        summaries = run_client(args.host, args.port, policy)
    except ConnectionRefusedError as e:
        print(str(e), file=sys.stderr)
        return EXIT_CONNECT
    except ProtocolViolation as e:
        print(str(e), file=sys.stderr)
        return EXIT_PROTOCOL
    for s in summaries:
        rates = s.get("rates", {})
        print(
            f"episode {s.get('episode_id')}: ticks={s.get('ticks')} "
            f"answered={s.get('answered')} completed={s.get('completed')} "
            f"rc={rates.get('rc')} vcr={rates.get('vcr')}"
        )
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
