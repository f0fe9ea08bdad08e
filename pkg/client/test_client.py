"""Client-side protocol conformance: framing, policies, and a full
closed-loop episode against the real server launched as a subprocess."""

import json
import socket
import subprocess
import sys
import threading
from pathlib import Path

import pytest

from client import (
    CommandFollower,
    ConstantVelocity,
    ProtocolViolation,
    decode_line,
    encode_line,
    main,
    run_client,
)


def test_framing_roundtrip():
    for payload in ({"a": 1}, {"s": "x\ny"}, {"nested": {"k": [1, 2, 3]}}, {}):
        msg = {"kind": "Act", "tick": 7, "payload": payload}
        data = encode_line(msg)
        assert data.endswith(b"\n") and data.count(b"\n") == 1
        assert decode_line(data[:-1]) == msg


def test_decode_rejects_garbage():
    with pytest.raises(ProtocolViolation):
        decode_line(b"{broken")
    with pytest.raises(ProtocolViolation):
        decode_line(b'"just a string"')


def test_constant_velocity_policy():
    act = ConstantVelocity().act({"ego": {"v": 9.0}, "command": "Left"})
    assert act == {"a": 0.0, "delta": 0.0}


def test_command_follower_policy():
    follower = CommandFollower()
    assert follower.act({"ego": {"v": 8.0}, "command": "Left"})["delta"] > 0
    assert follower.act({"ego": {"v": 8.0}, "command": "Right"})["delta"] < 0
    assert follower.act({"ego": {"v": 8.0}, "command": "Straight"})["delta"] == 0.0
    # speed regulation toward 8 m/s
    assert follower.act({"ego": {"v": 4.0}, "command": "Straight"})["a"] > 0
    assert follower.act({"ego": {"v": 12.0}, "command": "Straight"})["a"] < 0


def test_connection_refused_exit_code(capsys):
    # a port that nothing listens on
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    code = main(["--host", "127.0.0.1", "--port", str(port)])
    assert code == 2
    assert "connection refused" in capsys.readouterr().err


class StubServer:
    """Scripted server checking alternation and tick echo from the client."""

    def __init__(self, observes=3):
        self.observes = observes
        self.violations = []
        self.acts = []
        self.server = socket.create_server(("127.0.0.1", 0))
        self.port = self.server.getsockname()[1]
        self.thread = threading.Thread(target=self._run)
        self.thread.start()

    def _run(self):
        conn, _ = self.server.accept()
        buf = b""

        def recv():
            nonlocal buf
            while b"\n" not in buf:
                chunk = conn.recv(65536)
                if not chunk:
                    raise ConnectionError("closed")
                buf += chunk
            line, buf = buf.split(b"\n", 1)
            return json.loads(line)

        def send(obj):
            conn.sendall(json.dumps(obj).encode() + b"\n")

        try:
            hello = recv()
            if hello["kind"] != "Hello" or hello["payload"]["version"] != "1":
                self.violations.append(f"bad hello: {hello}")
            send({"kind": "Hello", "payload": {"version": "1", "role": "server"}})
            send({"kind": "Reset", "episode_id": "stub-ep", "payload": {"dt": 0.1}})
            for t in range(self.observes):
                send({"kind": "Observe", "episode_id": "stub-ep", "tick": t * 5,
                      "payload": {"ego": {"v": 5.0}, "command": "Left"}})
                act = recv()
                self.acts.append(act)
                if act["kind"] != "Act":
                    self.violations.append(f"expected Act, got {act['kind']}")
                elif act.get("tick") != t * 5:
                    self.violations.append(f"tick echo mismatch: {act.get('tick')} != {t * 5}")
            send({"kind": "Bye", "payload": {"episodes": [
                {"episode_id": "stub-ep", "ticks": self.observes, "completed": True,
                 "rates": {"rc": 1.0, "vcr": 0.0}}]}})
        except Exception as e:  # surfaced via violations
            self.violations.append(repr(e))
        finally:
            conn.close()
            self.server.close()

    def join(self):
        self.thread.join(timeout=10)


def test_alternation_and_tick_echo_against_stub():
    stub = StubServer(observes=4)
    summaries = run_client("127.0.0.1", stub.port, CommandFollower())
    stub.join()
    assert stub.violations == []
    assert len(stub.acts) == 4
    assert all(a["payload"]["delta"] == 0.05 for a in stub.acts)  # Left command
    assert summaries[0]["completed"] is True
    assert summaries[0]["answered"] == 4


@pytest.fixture(scope="module")
def episode_setup(tmp_path_factory):
    from drivesim import mapgen  # test harness only; client.py stays wire-only

    root = tmp_path_factory.mktemp("cl")
    map_path = root / "straight.json"
    mapgen.save(mapgen.single_lane(length=300.0, speed_limit=12.0), map_path)
    config = {
        "name": "cl-ep",
        "mode": "CL",
        "map_path": str(map_path),
        "ego": {"start_lane": "L0", "start_s": 10.0, "goal_lane": "L0", "goal_s": 250.0,
                "initial_speed": 8.0},
        "world": {"max_agents": 0, "seed": 0, "t_max": 500},
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config))
    return root, config_path


def _free_port():
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    return port


def test_full_episode_against_real_server(episode_setup):
    # SECONDARY acceptance: straight-route CL episode completes with
    # RC = 1, VCR = 0, driven end to end over the wire
    root, config_path = episode_setup
    out_dir = root / "out"
    port = _free_port()
    server = subprocess.Popen(
        [sys.executable, "-m", "drivesim.cli", "evaluate",
         "--config", str(config_path), "--listen", f"127.0.0.1:{port}",
         "--out", str(out_dir)],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
    )
    try:
        client_dir = Path(__file__).parent
        deadline = 10.0
        result = None
        import time

        t0 = time.time()
        while time.time() - t0 < deadline:
            result = subprocess.run(
                [sys.executable, str(client_dir / "client.py"),
                 "--host", "127.0.0.1", "--port", str(port), "--policy", "constant"],
                capture_output=True, text=True, timeout=120,
            )
            if result.returncode != 2:  # 2 = connection refused, server not up yet
                break
            time.sleep(0.2)
        assert result is not None and result.returncode == 0, result.stderr
        assert "completed=True" in result.stdout
        assert "rc=1.0" in result.stdout

        server_out, server_err = server.communicate(timeout=30)
        assert server.returncode == 0, server_err
    finally:
        if server.poll() is None:
            server.kill()
            server.communicate()

    metrics = json.loads((out_dir / "cl-ep" / "metrics.json").read_text())
    assert metrics["completed"] is True
    assert metrics["rates"]["rc"] == 1.0
    assert metrics["rates"]["vcr"] == 0.0
    print("[PASS] Protocol conformance: CL episode over the wire, RC = 1, VCR = 0")
