import base64
import json
import time
from pathlib import Path

import numpy as np
import pytest

from canalmppi.bridge import (
    SCHEMA_VERSION,
    BridgeClient,
    BridgeServer,
    encode_message,
    map_payload,
    replay_records,
)
from canalmppi.engine import TickRecord
from canalmppi.world import OccupancyGrid, straight_canal

TRANSCRIPT = Path(__file__).resolve().parent.parent / "docs" / "protocol_transcript.jsonl"


def tick_record(tick, positions):
    states = {aid: np.array([x, y, 0.0, 1.0, 0.0, 0.0]) for aid, (x, y) in positions.items()}
    return TickRecord(tick=tick, time_s=tick * 0.1, states=states,
                      inputs={aid: np.zeros(4) for aid in positions},
                      goals={aid: np.array([50.0, 10.0]) for aid in positions},
                      planned={aid: np.array([[x, y], [x + 1.0, y]])
                               for aid, (x, y) in positions.items()},
                      violations=[], collisions=[], plan_times_ms=[])


@pytest.fixture
def server():
    grid = straight_canal(40.0, 10.0, resolution_m=0.5)
    bridge = BridgeServer("127.0.0.1", 0, grid=grid,
                          controllers={"ego": "mppi", "blue": "teleop"})
    bridge.start()
    yield bridge
    bridge.stop()


def test_golden_transcript_round_trips():
    lines = TRANSCRIPT.read_text().splitlines()
    assert len(lines) == 5
    kinds = []
    for line in lines:
        obj = json.loads(line)
        kinds.append(obj["type"])
        assert encode_message(obj) == line  # byte-identical re-encoding
    assert kinds == ["hello", "handshake", "frame", "command", "error"]


def test_transcript_map_decodes():
    handshake = json.loads(TRANSCRIPT.read_text().splitlines()[1])
    m = handshake["map"]
    raw = np.frombuffer(base64.b64decode(m["cells_b64"]), dtype=np.uint8)
    bits = np.unpackbits(raw)[: m["width"] * m["height"]]
    cells = bits.reshape(m["height"], m["width"]).astype(bool)
    grid = OccupancyGrid(cells=cells, resolution=m["resolution"],
                         origin=tuple(m["origin"]))
    assert grid.content_hash() == m["hash"]


def test_handshake_carries_map(server):
    client = BridgeClient(server.host, server.port)
    handshake = client.recv()
    assert handshake["type"] == "handshake"
    assert handshake["v"] == SCHEMA_VERSION
    payload = handshake["map"]
    assert payload == map_payload(server.grid)
    client.close()


def test_version_mismatch_refused(server):
    client = BridgeClient(server.host, server.port, hello_version=99)
    reply = client.recv()
    assert reply["type"] == "error"
    assert reply["error"] == "schema_version_mismatch"
    with pytest.raises(ConnectionError):
        client.recv()  # server closes after the refusal
    client.sock.close()


def test_frames_strictly_increasing(server):
    client = BridgeClient(server.host, server.port)
    client.recv()  # handshake
    for t in range(10):
        server.publish_tick(tick_record(t, {"ego": (10.0 + t, 5.0)}))
        time.sleep(0.01)
    seen = []
    client.sock.settimeout(0.5)
    try:
        while True:
            msg = client.recv()
            if msg["type"] == "frame":
                seen.append(msg["tick"])
    except (TimeoutError, OSError):
        pass
    assert seen, "no frames received"
    assert all(b > a for a, b in zip(seen, seen[1:]))
    assert seen[-1] == 9
    client.close()


def test_stalled_client_gets_newest_frame(server):
    client = BridgeClient(server.host, server.port)
    client.recv()
    # publish a burst while the client is not reading; the single-slot
    # outbox must keep replacing, never queueing
    for t in range(50):
        server.publish_tick(tick_record(t, {"ego": (5.0 + t * 0.1, 5.0)}))
    time.sleep(0.3)  # allow the writer to drain whatever it will send
    client.sock.settimeout(0.5)
    ticks = []
    try:
        while True:
            msg = client.recv()
            if msg["type"] == "frame":
                ticks.append(msg["tick"])
    except (TimeoutError, OSError):
        pass
    assert ticks[-1] == 49
    assert len(ticks) < 50  # frames were dropped, not queued
    client.close()


def test_no_clients_is_noop(server):
    server.publish_tick(tick_record(0, {"ego": (5.0, 5.0)}))  # must not raise


def test_teleop_command_latched(server):
    client = BridgeClient(server.host, server.port)
    client.recv()
    assert server.teleop_command("blue") is None
    client.send({"type": "command", "agent": "blue", "surge": 0.5, "yaw": -0.25,
                 "ts": 1.0})
    deadline = time.time() + 2.0
    while server.teleop_command("blue") is None and time.time() < deadline:
        time.sleep(0.01)
    assert server.teleop_command("blue") == (0.5, -0.25)
    # latest command wins
    client.send({"type": "command", "agent": "blue", "surge": -1.5, "yaw": 0.0,
                 "ts": 2.0})
    deadline = time.time() + 2.0
    while server.teleop_command("blue") != (-1.0, 0.0) and time.time() < deadline:
        time.sleep(0.01)
    assert server.teleop_command("blue") == (-1.0, 0.0)  # clamped to [-1, 1]
    client.close()


def test_command_to_non_teleop_agent_rejected(server):
    client = BridgeClient(server.host, server.port)
    client.recv()
    client.send({"type": "command", "agent": "ego", "surge": 1.0, "yaw": 0.0,
                 "ts": 0.0})
    reply = client.recv()
    assert reply["type"] == "error"
    assert reply["error"] == "not_teleoperated"
    assert server.teleop_command("ego") is None
    client.close()


def test_bridge_read_only_without_teleop_agents():
    grid = straight_canal(40.0, 10.0, resolution_m=0.5)
    bridge = BridgeServer("127.0.0.1", 0, grid=grid, controllers={"ego": "mppi"})
    bridge.start()
    try:
        client = BridgeClient(bridge.host, bridge.port)
        client.recv()
        client.send({"type": "command", "agent": "ego", "surge": 1.0, "yaw": 0.0,
                     "ts": 0.0})
        assert client.recv()["error"] == "not_teleoperated"
        client.send({"type": "command", "agent": "ghost", "surge": 1.0, "yaw": 0.0,
                     "ts": 0.0})
        assert client.recv()["error"] == "not_teleoperated"
        assert not bridge._latches
        client.close()
    finally:
        bridge.stop()


def test_teleop_one_tick_latency():
    """A command latched before tick t is applied in tick t's inputs."""
    from canalmppi.engine import AgentSpec, ScenarioConfig, run_episode
    from canalmppi.planner import PlannerParams

    grid = straight_canal(60.0, 16.0, resolution_m=0.5)
    agents = [AgentSpec(id="blue", controller="teleop",
                        start=(10.0, 8.0, 0.0), goal=(50.0, 8.0))]
    sc = ScenarioConfig(grid=grid, agents=agents, max_time_s=1.0,
                        planner=PlannerParams(samples=16, horizon=10))

    issued_at_tick = 3
    commands = {}

    def frame_sink(record, runner):
        # the sink runs before the tick's control step, so a command
        # landing here is "received before tick t"
        if record.tick == issued_at_tick:
            commands["blue"] = (1.0, 0.0)

    metrics, log = run_episode(sc, seed=0, teleop_source=commands.get,
                               frame_sink=frame_sink)
    f_max = sc.vessel.f_max
    before = log.ticks[issued_at_tick - 1].inputs["blue"]
    at = log.ticks[issued_at_tick].inputs["blue"]
    assert np.allclose(before, 0.0)
    assert np.allclose(at, [f_max / 2, f_max / 2, 0.0, 0.0])


def test_replay_records(tmp_path, server):
    from canalmppi.cli import export_episode
    from canalmppi.engine import EpisodeLog

    log = EpisodeLog(ticks=[tick_record(t, {"ego": (10.0 + t, 5.0)})
                            for t in range(4)])
    path = export_episode(log, "records", tmp_path / "ep.jsonl")

    client = BridgeClient(server.host, server.port)
    client.recv()
    count = replay_records(path, server, period_s=0.02)
    assert count == 4
    client.sock.settimeout(0.5)
    frames = []
    try:
        while True:
            msg = client.recv()
            if msg["type"] == "frame":
                frames.append(msg)
    except (TimeoutError, OSError):
        pass
    assert frames and frames[-1]["tick"] == 3
    assert frames[-1]["agents"]["ego"]["x"] == 13.0
    client.close()
