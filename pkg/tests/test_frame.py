import json
import time

import pytest

from conftest import free_port, pump, run_frame_in_thread, wait_for

from autoframe.frame import (
    BoundInput,
    BoundOutput,
    FramePhase,
    FrameState,
    HeartbeatEndpoint,
    ManifestError,
    ModuleEndpoints,
    ModuleFrame,
    ModuleManifest,
    PortDecl,
    watchdog_check,
)
from autoframe.netio import IngestServer, InputConnection, Loop, Publisher
from autoframe.wire import (
    Heartbeat,
    ImageCapture,
    LaneCenterSet,
    Message,
    MsgType,
    TopicType,
    WaypointSet,
)

HOST = "127.0.0.1"


class TestWatchdog:
    def test_recent_input_is_healthy(self):
        state = FrameState()
        state.last_input_us["waypoints"] = 1_000_000
        verdict = watchdog_check(state, 1_010_000, timeout_ms=100)
        assert verdict.healthy

    def test_silent_required_input_times_out_by_name(self):
        state = FrameState()
        state.last_input_us["waypoints"] = 1_000_000
        verdict = watchdog_check(state, 1_150_001, timeout_ms=100)
        assert not verdict.healthy
        assert verdict.timed_out == ("waypoints",)

    def test_optional_inputs_exempt(self):
        state = FrameState()
        state.last_input_us["display_frame"] = 0
        verdict = watchdog_check(state, 10_000_000, timeout_ms=100, required=[])
        assert verdict.healthy

    def test_idempotent(self):
        state = FrameState()
        state.last_input_us["a"] = 0
        v1 = watchdog_check(state, 10_000_000, 100)
        v2 = watchdog_check(state, 10_000_000, 100)
        assert v1 == v2


class TestManifest:
    def test_round_trip(self):
        m = ModuleManifest(
            name="planner",
            inputs=(PortDecl(TopicType.LANE_CENTERS),
                    PortDecl(TopicType.IMAGE_DEPTH, source="hal_depth")),
            outputs=(PortDecl(TopicType.WAYPOINTS),),
            timeout_ms=400,
            external_ports=(9000,),
            entry=("{python}", "-m", "autoframe.apps.planner"),
            config_hook="autoframe.apps.planner:create_config",
        )
        assert ModuleManifest.from_json(m.to_json()) == m

    def test_port_names_default_to_topic(self):
        m = ModuleManifest(name="x", inputs=(PortDecl(TopicType.IMAGE_RGB),))
        assert m.inputs[0].name == "image_rgb"

    def test_rejects_bad_timeout(self):
        with pytest.raises(ManifestError):
            ModuleManifest(name="x", timeout_ms=0)

    def test_rejects_duplicate_ports(self):
        with pytest.raises(ManifestError):
            ModuleManifest(name="x", inputs=(PortDecl(TopicType.IMAGE_RGB),
                                             PortDecl(TopicType.IMAGE_RGB)))

    def test_rejects_unknown_topic_in_json(self):
        doc = {"name": "x", "inputs": [{"topic": "quantum_flux"}],
               "outputs": [], "timeout_ms": 100}
        with pytest.raises(ManifestError):
            ModuleManifest.from_json(json.dumps(doc))


class TestEndpointsFile:
    def test_round_trip(self):
        ep = ModuleEndpoints(
            module="lane_det",
            timeout_ms=500,
            inputs=(BoundInput("image_rgb", TopicType.IMAGE_RGB, HOST, 42000, 7),),
            outputs=(BoundOutput("lane_centers", TopicType.LANE_CENTERS, HOST, 42004,
                                 (("planner", 8),)),),
            heartbeat=HeartbeatEndpoint(HOST, 41999, 2),
        )
        assert ModuleEndpoints.from_json(ep.to_json()) == ep


def rgb(w=4, h=3, fill=7):
    return ImageCapture.rgb8(w, h, bytes([fill]) * (w * h * 3))


def build_frame(handler, in_port, out_port, hb_port=None, timeout_ms=300,
                name="echo", data_dir=None):
    manifest = ModuleManifest(
        name=name,
        inputs=(PortDecl(TopicType.IMAGE_RGB),),
        outputs=(PortDecl(TopicType.IMAGE_RGB, name="out"),),
        timeout_ms=timeout_ms,
    )
    endpoints = ModuleEndpoints(
        module=name,
        timeout_ms=timeout_ms,
        inputs=(BoundInput("image_rgb", TopicType.IMAGE_RGB, HOST, in_port, 11),),
        outputs=(BoundOutput("out", TopicType.IMAGE_RGB, HOST, out_port),),
        heartbeat=HeartbeatEndpoint(HOST, hb_port, 3) if hb_port else None,
    )
    return ModuleFrame(manifest, handler, endpoints, data_dir=data_dir)


class LoopHarness:
    """Test-side producer, consumer and heartbeat sink around one frame."""

    def __init__(self, hb=False):
        self.loop = Loop()
        self.in_port = free_port()
        self.out_port = free_port()
        self.hb_port = free_port() if hb else None
        self.producer = Publisher(self.loop, "test.src", HOST, self.in_port)
        self.received = []
        self.heartbeats = []
        self.consumer = None
        if hb:
            self.hb_sink = IngestServer(self.loop, "test.hb", HOST, self.hb_port,
                                        self.heartbeats.append)

    def connect_consumer(self):
        self.consumer = InputConnection(
            self.loop, "test.sink", HOST, self.out_port, TopicType.IMAGE_RGB, 99,
            lambda conn, msg: self.received.append(msg))
        deadline = time.monotonic() + 5
        while not self.consumer.connected and time.monotonic() < deadline:
            self.consumer.tick(time.monotonic())
            self.loop.step(0.02)
        assert self.consumer.connected

    def wait_subscriber(self):
        pump(self.loop, lambda: self.producer.subscriber_count > 0)

    def send(self, payload, ts):
        self.producer.publish(payload, ts)

    def close(self):
        self.loop.close()


def test_identity_handler_forwards_capture_unchanged():
    h = LoopHarness()
    frame = build_frame(lambda port, payload, ts: [("out", payload)],
                        h.in_port, h.out_port)
    with run_frame_in_thread(frame):
        h.wait_subscriber()
        h.connect_consumer()
        img = rgb()
        h.send(img, 1234)
        pump(h.loop, lambda: len(h.received) == 1)
        msg = h.received[0]
        assert msg.payload == img
        assert msg.timestamp_us == 1234
        assert msg.stream_id == 99  # consumer's hello id is honored
    h.close()


def test_cout_suppresses_invalid_payload():
    bad = WaypointSet(((-5.0, 0.0, 0.0),))  # violates "ahead of vehicle"
    frame_holder = {}

    def handler(port, payload, ts):
        return [("out", bad)]

    h = LoopHarness()
    frame = build_frame(handler, h.in_port, h.out_port)
    frame_holder["f"] = frame
    with run_frame_in_thread(frame):
        h.wait_subscriber()
        h.connect_consumer()
        h.send(rgb(), 1)
        wait_for(lambda: frame.state.error_count.get("c_out", 0) >= 1)
        assert h.received == []
    h.close()


def test_cout_suppresses_wrong_topic_payload():
    frame_out = LaneCenterSet(((1.0, 2.0),))  # wrong kind for an image port

    h = LoopHarness()
    frame = build_frame(lambda p, pl, ts: [("out", frame_out)], h.in_port, h.out_port)
    with run_frame_in_thread(frame):
        h.wait_subscriber()
        h.send(rgb(), 1)
        wait_for(lambda: frame.state.error_count.get("c_out", 0) >= 1)
    h.close()


def test_cin_drops_mismatched_input():
    h = LoopHarness()
    seen = []
    frame = build_frame(lambda p, pl, ts: seen.append(ts) or [], h.in_port, h.out_port)
    with run_frame_in_thread(frame):
        h.wait_subscriber()
        # a LaneCenterSet on an image topic fails the C_in kind check
        h.send(LaneCenterSet(((1.0, 1.0),)), 1)
        h.send(rgb(), 2)
        wait_for(lambda: seen == [2])
        assert frame.state.error_count.get("c_in", 0) == 1
    h.close()


def test_raising_handler_keeps_frame_alive_and_heartbeating():
    calls = []

    def angry(port, payload, ts):
        calls.append(ts)
        raise RuntimeError("boom")

    h = LoopHarness(hb=True)
    frame = build_frame(angry, h.in_port, h.out_port, hb_port=h.hb_port,
                        timeout_ms=100)
    with run_frame_in_thread(frame):
        h.wait_subscriber()
        for i in range(100):
            h.send(rgb(fill=i % 250), i + 1)
            h.loop.step(0.001)
        wait_for(lambda: len(calls) == 100, timeout=10.0)
        assert frame.state.error_count["handler"] == 100
        buffered = len(h.heartbeats)
        pump(h.loop, lambda: len(h.heartbeats) >= buffered + 3, timeout=5.0)
        assert frame.state.phase in (FramePhase.RUNNING, FramePhase.DEGRADED)
    h.close()


def test_message_order_preserved():
    h = LoopHarness()
    frame = build_frame(lambda p, pl, ts: [("out", pl)], h.in_port, h.out_port)
    with run_frame_in_thread(frame):
        h.wait_subscriber()
        h.connect_consumer()
        for i in range(50):
            h.send(rgb(fill=i), i)
        pump(h.loop, lambda: len(h.received) == 50, timeout=10.0)
        assert [m.timestamp_us for m in h.received] == list(range(50))
    h.close()


def test_timestamp_regression_dropped():
    h = LoopHarness()
    seen = []
    frame = build_frame(lambda p, pl, ts: seen.append(ts) or [], h.in_port, h.out_port)
    with run_frame_in_thread(frame):
        h.wait_subscriber()
        h.send(rgb(), 100)
        h.send(rgb(), 50)   # goes backwards: dropped
        h.send(rgb(), 120)
        wait_for(lambda: seen == [100, 120])
        assert frame.state.error_count.get("c_in", 0) == 1
    h.close()


def test_heartbeat_cadence_near_half_timeout():
    h = LoopHarness(hb=True)
    frame = build_frame(lambda p, pl, ts: [], h.in_port, h.out_port,
                        hb_port=h.hb_port, timeout_ms=200)
    with run_frame_in_thread(frame):
        pump(h.loop, lambda: len(h.heartbeats) >= 1, timeout=5.0)
        h.heartbeats.clear()
        t0 = time.monotonic()
        pump(h.loop, lambda: time.monotonic() - t0 >= 1.0, timeout=3.0)
        count = len(h.heartbeats)
        # timeout 200 ms -> one heartbeat per 100 ms -> ~10 in a second
        assert 7 <= count <= 13
        assert all(m.msg_type == MsgType.HEARTBEAT and m.stream_id == 3
                   for m in h.heartbeats)
    h.close()


def test_watchdog_degrades_and_recovers(tmp_path):
    h = LoopHarness()
    frame = build_frame(lambda p, pl, ts: [], h.in_port, h.out_port,
                        timeout_ms=150, data_dir=tmp_path)
    # stage an endpoints file so status writing works
    (tmp_path / "endpoints.json").write_text(frame.endpoints.to_json())
    with run_frame_in_thread(frame):
        h.wait_subscriber()
        h.send(rgb(), 1)
        wait_for(lambda: frame.state.phase == FramePhase.RUNNING)
        wait_for(lambda: frame.state.phase == FramePhase.DEGRADED, timeout=3.0)
        status = json.loads((tmp_path / "status.json").read_text())
        assert status["timed_out_inputs"] == ["image_rgb"]
        # data resumes: back to running
        for i in range(2, 30):
            h.send(rgb(), i)
            h.loop.step(0.02)
            if frame.state.phase == FramePhase.RUNNING:
                break
        assert frame.state.phase == FramePhase.RUNNING
    h.close()


def test_endpoints_reload_adds_input(tmp_path):
    h = LoopHarness()
    late_port = free_port()
    frame = build_frame(lambda p, pl, ts: [("out", pl)], h.in_port, h.out_port,
                        data_dir=tmp_path, timeout_ms=200)
    (tmp_path / "endpoints.json").write_text(frame.endpoints.to_json())
    late_producer = Publisher(h.loop, "test.late", HOST, late_port)
    with run_frame_in_thread(frame):
        h.wait_subscriber()
        h.connect_consumer()
        # rewrite the endpoints file with an extra input edge
        import dataclasses
        updated = dataclasses.replace(
            frame.endpoints,
            inputs=frame.endpoints.inputs + (
                BoundInput("extra", TopicType.IMAGE_RGB, HOST, late_port, 44),),
        )
        time.sleep(0.05)  # ensure a distinct mtime
        (tmp_path / "endpoints.json").write_text(updated.to_json())
        pump(h.loop, lambda: late_producer.subscriber_count > 0, timeout=5.0)
        late_producer.publish(rgb(fill=9), 777)
        pump(h.loop, lambda: any(m.timestamp_us == 777 for m in h.received))
    h.close()


def test_state_transition_rules():
    state = FrameState()
    state.transition(FramePhase.RUNNING)
    state.transition(FramePhase.DEGRADED)
    state.transition(FramePhase.RUNNING)
    state.transition(FramePhase.STOPPED)
    with pytest.raises(RuntimeError):
        state.transition(FramePhase.RUNNING)
