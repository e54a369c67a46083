"""The simulator's network face: TCP device endpoints and the tick loop.

Every endpoint in the vehicle configuration is served by the simulator:
sensor endpoints broadcast captures to whoever connects (the HAL sensor
adapters), actuator endpoints accept connections and ingest commands.
Steering commands land in a single-writer mailbox applied at the next tick
boundary; display frames are written to an image-file sink.  A debug
server, when enabled, pushes the full configuration document to its
subscribers on every scenario change.

Simulation time is fixed-step and decoupled from the wall clock; ``pace``
sets how many simulated seconds elapse per wall second (None runs flat
out, 1.0 is real time).
"""

from __future__ import annotations

import csv
import logging
import math
import threading
import time
from pathlib import Path
from typing import Optional

from ..camera import CameraModel
from ..config import (
    ActuatorKind,
    SensorKind,
    SensorSpec,
    serialize_vehicle_config,
)
from ..netio import IngestServer, Loop, Publisher
from ..wire import ConfigPush, DisplayFrame, Message, MsgType, StateCapture, SteeringCommand
from .physics import VehicleState, step_physics
from .render import RenderedFrame, render_sensors, write_ppm
from .scenario import Scenario

log = logging.getLogger(__name__)


class Simulation:
    """Socket-free simulation core: state, physics and rendering."""

    def __init__(self, scenario: Scenario, rate_hz: float = 20.0):
        if rate_hz <= 0:
            raise ValueError("rate_hz must be positive")
        self.scenario = scenario
        self.rate_hz = rate_hz
        self.dt = 1.0 / rate_hz
        self.dt_us = int(round(1e6 / rate_hz))
        self.t_us = 0
        self.steering_cmd = 0.0  # latest received; zero until first command
        self.reset_vehicle()

    def reset_vehicle(self):
        scn = self.scenario
        x, y = scn.track.offset_point(scn.initial_s, scn.initial_lateral)
        self.state = VehicleState(x, y, scn.track.heading_at(scn.initial_s),
                                  scn.speed)

    def tick(self):
        """Advance one fixed step using the latest steering command.

        Time advances separately (``advance_time``) so the emitted captures
        of tick k carry timestamp k * dt: 0, 50 000, 100 000 ... at 20 Hz.
        """
        self.scenario.on_step(self, self.t_us)
        self.state = step_physics(
            self.state, self.steering_cmd, self.scenario.speed, self.dt,
            self.scenario.config.physical.wheelbase,
            max_steering=self.scenario.config.physical.max_steering_angle)

    def advance_time(self):
        self.t_us += self.dt_us

    @property
    def yaw_rate(self) -> float:
        phys = self.scenario.config.physical
        return (self.state.speed / phys.wheelbase) * math.tan(self.state.steering_angle)

    def state_capture(self) -> StateCapture:
        return StateCapture(self.state.speed, self.state.yaw, self.yaw_rate)

    def render(self, spec: SensorSpec) -> RenderedFrame:
        return render_sensors(self.state, self.scenario.track,
                              CameraModel.from_spec(spec))


class SimServer:
    """Serves a scenario on the endpoints named in its vehicle config."""

    def __init__(self, scenario: Scenario, rate_hz: float = 20.0,
                 pace: Optional[float] = None,
                 record_dir: Optional[str] = None,
                 display_dir: Optional[str] = None,
                 debug_port: Optional[int] = None):
        self.sim = Simulation(scenario, rate_hz)
        self.pace = pace
        self.loop = Loop()
        self.display_frames = 0
        self.steering_commands = 0
        self.config_pushes = 0
        self._sensor_pubs: dict[str, Publisher] = {}
        self._actuator_servers: dict[str, IngestServer] = {}
        self._render_cache: dict[tuple, RenderedFrame] = {}
        self._emit_every: dict[str, int] = {}
        self._stop = False
        self._started = threading.Event()
        self._pending_scenario: Optional[Scenario] = None
        self._debug_pub: Optional[Publisher] = None
        self._debug_port = debug_port
        self._record_dir = Path(record_dir) if record_dir else None
        self._record_file = None
        self._record_writer = None
        self._display_dir = Path(display_dir) if display_dir else None

    # -- endpoint management ----------------------------------------------

    def _open_endpoints(self):
        cfg = self.sim.scenario.config
        for sensor in cfg.sensors:
            conn = sensor.connection
            self._sensor_pubs[sensor.name] = Publisher(
                self.loop, f"sim.{sensor.name}", conn.address, conn.port)
            rate = sensor.rate_hz or self.sim.rate_hz
            self._emit_every[sensor.name] = max(1, int(round(self.sim.rate_hz / rate)))
        for actuator in cfg.actuators:
            conn = actuator.connection
            if actuator.kind is ActuatorKind.STEERING:
                handler = self._on_steering
            else:
                handler = self._on_display
            self._actuator_servers[actuator.name] = IngestServer(
                self.loop, f"sim.{actuator.name}", conn.address, conn.port, handler)

    def _close_endpoints(self):
        for pub in self._sensor_pubs.values():
            pub.close()
        for srv in self._actuator_servers.values():
            srv.close()
        self._sensor_pubs.clear()
        self._actuator_servers.clear()
        self._emit_every.clear()

    def _on_steering(self, msg: Message):
        if msg.msg_type != MsgType.COMMAND or not isinstance(msg.payload, SteeringCommand):
            return
        if math.isfinite(msg.payload.angle):
            self.steering_commands += 1
            self.sim.steering_cmd = msg.payload.angle

    def _on_display(self, msg: Message):
        if msg.msg_type != MsgType.COMMAND or not isinstance(msg.payload, DisplayFrame):
            return
        self.display_frames += 1
        if self._display_dir is not None:
            self._display_dir.mkdir(parents=True, exist_ok=True)
            from ..images import rgb_to_array
            try:
                arr = rgb_to_array(msg.payload.image)
            except ValueError:
                return
            write_ppm(self._display_dir / f"frame_{self.display_frames:06d}.ppm", arr)

    # -- lifecycle ----------------------------------------------------------

    def start(self):
        self._open_endpoints()
        if self._debug_port is not None:
            host = "127.0.0.1"
            if self.sim.scenario.config.sensors:
                host = self.sim.scenario.config.sensors[0].connection.address
            self._debug_pub = Publisher(self.loop, "sim.debug", host, self._debug_port)
        if self._record_dir is not None:
            self._record_dir.mkdir(parents=True, exist_ok=True)
            self._record_file = open(self._record_dir / "trace.csv", "w", newline="")
            self._record_writer = csv.writer(self._record_file)
            self._record_writer.writerow(["t_us", "x", "y", "yaw", "steering"])
        self.sim.scenario.on_setup(self.sim)
        self._started.set()

    def request_scenario(self, scenario: Scenario):
        """Thread-safe scenario swap: applied by the simulation loop at the
        next tick boundary (endpoints are owned by that thread)."""
        self._pending_scenario = scenario
        self.loop.wake()

    def swap_scenario(self, scenario: Scenario):
        """Replace the running scenario; pushes the new configuration to
        every debug subscriber exactly once.

        Call only from the thread running the simulation (use
        ``request_scenario`` from anywhere else)."""
        self.sim.scenario.on_teardown(self.sim)
        self._close_endpoints()
        self.sim.scenario = scenario
        self.sim.reset_vehicle()
        self.sim.steering_cmd = 0.0
        self._render_cache.clear()
        self._open_endpoints()
        scenario.on_setup(self.sim)
        if self._debug_pub is not None:
            doc = serialize_vehicle_config(scenario.config)
            self._debug_pub.publish(ConfigPush.from_document(doc), self.sim.t_us)
            self.config_pushes += 1
        log.info("scenario swapped to %s", scenario.name)

    def _emit_sensors(self):
        sim = self.sim
        self._render_cache.clear()
        tick_index = sim.t_us // sim.dt_us
        for sensor in sim.scenario.config.sensors:
            pub = self._sensor_pubs.get(sensor.name)
            if pub is None or pub.subscriber_count == 0:
                continue
            if tick_index % self._emit_every[sensor.name]:
                continue
            if sensor.kind is SensorKind.VEHICLE_STATE:
                pub.publish(sim.state_capture(), sim.t_us)
                continue
            cam = sensor.camera()
            key = (sensor.pose, cam.width, cam.height, cam.fov_deg)
            frame = self._render_cache.get(key)
            if frame is None:
                frame = sim.render(sensor)
                self._render_cache[key] = frame
            if sensor.kind is SensorKind.RGB_CAMERA:
                pub.publish(frame.rgb_capture(), sim.t_us)
            else:
                pub.publish(frame.depth_capture(), sim.t_us)

    def _record(self):
        if self._record_writer is None:
            return
        st = self.sim.state
        self._record_writer.writerow(
            [self.sim.t_us, f"{st.x:.6f}", f"{st.y:.6f}", f"{st.yaw:.6f}",
             f"{st.steering_angle:.6f}"])
        self._record_file.flush()  # rows are tiny; keep the trace tailable

    def run(self, max_sim_seconds: Optional[float] = None):
        """Tick until stopped (or for a bounded amount of simulation time)."""
        if not self._started.is_set():
            self.start()
        sim = self.sim
        wall_start = time.monotonic()
        sim_start_us = sim.t_us
        while not self._stop:
            if max_sim_seconds is not None:
                if (sim.t_us - sim_start_us) >= max_sim_seconds * 1e6 - 1:
                    break
            if self.pace is not None:
                deadline = wall_start + ((sim.t_us - sim_start_us) / 1e6 + sim.dt) / self.pace
                while not self._stop:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        break
                    self.loop.step(remaining)
            else:
                self.loop.step(0)
            if self._stop:
                break
            if self._pending_scenario is not None:
                self.swap_scenario(self._pending_scenario)
                self._pending_scenario = None
            sim.tick()
            self._emit_sensors()
            self._record()
            sim.advance_time()
        self.sim.scenario.on_teardown(self.sim)
        self._finish()

    def _finish(self):
        if self._record_file is not None:
            self._record_file.close()
            self._record_file = None
        if self._debug_pub is not None:
            self._debug_pub.close()
            self._debug_pub = None
        self._close_endpoints()
        self.loop.close()

    def stop(self):
        self._stop = True
        self.loop.wake()


def run_server_in_thread(server: SimServer,
                         max_sim_seconds: Optional[float] = None) -> threading.Thread:
    server.start()
    thread = threading.Thread(target=server.run, args=(max_sim_seconds,), daemon=True)
    thread.start()
    return thread
