"""Networked teleoperation service.

One world, stepped at the physics rate (wall-clock paced unless turbo);
each client session owns one externally controlled vehicle. The same
line-delimited JSON protocol is spoken over TCP and WebSocket; an HTTP
sidecar serves the browser client and the map file.

Inbound control takes the session's uplink channel into the stepper's
command inbox; outbound state/events take the downlink channel. The sim
backend is transparent (zero channel, ground-truth state); mock_physical
broadcasts the sensor-derived pose estimate while ground truth still goes
to telemetry.
"""

from __future__ import annotations

import asyncio
import json
import os
import threading
import time

from .canonical import canonical_json, round6
from .errors import MicrocityError, ProtocolError, SessionError
from .sim_core import World, _rng_for, build_scenario_graph, load_scenario
from .teleop_service import (
    MAX_CONSECUTIVE_ERRORS,
    PROTOCOL_VERSION,
    BackendDescriptor,
    ChannelSim,
    Message,
    decode_message,
    encode_message,
)
from .telemetry_analytics import SessionLog, write_log
from .vehicle_plant import ActuatorCommand


class ClientSession:
    """Protocol state for one connection."""

    def __init__(self, server, send_line):
        self.server = server
        self.send_line = send_line
        self.hello_done = False
        self.vehicle_id = None
        self.session_id = None
        self.driver_label = ""
        self.order_index = 0
        self.backend = BackendDescriptor()
        self.downlink = None
        self.out_seq = 0
        self.errors_in_a_row = 0
        self.last_control_seq = -1
        self.start_tick = 0

    # -- outbound

    def send(self, mtype, **payload):
        line = encode_message(mtype, self.out_seq, self.server.sim_t(), **payload)
        self.out_seq += 1
        delay = 0.0
        if self.downlink is not None:
            deliver = self.downlink.send(self.server.sim_t())
            if deliver is None:
                return
            delay = max(0.0, (deliver - self.server.sim_t()) / max(self.server.pace, 1e-9))
        if delay > 0:
            loop = asyncio.get_event_loop()
            loop.call_later(delay, self.send_line, line)
        else:
            self.send_line(line)

    def send_error(self, code, message):
        self.send("error", code=code, message=message)

    # -- inbound

    def handle_line(self, line: str) -> bool:
        """Process one inbound line; False means disconnect."""
        try:
            msg = decode_message(line)
        except ProtocolError as e:
            self.errors_in_a_row += 1
            self.send_error("protocol", str(e))
            return self.errors_in_a_row < MAX_CONSECUTIVE_ERRORS
        self.errors_in_a_row = 0
        try:
            self._dispatch(msg)
        except (MicrocityError, KeyError) as e:
            self.send_error("session", str(e))
        return True

    def _dispatch(self, msg: Message):
        if msg.type == "hello":
            self.hello_done = True
            self.send("welcome",
                      physics_rate=round(1.0 / self.server.world.dt),
                      state_rate=self.server.state_rate,
                      map_digest=self.server.graph.digest)
            return
        if not self.hello_done:
            raise SessionError("hello required first")
        if msg.type == "ping":
            self.send("pong", nonce=msg.payload["nonce"], server_t=self.server.sim_t())
            return
        if msg.type == "start_session":
            self.server.bind_session(self, msg.payload)
            self.send("session_started", session_id=self.session_id)
            return
        if msg.type == "control":
            if self.vehicle_id is None:
                raise SessionError("no active session")
            if msg.seq <= self.last_control_seq:
                return  # stale by seq: latest-wins is handled at the feed
            self.last_control_seq = msg.seq
            self.server.push_control(self, msg)
            return
        if msg.type == "stop_session":
            if self.vehicle_id is None:
                raise SessionError("no active session")
            path, summary = self.server.end_session(self)
            self.send("session_ended", session_id=self.session_id,
                      telemetry_path=path, metrics_summary=summary)
            return

    def closed(self):
        if self.vehicle_id is not None:
            self.server.release_vehicle(self)


class TeleopServer:
    """Owns the world, the stepping task, and all sessions."""

    def __init__(self, scenario, state_rate=20.0, out_dir=".", realtime=True,
                 pace=1.0, failsafe_timeout_s=0.5, mock_channel=None):
        self.scenario = scenario
        self.graph = build_scenario_graph(scenario)
        self.world = World(scenario, self.graph, failsafe_timeout_s=failsafe_timeout_s)
        self.state_rate = state_rate
        self.state_every = max(1, round((1.0 / self.world.dt) / state_rate))
        self.out_dir = out_dir
        self.realtime = realtime
        self.pace = pace
        self.mock_channel = mock_channel  # ChannelModel override for sessions
        self.sessions: list = []
        self.bound: dict = {}     # vehicle_id -> ClientSession
        self.bind_log: list = []  # replay needs every (vehicle, tick, backend)
        self._session_counter = 0
        self.running = True

    def sim_t(self):
        return self.world.tick * self.world.dt

    # -- session lifecycle

    def bind_session(self, session: ClientSession, payload):
        vid = payload["vehicle_id"]
        if vid not in self.world.vehicles:
            raise SessionError(f"unknown vehicle {vid!r}")
        rt = self.world.vehicles[vid]
        if rt.spec.controller["kind"] != "external":
            raise SessionError(f"vehicle {vid!r} is not externally controllable")
        if vid in self.bound:
            raise SessionError(f"vehicle {vid!r} already driven")
        if payload["backend"] == "mock_physical":
            backend = BackendDescriptor.default_mock_physical()
            if self.mock_channel is not None:
                backend = BackendDescriptor(
                    kind="mock_physical", channel=self.mock_channel,
                    actuation=backend.actuation, noise_on=backend.noise_on,
                )
        else:
            backend = BackendDescriptor()
        self.world.configure_backend(vid, backend)
        self.bind_log.append({"vehicle_id": vid, "tick": self.world.tick,
                              "backend": backend.to_obj()})
        session.backend = backend
        if not backend.channel.is_zero():
            session.downlink = ChannelSim(backend.channel, "down",
                                          _rng_for(self.scenario.seed, vid, 3))
        session.vehicle_id = vid
        session.driver_label = payload["driver_label"]
        session.order_index = payload["order_index"]
        session.start_tick = self.world.tick
        self._session_counter += 1
        session.session_id = f"s{self._session_counter:03d}-{vid}"
        self.bound[vid] = session

    def push_control(self, session: ClientSession, msg: Message):
        rt = self.world.vehicles[session.vehicle_id]
        cmd = ActuatorCommand(msg.payload["steer"], msg.payload["throttle"],
                              msg.payload["brake"])
        rt.feed.send(self.sim_t(), msg.seq, cmd)

    def end_session(self, session: ClientSession):
        log = self.session_log(session)
        prefix = os.path.join(self.out_dir, session.session_id)
        write_log(log, prefix)
        summary = {"events": len(log.events), "ticks": self.world.tick - session.start_tick}
        self.release_vehicle(session)
        return prefix, summary

    def release_vehicle(self, session: ClientSession):
        if session.vehicle_id and self.bound.get(session.vehicle_id) is session:
            del self.bound[session.vehicle_id]
        session.vehicle_id = None

    def session_log(self, session: ClientSession) -> SessionLog:
        import datetime

        header = {
            "session_id": session.session_id,
            "scenario": self.scenario.to_obj(),
            "scenario_digest": self.scenario.digest(),
            "map_digest": self.graph.digest,
            "seed": self.scenario.seed,
            "backend": session.backend.to_obj(),
            "driver_label": session.driver_label,
            "order_index": session.order_index,
            "physics_dt": self.world.dt,
            "subject_vehicle_id": session.vehicle_id,
            "binds": list(self.bind_log),
            "created_at": datetime.datetime.now(datetime.timezone.utc)
                          .strftime("%Y-%m-%dT%H:%M:%SZ"),
            "vehicles": {
                v.vehicle_id: {"params": v.params.to_obj(),
                               "controller_kind": v.controller["kind"]}
                for v in self.scenario.vehicles
            },
            "route": {"start_lane": self.world.vehicles[session.vehicle_id].spec.start_lane,
                      "start_s": self.world.vehicles[session.vehicle_id].spec.start_s,
                      "duration_s": (self.world.tick - session.start_tick) * self.world.dt},
        }
        return SessionLog(header=header, records=list(self.world.records),
                          events=list(self.world.events))

    # -- stepping

    def step_once(self):
        events = self.world.step()
        tick = self.world.tick
        for ev in events:
            for vid in ev.vehicle_ids:
                sess = self.bound.get(vid)
                if sess is not None:
                    sess.send("event", kind=ev.kind, tick=ev.tick, details=ev.details)
        if tick % self.state_every == 0:
            for vid, sess in sorted(self.bound.items()):
                view = self.world.client_view(vid)
                if sess.backend.kind == "mock_physical":
                    view["ego"] = self.world.estimated_ego(vid)
                sess.send("state", tick=tick, sim_t=round6(self.sim_t()), **view)

    async def run(self):
        dt_wall = self.world.dt / max(self.pace, 1e-9)
        next_t = time.monotonic()
        while self.running:
            self.step_once()
            if self.realtime:
                next_t += dt_wall
                delay = next_t - time.monotonic()
                if delay > 0:
                    await asyncio.sleep(delay)
                else:
                    next_t = time.monotonic()
            else:
                await asyncio.sleep(0)

    # -- transports

    async def handle_tcp(self, reader, writer):
        def send_line(line):
            if not writer.is_closing():
                writer.write(line.encode("utf-8") + b"\n")

        session = ClientSession(self, send_line)
        self.sessions.append(session)
        try:
            while True:
                raw = await reader.readline()
                if not raw:
                    break
                if not session.handle_line(raw.decode("utf-8", errors="replace").rstrip("\r\n")):
                    break
            await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            session.closed()
            self.sessions.remove(session)
            try:
                writer.close()
            except Exception:
                pass

    async def handle_ws(self, ws):
        loop = asyncio.get_event_loop()

        def send_line(line):
            asyncio.ensure_future(_ws_send(ws, line), loop=loop)

        session = ClientSession(self, send_line)
        self.sessions.append(session)
        try:
            async for raw in ws:
                if isinstance(raw, bytes):
                    raw = raw.decode("utf-8", errors="replace")
                if not session.handle_line(raw.rstrip("\r\n")):
                    break
        except Exception:
            pass
        finally:
            session.closed()
            self.sessions.remove(session)


async def _ws_send(ws, line):
    try:
        await ws.send(line)
    except Exception:
        pass


def _http_sidecar(server: TeleopServer, listen, port, static_dir):
    """Serve the browser client and the canonical map file."""
    import http.server

    map_bytes = (canonical_json(server.graph.spec.to_obj()) + "\n").encode("utf-8")

    class Handler(http.server.SimpleHTTPRequestHandler):
        def __init__(self, *a, **kw):
            super().__init__(*a, directory=static_dir or os.getcwd(), **kw)

        def do_GET(self):
            if self.path in ("/map.json", "/map"):
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(map_bytes)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                self.wfile.write(map_bytes)
                return
            if static_dir is None:
                self.send_error(404, "no static assets configured")
                return
            super().do_GET()

        def log_message(self, *a):
            pass

    httpd = http.server.ThreadingHTTPServer((listen, port), Handler)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    return httpd


async def serve_async(server: TeleopServer, listen, tcp_port, ws_port):
    import websockets.asyncio.server as ws_server

    tcp = await asyncio.start_server(server.handle_tcp, listen, tcp_port)
    ws = await ws_server.serve(server.handle_ws, listen, ws_port)
    stepper = asyncio.ensure_future(server.run())
    try:
        await stepper
    finally:
        tcp.close()
        ws.close()


def serve_forever(scenario_path, listen="127.0.0.1", tcp_port=8700, ws_port=8701,
                  http_port=8702, state_rate=20.0, out_dir=".", realtime=True,
                  pace=1.0, static_dir=None, failsafe_timeout_s=0.5,
                  mock_channel=None):
    from .teleop_service import ChannelModel

    scenario = load_scenario(scenario_path)
    channel = ChannelModel.from_obj(mock_channel) if isinstance(mock_channel, dict) \
        else mock_channel
    server = TeleopServer(scenario, state_rate=state_rate, out_dir=out_dir,
                          realtime=realtime, pace=pace,
                          failsafe_timeout_s=failsafe_timeout_s,
                          mock_channel=channel)
    if static_dir is None:
        candidate = os.path.join(os.path.dirname(scenario_path), "frontend", "dist")
        static_dir = candidate if os.path.isdir(candidate) else None
    httpd = _http_sidecar(server, listen, http_port, static_dir)
    print(f"microcity serve: tcp={listen}:{tcp_port} ws={listen}:{ws_port} "
          f"http={listen}:{http_port} map_digest={server.graph.digest}", flush=True)
    try:
        asyncio.run(serve_async(server, listen, tcp_port, ws_port))
    except KeyboardInterrupt:
        pass
    finally:
        server.running = False
        httpd.shutdown()
