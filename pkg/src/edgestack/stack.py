"""Wires the whole stack into one supervised process: EPC core, edge fabric,
deploy pipeline, GTP-U UDP endpoint, webhook, DNS responder, control channel.

`EdgeStack.start()` binds every listener; the CLI's `core up` runs one of
these and serves `ue`/`app` commands over the control channel.
"""

from __future__ import annotations

import dataclasses
import http.client
import os
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from pathlib import Path

from . import channel, core as core_mod, gtp
from .core import EpcCore
from .fabric import DnsResponder, FabricError, ServiceRegistry, strip_suffix
from .pipeline import (
    ArtifactStore,
    Deployer,
    Pipeline,
    PipelineError,
    WebhookServer,
)


class StackError(Exception):
    pass


class PortInUse(StackError):
    pass


@dataclass
class StackConfig:
    ip_pool: str = core_mod.DEFAULT_POOL_CIDR
    gtp_port: int = gtp.GTPU_PORT
    webhook_port: int = 8781
    dns_port: int = 8753  # 0 disables the responder
    control_port: int = 8700
    workdir: str = "edgestack-data"
    profile_path: str = ""
    clock_mode: str = "virtual"  # virtual | wall
    test_timeout_s: float = 120.0
    build_timeout_s: float = 300.0
    readiness_timeout_s: float = 30.0

    def validate(self) -> "StackConfig":
        ports = [p for p in (self.gtp_port, self.webhook_port, self.control_port) if p]
        if self.dns_port:
            ports.append(self.dns_port)
        if len(set(ports)) != len(ports):
            raise StackError(f"ports must be distinct: {ports}")
        if self.clock_mode not in ("virtual", "wall"):
            raise StackError(f"clock_mode must be virtual or wall: {self.clock_mode}")
        return self


_CONFIG_FIELDS = {f.name: f.type for f in dataclasses.fields(StackConfig)}


def load_config(
    path: str | None = None, env: dict | None = None, **flag_overrides
) -> StackConfig:
    """Build a StackConfig with precedence flags > EDGE_* env > file > defaults."""
    values: dict = {}
    if path:
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, raw = line.partition("=")
            key = key.strip()
            if not sep or key not in _CONFIG_FIELDS:
                raise StackError(f"bad config line: {line!r}")
            values[key] = raw.strip()
    env = os.environ if env is None else env
    for name in _CONFIG_FIELDS:
        env_key = "EDGE_" + name.upper()
        if env_key in env:
            values[name] = env[env_key]
    for name, value in flag_overrides.items():
        if value is not None:
            values[name] = value

    kwargs = {}
    defaults = StackConfig()
    for name, raw in values.items():
        current = getattr(defaults, name)
        if isinstance(current, int):
            kwargs[name] = int(raw)
        elif isinstance(current, float):
            kwargs[name] = float(raw)
        else:
            kwargs[name] = str(raw)
    return StackConfig(**kwargs).validate()


class GtpEndpoint:
    """UDP socket speaking GTP-U: answers Echo, demuxes G-PDUs to a handler.

    The default handler interprets the inner packet as a one-line request,
    `GET <service-dns-name><path>`, performs the HTTP call against the fabric
    endpoint picked for the service, and returns the response body downlink.
    """

    def __init__(self, core: EpcCore, fabric: ServiceRegistry, port: int):
        self.core = core
        self.fabric = fabric
        try:
            self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self._sock.bind(("127.0.0.1", port))
        except OSError as exc:
            raise PortInUse(f"GTP-U port {port}: {exc}") from exc
        self._sock.settimeout(0.1)
        self.port = self._sock.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> "GtpEndpoint":
        self._thread.start()
        return self

    def _run(self):
        while not self._stop.is_set():
            try:
                data, addr = self._sock.recvfrom(65536)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                session, inner = self.core.demux_uplink(data)
            except core_mod.EchoShortCircuit as echo:
                if echo.response is not None:
                    self._sock.sendto(echo.response, addr)
                continue
            except (gtp.GtpError, core_mod.CoreError):
                continue
            response = self._handle(inner)
            try:
                self._sock.sendto(
                    self.core.encap_downlink(session.ue_ip, response), addr
                )
            except (core_mod.CoreError, gtp.GtpError, OSError):
                continue

    def _handle(self, inner: bytes) -> bytes:
        try:
            line = inner.decode().strip()
            method, target = line.split(None, 1)
            if method != "GET":
                return b"ERR unsupported method"
            host, _, path = target.partition("/")
            endpoint = self.fabric.pick_endpoint(strip_suffix(host))
            conn = http.client.HTTPConnection(endpoint.ip, endpoint.port, timeout=10)
            conn.request("GET", "/" + path)
            resp = conn.getresponse()
            body = resp.read()
            conn.close()
            return b"OK %d %d\n" % (resp.status, len(body)) + body
        except FabricError as exc:
            return f"ERR {exc.__class__.__name__} {exc}".encode()
        except (OSError, ValueError, UnicodeDecodeError) as exc:
            return f"ERR {exc.__class__.__name__}".encode()

    def close(self):
        self._stop.set()
        self._thread.join(timeout=2.0)
        self._sock.close()


class ControlServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class EdgeStack:
    """One running instance of the whole emulated stack."""

    def __init__(self, config: StackConfig):
        self.config = config.validate()
        self.workdir = Path(config.workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)

        self.core = EpcCore(config.ip_pool)
        self.fabric = ServiceRegistry()
        self.store = ArtifactStore(self.workdir / "store")
        self.deployer = Deployer(
            self.fabric,
            self.workdir,
            readiness_timeout_s=config.readiness_timeout_s,
        )
        self.pipeline = Pipeline(
            self.store,
            self.deployer,
            self.workdir,
            test_timeout_s=config.test_timeout_s,
            log_path=self.workdir / "pipeline.log",
        )
        self._servers: list = []
        self._shutdown = threading.Event()
        self.gtp_endpoint: GtpEndpoint | None = None
        self.dns: DnsResponder | None = None
        self.webhook: WebhookServer | None = None
        self._control: ControlServer | None = None

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "EdgeStack":
        stack = self
        try:
            self._control = ControlServer(
                ("127.0.0.1", self.config.control_port), _make_control_handler(stack)
            )
        except OSError as exc:
            raise PortInUse(f"control port {self.config.control_port}: {exc}") from exc
        self.control_port = self._control.server_address[1]
        threading.Thread(target=self._control.serve_forever, daemon=True).start()

        self.gtp_endpoint = GtpEndpoint(self.core, self.fabric, self.config.gtp_port).start()
        try:
            self.webhook = WebhookServer(self.pipeline, self.config.webhook_port).start()
        except OSError as exc:
            self.close()
            raise PortInUse(f"webhook port {self.config.webhook_port}: {exc}") from exc
        if self.config.dns_port:
            try:
                self.dns = DnsResponder(self.fabric, self.config.dns_port).start()
            except OSError as exc:
                self.close()
                raise PortInUse(f"DNS port {self.config.dns_port}: {exc}") from exc
        return self

    def wait(self):
        self._shutdown.wait()

    def close(self):
        if self._control is not None:
            self._control.shutdown()
            self._control.server_close()
            self._control = None
        for server in (self.gtp_endpoint, self.webhook, self.dns):
            if server is not None:
                server.close()
        self.gtp_endpoint = self.webhook = self.dns = None
        self.deployer.stop_all()
        self._shutdown.set()

    # -- control-channel command handlers -------------------------------------

    def handle_command(self, message: dict) -> dict:
        cmd = message.get("cmd")
        try:
            if cmd == "status":
                return {
                    "ok": True,
                    "sessions": self.core.dump_sessions(),
                    "services": self.fabric.dump(),
                    "gtp_port": self.gtp_endpoint.port if self.gtp_endpoint else None,
                    "webhook_port": self.webhook.port if self.webhook else None,
                    "dns_port": self.dns.port if self.dns else None,
                }
            if cmd == "register":
                sub = self.core.register_subscriber(message["subscriber_id"])
                return {"ok": True, "subscriber_id": sub.subscriber_id, "enabled": sub.enabled}
            if cmd == "attach":
                self.core.register_subscriber(message["subscriber_id"])
                session = self.core.attach(message["subscriber_id"])
                return {
                    "ok": True,
                    "ue_ip": session.ue_ip,
                    "uplink_teid": session.uplink_teid,
                    "downlink_teid": session.downlink_teid,
                }
            if cmd == "detach":
                summary = self.core.detach(message["subscriber_id"])
                return {"ok": True, "released_ip": summary.ue_ip}
            if cmd == "ue_list":
                return {"ok": True, "sessions": self.core.dump_sessions()}
            if cmd == "push":
                revision = self.pipeline.ingest_snapshot(
                    message["repo_id"], message["snapshot_path"]
                )
                run_id = self.pipeline.on_push(message["repo_id"], revision)
                run = self.pipeline.runs[run_id]
                return {
                    "ok": run.status == "SUCCEEDED",
                    "run_id": run_id,
                    "revision": revision,
                    "status": run.status,
                    "address": run.address,
                    "artifact_id": run.artifact_id,
                    "events": [
                        {"stage": e.stage, "outcome": e.outcome, "detail": e.detail}
                        for e in run.events
                    ],
                }
            if cmd == "app_status":
                name = strip_suffix(message["name"])
                deployment = self.deployer.deployments.get(name)
                if deployment is None:
                    return {"ok": False, "error": f"no deployment named {name}"}
                return {
                    "ok": True,
                    "app": deployment.app,
                    "version": deployment.version,
                    "status": deployment.status.value,
                    "replicas": len(deployment.instances),
                    "endpoints": [i.address for i in deployment.instances],
                }
            if cmd == "resolve":
                record = self.fabric.resolve(message["name"])
                return {
                    "ok": True,
                    "fqdn": record.fqdn,
                    "endpoints": [e.address for e in record.ready_endpoints()],
                }
            if cmd == "shutdown":
                threading.Thread(target=self.close, daemon=True).start()
                return {"ok": True}
            return {"ok": False, "error": f"unknown command {cmd!r}"}
        except (core_mod.CoreError, FabricError, PipelineError, StackError) as exc:
            return {"ok": False, "error": f"{exc.__class__.__name__}: {exc}"}


def _make_control_handler(stack: EdgeStack):
    class Handler(socketserver.BaseRequestHandler):
        def handle(self):
            try:
                message = channel.recv_message(self.request)
                channel.send_message(self.request, stack.handle_command(message))
            except channel.ChannelError:
                pass

    return Handler
