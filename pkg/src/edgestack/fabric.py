"""Edge service fabric: registry, `.edge.local` resolution, round-robin balancing.

Every registered endpoint sits one fabric link from the EPC egress (star
topology), so hop_count is 1 by construction. A small optional UDP DNS
responder answers A queries for `*.edge.local` from the same registry.
"""

from __future__ import annotations

import re
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

DOMAIN_SUFFIX = ".edge.local"
_DNS_LABEL_RE = re.compile(r"^[a-z0-9]([a-z0-9-]{0,61}[a-z0-9])?$")


class FabricError(Exception):
    pass


class MalformedName(FabricError):
    pass


class DuplicateEndpoint(FabricError):
    pass


class UnknownService(FabricError):
    pass


class NoReadyEndpoints(FabricError):
    pass


class UnknownEndpoint(FabricError):
    pass


@dataclass
class Endpoint:
    address: str  # "ip:port"
    ready: bool = False
    version: str = ""

    @property
    def ip(self) -> str:
        return self.address.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.address.rsplit(":", 1)[1])


@dataclass
class ServiceRecord:
    name: str
    instances: list[Endpoint] = field(default_factory=list)
    rr_cursor: int = 0
    created_at: float = field(default_factory=time.time)

    @property
    def fqdn(self) -> str:
        return self.name + DOMAIN_SUFFIX

    def ready_endpoints(self) -> list[Endpoint]:
        return [e for e in self.instances if e.ready]


def strip_suffix(name: str) -> str:
    if name.endswith(DOMAIN_SUFFIX):
        return name[: -len(DOMAIN_SUFFIX)]
    return name


class ServiceRegistry:
    """Thread-safe registry with one writer lock; picks are atomic."""

    def __init__(self):
        self._services: dict[str, ServiceRecord] = {}
        self._lock = threading.RLock()

    def register_instance(self, name: str, address: str, version: str = "") -> ServiceRecord:
        if not _DNS_LABEL_RE.match(name):
            raise MalformedName(f"not a DNS label: {name!r}")
        with self._lock:
            record = self._services.setdefault(name, ServiceRecord(name))
            if any(e.address == address for e in record.instances):
                raise DuplicateEndpoint(f"{name} already has {address}")
            endpoint = Endpoint(address=address, ready=False, version=version)
            record.instances.append(endpoint)
            return record

    def deregister_instance(self, name: str, address: str) -> None:
        with self._lock:
            record = self._services.get(name)
            if record is None:
                raise UnknownService(name)
            before = len(record.instances)
            record.instances = [e for e in record.instances if e.address != address]
            if len(record.instances) == before:
                raise UnknownEndpoint(f"{name} has no endpoint {address}")

    def mark_ready(self, name: str, address: str, ready: bool = True) -> None:
        with self._lock:
            endpoint = self._find(name, address)
            endpoint.ready = ready

    def _find(self, name: str, address: str) -> Endpoint:
        record = self._services.get(name)
        if record is None:
            raise UnknownService(name)
        for e in record.instances:
            if e.address == address:
                return e
        raise UnknownEndpoint(f"{name} has no endpoint {address}")

    def resolve(self, name: str) -> ServiceRecord:
        name = strip_suffix(name)
        with self._lock:
            record = self._services.get(name)
            if record is None:
                raise UnknownService(name)
            if not record.ready_endpoints():
                raise NoReadyEndpoints(name)
            return record

    def pick_endpoint(self, name: str) -> Endpoint:
        name = strip_suffix(name)
        with self._lock:
            record = self._services.get(name)
            if record is None:
                raise UnknownService(name)
            ready = record.ready_endpoints()
            if not ready:
                raise NoReadyEndpoints(name)
            endpoint = ready[record.rr_cursor % len(ready)]
            record.rr_cursor += 1
            return endpoint

    def hop_count(self, address: str) -> int:
        """Fabric links crossed from the EPC egress to the endpoint; the default
        topology is a star, so any registered endpoint is exactly one hop away."""
        with self._lock:
            for record in self._services.values():
                if any(e.address == address for e in record.instances):
                    return 1
        raise UnknownEndpoint(address)

    def services(self) -> list[ServiceRecord]:
        with self._lock:
            return list(self._services.values())

    def dump(self) -> str:
        """One line per service: name ready_count/total_count version."""
        lines = []
        with self._lock:
            for name in sorted(self._services):
                record = self._services[name]
                versions = sorted({e.version for e in record.instances if e.version})
                lines.append(
                    f"{name} {len(record.ready_endpoints())}/{len(record.instances)} "
                    f"{','.join(versions) or '-'}"
                )
        return "\n".join(lines)


# -- optional DNS responder ------------------------------------------------------


def _parse_query(data: bytes) -> tuple[int, str, int] | None:
    """Return (txn_id, qname, qtype) for a single-question query, else None."""
    if len(data) < 12:
        return None
    txn_id, flags, qdcount = struct.unpack_from("!HHH", data, 0)
    if flags & 0x8000 or qdcount != 1:
        return None
    labels = []
    pos = 12
    while pos < len(data):
        length = data[pos]
        pos += 1
        if length == 0:
            break
        if length > 63 or pos + length > len(data):
            return None
        labels.append(data[pos : pos + length].decode("ascii", "replace"))
        pos += length
    if pos + 4 > len(data):
        return None
    qtype, _qclass = struct.unpack_from("!HH", data, pos)
    return txn_id, ".".join(labels).lower(), qtype


def _encode_name(qname: str) -> bytes:
    out = bytearray()
    for label in qname.split("."):
        raw = label.encode("ascii")
        out.append(len(raw))
        out += raw
    out.append(0)
    return bytes(out)


class DnsResponder:
    """UDP responder for A queries under `.edge.local`, backed by the registry.

    Answers with the round-robin endpoint's IP; everything else gets NXDOMAIN.
    """

    def __init__(self, registry: ServiceRegistry, port: int = 0):
        self.registry = registry
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind(("127.0.0.1", port))
        self._sock.settimeout(0.1)
        self.port = self._sock.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> "DnsResponder":
        self._thread.start()
        return self

    def _answer(self, txn_id: int, qname: str, qtype: int) -> bytes:
        question = _encode_name(qname) + struct.pack("!HH", qtype, 1)
        ip = None
        if qtype == 1 and qname.endswith(DOMAIN_SUFFIX.lstrip(".")):
            try:
                ip = self.registry.pick_endpoint(strip_suffix(qname)).ip
            except FabricError:
                ip = None
        if ip is None:
            header = struct.pack("!HHHHHH", txn_id, 0x8183, 1, 0, 0, 0)
            return header + question
        header = struct.pack("!HHHHHH", txn_id, 0x8180, 1, 1, 0, 0)
        answer = struct.pack("!HHHIH", 0xC00C, 1, 1, 0, 4) + socket.inet_aton(ip)
        return header + question + answer

    def _run(self):
        while not self._stop.is_set():
            try:
                data, addr = self._sock.recvfrom(512)
            except socket.timeout:
                continue
            except OSError:
                break
            parsed = _parse_query(data)
            if parsed is None:
                continue
            txn_id, qname, qtype = parsed
            try:
                self._sock.sendto(self._answer(txn_id, qname, qtype), addr)
            except OSError:
                continue

    def close(self):
        self._stop.set()
        self._thread.join(timeout=2.0)
        self._sock.close()
