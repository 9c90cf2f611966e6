"""Collapsed EPC control plane: subscribers, attach/detach, UE IP pool, TEIDs.

The session table is the demux authority for the user plane: uplink G-PDUs
are matched by uplink TEID, downlink encapsulation is looked up by UE IP.
All mutations are serialized through one lock (single logical writer).
"""

from __future__ import annotations

import enum
import ipaddress
import re
import threading
import time
from dataclasses import dataclass, field

from . import gtp

_SUBSCRIBER_ID_RE = re.compile(r"^[0-9]{5,15}$")

DEFAULT_POOL_CIDR = "10.45.0.0/24"


class CoreError(Exception):
    pass


class MalformedId(CoreError):
    pass


class UnknownSubscriber(CoreError):
    pass


class SubscriberDisabled(CoreError):
    pass


class AlreadyAttached(CoreError):
    pass


class PoolExhausted(CoreError):
    pass


class NotAttached(CoreError):
    pass


class UnknownTeid(CoreError):
    pass


class UnknownUeIp(CoreError):
    pass


class IllegalTransition(CoreError):
    pass


class EchoShortCircuit(Exception):
    """Raised by demux_uplink when the input was a GTP Echo, not a G-PDU.

    For Echo Requests `response` carries the ready-to-send Echo Response
    bytes; for Echo Responses it is None (nothing to emit).
    """

    def __init__(self, kind: str, sequence: int | None, response: bytes | None):
        super().__init__(f"echo {kind}")
        self.kind = kind
        self.sequence = sequence
        self.response = response


class SessionState(enum.Enum):
    DETACHED = "DETACHED"
    ATTACHING = "ATTACHING"
    ATTACHED = "ATTACHED"
    DETACHING = "DETACHING"


_LEGAL_TRANSITIONS = {
    SessionState.DETACHED: {SessionState.ATTACHING},
    SessionState.ATTACHING: {SessionState.ATTACHED},
    SessionState.ATTACHED: {SessionState.DETACHING},
    SessionState.DETACHING: {SessionState.DETACHED},
}


@dataclass
class Subscriber:
    subscriber_id: str
    enabled: bool = True


@dataclass
class Session:
    subscriber_id: str
    state: SessionState = SessionState.DETACHED
    ue_ip: str | None = None
    uplink_teid: int | None = None
    downlink_teid: int | None = None
    attached_at: float | None = None

    def transition(self, new_state: SessionState) -> None:
        if new_state not in _LEGAL_TRANSITIONS[self.state]:
            raise IllegalTransition(f"{self.state.value} -> {new_state.value}")
        self.state = new_state


class IpPool:
    """First-fit lowest-free IPv4 allocator over one CIDR block.

    Network, broadcast, and the first host address (gateway) are reserved.
    """

    def __init__(self, cidr: str = DEFAULT_POOL_CIDR):
        self.network = ipaddress.IPv4Network(cidr)
        if self.network.num_addresses < 4:
            raise ValueError(f"pool {cidr} too small to hold a gateway and a UE")
        self.gateway = self.network.network_address + 1
        self.reserved = {
            self.network.network_address,
            self.network.broadcast_address,
            self.gateway,
        }
        self.allocated: set[ipaddress.IPv4Address] = set()

    @property
    def capacity(self) -> int:
        return self.network.num_addresses - len(self.reserved)

    def allocate(self) -> ipaddress.IPv4Address:
        first = int(self.network.network_address) + 1
        last = int(self.network.broadcast_address)
        for raw in range(first, last):
            addr = ipaddress.IPv4Address(raw)
            if addr in self.reserved or addr in self.allocated:
                continue
            self.allocated.add(addr)
            return addr
        raise PoolExhausted(f"no free addresses in {self.network}")

    def release(self, addr: ipaddress.IPv4Address | str) -> None:
        addr = ipaddress.IPv4Address(addr)
        self.allocated.discard(addr)


class EpcCore:
    """Subscriber registry plus session lifecycle and user-plane demux."""

    def __init__(self, pool_cidr: str = DEFAULT_POOL_CIDR):
        self._subscribers: dict[str, Subscriber] = {}
        self._sessions: dict[str, Session] = {}
        self._by_uplink_teid: dict[int, Session] = {}
        self._by_ue_ip: dict[str, Session] = {}
        self._pool = IpPool(pool_cidr)
        self._next_teid = 1
        self._lock = threading.RLock()

    # -- subscriber registry ------------------------------------------------

    def register_subscriber(self, subscriber_id: str) -> Subscriber:
        if not _SUBSCRIBER_ID_RE.match(subscriber_id):
            raise MalformedId(f"subscriber id must be 5-15 digits: {subscriber_id!r}")
        with self._lock:
            existing = self._subscribers.get(subscriber_id)
            if existing is not None:
                return existing
            sub = Subscriber(subscriber_id)
            self._subscribers[subscriber_id] = sub
            return sub

    def set_enabled(self, subscriber_id: str, enabled: bool) -> None:
        with self._lock:
            sub = self._subscribers.get(subscriber_id)
            if sub is None:
                raise UnknownSubscriber(subscriber_id)
            sub.enabled = enabled

    def subscribers(self) -> list[Subscriber]:
        with self._lock:
            return list(self._subscribers.values())

    # -- session lifecycle ----------------------------------------------------

    @property
    def gateway_ip(self) -> str:
        return str(self._pool.gateway)

    def _allocate_teid(self) -> int:
        teid = self._next_teid
        self._next_teid += 1
        return teid

    def attach(self, subscriber_id: str) -> Session:
        with self._lock:
            sub = self._subscribers.get(subscriber_id)
            if sub is None:
                raise UnknownSubscriber(subscriber_id)
            if not sub.enabled:
                raise SubscriberDisabled(subscriber_id)
            current = self._sessions.get(subscriber_id)
            if current is not None and current.state != SessionState.DETACHED:
                raise AlreadyAttached(subscriber_id)

            session = Session(subscriber_id)
            session.transition(SessionState.ATTACHING)
            ue_ip = self._pool.allocate()
            session.ue_ip = str(ue_ip)
            session.uplink_teid = self._allocate_teid()
            session.downlink_teid = self._allocate_teid()
            session.attached_at = time.time()
            session.transition(SessionState.ATTACHED)

            self._sessions[subscriber_id] = session
            self._by_uplink_teid[session.uplink_teid] = session
            self._by_ue_ip[session.ue_ip] = session
            return session

    def detach(self, subscriber_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(subscriber_id)
            if session is None or session.state != SessionState.ATTACHED:
                raise NotAttached(subscriber_id)
            session.transition(SessionState.DETACHING)
            self._pool.release(session.ue_ip)
            del self._by_uplink_teid[session.uplink_teid]
            del self._by_ue_ip[session.ue_ip]
            summary = Session(
                subscriber_id=session.subscriber_id,
                state=SessionState.DETACHING,
                ue_ip=session.ue_ip,
                uplink_teid=session.uplink_teid,
                downlink_teid=session.downlink_teid,
                attached_at=session.attached_at,
            )
            session.ue_ip = None
            session.uplink_teid = None
            session.downlink_teid = None
            session.transition(SessionState.DETACHED)
            summary.state = SessionState.DETACHED
            return summary

    def session_for(self, subscriber_id: str) -> Session | None:
        with self._lock:
            return self._sessions.get(subscriber_id)

    def session_by_teid(self, teid: int) -> Session | None:
        with self._lock:
            return self._by_uplink_teid.get(teid)

    def session_by_ip(self, ue_ip: str) -> Session | None:
        with self._lock:
            return self._by_ue_ip.get(ue_ip)

    def attached_sessions(self) -> list[Session]:
        with self._lock:
            return [s for s in self._sessions.values() if s.state == SessionState.ATTACHED]

    # -- user plane -----------------------------------------------------------

    def demux_uplink(self, gtpu_bytes: bytes) -> tuple[Session, bytes]:
        packet = gtp.decode(gtpu_bytes)
        if packet.is_echo_request:
            seq = packet.header.sequence or 0
            raise EchoShortCircuit("request", seq, gtp.make_echo("response", seq))
        if packet.is_echo_response:
            raise EchoShortCircuit("response", packet.header.sequence, None)
        with self._lock:
            session = self._by_uplink_teid.get(packet.header.teid)
        if session is None:
            raise UnknownTeid(f"no session with uplink TEID {packet.header.teid}")
        return session, packet.payload

    def encap_downlink(self, ue_ip: str, inner_packet: bytes) -> bytes:
        with self._lock:
            session = self._by_ue_ip.get(ue_ip)
        if session is None:
            raise UnknownUeIp(ue_ip)
        return gtp.encode_gpdu(session.downlink_teid, inner_packet)

    # -- dumps ------------------------------------------------------------------

    def dump_sessions(self) -> str:
        """One line per known session: id state ue_ip uplink_teid downlink_teid."""
        lines = []
        with self._lock:
            for sid in sorted(self._sessions):
                s = self._sessions[sid]
                lines.append(
                    f"{sid} {s.state.value} {s.ue_ip or '-'} "
                    f"{s.uplink_teid or '-'} {s.downlink_teid or '-'}"
                )
        return "\n".join(lines)


def load_subscriber_file(core: EpcCore, path: str) -> int:
    """Load `subscriber_id enabled` lines; returns the number registered."""
    count = 0
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            sid = parts[0]
            enabled = len(parts) < 2 or parts[1].lower() in ("1", "true", "yes")
            core.register_subscriber(sid)
            core.set_enabled(sid, enabled)
            count += 1
    return count


def save_subscriber_file(core: EpcCore, path: str) -> None:
    with open(path, "w") as fh:
        for sub in core.subscribers():
            fh.write(f"{sub.subscriber_id} {'true' if sub.enabled else 'false'}\n")
