"""GTP-U v1 codec: G-PDU and Echo messages over the emulated S1-U path.

Wire layout (big-endian throughout):

    octet 0   version(3) | PT(1) | reserved(1) | E(1) | S(1) | PN(1)
    octet 1   message type (1=Echo Request, 2=Echo Response, 255=G-PDU)
    octets 2-3  length of everything after octet 7
    octets 4-7  TEID
    octets 8-11 optional block (seq hi, seq lo, N-PDU number, next ext type),
                present iff any of E/S/PN is set; counted by the length field

Only the mandatory header plus the 4-octet optional block are supported;
extension headers are rejected rather than skipped.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

GTPU_PORT = 2152

MSG_ECHO_REQUEST = 1
MSG_ECHO_RESPONSE = 2
MSG_GPDU = 255

_MANDATORY_LEN = 8
_OPTIONAL_LEN = 4
_MAX_PAYLOAD = 0xFFFF


class GtpError(Exception):
    """Base class for GTP-U codec errors."""


class OversizedPayload(GtpError):
    pass


class ZeroTeid(GtpError):
    pass


class Truncated(GtpError):
    pass


class UnsupportedVersion(GtpError):
    pass


class UnsupportedProtocolType(GtpError):
    pass


class UnsupportedExtension(GtpError):
    pass


class LengthMismatch(GtpError):
    pass


@dataclass(frozen=True)
class GtpuHeader:
    message_type: int
    teid: int
    length: int
    has_extension: bool = False
    has_sequence: bool = False
    has_npdu: bool = False
    # Raw optional-block values. Present (non-None) iff any flag is set;
    # kept verbatim even when the corresponding flag is clear so that
    # re-encoding reproduces the input bit-exactly.
    sequence: int | None = None
    npdu: int | None = None

    version: int = 1
    protocol_type: int = 1

    @property
    def has_optional_block(self) -> bool:
        return self.has_extension or self.has_sequence or self.has_npdu


@dataclass(frozen=True)
class GtpuPacket:
    header: GtpuHeader
    payload: bytes

    @property
    def is_gpdu(self) -> bool:
        return self.header.message_type == MSG_GPDU

    @property
    def is_echo_request(self) -> bool:
        return self.header.message_type == MSG_ECHO_REQUEST

    @property
    def is_echo_response(self) -> bool:
        return self.header.message_type == MSG_ECHO_RESPONSE


def _flags_octet(hdr: GtpuHeader) -> int:
    return (
        (hdr.version << 5)
        | (hdr.protocol_type << 4)
        | (0x04 if hdr.has_extension else 0)
        | (0x02 if hdr.has_sequence else 0)
        | (0x01 if hdr.has_npdu else 0)
    )


def encode(packet: GtpuPacket) -> bytes:
    """Serialize a GtpuPacket; inverse of decode for every accepted packet."""
    hdr = packet.header
    out = bytearray()
    out.append(_flags_octet(hdr))
    out.append(hdr.message_type)
    body_len = len(packet.payload) + (_OPTIONAL_LEN if hdr.has_optional_block else 0)
    if body_len > _MAX_PAYLOAD:
        raise OversizedPayload(f"body of {body_len} bytes exceeds 16-bit length field")
    out += struct.pack("!HI", body_len, hdr.teid)
    if hdr.has_optional_block:
        out += struct.pack("!HBB", hdr.sequence or 0, hdr.npdu or 0, 0)
    out += packet.payload
    return bytes(out)


def encode_gpdu(teid: int, inner_packet: bytes) -> bytes:
    """Encapsulate an inner IP packet as a G-PDU with no optional fields."""
    if teid == 0:
        raise ZeroTeid("G-PDU requires a non-zero TEID")
    if not 0 < teid <= 0xFFFFFFFF:
        raise ZeroTeid(f"TEID out of 32-bit range: {teid}")
    if len(inner_packet) > _MAX_PAYLOAD:
        raise OversizedPayload(f"{len(inner_packet)} byte payload exceeds 65535")
    hdr = GtpuHeader(message_type=MSG_GPDU, teid=teid, length=len(inner_packet))
    return encode(GtpuPacket(hdr, bytes(inner_packet)))


def make_echo(kind: str, sequence: int) -> bytes:
    """Build an Echo Request ("request") or Echo Response ("response")."""
    if kind not in ("request", "response"):
        raise ValueError(f"echo kind must be 'request' or 'response', got {kind!r}")
    if not 0 <= sequence <= 0xFFFF:
        raise ValueError(f"sequence out of 16-bit range: {sequence}")
    msg = MSG_ECHO_REQUEST if kind == "request" else MSG_ECHO_RESPONSE
    hdr = GtpuHeader(
        message_type=msg,
        teid=0,
        length=_OPTIONAL_LEN,
        has_sequence=True,
        sequence=sequence,
        npdu=0,
    )
    return encode(GtpuPacket(hdr, b""))


def decode(data: bytes) -> GtpuPacket:
    """Parse bytes into a GtpuPacket, rejecting anything that cannot round-trip.

    Total over arbitrary input: raises a GtpError subclass, never crashes.
    """
    if len(data) < _MANDATORY_LEN:
        raise Truncated(f"{len(data)} bytes, mandatory header is {_MANDATORY_LEN}")
    flags = data[0]
    version = flags >> 5
    if version != 1:
        raise UnsupportedVersion(f"GTP version {version}")
    if not flags & 0x10:
        raise UnsupportedProtocolType("protocol type bit is 0 (GTP')")
    has_ext = bool(flags & 0x04)
    has_seq = bool(flags & 0x02)
    has_npdu = bool(flags & 0x01)
    message_type = data[1]
    (length, teid) = struct.unpack_from("!HI", data, 2)

    expected_total = _MANDATORY_LEN + length
    if len(data) < expected_total:
        raise Truncated(f"declared {expected_total} bytes, got {len(data)}")
    if len(data) > expected_total:
        raise LengthMismatch(f"{len(data) - expected_total} trailing bytes")

    sequence = None
    npdu = None
    offset = _MANDATORY_LEN
    if has_ext or has_seq or has_npdu:
        if length < _OPTIONAL_LEN:
            raise Truncated("optional flag set but length excludes the 4-octet block")
        sequence, npdu, next_ext = struct.unpack_from("!HBB", data, offset)
        if has_ext or next_ext != 0:
            raise UnsupportedExtension(f"extension header type {next_ext}")
        offset += _OPTIONAL_LEN

    payload = data[offset:]
    hdr = GtpuHeader(
        message_type=message_type,
        teid=teid,
        length=length,
        has_extension=has_ext,
        has_sequence=has_seq,
        has_npdu=has_npdu,
        sequence=sequence,
        npdu=npdu,
    )
    return GtpuPacket(hdr, payload)
