"""Reliable, ordered, length-prefixed control message channel over TCP.

Framing: 4-byte big-endian length followed by a UTF-8 JSON body. Stands in
for the control-plane transport between emulated components and the CLI.
"""

from __future__ import annotations

import json
import socket
import struct


class ChannelError(Exception):
    pass


def send_message(sock: socket.socket, message: dict) -> None:
    body = json.dumps(message).encode()
    sock.sendall(struct.pack("!I", len(body)) + body)


def recv_message(sock: socket.socket) -> dict:
    header = _recv_exact(sock, 4)
    (length,) = struct.unpack("!I", header)
    if length > 16 * 1024 * 1024:
        raise ChannelError(f"frame of {length} bytes exceeds limit")
    return json.loads(_recv_exact(sock, length))


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ChannelError("peer closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def request(host: str, port: int, message: dict, timeout: float = 30.0) -> dict:
    """One request/response exchange on a fresh connection."""
    with socket.create_connection((host, port), timeout=timeout) as sock:
        send_message(sock, message)
        return recv_message(sock)
