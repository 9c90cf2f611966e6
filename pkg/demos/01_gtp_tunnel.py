"""Walk through the GTP-U user-plane codec: header layout, encapsulation,
decapsulation, and the echo keepalive exchange."""

from edgestack import gtp


def main():
    print("== G-PDU encapsulation ==")
    inner = b"GET blob-server.edge.local/empty"
    frame = gtp.encode_gpdu(teid=0x1234, inner=inner)
    print(f"inner packet   : {inner!r}")
    print(f"on the wire    : {frame.hex(' ')}")
    print("                 ^flags ^type ^len  ^-- TEID --^  payload...")

    packet = gtp.decode(frame)
    print(f"decoded TEID   : 0x{packet.header.teid:08x}")
    print(f"decoded payload: {packet.payload!r}")
    assert packet.payload == inner

    print()
    print("== Echo keepalive ==")
    request = gtp.make_echo("request", sequence=7)
    print(f"echo request   : {request.hex(' ')}")
    decoded = gtp.decode(request)
    print(f"is echo request: {decoded.is_echo_request}, seq={decoded.header.sequence}")
    response = gtp.make_echo("response", sequence=decoded.header.sequence)
    print(f"echo response  : {response.hex(' ')}")

    print()
    print("== Malformed traffic is rejected, never mis-parsed ==")
    for label, blob in [
        ("truncated header", frame[:7]),
        ("wrong version", b"\x50" + frame[1:]),
        ("trailing junk", frame + b"\x00"),
    ]:
        try:
            gtp.decode(blob)
        except gtp.GtpError as exc:
            print(f"{label:<18}: {exc.__class__.__name__}")


if __name__ == "__main__":
    main()
