import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgestack import gtp

# Hand-computed from the published GTP-U header field layout:
# flags 0x30 (v1, PT=1, no options), type 0xFF, length 4, TEID 1, "ABCD".
KNOWN_VECTOR = bytes.fromhex("30ff000400000001") + b"ABCD"


def test_encode_gpdu_known_vector():
    assert gtp.encode_gpdu(0x00000001, b"ABCD") == KNOWN_VECTOR


def test_encode_gpdu_empty_payload():
    assert gtp.encode_gpdu(1, b"") == bytes.fromhex("30ff000000000001")


def test_encode_gpdu_zero_teid():
    with pytest.raises(gtp.ZeroTeid):
        gtp.encode_gpdu(0, b"anything")


def test_encode_gpdu_oversized_payload():
    with pytest.raises(gtp.OversizedPayload):
        gtp.encode_gpdu(1, b"x" * 65536)
    assert gtp.encode_gpdu(1, b"x" * 65535)  # boundary is representable


def test_decode_known_vector():
    packet = gtp.decode(KNOWN_VECTOR)
    assert packet.is_gpdu
    assert packet.header.teid == 1
    assert packet.payload == b"ABCD"


def test_decode_rejects_version_2():
    data = bytearray(KNOWN_VECTOR)
    data[0] = 0x50
    with pytest.raises(gtp.UnsupportedVersion):
        gtp.decode(bytes(data))


def test_decode_rejects_gtp_prime():
    data = bytearray(KNOWN_VECTOR)
    data[0] = 0x20  # PT bit cleared
    with pytest.raises(gtp.UnsupportedProtocolType):
        gtp.decode(bytes(data))


def test_decode_rejects_truncated():
    with pytest.raises(gtp.Truncated):
        gtp.decode(KNOWN_VECTOR[:7])
    with pytest.raises(gtp.Truncated):
        gtp.decode(KNOWN_VECTOR[:-1])


def test_decode_rejects_trailing_bytes():
    with pytest.raises(gtp.LengthMismatch):
        gtp.decode(KNOWN_VECTOR + b"\x00")


def test_decode_rejects_extension_headers():
    # S flag set, next-extension-type octet non-zero
    data = bytes.fromhex("32ff000400000001") + bytes([0, 7, 0, 0x85])
    with pytest.raises(gtp.UnsupportedExtension):
        gtp.decode(data)


@pytest.mark.parametrize("kind,msg_type", [("request", 1), ("response", 2)])
def test_echo_roundtrip(kind, msg_type):
    for seq in (0, 7, 65535):
        packet = gtp.decode(gtp.make_echo(kind, seq))
        assert packet.header.message_type == msg_type
        assert packet.header.teid == 0
        assert packet.header.has_sequence
        assert packet.header.sequence == seq
        assert packet.payload == b""


def test_echo_classification_ignores_teid():
    # Demux treats anything with an echo message type as echo regardless of
    # TEID; brute force over message types x teid values.
    for msg_type in (1, 2, 255):
        for teid in (0, 1):
            raw = bytearray(gtp.make_echo("request", 3))
            raw[1] = msg_type
            raw[4:8] = teid.to_bytes(4, "big")
            packet = gtp.decode(bytes(raw))
            assert packet.is_echo_request == (msg_type == 1)
            assert packet.is_echo_response == (msg_type == 2)


@given(
    teid=st.integers(min_value=1, max_value=0xFFFFFFFF),
    payload=st.binary(max_size=2048),
)
@settings(max_examples=300)
def test_gpdu_roundtrip_property(teid, payload):
    encoded = gtp.encode_gpdu(teid, payload)
    packet = gtp.decode(encoded)
    assert packet.header.teid == teid
    assert packet.payload == payload
    assert gtp.encode(packet) == encoded


def test_gpdu_roundtrip_randomized_bulk():
    rng = random.Random(0xEDE)
    for _ in range(1000):
        teid = rng.randrange(1, 2**32)
        payload = rng.randbytes(rng.randrange(0, 65536))
        packet = gtp.decode(gtp.encode_gpdu(teid, payload))
        assert (packet.header.teid, packet.payload) == (teid, payload)


@given(st.binary(max_size=4096))
@settings(max_examples=500)
def test_decode_total_over_arbitrary_bytes(data):
    try:
        packet = gtp.decode(data)
    except gtp.GtpError:
        return
    # Anything accepted must satisfy the length discipline and re-encode.
    expected = len(data) - 8
    assert packet.header.length == expected
    assert gtp.encode(packet) == data


def test_decode_total_on_large_fuzz_inputs():
    rng = random.Random(99)
    for _ in range(200):
        data = rng.randbytes(rng.randrange(0, 65536))
        try:
            gtp.decode(data)
        except gtp.GtpError:
            pass
