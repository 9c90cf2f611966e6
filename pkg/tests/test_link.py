import random
import socket
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgestack.link import (
    InfeasibleTargets,
    LinkProfile,
    UdpLinkShaper,
    VirtualClock,
    VirtualLink,
    calibrate,
    load_profile,
    save_profile,
    wifi_baseline_profile,
)


def flat_profile(**kwargs) -> LinkProfile:
    defaults = dict(
        one_way_delay_ms=10.0,
        bandwidth_bps=1e9,
        jitter_stddev_ms=0.0,
        loss_prob=0.0,
        setup_cost_ms=0.0,
        seed=0,
    )
    defaults.update(kwargs)
    return LinkProfile(**defaults)


def test_profile_validation():
    with pytest.raises(ValueError):
        flat_profile(one_way_delay_ms=-1)
    with pytest.raises(ValueError):
        flat_profile(bandwidth_bps=0)
    with pytest.raises(ValueError):
        flat_profile(loss_prob=1.5)


def test_transmit_delay_dominated():
    link = VirtualLink(flat_profile())
    delivery = link.transmit(1, now=0.0)
    assert delivery.deliver_at == pytest.approx(10.0, abs=1e-6)


def test_transmit_serialization_dominated():
    # 10 MiB at 7.52 MB/s is about 1.394 s of serialization.
    link = VirtualLink(flat_profile(one_way_delay_ms=0.0, bandwidth_bps=7_520_000))
    delivery = link.transmit(10 * 1024 * 1024, now=0.0)
    assert delivery.deliver_at == pytest.approx(10 * 1024 * 1024 / 7_520_000 * 1000, rel=1e-9)
    assert delivery.deliver_at == pytest.approx(1394.4, abs=0.1)


def test_transmit_loss_always():
    link = VirtualLink(flat_profile(loss_prob=1.0))
    for _ in range(20):
        assert link.transmit(100, now=0.0).dropped


def test_transmit_rejects_empty_packet():
    with pytest.raises(ValueError):
        VirtualLink(flat_profile()).transmit(0, now=0.0)


def test_fifo_no_reorder_with_jitter():
    link = VirtualLink(flat_profile(jitter_stddev_ms=5.0, seed=42))
    deliveries = [link.transmit(100, now=float(i)) for i in range(500)]
    times = [d.deliver_at for d in deliveries if not d.dropped]
    assert times == sorted(times)


def test_queueing_law_backlogged_link():
    # Offered load far above capacity: last delivery lands at total/bandwidth.
    profile = flat_profile(one_way_delay_ms=0.0, bandwidth_bps=1_000_000)
    link = VirtualLink(profile)
    total = 0
    last = 0.0
    for i in range(100):
        delivery = link.transmit(50_000, now=0.0)
        total += 50_000
        last = delivery.deliver_at
    expected_ms = total / profile.bandwidth_bps * 1000
    assert last == pytest.approx(expected_ms, abs=profile.serialization_ms(50_000))


def test_throughput_ceiling():
    profile = flat_profile(one_way_delay_ms=1.0, bandwidth_bps=2_000_000)
    link = VirtualLink(profile)
    size, n = 10_000, 400
    last = max(link.transmit(size, now=0.0).deliver_at for _ in range(n))
    achieved = size * n / (last / 1000)
    assert achieved <= profile.bandwidth_bps * (1 + 1e-9)
    assert achieved >= 0.95 * profile.bandwidth_bps


def test_determinism_same_seed():
    a = VirtualLink(flat_profile(jitter_stddev_ms=3.0, loss_prob=0.1, seed=7))
    b = VirtualLink(flat_profile(jitter_stddev_ms=3.0, loss_prob=0.1, seed=7))
    sizes = [100 * (i % 9 + 1) for i in range(300)]
    assert [a.transmit(s, now=i * 0.5) for i, s in enumerate(sizes)] == [
        b.transmit(s, now=i * 0.5) for i, s in enumerate(sizes)
    ]


# -- virtual clock -----------------------------------------------------------


def test_advance_clock_ordering():
    clock = VirtualClock()
    link = VirtualLink(flat_profile(one_way_delay_ms=5.0))
    second = link.transmit(1, now=0.0)  # ~5ms
    clock.schedule(second, "late")
    early = VirtualLink(flat_profile(one_way_delay_ms=3.0)).transmit(1, now=0.0)
    clock.schedule(early, "early")
    fired = clock.advance(10.0)
    assert [payload for _, payload in fired] == ["early", "late"]
    assert clock.now == 10.0


def test_advance_clock_before_first_event():
    clock = VirtualClock()
    clock.schedule(VirtualLink(flat_profile()).transmit(1, now=0.0), "x")
    assert clock.advance(1.0) == []
    assert clock.now == 1.0
    assert clock.pending == 1


def test_advance_clock_rejects_backwards():
    clock = VirtualClock(start=5.0)
    with pytest.raises(ValueError):
        clock.advance(4.0)


def test_advance_clock_matches_sort_oracle():
    rng = random.Random(17)
    clock = VirtualClock()
    expected = []
    for i in range(1000):
        deliver_at = rng.uniform(0, 1000)
        delivery_stub = type("D", (), {"deliver_at": deliver_at, "dropped": False, "size": 1})
        clock.schedule(delivery_stub, i)
        expected.append((deliver_at, i))
    fired = clock.advance(1000.0)
    assert [p for _, p in fired] == [i for _, i in sorted(expected)]


# -- calibration -----------------------------------------------------------------


def test_calibrate_table_targets():
    profile = calibrate(20.6, 7_520_000, 65.6)
    assert profile.one_way_delay_ms == pytest.approx(10.3, rel=0.10)
    assert profile.setup_cost_ms == pytest.approx(45.0, rel=0.01)
    assert profile.bandwidth_bps == 7_520_000
    assert profile.jitter_stddev_ms > 0


def test_calibrate_infeasible_first_request():
    with pytest.raises(InfeasibleTargets):
        calibrate(20.0, 7_520_000, 10.0)
    with pytest.raises(InfeasibleTargets):
        calibrate(-1, 7_520_000, 10.0)


def test_calibrated_profile_reproduces_mean_rtt():
    # Closed-loop check: simulate many small-payload exchanges and verify the
    # mean round trip lands near the calibration target.
    profile = calibrate(20.6, 7_520_000, 65.6)
    rng = random.Random(3)
    up = VirtualLink(profile, rng=rng)
    down = VirtualLink(profile, rng=rng)
    rtts = []
    for i in range(250):
        t = i * 100.0  # wide spacing: no queueing
        a = up.transmit(256, now=t)
        b = down.transmit(256, now=a.deliver_at)
        rtts.append(b.deliver_at - t)
    mean = sum(rtts) / len(rtts)
    assert mean == pytest.approx(20.6, rel=0.10)


def test_profile_file_roundtrip(tmp_path):
    profile = calibrate(20.6, 7_520_000, 65.6, seed=9)
    path = tmp_path / "link.profile"
    save_profile(profile, str(path))
    assert load_profile(str(path)) == profile
    assert load_profile(str(path), seed=11).seed == 11


def test_wifi_baseline_profile():
    profile = wifi_baseline_profile()
    assert profile.bandwidth_bps == pytest.approx(38_650_000)


# -- live shaper -------------------------------------------------------------------


def test_udp_shaper_forwards_in_order():
    receiver = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    receiver.bind(("127.0.0.1", 0))
    receiver.settimeout(2.0)
    shaper = UdpLinkShaper(
        flat_profile(one_way_delay_ms=5.0, bandwidth_bps=1e8),
        listen_port=0,
        target=receiver.getsockname(),
    ).start()
    sender = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        start = time.monotonic()
        for i in range(5):
            sender.sendto(f"pkt{i}".encode(), ("127.0.0.1", shaper.listen_port))
        got = [receiver.recvfrom(1024)[0] for _ in range(5)]
        elapsed = time.monotonic() - start
        assert got == [f"pkt{i}".encode() for i in range(5)]
        assert elapsed >= 0.005
    finally:
        shaper.close()
        receiver.close()
        sender.close()


@given(
    sizes=st.lists(st.integers(min_value=1, max_value=100_000), min_size=1, max_size=50),
    delay=st.floats(min_value=0, max_value=100, allow_nan=False),
)
@settings(max_examples=100)
def test_delivery_never_before_submission(sizes, delay):
    link = VirtualLink(flat_profile(one_way_delay_ms=delay, jitter_stddev_ms=2.0))
    now = 0.0
    for size in sizes:
        delivery = link.transmit(size, now=now)
        if not delivery.dropped:
            assert delivery.deliver_at >= now
        now += 1.0
