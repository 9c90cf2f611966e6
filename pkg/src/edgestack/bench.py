"""Constant-rate HTTP benchmark harness reproducing the evaluation methodology.

Load is open-loop: 250 requests over 5 seconds in chunks of 50 per second,
each chunk's requests evenly spaced within its one-second window. Two clock
modes: `virtual` simulates the exchange through the radio link model (fast,
deterministic); `wall` drives real HTTP requests against a live target.
"""

from __future__ import annotations

import functools
import http.client
import math
import random
import statistics
import threading
import time
from dataclasses import dataclass, field, replace

from .blobserve import BLOB_1M_BYTES, BLOB_10M_BYTES
from .link import LinkProfile, VirtualLink, calibrate, wifi_baseline_profile

# Approximate HTTP envelope bytes per direction (request line / status line
# plus headers); used by the virtual-clock exchange model.
REQUEST_BYTES = 256
RESPONSE_OVERHEAD_BYTES = 256

DEFAULT_RATE = 50
DEFAULT_DURATION = 5
DEFAULT_TIMEOUT_S = 120.0

# Measured calibration targets for the emulated radio link.
CALIBRATION_MEAN_RTT_MS = 20.6
CALIBRATION_THROUGHPUT_BPS = 7_520_000.0
CALIBRATION_FIRST_REQUEST_MS = 65.6
CALIBRATION_P99_RTT_MS = 45.9


class BenchError(Exception):
    pass


class UnresolvableTarget(BenchError):
    pass


class AllFailed(BenchError):
    pass


@dataclass(frozen=True)
class BenchScenario:
    name: str
    path: str
    expected_body_bytes: int
    rate: int = DEFAULT_RATE
    duration: int = DEFAULT_DURATION
    timeout_s: float = DEFAULT_TIMEOUT_S

    def __post_init__(self):
        if self.rate <= 0 or self.duration <= 0:
            raise ValueError("rate and duration must be positive")

    @property
    def total_requests(self) -> int:
        return self.rate * self.duration


# The 10MB scenarios saturate the link for hundreds of seconds, so their
# per-request timeout must sit above the expected last completion.
SCENARIOS = {
    "empty": BenchScenario("empty", "/empty", 0),
    "blob1m": BenchScenario("blob1m", "/blob1m", BLOB_1M_BYTES),
    "blob10m": BenchScenario("blob10m", "/blob10m", BLOB_10M_BYTES, timeout_s=600.0),
    "baseline": BenchScenario("baseline", "/blob10m", BLOB_10M_BYTES, timeout_s=600.0),
}


@dataclass(frozen=True)
class RequestSample:
    index: int
    issued_at_ms: float
    latency_ms: float
    status: int
    bytes_received: int

    @property
    def ok(self) -> bool:
        return 200 <= self.status < 300

    @property
    def completed_at_ms(self) -> float:
        return self.issued_at_ms + self.latency_ms


@dataclass(frozen=True)
class BenchReport:
    scenario: str
    mean_latency_ms: float
    p99_latency_ms: float
    throughput_bps: float
    success_count: int
    samples: tuple[RequestSample, ...]


@functools.lru_cache(maxsize=1)
def _calibrated_base() -> LinkProfile:
    return calibrate(
        CALIBRATION_MEAN_RTT_MS,
        CALIBRATION_THROUGHPUT_BPS,
        CALIBRATION_FIRST_REQUEST_MS,
        target_p99_rtt_ms=CALIBRATION_P99_RTT_MS,
    )


def default_profile(seed: int = 0) -> LinkProfile:
    """Radio link profile calibrated to the measured latency/throughput targets."""
    return replace(_calibrated_base(), seed=seed)


def issue_schedule_ms(scenario: BenchScenario) -> list[float]:
    """Chunk schedule: chunk k starts at t=k seconds, requests evenly spaced."""
    spacing = 1000.0 / scenario.rate
    return [
        chunk * 1000.0 + slot * spacing
        for chunk in range(scenario.duration)
        for slot in range(scenario.rate)
    ]


def run_scenario_virtual(
    scenario: BenchScenario, profile: LinkProfile, seed: int | None = None
) -> list[RequestSample]:
    """Simulate the scenario through the link model on the virtual clock.

    Connection policy: one persistent connection per concurrent in-flight
    slot; a request reuses an idle connection when one exists, else opens a
    new one. The setup cost models the cold start of the radio path, so it is
    charged only when a connection opens with no traffic in flight (the run's
    first request, or after the link has gone fully idle).
    """
    if seed is None:
        seed = profile.seed
    uplink = VirtualLink(profile, rng=random.Random(seed))
    downlink = VirtualLink(profile, rng=random.Random(seed + 0x9E3779B9))

    timeout_ms = scenario.timeout_s * 1000.0
    response_size = RESPONSE_OVERHEAD_BYTES + scenario.expected_body_bytes
    conn_busy_until: list[float] = []
    samples = []
    for index, issued_at in enumerate(issue_schedule_ms(scenario)):
        conn = next(
            (i for i, busy in enumerate(conn_busy_until) if busy <= issued_at), None
        )
        setup = 0.0
        if conn is None:
            traffic_in_flight = any(busy > issued_at for busy in conn_busy_until)
            if not traffic_in_flight:
                setup = profile.setup_cost_ms
            conn = len(conn_busy_until)
            conn_busy_until.append(issued_at)
        submit_at = issued_at + setup

        up = uplink.transmit(REQUEST_BYTES, submit_at)
        if up.dropped:
            samples.append(RequestSample(index, issued_at, timeout_ms, 0, 0))
            conn_busy_until[conn] = submit_at
            continue
        down = downlink.transmit(response_size, up.deliver_at)
        if down.dropped:
            samples.append(RequestSample(index, issued_at, timeout_ms, 0, 0))
            conn_busy_until[conn] = up.deliver_at
            continue

        latency = down.deliver_at - issued_at
        conn_busy_until[conn] = down.deliver_at
        if latency > timeout_ms:
            samples.append(RequestSample(index, issued_at, timeout_ms, 0, 0))
        else:
            samples.append(
                RequestSample(index, issued_at, latency, 200, scenario.expected_body_bytes)
            )
    return samples


class _ConnPool:
    """One persistent connection per concurrent in-flight slot."""

    def __init__(self, host: str, port: int, timeout_s: float):
        self.host, self.port, self.timeout_s = host, port, timeout_s
        self._idle: list[http.client.HTTPConnection] = []
        self._lock = threading.Lock()

    def acquire(self) -> http.client.HTTPConnection:
        with self._lock:
            if self._idle:
                return self._idle.pop()
        return http.client.HTTPConnection(self.host, self.port, timeout=self.timeout_s)

    def release(self, conn: http.client.HTTPConnection):
        with self._lock:
            self._idle.append(conn)

    def close(self):
        with self._lock:
            for conn in self._idle:
                conn.close()
            self._idle.clear()


def run_scenario_wall(
    scenario: BenchScenario, host: str, port: int
) -> list[RequestSample]:
    """Issue real HTTP requests on the wall-clock chunk schedule."""
    schedule = issue_schedule_ms(scenario)
    pool = _ConnPool(host, port, scenario.timeout_s)
    samples: list[RequestSample | None] = [None] * len(schedule)
    epoch = time.monotonic()

    def worker(index: int, at_ms: float):
        delay = at_ms / 1000.0 - (time.monotonic() - epoch)
        if delay > 0:
            time.sleep(delay)
        issued = (time.monotonic() - epoch) * 1000.0
        conn = pool.acquire()
        try:
            conn.request("GET", scenario.path)
            response = conn.getresponse()
            body = response.read()
            latency = (time.monotonic() - epoch) * 1000.0 - issued
            samples[index] = RequestSample(index, issued, latency, response.status, len(body))
            pool.release(conn)
        except OSError:
            conn.close()
            samples[index] = RequestSample(
                index, issued, scenario.timeout_s * 1000.0, 0, 0
            )

    threads = [
        threading.Thread(target=worker, args=(i, at), daemon=True)
        for i, at in enumerate(schedule)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    pool.close()
    return [s for s in samples if s is not None]


def nearest_rank_percentile(values: list[float], q: float) -> float:
    ordered = sorted(values)
    return ordered[max(0, math.ceil(q * len(ordered)) - 1)]


def compute_report(samples: list[RequestSample], scenario: BenchScenario) -> BenchReport:
    if not samples:
        raise AllFailed("no samples")
    ok = [s for s in samples if s.ok]
    if not ok:
        raise AllFailed(f"all {len(samples)} requests failed")
    latencies = [s.latency_ms for s in ok]
    first_issue = min(s.issued_at_ms for s in samples)
    last_completion = max(s.completed_at_ms for s in ok)
    elapsed_s = (last_completion - first_issue) / 1000.0
    total_bytes = sum(s.bytes_received for s in ok)
    throughput = total_bytes / elapsed_s if elapsed_s > 0 else 0.0
    return BenchReport(
        scenario=scenario.name,
        mean_latency_ms=statistics.fmean(latencies),
        p99_latency_ms=nearest_rank_percentile(latencies, 0.99),
        throughput_bps=throughput,
        success_count=len(ok),
        samples=tuple(samples),
    )


def emit_series(samples: list[RequestSample], path: str, plot_path: str | None = None):
    """Write the per-request latency series CSV (and optionally a scatter plot)."""
    lines = ["index,issued_at_ms,latency_ms,status,bytes"]
    for s in samples:
        lines.append(
            f"{s.index},{s.issued_at_ms:.6f},{s.latency_ms:.6f},{s.status},{s.bytes_received}"
        )
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    if plot_path:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(7, 4))
        ax.scatter([s.index for s in samples], [s.latency_ms for s in samples], s=6)
        ax.set_xlabel("request index")
        ax.set_ylabel("latency (ms)")
        fig.tight_layout()
        fig.savefig(plot_path)
        plt.close(fig)


def write_report(report: BenchReport, path: str):
    with open(path, "w") as fh:
        fh.write(f"scenario = {report.scenario}\n")
        fh.write(f"mean_latency_ms = {report.mean_latency_ms:.6f}\n")
        fh.write(f"p99_latency_ms = {report.p99_latency_ms:.6f}\n")
        fh.write(f"throughput_bps = {report.throughput_bps:.6f}\n")
        fh.write(f"success_count = {report.success_count}\n")


def scenario_profile(name: str, seed: int = 0) -> LinkProfile:
    """Link profile used by a named scenario: the WiFi baseline for `baseline`,
    the calibrated radio profile otherwise."""
    if name == "baseline":
        return wifi_baseline_profile(seed=seed)
    return replace(default_profile(seed=seed), seed=seed)
