"""End-to-end acceptance suite.

Each test exercises one numbered acceptance criterion at its stated tolerance
and prints a single PASS/FAIL line to the live terminal.
"""

import random
import sys
import threading
import time
from pathlib import Path

import pytest

from edgestack import gtp
from edgestack.bench import (
    SCENARIOS,
    compute_report,
    default_profile,
    emit_series,
    run_scenario_virtual,
    write_report,
)
from edgestack.core import (
    AlreadyAttached,
    EpcCore,
    NotAttached,
    PoolExhausted,
    UnknownTeid,
)
from edgestack.fabric import NoReadyEndpoints, ServiceRegistry
from edgestack.pipeline import (
    ArtifactStore,
    Deployer,
    Pipeline,
    ProvisionFailed,
    STAGE_BUILD,
    STAGE_DEPLOY,
    STAGE_STORE,
    build,
    parse_manifest,
)

MIB = 1 << 20


def emit(capsys, number: int, passed: bool, detail: str):
    with capsys.disabled():
        verdict = "PASS" if passed else "FAIL"
        print(f"[criterion {number:2d}] {verdict} - {detail}")
    assert passed, detail


def within(value: float, target: float, rel: float) -> bool:
    return abs(value - target) <= rel * abs(target)


# -- 1. GTP codec round-trip ------------------------------------------------------


def test_criterion_01_gtp_roundtrip(capsys):
    started = time.perf_counter()
    vector_ok = gtp.encode_gpdu(1, b"ABCD") == bytes.fromhex("30ff000400000001") + b"ABCD"
    rng = random.Random(0xACCE)
    failures = 0
    for _ in range(1000):
        teid = rng.randrange(1, 2**32)
        payload = rng.randbytes(rng.randrange(0, 65536))
        packet = gtp.decode(gtp.encode_gpdu(teid, payload))
        if (packet.header.teid, packet.payload) != (teid, payload):
            failures += 1
    elapsed = time.perf_counter() - started
    passed = vector_ok and failures == 0 and elapsed < 5.0
    emit(
        capsys, 1, passed,
        f"1000 round-trips, {failures} failures, fixed vector "
        f"{'ok' if vector_ok else 'MISMATCH'}, {elapsed:.2f}s (< 5s)",
    )


# -- 2-5. benchmark reproduction ---------------------------------------------------


@pytest.fixture(scope="module")
def empty_report():
    samples = run_scenario_virtual(SCENARIOS["empty"], default_profile(seed=0))
    return compute_report(samples, SCENARIOS["empty"])


def test_criterion_02_empty_latency(capsys, empty_report):
    started = time.perf_counter()
    report = empty_report
    elapsed = time.perf_counter() - started
    mean_ok = within(report.mean_latency_ms, 20.6, 0.15)
    p99_ok = within(report.p99_latency_ms, 45.9, 0.25)
    passed = mean_ok and p99_ok and elapsed < 30.0
    emit(
        capsys, 2, passed,
        f"empty mean {report.mean_latency_ms:.2f}ms (target 20.6 +/-15%), "
        f"p99 {report.p99_latency_ms:.2f}ms (target 45.9 +/-25%)",
    )


def test_criterion_03_throughput_ceiling(capsys):
    started = time.perf_counter()
    profile = default_profile(seed=0)
    samples = run_scenario_virtual(SCENARIOS["blob10m"], profile)
    report = compute_report(samples, SCENARIOS["blob10m"])
    elapsed = time.perf_counter() - started
    passed = within(report.throughput_bps, 7_520_000, 0.10) and elapsed < 60.0
    emit(
        capsys, 3, passed,
        f"blob10m throughput {report.throughput_bps / 1e6:.3f}MB/s "
        f"(target 7.52 +/-10%), {elapsed:.1f}s (< 60s)",
    )


def test_criterion_04_saturation_queueing_law(capsys):
    profile = default_profile(seed=0)
    samples = run_scenario_virtual(SCENARIOS["blob1m"], profile)
    report = compute_report(samples, SCENARIOS["blob1m"])
    # hand oracle computed before the run: drain 250 x 1 MiB at link bandwidth
    oracle_last_s = 250 * MIB / profile.bandwidth_bps
    last_s = max(s.completed_at_ms for s in samples if s.ok) / 1000.0
    mean_s = report.mean_latency_ms / 1000.0
    mean_ok = 10.0 <= mean_s < 100.0  # "tens of seconds"
    last_ok = within(last_s, oracle_last_s, 0.15)
    emit(
        capsys, 4, mean_ok and last_ok,
        f"blob1m mean {mean_s:.1f}s (tens of seconds), last completion "
        f"{last_s:.2f}s vs hand oracle {oracle_last_s:.2f}s (+/-15%)",
    )


def test_criterion_05_first_request_effect(capsys, empty_report, tmp_path):
    # Read sample 0 back from the emitted series CSV, as shipped to users.
    csv_path = tmp_path / "empty.csv"
    emit_series(list(empty_report.samples), str(csv_path))
    first_latency = float(csv_path.read_text().splitlines()[1].split(",")[2])
    threshold = empty_report.mean_latency_ms + default_profile().setup_cost_ms / 2
    passed = first_latency > threshold
    emit(
        capsys, 5, passed,
        f"first sample {first_latency:.2f}ms > mean + setup/2 = {threshold:.2f}ms",
    )


# -- 6. pipeline gating --------------------------------------------------------------


def make_repo(root: Path, name: str, test_command: str, content: str) -> Path:
    repo = root / name
    (repo / "public").mkdir(parents=True)
    (repo / "public" / "index.html").write_text(content)
    (repo / "edge.manifest").write_text(
        f"test_command = {test_command}\n"
        "build_recipe = static_site public\n"
        "replicas = 1\n"
        "port = 8080\n"
    )
    return repo


def test_criterion_06_pipeline_gating(capsys, tmp_path):
    started = time.perf_counter()
    fabric = ServiceRegistry()
    deployer = Deployer(fabric, tmp_path / "work", readiness_timeout_s=10.0)
    pipeline = Pipeline(ArtifactStore(tmp_path / "store"), deployer, tmp_path / "work")
    rng = random.Random(6)
    gating_violations = 0
    unresolved = 0
    try:
        for i in range(100):
            should_pass = rng.random() < 0.5
            repo = make_repo(
                tmp_path / "repos",
                f"app{i:03d}",
                "exit 0" if should_pass else f"exit {rng.randrange(1, 128)}",
                f"content {i}",
            )
            revision = pipeline.ingest_snapshot(repo.name, repo)
            run = pipeline.runs[pipeline.on_push(repo.name, revision)]
            if should_pass:
                if run.status != "SUCCEEDED" or not run.address.endswith(".edge.local"):
                    unresolved += 1
                elif not fabric.resolve(run.address).ready_endpoints():
                    unresolved += 1
            else:
                if run.status != "FAILED" or any(
                    e.stage in (STAGE_BUILD, STAGE_STORE, STAGE_DEPLOY)
                    for e in run.events
                ):
                    gating_violations += 1
    finally:
        deployer.stop_all()
    elapsed = time.perf_counter() - started
    passed = gating_violations == 0 and unresolved == 0 and elapsed < 120.0
    emit(
        capsys, 6, passed,
        f"100 randomized repos: {gating_violations} gating violations, "
        f"{unresolved} unresolvable passing runs, {elapsed:.1f}s (< 120s)",
    )


# -- 7. rolling availability -----------------------------------------------------


BLOB_MANIFEST = (
    "test_command = exit 0\n"
    f"build_recipe = exec {sys.executable} -m edgestack.blobserve --port $PORT\n"
    "replicas = 2\n"
    "port = 8080\n"
)


def test_criterion_07_rolling_availability(capsys, tmp_path):
    fabric = ServiceRegistry()
    deployer = Deployer(fabric, tmp_path / "work", readiness_timeout_s=15.0)
    repo = tmp_path / "blob-server"
    repo.mkdir()
    (repo / "edge.manifest").write_text(BLOB_MANIFEST)
    manifest = parse_manifest(repo)

    gaps = 0
    stop = threading.Event()

    def probe():
        nonlocal gaps
        while not stop.is_set():
            try:
                fabric.resolve("blob-server")
            except NoReadyEndpoints:
                gaps += 1
            stop.wait(0.1)  # 10 Hz

    rollback_mismatches = 0
    try:
        deployer.deploy(build(repo, manifest, "blob-server", "v0"), 2)
        prober = threading.Thread(target=probe)
        prober.start()
        try:
            for i in range(1, 21):
                deployer.deploy(build(repo, manifest, "blob-server", f"v{i}"), 2)
        finally:
            stop.set()
            prober.join()

        # forced-failure rollouts: instances that never serve HTTP
        bad_repo = tmp_path / "bad"
        bad_repo.mkdir()
        (bad_repo / "edge.manifest").write_text(
            BLOB_MANIFEST.replace(
                f"exec {sys.executable} -m edgestack.blobserve --port $PORT",
                "exec sleep 30",
            )
        )
        bad_manifest = parse_manifest(bad_repo)
        deployer.readiness_timeout_s = 0.4
        for i in range(20):
            before = {e.address for e in fabric.resolve("blob-server").ready_endpoints()}
            with pytest.raises(ProvisionFailed):
                deployer.deploy(build(bad_repo, bad_manifest, "blob-server", f"bad{i}"), 2)
            after = {e.address for e in fabric.resolve("blob-server").ready_endpoints()}
            if after != before:
                rollback_mismatches += 1
    finally:
        deployer.stop_all()

    passed = gaps == 0 and rollback_mismatches == 0
    emit(
        capsys, 7, passed,
        f"20 rollouts at 10Hz probe: {gaps} NoReadyEndpoints; "
        f"20 forced-failure rollbacks: {rollback_mismatches} endpoint-set mismatches",
    )


# -- 8. fairness ------------------------------------------------------------------


def test_criterion_08_round_robin_fairness(capsys):
    registry = ServiceRegistry()
    for i in range(4):
        addr = f"10.45.1.{i + 2}:8080"
        registry.register_instance("app", addr)
        registry.mark_ready("app", addr)
    counts: dict[str, int] = {}
    for _ in range(250):
        addr = registry.pick_endpoint("app").address
        counts[addr] = counts.get(addr, 0) + 1
    passed = sorted(counts.values()) == [62, 62, 63, 63]
    emit(capsys, 8, passed, f"250 picks over 4 endpoints: counts {sorted(counts.values())}")


# -- 9. session-table safety ----------------------------------------------------


def test_criterion_09_session_table_safety(capsys):
    started = time.perf_counter()
    rng = random.Random(9)
    core = EpcCore("10.45.0.0/24")
    sids = [f"00101{i:010d}" for i in range(120)]
    for sid in sids:
        core.register_subscriber(sid)
    model: dict[str, object] = {}  # sid -> session (oracle for attachment)
    violations = 0
    for _ in range(10_000):
        op = rng.choice(("attach", "detach", "demux"))
        sid = rng.choice(sids)
        if op == "attach":
            try:
                session = core.attach(sid)
                if sid in model:
                    violations += 1  # attach must fail when already attached
                model[sid] = session
            except AlreadyAttached:
                if sid not in model:
                    violations += 1
            except PoolExhausted:
                if len(model) < 253:
                    violations += 1
        elif op == "detach":
            try:
                core.detach(sid)
                if sid not in model:
                    violations += 1
                model.pop(sid, None)
            except NotAttached:
                if sid in model:
                    violations += 1
        else:
            if model:
                session = model[rng.choice(list(model))]
                found, inner = core.demux_uplink(
                    gtp.encode_gpdu(session.uplink_teid, b"probe")
                )
                if found is not session or inner != b"probe":
                    violations += 1
            try:
                core.demux_uplink(gtp.encode_gpdu(0xFFFFFFFF, b"x"))
                violations += 1
            except UnknownTeid:
                pass
        attached = core.attached_sessions()
        ips = [s.ue_ip for s in attached]
        teids = [t for s in attached for t in (s.uplink_teid, s.downlink_teid)]
        if len(ips) != len(set(ips)) or len(teids) != len(set(teids)):
            violations += 1
        if {s.subscriber_id for s in attached} != set(model):
            violations += 1
    elapsed = time.perf_counter() - started
    passed = violations == 0 and elapsed < 30.0
    emit(
        capsys, 9, passed,
        f"10,000 random ops vs set-model oracle: {violations} violations, "
        f"{elapsed:.1f}s (< 30s)",
    )


# -- 10. determinism ---------------------------------------------------------------


def test_criterion_10_determinism(capsys, tmp_path):
    mismatches = 0
    for name in ("empty", "blob1m"):
        scenario = SCENARIOS[name]
        outputs = []
        for attempt in ("a", "b"):
            out = tmp_path / attempt
            out.mkdir(exist_ok=True)
            samples = run_scenario_virtual(scenario, default_profile(seed=5))
            emit_series(samples, str(out / f"{name}.csv"))
            write_report(compute_report(samples, scenario), str(out / f"{name}.report"))
            outputs.append(out)
        for suffix in ("csv", "report"):
            a = (outputs[0] / f"{name}.{suffix}").read_bytes()
            b = (outputs[1] / f"{name}.{suffix}").read_bytes()
            if a != b:
                mismatches += 1
    emit(
        capsys, 10, mismatches == 0,
        f"seed-repeated virtual runs: {mismatches} non-identical output files "
        "(empty + blob1m, CSV + report)",
    )
