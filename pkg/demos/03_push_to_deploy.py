"""Push-to-deploy pipeline in isolation: a passing push rolls out, a failing
test suite gates the release, and a broken rollout rolls back without ever
taking the running version off the air."""

import tempfile
from pathlib import Path

from edgestack.fabric import ServiceRegistry
from edgestack.pipeline import (
    ArtifactStore,
    Deployer,
    Pipeline,
    ProvisionFailed,
    build,
    parse_manifest,
)

MANIFEST = (
    "test_command = {test_command}\n"
    "build_recipe = static_site public\n"
    "replicas = 2\n"
    "port = 8080\n"
)


def make_repo(root, name, test_command, content):
    repo = root / name
    (repo / "public").mkdir(parents=True)
    (repo / "public" / "index.html").write_text(content)
    (repo / "edge.manifest").write_text(MANIFEST.format(test_command=test_command))
    return repo


def show_run(pipeline, run_id):
    run = pipeline.runs[run_id]
    for event in run.events:
        print(f"  stage {event.stage}: {event.outcome} {event.detail}".rstrip())
    print(f"  => {run.status}" + (f", address {run.address}" if run.address else ""))
    return run


def endpoints(fabric, name):
    return sorted(e.address for e in fabric.resolve(name).ready_endpoints())


def main():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        fabric = ServiceRegistry()
        deployer = Deployer(fabric, root / "work")
        pipeline = Pipeline(ArtifactStore(root / "store"), deployer, root / "work")
        try:
            print("== push v1 (tests pass) ==")
            v1 = make_repo(root, "v1", "exit 0", "version one")
            show_run(pipeline, pipeline.on_push("site", pipeline.ingest_snapshot("site", v1)))
            print(f"  endpoints: {endpoints(fabric, 'site')}")

            print("\n== push v2 (tests fail: release is gated) ==")
            v2 = make_repo(root, "v2", "exit 1", "version two, broken tests")
            show_run(pipeline, pipeline.on_push("site", pipeline.ingest_snapshot("site", v2)))
            print(f"  endpoints unchanged: {endpoints(fabric, 'site')}")

            print("\n== push v3 (tests pass: rolling update) ==")
            v3 = make_repo(root, "v3", "exit 0", "version three")
            show_run(pipeline, pipeline.on_push("site", pipeline.ingest_snapshot("site", v3)))
            print(f"  endpoints replaced: {endpoints(fabric, 'site')}")

            print("\n== broken rollout (instances never become ready) ==")
            deployer.readiness_timeout_s = 0.5
            bad = make_repo(root, "bad", "exit 0", "never serves")
            (bad / "edge.manifest").write_text(
                "test_command = exit 0\nbuild_recipe = exec sleep 30\n"
                "replicas = 2\nport = 8080\n"
            )
            before = endpoints(fabric, "site")
            artifact = build(bad, parse_manifest(bad), "site", "v4")
            try:
                deployer.deploy(artifact, 2)
            except ProvisionFailed as exc:
                print(f"  ProvisionFailed: {exc}")
            print(f"  rolled back, endpoints intact: {endpoints(fabric, 'site') == before}")
        finally:
            deployer.stop_all()


if __name__ == "__main__":
    main()
