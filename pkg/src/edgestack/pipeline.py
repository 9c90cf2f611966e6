"""Push-to-deploy pipeline: test, build, store, deploy, return the address.

A push is a (directory snapshot, content hash) pair. Stages run in order and
gate each other; a failing stage ends the run with status FAILED and no later
stage events. Deploys are rolling: new instances must pass readiness before
any old instance is stopped, and a failed rollout leaves the previous version
untouched.
"""

from __future__ import annotations

import enum
import hashlib
import io
import json
import http.server
import shutil
import subprocess
import tarfile
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from .fabric import ServiceRegistry, DOMAIN_SUFFIX
from .runtime import Instance, ProcessRuntime, free_port, wait_ready

MANIFEST_NAME = "edge.manifest"

# Workflow stage numbering: 1 push received, 2 snapshot fetched, 3 tests,
# 4 build, 5 artifact stored, 6 deploy, 8 readiness, 9 address returned.
STAGE_PUSH = 1
STAGE_FETCH = 2
STAGE_TEST = 3
STAGE_BUILD = 4
STAGE_STORE = 5
STAGE_DEPLOY = 6
STAGE_READY = 8
STAGE_ADDRESS = 9


class PipelineError(Exception):
    pass


class UnknownRepo(PipelineError):
    pass


class UnresolvableRevision(PipelineError):
    pass


class MissingManifest(PipelineError):
    pass


class ManifestError(PipelineError):
    pass


class BuildFailed(PipelineError):
    pass


class StorageFull(PipelineError):
    pass


class ProvisionFailed(PipelineError):
    pass


class NotRunning(PipelineError):
    pass


@dataclass(frozen=True)
class Manifest:
    test_command: str
    build_recipe: str
    replicas: int
    port: int

    @property
    def recipe_kind(self) -> str:
        return self.build_recipe.split(None, 1)[0]

    @property
    def recipe_arg(self) -> str:
        parts = self.build_recipe.split(None, 1)
        return parts[1] if len(parts) > 1 else ""


def parse_manifest(snapshot_dir: str | Path) -> Manifest:
    path = Path(snapshot_dir) / MANIFEST_NAME
    if not path.is_file():
        raise MissingManifest(f"no {MANIFEST_NAME} in {snapshot_dir}")
    values: dict[str, str] = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ManifestError(f"bad manifest line: {line!r}")
        values[key.strip()] = raw.strip()
    missing = {"test_command", "build_recipe", "replicas", "port"} - values.keys()
    if missing:
        raise ManifestError(f"manifest missing keys: {sorted(missing)}")
    try:
        replicas = int(values["replicas"])
        port = int(values["port"])
    except ValueError as exc:
        raise ManifestError(str(exc)) from exc
    if replicas < 1:
        raise ManifestError("replicas must be >= 1")
    recipe = values["build_recipe"]
    if recipe.split(None, 1)[0] not in ("static_site", "exec"):
        raise ManifestError(f"unknown build recipe: {recipe!r}")
    return Manifest(values["test_command"], recipe, replicas, port)


def snapshot_hash(directory: str | Path) -> str:
    """Content hash of a directory snapshot: file paths and bytes, sorted."""
    digest = hashlib.sha256()
    root = Path(directory)
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root).as_posix()
        digest.update(rel.encode())
        digest.update(b"\0")
        digest.update(path.read_bytes())
        digest.update(b"\0")
    return digest.hexdigest()


# -- artifacts --------------------------------------------------------------


@dataclass(frozen=True)
class BuildArtifact:
    artifact_id: str
    app: str
    version: str
    payload: bytes  # deterministic tar bundle

    def recipe(self) -> dict:
        with tarfile.open(fileobj=io.BytesIO(self.payload)) as tar:
            meta = tar.extractfile("_edge_artifact.json")
            return json.loads(meta.read())

    def extract_to(self, directory: str | Path) -> None:
        Path(directory).mkdir(parents=True, exist_ok=True)
        with tarfile.open(fileobj=io.BytesIO(self.payload)) as tar:
            tar.extractall(directory, filter="data")


def _deterministic_tar(files: list[tuple[str, bytes]]) -> bytes:
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w") as tar:
        for name, data in sorted(files):
            info = tarfile.TarInfo(name)
            info.size = len(data)
            info.mtime = 0
            info.uid = info.gid = 0
            info.uname = info.gname = ""
            tar.addfile(info, io.BytesIO(data))
    return buf.getvalue()


def build(snapshot_dir: str | Path, manifest: Manifest, app: str, version: str) -> BuildArtifact:
    """Produce an immutable artifact; identical snapshots give identical ids."""
    root = Path(snapshot_dir)
    if manifest.recipe_kind == "static_site":
        content_root = root / manifest.recipe_arg
        if not content_root.is_dir():
            raise BuildFailed(f"static_site directory {manifest.recipe_arg!r} not found")
        files = [
            (p.relative_to(content_root).as_posix(), p.read_bytes())
            for p in sorted(content_root.rglob("*"))
            if p.is_file()
        ]
    else:  # exec: bundle the whole snapshot
        files = [
            (p.relative_to(root).as_posix(), p.read_bytes())
            for p in sorted(root.rglob("*"))
            if p.is_file()
        ]
    meta = {
        "app": app,
        "version": version,
        "recipe": manifest.recipe_kind,
        "recipe_arg": manifest.recipe_arg,
        "port": manifest.port,
    }
    files.append(("_edge_artifact.json", json.dumps(meta, sort_keys=True).encode()))
    payload = _deterministic_tar(files)
    artifact_id = hashlib.sha256(payload).hexdigest()
    return BuildArtifact(artifact_id=artifact_id, app=app, version=version, payload=payload)


class ArtifactStore:
    """Content-addressed store: store/<first-2-hash-chars>/<artifact_id>."""

    def __init__(self, root: str | Path, quota_bytes: int | None = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.quota_bytes = quota_bytes

    def _path(self, artifact_id: str) -> Path:
        return self.root / artifact_id[:2] / artifact_id

    def used_bytes(self) -> int:
        return sum(p.stat().st_size for p in self.root.rglob("*") if p.is_file())

    def store(self, artifact: BuildArtifact) -> str:
        path = self._path(artifact.artifact_id)
        if path.exists():
            return artifact.artifact_id
        if self.quota_bytes is not None:
            if self.used_bytes() + len(artifact.payload) > self.quota_bytes:
                raise StorageFull(f"quota {self.quota_bytes} bytes exceeded")
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(artifact.payload)
        tmp.rename(path)
        return artifact.artifact_id

    def retrieve(self, artifact_id: str) -> BuildArtifact:
        path = self._path(artifact_id)
        if not path.is_file():
            raise PipelineError(f"artifact {artifact_id} not in store")
        payload = path.read_bytes()
        if hashlib.sha256(payload).hexdigest() != artifact_id:
            raise PipelineError(f"artifact {artifact_id} corrupted in store")
        with tarfile.open(fileobj=io.BytesIO(payload)) as tar:
            meta = json.loads(tar.extractfile("_edge_artifact.json").read())
        return BuildArtifact(
            artifact_id=artifact_id,
            app=meta["app"],
            version=meta["version"],
            payload=payload,
        )


# -- tests ---------------------------------------------------------------------


def run_tests(
    snapshot_dir: str | Path, manifest: Manifest, timeout_s: float = 120.0
) -> tuple[bool, str]:
    """Run the developer test command in an isolated copy of the snapshot."""
    with_tmp = Path(snapshot_dir).parent / f".test-{uuid.uuid4().hex[:8]}"
    shutil.copytree(snapshot_dir, with_tmp)
    try:
        proc = subprocess.run(
            manifest.test_command,
            shell=True,
            cwd=with_tmp,
            capture_output=True,
            text=True,
            timeout=timeout_s,
        )
        output = proc.stdout + proc.stderr
        return proc.returncode == 0, output
    except subprocess.TimeoutExpired:
        return False, f"test command timed out after {timeout_s}s"
    finally:
        shutil.rmtree(with_tmp, ignore_errors=True)


# -- deployment --------------------------------------------------------------


class DeployStatus(enum.Enum):
    PENDING = "PENDING"
    TESTING = "TESTING"
    BUILDING = "BUILDING"
    DEPLOYING = "DEPLOYING"
    RUNNING = "RUNNING"
    FAILED = "FAILED"


@dataclass
class Deployment:
    app: str
    version: str
    desired_replicas: int
    instances: list[Instance] = field(default_factory=list)
    status: DeployStatus = DeployStatus.PENDING


class Deployer:
    """Rolls artifacts into the fabric through the process runtime."""

    def __init__(
        self,
        fabric: ServiceRegistry,
        workdir: str | Path,
        runtime: ProcessRuntime | None = None,
        readiness_timeout_s: float = 30.0,
        readiness_path: str = "/healthz",
    ):
        self.fabric = fabric
        self.workdir = Path(workdir)
        self.runtime = runtime or ProcessRuntime()
        self.readiness_timeout_s = readiness_timeout_s
        self.readiness_path = readiness_path
        self.deployments: dict[str, Deployment] = {}
        self._lock = threading.RLock()

    def _start_instance(self, artifact: BuildArtifact, recipe: dict, instance_dir: Path) -> Instance:
        artifact.extract_to(instance_dir)
        port = free_port()
        if recipe["recipe"] == "static_site":
            return self.runtime.start_static_site(str(instance_dir), port)
        return self.runtime.start_exec(recipe["recipe_arg"], str(instance_dir), port)

    def deploy(self, artifact: BuildArtifact, desired_replicas: int) -> Deployment:
        with self._lock:
            return self._deploy_locked(artifact, desired_replicas)

    def _deploy_locked(self, artifact: BuildArtifact, desired_replicas: int) -> Deployment:
        recipe = artifact.recipe()
        app = artifact.app
        previous = self.deployments.get(app)
        deployment = Deployment(app, artifact.version, desired_replicas)
        deployment.status = DeployStatus.DEPLOYING

        new_instances: list[Instance] = []
        base = self.workdir / "deploys" / app / f"{artifact.version}-{uuid.uuid4().hex[:6]}"
        try:
            for i in range(desired_replicas):
                instance = self._start_instance(artifact, recipe, base / str(i))
                new_instances.append(instance)
                if not wait_ready(
                    instance, self.readiness_path, self.readiness_timeout_s
                ):
                    raise ProvisionFailed(
                        f"{app} replica {i} never became ready on port {instance.port}"
                    )
        except ProvisionFailed:
            for instance in new_instances:
                self.runtime.stop(instance)
            deployment.status = DeployStatus.FAILED
            raise

        # All new replicas ready: publish them, then retire the old version.
        for instance in new_instances:
            self.fabric.register_instance(app, instance.address, version=artifact.version)
            self.fabric.mark_ready(app, instance.address)
        if previous is not None:
            for instance in previous.instances:
                try:
                    self.fabric.deregister_instance(app, instance.address)
                except Exception:
                    pass
                self.runtime.stop(instance)

        deployment.instances = new_instances
        deployment.status = DeployStatus.RUNNING
        self.deployments[app] = deployment
        return deployment

    def get_address(self, deployment: Deployment) -> str:
        if deployment.status != DeployStatus.RUNNING:
            raise NotRunning(f"{deployment.app} is {deployment.status.value}")
        return deployment.app + DOMAIN_SUFFIX

    def stop_all(self):
        with self._lock:
            for deployment in self.deployments.values():
                for instance in deployment.instances:
                    self.runtime.stop(instance)
            self.deployments.clear()


# -- pipeline orchestration ---------------------------------------------------


@dataclass(frozen=True)
class PipelineEvent:
    timestamp: float
    stage: int
    outcome: str  # "ok" | "fail"
    detail: str = ""


@dataclass
class PipelineRun:
    run_id: str
    repo_id: str
    revision: str
    events: list[PipelineEvent] = field(default_factory=list)
    status: str = "PENDING"  # PENDING | RUNNING | SUCCEEDED | FAILED
    artifact_id: str | None = None
    address: str | None = None


class Pipeline:
    """Orchestrates push events through test, build, store, and deploy."""

    def __init__(
        self,
        store: ArtifactStore,
        deployer: Deployer,
        workdir: str | Path,
        test_timeout_s: float = 120.0,
        log_path: str | Path | None = None,
        event_listener=None,
    ):
        self.store = store
        self.deployer = deployer
        self.workdir = Path(workdir)
        self.test_timeout_s = test_timeout_s
        self.log_path = Path(log_path) if log_path else None
        self.event_listener = event_listener
        self.runs: dict[str, PipelineRun] = {}
        self._snapshots: dict[tuple[str, str], Path] = {}
        self._repo_locks: dict[str, threading.Lock] = {}
        self._lock = threading.Lock()

    # snapshot ingestion ------------------------------------------------------

    def ingest_snapshot(self, repo_id: str, source_dir: str | Path) -> str:
        """Copy a directory snapshot into the pipeline; returns its revision hash."""
        revision = snapshot_hash(source_dir)
        dest = self.workdir / "snapshots" / repo_id / revision
        if not dest.exists():
            dest.parent.mkdir(parents=True, exist_ok=True)
            shutil.copytree(source_dir, dest)
        with self._lock:
            self._snapshots[(repo_id, revision)] = dest
        return revision

    def known_repos(self) -> set[str]:
        with self._lock:
            return {repo for repo, _ in self._snapshots}

    # run execution ---------------------------------------------------------

    def _emit(self, run: PipelineRun, stage: int, outcome: str, detail: str = ""):
        event = PipelineEvent(time.time(), stage, outcome, detail)
        run.events.append(event)
        if self.log_path:
            with open(self.log_path, "a") as fh:
                fh.write(
                    f"{run.run_id} {event.stage} {event.outcome} "
                    f"{event.timestamp:.3f} {event.detail or '-'}\n"
                )
        if self.event_listener:
            self.event_listener(run, event)

    def on_push(self, repo_id: str, revision: str) -> str:
        """Run the pipeline for a previously ingested snapshot; returns run id.

        Runs for the same repo are serialized FIFO; distinct repos may run
        concurrently.
        """
        with self._lock:
            if repo_id not in {r for r, _ in self._snapshots}:
                raise UnknownRepo(repo_id)
            snapshot = self._snapshots.get((repo_id, revision))
            if snapshot is None:
                raise UnresolvableRevision(f"{repo_id}@{revision}")
            repo_lock = self._repo_locks.setdefault(repo_id, threading.Lock())
            run = PipelineRun(run_id=uuid.uuid4().hex[:12], repo_id=repo_id, revision=revision)
            self.runs[run.run_id] = run

        with repo_lock:
            self._execute(run, snapshot)
        return run.run_id

    def _execute(self, run: PipelineRun, snapshot: Path):
        run.status = "RUNNING"
        self._emit(run, STAGE_PUSH, "ok", f"{run.repo_id}@{run.revision[:12]}")
        try:
            manifest = parse_manifest(snapshot)
            self._emit(run, STAGE_FETCH, "ok")
        except PipelineError as exc:
            self._emit(run, STAGE_FETCH, "fail", str(exc))
            run.status = "FAILED"
            return

        passed, output = run_tests(snapshot, manifest, self.test_timeout_s)
        if not passed:
            self._emit(run, STAGE_TEST, "fail", output.strip()[:200])
            run.status = "FAILED"
            return
        self._emit(run, STAGE_TEST, "ok")

        try:
            artifact = build(snapshot, manifest, app=run.repo_id, version=run.revision[:12])
            self._emit(run, STAGE_BUILD, "ok", artifact.artifact_id[:12])
        except BuildFailed as exc:
            self._emit(run, STAGE_BUILD, "fail", str(exc))
            run.status = "FAILED"
            return

        try:
            self.store.store(artifact)
            run.artifact_id = artifact.artifact_id
            self._emit(run, STAGE_STORE, "ok", artifact.artifact_id[:12])
        except StorageFull as exc:
            self._emit(run, STAGE_STORE, "fail", str(exc))
            run.status = "FAILED"
            return

        try:
            deployment = self.deployer.deploy(artifact, manifest.replicas)
            self._emit(run, STAGE_DEPLOY, "ok", f"{manifest.replicas} replicas")
            self._emit(run, STAGE_READY, "ok")
        except Exception as exc:
            self._emit(run, STAGE_DEPLOY, "fail", str(exc)[:200])
            run.status = "FAILED"
            return

        run.address = self.deployer.get_address(deployment)
        self._emit(run, STAGE_ADDRESS, "ok", run.address)
        run.status = "SUCCEEDED"


# -- webhook -------------------------------------------------------------------


class WebhookServer:
    """HTTP listener for push events: POST /hooks/push {repo_id, revision, snapshot_path}."""

    def __init__(self, pipeline: Pipeline, port: int = 0):
        self.pipeline = pipeline
        outer = self

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                if self.path != "/hooks/push":
                    self._reply(404, {"error": "unknown path"})
                    return
                try:
                    length = int(self.headers.get("Content-Length", 0))
                    body = json.loads(self.rfile.read(length))
                    repo_id = body["repo_id"]
                    snapshot_path = body["snapshot_path"]
                    revision = outer.pipeline.ingest_snapshot(repo_id, snapshot_path)
                    if body.get("revision") and body["revision"] != revision:
                        self._reply(400, {"error": "revision does not match snapshot"})
                        return
                    run_id = outer.pipeline.on_push(repo_id, revision)
                    run = outer.pipeline.runs[run_id]
                    self._reply(
                        200,
                        {
                            "run_id": run_id,
                            "revision": revision,
                            "status": run.status,
                            "address": run.address,
                        },
                    )
                except (KeyError, json.JSONDecodeError) as exc:
                    self._reply(400, {"error": str(exc)})
                except PipelineError as exc:
                    self._reply(422, {"error": str(exc)})

            def _reply(self, status, payload):
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, fmt, *args):
                pass

        self._httpd = http.server.ThreadingHTTPServer(("127.0.0.1", port), Handler)
        self.port = self._httpd.server_address[1]
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    def start(self) -> "WebhookServer":
        self._thread.start()
        return self

    def close(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=2.0)
