"""Process-level runtime standing in for a container orchestrator.

An instance is a supervised local process given a free TCP port and a working
directory. Readiness is one successful HTTP GET on the probe path.
"""

from __future__ import annotations

import http.client
import os
import shlex
import socket
import subprocess
import sys
import time
from dataclasses import dataclass


class RuntimeError_(Exception):
    pass


def free_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@dataclass
class Instance:
    proc: subprocess.Popen
    port: int
    workdir: str

    @property
    def address(self) -> str:
        return f"127.0.0.1:{self.port}"

    @property
    def alive(self) -> bool:
        return self.proc.poll() is None


class ProcessRuntime:
    """Spawns and stops app instances as local subprocesses."""

    def start_static_site(self, directory: str, port: int) -> Instance:
        cmd = [
            sys.executable,
            "-m",
            "edgestack.staticserve",
            "--port",
            str(port),
            "--dir",
            directory,
        ]
        return self._spawn(cmd, cwd=directory, port=port)

    def start_exec(self, command: str, cwd: str, port: int) -> Instance:
        env = dict(os.environ, PORT=str(port))
        proc = subprocess.Popen(
            command,
            shell=True,
            cwd=cwd,
            env=env,
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
        )
        return Instance(proc=proc, port=port, workdir=cwd)

    def _spawn(self, cmd: list[str], cwd: str, port: int) -> Instance:
        proc = subprocess.Popen(
            cmd, cwd=cwd, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL
        )
        return Instance(proc=proc, port=port, workdir=cwd)

    def stop(self, instance: Instance) -> None:
        if instance.proc.poll() is None:
            instance.proc.terminate()
            try:
                instance.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                instance.proc.kill()
                instance.proc.wait(timeout=5)


def probe_http(port: int, path: str = "/healthz", timeout: float = 1.0) -> bool:
    try:
        conn = http.client.HTTPConnection("127.0.0.1", port, timeout=timeout)
        conn.request("GET", path)
        status = conn.getresponse().status
        conn.close()
        return status == 200
    except OSError:
        return False
    except http.client.HTTPException:
        return False


def wait_ready(
    instance: Instance,
    path: str = "/healthz",
    deadline_s: float = 30.0,
    interval_s: float = 0.02,
) -> bool:
    """Poll the readiness probe until it passes, the deadline expires, or the
    process dies."""
    stop_at = time.monotonic() + deadline_s
    while time.monotonic() < stop_at:
        if not instance.alive:
            return False
        if probe_http(instance.port, path):
            return True
        time.sleep(interval_s)
    return False
