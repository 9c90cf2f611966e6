"""Single entry-point command suite for the emulated edge stack.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import os
import signal
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import bench as bench_mod
from . import channel
from .link import load_profile
from .stack import EdgeStack, PortInUse, StackError, load_config

CONTROL_HOST = "127.0.0.1"


def _control_port(port: int | None) -> int:
    if port is not None:
        return port
    return load_config(os.environ.get("EDGE_CONFIG")).control_port


def _request(port: int | None, message: dict) -> dict:
    try:
        return channel.request(CONTROL_HOST, _control_port(port), message)
    except OSError as exc:
        raise click.ClickException(f"core not running? control channel: {exc}")


def _fail_if_error(reply: dict) -> dict:
    if not reply.get("ok"):
        raise click.ClickException(reply.get("error") or reply.get("status") or "failed")
    return reply


@click.group()
def main():
    """Micro-operator edge stack emulator."""


# -- core ------------------------------------------------------------------


@main.group()
def core():
    """Start, stop, and inspect the core stack."""


@core.command("up")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--ip-pool", default=None, help="UE address pool CIDR")
@click.option("--gtp-port", type=int, default=None)
@click.option("--webhook-port", type=int, default=None)
@click.option("--dns-port", type=int, default=None, help="0 disables the DNS responder")
@click.option("--control-port", type=int, default=None)
@click.option("--workdir", default=None)
@click.option("--clock", "clock_mode", type=click.Choice(["virtual", "wall"]), default=None)
def core_up(config_path, ip_pool, gtp_port, webhook_port, dns_port, control_port, workdir, clock_mode):
    """Run the core stack in the foreground until stopped."""
    try:
        config = load_config(
            config_path or os.environ.get("EDGE_CONFIG"),
            ip_pool=ip_pool,
            gtp_port=gtp_port,
            webhook_port=webhook_port,
            dns_port=dns_port,
            control_port=control_port,
            workdir=workdir,
            clock_mode=clock_mode,
        )
        stack = EdgeStack(config).start()
    except (PortInUse, StackError, OSError) as exc:
        raise click.ClickException(str(exc))

    click.echo(f"core up: control={stack.control_port} gtp={stack.gtp_endpoint.port} "
               f"webhook={stack.webhook.port} dns={stack.dns.port if stack.dns else '-'}")
    signal.signal(signal.SIGTERM, lambda *_: stack.close())
    try:
        stack.wait()
    except KeyboardInterrupt:
        stack.close()
    click.echo("core down")


@core.command("down")
@click.option("--control-port", type=int, default=None)
def core_down(control_port):
    _fail_if_error(_request(control_port, {"cmd": "shutdown"}))
    click.echo("shutdown requested")


@core.command("status")
@click.option("--control-port", type=int, default=None)
def core_status(control_port):
    reply = _fail_if_error(_request(control_port, {"cmd": "status"}))
    click.echo("sessions:")
    click.echo(reply["sessions"] or "  (none)")
    click.echo("services:")
    click.echo(reply["services"] or "  (none)")


# -- ue ----------------------------------------------------------------------


@main.group()
def ue():
    """Attach, detach, and list emulated UEs."""


@ue.command("attach")
@click.argument("subscriber_id")
@click.option("--control-port", type=int, default=None)
def ue_attach(subscriber_id, control_port):
    reply = _fail_if_error(
        _request(control_port, {"cmd": "attach", "subscriber_id": subscriber_id})
    )
    click.echo(
        f"attached {subscriber_id} ue_ip={reply['ue_ip']} "
        f"uplink_teid={reply['uplink_teid']} downlink_teid={reply['downlink_teid']}"
    )


@ue.command("detach")
@click.argument("subscriber_id")
@click.option("--control-port", type=int, default=None)
def ue_detach(subscriber_id, control_port):
    reply = _fail_if_error(
        _request(control_port, {"cmd": "detach", "subscriber_id": subscriber_id})
    )
    click.echo(f"detached {subscriber_id} released_ip={reply['released_ip']}")


@ue.command("list")
@click.option("--control-port", type=int, default=None)
def ue_list(control_port):
    reply = _fail_if_error(_request(control_port, {"cmd": "ue_list"}))
    click.echo(reply["sessions"] or "(no sessions)")


# -- app -----------------------------------------------------------------------


@main.group()
def app():
    """Push and inspect edge applications."""


@app.command("push")
@click.argument("directory", type=click.Path(exists=True, file_okay=False))
@click.option("--repo-id", default=None, help="defaults to the directory name")
@click.option("--control-port", type=int, default=None)
def app_push(directory, repo_id, control_port):
    repo_id = repo_id or Path(directory).resolve().name
    reply = _request(
        control_port,
        {"cmd": "push", "repo_id": repo_id, "snapshot_path": str(Path(directory).resolve())},
    )
    for event in reply.get("events", []):
        click.echo(f"stage {event['stage']}: {event['outcome']} {event['detail']}".rstrip())
    if reply.get("artifact_id"):
        click.echo(f"artifact {reply['artifact_id']}")
    if not reply.get("ok"):
        raise click.ClickException(f"pipeline {reply.get('status', 'FAILED')}")
    click.echo(reply["address"])


@app.command("status")
@click.argument("name")
@click.option("--control-port", type=int, default=None)
def app_status(name, control_port):
    reply = _fail_if_error(_request(control_port, {"cmd": "app_status", "name": name}))
    click.echo(
        f"{reply['app']} version={reply['version']} status={reply['status']} "
        f"replicas={reply['replicas']} endpoints={','.join(reply['endpoints'])}"
    )


# -- bench ----------------------------------------------------------------------


@main.command("bench")
@click.argument("scenario", type=click.Choice([*bench_mod.SCENARIOS, "all"]))
@click.option("--seed", type=int, default=0)
@click.option("--profile", "profile_path", type=click.Path(exists=True), default=None,
              help="link profile file (defaults to the calibrated profile)")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="bench-out")
@click.option("--mode", type=click.Choice(["virtual", "wall"]), default="virtual")
@click.option("--target", default=None, help="host:port for wall-clock mode")
@click.option("--plot", is_flag=True, help="also render a latency scatter plot")
def bench(scenario, seed, profile_path, out_dir, mode, target, plot):
    """Run benchmark scenario(s) and write report + series CSV files."""
    names = list(bench_mod.SCENARIOS) if scenario == "all" else [scenario]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for name in names:
        spec = bench_mod.SCENARIOS[name]
        if mode == "virtual":
            if profile_path:
                profile = replace(load_profile(profile_path), seed=seed)
            else:
                profile = bench_mod.scenario_profile(name, seed=seed)
            samples = bench_mod.run_scenario_virtual(spec, profile)
        else:
            if not target:
                raise click.UsageError("--target host:port is required in wall mode")
            host, _, port = target.partition(":")
            samples = bench_mod.run_scenario_wall(spec, host, int(port))
        try:
            report = bench_mod.compute_report(samples, spec)
        except bench_mod.AllFailed as exc:
            raise click.ClickException(f"{name}: {exc}")
        csv_path = out / f"{name}.csv"
        bench_mod.emit_series(
            samples, str(csv_path), str(out / f"{name}.png") if plot else None
        )
        bench_mod.write_report(report, str(out / f"{name}.report"))
        rows.append(report)
        click.echo(f"{name}: wrote {csv_path}")

    click.echo(f"{'scenario':<10} {'mean':>12} {'p99':>12} {'throughput':>14}")
    for r in rows:
        click.echo(
            f"{r.scenario:<10} {r.mean_latency_ms:>10.1f}ms {r.p99_latency_ms:>10.1f}ms "
            f"{r.throughput_bps / 1e6:>11.2f}MB/s"
        )


if __name__ == "__main__":
    main()
