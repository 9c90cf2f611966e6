"""Print the latency/throughput summary table on the virtual clock.

Runs the four standard scenarios (250 requests over 5 seconds, in chunks of
50 per second) against the calibrated radio link profile, plus the WiFi
baseline, and prints the summary table. Deterministic for a given seed."""

import argparse

from edgestack.bench import (
    SCENARIOS,
    compute_report,
    run_scenario_virtual,
    scenario_profile,
)


def fmt_latency(ms: float) -> str:
    return f"{ms:.1f}ms" if ms < 1000 else f"{ms / 1000:.1f}s"


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print(f"{'scenario':<10} {'mean':>10} {'p99':>10} {'throughput':>12} {'ok':>5}")
    for name, scenario in SCENARIOS.items():
        profile = scenario_profile(name, seed=args.seed)
        samples = run_scenario_virtual(scenario, profile)
        report = compute_report(samples, scenario)
        print(
            f"{name:<10} {fmt_latency(report.mean_latency_ms):>10} "
            f"{fmt_latency(report.p99_latency_ms):>10} "
            f"{report.throughput_bps / 1e6:>10.2f}MB/s {report.success_count:>5}"
        )
    print("\nfirst-request effect (empty scenario, sample 0 pays the setup cost):")
    samples = run_scenario_virtual(SCENARIOS["empty"], scenario_profile("empty", args.seed))
    report = compute_report(samples, SCENARIOS["empty"])
    print(f"  sample 0: {samples[0].latency_ms:.1f}ms  vs run mean {report.mean_latency_ms:.1f}ms")


if __name__ == "__main__":
    main()
