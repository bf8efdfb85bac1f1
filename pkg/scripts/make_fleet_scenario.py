#!/usr/bin/env python3
"""Regenerate scenarios/fleet31_60d.toml.

31 nodes over 60 days with a mixed fault schedule: tmp leaks and
wifi-ramp-into-AP-outage pairs imprint telemetry in the hour before the
downtime they cause; a few power failures do not (they are the unpredictable
remainder). The node cache is deliberately small so connectivity faults
produce real data loss inside the horizon. Deterministic: fixed generator
seed, stable ordering.
"""

from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent.parent / "scenarios" / "fleet31_60d.toml"

NODES = 31
HORIZON_DAYS = 60
SEED = 1337
POWER_NODES = {7, 17, 27}  # 1-based node numbers with one power failure each

HEADER = f'''# 31-node, 60-day fleet with mixed faults; regenerate via
# scripts/make_fleet_scenario.py (do not edit by hand).

[scenario]
name = "fleet31-60d"
start = "2026-01-01T00:00:00Z"
horizon_days = {HORIZON_DAYS}
seed = {SEED}

[fleet]
nodes = {NODES}

[node]
# Small data partition so multi-hour connectivity loss overruns the cache
# inside the horizon (the deletion policy then costs real yield).
cache_capacity_bytes = 48_000_000

[store]
fidelity = "index"

[[alerts]]
metric = "ram_usage_pct"
comparator = ">"
threshold = 25.0
sustain_s = 600
'''


def fault_block(kind, target, onset_h, duration_h, params=None):
    lines = [
        "",
        "[[faults]]",
        f'kind = "{kind}"',
        f'target = "{target}"',
        f"onset_h = {onset_h:.2f}",
        f"duration_h = {duration_h:.2f}",
    ]
    if params:
        lines.append("[faults.params]")
        for key, value in params.items():
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def main():
    rng = np.random.default_rng(20260101)
    blocks = []
    horizon_h = HORIZON_DAYS * 24
    for i in range(1, NODES + 1):
        node = f"N{i:02d}"
        n_events = int(rng.integers(2, 5))  # 2..4 fault events per node
        # spread events with >= ~130 h clearance for stable flanks
        base = 120.0 + rng.uniform(0, 60)
        spacing = (horizon_h - base - 160.0) / max(n_events, 1)
        kinds = []
        for k in range(n_events):
            if i in POWER_NODES and k == n_events - 1:
                kinds.append("power")
            else:
                kinds.append("tmp" if (i + k) % 2 == 0 else "wifi")
        for k, kind in enumerate(kinds):
            onset = base + k * spacing + rng.uniform(0, 24)
            if kind == "tmp":
                rate = float(rng.uniform(3.5, 5.0))  # fill in 20-29 h
                fill_h = (100.0 - 0.1) / rate
                duration = fill_h + rng.uniform(9, 14)  # 9-14 h of downtime
                blocks.append(fault_block(
                    "tmp_leak", node, onset, duration,
                    {"rate_pct_per_h": round(rate, 3)},
                ))
            elif kind == "wifi":
                ramp_h = 2.0
                outage_h = float(rng.uniform(16, 22))
                blocks.append(fault_block(
                    "wifi_degradation", node, onset, ramp_h + outage_h + 2.0,
                    {"quality_drop_pct": 85.0, "strength_drop_pct": 55.0,
                     "ramp_h": ramp_h},
                ))
                blocks.append(fault_block("ap_outage", node, onset + ramp_h, outage_h))
            else:
                blocks.append(fault_block(
                    "power_failure", node, onset, float(rng.uniform(9, 12))
                ))
    OUT.write_text(HEADER + "".join(blocks))
    print(f"wrote {OUT} ({len(blocks)} fault entries)")


if __name__ == "__main__":
    main()
