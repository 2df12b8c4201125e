"""Pytest wiring: one summary line per acceptance criterion at session end."""

from __future__ import annotations

import re

CRITERIA = {
    1: "weight normalization over randomized pipelines",
    2: "K=1 collapse to uniform GRPO, bit-identical trajectories",
    3: "group advantage normalization statistics",
    4: "bias-curve mean-1 contract",
    5: "analytic vs finite-difference gradient fidelity",
    6: "partitioner quality vs brute force and random baselines",
    7: "shipped fixture: 81/540 anchors at the 85th percentile",
    8: "directional training claims across weighting modes",
    9: "KL-free (beta=0) parity with beta=0.02",
    10: "pipeline overhead on the 512x1024 profiling tensor",
    11: "format round-trip identity",
}

_PATTERN = re.compile(r"test_acceptance\.py::test_c(\d+)")


def pytest_terminal_summary(terminalreporter):
    outcomes: dict[int, str] = {}
    for status in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(status, []):
            m = _PATTERN.search(getattr(rep, "nodeid", ""))
            if m:
                outcomes[int(m.group(1))] = status.upper()
    if not outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(CRITERIA):
        status = outcomes.get(num, "NOT RUN")
        label = "PASS" if status == "PASSED" else (
            "FAIL" if status in ("FAILED", "ERROR") else status
        )
        terminalreporter.write_line(
            f"criterion {num:2d} ({CRITERIA[num]}): {label}"
        )
