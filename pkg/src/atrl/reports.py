"""Plain-text report formats: credit tables, histograms, run summaries.

One shared shape for all of them: ``# key value`` metadata lines, a single
tab-separated header row, then data rows. Floats are printed with 9
significant digits so reports diff cleanly across platforms, and every
writer has a parser that accepts its own output (serialize of a parsed
report reproduces the bytes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AtrlError
from .pipeline import SequenceCredit, anchor_stats, connectivity_histogram


def fmt_g(x: float) -> str:
    return f"{float(x):.9g}"


@dataclass
class Report:
    """Parsed form of any tabular report file."""

    kind: str
    meta: dict[str, str]
    header: tuple[str, ...]
    rows: list[tuple[str, ...]]

    def column(self, name: str) -> np.ndarray:
        idx = self.header.index(name)
        return np.asarray([float(r[idx]) for r in self.rows], dtype=np.float64)

    def int_column(self, name: str) -> np.ndarray:
        idx = self.header.index(name)
        return np.asarray([int(r[idx]) for r in self.rows], dtype=np.intp)


def render(report: Report) -> str:
    lines = [f"# {report.kind}"]
    for key, val in report.meta.items():
        lines.append(f"# {key} {val}")
    lines.append("\t".join(report.header))
    for row in report.rows:
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def parse(text: str) -> Report:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# "):
        raise AtrlError("report must start with a '# <kind>' line")
    kind = lines[0][2:].strip()
    meta: dict[str, str] = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        body = lines[i][1:].strip()
        key, _, val = body.partition(" ")
        meta[key] = val.strip()
        i += 1
    if i >= len(lines):
        raise AtrlError("report has no header row")
    header = tuple(lines[i].split("\t"))
    rows = [tuple(ln.split("\t")) for ln in lines[i + 1:]]
    for r in rows:
        if len(r) != len(header):
            raise AtrlError(f"row width {len(r)} != header width {len(header)}")
    return Report(kind=kind, meta=meta, header=header, rows=rows)


def write(report: Report, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render(report))


def read(path: str, expect_kind: str | None = None) -> Report:
    with open(path, "r", encoding="utf-8") as fh:
        report = parse(fh.read())
    if expect_kind is not None and report.kind != expect_kind:
        raise AtrlError(f"expected {expect_kind!r} report, found {report.kind!r}")
    return report


# --- concrete report builders ----------------------------------------------

CREDIT_KIND = "atrl-credit v1"
CONNECTIVITY_KIND = "atrl-connectivity v1"
HISTOGRAM_KIND = "atrl-histogram v1"
PARTITION_KIND = "atrl-partition v1"
ABLATION_KIND = "atrl-ablation v1"
SWEEP_KIND = "atrl-sweep v1"


def connectivity_report(conn: np.ndarray) -> Report:
    conn = np.asarray(conn, dtype=np.float64)
    stats = anchor_stats(conn)
    meta = {
        "gen_len": str(conn.shape[0]),
        "anchor_threshold": fmt_g(stats["threshold"]),
        "anchor_count": str(stats["count"]),
        "anchor_fraction": fmt_g(stats["fraction"]),
    }
    rows = [(str(t), fmt_g(conn[t])) for t in range(conn.shape[0])]
    return Report(kind=CONNECTIVITY_KIND, meta=meta,
                  header=("token", "connectivity"), rows=rows)


def credit_report(result: SequenceCredit, seq_adv: float = 1.0) -> Report:
    """Per-token credit table with anchor statistics in the metadata."""
    stats = anchor_stats(result.connectivity)
    token_adv = result.token_weight * seq_adv
    meta = {
        "gen_len": str(result.connectivity.shape[0]),
        "ctx_len": str(result.calibrated.shape[1]),
        "clusters": str(result.clustering.num_clusters),
        "edge_cut": fmt_g(result.clustering.edge_cut),
        "balance": fmt_g(result.clustering.balance),
        "seq_adv": fmt_g(seq_adv),
        "anchor_threshold": fmt_g(stats["threshold"]),
        "anchor_count": str(stats["count"]),
        "anchor_fraction": fmt_g(stats["fraction"]),
    }
    header = ("token", "connectivity", "phi", "cluster", "cluster_weight",
              "token_advantage")
    rows = []
    assignment = result.clustering.assignment
    for t in range(result.connectivity.shape[0]):
        k = int(assignment[t])
        rows.append((
            str(t),
            fmt_g(result.connectivity[t]),
            fmt_g(result.phi[t]),
            str(k),
            fmt_g(result.weights[k]),
            fmt_g(token_adv[t]),
        ))
    return Report(kind=CREDIT_KIND, meta=meta, header=header, rows=rows)


def histogram_report(conn: np.ndarray, bins: int = 50) -> Report:
    edges, counts = connectivity_histogram(conn, bins=bins)
    meta = {"bins": str(bins), "values": str(int(np.asarray(conn).size))}
    rows = [
        (fmt_g(edges[i]), fmt_g(edges[i + 1]), str(int(counts[i])))
        for i in range(len(counts))
    ]
    return Report(kind=HISTOGRAM_KIND, meta=meta,
                  header=("lo", "hi", "count"), rows=rows)


def partition_report(clustering, n: int) -> Report:
    meta = {
        "n": str(n),
        "clusters": str(clustering.num_clusters),
        "edge_cut": fmt_g(clustering.edge_cut),
        "balance": fmt_g(clustering.balance),
    }
    rows = [(str(t), str(int(clustering.assignment[t]))) for t in range(n)]
    return Report(kind=PARTITION_KIND, meta=meta,
                  header=("token", "cluster"), rows=rows)
