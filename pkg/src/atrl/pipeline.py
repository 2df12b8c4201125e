"""End-to-end credit pipeline: tensor in, per-token weights out.

One flat config drives every stage so the CLI, the toy trainer, and tests
share a single code path. Stage wall-clock is accumulated into a plain
dict so callers can report overhead without wrapping anything.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np

from . import calib, credit, refine
from .errors import AtrlError, EmptyVisualSet
from .graph import TokenGraph, build_graph
from .partition import Clustering, cluster_count, partition as partition_graph
from .tensor_io import AttentionTensor, TokenMeta

ANCHOR_FRACTION = 0.15
HISTOGRAM_BINS = 50

STAGE_NAMES = ("calib", "graph", "partition", "refine", "credit")


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the credit pipeline, flat for key=value round-trips."""

    top_layers: int = 4
    lambda_exp: float = 0.15
    gamma: float = 4.0
    lambda_cos: float = 0.05
    bias_axis: str = "gen"
    tau_sim: float = 0.7
    k: int | None = None          # None -> cluster_count(T)
    eps_bal: float = 0.1
    tau_centroid: float = 0.75
    alpha: float = 0.6
    central_q: float = 0.15
    r_neighbors: int = 4
    lambda_sim: float = 0.5
    lambda_imp: float = 0.5
    tau_neighbor: float = 0.65
    central_by: str = "degree"
    eps_low: float = 0.2
    eps_high: float = 0.2
    beta: float = 0.02
    hard_p: float = 0.15
    seed: int = 0

    def bias_params(self) -> calib.BiasParams:
        return calib.BiasParams(
            lambda_exp=self.lambda_exp, gamma=self.gamma, lambda_cos=self.lambda_cos
        )

    def refine_params(self) -> refine.RefineParams:
        return refine.RefineParams(
            tau_centroid=self.tau_centroid,
            alpha=self.alpha,
            central_q=self.central_q,
            r_neighbors=self.r_neighbors,
            lambda_sim=self.lambda_sim,
            lambda_imp=self.lambda_imp,
            tau_neighbor=self.tau_neighbor,
        )

    def surrogate_params(self) -> credit.SurrogateParams:
        return credit.SurrogateParams(
            eps_low=self.eps_low, eps_high=self.eps_high, beta=self.beta
        )

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        return replace(self, **kwargs)


def config_field_names() -> tuple[str, ...]:
    return tuple(f.name for f in fields(PipelineConfig))


@dataclass
class SequenceCredit:
    """Everything the pipeline derived for one generated sequence."""

    connectivity: np.ndarray
    phi: np.ndarray
    clustering: Clustering
    weights: np.ndarray
    token_weight: np.ndarray
    graph: TokenGraph
    calibrated: np.ndarray
    timings: dict[str, float]


def _timed(timings: dict[str, float] | None, stage: str, fn: Callable):
    if timings is None:
        return fn()
    t0 = time.perf_counter()
    out = fn()
    timings[stage] = timings.get(stage, 0.0) + (time.perf_counter() - t0)
    return out


def calibrate(
    tensor: AttentionTensor,
    config: PipelineConfig = PipelineConfig(),
    timings: dict[str, float] | None = None,
) -> np.ndarray:
    """Aggregate over the top layers and divide out the positional bias.

    ``top_layers`` is clamped to the tensor's depth so shallow traces (the
    toy policy has a single block) reuse the same default config.
    """
    def run():
        eff = min(config.top_layers, tensor.layers)
        agg = calib.aggregate(tensor, top_layers=eff)
        if config.bias_axis == "gen":
            curve = calib.bias_curve(tensor.gen_len, config.bias_params())
        else:
            curve = calib.bias_curve(tensor.ctx_len, config.bias_params())
        return calib.debias(agg, curve, axis=config.bias_axis)

    return _timed(timings, "calib", run)


def run_pipeline(
    tensor: AttentionTensor,
    meta: TokenMeta,
    config: PipelineConfig = PipelineConfig(),
    reverse: bool = False,
    timings: dict[str, float] | None = None,
) -> SequenceCredit:
    """Full credit pipeline for one sequence.

    ``reverse=True`` runs the identical machinery on reflected connectivity
    max(C) - C, the adversarial control used by the weighting ablations.
    """
    calibrated = calibrate(tensor, config, timings)
    if not meta.visual_index_set:
        raise EmptyVisualSet("sequence has no visual context columns")
    conn = _timed(
        timings, "calib",
        lambda: calib.connectivity(calibrated, meta.visual_index_set),
    )
    tg = _timed(
        timings, "graph",
        lambda: build_graph(calibrated, tau_sim=config.tau_sim),
    )
    k = config.k if config.k is not None else cluster_count(tensor.gen_len)
    clustering = _timed(
        timings, "partition",
        lambda: partition_graph(tg, k, eps_bal=config.eps_bal, seed=config.seed),
    )
    phi0 = conn.max() - conn if reverse else conn

    def refine_run():
        rp = config.refine_params()
        phi1 = refine.denoise(calibrated, clustering, phi0, rp)
        return refine.expand(tg, calibrated, phi1, rp, central_by=config.central_by)

    phi = _timed(timings, "refine", refine_run)

    def credit_run():
        w = credit.cluster_weights(phi, clustering)
        return w, w[clustering.assignment]

    weights, token_weight = _timed(timings, "credit", credit_run)
    return SequenceCredit(
        connectivity=conn,
        phi=phi,
        clustering=clustering,
        weights=weights,
        token_weight=token_weight,
        graph=tg,
        calibrated=calibrated,
        timings=timings if timings is not None else {},
    )


def connectivity_only(
    tensor: AttentionTensor,
    meta: TokenMeta,
    config: PipelineConfig = PipelineConfig(),
    timings: dict[str, float] | None = None,
) -> np.ndarray:
    """Just the calibrated visual connectivity, for cheap weighting modes."""
    calibrated = calibrate(tensor, config, timings)
    if not meta.visual_index_set:
        raise EmptyVisualSet("sequence has no visual context columns")
    return _timed(
        timings, "calib",
        lambda: calib.connectivity(calibrated, meta.visual_index_set),
    )


def mode_token_weights(
    tensor: AttentionTensor,
    meta: TokenMeta,
    config: PipelineConfig,
    mode: str,
    rng: np.random.Generator | None = None,
    timings: dict[str, float] | None = None,
    hard_p: float | None = None,
) -> np.ndarray:
    """Per-token weight vector under any weighting mode.

    Cheap modes skip the graph stages entirely: uniform needs nothing,
    random needs only a generator, hard_top_p needs just connectivity.
    """
    t = tensor.gen_len
    if mode == "uniform":
        return np.ones(t)
    if mode == "random":
        if rng is None:
            raise AtrlError("random mode needs a generator")
        return rng.uniform(0.0, 1.0, size=t)
    if mode == "hard_top_p":
        conn = connectivity_only(tensor, meta, config, timings)
        p = config.hard_p if hard_p is None else hard_p
        return _timed(timings, "credit", lambda: credit.hard_top_p_mask(conn, p))
    if mode in ("at_rl", "reverse"):
        res = run_pipeline(tensor, meta, config, reverse=(mode == "reverse"),
                           timings=timings)
        return res.token_weight
    raise AtrlError(f"unknown weighting mode {mode!r}")


def anchor_stats(conn: np.ndarray, fraction: float = ANCHOR_FRACTION) -> dict:
    """Tokens strictly above the (1 - fraction) connectivity percentile."""
    c = np.asarray(conn, dtype=np.float64)
    threshold = float(np.percentile(c, 100.0 * (1.0 - fraction)))
    count = int((c > threshold).sum())
    return {
        "threshold": threshold,
        "count": count,
        "total": int(c.size),
        "fraction": count / c.size,
    }


def connectivity_histogram(
    conn: np.ndarray, bins: int = HISTOGRAM_BINS
) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width histogram over [0, max(C)]; returns (edges, counts)."""
    c = np.asarray(conn, dtype=np.float64)
    hi = float(c.max()) if c.size and c.max() > 0.0 else 1.0
    edges = np.linspace(0.0, hi, bins + 1)
    counts, _ = np.histogram(c, bins=edges)
    return edges, counts
