"""Cluster weights, group-relative advantages, and surrogate objectives.

The credit rule is deliberately simple: a cluster's weight is its share of
total refined importance, every token inherits its cluster's weight, and
the token-level advantage is that weight times the sequence advantage.
Weighting ablations (uniform, random, reversed, hard top-p) live here too
so trainers can swap them in behind one interface.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    BadFraction,
    GroupTooSmall,
    KMismatch,
    LengthMismatch,
    NonPositiveRatio,
)
from .partition import Clustering
from .rounding import ceil_count

STD_FLOOR = 1e-8

WEIGHT_MODES = ("at_rl", "uniform", "random", "reverse", "hard_top_p")


@dataclass(frozen=True)
class SurrogateParams:
    eps_low: float = 0.2
    eps_high: float = 0.2
    beta: float = 0.02

    def __post_init__(self) -> None:
        if not 0.0 < self.eps_low < 1.0:
            raise ValueError(f"eps_low must be in (0, 1), got {self.eps_low}")
        if self.eps_high <= 0.0:
            raise ValueError(f"eps_high must be > 0, got {self.eps_high}")
        if self.beta < 0.0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")


@dataclass
class AdvantageSignal:
    """Sequence-level advantage plus its token-level modulation."""

    seq_adv: float
    token_adv: np.ndarray
    mode: str = "at_rl"

    def __post_init__(self) -> None:
        self.token_adv = np.asarray(self.token_adv, dtype=np.float64)
        if self.mode not in WEIGHT_MODES:
            raise ValueError(f"unknown weighting mode {self.mode!r}")


def cluster_weights(phi: np.ndarray, clustering: Clustering) -> np.ndarray:
    """Share of total importance held by each cluster.

    w[k] = sum of phi over members of k divided by the total. An all-zero
    phi falls back to cluster size over token count, which keeps the
    weights a proper distribution.
    """
    phi = np.asarray(phi, dtype=np.float64)
    n = clustering.assignment.shape[0]
    if phi.shape[0] != n:
        raise LengthMismatch(f"phi length {phi.shape[0]} != clustering size {n}")
    if (phi < 0).any():
        raise ValueError("phi entries must be >= 0")
    per_cluster = np.bincount(
        clustering.assignment, weights=phi, minlength=clustering.num_clusters
    )
    total = phi.sum()
    if total == 0.0:
        counts = np.bincount(clustering.assignment, minlength=clustering.num_clusters)
        return counts / n
    return per_cluster / total


def group_advantage(rewards: Sequence[float]) -> np.ndarray:
    """Z-score rewards within a rollout group (population std).

    A group whose rewards are (numerically) constant carries no signal and
    gets all-zero advantages rather than a divide-by-almost-zero blowup.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.shape[0] < 2:
        raise GroupTooSmall(f"need >= 2 rewards, got shape {r.shape}")
    std = r.std()
    if std < STD_FLOOR:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def modulate(
    seq_adv: float, weights: np.ndarray, clustering: Clustering
) -> AdvantageSignal:
    """token_adv[t] = weights[cluster(t)] * seq_adv."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape[0] != clustering.num_clusters:
        raise KMismatch(
            f"{w.shape[0]} weights for K={clustering.num_clusters} clusters"
        )
    token_adv = w[clustering.assignment] * seq_adv
    return AdvantageSignal(seq_adv=float(seq_adv), token_adv=token_adv, mode="at_rl")


def hard_top_p_mask(connectivity: np.ndarray, p: float) -> np.ndarray:
    """0/1 mask keeping the ceil(p * T) most connected tokens.

    Ties at the cutoff resolve toward the lower token index.
    """
    if not 0.0 < p <= 1.0:
        raise BadFraction(f"p must be in (0, 1], got {p}")
    c = np.asarray(connectivity, dtype=np.float64)
    t = c.shape[0]
    if t == 0:
        raise LengthMismatch("connectivity vector is empty")
    keep = min(t, max(1, ceil_count(p * t)))
    order = np.lexsort((np.arange(t), -c))
    mask = np.zeros(t, dtype=np.float64)
    mask[order[:keep]] = 1.0
    return mask


def ablation_weights(
    connectivity: np.ndarray,
    mode: str,
    p: float = 0.15,
    seed: int = 0,
    clustering: Clustering | None = None,
) -> np.ndarray:
    """Per-token weight vector for a weighting ablation.

    uniform: all ones. random: i.i.d. uniform(0,1) from ``seed``.
    reverse: the cluster-weight rule applied to max(C) - C, which needs the
    ``clustering`` argument. hard_top_p: binary mask from
    :func:`hard_top_p_mask`.
    """
    c = np.asarray(connectivity, dtype=np.float64)
    t = c.shape[0]
    if t == 0:
        raise LengthMismatch("connectivity vector is empty")
    if mode == "uniform":
        return np.ones(t)
    if mode == "random":
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0x5EED]))
        return rng.uniform(0.0, 1.0, size=t)
    if mode == "reverse":
        if clustering is None:
            raise ValueError("reverse mode needs the clustering")
        reflected = c.max() - c
        w = cluster_weights(reflected, clustering)
        return w[clustering.assignment]
    if mode == "hard_top_p":
        return hard_top_p_mask(c, p)
    raise ValueError(f"unknown ablation mode {mode!r}")


def clipped_term(ratio: float, adv: float, params: SurrogateParams = SurrogateParams()) -> float:
    """min(ratio * adv, clip(ratio, 1 - eps_low, 1 + eps_high) * adv)."""
    if ratio <= 0.0:
        raise NonPositiveRatio(f"ratio must be > 0, got {ratio}")
    clipped = min(max(ratio, 1.0 - params.eps_low), 1.0 + params.eps_high)
    return min(ratio * adv, clipped * adv)


def _clipped_terms(
    ratios: np.ndarray, adv: np.ndarray, params: SurrogateParams
) -> np.ndarray:
    if (ratios <= 0.0).any():
        raise NonPositiveRatio("all ratios must be > 0")
    clipped = np.clip(ratios, 1.0 - params.eps_low, 1.0 + params.eps_high)
    return np.minimum(ratios * adv, clipped * adv)


def atrl_objective(
    log_probs_new: Sequence[np.ndarray],
    log_probs_old: Sequence[np.ndarray],
    advantages: Sequence[AdvantageSignal],
    kl_per_token: Sequence[np.ndarray] | None = None,
    params: SurrogateParams = SurrogateParams(),
) -> float:
    """Group-mean of per-token-mean clipped surrogate, minus a KL penalty.

    Sequences may have different lengths; each contributes the mean of its
    token terms. The KL penalty is beta times the same nested mean of the
    supplied per-token KL values (ignored when beta is 0 or no KL given).
    """
    g = len(log_probs_new)
    if g == 0 or len(log_probs_old) != g or len(advantages) != g:
        raise LengthMismatch("need equally many new/old log-prob vectors and advantages")
    if kl_per_token is not None and len(kl_per_token) != g:
        raise LengthMismatch("kl_per_token group size mismatch")
    surr = 0.0
    for i in range(g):
        lpn = np.asarray(log_probs_new[i], dtype=np.float64)
        lpo = np.asarray(log_probs_old[i], dtype=np.float64)
        adv = advantages[i].token_adv
        if lpn.shape != lpo.shape or lpn.shape != adv.shape:
            raise LengthMismatch(f"sequence {i}: token vector lengths disagree")
        if lpn.size == 0:
            continue
        ratios = np.exp(lpn - lpo)
        surr += _clipped_terms(ratios, adv, params).mean()
    obj = surr / g
    if params.beta > 0.0 and kl_per_token is not None:
        pen = 0.0
        for i in range(g):
            kl = np.asarray(kl_per_token[i], dtype=np.float64)
            pen += kl.mean() if kl.size else 0.0
        obj -= params.beta * pen / g
    return float(obj)


def atrl_objective_grad_logp(
    log_probs_new: Sequence[np.ndarray],
    log_probs_old: Sequence[np.ndarray],
    advantages: Sequence[AdvantageSignal],
    params: SurrogateParams = SurrogateParams(),
) -> list[np.ndarray]:
    """d(objective)/d(log_probs_new), per token.

    The KL input is a constant with respect to the new log-probs here, so
    only the surrogate contributes. Where the clipped branch is active the
    gradient is zero; elsewhere it is ratio * adv scaled by the two means.
    """
    g = len(log_probs_new)
    grads: list[np.ndarray] = []
    for i in range(g):
        lpn = np.asarray(log_probs_new[i], dtype=np.float64)
        lpo = np.asarray(log_probs_old[i], dtype=np.float64)
        adv = advantages[i].token_adv
        if lpn.size == 0:
            grads.append(np.zeros(0))
            continue
        ratios = np.exp(lpn - lpo)
        if (ratios <= 0.0).any():
            raise NonPositiveRatio("all ratios must be > 0")
        clipped = np.clip(ratios, 1.0 - params.eps_low, 1.0 + params.eps_high)
        active = ratios * adv <= clipped * adv
        grad = np.where(active, ratios * adv, 0.0) / (lpn.size * g)
        grads.append(grad)
    return grads


def reinforce_objective(
    log_probs_new: Sequence[np.ndarray],
    advantages: Sequence[AdvantageSignal],
) -> float:
    """Plain policy-gradient surrogate: group mean of per-sequence sums."""
    g = len(log_probs_new)
    if g == 0 or len(advantages) != g:
        raise LengthMismatch("need equally many log-prob vectors and advantages")
    total = 0.0
    for i in range(g):
        lpn = np.asarray(log_probs_new[i], dtype=np.float64)
        adv = advantages[i].token_adv
        if lpn.shape != adv.shape:
            raise LengthMismatch(f"sequence {i}: token vector lengths disagree")
        total += float((adv * lpn).sum())
    return total / g
