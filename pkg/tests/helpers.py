"""Shared builders for randomized test inputs."""

from __future__ import annotations

import numpy as np

from atrl.graph import TokenGraph
from atrl.partition import Clustering
from atrl.tensor_io import AttentionTensor, TokenMeta


def random_attention(
    rng: np.random.Generator,
    layers: int = 2,
    heads: int = 2,
    gen_len: int = 6,
    ctx_len: int = 10,
    row_stochastic: bool = True,
) -> AttentionTensor:
    """Random nonnegative tensor, rows normalized when claimed stochastic."""
    vals = rng.random((layers, heads, gen_len, ctx_len)).astype(np.float32)
    if row_stochastic:
        vals = vals / vals.sum(axis=3, keepdims=True, dtype=np.float64)
        vals = vals.astype(np.float32)
    return AttentionTensor(values=vals, row_stochastic=row_stochastic)


def visual_meta(visual: int, gen_len: int) -> TokenMeta:
    return TokenMeta(ctx_modality="v" * visual + "l" * gen_len)


def random_graph(
    rng: np.random.Generator, n: int, density: float = 0.2
) -> TokenGraph:
    """Random undirected weighted graph with roughly ``density`` edge rate."""
    triples = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < density:
                triples.append((i, j, float(rng.uniform(0.05, 1.0))))
    return TokenGraph.from_triples(n, triples, tau_sim=0.0)


def random_clustering(rng: np.random.Generator, n: int, k: int) -> Clustering:
    """Random assignment with every cluster nonempty (requires k <= n)."""
    assignment = np.concatenate([
        np.arange(k), rng.integers(0, k, size=n - k)
    ])
    rng.shuffle(assignment)
    from atrl.partition import edge_cut  # local to avoid cycles in helpers

    empty = TokenGraph.from_triples(n, [], tau_sim=0.0)
    counts = np.bincount(assignment, minlength=k)
    ideal = -(-n // k)
    return Clustering(
        assignment=assignment,
        num_clusters=k,
        edge_cut=edge_cut(empty, assignment),
        balance=float(counts.max() / ideal),
    )
