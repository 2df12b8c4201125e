"""Token connectivity graph built from calibrated attention footprints.

Nodes are generated tokens; an undirected edge connects two tokens whose
calibrated attention rows have cosine similarity above a threshold. Edge
weights are the similarities themselves, so the graph is invariant to
per-row rescaling of the attention matrix.

Edges live in three parallel arrays (one pair per undirected edge, i < j)
because realistic graphs get dense: random softmax rows are all pairwise
similar, so a 512-token sequence already produces ~131k edges and tuple
lists become the bottleneck. A cached CSR view serves neighbor queries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfRange, LengthMismatch


def _row_normalize(calibrated: np.ndarray) -> np.ndarray:
    cal = np.asarray(calibrated, dtype=np.float64)
    if cal.ndim != 2:
        raise LengthMismatch(f"calibrated matrix must be 2-d, got {cal.ndim}-d")
    norms = np.linalg.norm(cal, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    return cal / safe[:, None]


def footprint_similarity(calibrated: np.ndarray, i: int, j: int) -> float:
    """Cosine similarity between the attention rows of tokens i and j.

    Zero-norm rows have no footprint and similarity 0 to everything.
    """
    cal = np.asarray(calibrated, dtype=np.float64)
    if cal.ndim != 2:
        raise LengthMismatch(f"calibrated matrix must be 2-d, got {cal.ndim}-d")
    n = cal.shape[0]
    if not (0 <= i < n and 0 <= j < n):
        raise IndexOutOfRange(f"token indices {i},{j} outside [0, {n - 1}]")
    ni = np.linalg.norm(cal[i])
    nj = np.linalg.norm(cal[j])
    if ni == 0.0 or nj == 0.0:
        return 0.0
    return float(np.dot(cal[i], cal[j]) / (ni * nj))


@dataclass(eq=False)
class TokenGraph:
    """Undirected weighted graph over generated tokens.

    ``edge_i``/``edge_j``/``edge_w`` hold one entry per edge with
    edge_i < edge_j; construction order is preserved (build_graph emits
    lexicographic order). ``tau_sim`` records the construction threshold;
    graphs parsed back from disk carry None there because the text format
    stores only topology.
    """

    n: int
    edge_i: np.ndarray
    edge_j: np.ndarray
    edge_w: np.ndarray
    tau_sim: float | None = None
    _degree: np.ndarray = field(init=False, repr=False)
    _csr: tuple[np.ndarray, np.ndarray, np.ndarray] | None = field(
        default=None, init=False, repr=False
    )

    def __post_init__(self) -> None:
        self.edge_i = np.asarray(self.edge_i, dtype=np.intp)
        self.edge_j = np.asarray(self.edge_j, dtype=np.intp)
        self.edge_w = np.asarray(self.edge_w, dtype=np.float64)
        if not (self.edge_i.shape == self.edge_j.shape == self.edge_w.shape):
            raise LengthMismatch("edge arrays must have identical length")
        if self.edge_i.size:
            bad = (self.edge_i < 0) | (self.edge_i >= self.edge_j) | \
                (self.edge_j >= self.n)
            if bad.any():
                k = int(np.nonzero(bad)[0][0])
                raise IndexOutOfRange(
                    f"edge ({int(self.edge_i[k])},{int(self.edge_j[k])}) "
                    f"invalid for n={self.n}"
                )
        deg = np.zeros(self.n, dtype=np.float64)
        np.add.at(deg, self.edge_i, self.edge_w)
        np.add.at(deg, self.edge_j, self.edge_w)
        self._degree = deg

    @classmethod
    def from_triples(
        cls,
        n: int,
        triples,
        tau_sim: float | None = None,
    ) -> "TokenGraph":
        """Build from an iterable of (i, j, w); order is preserved."""
        rows = list(triples)
        ei = np.asarray([t[0] for t in rows], dtype=np.intp)
        ej = np.asarray([t[1] for t in rows], dtype=np.intp)
        ew = np.asarray([t[2] for t in rows], dtype=np.float64)
        return cls(n=n, edge_i=ei, edge_j=ej, edge_w=ew, tau_sim=tau_sim)

    @property
    def num_edges(self) -> int:
        return int(self.edge_i.size)

    @property
    def edges(self) -> tuple[tuple[int, int, float], ...]:
        """Edges as python triples; convenient for tests, O(E) to build."""
        return tuple(
            (int(i), int(j), float(w))
            for i, j, w in zip(self.edge_i, self.edge_j, self.edge_w)
        )

    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(indptr, indices, weights) with both edge directions, cached.

        Neighbors of every node appear in ascending index order.
        """
        if self._csr is None:
            self._csr = csr_arrays(self.n, self.edge_i, self.edge_j, self.edge_w)
        return self._csr

    def adjacency(self) -> list[dict[int, float]]:
        """Neighbor map per node; handy for small graphs and oracles."""
        adj: list[dict[int, float]] = [dict() for _ in range(self.n)]
        for i, j, w in zip(self.edge_i, self.edge_j, self.edge_w):
            adj[int(i)][int(j)] = float(w)
            adj[int(j)][int(i)] = float(w)
        return adj


def csr_arrays(
    n: int, edge_i: np.ndarray, edge_j: np.ndarray, edge_w: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Symmetric CSR adjacency from one-direction edge arrays."""
    src = np.concatenate([edge_i, edge_j])
    dst = np.concatenate([edge_j, edge_i])
    wts = np.concatenate([edge_w, edge_w])
    order = np.lexsort((dst, src))
    src, dst, wts = src[order], dst[order], wts[order]
    counts = np.bincount(src, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.intp)
    np.cumsum(counts, out=indptr[1:])
    return indptr, dst, wts


def build_graph(calibrated: np.ndarray, tau_sim: float = 0.7) -> TokenGraph:
    """Threshold the pairwise cosine similarity of attention rows.

    Keeps edges with similarity strictly above ``tau_sim``. An isolated or
    even empty edge set is legal; downstream partitioning copes.
    """
    if not 0.0 <= tau_sim < 1.0:
        raise ValueError(f"tau_sim must be in [0, 1), got {tau_sim}")
    normed = _row_normalize(calibrated)
    n = normed.shape[0]
    sims = normed @ normed.T
    keep = sims > tau_sim
    keep[np.tril_indices(n)] = False
    ei, ej = np.nonzero(keep)
    return TokenGraph(n=n, edge_i=ei, edge_j=ej, edge_w=sims[ei, ej],
                      tau_sim=tau_sim)


def weighted_degree(graph: TokenGraph, t: int) -> float:
    """Sum of incident edge weights for node t."""
    if not 0 <= t < graph.n:
        raise IndexOutOfRange(f"node {t} outside [0, {graph.n - 1}]")
    return float(graph._degree[t])


def degrees(graph: TokenGraph) -> np.ndarray:
    """All weighted degrees as one vector (copy)."""
    return graph._degree.copy()


def save_graph(graph: TokenGraph, path: str) -> None:
    """Adjacency list text: node count, then one ``i j w`` line per edge."""
    lines = [str(graph.n)]
    for i, j, w in zip(graph.edge_i, graph.edge_j, graph.edge_w):
        lines.append(f"{i} {j} {w:.9g}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_graph(path: str) -> TokenGraph:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise LengthMismatch(f"{path!r}: empty graph file")
    n = int(lines[0])
    edges = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 3:
            raise LengthMismatch(f"{path!r}: bad edge line {ln!r}")
        edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
    return TokenGraph.from_triples(n, edges, tau_sim=None)
