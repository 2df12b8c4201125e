"""Importance refinement on top of a token clustering.

Two passes over the per-token importance vector phi (initialized from
connectivity): centroid denoising attenuates tokens whose attention
footprint disagrees with their cluster's mean footprint, and neighborhood
expansion promotes strong neighbors of central tokens so near-anchor tokens
are not starved by a hard cluster boundary. Denoising never increases any
entry; expansion never decreases one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import EmptyCluster, LengthMismatch
from .graph import TokenGraph, degrees
from .partition import Clustering
from .rounding import ceil_count


@dataclass(frozen=True)
class RefineParams:
    tau_centroid: float = 0.75   # cosine-to-centroid below this attenuates
    alpha: float = 0.6           # attenuation factor
    central_q: float = 0.15      # fraction of nodes treated as central
    r_neighbors: int = 4         # neighbors inspected per central node
    lambda_sim: float = 0.5      # promotion score: similarity coefficient
    lambda_imp: float = 0.5      # promotion score: importance coefficient
    tau_neighbor: float = 0.65   # promotion threshold

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau_centroid <= 1.0:
            raise ValueError(f"tau_centroid must be in [0, 1], got {self.tau_centroid}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 < self.central_q <= 1.0:
            raise ValueError(f"central_q must be in (0, 1], got {self.central_q}")
        if self.r_neighbors < 0:
            raise ValueError(f"r_neighbors must be >= 0, got {self.r_neighbors}")
        if self.lambda_sim < 0 or self.lambda_imp < 0:
            raise ValueError("lambda_sim and lambda_imp must be >= 0")


def centroid(calibrated: np.ndarray, members: Iterable[int]) -> np.ndarray:
    """Mean calibrated attention row over the member tokens."""
    cal = np.asarray(calibrated, dtype=np.float64)
    idx = np.asarray(sorted(set(int(m) for m in members)), dtype=np.intp)
    if idx.size == 0:
        raise EmptyCluster("centroid of an empty member set")
    if idx[0] < 0 or idx[-1] >= cal.shape[0]:
        raise LengthMismatch(f"member indices outside [0, {cal.shape[0] - 1}]")
    return cal[idx].mean(axis=0)


def _cosine_to(rows: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Cosine of each row against ``ref``; zero-norm on either side gives 0."""
    row_norms = np.linalg.norm(rows, axis=1)
    ref_norm = np.linalg.norm(ref)
    if ref_norm == 0.0:
        return np.zeros(rows.shape[0])
    dots = rows @ ref
    out = np.zeros(rows.shape[0])
    ok = row_norms > 0.0
    out[ok] = dots[ok] / (row_norms[ok] * ref_norm)
    return out


def denoise(
    calibrated: np.ndarray,
    clustering: Clustering,
    phi: np.ndarray,
    params: RefineParams = RefineParams(),
) -> np.ndarray:
    """Attenuate tokens that sit far from their cluster centroid.

    phi'[t] = phi[t] when cos(row_t, centroid) >= tau_centroid, else
    alpha * phi[t]. Returns a new vector; never increases any entry.
    """
    cal = np.asarray(calibrated, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    n = clustering.assignment.shape[0]
    if cal.shape[0] != n or phi.shape[0] != n:
        raise LengthMismatch(
            f"calibrated rows {cal.shape[0]}, phi {phi.shape[0]}, clustering {n}"
        )
    out = phi.copy()
    for k in range(clustering.num_clusters):
        idx = clustering.members(k)
        c = cal[idx].mean(axis=0)
        cos = _cosine_to(cal[idx], c)
        low = cos < params.tau_centroid
        out[idx[low]] *= params.alpha
    return out


def expand(
    graph: TokenGraph,
    calibrated: np.ndarray,
    phi: np.ndarray,
    params: RefineParams = RefineParams(),
    central_by: str = "degree",
) -> np.ndarray:
    """Promote strong neighbors of central tokens.

    Central tokens are the top ``central_q`` fraction (at least one) by
    weighted degree, or by phi when ``central_by='phi'``. For each central
    token t, its ``r_neighbors`` heaviest graph neighbors t' are scored

        lambda_sim * cos(row_t', row_t) + lambda_imp * phi_hat[t']

    with phi_hat = phi / max(phi) (zeros when phi is all zero). A score
    strictly above ``tau_neighbor`` promotes t' to max(phi[t'], phi[t]).
    Scores and promotions both read the pre-expansion phi, so promotion
    does not chain within one call. Never decreases any entry.
    """
    cal = np.asarray(calibrated, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    n = graph.n
    if cal.shape[0] != n or phi.shape[0] != n:
        raise LengthMismatch(
            f"calibrated rows {cal.shape[0]}, phi {phi.shape[0]}, graph {n}"
        )
    if central_by not in ("degree", "phi"):
        raise ValueError(f"central_by must be 'degree' or 'phi', got {central_by!r}")
    if n == 0:
        return phi.copy()

    score_src = degrees(graph) if central_by == "degree" else phi
    n_central = max(1, ceil_count(params.central_q * n))
    order = np.lexsort((np.arange(n), -score_src))
    central = order[:n_central]

    phi_max = phi.max()
    phi_hat = phi / phi_max if phi_max > 0.0 else np.zeros(n)
    indptr, indices, weights = graph.csr()
    out = phi.copy()
    for t in sorted(int(c) for c in central):
        nbrs = indices[indptr[t]:indptr[t + 1]]
        wts = weights[indptr[t]:indptr[t + 1]]
        heaviest = np.lexsort((nbrs, -wts))[: params.r_neighbors]
        for t2 in nbrs[heaviest]:
            t2 = int(t2)
            sim = _cosine_to(cal[t2][None, :], cal[t])[0]
            score = params.lambda_sim * sim + params.lambda_imp * phi_hat[t2]
            if score > params.tau_neighbor:
                out[t2] = max(out[t2], phi[t])
    return out
