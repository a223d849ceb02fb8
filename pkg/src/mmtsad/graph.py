"""Series embeddings and the three learned adjacency structures.

Each series carries a trainable embedding vector. Cosine similarity between
embeddings ranks candidate neighbors; three directed binary adjacencies are
built from the ranking: a global TopK graph, plus intra-modal and
inter-modal graphs restricted to same/different modality candidates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "GraphTopology",
    "init_embeddings",
    "cosine_similarity",
    "top_k_select",
    "build_adjacency",
    "build_modal_adjacency",
    "rebuild_topology",
    "export_edges",
]


@dataclass(frozen=True)
class GraphTopology:
    """Directed binary adjacency structures derived from embeddings."""

    A: np.ndarray          # (N, N) bool, global TopK graph (self-loops kept)
    A_intra: np.ndarray    # (N, N) bool, same-modality edges
    A_inter: np.ndarray    # (N, N) bool, cross-modality edges
    K: int

    def __post_init__(self) -> None:
        n = self.A.shape[0]
        for name in ("A", "A_intra", "A_inter"):
            a = getattr(self, name)
            if a.shape != (n, n) or a.dtype != np.bool_:
                raise ValueError(f"{name} must be an (N, N) bool matrix")
        if (self.A_intra & self.A_inter).any():
            raise ValueError("intra and inter relations must be disjoint")


def init_embeddings(n_series: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform init in [-1/sqrt(d), 1/sqrt(d)]; zero rows are redrawn."""
    bound = 1.0 / np.sqrt(dim)
    v = rng.uniform(-bound, bound, size=(n_series, dim))
    while (np.linalg.norm(v, axis=1) == 0.0).any():  # pragma: no cover
        bad = np.linalg.norm(v, axis=1) == 0.0
        v[bad] = rng.uniform(-bound, bound, size=(int(bad.sum()), dim))
    return v


def cosine_similarity(v: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of embedding rows.

    Returns a symmetric (N, N) matrix with unit diagonal and entries in
    [-1, 1]. Zero rows are rejected.
    """
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=1)
    if (norms == 0.0).any():
        raise ValueError("cosine similarity undefined for zero embedding rows")
    e = (v @ v.T) / np.outer(norms, norms)
    e = (e + e.T) / 2.0
    np.clip(e, -1.0, 1.0, out=e)
    np.fill_diagonal(e, 1.0)
    return e


def top_k_select(sim_row: np.ndarray, candidates: np.ndarray, k: int, self_idx: int) -> np.ndarray:
    """Pick the K most similar candidates for one node.

    Ordering rule: the node itself (when a candidate) wins first, then
    candidates sort by similarity descending with ties broken by ascending
    index. Returns selected indices.
    """
    if candidates.size <= k:
        return candidates
    is_self = (candidates == self_idx).astype(np.int64)
    order = np.lexsort((candidates, -sim_row[candidates], -is_self))
    return candidates[order[:k]]


def build_adjacency(v: np.ndarray, k: int) -> np.ndarray:
    """Global TopK graph over all N candidates (self included, so A_ii = 1)."""
    n = v.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= K <= N, got K={k}, N={n}")
    sim = cosine_similarity(v)
    a = np.zeros((n, n), dtype=bool)
    all_idx = np.arange(n)
    for i in range(n):
        a[i, top_k_select(sim[i], all_idx, k, i)] = True
    return a


def build_modal_adjacency(
    v: np.ndarray, modality: tuple[int, ...] | list[int], k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Intra-modal and inter-modal adjacencies with per-row TopK truncation.

    The intra candidate set of node i holds every node of i's modality
    (including i); the inter set holds every node of a different modality.
    Candidate sets larger than K are reduced to the K most similar members.
    """
    n = v.shape[0]
    if len(modality) != n:
        raise ValueError("modality list inconsistent with embedding rows")
    sim = cosine_similarity(v)
    mod = np.asarray(modality)
    a_intra = np.zeros((n, n), dtype=bool)
    a_inter = np.zeros((n, n), dtype=bool)
    for i in range(n):
        same = np.flatnonzero(mod == mod[i])
        diff = np.flatnonzero(mod != mod[i])
        a_intra[i, top_k_select(sim[i], same, k, i)] = True
        if diff.size:
            a_inter[i, top_k_select(sim[i], diff, k, i)] = True
    return a_intra, a_inter


def rebuild_topology(v: np.ndarray, modality: tuple[int, ...], k: int) -> GraphTopology:
    """Recompute all three adjacencies from the current embeddings.

    Called once per training epoch and once before inference; K is clamped
    to N for the global graph.
    """
    n = v.shape[0]
    k_eff = min(k, n)
    a = build_adjacency(v, k_eff)
    a_intra, a_inter = build_modal_adjacency(v, modality, k_eff)
    return GraphTopology(A=a, A_intra=a_intra, A_inter=a_inter, K=k_eff)


def export_edges(
    path: str | Path,
    v: np.ndarray,
    topology: GraphTopology,
    names: tuple[str, ...],
    header_comment: str = "",
) -> int:
    """Write the topology as `src,dst,relation,similarity` rows; returns count."""
    sim = cosine_similarity(v)
    written = 0
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "relation", "similarity"])
        for relation, a in (
            ("topk", topology.A),
            ("intra", topology.A_intra),
            ("inter", topology.A_inter),
        ):
            for i, j in zip(*np.nonzero(a)):
                writer.writerow([names[i], names[j], relation, repr(float(sim[i, j]))])
                written += 1
    return written
