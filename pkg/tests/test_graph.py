import numpy as np
import pytest

from mmtsad.graph import (
    GraphTopology,
    build_adjacency,
    build_modal_adjacency,
    cosine_similarity,
    export_edges,
    init_embeddings,
    rebuild_topology,
    top_k_select,
)


def brute_force_rows(v, candidates_of, k):
    """Independent TopK oracle: self first, then similarity desc, index asc."""
    sim = cosine_similarity(v)
    n = v.shape[0]
    rows = []
    for i in range(n):
        cand = candidates_of(i)
        ranked = sorted(cand, key=lambda j: (j != i, -sim[i, j], j))
        rows.append(set(ranked[: min(k, len(cand))]))
    return rows


# ---------------------------------------------------------------------------
# Cosine similarity
# ---------------------------------------------------------------------------


def test_cosine_identical_vectors():
    v = np.array([[1.0, 2.0], [1.0, 2.0]])
    e = cosine_similarity(v)
    assert e[0, 1] == pytest.approx(1.0)


def test_cosine_orthogonal():
    v = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert cosine_similarity(v)[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_cosine_known_value():
    # direct evaluation: (1,0).(1,1) / (1 * sqrt(2))
    v = np.array([[1.0, 0.0], [1.0, 1.0]])
    assert cosine_similarity(v)[0, 1] == pytest.approx(0.70711, abs=1e-5)


def test_cosine_matrix_properties():
    rng = np.random.default_rng(0)
    v = rng.standard_normal((12, 5))
    e = cosine_similarity(v)
    assert np.array_equal(e, e.T)
    assert np.allclose(np.diag(e), 1.0)
    assert (np.abs(e) <= 1.0 + 1e-12).all()


def test_cosine_rejects_zero_row():
    v = np.array([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        cosine_similarity(v)


# ---------------------------------------------------------------------------
# TopK adjacency
# ---------------------------------------------------------------------------


def test_adjacency_k_equals_n_complete():
    v = np.random.default_rng(1).standard_normal((5, 3))
    assert build_adjacency(v, 5).all()


def test_adjacency_hand_ranked_case():
    v = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
    a = build_adjacency(v, 2)
    assert set(np.flatnonzero(a[0])) == {0, 1}


def test_adjacency_self_loop_always_present():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(2, 12))
        v = rng.standard_normal((n, 4))
        k = int(rng.integers(1, n + 1))
        assert np.diag(build_adjacency(v, k)).all()


def test_adjacency_self_wins_even_under_duplicate_ties():
    # every row identical: similarities all exactly 1; the self edge still wins
    v = np.tile(np.array([[0.3, -0.7, 0.2]]), (6, 1))
    a = build_adjacency(v, 2)
    assert np.diag(a).all()


def test_adjacency_matches_brute_force_oracle():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = int(rng.integers(2, 16))
        v = rng.standard_normal((n, int(rng.integers(2, 6))))
        k = int(rng.integers(1, n + 1))
        a = build_adjacency(v, k)
        expected = brute_force_rows(v, lambda i: list(range(n)), k)
        for i in range(n):
            assert set(np.flatnonzero(a[i])) == expected[i]
            assert a[i].sum() == min(k, n)


def test_adjacency_rejects_bad_k():
    v = np.random.default_rng(0).standard_normal((4, 3))
    with pytest.raises(ValueError):
        build_adjacency(v, 0)
    with pytest.raises(ValueError):
        build_adjacency(v, 5)


# ---------------------------------------------------------------------------
# Modal adjacency
# ---------------------------------------------------------------------------


def test_modal_candidate_sets():
    v = np.random.default_rng(4).standard_normal((3, 4))
    a_intra, a_inter = build_modal_adjacency(v, [1, 1, 2], 3)
    assert set(np.flatnonzero(a_intra[0])) == {0, 1}
    assert set(np.flatnonzero(a_inter[0])) == {2}


def test_single_modality_empty_inter():
    v = np.random.default_rng(5).standard_normal((4, 3))
    _, a_inter = build_modal_adjacency(v, [1, 1, 1, 1], 2)
    assert not a_inter.any()


def test_modal_truncation_matches_oracle():
    rng = np.random.default_rng(6)
    v = rng.standard_normal((5, 4))
    mod = [1, 1, 1, 1, 1]
    a_intra, _ = build_modal_adjacency(v, mod, 3)
    expected = brute_force_rows(v, lambda i: [j for j in range(5)], 3)
    for i in range(5):
        assert a_intra[i].sum() == 3
        assert set(np.flatnonzero(a_intra[i])) == expected[i]


def test_modal_invariants_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(25):
        n = int(rng.integers(2, 51))
        m = int(rng.integers(1, min(5, n) + 1))
        mod = [(i % m) + 1 for i in range(n)]
        v = rng.standard_normal((n, 4))
        k = int(rng.integers(1, n + 1))
        a_intra, a_inter = build_modal_adjacency(v, mod, k)
        assert not (a_intra & a_inter).any()
        for i in range(n):
            assert a_intra[i].sum() <= k and a_inter[i].sum() <= k
            for j in np.flatnonzero(a_intra[i]):
                assert mod[i] == mod[j]
            for j in np.flatnonzero(a_inter[i]):
                assert mod[i] != mod[j]


# ---------------------------------------------------------------------------
# Topology rebuild and export
# ---------------------------------------------------------------------------


def test_rebuild_deterministic_and_tracks_v():
    rng = np.random.default_rng(8)
    v = rng.standard_normal((6, 4))
    mod = (1, 1, 2, 2, 3, 3)
    t1 = rebuild_topology(v, mod, 3)
    t2 = rebuild_topology(v, mod, 3)
    assert np.array_equal(t1.A, t2.A)
    v2 = v.copy()
    v2[0] = -v2[0]  # flip one embedding; rankings move
    t3 = rebuild_topology(v2, mod, 3)
    expected = brute_force_rows(v2, lambda i: list(range(6)), 3)
    for i in range(6):
        assert set(np.flatnonzero(t3.A[i])) == expected[i]


def test_rebuild_complete_graph_invariant_under_v():
    rng = np.random.default_rng(9)
    mod = (1, 2, 1, 2)
    t1 = rebuild_topology(rng.standard_normal((4, 3)), mod, 4)
    t2 = rebuild_topology(rng.standard_normal((4, 3)), mod, 4)
    assert np.array_equal(t1.A, t2.A)
    assert t1.A.all()


def test_topology_disjointness_validated():
    a = np.eye(3, dtype=bool)
    with pytest.raises(ValueError):
        GraphTopology(A=a, A_intra=a, A_inter=a, K=1)


def test_init_embeddings_bounds_and_no_zero_rows():
    rng = np.random.default_rng(10)
    v = init_embeddings(50, 16, rng)
    assert (np.abs(v) <= 1 / np.sqrt(16)).all()
    assert (np.linalg.norm(v, axis=1) > 0).all()


def test_export_edges_matches_similarity_oracle(tmp_path):
    rng = np.random.default_rng(11)
    v = rng.standard_normal((5, 3))
    mod = (1, 2, 1, 2, 1)
    topo = rebuild_topology(v, mod, 3)
    path = tmp_path / "edges.csv"
    count = export_edges(path, v, topo, tuple(f"n{i}" for i in range(5)))
    assert count == int(topo.A.sum() + topo.A_intra.sum() + topo.A_inter.sum())
    sim = cosine_similarity(v)
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    assert lines[0] == "src,dst,relation,similarity"
    seen = 0
    for line in lines[1:]:
        src, dst, rel, s = line.split(",")
        i, j = int(src[1:]), int(dst[1:])
        assert rel in ("topk", "intra", "inter")
        assert float(s) == pytest.approx(sim[i, j], abs=1e-12)
        seen += 1
    assert seen == count


def test_top_k_select_tie_break_ascending_index():
    sim_row = np.array([0.5, 0.9, 0.9, 0.9])
    chosen = top_k_select(sim_row, np.arange(4), 2, self_idx=0)
    assert list(chosen) == [0, 1]  # self first, then lowest index among ties
