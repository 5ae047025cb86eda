import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medrec.ddigraph import (
    DdiRecord,
    DatasetFormatError,
    build_ddi_graph,
    build_ehr_graph,
    check_interactions,
    ddi_rate,
    from_edge_index,
    generate_synthetic_ddi,
    load_ddi_tsv,
    save_ddi_tsv,
    to_edge_index,
)
from medrec.ehrdata import CodeVocab, PatientRecord, Visit


def vocab(n=6):
    return CodeVocab.from_codes("medication", [f"A{i:02d}B" for i in range(n)])


def visit(med_idx, n=6):
    mh = np.zeros(n, dtype=np.uint8)
    mh[list(med_idx)] = 1
    return Visit(diagnoses=[0], procedures=[0], medications=mh)


# ----------------------------------------------------------------- ddi graph

def test_top_k_type_ranking():
    v = vocab(4)
    records = [
        DdiRecord("A00B", "A01B", "T1", 0.9),
        DdiRecord("A02B", "A03B", "T2", 0.5),
    ]
    g = build_ddi_graph(records, v, top_k=1)
    assert g.selected_types == ("T1",)
    assert g.adjacency[0, 1] == 1 and g.adjacency[2, 3] == 0


def test_edge_symmetry():
    v = vocab(3)
    g = build_ddi_graph([DdiRecord("A00B", "A02B", "T", 1.0)], v, top_k=5)
    assert g.adjacency[0, 2] == g.adjacency[2, 0] == 1


def test_out_of_vocab_skipped_and_counted():
    v = vocab(2)
    g = build_ddi_graph([DdiRecord("A00B", "ZZZZ", "T", 1.0),
                         DdiRecord("A00B", "A01B", "T", 1.0)], v, top_k=5)
    assert g.skipped_out_of_vocab == 1
    assert g.adjacency.sum() == 2


def test_ddi_graph_matches_bruteforce_oracle():
    rng = np.random.default_rng(17)
    v = vocab(12)
    records = []
    for i in range(50):
        a, b = rng.choice(12, size=2, replace=False)
        records.append(DdiRecord(v.codes[a], v.codes[b], f"T{rng.integers(20)}",
                                 float(rng.uniform(0, 1))))
    top_k = 10
    g = build_ddi_graph(records, v, top_k=top_k)

    # oracle: rank types by max severity, union all pairs of kept types
    sev = {}
    for r in records:
        sev[r.interaction_type] = max(sev.get(r.interaction_type, -1), r.severity)
    kept = set(sorted(sev, key=lambda t: (-sev[t], t))[:top_k])
    expect = np.zeros((12, 12), dtype=np.uint8)
    for r in records:
        if r.interaction_type in kept:
            ia, ib = v.index[r.atc3_a], v.index[r.atc3_b]
            expect[ia, ib] = expect[ib, ia] = 1
    np.testing.assert_array_equal(g.adjacency, expect)


def test_ddi_record_rejects_self_pair():
    with pytest.raises(ValueError):
        DdiRecord("A00B", "A00B", "T", 1.0)


def test_top_k_must_be_positive():
    with pytest.raises(ValueError):
        build_ddi_graph([], vocab(2), top_k=0)


# ----------------------------------------------------------------- ehr graph

def test_ehr_graph_triangle():
    v = vocab(5)
    recs = [PatientRecord("p", [visit({0, 1, 2}, 5), visit({4}, 5)])]
    g = build_ehr_graph(recs, v)
    for a, b in [(0, 1), (0, 2), (1, 2)]:
        assert g.adjacency[a, b] == g.adjacency[b, a] == 1
    assert g.adjacency.sum() == 6


def test_ehr_graph_singletons_empty():
    v = vocab(4)
    recs = [PatientRecord("p", [visit({1}, 4), visit({3}, 4)])]
    assert build_ehr_graph(recs, v).adjacency.sum() == 0


def test_ehr_graph_matches_bruteforce():
    rng = np.random.default_rng(3)
    n = 9
    v = vocab(n)
    recs = []
    for p in range(8):
        visits = [visit(set(rng.choice(n, size=rng.integers(1, 5), replace=False).tolist()), n)
                  for _ in range(rng.integers(2, 4))]
        recs.append(PatientRecord(f"p{p}", visits))
    g = build_ehr_graph(recs, v)
    expect = np.zeros((n, n), dtype=np.uint8)
    for r in recs:
        for vis in r.visits:
            meds = list(vis.med_indices())
            for i in meds:
                for j in meds:
                    if i != j:
                        expect[i, j] = 1
    np.testing.assert_array_equal(g.adjacency, expect)


# ---------------------------------------------------------------- edge index

def test_edge_index_two_nodes():
    ei = to_edge_index(np.array([[0, 1], [1, 0]], dtype=np.uint8))
    assert ei.pairs.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]


def test_edge_index_self_loops_only():
    ei = to_edge_index(np.zeros((3, 3), dtype=np.uint8))
    assert ei.pairs.tolist() == [[0, 0], [1, 1], [2, 2]]


@given(st.integers(min_value=1, max_value=8), st.integers(min_value=0, max_value=10_000))
@settings(max_examples=100, deadline=None)
def test_edge_index_count_and_roundtrip(n, seed):
    rng = np.random.default_rng(seed)
    adj = np.triu((rng.random((n, n)) < 0.4).astype(np.uint8), k=1)
    adj = adj | adj.T
    ei = to_edge_index(adj)
    n_edges = int(adj.sum()) // 2
    assert ei.pairs.shape[0] == 2 * n_edges + n
    assert len({tuple(p) for p in ei.pairs.tolist()}) == ei.pairs.shape[0]
    np.testing.assert_array_equal(from_edge_index(ei), adj)


def test_edge_index_rejects_asymmetric():
    with pytest.raises(ValueError):
        to_edge_index(np.array([[0, 1], [0, 0]], dtype=np.uint8))


# ------------------------------------------------------------------ ddi rate

def make_graph(n, edges):
    adj = np.zeros((n, n), dtype=np.uint8)
    for a, b in edges:
        adj[a, b] = adj[b, a] = 1
    from medrec.ddigraph import DdiGraph
    return DdiGraph(vocab=vocab(n), adjacency=adj, selected_types=(),
                    edge_types={(min(a, b), max(a, b)): ("T", 1.0) for a, b in edges})


def test_ddi_rate_single_triangle_visit():
    g = make_graph(4, [(0, 1)])
    assert ddi_rate([{0, 1, 2}], g) == pytest.approx(1 / 3)


def test_ddi_rate_no_edges_zero():
    g = make_graph(4, [])
    assert ddi_rate([{0, 1, 2}, {1, 3}], g) == 0.0


def test_ddi_rate_singletons_zero():
    g = make_graph(4, [(0, 1), (2, 3)])
    assert ddi_rate([{0}, {1}, set()], g) == 0.0


def test_ddi_rate_matches_bruteforce():
    rng = np.random.default_rng(23)
    n = 8
    edges = {tuple(sorted(rng.choice(n, 2, replace=False).tolist())) for _ in range(9)}
    g = make_graph(n, list(edges))
    sets = [set(rng.choice(n, size=rng.integers(0, 6), replace=False).tolist())
            for _ in range(30)]
    inter = tot = 0
    for s in sets:
        ss = sorted(s)
        for i in range(len(ss)):
            for j in range(i + 1, len(ss)):
                tot += 1
                if (ss[i], ss[j]) in edges:
                    inter += 1
    assert ddi_rate(sets, g) == pytest.approx(inter / tot, abs=1e-12)


def test_ddi_rate_monotone_in_edges():
    rng = np.random.default_rng(5)
    n = 7
    sets = [set(rng.choice(n, size=3, replace=False).tolist()) for _ in range(10)]
    edges = [(0, 1), (2, 3)]
    base = ddi_rate(sets, make_graph(n, edges))
    more = ddi_rate(sets, make_graph(n, edges + [(4, 5)]))
    assert more >= base


def test_ddi_rate_index_out_of_range():
    with pytest.raises(IndexError):
        ddi_rate([{0, 99}], make_graph(4, []))


# --------------------------------------------------------- check_interactions

def test_check_interactions_pair():
    g = make_graph(4, [(0, 1)])
    pairs, unknown = check_interactions(["A00B", "A01B"], g)
    assert unknown == []
    assert len(pairs) == 1
    assert (pairs[0].drug_a, pairs[0].drug_b) == ("A00B", "A01B")
    assert pairs[0].interaction_type == "T"


def test_check_interactions_singleton():
    pairs, _ = check_interactions(["A00B"], make_graph(3, [(0, 1)]))
    assert pairs == []


def test_check_interactions_unknown_reported():
    pairs, unknown = check_interactions(["A00B", "XXXX"], make_graph(3, [(0, 1)]))
    assert unknown == ["XXXX"]
    assert pairs == []


def test_check_interactions_matches_bruteforce():
    rng = np.random.default_rng(31)
    n = 10
    edges = {tuple(sorted(rng.choice(n, 2, replace=False).tolist())) for _ in range(12)}
    g = make_graph(n, list(edges))
    for _ in range(25):
        meds = sorted(set(rng.choice(n, size=rng.integers(0, 7), replace=False).tolist()))
        codes = [g.vocab.codes[i] for i in meds]
        pairs, _ = check_interactions(codes, g)
        expect = [(g.vocab.codes[a], g.vocab.codes[b])
                  for ai, a in enumerate(meds) for b in meds[ai + 1:]
                  if (a, b) in edges]
        assert [(p.drug_a, p.drug_b) for p in pairs] == expect


# ------------------------------------------------------------------- file IO

def test_ddi_tsv_roundtrip(tmp_path):
    v = vocab(10)
    records = generate_synthetic_ddi(v, n_types=5, pairs_per_type=3, seed=1)
    path = tmp_path / "ddi.tsv"
    save_ddi_tsv(path, records)
    loaded = load_ddi_tsv(path)
    assert loaded == records


def test_ddi_tsv_rejects_missing_header(tmp_path):
    path = tmp_path / "ddi.tsv"
    path.write_text("A00B\tA01B\tT\t0.5\n")
    with pytest.raises(DatasetFormatError):
        load_ddi_tsv(path)


def test_ddi_tsv_comments_allowed(tmp_path):
    path = tmp_path / "ddi.tsv"
    path.write_text("# comment\natc3_a\tatc3_b\tinteraction_type\tseverity\n"
                    "# another\nA00B\tA01B\tT\t0.5\n")
    assert len(load_ddi_tsv(path)) == 1
