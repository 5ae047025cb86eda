"""Drug-interaction and co-prescription graphs over the ATC3 vocabulary.

The interaction graph keeps only the highest-severity interaction types
(ranked by max severity per type, top-k); the co-prescription graph marks
drug pairs that appear together in at least one training visit. Both are
symmetric binary adjacencies with zero diagonal; the edge-index form adds
self-loops so every node attends to itself in the attention encoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ehrdata import CodeVocab, DatasetFormatError, PatientRecord

DDI_TSV_HEADER = "atc3_a\tatc3_b\tinteraction_type\tseverity"


@dataclass(frozen=True)
class DdiRecord:
    atc3_a: str
    atc3_b: str
    interaction_type: str
    severity: float

    def __post_init__(self):
        if self.atc3_a == self.atc3_b:
            raise ValueError(f"self-interaction record for {self.atc3_a!r}")
        if not math.isfinite(self.severity):
            raise ValueError(f"non-finite severity for {self.atc3_a}/{self.atc3_b}")


@dataclass(frozen=True)
class InteractionPair:
    drug_a: str
    drug_b: str
    interaction_type: str
    severity: float


def _check_symmetric_zero_diagonal(adj: np.ndarray, name: str) -> None:
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError(f"{name}: adjacency must be square, got {adj.shape}")
    if not np.array_equal(adj, adj.T):
        raise ValueError(f"{name}: adjacency must be symmetric")
    if np.any(np.diagonal(adj)):
        raise ValueError(f"{name}: adjacency must have zero diagonal")


@dataclass
class DdiGraph:
    vocab: CodeVocab
    adjacency: np.ndarray
    selected_types: tuple[str, ...]
    # per undirected pair (i<j): highest-severity kept type that triggers it
    edge_types: dict[tuple[int, int], tuple[str, float]] = field(repr=False)
    skipped_out_of_vocab: int = 0

    def __post_init__(self):
        _check_symmetric_zero_diagonal(self.adjacency, "DdiGraph")

    @property
    def n(self) -> int:
        return len(self.vocab)


@dataclass
class EhrGraph:
    vocab: CodeVocab
    adjacency: np.ndarray

    def __post_init__(self):
        _check_symmetric_zero_diagonal(self.adjacency, "EhrGraph")


@dataclass(frozen=True)
class EdgeIndex:
    """Directed (src, dst) pairs: both directions of every undirected edge
    plus a self-loop for every node, sorted by (src, dst)."""

    pairs: np.ndarray
    n: int

    @property
    def src(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def dst(self) -> np.ndarray:
        return self.pairs[:, 1]


# ---------------------------------------------------------------------- build

def build_ddi_graph(records: list[DdiRecord], vocab: CodeVocab, top_k: int = 90) -> DdiGraph:
    """Keep the top_k interaction types by max severity (ties broken by type
    name) and add an edge for every in-vocab record of a kept type."""
    if top_k <= 0:
        raise ValueError(f"top_k must be positive, got {top_k}")
    max_sev: dict[str, float] = {}
    for r in records:
        cur = max_sev.get(r.interaction_type)
        if cur is None or r.severity > cur:
            max_sev[r.interaction_type] = r.severity
    ranked = sorted(max_sev, key=lambda t: (-max_sev[t], t))
    kept = set(ranked[:top_k])

    n = len(vocab)
    adj = np.zeros((n, n), dtype=np.uint8)
    edge_types: dict[tuple[int, int], tuple[str, float]] = {}
    skipped = 0
    for r in records:
        ia = vocab.index.get(r.atc3_a)
        ib = vocab.index.get(r.atc3_b)
        if ia is None or ib is None:
            skipped += 1
            continue
        if r.interaction_type not in kept:
            continue
        adj[ia, ib] = adj[ib, ia] = 1
        key = (min(ia, ib), max(ia, ib))
        best = edge_types.get(key)
        if best is None or (r.severity, ) > (best[1], ) or \
                (r.severity == best[1] and r.interaction_type < best[0]):
            edge_types[key] = (r.interaction_type, r.severity)
    return DdiGraph(vocab=vocab, adjacency=adj,
                    selected_types=tuple(ranked[:top_k]),
                    edge_types=edge_types, skipped_out_of_vocab=skipped)


def build_ehr_graph(train_records: list[PatientRecord], vocab: CodeVocab) -> EhrGraph:
    """Co-prescription adjacency: 1 iff two drugs share a training visit.
    Build from the training split only."""
    n = len(vocab)
    adj = np.zeros((n, n), dtype=np.uint8)
    for rec in train_records:
        for visit in rec.visits:
            meds = visit.med_indices()
            if meds.size >= 2:
                block = np.ix_(meds, meds)
                adj[block] = 1
    np.fill_diagonal(adj, 0)
    return EhrGraph(vocab=vocab, adjacency=adj)


def to_edge_index(adjacency: np.ndarray) -> EdgeIndex:
    """Adjacency -> sorted directed edge list with self-loops."""
    _check_symmetric_zero_diagonal(np.asarray(adjacency), "to_edge_index")
    n = adjacency.shape[0]
    pairs = np.argwhere(adjacency)
    loops = np.stack([np.arange(n), np.arange(n)], axis=1)
    allp = np.concatenate([pairs, loops]) if pairs.size else loops
    order = np.lexsort((allp[:, 1], allp[:, 0]))
    return EdgeIndex(pairs=allp[order].astype(np.int64), n=n)


def from_edge_index(edge_index: EdgeIndex) -> np.ndarray:
    """Inverse of to_edge_index (self-loops dropped)."""
    adj = np.zeros((edge_index.n, edge_index.n), dtype=np.uint8)
    src, dst = edge_index.src, edge_index.dst
    keep = src != dst
    adj[src[keep], dst[keep]] = 1
    return adj


# -------------------------------------------------------------------- queries

def ddi_rate(predicted_med_sets: list, graph: DdiGraph) -> float:
    """Micro-averaged interaction rate: interacting unordered pairs over all
    unordered pairs, pooled across visits. 0 when no visit has >= 2 drugs."""
    n = graph.n
    interacting = 0
    total = 0
    for meds in predicted_med_sets:
        idx = np.asarray(sorted(set(int(m) for m in meds)), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexError(f"medication index out of range for vocab size {n}")
        k = idx.size
        if k < 2:
            continue
        total += k * (k - 1) // 2
        interacting += int(graph.adjacency[np.ix_(idx, idx)].sum()) // 2
    return interacting / total if total else 0.0


def check_interactions(med_codes: list[str], graph: DdiGraph
                       ) -> tuple[list[InteractionPair], list[str]]:
    """All interacting unordered pairs among the given drugs, each annotated
    with its highest-severity interaction type. Unknown codes are returned
    separately, not fatal."""
    unknown = sorted({c for c in med_codes if c not in graph.vocab.index})
    idx = sorted({graph.vocab.index[c] for c in med_codes if c in graph.vocab.index})
    pairs: list[InteractionPair] = []
    for ai in range(len(idx)):
        for bi in range(ai + 1, len(idx)):
            i, j = idx[ai], idx[bi]
            if graph.adjacency[i, j]:
                itype, sev = graph.edge_types.get((i, j), ("unknown", 0.0))
                pairs.append(InteractionPair(
                    drug_a=graph.vocab.codes[i], drug_b=graph.vocab.codes[j],
                    interaction_type=itype, severity=sev))
    return pairs, unknown


# ------------------------------------------------------------------- file IO

def load_ddi_tsv(path) -> list[DdiRecord]:
    records: list[DdiRecord] = []
    header_seen = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if not header_seen:
                if line != DDI_TSV_HEADER:
                    raise DatasetFormatError(
                        f"line {lineno}: expected header {DDI_TSV_HEADER!r}")
                header_seen = True
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DatasetFormatError(f"line {lineno}: expected 4 tab-separated fields")
            try:
                severity = float(parts[3])
            except ValueError as exc:
                raise DatasetFormatError(f"line {lineno}: bad severity {parts[3]!r}") from exc
            try:
                records.append(DdiRecord(parts[0], parts[1], parts[2], severity))
            except ValueError as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from exc
    if not header_seen:
        raise DatasetFormatError("missing header line")
    return records


def save_ddi_tsv(path, records: list[DdiRecord]) -> None:
    with open(path, "w") as fh:
        fh.write(DDI_TSV_HEADER + "\n")
        for r in records:
            fh.write(f"{r.atc3_a}\t{r.atc3_b}\t{r.interaction_type}\t{r.severity:g}\n")


def generate_synthetic_ddi(vocab: CodeVocab, n_types: int = 120,
                           pairs_per_type: int = 4, seed: int = 0) -> list[DdiRecord]:
    """Random severity-scored interaction records over a closed vocabulary,
    for desk-scale runs where the real interaction database is unavailable."""
    rng = np.random.default_rng([seed, 2])
    n = len(vocab)
    if n < 2:
        raise ValueError("need at least two drugs")
    records = []
    for t in range(n_types):
        severity = float(np.round(rng.uniform(0.05, 1.0), 4))
        for _ in range(pairs_per_type):
            a, b = rng.choice(n, size=2, replace=False)
            records.append(DdiRecord(vocab.codes[a], vocab.codes[b],
                                     f"type-{t:03d}", severity))
    return records
