"""The recommendation network.

Per visit t: diagnosis and procedure code sequences run through two GRUs
whose final states concatenate into the patient query. Drug embeddings are
encoded twice - a GCN over the co-prescription graph and an attention encoder
over the interaction edge index - and fused into memory keys
M = Z_ehr - beta * Z_ddi. The query reads a static memory fact and a dynamic
fact weighted by past visits, the three vectors attend over each other as a
3-token sequence (2 heads, residual), and the concatenated tokens feed a
sigmoid multi-label head. Loss is binary cross-entropy plus a weighted
penalty on co-recommending interacting drug pairs.

Variants:
  gcn_baseline - interaction graph encoded by a GCN, no token attention
  gat_only     - attention encoder on the interaction graph, no token attention
  gat_mhca     - both (the full model)
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .ddigraph import DdiGraph, EdgeIndex, EhrGraph, to_edge_index
from .ehrdata import CodeVocab, Visit, Vocabs, VOCAB_KINDS
from .numcore import Tape, Tensor

VARIANTS = ("gcn_baseline", "gat_only", "gat_mhca")


class CheckpointError(ValueError):
    """Unreadable checkpoint or vocabulary mismatch."""


@dataclass(frozen=True)
class ModelConfig:
    emb_dim: int = 64
    gru_hidden: int = 64
    gat_heads: int = 2
    mhca_heads: int = 2
    dropout: float = 0.5
    leaky_relu_slope: float = 0.2
    ddi_loss_weight: float = 0.05
    decision_threshold: float = 0.5
    variant: str = "gat_mhca"
    use_procedures: bool = True

    def validate(self) -> None:
        if self.emb_dim % self.gat_heads or self.emb_dim % self.mhca_heads:
            raise ValueError("emb_dim must be divisible by gat_heads and mhca_heads")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")
        if self.ddi_loss_weight < 0:
            raise ValueError("ddi_loss_weight must be >= 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")

    @property
    def query_dim(self) -> int:
        return 2 * self.gru_hidden


def config_from_dict(d: dict) -> ModelConfig:
    base = ModelConfig()
    unknown = set(d) - set(base.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown model config keys: {sorted(unknown)}")
    cfg = replace(base, **d)
    cfg.validate()
    return cfg


# ------------------------------------------------------------------ parameters

class ModelParams:
    """Named parameter tensors in a stable order plus the sizes that shape them."""

    def __init__(self, config: ModelConfig, n_dx: int, n_px: int, n_rx: int,
                 tensors: dict[str, Tensor]):
        self.config = config
        self.n_dx = n_dx
        self.n_px = n_px
        self.n_rx = n_rx
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameter_list(self) -> list[Tensor]:
        return list(self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        clones = {k: Tensor(v.data.copy(), requires_grad=True)
                  for k, v in self.tensors.items()}
        return ModelParams(self.config, self.n_dx, self.n_px, self.n_rx, clones)


def init_params(config: ModelConfig, n_dx: int, n_px: int, n_rx: int,
                seed: int = 0, dtype=np.float32) -> ModelParams:
    """Uniform +-1/sqrt(fan_in) for projections and embeddings, zero biases."""
    config.validate()
    rng = np.random.default_rng([seed, 3])
    dtype = np.dtype(dtype)

    def proj(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                      requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    d = config.emb_dim
    h = config.gru_hidden
    t: dict[str, Tensor] = {}
    t["emb.dx"] = proj((n_dx, d), d)
    t["emb.px"] = proj((n_px, d), d)
    t["emb.rx"] = proj((n_rx, d), d)
    for stream in ("gru_dx", "gru_px"):
        for gate in ("z", "r", "h"):
            t[f"{stream}.w{gate}"] = proj((d, h), d)
            t[f"{stream}.u{gate}"] = proj((h, h), h)
            t[f"{stream}.b{gate}"] = zeros(h)
    t["gcn_ehr.w"] = proj((d, d), d)
    if config.variant == "gcn_baseline":
        t["gcn_ddi.w"] = proj((d, d), d)
    else:
        dh = d // config.gat_heads
        for head in range(config.gat_heads):
            t[f"gat.h{head}.w"] = proj((d, dh), d)
            t[f"gat.h{head}.a"] = proj((2 * dh,), 2 * dh)
    t["beta"] = Tensor(np.full((), 0.5, dtype=dtype), requires_grad=True)
    t["proj_query.w"] = proj((config.query_dim, d), config.query_dim)
    if config.variant == "gat_mhca":
        mh = d // config.mhca_heads
        for head in range(config.mhca_heads):
            t[f"mhca.h{head}.wq"] = proj((d, mh), d)
            t[f"mhca.h{head}.wk"] = proj((d, mh), d)
            t[f"mhca.h{head}.wv"] = proj((d, mh), d)
        t["mhca.wo"] = proj((d, d), d)
    t["out.w"] = proj((3 * d, n_rx), 3 * d)
    t["out.b"] = zeros(n_rx)
    return ModelParams(config, n_dx, n_px, n_rx, t)


# ---------------------------------------------------------------- graph inputs

def normalized_adjacency(adj: np.ndarray) -> np.ndarray:
    """D^{-1/2} (A + I) D^{-1/2} with D from the self-looped adjacency."""
    a_hat = adj.astype(np.float64) + np.eye(adj.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return (a_hat * d_inv_sqrt[:, None]) * d_inv_sqrt[None, :]


@dataclass
class GraphInputs:
    """Precomputed graph-side constants shared by every forward pass."""

    ehr_norm: np.ndarray
    ddi_adj: np.ndarray
    ddi_edge_index: EdgeIndex
    ddi_norm: np.ndarray

    @classmethod
    def build(cls, ehr_graph: EhrGraph, ddi_graph: DdiGraph) -> "GraphInputs":
        return cls(
            ehr_norm=normalized_adjacency(ehr_graph.adjacency),
            ddi_adj=ddi_graph.adjacency.astype(np.float64),
            ddi_edge_index=to_edge_index(ddi_graph.adjacency),
            ddi_norm=normalized_adjacency(ddi_graph.adjacency),
        )


@dataclass
class ForwardAux:
    """Detached attention distributions from one forward pass."""

    gat_attention: list[np.ndarray] = field(default_factory=list)
    gat_segments: np.ndarray | None = None
    memory_attention: np.ndarray | None = None
    dynamic_attention: np.ndarray | None = None
    mhca_attention: list[np.ndarray] = field(default_factory=list)


# -------------------------------------------------------------------- encoders

def _gru_step(tape: Tape, params: ModelParams, stream: str, x: Tensor, h: Tensor) -> Tensor:
    p = params
    z = tape.sigmoid(tape.add(tape.add(tape.matmul(x, p[f"{stream}.wz"]),
                                       tape.matmul(h, p[f"{stream}.uz"])),
                              p[f"{stream}.bz"]))
    r = tape.sigmoid(tape.add(tape.add(tape.matmul(x, p[f"{stream}.wr"]),
                                       tape.matmul(h, p[f"{stream}.ur"])),
                              p[f"{stream}.br"]))
    cand = tape.tanh(tape.add(tape.add(tape.matmul(x, p[f"{stream}.wh"]),
                                       tape.matmul(tape.mul(r, h), p[f"{stream}.uh"])),
                              p[f"{stream}.bh"]))
    one_minus_z = tape.add_scalar(tape.mul_scalar(z, -1.0), 1.0)
    return tape.add(tape.mul(one_minus_z, h), tape.mul(z, cand))


def _pooled_codes(tape: Tape, params: ModelParams, table: str, idx: list[int],
                  dropout_p: float) -> Tensor:
    rows = tape.gather(params[table], np.asarray(idx, dtype=np.int64))
    pooled = tape.mean(rows, axis=0)
    return tape.dropout(pooled, dropout_p)


def encode_queries(tape: Tape, params: ModelParams, visits: list[Visit]) -> list[Tensor]:
    """Run both GRU streams over the visit sequence; query k is the
    concatenation of the two hidden states after visit k."""
    cfg = params.config
    h_dx = tape.constant(np.zeros(cfg.gru_hidden))
    h_px = tape.constant(np.zeros(cfg.gru_hidden))
    queries: list[Tensor] = []
    for visit in visits:
        if not visit.diagnoses:
            raise ValueError("visit has an empty diagnosis list")
        x_dx = _pooled_codes(tape, params, "emb.dx", visit.diagnoses, cfg.dropout)
        h_dx = _gru_step(tape, params, "gru_dx", x_dx, h_dx)
        if cfg.use_procedures and visit.procedures:
            x_px = _pooled_codes(tape, params, "emb.px", visit.procedures, cfg.dropout)
        else:
            x_px = tape.constant(np.zeros(cfg.emb_dim))
        h_px = _gru_step(tape, params, "gru_px", x_px, h_px)
        queries.append(tape.concat([h_dx, h_px]))
    return queries


def encode_patient(tape: Tape, params: ModelParams, visits: list[Visit], t: int) -> Tensor:
    if not (1 <= t <= len(visits)):
        raise ValueError(f"t must be in [1, {len(visits)}], got {t}")
    return encode_queries(tape, params, visits[:t])[t - 1]


def gat_forward(tape: Tape, params: ModelParams, node_feats: Tensor,
                edge_index: EdgeIndex, aux: ForwardAux | None = None) -> Tensor:
    """Per-edge attention encoder. For each directed edge (src -> dst) the
    logit is LeakyReLU(a . [W x_dst || W x_src]); weights softmax over each
    destination's in-neighborhood; heads concatenate, then ELU."""
    cfg = params.config
    n = node_feats.shape[0]
    src, dst = edge_index.src, edge_index.dst
    if src.size and (max(src.max(), dst.max()) >= n or min(src.min(), dst.min()) < 0):
        raise IndexError("edge index references a node out of range")
    dh = cfg.emb_dim // cfg.gat_heads
    head_outs = []
    for head in range(cfg.gat_heads):
        wx = tape.matmul(node_feats, params[f"gat.h{head}.w"])
        a = params[f"gat.h{head}.a"]
        a_dst = tape.gather(a, np.arange(dh))
        a_src = tape.gather(a, np.arange(dh, 2 * dh))
        s_dst = tape.matmul(wx, a_dst)
        s_src = tape.matmul(wx, a_src)
        logits = tape.leaky_relu(tape.add(tape.gather(s_dst, dst), tape.gather(s_src, src)),
                                 slope=cfg.leaky_relu_slope)
        alpha = tape.segment_softmax(logits, dst, n)
        if aux is not None:
            aux.gat_attention.append(alpha.data.copy())
            aux.gat_segments = dst
        alpha = tape.dropout(alpha, cfg.dropout)
        msgs = tape.rowscale(tape.gather(wx, src), alpha)
        head_outs.append(tape.scatter_add(msgs, dst, n))
    return tape.elu(tape.hconcat(head_outs))


def gcn_forward(tape: Tape, weight: Tensor, node_feats: Tensor,
                adj_norm: np.ndarray) -> Tensor:
    """Z = tanh(normalized_adjacency @ X @ W)."""
    prop = tape.matmul(tape.constant(adj_norm), node_feats)
    return tape.tanh(tape.matmul(prop, weight))


def compute_memory_keys(tape: Tape, params: ModelParams, graphs: GraphInputs,
                        aux: ForwardAux | None = None) -> Tensor:
    """M = Z_ehr - beta * Z_ddi over the drug embedding table."""
    emb = params["emb.rx"]
    z_ehr = gcn_forward(tape, params["gcn_ehr.w"], emb, graphs.ehr_norm)
    if params.config.variant == "gcn_baseline":
        z_ddi = gcn_forward(tape, params["gcn_ddi.w"], emb, graphs.ddi_norm)
    else:
        z_ddi = gat_forward(tape, params, emb, graphs.ddi_edge_index, aux=aux)
    return tape.sub(z_ehr, tape.scale(z_ddi, params["beta"]))


def eval_memory_keys(params: ModelParams, graphs: GraphInputs) -> np.ndarray:
    """Memory keys as a plain array; parameters fixed, dropout off."""
    tape = Tape(training=False, dtype=np.float32)
    return compute_memory_keys(tape, params, graphs).data.copy()


# --------------------------------------------------------------- memory reads

def memory_read(tape: Tape, params: ModelParams, query: Tensor, memory: Tensor,
                aux: ForwardAux | None = None) -> Tensor:
    """fact1 = M^T softmax(M P q)."""
    q_tok = tape.matmul(query, params["proj_query.w"])
    attn = tape.softmax(tape.matmul(memory, q_tok))
    if aux is not None:
        aux.memory_attention = attn.data.copy()
    return tape.matmul(attn, memory)


def dynamic_read(tape: Tape, params: ModelParams, query: Tensor,
                 hist_queries: list[Tensor], hist_meds: np.ndarray,
                 memory: Tensor, aux: ForwardAux | None = None) -> Tensor:
    """fact2 = M^T (u / max(1, |u|_1)) with u the history-attention-weighted
    sum of past medication multi-hots; zero vector on the first visit."""
    if len(hist_queries) != hist_meds.shape[0]:
        raise ValueError(f"history length mismatch: {len(hist_queries)} queries "
                         f"vs {hist_meds.shape[0]} medication rows")
    if not hist_queries:
        return tape.constant(np.zeros(params.config.emb_dim))
    q_hist = tape.stack(hist_queries)
    attn = tape.softmax(tape.matmul(q_hist, query))
    if aux is not None:
        aux.dynamic_attention = attn.data.copy()
    u = tape.matmul(attn, tape.constant(hist_meds))
    denom = tape.clip_min(tape.sum(u), 1.0)
    u_norm = tape.scale(u, tape.reciprocal(denom))
    return tape.matmul(u_norm, memory)


# ----------------------------------------------------------------- token fusion

def mhca_fuse(tape: Tape, params: ModelParams, query: Tensor, fact1: Tensor,
              fact2: Tensor, aux: ForwardAux | None = None) -> Tensor:
    """Self-attention over the 3-token sequence [projected query, fact1,
    fact2], scaled dot-product with per-head projections, residual add, then
    fixed-order concatenation."""
    cfg = params.config
    q_tok = tape.matmul(query, params["proj_query.w"])
    tokens = tape.stack([q_tok, fact1, fact2])
    mh = cfg.emb_dim // cfg.mhca_heads
    head_outs = []
    for head in range(cfg.mhca_heads):
        q = tape.matmul(tokens, params[f"mhca.h{head}.wq"])
        k = tape.matmul(tokens, params[f"mhca.h{head}.wk"])
        v = tape.matmul(tokens, params[f"mhca.h{head}.wv"])
        scores = tape.mul_scalar(tape.matmul(q, tape.transpose(k)), 1.0 / np.sqrt(mh))
        attn = tape.softmax(scores, axis=-1)
        if aux is not None:
            aux.mhca_attention.append(attn.data.copy())
        head_outs.append(tape.matmul(attn, v))
    projected = tape.matmul(tape.hconcat(head_outs), params["mhca.wo"])
    return tape.flatten(tape.add(tokens, projected))


def concat_fuse(tape: Tape, params: ModelParams, query: Tensor, fact1: Tensor,
                fact2: Tensor) -> Tensor:
    """Fusion used by the no-token-attention variants."""
    q_tok = tape.matmul(query, params["proj_query.w"])
    return tape.concat([q_tok, fact1, fact2])


# ---------------------------------------------------------------- output/loss

def predict(tape: Tape, params: ModelParams, fused: Tensor) -> tuple[Tensor, Tensor]:
    """Returns (logits, sigmoid scores)."""
    logits = tape.add(tape.matmul(fused, params["out.w"]), params["out.b"])
    return logits, tape.sigmoid(logits)


def recommended_set(scores: np.ndarray, threshold: float) -> np.ndarray:
    """Indices scoring at or above the threshold; highest scorer if none do."""
    chosen = np.flatnonzero(scores >= threshold)
    if chosen.size == 0:
        chosen = np.array([int(np.argmax(scores))])
    return chosen


def visit_loss(tape: Tape, logits: Tensor, scores: Tensor, target: np.ndarray,
               ddi_adj: np.ndarray, gamma: float) -> tuple[Tensor, Tensor, Tensor]:
    """L = BCE + gamma * L_ddi.

    BCE is computed from logits (softplus(l) - y*l averaged over drugs) for
    stability; L_ddi = yhat^T A yhat / (n(n-1)) equals the mean of
    yhat_i*yhat_j over interacting unordered pairs scaled by 2/(n(n-1)).
    """
    n = target.shape[0]
    y = tape.constant(target.astype(np.float64))
    bce = tape.mean(tape.sub(tape.softplus(logits), tape.mul(y, logits)))
    half = tape.matmul(scores, tape.constant(ddi_adj))
    l_ddi = tape.mul_scalar(tape.matmul(half, scores), 1.0 / (n * (n - 1)))
    total = tape.add(bce, tape.mul_scalar(l_ddi, gamma)) if gamma else bce
    return total, bce, l_ddi


# ------------------------------------------------------------------- pipeline

def forward_visit(tape: Tape, params: ModelParams, queries: list[Tensor],
                  visits: list[Visit], t: int, memory: Tensor,
                  aux: ForwardAux | None = None) -> tuple[Tensor, Tensor]:
    """Score visit t (1-based) given queries for visits 1..>=t and the
    medication history of visits 1..t-1. Returns (logits, scores)."""
    query = queries[t - 1]
    hist_q = queries[: t - 1]
    hist_meds = np.stack([v.medications for v in visits[: t - 1]]).astype(np.float64) \
        if t > 1 else np.zeros((0, params.n_rx))
    fact1 = memory_read(tape, params, query, memory, aux=aux)
    fact2 = dynamic_read(tape, params, query, hist_q, hist_meds, memory, aux=aux)
    if params.config.variant == "gat_mhca":
        fused = mhca_fuse(tape, params, query, fact1, fact2, aux=aux)
    else:
        fused = concat_fuse(tape, params, query, fact1, fact2)
    return predict(tape, params, fused)


# ------------------------------------------------------------------ checkpoint

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ModelParams, vocabs: Vocabs,
                    extra: dict | None = None) -> None:
    """Manifest JSON line (version, config, vocabs and their hashes, tensor
    directory) followed by little-endian float32 blobs in manifest order."""
    tensors = []
    offset = 0
    blobs = []
    for name, tensor in params.tensors.items():
        blob = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "vocabs": {k: list(getattr(vocabs, k).codes) for k in VOCAB_KINDS},
        "vocab_hashes": vocabs.hashes(),
        "tensors": tensors,
    }
    if extra:
        manifest["extra"] = extra
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, separators=(",", ":")).encode() + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expect_vocab_hashes: dict[str, str] | None = None
                    ) -> tuple[ModelParams, Vocabs, dict]:
    with open(path, "rb") as fh:
        header = fh.readline()
        payload = fh.read()
    try:
        manifest = json.loads(header)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable checkpoint manifest: {exc.msg}") from exc
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')!r}")
    vocabs = Vocabs(**{k: CodeVocab.from_codes(k, manifest["vocabs"][k])
                       for k in VOCAB_KINDS})
    actual = vocabs.hashes()
    if manifest.get("vocab_hashes") != actual:
        raise CheckpointError("checkpoint vocab hashes do not match stored vocabularies")
    if expect_vocab_hashes is not None:
        for kind, expected in expect_vocab_hashes.items():
            if actual.get(kind) != expected:
                raise CheckpointError(f"vocab mismatch for {kind!r}")
    config = config_from_dict(manifest["config"])
    tensors: dict[str, Tensor] = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        raw = payload[start: start + 4 * count]
        if len(raw) != 4 * count:
            raise CheckpointError(f"truncated tensor {entry['name']!r}")
        data = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
        tensors[entry["name"]] = Tensor(data.copy(), requires_grad=True)
    params = ModelParams(config,
                         n_dx=len(vocabs.diagnosis),
                         n_px=len(vocabs.procedure),
                         n_rx=len(vocabs.medication),
                         tensors=tensors)
    return params, vocabs, manifest


def checkpoint_fingerprint(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]
