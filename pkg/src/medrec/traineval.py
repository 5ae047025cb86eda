"""Training loop, multi-label evaluation metrics, and ablation runs.

The prediction task: reproduce visit t's medication set from the diagnosis
and procedure history through visit t plus the medications of visits 1..t-1,
for every t >= 2. Jaccard/F1/average-precision are macro-averaged per visit;
the interaction rate pools pairs across visits.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .ddigraph import DdiGraph, EhrGraph, ddi_rate
from .ehrdata import PatientRecord, Vocabs
from .model import (
    GraphInputs,
    ModelConfig,
    ModelParams,
    VARIANTS,
    compute_memory_keys,
    encode_queries,
    eval_memory_keys,
    forward_visit,
    init_params,
    recommended_set,
    visit_loss,
)
from .numcore import Adam, NonFiniteError, Tape


class TrainingDivergedError(RuntimeError):
    """Non-finite loss; message reports the epoch and batch."""


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 32
    max_epochs: int = 40
    patience: int = 5
    seed: int = 0
    variant: str = "gat_mhca"

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0 < self.patience < self.max_epochs):
            raise ValueError("patience must be in (0, max_epochs)")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


def train_config_from_dict(d: dict) -> TrainConfig:
    base = TrainConfig()
    unknown = set(d) - set(base.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown train config keys: {sorted(unknown)}")
    cfg = replace(base, **d)
    cfg.validate()
    return cfg


@dataclass
class Metrics:
    jaccard: float
    f1: float
    prauc: float
    ddi_rate: float
    n_visits: int
    prauc_skipped: int = 0
    per_visit_jaccard: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    per_visit_f1: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    per_visit_ap: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def to_dict(self) -> dict:
        return {"jaccard": self.jaccard, "f1": self.f1, "prauc": self.prauc,
                "ddi_rate": self.ddi_rate, "n_visits": self.n_visits}


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_bce: float
    val_jaccard: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochStats]
    best_epoch: int
    best_val_jaccard: float
    stopped_early: bool


# -------------------------------------------------------------------- metrics

def jaccard_score(pred_set, true_set) -> float:
    pred, true = set(pred_set), set(true_set)
    if not pred and not true:
        return 1.0
    return len(pred & true) / len(pred | true)


def f1_score(pred_set, true_set) -> float:
    pred, true = set(pred_set), set(true_set)
    tp = len(pred & true)
    precision = tp / len(pred) if pred else 0.0
    recall = tp / len(true) if true else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """AP = sum_k P(k) * delta_recall(k), scores sorted descending with ties
    broken by ascending index. Requires at least one positive label."""
    labels = np.asarray(labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("average_precision needs at least one positive label")
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores)))
    hits = 0
    ap = 0.0
    for rank, idx in enumerate(order, start=1):
        if labels[idx]:
            hits += 1
            ap += hits / rank / n_pos
    return ap


def prauc(score_rows: list[np.ndarray], label_rows: list[np.ndarray]
          ) -> tuple[float, np.ndarray, int]:
    """Macro-average of per-visit average precision; visits with no positive
    labels are skipped and counted."""
    aps = []
    skipped = 0
    for scores, labels in zip(score_rows, label_rows):
        if int(np.sum(labels)) == 0:
            skipped += 1
            continue
        aps.append(average_precision(scores, labels))
    arr = np.asarray(aps)
    return (float(arr.mean()) if arr.size else 0.0), arr, skipped


# ------------------------------------------------------------------- evaluate

def predict_visit_scores(params: ModelParams, graphs: GraphInputs,
                         record: PatientRecord, memory: np.ndarray | None = None
                         ) -> list[np.ndarray]:
    """Eval-mode score vectors for visits 2..T of one patient."""
    if memory is None:
        memory = eval_memory_keys(params, graphs)
    tape = Tape(training=False, dtype=np.float32)
    mem = tape.constant(memory)
    queries = encode_queries(tape, params, record.visits)
    rows = []
    for t in range(2, len(record.visits) + 1):
        _, scores = forward_visit(tape, params, queries, record.visits, t, mem)
        rows.append(scores.data.copy())
    return rows


def metrics_from_predictions(score_rows: list[np.ndarray],
                             label_rows: list[np.ndarray],
                             threshold: float, ddi_graph: DdiGraph) -> Metrics:
    """Aggregate per-visit score/label vectors into the metric suite:
    macro Jaccard/F1/average-precision, pooled interaction rate."""
    pred_sets: list[np.ndarray] = []
    jaccards: list[float] = []
    f1s: list[float] = []
    for scores, labels in zip(score_rows, label_rows):
        true = np.flatnonzero(labels)
        pred = recommended_set(scores, threshold)
        pred_sets.append(pred)
        jaccards.append(jaccard_score(pred, true))
        f1s.append(f1_score(pred, true))
    pr, aps, skipped = prauc(score_rows, label_rows)
    return Metrics(
        jaccard=float(np.mean(jaccards)) if jaccards else 0.0,
        f1=float(np.mean(f1s)) if f1s else 0.0,
        prauc=pr,
        ddi_rate=ddi_rate(pred_sets, ddi_graph),
        n_visits=len(jaccards),
        prauc_skipped=skipped,
        per_visit_jaccard=np.asarray(jaccards),
        per_visit_f1=np.asarray(f1s),
        per_visit_ap=aps,
    )


def evaluate(params: ModelParams, records: list[PatientRecord],
             graphs: GraphInputs, ddi_graph: DdiGraph) -> Metrics:
    """Dropout-off metrics over every visit with history (t >= 2)."""
    memory = eval_memory_keys(params, graphs)
    score_rows: list[np.ndarray] = []
    label_rows: list[np.ndarray] = []
    for record in records:
        rows = predict_visit_scores(params, graphs, record, memory=memory)
        for scores, visit in zip(rows, record.visits[1:]):
            score_rows.append(scores)
            label_rows.append(visit.medications.astype(np.int8))
    return metrics_from_predictions(score_rows, label_rows,
                                    params.config.decision_threshold, ddi_graph)


def prevalence_topk(records: list[PatientRecord], n_rx: int, k: int | None = None
                    ) -> np.ndarray:
    """The k most frequent drugs in the given records (k defaults to the
    rounded mean medications per visit) - the static baseline predictor."""
    counts = np.zeros(n_rx, dtype=np.int64)
    n_visits = 0
    for record in records:
        for visit in record.visits:
            counts += visit.medications
            n_visits += 1
    if k is None:
        k = max(1, int(round(counts.sum() / max(1, n_visits))))
    order = np.lexsort((np.arange(n_rx), -counts))
    return np.sort(order[:k])


def baseline_metrics(records: list[PatientRecord], pred: np.ndarray,
                     ddi_graph: DdiGraph) -> Metrics:
    """Metrics of a constant prediction set over visits t >= 2."""
    jaccards, f1s, sets = [], [], []
    for record in records:
        for visit in record.visits[1:]:
            true = visit.med_indices()
            jaccards.append(jaccard_score(pred, true))
            f1s.append(f1_score(pred, true))
            sets.append(pred)
    return Metrics(jaccard=float(np.mean(jaccards)), f1=float(np.mean(f1s)),
                   prauc=0.0, ddi_rate=ddi_rate(sets, ddi_graph),
                   n_visits=len(jaccards))


# ----------------------------------------------------------------------- train

def train(model_config: ModelConfig, train_config: TrainConfig,
          train_records: list[PatientRecord], val_records: list[PatientRecord],
          vocabs: Vocabs, ehr_graph: EhrGraph, ddi_graph: DdiGraph,
          log=None) -> TrainResult:
    """Adam over per-batch mean visit loss, patients shuffled each epoch,
    early stopping on validation Jaccard; returns the best checkpoint's
    parameters."""
    train_config.validate()
    model_config = replace(model_config, variant=train_config.variant)
    model_config.validate()
    seed = train_config.seed
    params = init_params(model_config, len(vocabs.diagnosis), len(vocabs.procedure),
                         len(vocabs.medication), seed=seed)
    graphs = GraphInputs.build(ehr_graph, ddi_graph)
    optimizer = Adam(params.parameter_list(), lr=train_config.lr)
    shuffle_rng = np.random.default_rng([seed, 4])
    gamma = model_config.ddi_loss_weight

    history: list[EpochStats] = []
    best = params.copy()
    best_val = -1.0
    best_epoch = 0
    stale = 0
    stopped_early = False

    for epoch in range(1, train_config.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_records))
        epoch_losses: list[float] = []
        epoch_bces: list[float] = []
        for batch_no, start in enumerate(range(0, len(order), train_config.batch_size)):
            batch = [train_records[i] for i in order[start:start + train_config.batch_size]]
            tape = Tape(training=True, dtype=np.float32,
                        rng=np.random.default_rng([seed, 5, epoch, batch_no]))
            try:
                memory = compute_memory_keys(tape, params, graphs)
                total = None
                n_visits = 0
                for record in batch:
                    queries = encode_queries(tape, params, record.visits)
                    for t in range(2, len(record.visits) + 1):
                        logits, scores = forward_visit(tape, params, queries,
                                                       record.visits, t, memory)
                        loss, bce, _ = visit_loss(
                            tape, logits, scores,
                            record.visits[t - 1].medications.astype(np.float64),
                            graphs.ddi_adj, gamma)
                        epoch_losses.append(float(loss.data))
                        epoch_bces.append(float(bce.data))
                        total = loss if total is None else tape.add(total, loss)
                        n_visits += 1
                if total is None:
                    continue
                batch_loss = tape.mul_scalar(total, 1.0 / n_visits)
                optimizer.zero_grad()
                tape.backward(batch_loss)
                optimizer.step()
            except NonFiniteError as exc:
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}: {exc}") from exc
        val = evaluate(params, val_records, graphs, ddi_graph)
        stats = EpochStats(epoch=epoch,
                           train_loss=float(np.mean(epoch_losses)),
                           train_bce=float(np.mean(epoch_bces)),
                           val_jaccard=val.jaccard)
        history.append(stats)
        if log:
            log(f"epoch {epoch:3d}  loss {stats.train_loss:.4f}  "
                f"bce {stats.train_bce:.4f}  val jaccard {stats.val_jaccard:.4f}")
        if val.jaccard > best_val:
            best_val = val.jaccard
            best = params.copy()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= train_config.patience:
                stopped_early = True
                break
    return TrainResult(params=best, history=history, best_epoch=best_epoch,
                       best_val_jaccard=best_val, stopped_early=stopped_early)
