"""HTTP inference service.

Loads a checkpoint plus an interaction TSV once, then serves recommendation
and interaction-check requests from immutable shared state. Responses always
carry a triage level and a side-effect disclaimer; red-flag symptoms from the
configured urgent list suppress recommendations and refer the user to a
doctor. Nothing about a request is persisted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .ddigraph import DdiGraph, EhrGraph, InteractionPair, build_ddi_graph, \
    check_interactions, load_ddi_tsv
from .ehrdata import Visit, Vocabs
from .model import (
    GraphInputs,
    ModelParams,
    checkpoint_fingerprint,
    encode_queries,
    eval_memory_keys,
    forward_visit,
    load_checkpoint,
    recommended_set,
)
from .numcore import Tape

# urgent situations that must route the user to professional care
DEFAULT_RED_FLAGS = (
    "chest_pain",
    "severe_allergic_reaction",
    "breathing_difficulty",
    "high_fever",
    "stroke_symptoms",
    "severe_abdominal_pain",
)

DISCLAIMER = (
    "Recommended medications can cause side effects. Review each product's "
    "side-effect information before use and consult a pharmacist or doctor "
    "if you take other medications, are pregnant, or symptoms persist or "
    "worsen. This kiosk does not replace professional medical advice."
)

TRIAGE_SELF_CARE = "self_care"
TRIAGE_PHARMACIST = "consult_pharmacist"
TRIAGE_DOCTOR = "refer_to_doctor"


def normalize_flag(raw: str) -> str:
    return raw.strip().lower().replace(" ", "_").replace("-", "_")


@dataclass
class ServeSettings:
    topk: int = 10
    filter_ddi: bool = False
    red_flags: tuple[str, ...] = DEFAULT_RED_FLAGS
    disclaimer: str = DISCLAIMER


@dataclass
class ServiceState:
    settings: ServeSettings = field(default_factory=ServeSettings)
    params: ModelParams | None = None
    vocabs: Vocabs | None = None
    ddi_graph: DdiGraph | None = None
    graphs: GraphInputs | None = None
    memory: np.ndarray | None = None
    model_version: str = ""

    @property
    def loaded(self) -> bool:
        return self.params is not None and self.ddi_graph is not None

    @classmethod
    def load(cls, checkpoint_path, ddi_path,
             settings: ServeSettings | None = None) -> "ServiceState":
        state = cls(settings=settings or ServeSettings())
        params, vocabs, manifest = load_checkpoint(checkpoint_path)
        extra = manifest.get("extra", {})
        n_rx = len(vocabs.medication)
        ehr_adj = np.zeros((n_rx, n_rx), dtype=np.uint8)
        for i, j in extra.get("ehr_adjacency", []):
            ehr_adj[i, j] = ehr_adj[j, i] = 1
        np.fill_diagonal(ehr_adj, 0)
        records = load_ddi_tsv(ddi_path)
        ddi_graph = build_ddi_graph(records, vocabs.medication,
                                    top_k=int(extra.get("ddi_top_k", 90)))
        state.params = params
        state.vocabs = vocabs
        state.ddi_graph = ddi_graph
        state.graphs = GraphInputs.build(EhrGraph(vocab=vocabs.medication,
                                                  adjacency=ehr_adj), ddi_graph)
        state.memory = eval_memory_keys(params, state.graphs)
        state.model_version = checkpoint_fingerprint(checkpoint_path)
        return state


# ------------------------------------------------------------------- payloads

class VisitPayload(BaseModel):
    dx: list[str]
    px: list[str] = []
    rx: list[str] = []


class RecommendRequest(BaseModel):
    diagnoses: list[str]
    procedures: list[str] = []
    history: list[VisitPayload] = []
    current_medications: list[str] = []
    red_flags: list[str] = []


class DdiCheckRequest(BaseModel):
    medications: list[str]


def _warning_payload(pair: InteractionPair) -> dict:
    return {"drug_a": pair.drug_a, "drug_b": pair.drug_b,
            "interaction_type": pair.interaction_type, "severity": pair.severity}


# ------------------------------------------------------------------- handlers

def handle_recommend(state: ServiceState, req: RecommendRequest) -> tuple[int, dict]:
    if not state.loaded:
        return 503, {"error": "model not loaded"}
    if not req.diagnoses:
        return 400, {"error": "diagnoses must be non-empty"}

    vocabs = state.vocabs
    settings = state.settings
    unknown: list[str] = []
    notes: list[str] = []

    def resolve(codes, vocab):
        known = []
        for c in codes:
            if c in vocab.index:
                known.append(vocab.index[c])
            else:
                unknown.append(c)
        return known

    dx_idx = resolve(req.diagnoses, vocabs.diagnosis)
    if not dx_idx:
        return 409, {"error": "no request diagnosis code is in the checkpoint "
                              "vocabulary", "unknown_codes": sorted(set(unknown))}
    px_idx = resolve(req.procedures, vocabs.procedure)
    current_idx = resolve(req.current_medications, vocabs.medication)

    triggered = sorted({normalize_flag(f) for f in req.red_flags}
                       & set(settings.red_flags))

    base = {
        "disclaimer": settings.disclaimer,
        "red_flags_triggered": triggered,
        "unknown_codes": sorted(set(unknown)),
        "notes": notes,
        "model_version": state.model_version,
    }
    if triggered:
        return 200, {**base, "triage": TRIAGE_DOCTOR, "recommendations": [],
                     "ddi_warnings": []}

    n_rx = len(vocabs.medication)
    visits: list[Visit] = []
    for i, past in enumerate(req.history):
        past_dx = resolve(past.dx, vocabs.diagnosis)
        if not past_dx:
            notes.append(f"history visit {i} dropped: no known diagnosis codes")
            continue
        past_px = resolve(past.px, vocabs.procedure)
        multi_hot = np.zeros(n_rx, dtype=np.uint8)
        multi_hot[resolve(past.rx, vocabs.medication)] = 1
        visits.append(Visit(diagnoses=past_dx, procedures=past_px,
                            medications=multi_hot))
    visits.append(Visit(diagnoses=dx_idx, procedures=px_idx,
                        medications=np.zeros(n_rx, dtype=np.uint8)))

    tape = Tape(training=False, dtype=np.float32)
    queries = encode_queries(tape, state.params, visits)
    _, score_tensor = forward_visit(tape, state.params, queries, visits,
                                    len(visits), tape.constant(state.memory))
    scores = score_tensor.data

    tau = state.params.config.decision_threshold
    above = recommended_set(scores, tau)
    ranked = sorted(above.tolist(), key=lambda i: (-scores[i], i))[: settings.topk]

    adj = state.ddi_graph.adjacency
    if settings.filter_ddi:
        kept: list[int] = []
        for i in ranked:
            conflict = any(adj[i, j] for j in current_idx) or \
                any(adj[i, j] for j in kept)
            if conflict:
                notes.append(f"{vocabs.medication.codes[i]} filtered: interaction risk")
            else:
                kept.append(i)
        ranked = kept or ranked[:1]

    warnings = []
    seen = set()
    for i in ranked:
        for j in sorted(set(ranked) | set(current_idx)):
            a, b = min(i, j), max(i, j)
            if a == b or (a, b) in seen or not adj[a, b]:
                continue
            seen.add((a, b))
            itype, sev = state.ddi_graph.edge_types.get((a, b), ("unknown", 0.0))
            warnings.append(_warning_payload(InteractionPair(
                vocabs.medication.codes[a], vocabs.medication.codes[b], itype, sev)))

    recommendations = [
        {"atc3": vocabs.medication.codes[i], "score": float(scores[i]), "rank": rank}
        for rank, i in enumerate(ranked, start=1)
    ]
    triage = TRIAGE_PHARMACIST if warnings else TRIAGE_SELF_CARE
    return 200, {**base, "triage": triage, "recommendations": recommendations,
                 "ddi_warnings": warnings}


def handle_ddi_check(state: ServiceState, medications: list[str]) -> tuple[int, dict]:
    if not state.loaded:
        return 503, {"error": "interaction graph not loaded"}
    pairs, unknown = check_interactions(medications, state.ddi_graph)
    return 200, {"warnings": [_warning_payload(p) for p in pairs],
                 "unknown": unknown}


def handle_healthz(state: ServiceState) -> tuple[int, dict]:
    if not state.loaded:
        return 503, {"status": "unavailable", "model_version": None}
    return 200, {"status": "ok", "model_version": state.model_version}


# ------------------------------------------------------------------------ app

def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="medrec inference service")

    @app.get("/healthz")
    def healthz():
        code, body = handle_healthz(state)
        return JSONResponse(status_code=code, content=body)

    @app.post("/api/v1/recommend")
    def recommend(req: RecommendRequest):
        code, body = handle_recommend(state, req)
        return JSONResponse(status_code=code, content=body)

    @app.post("/api/v1/ddi-check")
    def ddi_check(req: DdiCheckRequest):
        code, body = handle_ddi_check(state, req.medications)
        return JSONResponse(status_code=code, content=body)

    return app
