"""Acceptance gate: one test per release criterion, at the stated tolerances
and runtime budgets. Each criterion prints a PASS/FAIL line."""

import json
import time

import numpy as np
from click.testing import CliRunner
from fastapi.testclient import TestClient

from builders import LAYER_BUILDERS, TINY, tiny_graphs, tiny_params, tiny_visits
from oracles import (
    average_precision_brute,
    dense_gat,
    f1_brute,
    jaccard_brute,
    l_ddi_brute,
)

from medrec.cli import cli
from medrec.ddigraph import (
    DdiGraph,
    build_ddi_graph,
    build_ehr_graph,
    ddi_rate,
    generate_synthetic_ddi,
    to_edge_index,
)
from medrec.ehrdata import (
    CodeVocab,
    GeneratorConfig,
    Vocabs,
    dataset_moments,
    generate_synthetic,
    split_dataset,
)
from medrec.model import (
    ForwardAux,
    GraphInputs,
    ModelConfig,
    compute_memory_keys,
    encode_queries,
    forward_visit,
    gat_forward,
    init_params,
    mhca_fuse,
    save_checkpoint,
    visit_loss,
)
from medrec.numcore import Tape, gradcheck
from medrec.serveapi import ServiceState, create_app
from medrec.traineval import (
    TrainConfig,
    average_precision,
    baseline_metrics,
    evaluate,
    f1_score,
    jaccard_score,
    prevalence_topk,
    train,
)


def report(name: str, ok: bool, detail: str = "") -> None:
    print(f"[acceptance] {'PASS' if ok else 'FAIL'} {name}" +
          (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------- criterion 1

def test_gradient_suite():
    """Every trainable layer: finite-difference gradcheck < 1e-4 on f64,
    >= 20 seeds each, under 2 minutes."""
    start = time.monotonic()
    worst = {}
    for layer, builder in LAYER_BUILDERS.items():
        errs = []
        for seed in range(20):
            build, points = builder(seed)
            errs.append(gradcheck(build, points, h=1e-5))
        worst[layer] = max(errs)
    elapsed = time.monotonic() - start
    ok = all(err < 1e-4 for err in worst.values()) and elapsed < 120
    detail = f"{elapsed:.0f}s, worst " + \
        ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    report("gradient suite", ok, detail)


# ---------------------------------------------------------------- criterion 2

def test_oracle_suite_gat():
    """GAT equals the dense masked-softmax oracle: 500 cases, <= 6 nodes,
    atol 1e-6."""
    worst = 0.0
    for case in range(500):
        rng = np.random.default_rng(case)
        params = tiny_params(seed=case)
        n = int(rng.integers(1, 7))
        adj = np.triu((rng.random((n, n)) < 0.45).astype(np.uint8), 1)
        adj = adj | adj.T
        x = rng.normal(size=(n, TINY.emb_dim))
        tape = Tape(training=False, dtype=np.float64)
        out = gat_forward(tape, params, tape.constant(x), to_edge_index(adj))
        expect = dense_gat(
            x, [params["gat.h0.w"].data, params["gat.h1.w"].data],
            [params["gat.h0.a"].data, params["gat.h1.a"].data],
            adj, TINY.leaky_relu_slope)
        worst = max(worst, float(np.abs(out.data - expect).max()))
    report("oracle suite: GAT vs dense mask", worst < 1e-6, f"max abs err {worst:.1e}")


def test_oracle_suite_metrics():
    """Jaccard/F1/PRAUC/DDI-rate equal brute-force oracles: 1000 cases,
    vocab <= 10, atol 1e-12."""
    worst = 0.0
    rate_sets, rate_graph_edges = [], set()
    for case in range(1000):
        rng = np.random.default_rng(10_000 + case)
        n = int(rng.integers(2, 11))
        pred = set(rng.choice(n, size=rng.integers(0, n + 1), replace=False).tolist())
        true = set(rng.choice(n, size=rng.integers(0, n + 1), replace=False).tolist())
        worst = max(worst, abs(jaccard_score(pred, true) - jaccard_brute(pred, true)))
        worst = max(worst, abs(f1_score(pred, true) - f1_brute(pred, true)))
        scores = np.round(rng.random(n), 1) if case % 3 == 0 else rng.random(n)
        labels = (rng.random(n) < 0.5).astype(int)
        if labels.sum():
            worst = max(worst, abs(average_precision(scores, labels) -
                                   average_precision_brute(scores.tolist(),
                                                           labels.tolist())))
        # pooled interaction-rate case
        vocab = CodeVocab.from_codes("medication", [f"A{i:02d}B" for i in range(10)])
        adj = np.triu((rng.random((10, 10)) < 0.3).astype(np.uint8), 1)
        adj = adj | adj.T
        graph = DdiGraph(vocab=vocab, adjacency=adj, selected_types=(), edge_types={})
        sets = [set(rng.choice(10, size=rng.integers(0, 6), replace=False).tolist())
                for _ in range(4)]
        inter = tot = 0
        for s in sets:
            ss = sorted(s)
            for i in range(len(ss)):
                for j in range(i + 1, len(ss)):
                    tot += 1
                    inter += int(adj[ss[i], ss[j]])
        expect = inter / tot if tot else 0.0
        worst = max(worst, abs(ddi_rate(sets, graph) - expect))
    report("oracle suite: metrics vs brute force", worst < 1e-12,
           f"max abs err {worst:.1e}")


def test_oracle_suite_l_ddi():
    """Pair-penalty term equals the brute-force double loop, atol 1e-9."""
    worst = 0.0
    for case in range(300):
        rng = np.random.default_rng(20_000 + case)
        n = int(rng.integers(2, 12))
        adj = np.triu((rng.random((n, n)) < 0.4).astype(np.float64), 1)
        adj = adj + adj.T
        logits_np = rng.normal(size=n) * 2
        tape = Tape(training=False, dtype=np.float64)
        logits = tape.tensor(logits_np, requires_grad=True)
        scores = tape.sigmoid(logits)
        _, _, l_ddi = visit_loss(tape, logits, scores, np.zeros(n), adj, gamma=1.0)
        worst = max(worst, abs(float(l_ddi.data) - l_ddi_brute(scores.data, adj)))
    report("oracle suite: pair penalty vs double loop", worst < 1e-9,
           f"max abs err {worst:.1e}")


# ---------------------------------------------------------------- criterion 3

def test_attention_invariants():
    """All attention distributions sum to 1 +- 1e-6 over 1000 random forward
    passes; three identical tokens attend uniformly and produce identical
    output tokens (atol 1e-6)."""
    worst = 0.0
    for case in range(1000):
        rng = np.random.default_rng(30_000 + case)
        params = tiny_params(seed=case, dtype=np.float64)
        graphs = tiny_graphs(seed=case % 50)
        visits = tiny_visits(seed=case % 97)
        tape = Tape(training=False, dtype=np.float64)
        aux = ForwardAux()
        memory = compute_memory_keys(tape, params, graphs, aux=aux)
        queries = encode_queries(tape, params, visits)
        forward_visit(tape, params, queries, visits, 2, memory, aux=aux)
        n = graphs.ddi_adj.shape[0]
        for alpha in aux.gat_attention:
            sums = np.zeros(n)
            np.add.at(sums, aux.gat_segments, alpha)
            worst = max(worst, float(np.abs(sums - 1.0).max()))
        worst = max(worst, abs(float(aux.memory_attention.sum()) - 1.0))
        if aux.dynamic_attention is not None:
            worst = max(worst, abs(float(aux.dynamic_attention.sum()) - 1.0))
        for attn in aux.mhca_attention:
            worst = max(worst, float(np.abs(attn.sum(axis=1) - 1.0).max()))
    ok_sums = worst < 1e-6

    params = tiny_params(seed=123, dtype=np.float64)
    rng = np.random.default_rng(9)
    tok = rng.normal(size=TINY.emb_dim)
    q = np.linalg.lstsq(params["proj_query.w"].data.T, tok, rcond=None)[0]
    tape = Tape(training=False, dtype=np.float64)
    fused = mhca_fuse(tape, params, tape.constant(q), tape.constant(tok),
                      tape.constant(tok))
    tokens_out = fused.data.reshape(3, TINY.emb_dim)
    spread = max(float(np.abs(tokens_out[0] - tokens_out[1]).max()),
                 float(np.abs(tokens_out[1] - tokens_out[2]).max()))
    ok_identical = spread < 1e-6
    report("attention invariants", ok_sums and ok_identical,
           f"worst sum dev {worst:.1e}, identical-token spread {spread:.1e}")


# ---------------------------------------------------------------- criterion 4

def test_generator_calibration():
    """Defaults, seed 42: sample means within +-5% of the published cohort
    moments over 6350 patients, under 30 s."""
    start = time.monotonic()
    records, _ = generate_synthetic(GeneratorConfig(), seed=42)
    elapsed = time.monotonic() - start
    moments = dataset_moments(records)
    targets = {"visits_per_patient": 2.36, "diagnoses_per_visit": 10.51,
               "procedures_per_visit": 3.84, "medications_per_visit": 8.80}
    rel = {k: abs(moments[k] - v) / v for k, v in targets.items()}
    ok = len(records) == 6350 and all(r < 0.05 for r in rel.values()) and elapsed < 30
    report("generator calibration", ok,
           f"{elapsed:.1f}s, rel errs " + ", ".join(f"{k}={v:.3f}" for k, v in rel.items()))


# ---------------------------------------------------------------- criterion 5

def learning_setup(seed: int):
    cfg = GeneratorConfig(n_patients=500, n_diagnosis=80, n_procedure=40,
                          n_medication=50, mean_visits=3.0, mean_diagnoses=5.0,
                          mean_medications=7.0, affinity_per_dx=2,
                          affinity_strength=1.0, seed=seed)
    records, vocabs = generate_synthetic(cfg, seed=seed)
    train_r, val_r, test_r = split_dataset(records, seed=seed)
    ddi = build_ddi_graph(generate_synthetic_ddi(vocabs.medication, 60, 4, seed),
                          vocabs.medication, top_k=40)
    ehr = build_ehr_graph(train_r, vocabs.medication)
    return vocabs, train_r, val_r, test_r, ddi, ehr


def test_learning_check():
    """500 patients, 20 epochs, full variant: final training BCE <= 0.7x the
    first epoch's, and test Jaccard beats the top-k prevalence baseline on
    3 of 3 seeds. Under 10 minutes."""
    start = time.monotonic()
    lines = []
    ok = True
    for seed in (0, 1, 2):
        vocabs, train_r, val_r, test_r, ddi, ehr = learning_setup(seed)
        mc = ModelConfig(emb_dim=64, gru_hidden=64, dropout=0.3)
        tc = TrainConfig(max_epochs=20, patience=19, batch_size=2, seed=seed)
        result = train(mc, tc, train_r, val_r, vocabs, ehr, ddi)
        graphs = GraphInputs.build(ehr, ddi)
        metrics = evaluate(result.params, test_r, graphs, ddi)
        base = baseline_metrics(
            test_r, prevalence_topk(train_r, len(vocabs.medication)), ddi)
        ratio = result.history[-1].train_bce / result.history[0].train_bce
        seed_ok = ratio <= 0.7 and metrics.jaccard > base.jaccard
        ok = ok and seed_ok
        lines.append(f"seed {seed}: bce ratio {ratio:.2f}, jaccard "
                     f"{metrics.jaccard:.3f} vs baseline {base.jaccard:.3f}")
    elapsed = time.monotonic() - start
    ok = ok and elapsed < 600
    report("learning check", ok, f"{elapsed:.0f}s; " + "; ".join(lines))


# ---------------------------------------------------------------- criterion 6

def test_ddi_regularization_direction():
    """Paired seeds: the gamma=1 run's test interaction rate is <= the
    gamma=0 run's in at least 2 of 3 pairs."""
    wins = 0
    lines = []
    for seed in (0, 1, 2):
        cfg = GeneratorConfig(n_patients=300, n_diagnosis=60, n_procedure=30,
                              n_medication=40, mean_visits=3.0, mean_diagnoses=5.0,
                              mean_medications=7.0, affinity_per_dx=2,
                              affinity_strength=1.0, seed=seed)
        records, vocabs = generate_synthetic(cfg, seed=seed)
        train_r, val_r, test_r = split_dataset(records, seed=seed)
        ddi = build_ddi_graph(generate_synthetic_ddi(vocabs.medication, 80, 8, seed),
                              vocabs.medication, top_k=80)
        ehr = build_ehr_graph(train_r, vocabs.medication)
        graphs = GraphInputs.build(ehr, ddi)
        rates = {}
        for gamma in (0.0, 1.0):
            mc = ModelConfig(emb_dim=32, gru_hidden=32, dropout=0.3,
                             ddi_loss_weight=gamma)
            tc = TrainConfig(max_epochs=20, patience=19, batch_size=2, seed=seed)
            result = train(mc, tc, train_r, val_r, vocabs, ehr, ddi)
            rates[gamma] = evaluate(result.params, test_r, graphs, ddi).ddi_rate
        win = rates[1.0] <= rates[0.0]
        wins += win
        lines.append(f"seed {seed}: {rates[0.0]:.4f} -> {rates[1.0]:.4f}")
    report("ddi regularization direction", wins >= 2,
           f"{wins}/3 pairs; " + "; ".join(lines))


# ---------------------------------------------------------------- criterion 7

TINY_CLI_CONFIG = {
    "data": {"n_patients": 24, "n_diagnosis": 25, "n_procedure": 12,
             "n_medication": 12, "mean_diagnoses": 3.0, "mean_procedures": 1.5,
             "mean_medications": 3.0, "ddi_top_k": 15},
    "model": {"emb_dim": 8, "gru_hidden": 8, "dropout": 0.2},
    "train": {"max_epochs": 2, "patience": 1, "batch_size": 8},
}

TABLE1_ROWS = {
    "gcn_baseline": {"ddi_rate": 0.0806, "jaccard": 0.4729,
                     "prauc": 0.7371, "f1": 0.6305},
    "gat_mhca": {"ddi_rate": 0.0798, "jaccard": 0.4755,
                 "prauc": 0.7443, "f1": 0.6331},
}


def _cli_workspace(tmp_path):
    runner = CliRunner()
    config = tmp_path / "config.json"
    config.write_text(json.dumps(TINY_CLI_CONFIG))
    data = tmp_path / "data.jsonl"
    ddi = tmp_path / "ddi.tsv"
    res = runner.invoke(cli, ["--config", str(config), "generate", "--patients",
                              "24", "--seed", "5", "--out", str(data),
                              "--ddi-out", str(ddi), "--ddi-types", "20",
                              "--ddi-pairs-per-type", "3"])
    assert res.exit_code == 0, res.output
    return runner, config, data, ddi


def test_ablation_report_parity(tmp_path):
    """Three variant runs produce a 3x4 report; paper-valued fixtures
    reproduce the published rows verbatim."""
    runner, config, data, ddi = _cli_workspace(tmp_path)
    run_dirs = []
    for variant in ("gcn_baseline", "gat_only", "gat_mhca"):
        run_dir = tmp_path / "runs" / variant
        run_dir.mkdir(parents=True)
        res = runner.invoke(cli, ["--config", str(config), "--quiet", "train",
                                  "--data", str(data), "--ddi", str(ddi),
                                  "--variant", variant, "--seed", "3",
                                  "--out", str(run_dir / "model.ckpt")])
        assert res.exit_code == 0, res.output
        run_dirs.append(str(run_dir))
    res = runner.invoke(cli, ["ablate", *run_dirs, "--out-dir",
                              str(tmp_path / "report")])
    assert res.exit_code == 0, res.output
    body = [l for l in res.output.splitlines()
            if l.split() and l.split()[0] in ("gcn_baseline", "gat_only", "gat_mhca")]
    shape_ok = len(body) == 3 and all(len(l.split()) == 6 for l in body)

    fixture_dir = tmp_path / "fixture_runs"
    fixture_dir.mkdir()
    for variant, values in TABLE1_ROWS.items():
        (fixture_dir / f"{variant}.metrics.json").write_text(json.dumps(
            {**values, "variant": variant, "seed": 0, "n_visits": 1}))
    res = runner.invoke(cli, ["ablate", str(fixture_dir), "--out-dir",
                              str(tmp_path / "fixture_report")])
    assert res.exit_code == 0, res.output
    lines = {l.split()[0]: l.split()[2:] for l in res.output.splitlines()
             if l.split() and l.split()[0] in TABLE1_ROWS}
    verbatim_ok = (lines["gcn_baseline"] == ["0.0806", "0.4729", "0.7371", "0.6305"]
                   and lines["gat_mhca"] == ["0.0798", "0.4755", "0.7443", "0.6331"])
    report("ablation report parity", shape_ok and verbatim_ok,
           f"3x4 shape={shape_ok}, verbatim rows={verbatim_ok}")


# ---------------------------------------------------------------- criterion 8

def test_train_determinism(tmp_path):
    """`medrec train` with a fixed seed twice gives byte-identical metrics."""
    runner, config, data, ddi = _cli_workspace(tmp_path)
    payloads = []
    for name in ("one", "two"):
        out = tmp_path / f"{name}.ckpt"
        res = runner.invoke(cli, ["--config", str(config), "--quiet", "train",
                                  "--data", str(data), "--ddi", str(ddi),
                                  "--seed", "11", "--out", str(out)])
        assert res.exit_code == 0, res.output
        payloads.append(out.with_suffix(".metrics.json").read_bytes())
    report("train determinism", payloads[0] == payloads[1],
           f"{len(payloads[0])} bytes each")


# ---------------------------------------------------------------- criterion 9

def test_service_contract(tmp_path):
    """Fixture checkpoint + 3-drug interaction fixture: red-flag request is
    referred with no recommendations, the fixture pair warns, empty diagnoses
    is a 400. No UI involved."""
    vocabs = Vocabs(
        diagnosis=CodeVocab.from_codes("diagnosis", ["D0", "D1", "D2", "D3"]),
        procedure=CodeVocab.from_codes("procedure", ["P0", "P1"]),
        medication=CodeVocab.from_codes("medication", ["N02B", "A01A", "C03C"]),
    )
    params = init_params(ModelConfig(emb_dim=4, gru_hidden=3, dropout=0.0),
                         4, 2, 3, seed=7, dtype=np.float32)
    params["out.b"].data[:] = 5.0
    ckpt = tmp_path / "model.ckpt"
    save_checkpoint(ckpt, params, vocabs,
                    extra={"ehr_adjacency": [[0, 1]], "ddi_top_k": 90})
    ddi = tmp_path / "ddi.tsv"
    ddi.write_text("atc3_a\tatc3_b\tinteraction_type\tseverity\n"
                   "N02B\tA01A\tbleeding-risk\t0.9\n")
    client = TestClient(create_app(ServiceState.load(ckpt, ddi)))

    health_ok = client.get("/healthz").json()["status"] == "ok"

    red = client.post("/api/v1/recommend",
                      json={"diagnoses": ["D0"], "red_flags": ["chest_pain"]}).json()
    red_ok = red["triage"] == "refer_to_doctor" and red["recommendations"] == []

    resp = client.post("/api/v1/recommend",
                       json={"diagnoses": ["D0", "D1"],
                             "current_medications": ["N02B"]}).json()
    pairs = {frozenset((w["drug_a"], w["drug_b"])) for w in resp["ddi_warnings"]}
    warn_ok = frozenset(("N02B", "A01A")) in pairs and bool(resp["disclaimer"])

    check = client.post("/api/v1/ddi-check",
                        json={"medications": ["N02B", "A01A"]}).json()
    check_ok = len(check["warnings"]) == 1

    code_400 = client.post("/api/v1/recommend", json={"diagnoses": []}).status_code
    report("service contract",
           health_ok and red_ok and warn_ok and check_ok and code_400 == 400,
           f"healthz={health_ok}, red flag={red_ok}, warning={warn_ok}, "
           f"ddi-check={check_ok}, empty dx -> {code_400}")
