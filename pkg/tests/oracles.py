"""Independent brute-force reference implementations used to verify the
library. These deliberately avoid the production code paths: dense masked
softmax for graph attention, explicit loops for metrics and pair losses."""

import numpy as np


def softmax_rows(x):
    s = x - x.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def dense_gat(x, head_ws, head_as, adjacency, slope):
    """Dense attention encoder: all-pairs logits, non-edges masked with -inf
    before the softmax (self-loops always allowed)."""
    n = x.shape[0]
    mask = adjacency.astype(bool) | np.eye(n, dtype=bool)
    outs = []
    for w, a in zip(head_ws, head_as):
        wx = x @ w
        dh = wx.shape[1]
        raw = wx @ a[:dh]
        logits = raw[:, None] + (wx @ a[dh:])[None, :]
        logits = np.where(logits > 0, logits, slope * logits)
        masked = np.where(mask, logits, -np.inf)
        alpha = softmax_rows(masked)
        alpha = np.where(mask, alpha, 0.0)
        outs.append(alpha @ wx)
    return elu(np.concatenate(outs, axis=1))


def dense_gcn(x, w, adjacency):
    a_hat = adjacency.astype(np.float64) + np.eye(adjacency.shape[0])
    d = a_hat.sum(axis=1)
    norm = a_hat / np.sqrt(np.outer(d, d))
    return np.tanh(norm @ x @ w)


def memory_read_np(q, memory, proj):
    a = softmax_rows(memory @ (q @ proj))
    return memory.T @ a, a


def dynamic_read_np(q, hist_q, hist_meds, memory):
    if hist_q.shape[0] == 0:
        return np.zeros(memory.shape[1]), None
    a = softmax_rows(hist_q @ q)
    u = hist_meds.T @ a
    return memory.T @ (u / max(1.0, u.sum())), a


def mhca_np(q, fact1, fact2, proj, head_wq, head_wk, head_wv, wo):
    q_tok = q @ proj
    tokens = np.stack([q_tok, fact1, fact2])
    outs = []
    attns = []
    for wq, wk, wv in zip(head_wq, head_wk, head_wv):
        qh, kh, vh = tokens @ wq, tokens @ wk, tokens @ wv
        attn = softmax_rows(qh @ kh.T / np.sqrt(wq.shape[1]))
        attns.append(attn)
        outs.append(attn @ vh)
    fused = tokens + np.concatenate(outs, axis=1) @ wo
    return fused.reshape(-1), attns


def l_ddi_brute(yhat, adjacency):
    n = yhat.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += yhat[i] * yhat[j] * adjacency[i, j]
    return 2.0 * total / (n * (n - 1))


def bce_brute(yhat, y):
    return float(np.mean(-(y * np.log(yhat) + (1 - y) * np.log(1 - yhat))))


def jaccard_brute(pred, true):
    pred, true = set(pred), set(true)
    if not pred and not true:
        return 1.0
    return len(pred & true) / len(pred | true)


def f1_brute(pred, true):
    pred, true = set(pred), set(true)
    tp = len(pred & true)
    p = tp / len(pred) if pred else 0.0
    r = tp / len(true) if true else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0


def average_precision_brute(scores, labels):
    """Precision accumulated at every recall step, ties broken by index."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    n_pos = int(sum(labels))
    hits = 0
    ap = 0.0
    for rank, idx in enumerate(order, start=1):
        if labels[idx]:
            hits += 1
            ap += (hits / rank) * (1.0 / n_pos)
    return ap
