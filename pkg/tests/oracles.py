"""Straight-line reference implementations used as test oracles.

Everything here is written with scalar loops and the ``math`` module so it
shares no code path with the vectorised package implementation.
"""

import math


def matvec(x, W, b):
    """x (n_in) times W (n_in, n_out) plus b (n_out), as Python floats."""
    n_in, n_out = len(W), len(W[0])
    return [sum(x[i] * W[i][j] for i in range(n_in)) + b[j] for j in range(n_out)]


def relu(v):
    return [a if a > 0 else 0.0 for a in v]


def leaky(v, alpha=0.01):
    return [a if a > 0 else alpha * a for a in v]


def softplus(a):
    return math.log1p(math.exp(-abs(a))) + max(a, 0.0)


def log_softmax(v):
    m = max(v)
    lse = m + math.log(sum(math.exp(a - m) for a in v))
    return [a - lse for a in v]


def softmax(v):
    m = max(v)
    e = [math.exp(a - m) for a in v]
    s = sum(e)
    return [a / s for a in e]


def ce(logits, label):
    n = len(logits)
    return -log_softmax(logits)[label] / n


def prior(f, mu, sigma):
    """Sum over every element of the Gaussian NLL; nested lists (P, D)."""
    total = 0.0
    for fr, mr, sr in zip(f, mu, sigma):
        for x, m, s in zip(fr, mr, sr):
            total += 0.5 * math.log(2 * math.pi * s * s) + (x - m) ** 2 / (2 * s * s)
    return total


def mse(target, recon):
    """(P, C) nested lists; sum of squared error divided by P."""
    total = 0.0
    for tr, rr in zip(target, recon):
        for a, b in zip(tr, rr):
            total += (a - b) ** 2
    return total / len(target)


def interp_weights(n_in, n_out):
    """Half-pixel-centre linear interpolation weights as a dense list."""
    rows = []
    for o in range(n_out):
        src = (o + 0.5) * n_in / n_out - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        fr = src - lo
        row = [0.0] * n_in
        row[lo] += 1 - fr
        row[hi] += fr
        rows.append(row)
    return rows


def anomaly_map(orig, recon, out_h, out_w):
    """orig/recon as (C, H, W) nested lists."""
    C, H, W = len(orig), len(orig[0]), len(orig[0][0])
    s = [[sum((orig[c][i][j] - recon[c][i][j]) ** 2 for c in range(C)) for j in range(W)] for i in range(H)]
    ry = interp_weights(H, out_h)
    rx = interp_weights(W, out_w)
    out = [[0.0] * out_w for _ in range(out_h)]
    for y in range(out_h):
        for x in range(out_w):
            acc = 0.0
            for i in range(H):
                if ry[y][i] == 0.0:
                    continue
                for j in range(W):
                    acc += ry[y][i] * rx[x][j] * s[i][j]
            out[y][x] = acc
    return out


def auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    acc = 0.0
    for p in pos:
        for n in neg:
            acc += 1.0 if p > n else (0.5 if p == n else 0.0)
    return acc / (len(pos) * len(neg))


def aupr(scores, labels):
    """Exhaustive threshold sweep: for each distinct threshold (descending),
    predict positive when score >= threshold, add precision * recall step."""
    n_pos = sum(labels)
    area, prev_recall = 0.0, 0.0
    for thr in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= thr and y == 1)
        fp = sum(1 for s, y in zip(scores, labels) if s >= thr and y == 0)
        recall = tp / n_pos
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


def inr_forward(z, t, syn, mod):
    """syn/mod: lists of (W, b) as nested lists; both recurrences from z."""
    h, a = list(z), list(z)
    for (Ws, bs), (Wm, bm) in zip(syn, mod):
        a = relu(matvec(a + list(t), Wm, bm))
        pre = matvec(h, Ws, bs)
        h = [ai * math.sin(p) for ai, p in zip(a, pre)]
    return h


def siren_forward(z, syn):
    h = list(z)
    for Ws, bs in syn:
        h = [math.sin(p) for p in matvec(h, Ws, bs)]
    return h


def decode_distribution(q, layers, d, floor=1e-4):
    """q: length-K vector; layers: three (W, b)."""
    (W1, b1), (W2, b2), (W3, b3) = layers
    x = leaky(matvec(q, W1, b1))
    x = leaky(matvec(x, W2, b2))
    x = matvec(x, W3, b3)
    mu = x[:d]
    sigma = [max(softplus(v), floor) for v in x[d:]]
    return mu, sigma


def layer_norm(v, gamma, beta, eps=1e-8):
    m = sum(v) / len(v)
    var = sum((a - m) ** 2 for a in v) / len(v)
    return [(a - m) / math.sqrt(var + eps) * g + b for a, g, b in zip(v, gamma, beta)]


def attention(q_in, k_in, v_in, wq, wk, wv, wo, heads):
    """Multi-head attention over lists of token vectors; w* are (W, b) pairs."""
    Q = [matvec(x, *wq) for x in q_in]
    K = [matvec(x, *wk) for x in k_in]
    V = [matvec(x, *wv) for x in v_in]
    width = len(Q[0])
    dk = width // heads
    out = [[0.0] * width for _ in Q]
    for h in range(heads):
        sl = range(h * dk, (h + 1) * dk)
        for i, qi in enumerate(Q):
            logits = [sum(qi[c] * kj[c] for c in sl) / math.sqrt(dk) for kj in K]
            p = softmax(logits)
            for c in sl:
                out[i][c] = sum(pj * vj[c] for pj, vj in zip(p, V))
    return [matvec(o, *wo) for o in out]


def encoder_layer(x, pos, attn_w, heads, ff1, ff2, ln1, ln2):
    """One post-norm encoder layer without dropout; ``pos`` added to queries and keys."""
    qk = [[a + b for a, b in zip(xi, pi)] for xi, pi in zip(x, pos)]
    sa = attention(qk, qk, x, *attn_w, heads)
    x = [layer_norm([a + b for a, b in zip(xi, si)], *ln1) for xi, si in zip(x, sa)]
    ff = [matvec(relu(matvec(xi, *ff1)), *ff2) for xi in x]
    return [layer_norm([a + b for a, b in zip(xi, fi)], *ln2) for xi, fi in zip(x, ff)]
