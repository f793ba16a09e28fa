"""Independent reference implementations used as test oracles.

Everything here is written against the mathematical definitions with
plain Python loops, deliberately sharing no code with the package.
"""

import math

import numpy as np

LN_EPS = 1e-5


def brute_cross_entropy(logits_row, target: int) -> float:
    row = [float(x) for x in logits_row]
    m = max(row)
    total = 0.0
    for x in row:
        total += math.exp(x - m)
    return m + math.log(total) - row[target]


def straight_line_forward(params, config, ids):
    """Transformer forward as explicit scalar loops; no numpy matmuls."""
    d = config.dim
    heads = config.heads
    hd = d // heads
    V = config.vocab_size
    L = len(ids)
    tok = params["tok_emb"]
    pos = params["pos_emb"]

    h = [[float(tok[ids[i]][j]) + float(pos[i][j]) for j in range(d)] for i in range(L)]

    def layer_norm(vec, g, b):
        mu = sum(vec) / len(vec)
        var = sum((x - mu) ** 2 for x in vec) / len(vec)
        inv = 1.0 / math.sqrt(var + LN_EPS)
        return [float(g[j]) * (vec[j] - mu) * inv + float(b[j]) for j in range(len(vec))]

    def affine(vec, w, b=None):
        out = []
        for j in range(w.shape[1]):
            s = 0.0
            for k in range(w.shape[0]):
                s += vec[k] * float(w[k][j])
            if b is not None:
                s += float(b[j])
            out.append(s)
        return out

    for li in range(config.layers):
        p = f"layers.{li}."
        a = [layer_norm(h[i], params[p + "ln1.g"], params[p + "ln1.b"]) for i in range(L)]
        q = [affine(a[i], params[p + "attn.wq"], params[p + "attn.bq"]) for i in range(L)]
        k = [affine(a[i], params[p + "attn.wk"]) for i in range(L)]
        v = [affine(a[i], params[p + "attn.wv"], params[p + "attn.bv"]) for i in range(L)]

        ctx = [[0.0] * d for _ in range(L)]
        for head in range(heads):
            lo = head * hd
            for i in range(L):
                scores = []
                for j in range(L):
                    s = 0.0
                    for t in range(hd):
                        s += q[i][lo + t] * k[j][lo + t]
                    scores.append(s / math.sqrt(hd))
                m = max(scores)
                exps = [math.exp(s - m) for s in scores]
                z = sum(exps)
                probs = [e / z for e in exps]
                for t in range(hd):
                    acc = 0.0
                    for j in range(L):
                        acc += probs[j] * v[j][lo + t]
                    ctx[i][lo + t] = acc
        proj = [affine(ctx[i], params[p + "attn.wo"], params[p + "attn.bo"]) for i in range(L)]
        h = [[h[i][j] + proj[i][j] for j in range(d)] for i in range(L)]

        f = [layer_norm(h[i], params[p + "ln2.g"], params[p + "ln2.b"]) for i in range(L)]
        z1 = [affine(f[i], params[p + "ff.w1"], params[p + "ff.b1"]) for i in range(L)]
        g1 = [[0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0))) for x in row] for row in z1]
        ffo = [affine(g1[i], params[p + "ff.w2"], params[p + "ff.b2"]) for i in range(L)]
        h = [[h[i][j] + ffo[i][j] for j in range(d)] for i in range(L)]

    hf = [layer_norm(h[i], params["final_ln.g"], params["final_ln.b"]) for i in range(L)]
    logits = [affine(hf[i], params["out.w"], params["out.b"]) for i in range(L)]
    return np.array(logits)


def finite_difference_grads(loss_fn, params, name: str, indices, h: float = 1e-3):
    """Central finite differences of loss_fn() wrt chosen coordinates of
    params[name]; loss_fn must read params by reference."""
    flat = params[name].reshape(-1)
    out = {}
    for idx in indices:
        orig = flat[idx]
        flat[idx] = orig + h
        lp = loss_fn()
        flat[idx] = orig - h
        lm = loss_fn()
        flat[idx] = orig
        out[idx] = (lp - lm) / (2.0 * h)
    return out
