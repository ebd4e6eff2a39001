"""Independent reference implementations used as test oracles.

Written with scalar loops and the ``math`` module only, so they share no
code path with the package.
"""

import math
from collections import Counter


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def matvec(W, x):
    return [sum(W[i][j] * x[j] for j in range(len(x))) for i in range(len(W))]


def chain(W1, b1, W2, b2, rows):
    """Mean over ``rows`` of tanh(W2 tanh(W1 x + b1) + b2)."""
    out = [0.0] * len(b2)
    for x in rows:
        h = [math.tanh(a + b) for a, b in zip(matvec(W1, x), b1)]
        e = [math.tanh(a + b) for a, b in zip(matvec(W2, h), b2)]
        out = [o + v / len(rows) for o, v in zip(out, e)]
    return out


def gru(words, W_r, W_i, W_a, U_r, U_i, U_a, h0=None):
    d = len(W_r)
    h = list(h0) if h0 is not None else [0.0] * d
    for w in words:
        r = [sig(a + b) for a, b in zip(matvec(W_r, w), matvec(U_r, h))]
        i = [sig(a + b) for a, b in zip(matvec(W_i, w), matvec(U_i, h))]
        rh = [r[k] * h[k] for k in range(d)]
        a = [math.tanh(x + y) for x, y in zip(matvec(W_a, w), matvec(U_a, rh))]
        h = [(1 - i[k]) * h[k] + i[k] * a[k] for k in range(d)]
    return h


def lstm_step(w, h, c, W_u, b_u, W_l, W_p, b_p):
    d = len(h)
    z = [x + y + b for x, y, b in zip(matvec(W_u, w), matvec(W_l, h), b_u)]
    a, i, f, o = z[:d], z[d:2 * d], z[2 * d:3 * d], z[3 * d:]
    c_new = [math.tanh(a[k]) * sig(i[k]) + c[k] * sig(f[k]) for k in range(d)]
    h_new = [math.tanh(c_new[k]) * sig(o[k]) for k in range(d)]
    logits = [x + b for x, b in zip(matvec(W_p, h_new), b_p)]
    mx = max(logits)
    ex = [math.exp(v - mx) for v in logits]
    s = sum(ex)
    return [v / s for v in ex], h_new, c_new


def sqdist(a, b):
    return sum((x - y) ** 2 for x, y in zip(a, b))


def contrastive(phi_v, phi_s, neg_sent_embs, neg_clip_embs, alpha):
    total = sqdist(phi_v, phi_s)
    for e in neg_sent_embs:
        total += max(0.0, alpha - sqdist(phi_v, e))
    for e in neg_clip_embs:
        total += max(0.0, alpha - sqdist(e, phi_s))
    return total / (1 + len(neg_sent_embs) + len(neg_clip_embs))


def _grams(tokens, n):
    out = {}
    for i in range(len(tokens) - n + 1):
        g = " ".join(tokens[i:i + n])
        out[g] = out.get(g, 0) + 1
    return out


def bleu(cands, refsets):
    num = [0] * 4
    den = [0] * 4
    c_len = 0
    r_len = 0
    for cand, refs in zip(cands, refsets):
        c_len += len(cand)
        best = None
        for r in refs:
            key = (abs(len(r) - len(cand)), len(r))
            if best is None or key < best:
                best = key
        r_len += best[1]
        for n in range(1, 5):
            cg = _grams(cand, n)
            for g, c in cg.items():
                num[n - 1] += min(c, max(_grams(r, n).get(g, 0) for r in refs))
            den[n - 1] += sum(cg.values())
    if c_len == 0 or 0 in num:
        return 0.0
    logp = sum(math.log(num[k] / den[k]) for k in range(4)) / 4
    bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    return bp * math.exp(logp)


def cider(cands, refsets):
    N = len(cands)
    scores = []
    for cand, refs in zip(cands, refsets):
        total = 0.0
        for n in range(1, 5):
            def idf(g):
                df = sum(1 for rs in refsets if any(g in _grams(r, n) for r in rs))
                return math.log(N / max(1, df))

            cv = {g: c * idf(g) for g, c in _grams(cand, n).items()}
            sims = []
            for r in refs:
                rv = {g: c * idf(g) for g, c in _grams(r, n).items()}
                nc = math.sqrt(sum(v * v for v in cv.values()))
                nr = math.sqrt(sum(v * v for v in rv.values()))
                dot = sum(v * rv.get(g, 0.0) for g, v in cv.items())
                sims.append(dot / (nc * nr) if nc > 0 and nr > 0 else 0.0)
            total += sum(sims) / len(sims)
        scores.append(10.0 * total / 4)
    return sum(scores) / N, scores


def median(xs):
    s = sorted(xs)
    m = len(s)
    return s[m // 2] if m % 2 else 0.5 * (s[m // 2 - 1] + s[m // 2])


def counter_eq(a, b):
    return Counter(a) == Counter(b)
