"""Independent brute-force reference implementations used as test oracles.

Plain Python loops over the textbook definitions; no code shared with the package.
"""

import math


def macro_prf(gold, pred, n):
    ps, rs, fs = [], [], []
    for c in range(1, n + 1):
        tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
        pp = sum(1 for p in pred if p == c)
        gp = sum(1 for g in gold if g == c)
        prec = tp / pp if pp else 0.0
        rec = tp / gp if gp else 0.0
        f = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        ps.append(prec)
        rs.append(rec)
        fs.append(f)
    return sum(ps) / n, sum(rs) / n, sum(fs) / n


def pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return None
    return sxy / math.sqrt(sxx * syy)


def avg_ranks(x):
    # rank of each element = mean of the 1-based positions its value occupies when sorted
    out = []
    for v in x:
        less = sum(1 for w in x if w < v)
        equal = sum(1 for w in x if w == v)
        out.append(less + (equal + 1) / 2)
    return out


def spearman(x, y):
    return pearson(avg_ranks(x), avg_ranks(y))


def kappa(gold, pred, n):
    m = len(gold)
    po = sum(1 for g, p in zip(gold, pred) if g == p) / m
    pe = sum((sum(1 for g in gold if g == c) / m) * (sum(1 for p in pred if p == c) / m) for c in range(1, n + 1))
    if pe == 1:
        return None
    return (po - pe) / (1 - pe)


def mae(gold, pred):
    return sum(abs(g - p) for g, p in zip(gold, pred)) / len(gold)


def click_gains(values, gain="linear"):
    return [(v - 1) if gain == "linear" else (2 ** (v - 1) - 1) for v in values]


def click_metrics(values, gain="linear"):
    g = click_gains(values, gain)
    if not g:
        return [0.0] * 5
    ccg = float(sum(g))
    cdcg = sum(x / math.log2(i + 1) for i, x in enumerate(g, start=1))
    return [ccg, cdcg, float(max(g)), ccg / len(g), cdcg / len(g)]


def t_sf_quadrature(t, df, steps=200_000):
    """Upper tail of Student's t: composite Simpson over [t, hi] plus the power-law tail beyond hi."""
    c = math.gamma((df + 1) / 2) / (math.sqrt(df * math.pi) * math.gamma(df / 2))
    f = lambda x: (1 + x * x / df) ** (-(df + 1) / 2)
    hi = max(abs(t) * 4, 2000.0)
    h = (hi - t) / steps
    total = f(t) + f(hi)
    for i in range(1, steps):
        total += (4 if i % 2 else 2) * f(t + i * h)
    tail = df ** ((df + 1) / 2) * hi ** (-df) / df
    return c * (total * h / 3 + tail)
