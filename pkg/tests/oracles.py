"""Slow, obviously-correct re-implementations used as test oracles.

Each one follows the written definition directly with plain Python loops and
shares no code with the package.
"""
from __future__ import annotations

import math
from fractions import Fraction


def resample_scan(minutes, values, origin, step, n_cells):
    """Per interval, scan every reading and keep the latest one inside it."""
    cells = []
    for k in range(n_cells):
        lo, hi = origin + k * step, origin + (k + 1) * step
        best_t, best_v = None, None
        for t, v in zip(minutes, values):
            if lo <= t < hi and (best_t is None or t > best_t):
                best_t, best_v = t, v
        cells.append(best_v)
    return cells


def line(xs, ys):
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    b = sxy / sxx
    return my - b * mx, b


def peaks(vs):
    c = 0
    for i in range(1, len(vs) - 1):
        if vs[i] > vs[i - 1] and vs[i] > vs[i + 1]:
            c += 1
    return Fraction(c, len(vs))


def features(history, horizon, windows=(30, 45, 75, 120, 180, 240, 300), step=15):
    """The 45 features in exact rational arithmetic, from cell values oldest first.

    Returns ``Fraction`` values; callers round them to float.
    """
    history = [Fraction(v) for v in history]
    eps, clip = Fraction(1e-9), Fraction(10) ** 6
    out, slopes = [], []
    for w in windows:
        n = w // step
        vs = history[-n:]
        xs = [Fraction(-(n - 1 - i) * step) for i in range(n)]
        a, b = line(xs, vs)
        first, last = vs[0], vs[-1]
        pct = (last - first) / max(abs(first), eps)
        pct = min(max(pct, -clip), clip)
        out += [sum(vs) / n, peaks(vs), pct, b, a + b * horizon, None]
        slopes.append(b)
    ref = slopes[-1]
    for j, b in enumerate(slopes):
        out[6 * j + 5] = b / ref if abs(ref) >= eps else Fraction(0)
    big = history[-(windows[-1] // step):]
    mx = max(big)
    out += [big[-1], mx, big[-1] / mx if mx != 0 else Fraction(0)]
    return out


def feature_scales(history, horizon, windows=(30, 45, 75, 120, 180, 240, 300), step=15):
    """Magnitude of the inputs each feature is computed from.

    Floating-point error is proportional to these, not to the feature
    itself, whenever the feature is small through cancellation (a mean near
    zero, a nearly flat slope). Tolerances are relative to the larger of the
    two.
    """
    h = [abs(v) for v in history]
    big_slope = line([float(-(len(history[-windows[-1] // step:]) - 1 - i) * step)
                      for i in range(windows[-1] // step)], history[-windows[-1] // step:])[1]
    scales = []
    for w in windows:
        n = w // step
        vs = history[-n:]
        V = max(abs(v) for v in vs)
        S = V / step
        b = line([float(-(n - 1 - i) * step) for i in range(n)], vs)[1]
        ratio_scale = 0.0
        if abs(big_slope) >= 1e-9:
            ratio_scale = (1 + abs(b / big_slope)) * max(h) / step / abs(big_slope)
        pct_scale = max(abs(vs[0]), abs(vs[-1])) / max(abs(vs[0]), 1e-9)
        scales += [V, 1.0, pct_scale, S, V * (1 + horizon / step), ratio_scale]
    V = max(h[-windows[-1] // step:])
    return scales + [V, V, 1.0]


def sse(vs):
    if not vs:
        return 0.0
    m = math.fsum(vs) / len(vs)
    return math.fsum((v - m) ** 2 for v in vs)


def best_split(X, r, min_leaf):
    """Exhaustive search over every feature and every midpoint threshold.

    Returns ``(feature, threshold, gain)`` or ``None``. Gains within
    ``1e-12 * sum(r**2)`` of the best count as ties and go to the lowest
    feature, then the lowest threshold.
    """
    n, d = len(X), len(X[0])
    parent = sse(r)
    cands = []
    for f in range(d):
        vals = sorted(set(row[f] for row in X))
        for a, b in zip(vals, vals[1:]):
            thr = (a + b) / 2
            if thr >= b:
                thr = a
            left = [r[i] for i in range(n) if X[i][f] <= thr]
            right = [r[i] for i in range(n) if X[i][f] > thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            cands.append((parent - sse(left) - sse(right), f, thr))
    if not cands:
        return None
    top = max(c[0] for c in cands)
    tol = 1e-12 * math.fsum(v * v for v in r)
    f, thr = min((c[1], c[2]) for c in cands if c[0] >= top - tol)
    return f, thr, top
