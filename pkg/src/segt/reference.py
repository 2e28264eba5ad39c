"""Slow, independent reference implementations.

These exist so the production kernels always have something to be checked
against, both in the test-suite and in ``segt selftest``.  Nothing here is
vectorised and nothing here imports the production kernels.
"""

import numpy as np


def _gray(i):
    return i ^ (i >> 1)


def _trailing_ones(i):
    n = 0
    while i & 1:
        i >>= 1
        n += 1
    return n


def _entry(w):
    return 0 if w == 0 else _gray(2 * ((w - 1) // 2))


def _direction(w, d):
    if w == 0:
        return 0
    if w % 2 == 0:
        return _trailing_ones(w - 1) % d
    return _trailing_ones(w) % d


def reference_curve(level, d):
    """Hilbert curve as an explicit list of cells, built by recursive assembly.

    The level-``L`` curve is the concatenation of ``2**d`` copies of the
    level-``L-1`` curve, one per child cube in Gray-code order.  Each copy is
    rotated (cyclic axis shift) and reflected so that it enters its child
    where the previous copy left off.  Axis 0 is the most significant bit of
    a child index, so in 2D the first step goes along axis 1:
    (0,0) -> (0,1) -> (1,1) -> (1,0).
    """
    if level == 0:
        return [(0,) * d]
    sub = reference_curve(level - 1, d)
    h = 1 << (level - 1)
    out = []
    for w in range(1 << d):
        corner = [(_gray(w) >> (d - 1 - a)) & 1 for a in range(d)]
        e, r = _entry(w), _direction(w, d) + 1
        for p in sub:
            # bit b of the packed vector <-> axis d-1-b; rotate left by r, then reflect by e
            q = [0] * d
            for b in range(d):
                q[d - 1 - (b + r) % d] = p[d - 1 - b]
            q = [h - 1 - q[a] if (e >> (d - 1 - a)) & 1 else q[a] for a in range(d)]
            out.append(tuple(corner[a] * h + q[a] for a in range(d)))
    return out


def reference_hilbert_2d(level):
    """Textbook 2D construction: transpose, copy, copy, anti-transpose."""
    if level == 0:
        return [(0, 0)]
    sub = reference_hilbert_2d(level - 1)
    h = 1 << (level - 1)
    return (
        [(y, x) for x, y in sub]
        + [(x, y + h) for x, y in sub]
        + [(x + h, y + h) for x, y in sub]
        + [(2 * h - 1 - y, h - 1 - x) for x, y in sub]
    )


def dense_attention(x, w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o, heads):
    """Full self-attention over every row of ``x``, one head and row at a time."""
    n, c = x.shape
    hd = c // heads
    q = x @ w_q + b_q
    k = x @ w_k + b_k
    v = x @ w_v + b_v
    ctx = np.zeros((n, c))
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        for i in range(n):
            logits = np.array([float(np.dot(q[i, sl], k[j, sl])) for j in range(n)])
            logits /= np.sqrt(hd)
            p = np.exp(logits - logits.max())
            p /= p.sum()
            ctx[i, sl] = sum(p[j] * v[j, sl] for j in range(n))
    return ctx @ w_o + b_o
