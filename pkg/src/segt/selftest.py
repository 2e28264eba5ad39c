"""Embedded invariant suite behind ``segt selftest``.

Each check returns ``(ok, detail)``.  Oracles come from
:mod:`segt.reference`; nothing here reuses the code path it is checking.
"""

from __future__ import annotations

import time

import numpy as np

from . import spacecurve as sc
from .attention import (AttentionConfig, AttentionParams, group_attention_backward,
                        group_attention_forward)
from .encoder import bev_scatter, encoder_forward
from .model_io import RunConfig, init_params
from .reference import dense_attention, reference_curve
from .synthetic import random_voxels, shuffled
from .voxelizer import DEFAULT_GRID, GridSpec

CURVE_CASES = [(2, lv) for lv in range(1, 6)] + [(3, lv) for lv in range(1, 5)]
SERIALIZE_BUDGET_MS = 100.0


def check_bijectivity(encoder=sc.hilbert_encode_array):
    for d, lv in CURVE_CASES:
        idx = np.arange(1 << (d * lv), dtype=np.uint64)
        cells = sc.hilbert_decode_array(idx, lv, d)
        if not np.array_equal(encoder(cells, lv), idx):
            return False, f"encode(decode(i)) != i at d={d} level={lv}"
        grid = np.stack(np.meshgrid(*[np.arange(1 << lv)] * d, indexing="ij"), -1).reshape(-1, d)
        if not np.array_equal(sc.hilbert_decode_array(encoder(grid, lv), lv, d), grid):
            return False, f"decode(encode(c)) != c at d={d} level={lv}"
    return True, f"{len(CURVE_CASES)} curves exhaustive"


def check_adjacency():
    for d, lv in CURVE_CASES:
        cells = sc.hilbert_decode_array(np.arange(1 << (d * lv), dtype=np.uint64), lv, d)
        if not (np.abs(np.diff(cells, axis=0)).sum(axis=1) == 1).all():
            return False, f"non-adjacent step at d={d} level={lv}"
    return True, "all steps unit length"


def check_reference_curve(encoder=sc.hilbert_encode_array):
    for d, lv in CURVE_CASES:
        ref = np.array(reference_curve(lv, d))
        if not np.array_equal(encoder(ref, lv), np.arange(len(ref), dtype=np.uint64)):
            return False, f"kernel disagrees with recursive construction at d={d} level={lv}"
    return True, "kernel matches recursive construction"


def check_plan_roundtrip(encoder=sc.hilbert_encode_array):
    cfg = sc.ExpansionConfig.for_grid(DEFAULT_GRID, 6)
    for n in (0, 1, 1000, 65536):
        vs = random_voxels(n, DEFAULT_GRID, 4, seed=n)
        plan = sc.serialize(vs, sc.Strategy.PLUS, cfg, encoder)
        if not np.array_equal(sc.scatter(sc.gather(vs.features, plan), plan), vs.features):
            return False, f"scatter(gather(F)) != F at N={n}"
        if not np.array_equal(np.sort(plan.order), np.arange(n)):
            return False, f"order is not a permutation at N={n}"
    return True, "N in {0, 1, 1000, 65536}"


def check_conjugacy(encoder=sc.hilbert_encode_array):
    vs = random_voxels(1000, DEFAULT_GRID, 1, seed=7)
    cfg = sc.ExpansionConfig.for_grid(DEFAULT_GRID, 6)
    plus = sc.serialize(vs, sc.Strategy.PLUS, cfg, encoder)
    minus = sc.serialize(vs, sc.Strategy.MINUS, cfg, encoder)
    for p in (plus, minus):
        r = np.arange(len(vs))
        if not (np.array_equal(p.order[p.inverse], r) and np.array_equal(p.inverse[p.order], r)):
            return False, "plan is not bijective"
    if np.array_equal(plus.order, minus.order):
        return False, "PLUS and MINUS give the same permutation"
    return True, "plans differ"


def _random_attention(c, seed):
    rng = np.random.default_rng(seed)
    return AttentionParams(**{k: rng.normal(scale=0.5, size=s) for k, s in AttentionParams.shapes(c).items()})


def check_dense_oracle():
    n, c, h = 64, 16, 4
    rng = np.random.default_rng(11)
    grid = GridSpec.index_space((16, 16, 1))
    p = _random_attention(c, 12)
    f = rng.normal(size=(n, c))
    coords = np.c_[rng.integers(0, 16, (n, 2)), np.zeros(n, int)]
    out, _ = group_attention_forward(f, coords, grid, AttentionConfig(c, h, n), p)
    x = f + ((2.0 * coords + 1) / np.array(grid.dims) - 1) @ p.w_pos + p.b_pos
    ref = dense_attention(x, p.w_q, p.b_q, p.w_k, p.b_k, p.w_v, p.b_v, p.w_o, p.b_o, h)
    err = float(np.abs(out - ref).max())
    return err <= 1e-10, f"max abs err {err:.2e}"


def check_group_isolation():
    n, c, g = 40, 8, 8
    rng = np.random.default_rng(3)
    grid = GridSpec.index_space((16, 16, 1))
    cfg = AttentionConfig(c, 2, g)
    p = _random_attention(c, 4)
    f = rng.normal(size=(n, c))
    coords = np.c_[rng.integers(0, 16, (n, 2)), np.zeros(n, int)]
    base, _ = group_attention_forward(f, coords, grid, cfg, p)
    for grp in range(n // g):
        f2 = f.copy()
        outside = np.r_[0:grp * g, (grp + 1) * g:n]
        f2[outside] += rng.normal(size=(len(outside), c))
        out, _ = group_attention_forward(f2, coords, grid, cfg, p)
        if not np.array_equal(out[grp * g:(grp + 1) * g], base[grp * g:(grp + 1) * g]):
            return False, f"group {grp} changed when other groups were perturbed"
    return True, "exact zero change"


ZERO_GRAD_SCALE = 1e-7
ZERO_GRAD_ATOL = 1e-8


def gradient_error(analytic, numeric):
    """``(ok, err)`` for one tensor at the relative tolerance 1e-5.

    When both gradients are below ``ZERO_GRAD_SCALE`` everywhere the true
    gradient is identically zero (the key bias, by softmax shift invariance)
    and a relative error would only measure finite-difference noise; those
    tensors must instead agree to ``ZERO_GRAD_ATOL`` absolute.
    """
    diff = float(np.abs(analytic - numeric).max(initial=0.0))
    scale = float(max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0)))
    if scale < ZERO_GRAD_SCALE:
        return diff < ZERO_GRAD_ATOL, diff
    return diff / scale < 1e-5, diff / scale


def check_gradients():
    n, g, c, h, step = 8, 4, 4, 2, 1e-5
    rng = np.random.default_rng(5)
    grid = GridSpec.index_space((8, 8, 1))
    cfg = AttentionConfig(c, h, g)
    p = _random_attention(c, 6)
    f = rng.normal(size=(n, c))
    coords = np.c_[rng.integers(0, 8, (n, 2)), np.zeros(n, int)]
    up = rng.normal(size=(n, c))

    def loss():
        return float((group_attention_forward(f, coords, grid, cfg, p)[0] * up).sum())

    _, cache = group_attention_forward(f, coords, grid, cfg, p)
    df, gp = group_attention_backward(cache, up, p)
    worst = 0.0
    for name, t, analytic in [("features", f, df)] + [
        (nm, getattr(p, nm), getattr(gp, nm)) for nm in AttentionParams.names()
    ]:
        num = np.zeros_like(t)
        for i in np.ndindex(t.shape):
            keep = t[i]
            t[i] = keep + step
            lp = loss()
            t[i] = keep - step
            lm = loss()
            t[i] = keep
            num[i] = (lp - lm) / (2 * step)
        ok, err = gradient_error(analytic, num)
        worst = max(worst, err)
        if not ok:
            return False, f"{name}: error {err:.2e}"
    return True, f"worst error {worst:.2e}"


def _encoder_case(identity=False, seed=0, n=2000):
    cfg = RunConfig(seed=seed)
    params = init_params(cfg, identity=identity)
    vs = random_voxels(n, cfg.grid, cfg.channels, seed=seed + 100)
    return params, vs


def check_encoder_identity():
    params, vs = _encoder_case(identity=True, n=500)
    out = encoder_forward(vs, params)
    ok = np.array_equal(out.features, vs.features) and np.array_equal(out.coords, vs.coords)
    return ok, "exact identity" if ok else "features changed"


def _by_coord(vs):
    order = np.lexsort(vs.coords.T[::-1])
    return vs.coords[order], vs.features[order]


def check_permutation_invariance():
    params, vs = _encoder_case()
    a = encoder_forward(vs, params)
    b = encoder_forward(shuffled(vs, 9), params)
    ca, fa = _by_coord(a)
    cb, fb = _by_coord(b)
    ok = np.array_equal(ca, cb) and np.array_equal(fa, fb)
    return ok, "bitwise identical" if ok else "outputs differ after shuffling rows"


def check_strategy_sensitivity():
    params, vs = _encoder_case()
    a = encoder_forward(vs, params)
    b = encoder_forward(vs, params, schedule=[sc.Strategy.PLUS] * len(params.layers()))
    diff = float(np.abs(a.features - b.features).max())
    return diff > 1e-6, f"max abs diff {diff:.3e}"


def check_bev_conservation():
    import math

    vs = random_voxels(3000, DEFAULT_GRID, 8, seed=21)
    bev = bev_scatter(vs)
    ok = math.fsum(bev.features.ravel()) == math.fsum(vs.features.ravel())
    return ok, "exact" if ok else "grid sum differs from voxel sum"


def check_throughput(encoder=sc.hilbert_encode_array, repeat=5):
    vs = random_voxels(100_000, DEFAULT_GRID, 1, seed=1)
    cfg = sc.ExpansionConfig.for_grid(DEFAULT_GRID, 6)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        sc.serialize(vs, sc.Strategy.PLUS, cfg, encoder)
        times.append((time.perf_counter() - t0) * 1e3)
    med = float(np.median(times))
    # soft budget: only a miss by more than 2x counts as failure
    return med < 2 * SERIALIZE_BUDGET_MS, f"median {med:.1f} ms for 100000 voxels"


def run_selftest(encoder=sc.hilbert_encode_array):
    """Run every check; returns ``{name: (ok, detail)}`` in a fixed order."""
    checks = [
        ("bijectivity", lambda: check_bijectivity(encoder)),
        ("adjacency", check_adjacency),
        ("reference_curve", lambda: check_reference_curve(encoder)),
        ("plan_roundtrip", lambda: check_plan_roundtrip(encoder)),
        ("conjugacy", lambda: check_conjugacy(encoder)),
        ("dense_oracle", check_dense_oracle),
        ("group_isolation", check_group_isolation),
        ("gradient_check", check_gradients),
        ("encoder_identity", check_encoder_identity),
        ("permutation_invariance", check_permutation_invariance),
        ("strategy_sensitivity", check_strategy_sensitivity),
        ("bev_conservation", check_bev_conservation),
        ("throughput", lambda: check_throughput(encoder)),
    ]
    results = {}
    for name, fn in checks:
        try:
            results[name] = fn()
        except Exception as exc:  # a crash is a failed property, not a crashed suite
            results[name] = (False, f"{type(exc).__name__}: {exc}")
    return results


def corrupted_encoder(coords, level):
    """Test hook: a kernel that drops the lowest index bit."""
    return sc.hilbert_encode_array(coords, level) & ~np.uint64(1)
