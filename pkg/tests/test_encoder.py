import math

import numpy as np
import pytest

from segt.attention import AttentionConfig
from segt.encoder import (N_LAYERS, EncoderParams, LayerParams, bev_scatter, encoder_forward,
                          gelu, layer_norm, lift_channels, segt_layer)
from segt.errors import ContractError
from segt.model_io import RunConfig, init_params
from segt.spacecurve import ExpansionConfig, Strategy
from segt.synthetic import random_voxels, shuffled
from segt.voxelizer import GridSpec, VoxelSet

GRID = GridSpec.index_space((64, 64, 1))
SMALL = RunConfig(grid=GRID, l_glb=4, l_lcl=2, group_size=16, channels=8, heads=2, seed=5)


def _random_layer(c, seed):
    rng = np.random.default_rng(seed)
    lp = LayerParams.zeros(c)
    for name, t in lp.named_tensors():
        t[...] = rng.normal(scale=0.4, size=t.shape)
    return lp


def _sorted(vs):
    order = np.lexsort(vs.coords.T[::-1])
    return vs.coords[order], vs.features[order]


def test_zero_weights_layer_is_identity():
    vs = random_voxels(100, GRID, 8, seed=0)
    out = segt_layer(vs, Strategy.MINUS, LayerParams.zeros(8), SMALL.attention, SMALL.expansion)
    assert np.array_equal(out.features, vs.features)
    assert np.array_equal(out.coords, vs.coords)


def test_single_voxel_independent_of_group_and_strategy():
    vs = random_voxels(1, GRID, 8, seed=1)
    lp = _random_layer(8, 2)
    outs = [
        segt_layer(vs, s, lp, AttentionConfig(8, 2, g), SMALL.expansion).features
        for s in Strategy for g in (1, 5, 128)
    ]
    assert all(np.array_equal(o, outs[0]) for o in outs)


@pytest.mark.parametrize("seed", range(3))
def test_layer_row_order_immaterial(seed):
    vs = random_voxels(300, GRID, 8, seed=seed)
    lp = _random_layer(8, seed + 10)
    a = segt_layer(vs, Strategy.PLUS, lp, SMALL.attention, SMALL.expansion)
    b = segt_layer(shuffled(vs, seed + 20), Strategy.PLUS, lp, SMALL.attention, SMALL.expansion)
    ca, fa = _sorted(a)
    cb, fb = _sorted(b)
    assert np.array_equal(ca, cb)
    assert fa.tobytes() == fb.tobytes()


def test_layer_matches_manual_composition():
    from segt.attention import group_attention_forward
    from segt.spacecurve import gather, serialize

    vs = random_voxels(40, GRID, 8, seed=3)
    lp = _random_layer(8, 4)
    plan = serialize(vs, Strategy.MINUS, SMALL.expansion)
    x = vs.features[plan.order]
    a, _ = group_attention_forward(layer_norm(x, lp.norm1_gain, lp.norm1_bias),
                                   gather(vs.coords, plan), GRID, SMALL.attention, lp.attention)
    y = x + a
    h = layer_norm(y, lp.norm2_gain, lp.norm2_bias)
    y = y + gelu(h @ lp.ffn_w1 + lp.ffn_b1) @ lp.ffn_w2 + lp.ffn_b2
    want = np.empty_like(y)
    want[plan.order] = y
    got = segt_layer(vs, Strategy.MINUS, lp, SMALL.attention, SMALL.expansion).features
    np.testing.assert_allclose(got, want, rtol=1e-14, atol=1e-14)


def test_gelu_and_layer_norm_values():
    assert gelu(np.array([0.0]))[0] == 0.0
    assert gelu(np.array([1.0]))[0] == pytest.approx(0.8413447460685429)
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    y = layer_norm(x, np.ones(4), np.zeros(4))
    assert y.mean() == pytest.approx(0.0, abs=1e-15)
    assert y.var() == pytest.approx(1.25 / (1.25 + 1e-5))


def test_zero_params_encoder_identity():
    stages = [[[LayerParams.zeros(8) for _ in range(2)] for _ in range(2)] for _ in range(4)]
    params = EncoderParams(stages, SMALL.attention, SMALL.expansion)
    vs = random_voxels(200, GRID, 8, seed=6)
    out = encoder_forward(vs, params)
    assert np.array_equal(out.features, vs.features)


def test_identity_init_encoder():
    params = init_params(SMALL, identity=True)
    vs = random_voxels(300, GRID, 8, seed=7)
    out = encoder_forward(vs, params)
    assert np.array_equal(out.features, vs.features)
    assert np.array_equal(out.coords, vs.coords)


def test_empty_encoder_input():
    params = init_params(SMALL)
    vs = VoxelSet(np.zeros((0, 8)), np.zeros((0, 3)), GRID)
    out = encoder_forward(vs, params)
    assert len(out) == 0 and out.features.shape == (0, 8)


def test_coords_and_row_order_preserved():
    params = init_params(SMALL)
    vs = shuffled(random_voxels(250, GRID, 8, seed=8))
    out = encoder_forward(vs, params)
    assert np.array_equal(out.coords, vs.coords)
    assert not np.array_equal(out.features, vs.features)


def test_schedule_alternates():
    sched = EncoderParams.default_schedule()
    assert len(sched) == N_LAYERS == 16
    assert sched[0::2] == [Strategy.PLUS] * 8 and sched[1::2] == [Strategy.MINUS] * 8


def test_all_plus_schedule_changes_output():
    params = init_params(SMALL)
    vs = random_voxels(400, GRID, 8, seed=9)
    a = encoder_forward(vs, params)
    b = encoder_forward(vs, params, schedule=[Strategy.PLUS] * 16)
    assert np.abs(a.features - b.features).max() > 1e-6


def test_schedule_length_checked():
    with pytest.raises(ContractError):
        encoder_forward(random_voxels(3, GRID, 8), init_params(SMALL), schedule=[Strategy.PLUS])


def test_structure_validated():
    lp = LayerParams.zeros(8)
    with pytest.raises(ContractError):
        EncoderParams([[[lp, lp]] * 2] * 3, SMALL.attention, SMALL.expansion)
    bad = LayerParams.zeros(8)
    bad.ffn_w1 = np.zeros((8, 8))
    with pytest.raises(ContractError):
        EncoderParams([[[bad, lp]] * 2] * 4, SMALL.attention, SMALL.expansion)


def test_channel_mismatch():
    with pytest.raises(ContractError):
        encoder_forward(random_voxels(3, GRID, 5), init_params(SMALL))


def test_float32_params_keep_float32():
    from dataclasses import replace

    cfg = replace(SMALL, precision="f32")
    vs = random_voxels(100, GRID, 8, seed=2)
    out = encoder_forward(vs, init_params(cfg))
    ref = encoder_forward(vs, init_params(SMALL))
    assert out.features.dtype == np.float32
    np.testing.assert_allclose(out.features, ref.features, rtol=1e-3, atol=1e-3)


def test_lift_channels():
    vs = random_voxels(4, GRID, 3)
    up = lift_channels(vs, 8)
    assert up.features.shape == (4, 8)
    assert np.array_equal(up.features[:, :3], vs.features) and not up.features[:, 3:].any()
    assert lift_channels(vs, 3) is vs
    with pytest.raises(ContractError):
        lift_channels(vs, 2)


# --- BEV --------------------------------------------------------------------

def test_bev_single_voxel():
    grid = GridSpec.index_space((8, 8, 1))
    f = np.array([[1.5, -2.0]])
    bev = bev_scatter(VoxelSet(f, [[3, 5, 0]], grid))
    assert bev.features.shape == (8, 8, 2)
    assert np.array_equal(bev.features[3, 5], f[0])
    bev.features[3, 5] = 0
    assert not bev.features.any()


def test_bev_sums_over_z():
    grid = GridSpec.index_space((4, 4, 3))
    bev = bev_scatter(VoxelSet(np.array([[1.0], [2.5], [4.0]]), [[1, 2, 0], [1, 2, 2], [0, 0, 1]], grid))
    assert bev.features[1, 2, 0] == 3.5
    assert bev.features[0, 0, 0] == 4.0
    assert bev.features.sum() == 7.5


def test_bev_mass_conserved_exactly():
    vs = random_voxels(2000, GRID, 4, seed=11)
    bev = bev_scatter(vs)
    for j in range(4):
        assert math.fsum(bev.features[:, :, j].ravel()) == math.fsum(vs.features[:, j])


def test_bev_mass_conserved_multi_z_dyadic():
    grid = GridSpec.index_space((16, 16, 4))
    vs = random_voxels(500, grid, 3, seed=12)
    vs = vs.with_features(np.round(vs.features * 64) / 64)
    bev = bev_scatter(vs)
    assert bev.features.sum() == vs.features.sum()
