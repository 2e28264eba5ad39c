"""Stacked expansion-group-transformer layers and the BEV projection."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import erf

from .attention import AttentionConfig, AttentionParams, group_attention_forward
from .errors import ContractError
from .spacecurve import ExpansionConfig, Strategy, gather, scatter, serialize
from .voxelizer import GridSpec, VoxelSet

N_STAGES = 4
BLOCKS_PER_STAGE = 2
LAYERS_PER_BLOCK = 2
N_LAYERS = N_STAGES * BLOCKS_PER_STAGE * LAYERS_PER_BLOCK
LN_EPS = 1e-5
FFN_RATIO = 4


@dataclass
class LayerParams:
    attention: AttentionParams
    ffn_w1: np.ndarray
    ffn_b1: np.ndarray
    ffn_w2: np.ndarray
    ffn_b2: np.ndarray
    norm1_gain: np.ndarray
    norm1_bias: np.ndarray
    norm2_gain: np.ndarray
    norm2_bias: np.ndarray

    @classmethod
    def own_shapes(cls, channels):
        c, h = channels, FFN_RATIO * channels
        return dict(ffn_w1=(c, h), ffn_b1=(h,), ffn_w2=(h, c), ffn_b2=(c,),
                    norm1_gain=(c,), norm1_bias=(c,), norm2_gain=(c,), norm2_bias=(c,))

    def named_tensors(self):
        """(name, array) pairs in the fixed on-disk order."""
        out = [("attention." + n, t) for n, t in zip(AttentionParams.names(), self.attention.tensors())]
        out += [(f.name, getattr(self, f.name)) for f in fields(self) if f.name != "attention"]
        return out

    @classmethod
    def zeros(cls, channels, dtype=np.float64) -> "LayerParams":
        own = {k: np.zeros(s, dtype) for k, s in cls.own_shapes(channels).items()}
        own["norm1_gain"][:] = 1
        own["norm2_gain"][:] = 1
        return cls(AttentionParams.zeros(channels, dtype), **own)


@dataclass
class EncoderParams:
    """Weights of every layer, indexed ``stages[s][b][l]``.

    Layer ``l == 0`` of each block serializes with PLUS and ``l == 1`` with MINUS.
    """

    stages: list
    attention: AttentionConfig
    expansion: ExpansionConfig

    def __post_init__(self):
        if len(self.stages) != N_STAGES or any(
            len(st) != BLOCKS_PER_STAGE or any(len(bl) != LAYERS_PER_BLOCK for bl in st)
            for st in self.stages
        ):
            raise ContractError(
                f"encoder needs {N_STAGES} stages x {BLOCKS_PER_STAGE} blocks x {LAYERS_PER_BLOCK} layers"
            )
        c = self.attention.channels
        for lp in self.layers():
            for name, t in lp.named_tensors():
                short = name.split(".")[-1]
                want = (AttentionParams.shapes(c) | LayerParams.own_shapes(c))[short]
                if t.shape != want:
                    raise ContractError(f"{name} has shape {t.shape}, expected {want}")

    def layers(self):
        return [lp for st in self.stages for bl in st for lp in bl]

    @staticmethod
    def default_schedule():
        return [Strategy.PLUS if i % LAYERS_PER_BLOCK == 0 else Strategy.MINUS for i in range(N_LAYERS)]


def layer_norm(x, gain, bias):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * gain + bias


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def segt_layer(voxels: VoxelSet, strategy: Strategy, lp: LayerParams,
               attn_cfg: AttentionConfig, exp_cfg: ExpansionConfig) -> VoxelSet:
    """One pre-norm layer: serialize, attend in groups, FFN, scatter back.

    Residual adds and the FFN run in serialized order too, so everything
    between the gather and the scatter sees the same row order no matter how
    the input rows were arranged.
    """
    if voxels.channel_count != attn_cfg.channels:
        raise ContractError(f"voxels have {voxels.channel_count} channels, layer expects {attn_cfg.channels}")
    dtype = lp.ffn_w1.dtype
    if len(voxels) == 0:
        return voxels.with_features(np.asarray(voxels.features, dtype=dtype))
    plan = serialize(voxels, strategy, exp_cfg)
    x = gather(np.asarray(voxels.features, dtype=dtype), plan)
    coords_z = gather(voxels.coords, plan)

    h = layer_norm(x, lp.norm1_gain, lp.norm1_bias)
    a, _ = group_attention_forward(h, coords_z, voxels.grid, attn_cfg, lp.attention)
    y = x + a
    h = layer_norm(y, lp.norm2_gain, lp.norm2_bias)
    y = y + (gelu(h @ lp.ffn_w1 + lp.ffn_b1) @ lp.ffn_w2 + lp.ffn_b2)
    return voxels.with_features(scatter(y, plan))


def encoder_forward(voxels: VoxelSet, params: EncoderParams, schedule=None) -> VoxelSet:
    """Run all layers in order.  Coords and row order are preserved.

    ``schedule`` overrides the per-layer strategies (a sequence of
    :class:`Strategy`, one per layer); by default blocks alternate PLUS, MINUS.
    """
    layers = params.layers()
    schedule = list(schedule) if schedule is not None else EncoderParams.default_schedule()
    if len(schedule) != len(layers):
        raise ContractError(f"schedule has {len(schedule)} entries for {len(layers)} layers")
    out = voxels
    for lp, strategy in zip(layers, schedule):
        out = segt_layer(out, Strategy.parse(strategy), lp, params.attention, params.expansion)
    return out


@dataclass
class BevGrid:
    """Dense top-down features, ``(dims.x, dims.y, C)``."""

    features: np.ndarray
    grid: GridSpec


def bev_scatter(voxels: VoxelSet) -> BevGrid:
    """Sum voxel features over z into their (x, y) cell; empty cells stay zero."""
    nx, ny, _ = voxels.grid.dims
    out = np.zeros((nx, ny, voxels.channel_count), dtype=np.float64)
    np.add.at(out, (voxels.coords[:, 0], voxels.coords[:, 1]), np.asarray(voxels.features, np.float64))
    return BevGrid(out, voxels.grid)


def lift_channels(voxels: VoxelSet, channels: int) -> VoxelSet:
    """Zero-pad raw voxel features up to the encoder width."""
    c = voxels.channel_count
    if c > channels:
        raise ContractError(f"voxels carry {c} channels, more than the encoder's {channels}")
    if c == channels:
        return voxels
    feats = np.zeros((len(voxels), channels), dtype=np.asarray(voxels.features).dtype)
    feats[:, :c] = voxels.features
    return voxels.with_features(feats)
