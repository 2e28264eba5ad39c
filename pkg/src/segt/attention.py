"""Multi-head group self-attention over a serialized voxel sequence.

Rows are cut into consecutive groups of ``group_size``; attention never
crosses a group boundary.  The last group is padded to full size and the
padding is masked out of the softmax with ``-inf`` logits, so every group is
the same rectangular ``(G, C)`` block and the whole sequence runs as one
batched matmul.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, ContractError, NumericError
from .voxelizer import GridSpec


@dataclass(frozen=True)
class AttentionConfig:
    channels: int = 128
    heads: int = 8
    group_size: int = 128

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError("channels must be positive", key="channels")
        if self.heads < 1 or self.channels % self.heads:
            raise ConfigError(
                f"heads={self.heads} must be positive and divide channels={self.channels}",
                key="heads",
            )
        if self.group_size < 1:
            raise ConfigError("group_size must be at least 1", key="group_size")

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads


@dataclass
class AttentionParams:
    """Projection weights, used as ``x @ w + b`` on row vectors."""

    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    w_pos: np.ndarray
    b_pos: np.ndarray

    @classmethod
    def names(cls):
        return tuple(f.name for f in fields(cls))

    @classmethod
    def shapes(cls, channels):
        c = channels
        sq, vec = (c, c), (c,)
        return dict(w_q=sq, b_q=vec, w_k=sq, b_k=vec, w_v=sq, b_v=vec,
                    w_o=sq, b_o=vec, w_pos=(3, c), b_pos=vec)

    @classmethod
    def zeros(cls, channels, dtype=np.float64) -> "AttentionParams":
        return cls(**{k: np.zeros(s, dtype) for k, s in cls.shapes(channels).items()})

    def tensors(self):
        return [getattr(self, n) for n in self.names()]

    def astype(self, dtype) -> "AttentionParams":
        return AttentionParams(*(np.asarray(t, dtype=dtype) for t in self.tensors()))

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]


def normalize_coords(coords, dims) -> np.ndarray:
    """Voxel centers mapped to [-1, 1] per axis: ``(2c + 1) / dims - 1``."""
    c = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    return (2.0 * c + 1.0) / np.asarray(dims, dtype=np.float64) - 1.0


def embed_positions(coords, grid: GridSpec, params: AttentionParams) -> np.ndarray:
    pn = normalize_coords(coords, grid.dims).astype(params.w_pos.dtype, copy=False)
    return pn @ params.w_pos + params.b_pos


def pad_groups(x, group_size):
    """Split rows into ``(B, G, C)`` groups, zero-padding the tail; also returns the row mask."""
    n, c = x.shape
    b = -(-n // group_size)
    padded = np.zeros((b * group_size, c), dtype=x.dtype)
    padded[:n] = x
    mask = np.zeros(b * group_size, dtype=bool)
    mask[:n] = True
    return padded.reshape(b, group_size, c), mask.reshape(b, group_size)


def _split_heads(t, heads):
    b, g, c = t.shape
    return t.reshape(b, g, heads, c // heads).transpose(0, 2, 1, 3)


def _merge_heads(t):
    b, h, g, hd = t.shape
    return t.transpose(0, 2, 1, 3).reshape(b, g, h * hd)


def attend_groups(xg, mask, params: AttentionParams, heads: int):
    """Attention within each group of an already padded ``(B, G, C)`` batch.

    Padded query rows come back as zeros.  A group with no valid row at all
    is allowed and produces zeros.
    """
    scale = xg.dtype.type(1.0 / np.sqrt(xg.shape[2] // heads))
    q = _split_heads(xg @ params.w_q + params.b_q, heads)
    k = _split_heads(xg @ params.w_k + params.b_k, heads)
    v = _split_heads(xg @ params.w_v + params.b_v, heads)
    logits = (q @ k.transpose(0, 1, 3, 2)) * scale
    key_ok = mask[:, None, None, :]
    logits = np.where(key_ok, logits, -np.inf)
    top = logits.max(axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    p = np.exp(logits - top)
    s = p.sum(axis=-1, keepdims=True)
    attn = p / np.where(s > 0, s, 1.0)
    ctx = _merge_heads(attn @ v)
    out = (ctx @ params.w_o + params.b_o) * mask[:, :, None]
    cache = dict(xg=xg, mask=mask, q=q, k=k, v=v, attn=attn, ctx=ctx, scale=scale, heads=heads)
    return out, cache


def attend_groups_backward(cache, dout, params: AttentionParams):
    """Gradients of :func:`attend_groups` w.r.t. its input batch and projection weights."""
    xg, mask, heads, scale = cache["xg"], cache["mask"], cache["heads"], cache["scale"]
    q, k, v, attn, ctx = cache["q"], cache["k"], cache["v"], cache["attn"], cache["ctx"]
    dout = dout * mask[:, :, None]
    flat = lambda t: t.reshape(-1, t.shape[-1])

    g = {}
    g["w_o"] = flat(ctx).T @ flat(dout)
    g["b_o"] = flat(dout).sum(axis=0)
    dctx = _split_heads(dout @ params.w_o.T, heads)
    dattn = dctx @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dctx
    dlogits = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dq = (dlogits @ k) * scale
    dk = (dlogits.transpose(0, 1, 3, 2) @ q) * scale

    dx = np.zeros_like(xg)
    for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
        dp = _merge_heads(dproj)
        g["w_" + name] = flat(xg).T @ flat(dp)
        g["b_" + name] = flat(dp).sum(axis=0)
        dx += dp @ getattr(params, "w_" + name).T
    return dx * mask[:, :, None], g


def _check_finite(name, a):
    bad = ~np.isfinite(a)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise NumericError(f"{name} has a non-finite value in row {row}", index=row)


def group_attention_forward(f_z, coords_z, grid: GridSpec, cfg: AttentionConfig,
                            params: AttentionParams):
    """Position-embedded group attention over rows already in serialized order.

    Parameters
    ----------
    f_z : (N, C) array
        Features in serialized order.
    coords_z : (N, 3) int array
        Voxel coordinates, same order as ``f_z``.
    grid : GridSpec
        Used to normalise coordinates for the position embedding.
    cfg : AttentionConfig
    params : AttentionParams

    Returns
    -------
    out : (N, C) array
    cache : dict
        Everything :func:`group_attention_backward` needs.
    """
    dtype = params.w_q.dtype
    f_z = np.asarray(f_z, dtype=dtype)
    n = f_z.shape[0]
    if f_z.ndim != 2 or f_z.shape[1] != cfg.channels or params.channels != cfg.channels:
        raise ContractError(
            f"features {f_z.shape} / params C={params.channels} do not match channels={cfg.channels}"
        )
    if len(coords_z) != n:
        raise ContractError(f"{n} feature rows but {len(coords_z)} coords")
    _check_finite("features", f_z)
    pn = normalize_coords(coords_z, grid.dims).astype(dtype, copy=False)
    x = f_z + (pn @ params.w_pos + params.b_pos)
    g = max(1, min(cfg.group_size, n)) if n else cfg.group_size
    xg, mask = pad_groups(x, g)
    out, cache = attend_groups(xg, mask, params, cfg.heads)
    cache.update(n=n, pn=pn, cfg=cfg)
    return out.reshape(-1, cfg.channels)[:n], cache


def group_attention_backward(cache, d_out, params: AttentionParams):
    """Returns ``(d_features, AttentionParams of gradients)``."""
    n, cfg, pn = cache["n"], cache["cfg"], cache["pn"]
    d_out = np.asarray(d_out, dtype=params.w_q.dtype)
    if d_out.shape != (n, cfg.channels):
        raise ContractError(f"upstream gradient {d_out.shape} does not match ({n}, {cfg.channels})")
    xg = cache["xg"]
    dpad = np.zeros((xg.shape[0] * xg.shape[1], cfg.channels), dtype=d_out.dtype)
    dpad[:n] = d_out
    dxg, g = attend_groups_backward(cache, dpad.reshape(xg.shape), params)
    dx = dxg.reshape(-1, cfg.channels)[:n]
    g["w_pos"] = pn.T @ dx
    g["b_pos"] = dx.sum(axis=0)
    return dx, AttentionParams(**g)
