"""Configuration text, seeded parameter generation and the binary containers.

All containers are little-endian.

``SEGW`` (weights)::

    b"SEGW"  u16 version  u32 config_len  config text (utf-8, as dump_config)
    per tensor, in LayerParams.named_tensors order for every layer:
        u8 ndim  ndim x u32 shape  data (f32 or f64 per config precision)

``SEGV`` (voxels)::

    b"SEGV"  u16 version  u64 N  u16 C  3 x u32 dims
    N x 3 u32 coords (x, y, z)  then N x C f32 features, row-major

``SEGB`` (BEV grid)::

    b"SEGB"  u16 version  u32 nx  u32 ny  u32 C  then nx x ny x C f32, row-major

Random parameters come from numpy's Philox4x64 counter-based generator
seeded with the config seed; see ``tests/test_model_io.py`` for the pinned
reference outputs.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .attention import AttentionConfig, AttentionParams
from .encoder import (BLOCKS_PER_STAGE, LAYERS_PER_BLOCK, N_STAGES, BevGrid,
                      EncoderParams, LayerParams)
from .errors import ConfigError, ContractError, FormatError, TruncatedError
from .spacecurve import ExpansionConfig
from .voxelizer import DEFAULT_GRID, GridSpec, VoxelSet

VERSION = 1
PRECISIONS = {"f32": np.float32, "f64": np.float64}


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec = DEFAULT_GRID
    l_glb: int = 6
    l_lcl: int = 3
    group_size: int = 128
    channels: int = 128
    heads: int = 8
    seed: int = 0
    precision: str = "f64"
    stride: int = 5

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}", key="precision")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer", key="seed")
        if self.stride < 3:
            raise ConfigError("stride must be at least 3", key="stride")
        # component validation raises with the offending key
        self.attention
        self.expansion.check_covers(self.grid)

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.channels, self.heads, self.group_size)

    @property
    def expansion(self) -> ExpansionConfig:
        return ExpansionConfig(self.l_glb, self.l_lcl)

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


_VEC_KEYS = ("range_min", "range_max", "voxel_size")
_INT_KEYS = ("l_glb", "l_lcl", "group_size", "channels", "heads", "seed", "stride")
KEYS = _VEC_KEYS + _INT_KEYS + ("precision",)


def _parse_value(key, raw, lineno):
    try:
        if key in _VEC_KEYS:
            parts = [float(p) for p in raw.split(",")]
            if len(parts) != 3:
                raise ValueError
            return tuple(parts)
        if key in _INT_KEYS:
            return int(raw, 0)
        return raw
    except ValueError:
        what = "three comma-separated numbers" if key in _VEC_KEYS else "an integer"
        raise ConfigError(f"line {lineno}: {key} expects {what}, got {raw!r}", key=key, line=lineno) from None


def load_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines (``#`` starts a comment).

    Missing keys take the defaults of :class:`RunConfig`, except ``l_lcl``,
    which defaults to the smallest depth that lets ``l_glb + l_lcl`` bits
    cover the grid.
    """
    seen = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}", line=lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}", key=key, line=lineno)
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}", key=key, line=lineno)
        seen[key] = _parse_value(key, raw, lineno)

    grid = GridSpec(
        seen.pop("range_min", DEFAULT_GRID.range_min),
        seen.pop("range_max", DEFAULT_GRID.range_max),
        seen.pop("voxel_size", DEFAULT_GRID.voxel_size),
    )
    l_glb = seen.get("l_glb", RunConfig.l_glb)
    if "l_lcl" not in seen:
        seen["l_lcl"] = ExpansionConfig.for_grid(grid, max(1, l_glb)).l_lcl if l_glb >= 1 else 0
    return RunConfig(grid=grid, **seen)


def dump_config(cfg: RunConfig) -> str:
    """Canonical text form; ``load_config(dump_config(c)) == c``."""
    vec = lambda v: ", ".join(repr(float(x)) for x in v)
    lines = [
        f"range_min = {vec(cfg.grid.range_min)}",
        f"range_max = {vec(cfg.grid.range_max)}",
        f"voxel_size = {vec(cfg.grid.voxel_size)}",
    ]
    lines += [f"{k} = {getattr(cfg, k)}" for k in _INT_KEYS]
    lines.append(f"precision = {cfg.precision}")
    return "\n".join(lines) + "\n"


def read_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    return load_config(Path(path).read_text())


# --- parameters -----------------------------------------------------------

def init_params(cfg: RunConfig, identity: bool = False) -> EncoderParams:
    """Seeded weights: projections ~ U(-1/sqrt(C), 1/sqrt(C)), biases 0, norm gains 1.

    With ``identity=True`` the residual output projections (``w_o``,
    ``ffn_w2``) start at zero, which makes the whole encoder the identity on
    features.  Draws happen in on-disk tensor order regardless of the mode.
    """
    c = cfg.channels
    bound = 1.0 / np.sqrt(c)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    projections = {"w_q", "w_k", "w_v", "w_o", "w_pos", "ffn_w1", "ffn_w2"}
    shapes = AttentionParams.shapes(c) | LayerParams.own_shapes(c)

    def make_layer():
        vals = {}
        for name, _ in LayerParams.zeros(1).named_tensors():
            short = name.split(".")[-1]
            shape = shapes[short]
            if short in projections:
                t = -bound + 2.0 * bound * rng.random(shape)
                if identity and short in ("w_o", "ffn_w2"):
                    t = np.zeros(shape)
            elif short.endswith("gain"):
                t = np.ones(shape)
            else:
                t = np.zeros(shape)
            vals[name] = t.astype(cfg.dtype)
        return _layer_from_named(vals)

    stages = [[[make_layer() for _ in range(LAYERS_PER_BLOCK)] for _ in range(BLOCKS_PER_STAGE)]
              for _ in range(N_STAGES)]
    return EncoderParams(stages, cfg.attention, cfg.expansion)


def _layer_from_named(vals):
    att = AttentionParams(**{n: vals["attention." + n] for n in AttentionParams.names()})
    own = {k: v for k, v in vals.items() if not k.startswith("attention.")}
    return LayerParams(att, **own)


def _write_tensor(buf, t, dtype):
    t = np.ascontiguousarray(t, dtype=np.dtype(dtype).newbyteorder("<"))
    buf.write(struct.pack("<B", t.ndim))
    buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
    buf.write(t.tobytes())


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data, self.pos, self.what = data, 0, what

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedError(
                f"{self.what}: truncated at byte {self.pos}, needed {n} more bytes "
                f"but only {len(self.data) - self.pos} remain"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def header(self, magic: bytes):
        got = self.take(len(magic))
        if got != magic:
            raise FormatError(f"{self.what}: bad magic {got!r}, expected {magic!r}")
        (version,) = self.unpack("<H")
        if version != VERSION:
            raise FormatError(f"{self.what}: unsupported version {version}")

    def array(self, dtype, count):
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt)


def save_params(params: EncoderParams, cfg: RunConfig) -> bytes:
    if params.attention != cfg.attention or params.expansion != cfg.expansion:
        raise ContractError("params were built for a different configuration")
    buf = io.BytesIO()
    text = dump_config(cfg).encode()
    buf.write(b"SEGW" + struct.pack("<HI", VERSION, len(text)) + text)
    for lp in params.layers():
        for _, t in lp.named_tensors():
            _write_tensor(buf, t, cfg.dtype)
    return buf.getvalue()


def load_params(data: bytes):
    """Inverse of :func:`save_params`; returns ``(EncoderParams, RunConfig)``."""
    r = _Reader(data, "SEGW")
    r.header(b"SEGW")
    (n,) = r.unpack("<I")
    try:
        cfg = load_config(r.take(n).decode())
    except UnicodeDecodeError:
        raise FormatError("SEGW: config header is not valid utf-8") from None
    template = LayerParams.zeros(cfg.channels)
    layers = []
    for i in range(N_STAGES * BLOCKS_PER_STAGE * LAYERS_PER_BLOCK):
        vals = {}
        for name, ref in template.named_tensors():
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}I")
            if shape != ref.shape:
                raise ContractError(f"SEGW layer {i} {name}: shape {shape} but config implies {ref.shape}")
            vals[name] = r.array(cfg.dtype, int(np.prod(shape))).reshape(shape).astype(cfg.dtype)
        layers.append(_layer_from_named(vals))
    if r.pos != len(data):
        raise FormatError(f"SEGW: {len(data) - r.pos} trailing bytes")
    it = iter(layers)
    stages = [[[next(it) for _ in range(LAYERS_PER_BLOCK)] for _ in range(BLOCKS_PER_STAGE)]
              for _ in range(N_STAGES)]
    return EncoderParams(stages, cfg.attention, cfg.expansion), cfg


# --- voxel and BEV containers --------------------------------------------

def write_voxels(vs: VoxelSet) -> bytes:
    n, c = vs.features.shape
    buf = io.BytesIO()
    buf.write(b"SEGV" + struct.pack("<HQH3I", VERSION, n, c, *vs.grid.dims))
    buf.write(np.ascontiguousarray(vs.coords, dtype="<u4").tobytes())
    buf.write(np.ascontiguousarray(vs.features, dtype="<f4").tobytes())
    return buf.getvalue()


def read_voxels(data: bytes, grid: GridSpec | None = None) -> VoxelSet:
    """Parse a ``SEGV`` container.

    The file only records grid dims.  Pass ``grid`` to attach the real
    geometry (its dims must agree); otherwise an index-space grid is used.
    """
    r = _Reader(data, "SEGV")
    r.header(b"SEGV")
    n, c, *dims = r.unpack("<QH3I")
    coords = r.array("u4", 3 * n).reshape(n, 3).astype(np.int64)
    feats = r.array("f4", n * c).reshape(n, c).astype(np.float64)
    if r.pos != len(data):
        raise FormatError(f"SEGV: {len(data) - r.pos} trailing bytes")
    if grid is None:
        grid = GridSpec.index_space(dims)
    elif tuple(grid.dims) != tuple(dims):
        raise ConfigError(f"voxel file dims {tuple(dims)} do not match config grid dims {grid.dims}",
                          key="voxel_size")
    return VoxelSet(feats, coords, grid)


def write_bev(bev: BevGrid) -> bytes:
    nx, ny, c = bev.features.shape
    return b"SEGB" + struct.pack("<H3I", VERSION, nx, ny, c) + np.ascontiguousarray(
        bev.features, dtype="<f4").tobytes()


def read_bev(data: bytes) -> np.ndarray:
    r = _Reader(data, "SEGB")
    r.header(b"SEGB")
    nx, ny, c = r.unpack("<3I")
    return r.array("f4", nx * ny * c).reshape(nx, ny, c).astype(np.float32)


def write_bev_csv(bev: BevGrid, channel: int = 0) -> str:
    """One channel as ``x,y,value`` rows over every cell."""
    nx, ny, c = bev.features.shape
    if not 0 <= channel < c:
        raise ContractError(f"channel {channel} outside [0, {c})")
    xs, ys = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    vals = bev.features[:, :, channel]
    rows = ["x,y,value"] + [f"{x},{y},{v!r}" for x, y, v in zip(xs.ravel(), ys.ravel(), vals.ravel().tolist())]
    return "\n".join(rows) + "\n"


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, seed=seed)
