"""Conjugate Hilbert expansion: curve indexing and voxel serialization.

The Hilbert kernel is a table-driven state machine.  A state is a cube
symmetry ``(e, r)`` acting on a packed ``d``-bit cell vector as
``b -> rotr(b ^ e, r)``; at each level the current state maps the cell's
bits to a Gray-code digit and composes with the child's symmetry.  The
tables are small (8 states in 2D, 24 in 3D) and every step is a handful of
numpy gathers, so a whole array of coordinates is encoded at once.

Axis 0 is the most significant bit of each digit.  In 2D the level-1 curve
is (0,0) -> (0,1) -> (1,1) -> (1,0).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, ContractError, DomainError
from .voxelizer import GridSpec, VoxelSet

MAX_LEVEL = 16


class Strategy(enum.Enum):
    PLUS = "+"
    MINUS = "-"

    @classmethod
    def parse(cls, text) -> "Strategy":
        if isinstance(text, cls):
            return text
        t = str(text).strip().lower()
        if t in ("+", "plus", "p"):
            return cls.PLUS
        if t in ("-", "minus", "m"):
            return cls.MINUS
        raise ConfigError(f"unknown strategy {text!r}; use + or -", key="strategy")


def _rotr(b, r, d):
    r %= d
    mask = (1 << d) - 1
    return ((b >> r) | (b << (d - r))) & mask


def _rotl(b, r, d):
    return _rotr(b, d - r % d, d)


def _gray_inverse(g):
    b = 0
    while g:
        b ^= g
        g >>= 1
    return b


def _child_symmetry(w, d):
    """Entry corner and intra-cube direction of child ``w`` (Gray-code order)."""
    if w == 0:
        return 0, 0
    e = (2 * ((w - 1) // 2)) ^ ((2 * ((w - 1) // 2)) >> 1)
    t = w - 1 if w % 2 == 0 else w
    ones = 0
    while t & 1:
        t >>= 1
        ones += 1
    return e, ones % d


@lru_cache(maxsize=None)
def _tables(d):
    """(digit, next_state) for encoding and (cell, next_state) for decoding.

    State ``s = e * d + k`` stands for the symmetry ``b -> rotr(b ^ e, k + 1)``.
    """
    n_states, n_cells = (1 << d) * d, 1 << d
    enc_digit = np.zeros((n_states, n_cells), np.uint64)
    enc_next = np.zeros((n_states, n_cells), np.int64)
    dec_cell = np.zeros((n_states, n_cells), np.uint64)
    dec_next = np.zeros((n_states, n_cells), np.int64)
    for s in range(n_states):
        e, k = divmod(s, d)
        for b in range(n_cells):
            w = _gray_inverse(_rotr(b ^ e, k + 1, d))
            ce, ck = _child_symmetry(w, d)
            nxt = (e ^ _rotl(ce, k + 1, d)) * d + (k + ck + 1) % d
            enc_digit[s, b] = w
            enc_next[s, b] = nxt
            dec_cell[s, w] = b
            dec_next[s, w] = nxt
    return enc_digit, enc_next, dec_cell, dec_next


def _identity_state(d):
    # rotr by d is the identity
    return d - 1


def _check_dims(d):
    if d not in (2, 3):
        raise DomainError(f"curve dimensionality must be 2 or 3, got {d}")


def _check_level(level):
    if not 0 <= level <= MAX_LEVEL:
        raise DomainError(f"level must lie in [0, {MAX_LEVEL}], got {level}")


def hilbert_encode_array(coords, level: int) -> np.ndarray:
    """Hilbert indices of an ``(N, d)`` integer array; returns uint64.

    Every coordinate must lie in ``[0, 2**level)``.  Level 0 is the one-cell
    curve and maps everything to 0.
    """
    coords = np.asarray(coords)
    if coords.ndim != 2:
        raise DomainError("coords must be an (N, d) array")
    d = coords.shape[1]
    _check_dims(d)
    _check_level(level)
    c = coords.astype(np.int64)
    if c.size and (c.min() < 0 or c.max() >= (1 << level)):
        raise DomainError(f"coordinate outside [0, {1 << level}) at level {level}")
    c = c.astype(np.uint64)
    digit, nxt, _, _ = _tables(d)
    state = np.full(len(c), _identity_state(d), np.int64)
    key = np.zeros(len(c), np.uint64)
    for lv in range(level - 1, -1, -1):
        sh = np.uint64(lv)
        b = np.zeros(len(c), np.int64)
        for a in range(d):
            b |= (((c[:, a] >> sh) & np.uint64(1)).astype(np.int64)) << (d - 1 - a)
        key = (key << np.uint64(d)) | digit[state, b]
        state = nxt[state, b]
    return key


def hilbert_decode_array(index, level: int, d: int) -> np.ndarray:
    """Inverse of :func:`hilbert_encode_array`; returns an ``(N, d)`` int64 array."""
    _check_dims(d)
    _check_level(level)
    idx = np.asarray(index)
    if idx.ndim != 1:
        raise DomainError("index must be one-dimensional")
    if idx.size and (np.any(idx < 0) or np.any(idx.astype(np.uint64) >= np.uint64(1) << np.uint64(d * level))):
        raise DomainError(f"index outside [0, 2**{d * level})")
    idx = idx.astype(np.uint64)
    _, _, cell, nxt = _tables(d)
    state = np.full(len(idx), _identity_state(d), np.int64)
    out = np.zeros((len(idx), d), np.int64)
    mask = np.uint64((1 << d) - 1)
    for lv in range(level - 1, -1, -1):
        w = ((idx >> np.uint64(d * lv)) & mask).astype(np.int64)
        b = cell[state, w].astype(np.int64)
        for a in range(d):
            out[:, a] |= ((b >> (d - 1 - a)) & 1) << lv
        state = nxt[state, w]
    return out


def hilbert_encode(coord, level: int, d: int | None = None) -> int:
    """Hilbert index of a single cell; ``d`` defaults to ``len(coord)``."""
    coord = tuple(int(v) for v in coord)
    if d is not None and d != len(coord):
        raise DomainError(f"coord has {len(coord)} components but d={d}")
    return int(hilbert_encode_array(np.array([coord], np.int64), level)[0])


def hilbert_decode(index: int, level: int, d: int) -> tuple[int, ...]:
    index = int(index)
    if index < 0 or index >= 1 << (d * level):
        raise DomainError(f"index {index} outside [0, 2**{d * level})")
    return tuple(int(v) for v in hilbert_decode_array(np.array([index], np.uint64), level, d)[0])


@dataclass(frozen=True)
class ExpansionConfig:
    """Two-level curve depth: ``l_glb`` bits of coarse cells, ``l_lcl`` inside each."""

    l_glb: int = 6
    l_lcl: int = 3

    def __post_init__(self):
        if not 1 <= self.l_glb <= MAX_LEVEL:
            raise ConfigError(f"l_glb must lie in [1, {MAX_LEVEL}], got {self.l_glb}", key="l_glb")
        if not 0 <= self.l_lcl <= MAX_LEVEL:
            raise ConfigError(f"l_lcl must lie in [0, {MAX_LEVEL}], got {self.l_lcl}", key="l_lcl")

    @property
    def padded_side(self) -> int:
        return 1 << (self.l_glb + self.l_lcl)

    @classmethod
    def for_grid(cls, grid: GridSpec, l_glb: int = 6) -> "ExpansionConfig":
        """Pick ``l_lcl`` so the curve exactly covers the grid's widest axis."""
        bits = (max(serialized_dims(grid)) - 1).bit_length()
        return cls(l_glb, max(0, bits - l_glb))

    def check_covers(self, grid: GridSpec):
        need = max(serialized_dims(grid))
        if self.padded_side < need:
            raise ConfigError(
                f"l_glb + l_lcl = {self.l_glb + self.l_lcl} bits cover {self.padded_side} cells "
                f"but the grid needs {need}",
                key="l_lcl",
            )


def curve_dims(grid: GridSpec) -> int:
    """2 when the grid is a single z layer, else 3."""
    return 2 if grid.dims[2] == 1 else 3


def serialized_dims(grid: GridSpec):
    return grid.dims[: curve_dims(grid)]


def apply_strategy(coords, strategy: Strategy, padded_side: int) -> np.ndarray:
    """Frame transform of ``(N, 3)`` coords: identity for PLUS, 90 degree XY turn for MINUS."""
    c = np.asarray(coords, dtype=np.int64)
    single = c.ndim == 1
    c = c.reshape(-1, 3)
    if c.size and (c.min() < 0 or c[:, :2].max() >= padded_side):
        raise DomainError(f"coordinate outside the padded cube of side {padded_side}")
    if strategy is Strategy.PLUS:
        out = c.copy()
    else:
        out = np.stack([padded_side - 1 - c[:, 1], c[:, 0], c[:, 2]], axis=1)
    return out[0] if single else out


@dataclass
class SerializationPlan:
    """Ordered field: ``order[i]`` is the voxel row placed at position ``i``."""

    order: np.ndarray
    inverse: np.ndarray
    global_keys: np.ndarray
    local_keys: np.ndarray

    def __len__(self):
        return len(self.order)

    @classmethod
    def identity(cls, n) -> "SerializationPlan":
        r = np.arange(n, dtype=np.int64)
        z = np.zeros(n, np.uint64)
        return cls(r, r.copy(), z, z.copy())

    @classmethod
    def from_order(cls, order) -> "SerializationPlan":
        order = np.asarray(order, dtype=np.int64)
        inv = np.empty_like(order)
        inv[order] = np.arange(len(order))
        z = np.zeros(len(order), np.uint64)
        return cls(order, inv, z, z.copy())


def serialization_keys(coords, grid: GridSpec, strategy: Strategy, cfg: ExpansionConfig,
                       encoder=hilbert_encode_array):
    """(global_key, local_key) per voxel, both uint64, in input row order."""
    d = curve_dims(grid)
    c = apply_strategy(coords, Strategy.parse(strategy), cfg.padded_side)[:, :d]
    glb = encoder(c >> cfg.l_lcl, cfg.l_glb)
    lcl = encoder(c & ((1 << cfg.l_lcl) - 1), cfg.l_lcl)
    return glb, lcl


def serialize(voxels: VoxelSet, strategy: Strategy, cfg: ExpansionConfig,
              encoder=hilbert_encode_array) -> SerializationPlan:
    """Order voxels by (global Hilbert cell, local Hilbert offset) after the strategy's frame change.

    ``encoder`` is swappable so self-checks can inject a faulty kernel.
    """
    cfg.check_covers(voxels.grid)
    n = len(voxels)
    if n == 0:
        return SerializationPlan.identity(0)
    glb, lcl = serialization_keys(voxels.coords, voxels.grid, strategy, cfg, encoder)
    order = np.lexsort((lcl, glb)).astype(np.int64)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(n, dtype=np.int64)
    return SerializationPlan(order, inverse, glb[order], lcl[order])


def _check_rows(features, plan):
    if features.shape[0] != len(plan):
        raise ContractError(f"{features.shape[0]} rows but the plan has {len(plan)} entries")


def gather(features, plan: SerializationPlan) -> np.ndarray:
    """Rows in serialized order: ``out[i] = features[plan.order[i]]``."""
    features = np.asarray(features)
    _check_rows(features, plan)
    return features[plan.order]


def scatter(features, plan: SerializationPlan) -> np.ndarray:
    """Undo :func:`gather`: ``out[plan.order[i]] = features[i]``."""
    features = np.asarray(features)
    _check_rows(features, plan)
    return features[plan.inverse]


def curve_table(level: int, d: int) -> np.ndarray:
    """Whole curve as an ``(2**(d*level), d)`` array of cells, in index order."""
    return hilbert_decode_array(np.arange(1 << (d * level), dtype=np.uint64), level, d)
