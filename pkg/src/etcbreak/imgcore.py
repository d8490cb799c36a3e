"""Pixel-level primitives shared by the ciphers, the scorer and the solver.

Images are plain ``numpy`` arrays: ``(H, W)`` for single-channel planes and
``(H, W, 3)`` for color images, always ``uint8``.  Blocks are stacked along a
leading axis: ``(n, bh, bw)`` or ``(n, bh, bw, 3)``.

Geometry conventions (fixed across the package):

* lattice coordinates are ``(x, y)`` with ``x`` to the right and ``y`` down;
* sides are numbered 0=top, 1=right, 2=bottom, 3=left;
* the dihedral group D4 is enumerated as ``d = 4*f + r`` meaning "mirror
  left-right if ``f``, then rotate ``r`` quarter turns counter-clockwise";
* an intra-block variant is ``k = 8*t + d`` where ``t`` is the NPT bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

__all__ = [
    "BlockGrid", "BlockState", "MatchConfig", "InvalidInputError",
    "check_image", "rgb_to_ycbcr", "ycbcr_to_rgb", "ycbcr_to_rgb_float", "flatten", "unflatten",
    "split_blocks", "assemble_blocks", "transform_block", "transform_blocks",
    "inverse_state", "enumerate_variants", "variant_state", "state_variant",
    "read_image", "write_image",
]


class InvalidInputError(ValueError):
    """Raised when an image, block or parameter violates a precondition."""


# --------------------------------------------------------------------------
# validation

def check_image(img, channels=None, name="image"):
    """Return ``img`` as a uint8 array after checking shape and range."""
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise InvalidInputError(f"{name} must be HxW or HxWx3, got shape {arr.shape}")
    nch = 1 if arr.ndim == 2 else 3
    if channels is not None and nch != channels:
        raise InvalidInputError(f"{name} must have {channels} channel(s), got {nch}")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.integer) or np.issubdtype(arr.dtype, np.floating):
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise InvalidInputError(f"{name} samples must lie in [0, 255]")
            if np.issubdtype(arr.dtype, np.floating) and not np.all(arr == np.round(arr)):
                raise InvalidInputError(f"{name} samples must be integral")
            arr = arr.astype(np.uint8)
        else:
            raise InvalidInputError(f"{name} has unsupported dtype {arr.dtype}")
    return arr


# --------------------------------------------------------------------------
# color conversion

_RGB2YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.1687, -0.3313, 0.5],
    [0.5, -0.4187, -0.0813],
])
_YCC_OFFSET = np.array([0.0, 128.0, 128.0])
# exact inverse of the forward matrix, so that the round trip error is only rounding
_YCC2RGB = np.linalg.inv(_RGB2YCC)


def _round_clamp(x):
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def rgb_to_ycbcr(img):
    """Convert an RGB image to YCbCr, rounding half up and clamping to [0, 255]."""
    arr = check_image(img, channels=3).astype(np.float64)
    return _round_clamp(arr @ _RGB2YCC.T + _YCC_OFFSET)


def ycbcr_to_rgb(img):
    """Inverse of :func:`rgb_to_ycbcr` up to +-1 per sample."""
    arr = check_image(img, channels=3).astype(np.float64)
    return _round_clamp((arr - _YCC_OFFSET) @ _YCC2RGB.T)


def ycbcr_to_rgb_float(arr):
    """Unrounded inverse conversion of a float YCbCr array."""
    return (np.asarray(arr, dtype=np.float64) - _YCC_OFFSET) @ _YCC2RGB.T


def flatten(img):
    """Lay the three channels side by side: ``(H, W, 3) -> (H, 3W)``."""
    arr = check_image(img, channels=3)
    return np.concatenate([arr[:, :, k] for k in range(3)], axis=1)


def unflatten(plane):
    arr = check_image(plane, channels=1)
    h, w3 = arr.shape
    if w3 % 3:
        raise InvalidInputError(f"flattened width {w3} is not a multiple of 3")
    w = w3 // 3
    return np.stack([arr[:, k * w:(k + 1) * w] for k in range(3)], axis=2)


# --------------------------------------------------------------------------
# block partition

@dataclass(frozen=True)
class BlockGrid:
    """Raster partition of an image into ``block_w x block_h`` tiles.

    ``cols``/``rows`` count blocks of one plane; a flattened YCbCr image has
    ``planes=3`` planes side by side, so its raster rows hold ``3*cols`` blocks.
    """

    block_w: int
    block_h: int
    cols: int
    rows: int
    planes: int = 1

    @property
    def n(self):
        return self.planes * self.cols * self.rows

    @property
    def row_len(self):
        return self.planes * self.cols

    def plane_of(self, idx):
        return (np.asarray(idx) % self.row_len) // self.cols

    def cell_of(self, idx):
        """Cell ``(x, y)`` of raster block ``idx`` inside its own plane."""
        idx = np.asarray(idx)
        return (idx % self.row_len) % self.cols, idx // self.row_len

    def index_of(self, plane, x, y):
        return y * self.row_len + plane * self.cols + x

    def adjacent_pairs(self):
        """All in-plane 4-neighbour pairs ``(a, b, side_of_a)`` with b right of or below a.

        Their count is ``planes * (2*cols*rows - cols - rows)``.
        """
        out = []
        for p in range(self.planes):
            for y in range(self.rows):
                for x in range(self.cols):
                    a = self.index_of(p, x, y)
                    if x + 1 < self.cols:
                        out.append((a, self.index_of(p, x + 1, y), 1))
                    if y + 1 < self.rows:
                        out.append((a, self.index_of(p, x, y + 1), 2))
        return out


def split_blocks(img, block_w, block_h=None, planes=1):
    """Split an image into raster-ordered blocks; returns ``(blocks, grid)``."""
    block_h = block_w if block_h is None else block_h
    arr = check_image(img)
    if block_w < 2 or block_h < 2:
        raise InvalidInputError("block dimensions must be at least 2")
    h, w = arr.shape[:2]
    if w % block_w or h % block_h:
        raise InvalidInputError(
            f"image {w}x{h} is not divisible into {block_w}x{block_h} blocks")
    row_len = w // block_w
    if row_len % planes:
        raise InvalidInputError(f"{row_len} blocks per row cannot form {planes} planes")
    rows = h // block_h
    grid = BlockGrid(block_w, block_h, row_len // planes, rows, planes)
    tail = arr.shape[2:]
    blocks = (arr.reshape(rows, block_h, row_len, block_w, *tail)
              .swapaxes(1, 2)
              .reshape(rows * row_len, block_h, block_w, *tail))
    return np.ascontiguousarray(blocks), grid


def assemble_blocks(blocks, grid):
    """Inverse of :func:`split_blocks`."""
    blocks = np.asarray(blocks)
    if blocks.shape[0] != grid.n:
        raise InvalidInputError(f"expected {grid.n} blocks, got {blocks.shape[0]}")
    tail = blocks.shape[3:]
    out = (blocks.reshape(grid.rows, grid.row_len, grid.block_h, grid.block_w, *tail)
           .swapaxes(1, 2)
           .reshape(grid.rows * grid.block_h, grid.row_len * grid.block_w, *tail))
    return np.ascontiguousarray(out)


# --------------------------------------------------------------------------
# the dihedral group D4

SIDE_DIRS = np.array([(0, -1), (1, 0), (0, 1), (-1, 0)])
_ROT = np.array([[0, 1], [-1, 0]])      # quarter turn CCW on screen (y points down)
_MIRROR = np.array([[-1, 0], [0, 1]])   # left-right mirror


def _matrix(d):
    f, r = divmod(d, 4)
    return np.linalg.matrix_power(_ROT, r) @ np.linalg.matrix_power(_MIRROR, f)


D4_MATS = np.array([_matrix(d) for d in range(8)])


def _index_of_matrix(m):
    for d in range(8):
        if np.array_equal(D4_MATS[d], m):
            return d
    raise AssertionError("not a D4 element")


# D4_MUL[a, b] is the element "apply b, then a"
D4_MUL = np.array([[_index_of_matrix(D4_MATS[a] @ D4_MATS[b]) for b in range(8)] for a in range(8)])
D4_INV = np.array([_index_of_matrix(np.round(np.linalg.inv(D4_MATS[d])).astype(int)) for d in range(8)])
D4_DET = np.array([0 if round(np.linalg.det(D4_MATS[d])) > 0 else 1 for d in range(8)])


def _side_of_dir(v):
    for s in range(4):
        if tuple(SIDE_DIRS[s]) == tuple(v):
            return s
    raise AssertionError(v)


# D4_SIDE[d, s]: where side s of a block ends up after applying element d
D4_SIDE = np.array([[_side_of_dir(D4_MATS[d] @ SIDE_DIRS[s]) for s in range(4)] for d in range(8)])


def opposite(side):
    return (side + 2) % 4


def _relative_table():
    table = np.zeros((4, 4, 2), dtype=int)
    for su in range(4):
        for sv in range(4):
            for i in range(2):
                hits = [d for d in range(8) if D4_SIDE[d, sv] == opposite(su) and D4_DET[d] == i]
                assert len(hits) == 1
                table[su, sv, i] = hits[0]
    return table


# REL[s_u, s_v, i]: the D4 element that, applied to v in u's frame, puts v's side s_v
# against u's side s_u with the requested handedness
REL = _relative_table()


def apply_d4(d, vec):
    return D4_MATS[d] @ np.asarray(vec)


_GATHER_CACHE = {}


def _gather(d, bh, bw):
    """Source flat indices so that ``out.flat = block.flat[src]`` applies element ``d``."""
    key = (d, bh, bw)
    if key not in _GATHER_CACHE:
        m = D4_MATS[d]
        if bh != bw and m[0, 0] == 0:
            raise InvalidInputError("odd quarter turns need square blocks")
        out_h, out_w = bh, bw
        ys, xs = np.mgrid[0:out_h, 0:out_w]
        # doubled, centred coordinates keep everything integral
        dst = np.stack([2 * xs - (out_w - 1), 2 * ys - (out_h - 1)], axis=-1)
        src = dst @ np.round(np.linalg.inv(m)).astype(int).T
        sx = (src[..., 0] + bw - 1) // 2
        sy = (src[..., 1] + bh - 1) // 2
        _GATHER_CACHE[key] = (sy * bw + sx).ravel()
    return _GATHER_CACHE[key]


# --------------------------------------------------------------------------
# color permutations (RGB, RBG, BGR, BRG, GBR, GRB)

PERMS = np.array([(0, 1, 2), (0, 2, 1), (2, 1, 0), (2, 0, 1), (1, 2, 0), (1, 0, 2)])


def _perm_index(p):
    for c in range(6):
        if tuple(PERMS[c]) == tuple(p):
            return c
    raise AssertionError(p)


# PERM_MUL[a, b] = index of "a after b" as index arrays: result[j] = PERMS[b][PERMS[a][j]]
PERM_MUL = np.array([[_perm_index(PERMS[b][PERMS[a]]) for b in range(6)] for a in range(6)])
PERM_INV = np.array([_perm_index(np.argsort(PERMS[c])) for c in range(6)])


def permute_channels(block, c):
    """``out[..., j] = block[..., PERMS[c][j]]``."""
    return block[..., PERMS[c]]


# --------------------------------------------------------------------------
# intra-block transforms

@dataclass(frozen=True)
class BlockState:
    """Rotation ``r`` (quarter turns), then mirror ``i``, then NPT ``t``, then channel order ``c``."""

    r: int = 0
    i: int = 0
    t: int = 0
    c: int = 0

    @property
    def d(self):
        return D4_MUL[4 * self.i, self.r % 4]

    @classmethod
    def from_parts(cls, d, t=0, c=0):
        f, r = divmod(int(d), 4)
        # mirror-then-rotate(r) equals rotate(-r)-then-mirror
        return cls((-r) % 4 if f else r, f, int(t), int(c))


def inverse_state(s):
    return BlockState.from_parts(D4_INV[s.d], s.t, PERM_INV[s.c])


def _dihedral(block, d):
    block = np.asarray(block)
    bh, bw = block.shape[:2]
    src = _gather(int(d), bh, bw)
    flat = block.reshape(bh * bw, *block.shape[2:])
    m = D4_MATS[d]
    oh, ow = (bh, bw) if m[0, 0] != 0 else (bw, bh)
    return flat[src].reshape(oh, ow, *block.shape[2:])


def transform_block(block, state):
    block = np.asarray(block)
    if block.shape[0] != block.shape[1] and state.r % 2:
        raise InvalidInputError("odd rotations need square blocks")
    out = _dihedral(block, state.d)
    if state.t:
        out = out ^ np.uint8(255)
    if state.c:
        if out.ndim != 3:
            raise InvalidInputError("color permutation needs a 3-channel block")
        out = permute_channels(out, state.c)
    return out


def transform_blocks(blocks, d, t=None, c=None):
    """Vectorised transform of a block stack with per-block ``d``/``t``/``c`` arrays."""
    blocks = np.asarray(blocks)
    n, bh, bw = blocks.shape[:3]
    tail = blocks.shape[3:]
    d = np.broadcast_to(np.asarray(d, dtype=int), (n,))
    if bh != bw and np.any(D4_MATS[d][:, 0, 0] == 0):
        raise InvalidInputError("odd quarter turns need square blocks")
    table = np.stack([_gather(k, bh, bw) for k in range(8)]) if bh == bw else None
    flat = blocks.reshape(n, bh * bw, *tail)
    if table is not None:
        out = flat[np.arange(n)[:, None], table[d]]
    else:
        out = np.empty_like(flat)
        for k in np.unique(d):
            sel = d == k
            out[sel] = flat[sel][:, _gather(int(k), bh, bw)]
    out = out.reshape(n, bh, bw, *tail)
    if t is not None:
        t = np.broadcast_to(np.asarray(t, dtype=np.uint8), (n,))
        out = out ^ (t * np.uint8(255)).reshape(n, *([1] * (out.ndim - 1)))
    if c is not None:
        c = np.broadcast_to(np.asarray(c, dtype=int), (n,))
        out = np.take_along_axis(out, PERMS[c].reshape(n, 1, 1, 3), axis=3)
    return out


def variant_state(k):
    """BlockState of intra-block variant ``k = 8*t + d``."""
    t, d = divmod(int(k), 8)
    return BlockState.from_parts(d, t)


def state_variant(state):
    return 8 * state.t + int(state.d)


def enumerate_variants(block):
    """All 16 dihedral x NPT images of a square block, indexed by ``k``."""
    block = np.asarray(block)
    if block.shape[0] != block.shape[1]:
        raise InvalidInputError("variants need a square block")
    ks = np.arange(16)
    return transform_blocks(np.broadcast_to(block, (16, *block.shape)), ks % 8, ks // 8)


def all_variants(blocks):
    """``(n, ...) -> (n, 16, ...)`` variant stack for a whole block list."""
    blocks = np.asarray(blocks)
    n = blocks.shape[0]
    ks = np.tile(np.arange(16), n)
    rep = np.repeat(blocks, 16, axis=0)
    return transform_blocks(rep, ks % 8, ks // 8).reshape(n, 16, *blocks.shape[1:])


# --------------------------------------------------------------------------
# match configurations

class MatchConfig(NamedTuple):
    """Side ``s_u`` of block u abuts side ``s_v`` of block v (both in cipher frames).

    ``i`` is relative mirroring, ``t`` relative NPT and ``c`` the channel
    permutation applied to v before comparing it with u.
    """

    u: int
    v: int
    s_u: int
    s_v: int
    i: int = 0
    t: int = 0
    c: int = 0


PUZZLE_K = {"type0": 4, "type1": 16, "etc": 96}


def config_count(puzzle):
    try:
        return PUZZLE_K[puzzle]
    except KeyError:
        raise InvalidInputError(f"unknown puzzle type {puzzle!r}") from None


def decode_config(k, puzzle):
    """Configuration index -> ``(s_v, i, t, c)``."""
    k = int(k)
    if puzzle == "type0":
        return k, 0, 0, 0
    c, g = divmod(k, 16)
    return g >> 2, (g >> 1) & 1, g & 1, c


def encode_config(s_v, i=0, t=0, c=0, puzzle="type1"):
    if puzzle == "type0":
        if i or t or c:
            raise InvalidInputError("type0 puzzles have no mirroring, NPT or color")
        return int(s_v)
    return int(c) * 16 + int(s_v) * 4 + int(i) * 2 + int(t)


# --------------------------------------------------------------------------
# lossless I/O

def read_image(path):
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im).copy()


def write_image(path, img):
    from PIL import Image

    arr = check_image(img)
    path = Path(path)
    fmt = "PNG" if path.suffix.lower() in ("", ".png") else None
    Image.fromarray(arr).save(path, format=fmt)
