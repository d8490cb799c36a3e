"""Block-wise encryption-then-compression ciphers.

``etcs`` is the grayscale-like scheme: RGB -> YCbCr -> three planes side by side
-> 8x8 block shuffle, rotation/mirroring and negative-positive transform (NPT).
``etc`` is the conventional color scheme on 16x16 RGB blocks that additionally
shuffles the three color channels of each block.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass, field

import numpy as np

from .imgcore import (
    D4_INV, D4_MUL, PERM_INV, BlockGrid, InvalidInputError, assemble_blocks, check_image,
    flatten, rgb_to_ycbcr, split_blocks, transform_blocks, unflatten, ycbcr_to_rgb,
)

SCHEMES = ("etcs", "etc")
ETC_BLOCK = 16
# "s(i) swaps B(i) and B(s(i))", applied in increasing i over the current arrangement
SWAP_MODE = "sequential"

_MASK64 = (1 << 64) - 1
# f(i): horizontal, vertical, both, neither -> D4 element (see imgcore for numbering)
_FLIP_D = (4, 6, 2, 0)
# per-stream domain tags so that one subkey never feeds two sequences identically
_TAG_S, _TAG_RF, _TAG_T, _TAG_C = 0, 1, 2, 3


@dataclass(frozen=True)
class Key:
    k1: int
    k2: int
    k3: int

    def __post_init__(self):
        for v in (self.k1, self.k2, self.k3):
            if not 0 <= int(v) <= _MASK64:
                raise InvalidInputError("subkeys are unsigned 64-bit integers")

    @classmethod
    def parse(cls, text):
        parts = [p.strip() for p in str(text).split(",")]
        if len(parts) != 3:
            raise InvalidInputError("a key is three comma-separated integers k1,k2,k3")
        return cls(*(int(p, 0) for p in parts))

    @classmethod
    def generate(cls, seed=None):
        if seed is None:
            return cls(*(secrets.randbits(64) for _ in range(3)))
        rng = np.random.default_rng(seed)
        return cls(*(int(v) for v in rng.integers(0, 2**63, 3, dtype=np.int64)))

    def __str__(self):
        return f"{self.k1},{self.k2},{self.k3}"


@dataclass
class KeyStream:
    s: np.ndarray
    rf: np.ndarray
    t: np.ndarray
    cperm: np.ndarray | None = None

    @property
    def n(self):
        return len(self.s)

    @property
    def d(self):
        """Per-position D4 element: rotate by r, then flip per f."""
        return D4_MUL[np.take(_FLIP_D, self.rf[:, 1]), self.rf[:, 0]]

    @classmethod
    def identity(cls, n, scheme="etcs"):
        return cls(np.arange(n), np.tile([0, 3], (n, 1)), np.zeros(n, int),
                   np.zeros(n, int) if scheme == "etc" else None)


def _stream(subkey, tag):
    key = np.array([int(subkey) & _MASK64, tag], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def keystream(key, n, scheme="etcs"):
    """Deterministic keystream from a counter-mode generator, one subkey per sequence."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    if scheme not in SCHEMES:
        raise InvalidInputError(f"unknown scheme {scheme!r}")
    s = _stream(key.k1, _TAG_S).integers(0, n, n)
    rf = _stream(key.k2, _TAG_RF).integers(0, 4, (n, 2))
    t = _stream(key.k3, _TAG_T).integers(0, 2, n)
    cperm = _stream(key.k3, _TAG_C).integers(0, 6, n) if scheme == "etc" else None
    return KeyStream(s, rf, t, cperm)


def permutation_order(s):
    """``order[pos]`` is the plain block that ends up at cipher position ``pos``."""
    order = np.arange(len(s))
    for i, j in enumerate(s):
        order[i], order[j] = order[j], order[i]
    return order


@dataclass
class WMap:
    """Equivalent key: plain block ``i`` sits at cipher position ``dest[i]`` as variant ``k[i]``.

    For the color scheme ``c[i]`` is the channel order applied to that block.
    Estimates mark undetermined entries with ``dest == -1``.
    """

    dest: np.ndarray
    k: np.ndarray
    c: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.dest)

    def is_permutation(self):
        return np.array_equal(np.sort(self.dest), np.arange(self.n))

    def to_text(self):
        lines = [f"# {k}={v}" for k, v in sorted(self.meta.items())]
        for i in range(self.n):
            if self.dest[i] < 0:
                lines.append(f"{i} ?")
                continue
            row = f"{i} {self.dest[i]} {self.k[i]}"
            if self.c is not None:
                row += f" {self.c[i]}"
            lines.append(row)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        meta, rows = {}, []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k.strip()] = v.strip()
                continue
            rows.append(line.split())
        n = len(rows)
        has_c = any(len(r) == 4 for r in rows)
        dest = np.full(n, -1)
        k = np.full(n, -1)
        c = np.full(n, -1) if has_c else None
        for r in rows:
            i = int(r[0])
            if r[1] == "?":
                continue
            dest[i], k[i] = int(r[1]), int(r[2])
            if has_c:
                c[i] = int(r[3])
        return cls(dest, k, c, meta)


def _resolve_stream(key, stream, n, scheme):
    if stream is not None:
        if stream.n != n:
            raise InvalidInputError(f"keystream has length {stream.n}, image has {n} blocks")
        return stream
    if key is None:
        raise InvalidInputError("either a key or a keystream is required")
    return keystream(key, n, scheme)


def _scramble(blocks, ks):
    order = permutation_order(ks.s)
    d = ks.d
    out = transform_blocks(blocks[order], d, ks.t, ks.cperm)
    n = len(order)
    dest = np.empty(n, dtype=int)
    dest[order] = np.arange(n)
    k = (8 * ks.t + d)[dest]
    c = None if ks.cperm is None else ks.cperm[dest]
    return out, WMap(dest, k, c, {"swap_mode": SWAP_MODE})


def _unscramble(blocks, ks):
    order = permutation_order(ks.s)
    c = None if ks.cperm is None else PERM_INV[ks.cperm]
    if c is not None:
        blocks = transform_blocks(blocks, np.zeros(len(order), int), None, c)
    restored = transform_blocks(blocks, D4_INV[ks.d], ks.t)
    out = np.empty_like(restored)
    out[order] = restored
    return out


def etcs_encrypt(img, key=None, block_w=8, block_h=None, *, stream=None):
    """Grayscale-like encryption; returns the ``(H, 3W)`` cipher plane and its ground truth WMap."""
    img = check_image(img, channels=3)
    blocks, grid = split_blocks(flatten(rgb_to_ycbcr(img)), block_w, block_h, planes=3)
    ks = _resolve_stream(key, stream, grid.n, "etcs")
    out, wmap = _scramble(blocks, ks)
    wmap.meta["scheme"] = "etcs"
    return assemble_blocks(out, grid), wmap


def etcs_decrypt(cipher, key=None, block_w=8, block_h=None, *, stream=None):
    cipher = check_image(cipher, channels=1)
    blocks, grid = split_blocks(cipher, block_w, block_h, planes=3)
    ks = _resolve_stream(key, stream, grid.n, "etcs")
    return ycbcr_to_rgb(unflatten(assemble_blocks(_unscramble(blocks, ks), grid)))


def etc_encrypt(img, key=None, *, stream=None):
    """Conventional color scheme on 16x16 blocks, channel shuffle applied last."""
    img = check_image(img, channels=3)
    blocks, grid = split_blocks(img, ETC_BLOCK)
    ks = _resolve_stream(key, stream, grid.n, "etc")
    if ks.cperm is None:
        raise InvalidInputError("the color scheme needs a channel-permutation stream")
    out, wmap = _scramble(blocks, ks)
    wmap.meta["scheme"] = "etc"
    return assemble_blocks(out, grid), wmap


def etc_decrypt(cipher, key=None, *, stream=None):
    cipher = check_image(cipher, channels=3)
    blocks, grid = split_blocks(cipher, ETC_BLOCK)
    ks = _resolve_stream(key, stream, grid.n, "etc")
    return assemble_blocks(_unscramble(blocks, ks), grid)


def encrypt(img, key, scheme="etcs", block=8):
    if scheme == "etcs":
        return etcs_encrypt(img, key, block)
    if scheme == "etc":
        return etc_encrypt(img, key)
    raise InvalidInputError(f"unknown scheme {scheme!r}")


def decrypt(cipher, key, scheme="etcs", block=8):
    if scheme == "etcs":
        return etcs_decrypt(cipher, key, block)
    if scheme == "etc":
        return etc_decrypt(cipher, key)
    raise InvalidInputError(f"unknown scheme {scheme!r}")


def cipher_grid(shape, scheme="etcs", block=8):
    """BlockGrid of a cipher image with the given array shape."""
    h, w = shape[:2]
    if scheme == "etc":
        block = ETC_BLOCK
    planes = 3 if scheme == "etcs" else 1
    if w % block or h % block or (w // block) % planes:
        raise InvalidInputError(f"cipher {w}x{h} does not fit {block}x{block} blocks")
    return BlockGrid(block, block, w // block // planes, h // block, planes)


def decrypt_with_map(cipher, wmap, scheme="etcs", block=8, fill=128):
    """Invert a (possibly partial) W on a cipher image; undetermined blocks become ``fill``."""
    if scheme == "etcs":
        cblocks, grid = split_blocks(check_image(cipher, channels=1), block, planes=3)
    elif scheme == "etc":
        cblocks, grid = split_blocks(check_image(cipher, channels=3), ETC_BLOCK)
    else:
        raise InvalidInputError(f"unknown scheme {scheme!r}")
    if wmap.n != grid.n:
        raise InvalidInputError(f"map has {wmap.n} entries, cipher has {grid.n} blocks")
    known = wmap.dest >= 0
    out = np.full_like(cblocks, fill)
    src = cblocks[wmap.dest[known]]
    k = wmap.k[known]
    if wmap.c is not None:
        src = transform_blocks(src, np.zeros(len(src), int), None, PERM_INV[wmap.c[known]])
    out[known] = transform_blocks(src, D4_INV[k % 8], k // 8)
    plane = assemble_blocks(out, grid)
    return ycbcr_to_rgb(unflatten(plane)) if scheme == "etcs" else plane
