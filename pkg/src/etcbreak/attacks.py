"""Ciphertext-only, known-plaintext and chosen-plaintext attacks.

The known-plaintext attack matches every intra-block variant of every plain
block against the cipher blocks pixel by pixel with a 256-ary prefix tree;
the chosen-plaintext attack builds plain images whose variants are all
distinct after the channel, so that the tree pins down every entry of W.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, factorial

import numpy as np

from .cipher import ETC_BLOCK, WMap, cipher_grid
from .codec import CodecProfile, jpeg_roundtrip, roundtrip_blocks, unblend_chroma
from .compat import score_all
from .imgcore import (
    PERMS, InvalidInputError, all_variants, check_image, flatten, rgb_to_ycbcr,
    split_blocks, transform_blocks,
)
from .solver import render, solve


# --------------------------------------------------------------------------
# ciphertext only

@dataclass
class CoaResult:
    assembly: object
    tensor: object
    grid: object
    images: dict


def coa(ciphers, metric="mgc", scheme="etcs", block=8, top_k=None, vote=None,
        unblend=None, fragment_cap=None, cov="diag"):
    """Score all ciphers jointly, assemble, and render the recovered planes.

    For the color scheme the decoded ciphers first have the chroma that a
    4:2:0 decoder blended across block borders removed (``unblend``, on by
    default there).
    """
    if not len(ciphers):
        raise InvalidInputError("at least one cipher image is needed")
    if scheme == "etc":
        block, puzzle = ETC_BLOCK, "etc"
        if unblend is None or unblend:
            ciphers = [unblend_chroma(c, ETC_BLOCK) for c in ciphers]
    elif scheme == "etcs":
        puzzle = "type1"
    else:
        raise InvalidInputError(f"unknown scheme {scheme!r}")
    grid = cipher_grid(np.asarray(ciphers[0]).shape, scheme, block)
    tensor = score_all(ciphers, metric, puzzle, block, top_k=top_k, cov=cov)
    assembly = solve(tensor, grid, puzzle, fragment_cap=fragment_cap, vote=vote)
    blocks, _ = split_blocks(check_image(ciphers[0]), block)
    return CoaResult(assembly, tensor, grid, render(assembly, blocks, grid))


# --------------------------------------------------------------------------
# known plaintext: exact matching

@dataclass
class TreeNode:
    """One node of the prefix tree over pixel positions ``0..depth-1``.

    ``plain`` holds flat variant ids ``16*i + k`` (the set B), ``cipher`` the
    cipher block indices (the set B').  Children are only materialised by
    :func:`build_tree` level by level, so ``children`` stays empty on leaves.
    """

    depth: int
    plain: np.ndarray
    cipher: np.ndarray
    children: dict = field(default_factory=dict)

    @property
    def sizes(self):
        return len(self.plain), len(self.cipher)


@dataclass
class WEstimate(WMap):
    """W recovered by an attack: determined entries plus candidate sets for the rest."""

    candidates: dict = field(default_factory=dict)   # plain block -> list of (cipher, k)
    count: int = 1                                    # number of W consistent with the leaves

    @property
    def determined(self):
        return self.dest >= 0


def _plain_blocks(plain, block=8):
    plane = flatten(rgb_to_ycbcr(check_image(plain, channels=3)))
    return split_blocks(plane, block, planes=3)


def plain_variants(plain, block=8, codec=None):
    """``(n, 16, m)`` variant pixels of every plain block, through ``codec`` when given."""
    blocks, grid = _plain_blocks(plain, block)
    var = all_variants(blocks)
    n = var.shape[0]
    if codec is not None:
        var = roundtrip_blocks(var.reshape(n * 16, block, block), codec).reshape(var.shape)
    return var.reshape(n, 16, -1), grid


def build_tree(variants, cipher_blocks, trace=None):
    """Expand the prefix tree level by level and return its leaves.

    ``variants`` is ``(n, 16, m)``, ``cipher_blocks`` is ``(n', m)``.  A plain
    variant follows a pixel value only while some cipher block in the same
    node shares it; cipher blocks are never dropped.  ``trace`` (a list)
    receives ``(level, nodes, |B| total, |B'| total)`` per level.
    """
    variants = np.asarray(variants)
    cipher_blocks = np.asarray(cipher_blocks)
    n, K, m = variants.shape
    pv = variants.reshape(n * K, m).astype(np.int64)
    cv = cipher_blocks.reshape(len(cipher_blocks), m).astype(np.int64)
    p_ids = np.arange(n * K)
    c_ids = np.arange(len(cv))
    p_grp = np.zeros(len(p_ids), dtype=np.int64)
    c_grp = np.zeros(len(c_ids), dtype=np.int64)
    for j in range(m):
        # child key = (parent node, pixel value)
        ck = c_grp * 256 + cv[c_ids, j]
        keys, c_grp = np.unique(ck, return_inverse=True)
        pk = p_grp * 256 + pv[p_ids, j]
        pos = np.searchsorted(keys, pk)
        pos = np.minimum(pos, len(keys) - 1)
        keep = keys[pos] == pk
        p_ids, p_grp = p_ids[keep], pos[keep]
        if trace is not None:
            trace.append((j + 1, len(keys), len(p_ids), len(c_ids)))
    leaves = []
    p_order = np.argsort(p_grp, kind="stable")
    c_order = np.argsort(c_grp, kind="stable")
    p_split = np.searchsorted(p_grp[p_order], np.arange(c_grp.max() + 2))
    c_split = np.searchsorted(c_grp[c_order], np.arange(c_grp.max() + 2))
    for g in range(c_grp.max() + 1):
        leaves.append(TreeNode(m, p_ids[p_order[p_split[g]:p_split[g + 1]]],
                               c_ids[c_order[c_split[g]:c_split[g + 1]]]))
    return leaves


def kpa_candidates(leaves):
    """Number of W consistent with leaves ``(a, b)``: prod C(b, a) * a!."""
    total = 1
    for a, b in leaves:
        a, b = int(a), int(b)
        if a < 0 or b < 0 or a > b:
            raise InvalidInputError(f"leaf sizes need 0 <= a <= b, got ({a}, {b})")
        total *= comb(b, a) * factorial(a)
    return total


def kpa_probability(n, m):
    """Chance that one entry of W is pinned down for uniform random pixels, as an exact fraction."""
    if n < 1 or m < 1:
        raise InvalidInputError("n and m must be >= 1")
    return Fraction(1) / (1 + Fraction(16 * n - 1, 256 ** m))


def estimate_from_leaves(leaves, n, complete=False):
    """Entries pinned by single-pair leaves; the rest become candidate lists.

    With ``complete`` every ambiguous leaf is also filled in, lowest ids
    first.  Members of a leaf are pixel-identical, so the completed map
    decrypts exactly even where the true entry cannot be told apart.
    """
    dest = np.full(n, -1)
    k = np.full(n, -1)
    candidates = {}
    sizes = []
    ambiguous = []
    for leaf in leaves:
        a, b = len(leaf.cipher), len(leaf.plain)
        if b == 0:
            continue
        sizes.append((min(a, b), b))
        if a == 1 and b == 1:
            i, kk = divmod(int(leaf.plain[0]), 16)
            dest[i], k[i] = int(leaf.cipher[0]), kk
            continue
        ambiguous.append(leaf)
        for v in leaf.plain.tolist():
            i, kk = divmod(v, 16)
            candidates.setdefault(i, []).extend((int(c), kk) for c in leaf.cipher.tolist())
    # a plain block pinned in one leaf may still appear in another leaf's candidates
    for i in np.nonzero(dest >= 0)[0]:
        candidates.pop(int(i), None)
    est = WEstimate(dest.copy(), k.copy(), None, {"attack": "kpa_exact"}, candidates, kpa_candidates(sizes))
    if complete:
        used = set(dest[dest >= 0].tolist())
        for leaf in ambiguous:
            free = iter(sorted(c for c in leaf.cipher.tolist() if c not in used))
            for v in sorted(leaf.plain.tolist()):
                i, kk = divmod(v, 16)
                if est.dest[i] >= 0:
                    continue
                c = next(free, None)
                if c is None:
                    break
                est.dest[i], est.k[i] = c, kk
                used.add(c)
        est.meta["completed"] = "yes"
    return est


def kpa_exact(plain, cipher, block=8, codec=None, trace=None, complete=False):
    """Known-plaintext recovery of W for the grayscale-like scheme.

    ``codec`` is the attacker's copy of the lossy channel: plain variants are
    pushed through it before matching, which reproduces the cipher blocks
    exactly when the codec build matches.
    """
    cipher = check_image(cipher, channels=1)
    variants, grid = plain_variants(plain, block, codec)
    cblocks, cgrid = split_blocks(cipher, block, planes=3)
    if cgrid.n != grid.n:
        raise InvalidInputError(f"plain has {grid.n} blocks, cipher has {cgrid.n}")
    leaves = build_tree(variants, cblocks.reshape(cgrid.n, -1), trace)
    return estimate_from_leaves(leaves, grid.n, complete)


# --------------------------------------------------------------------------
# known plaintext: nearest blocks

def _greedy_pairs(dist):
    """Repeatedly take the smallest remaining entry, retiring its row and column."""
    n_r, n_c = dist.shape
    order = np.argsort(dist, axis=None, kind="stable")
    row_free = np.ones(n_r, bool)
    col_free = np.ones(n_c, bool)
    rows, cols = np.divmod(order, n_c)
    out = []
    left = min(n_r, n_c)
    for r, c in zip(rows.tolist(), cols.tolist()):
        if row_free[r] and col_free[c]:
            row_free[r] = col_free[c] = False
            out.append((r, c))
            left -= 1
            if not left:
                break
    return out


def kpa_similarity(plain, cipher, scheme="etcs", block=8):
    """Pair each plain block with the closest cipher block over all its variants (squared distance)."""
    plain = check_image(plain, channels=3)
    if scheme == "etcs":
        blocks, grid = _plain_blocks(plain, block)
        cblocks, cgrid = split_blocks(check_image(cipher, channels=1), block, planes=3)
        var = all_variants(blocks)
        colors = None
    elif scheme == "etc":
        blocks, grid = split_blocks(plain, ETC_BLOCK)
        cblocks, cgrid = split_blocks(check_image(cipher, channels=3), ETC_BLOCK)
        n = grid.n
        geo = all_variants(blocks)                           # (n, 16, b, b, 3)
        var = np.take(geo[..., None, :], PERMS, axis=-1)     # (n, 16, b, b, 6, 3)
        var = np.moveaxis(var, -2, 2).reshape(n, 96, *blocks.shape[1:])
        colors = True
    else:
        raise InvalidInputError(f"unknown scheme {scheme!r}")
    if cgrid.n != grid.n:
        raise InvalidInputError(f"plain has {grid.n} blocks, cipher has {cgrid.n}")
    n, K = var.shape[:2]
    v = var.reshape(n * K, -1).astype(np.float64)
    c = cblocks.reshape(n, -1).astype(np.float64)
    best = np.empty((n, n))
    arg = np.empty((n, n), dtype=np.int64)
    cc = (c * c).sum(axis=1)
    step = max(1, 2**22 // (n * K))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        vv = v[lo * K:hi * K]
        d = (vv * vv).sum(axis=1)[:, None] - 2 * vv @ c.T + cc[None, :]
        d = d.reshape(hi - lo, K, n)
        arg[lo:hi] = d.argmin(axis=1)
        best[lo:hi] = np.take_along_axis(d, arg[lo:hi, None], axis=1)[:, 0]
    dest = np.full(n, -1)
    k = np.full(n, -1)
    cperm = np.full(n, -1) if colors else None
    for i, j in _greedy_pairs(np.round(best, 6)):
        dest[i] = j
        kk = int(arg[i, j])
        if colors:
            k[i], cperm[i] = divmod(kk, 6)
        else:
            k[i] = kk
    return WEstimate(dest, k, cperm, {"attack": "kpa_similarity"})


# --------------------------------------------------------------------------
# chosen plaintext

def _variant_keys(rgb_blocks, codec, block):
    """``(b, 48)`` digests of the 16 variants of the Y, Cb and Cr planes of each RGB block."""
    b = len(rgb_blocks)
    ycc = rgb_to_ycbcr(rgb_blocks.reshape(b * block, block, 3)).reshape(b, block, block, 3)
    planes = np.moveaxis(ycc, -1, 1).reshape(b * 3, block, block)
    var = all_variants(planes).reshape(b * 48, block, block)
    if codec is not None:
        var = roundtrip_blocks(var, codec)
    flat = np.ascontiguousarray(var.reshape(b * 48, -1))
    keys = [hashlib.blake2b(row.tobytes(), digest_size=16).digest() for row in flat]
    return [keys[i * 48:(i + 1) * 48] for i in range(b)]


def _accept(keys, seen):
    """True and records ``keys`` if none repeats an earlier variant (or another of its own)."""
    if len(set(keys)) < len(keys) or any(k in seen for k in keys):
        return False
    seen.update(keys)
    return True


def _rgb_blocks(img, block):
    img = check_image(img, channels=3)
    h, w = img.shape[:2]
    if h % block or w % block:
        raise InvalidInputError(f"image {w}x{h} is not tiled by {block}x{block} blocks")
    by, bx = h // block, w // block
    return img.reshape(by, block, bx, block, 3).swapaxes(1, 2).reshape(by * bx, block, block, 3), (by, bx)


def _from_rgb_blocks(blocks, shape, block):
    by, bx = shape
    return blocks.reshape(by, bx, block, block, 3).swapaxes(1, 2).reshape(by * block, bx * block, 3)


def cpa_construct(width, height, codec=None, seed=0, block=8, max_rounds=200):
    """Random plain image whose 16n plane-block variants stay pairwise distinct through ``codec``."""
    if width % block or height % block:
        raise InvalidInputError(f"{width}x{height} is not tiled by {block}x{block} blocks")
    rng = np.random.default_rng(seed)
    count = (width // block) * (height // block)
    blocks = rng.integers(0, 256, (count, block, block, 3), dtype=np.uint8)
    pending = np.arange(count)
    seen = set()
    for _ in range(max_rounds):
        keys = _variant_keys(blocks[pending], codec, block)
        rejected = [b for b, kk in zip(pending.tolist(), keys) if not _accept(kk, seen)]
        if not rejected:
            return _from_rgb_blocks(blocks, (height // block, width // block), block)
        pending = np.array(rejected)
        blocks[pending] = rng.integers(0, 256, (len(pending), block, block, 3), dtype=np.uint8)
    raise RuntimeError(f"no collision-free image after {max_rounds} rounds")


def variants_distinct(img, codec=None, block=8):
    """Independent re-check: are all 16n plane-block variants distinct after ``codec``?"""
    blocks, _ = _plain_blocks(img, block)
    var = all_variants(blocks).reshape(-1, block, block)
    if codec is not None:
        var = roundtrip_blocks(var, codec)
    flat = var.reshape(len(var), -1)
    return len(np.unique(flat, axis=0)) == len(flat)


def cpa_refine(img, codec=None, seed=0, block=8, max_rounds=64):
    """Flip low bits of offending blocks until all variants are distinct.

    Blocks are visited in raster order; a block whose variants repeat an
    earlier one (or each other) gets random noise in its lowest bit, widening
    to the two and then three lowest bits if that is not enough.
    """
    rng = np.random.default_rng(seed)
    blocks, shape = _rgb_blocks(img, block)
    blocks = blocks.copy()
    seen = set()
    keys = _variant_keys(blocks, codec, block)
    bad = [b for b, kk in enumerate(keys) if not _accept(kk, seen)]
    rounds = 0
    while bad:
        if rounds >= max_rounds:
            raise RuntimeError(f"{len(bad)} blocks still collide after {max_rounds} rounds")
        bits = 1 + min(2, rounds // 8)
        mask = np.uint8((1 << bits) - 1)
        idx = np.array(bad)
        noise = rng.integers(0, 256, (len(idx), block, block, 3), dtype=np.uint8) & mask
        blocks[idx] = (blocks[idx] & ~mask) | noise
        keys = _variant_keys(blocks[idx], codec, block)
        bad = [b for b, kk in zip(bad, keys) if not _accept(kk, seen)]
        rounds += 1
    return _from_rgb_blocks(blocks, shape, block)


def psnr(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mse = ((a - b) ** 2).mean()
    return np.inf if mse == 0 else 10 * np.log10(255.0**2 / mse)
