"""Pairwise compatibility of cipher blocks over every match configuration.

A row of the score tensor is a ``(block u, side s_u)`` pair; its columns are all
``(block v, configuration k)`` pairs, where ``k`` encodes the side ``s_v`` of v,
the relative mirroring ``i``, the relative NPT ``t`` and, for the color scheme,
the relative channel order ``c`` (see :func:`imgcore.decode_config`).

To score, u is turned so that ``s_u`` is its right side and v is turned so that
``s_v`` is its left side (with mirroring along the boundary when ``i=1``).  Each
metric is then a function of two boundary strips ``A`` (u's last two columns)
and ``B`` (v's first two columns).  All three metrics are sums of
row-only x column-only products, so a full tensor tile is a single matrix
product of per-row and per-column feature vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgcore import (
    D4_DET, D4_SIDE, InvalidInputError, check_image, config_count, decode_config,
    split_blocks, transform_blocks,
)

METRICS = ("ssd", "mgc", "emgc")
# variance floor of one gray level squared; a vanishing floor lets flat
# boundaries dominate multi-image averages
EPS = 1.0
# "diag": one variance per channel; "full": cross-channel covariance
COVARIANCES = ("diag", "full")

# rotation taking side s to the right-hand side
_TO_RIGHT = np.array([[d for d in range(4) if D4_SIDE[d, s] == 1][0] for s in range(4)])
# element taking side s_v to the left-hand side with handedness i
_TO_LEFT = np.array([[[d for d in range(8) if D4_SIDE[d, s] == 3 and D4_DET[d] == i][0]
                      for i in range(2)] for s in range(4)])


# --------------------------------------------------------------------------
# strips

def _as_channels(x):
    """Strips always carry a trailing channel axis."""
    return x if x.ndim == 5 else x[..., None]


def left_strips(blocks):
    """``(n, 4, 2, L, ch)``: for each side, the boundary column then the next one inward."""
    blocks = np.asarray(blocks)
    n = blocks.shape[0]
    out = []
    for s in range(4):
        rot = transform_blocks(blocks, np.full(n, _TO_RIGHT[s]))
        out.append(np.stack([rot[:, :, -1], rot[:, :, -2]], axis=1))
    return _as_channels(np.stack(out, axis=1))


def right_strips(blocks, puzzle):
    """``(n, K, 2, L, ch)`` boundary strips of every block under every configuration."""
    blocks = np.asarray(blocks)
    n = blocks.shape[0]
    K = config_count(puzzle)
    cols = []
    for k in range(K):
        s_v, i, t, c = decode_config(k, puzzle)
        b = transform_blocks(blocks, np.full(n, _TO_LEFT[s_v, i]), np.full(n, t),
                             np.full(n, c) if puzzle == "etc" else None)
        cols.append(np.stack([b[:, :, 0], b[:, :, 1]], axis=1))
    return _as_channels(np.stack(cols, axis=1))


# --------------------------------------------------------------------------
# direct formulas (one pair of strips at a time)

def _stats(g, cov_mode="diag"):
    """Mean and regularised precision matrix of gradient samples ``g (L, ch)``."""
    mu = g.mean(axis=0)
    cov = np.atleast_2d(np.cov(g, rowvar=False, ddof=1))
    if cov_mode == "diag":
        cov = cov * np.eye(g.shape[1])
    cov = cov + EPS * np.eye(g.shape[1])
    return mu, np.linalg.inv(cov)


def _mahalanobis(d, prec):
    return float(np.einsum("lj,jk,lk->", d, prec, d))


def _gradient_pair(a0, a1, b0, b1, cov_mode):
    mu_a, pa = _stats(a0 - a1, cov_mode)
    mu_b, pb = _stats(b0 - b1, cov_mode)
    return _mahalanobis(b0 - a0 - mu_a, pa) + _mahalanobis(a0 - b0 - mu_b, pb)


def _mgc_strip(A, B, cov_mode="diag"):
    A = A.astype(np.float64)
    B = B.astype(np.float64)
    return _gradient_pair(A[0], A[1], B[0], B[1], cov_mode)


def _parallel_strip(A, B, cov_mode="diag"):
    A = A.astype(np.float64)
    B = B.astype(np.float64)
    d = [np.diff(x, axis=0) for x in (A[0], A[1], B[0], B[1])]
    return _gradient_pair(*d, cov_mode)


def strip_score(A, B, metric, cov="diag"):
    """Score of strips ``A`` (left block) and ``B`` (right block), shape ``(2, L[, ch])``."""
    A = _as_channels(np.asarray(A)[None, None])[0, 0]
    B = _as_channels(np.asarray(B)[None, None])[0, 0]
    if metric == "ssd":
        return float(((A[0].astype(np.float64) - B[0]) ** 2).sum())
    if metric == "mgc":
        return float(_mgc_strip(A, B, cov))
    if metric == "emgc":
        return float(_mgc_strip(A, B, cov) + _parallel_strip(A, B, cov))
    raise InvalidInputError(f"unknown metric {metric!r}")


def _pair_strips(a, b, cfg):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"block shapes differ: {a.shape} vs {b.shape}")
    puzzle = "etc" if a.ndim == 3 else "type1"
    if cfg.c and puzzle != "etc":
        raise InvalidInputError("channel permutations need color blocks")
    A = left_strips(a[None])[0, cfg.s_u]
    d = _TO_LEFT[cfg.s_v, cfg.i]
    bt = transform_blocks(b[None], [d], [cfg.t], [cfg.c] if puzzle == "etc" else None)[0]
    B = _as_channels(np.stack([bt[:, 0], bt[:, 1]])[None, None])[0, 0]
    return A, B


def ssd_score(a, b, cfg):
    """Sum of squared differences across the shared boundary."""
    return strip_score(*_pair_strips(a, b, cfg), "ssd")


def mgc_score(a, b, cfg, cov="diag"):
    """Symmetrised Mahalanobis gradient compatibility."""
    a = np.asarray(a)
    if min(a.shape[:2]) < 3:
        raise InvalidInputError("gradient metrics need blocks of at least 3x3")
    return strip_score(*_pair_strips(a, b, cfg), "mgc", cov)


def emgc_score(a, b, cfg, cov="diag"):
    """MGC plus the matching term for changes along the boundary."""
    a = np.asarray(a)
    if min(a.shape[:2]) < 3:
        raise InvalidInputError("gradient metrics need blocks of at least 3x3")
    return strip_score(*_pair_strips(a, b, cfg), "emgc", cov)


# --------------------------------------------------------------------------
# bilinear features

def _precisions(g, cov_mode):
    """Batched mean ``(N, ch)`` and regularised precision ``(N, ch, ch)`` of ``g (N, L, ch)``."""
    mu = g.mean(axis=1)
    c = g - mu[:, None]
    cov = np.einsum("nlj,nlk->njk", c, c) / (g.shape[1] - 1)
    if cov_mode == "diag":
        cov = cov * np.eye(g.shape[2])
    cov = cov + EPS * np.eye(g.shape[2])
    return mu, np.linalg.inv(cov)


def _outer(x):
    return np.einsum("nlj,nlk->njk", x, x).reshape(len(x), -1)


def _mahalanobis_features(x0, x1, y0, y1, cov_mode):
    """Features of both directed Mahalanobis terms for strips ``(N, L, ch)``."""
    R, C = len(x0), len(y0)
    mu_a, pa = _precisions(x0 - x1, cov_mode)
    mu_b, pb = _precisions(y0 - y1, cov_mode)
    ca = x0 + mu_a[:, None]
    db = y0 + mu_b[:, None]
    cap = np.einsum("nlj,njk->nlk", ca, pa)
    dbp = np.einsum("nlj,njk->nlk", db, pb)
    # a -> b: sum_l (y - ca)^T Pa (y - ca)
    rf = [pa.reshape(R, -1), -2 * cap.reshape(R, -1), np.einsum("nlj,nlj->n", cap, ca)[:, None]]
    cf = [_outer(y0), y0.reshape(C, -1), np.ones((C, 1))]
    # b -> a: sum_l (x - db)^T Pb (x - db)
    rf += [_outer(x0), -2 * x0.reshape(R, -1), np.ones((R, 1))]
    cf += [pb.reshape(C, -1), dbp.reshape(C, -1), np.einsum("nlj,nlj->n", dbp, db)[:, None]]
    return rf, cf


def _features(A, B, metric, cov="diag"):
    """Row features from ``A (R, 2, L, ch)`` and column features from ``B (C, 2, L, ch)``.

    ``rows @ cols.T`` equals the metric for every (row, column) pair.
    """
    A = A.astype(np.float64)
    B = B.astype(np.float64)
    a0, a1, b0, b1 = A[:, 0], A[:, 1], B[:, 0], B[:, 1]
    if metric == "ssd":
        R, C = len(a0), len(b0)
        rf = [(a0 * a0).sum(axis=(1, 2))[:, None], a0.reshape(R, -1), np.ones((R, 1))]
        cf = [np.ones((C, 1)), -2 * b0.reshape(C, -1), (b0 * b0).sum(axis=(1, 2))[:, None]]
        return np.hstack(rf), np.hstack(cf)
    if metric not in ("mgc", "emgc"):
        raise InvalidInputError(f"unknown metric {metric!r}")
    if cov not in COVARIANCES:
        raise InvalidInputError(f"unknown covariance mode {cov!r}")
    rf, cf = _mahalanobis_features(a0, a1, b0, b1, cov)
    if metric == "emgc":
        d = [np.diff(x, axis=1) for x in (a0, a1, b0, b1)]
        r2, c2 = _mahalanobis_features(*d, cov)
        rf += r2
        cf += c2
    return np.hstack(rf), np.hstack(cf)


# --------------------------------------------------------------------------
# the tensor

@dataclass
class ScoreTensor:
    """Normalised compatibility scores, dense ``(n, 4, n, K)`` or the best ``top_k`` per row.

    ``best[u*4 + s]`` is the flat column ``v*K + k`` of the row minimum, ties broken
    by the lowest flat column.
    """

    n: int
    K: int
    puzzle: str
    best: np.ndarray
    dense: np.ndarray | None = None
    top_idx: np.ndarray | None = None
    top_val: np.ndarray | None = None
    normalized: bool = True

    @classmethod
    def from_dense(cls, arr, puzzle, normalized=True):
        arr = np.array(arr, dtype=np.float64)
        n, four, n2, K = arr.shape
        if four != 4 or n2 != n or K != config_count(puzzle):
            raise InvalidInputError(f"bad tensor shape {arr.shape} for {puzzle}")
        idx = np.arange(n)
        arr[idx, :, idx, :] = np.inf
        rows = arr.reshape(n * 4, n * K)
        return cls(n, K, puzzle, rows.argmin(axis=1), dense=arr, normalized=normalized)

    @property
    def is_dense(self):
        return self.dense is not None

    def lookup(self, u, s_u, v, k):
        if self.dense is not None:
            return float(self.dense[u, s_u, v, k])
        row = u * 4 + s_u
        hit = np.nonzero(self.top_idx[row] == v * self.K + k)[0]
        return float(self.top_val[row, hit[0]]) if len(hit) else np.inf

    def edges(self, limit=None):
        """Finite entries as arrays ``(u, s_u, v, k, w)`` sorted by ``(w, u, s_u, v, k)``."""
        if self.dense is not None:
            rows = self.dense.reshape(self.n * 4, self.n * self.K)
            if limit is not None and limit < rows.shape[1]:
                part = np.argpartition(rows, limit - 1, axis=1)[:, :limit]
                vals = np.take_along_axis(rows, part, axis=1)
            else:
                part = np.broadcast_to(np.arange(rows.shape[1]), rows.shape)
                vals = rows
        else:
            part, vals = self.top_idx, self.top_val
            if limit is not None:
                part, vals = part[:, :limit], vals[:, :limit]
        row = np.broadcast_to(np.arange(part.shape[0])[:, None], part.shape).ravel()
        col = np.asarray(part).ravel()
        w = np.asarray(vals, dtype=np.float64).ravel()
        keep = np.isfinite(w)
        row, col, w = row[keep], col[keep], w[keep]
        u, s_u = np.divmod(row, 4)
        v, k = np.divmod(col, self.K)
        # lexsort keys: last one is primary
        order = np.lexsort((k, v, s_u, u, w))
        return u[order], s_u[order], v[order], k[order], w[order]


def _prepare(ciphers, puzzle, block):
    if len(ciphers) == 0:
        raise InvalidInputError("at least one cipher image is needed")
    shape = np.asarray(ciphers[0]).shape
    out = []
    for img in ciphers:
        img = check_image(img)
        if img.shape != shape:
            raise InvalidInputError(f"cipher shapes differ: {shape} vs {img.shape}")
        if (img.ndim == 3) != (puzzle == "etc"):
            raise InvalidInputError(f"{puzzle} puzzles need {'color' if puzzle == 'etc' else 'grayscale'} ciphers")
        blocks, _ = split_blocks(img, block)
        out.append(blocks)
    return out


def _image_features(blocks, metric, puzzle, cov="diag"):
    n = blocks.shape[0]
    A = left_strips(blocks)
    A = A.reshape(n * 4, *A.shape[2:])
    B = right_strips(blocks, puzzle)
    B = B.reshape(n * B.shape[1], *B.shape[2:])
    return _features(A, B, metric, cov)


def _row_tiles(n_rows, n_cols, budget=2**24):
    step = max(4, budget // max(n_cols, 1))
    step -= step % 4
    for lo in range(0, n_rows, step):
        yield slice(lo, min(lo + step, n_rows))


def _mask_self(acc, rows, K):
    u = np.arange(rows.start, rows.stop) // 4
    cols = u[:, None] * K + np.arange(K)
    np.put_along_axis(acc, cols, np.inf, axis=1)


def _second_smallest(acc):
    return np.partition(acc, 1, axis=1)[:, 1]


def score_all(ciphers, metric="mgc", puzzle="type1", block=8, top_k=None, dense=None, cov="diag"):
    """Average the per-image scores of ``ciphers`` then normalise each row by its second smallest entry.

    ``dense`` forces the full ``(n, 4, n, K)`` tensor; by default it is kept
    whenever it has at most ~30M entries, otherwise only the ``top_k``
    (default 24) best columns of each row are retained.
    """
    if metric not in METRICS:
        raise InvalidInputError(f"unknown metric {metric!r}")
    K = config_count(puzzle)
    stacks = _prepare(ciphers, puzzle, block)
    n = stacks[0].shape[0]
    if dense is None:
        dense = n * 4 * n * K <= 30_000_000
    top_k = min(top_k or 24, n * K)
    feats = [_image_features(b, metric, puzzle, cov) for b in stacks]
    n_rows, n_cols = n * 4, n * K
    best = np.empty(n_rows, dtype=np.int64)
    full = np.empty((n_rows, n_cols), dtype=np.float32) if dense else None
    tidx = None if dense else np.empty((n_rows, top_k), dtype=np.int64)
    tval = None if dense else np.empty((n_rows, top_k), dtype=np.float32)
    for rows in _row_tiles(n_rows, n_cols):
        acc = np.zeros((rows.stop - rows.start, n_cols))
        # fixed summation order keeps runs bit-reproducible
        for rf, cf in feats:
            acc += rf[rows] @ cf.T
        acc /= len(feats)
        np.maximum(acc, 0.0, out=acc)   # round-off can dip just below zero
        _mask_self(acc, rows, K)
        sec = _second_smallest(acc)
        acc /= np.where(sec > 0, sec, 1.0)[:, None]
        best[rows] = acc.argmin(axis=1)
        if dense:
            full[rows] = acc
        else:
            part = np.argpartition(acc, top_k - 1, axis=1)[:, :top_k]
            vals = np.take_along_axis(acc, part, axis=1)
            order = np.lexsort((part, vals), axis=1)
            tidx[rows] = np.take_along_axis(part, order, axis=1)
            tval[rows] = np.take_along_axis(vals, order, axis=1)
    if dense:
        return ScoreTensor(n, K, puzzle, best, dense=full.reshape(n, 4, n, K))
    return ScoreTensor(n, K, puzzle, best, top_idx=tidx, top_val=tval)


# --------------------------------------------------------------------------
# accuracy

def true_matches(truth, grid, puzzle):
    """Directed ground-truth matches ``(u, s_u, v, k)`` for every in-plane neighbour pair.

    Each unordered neighbour pair appears twice, once from each side.
    """
    pairs = np.array(grid.adjacent_pairs(), dtype=int).reshape(-1, 3)
    if len(pairs) == 0:
        return (np.zeros(0, int),) * 4
    p1, p2, side = pairs[:, 0], pairs[:, 1], pairs[:, 2]
    u, v = truth.dest[p1], truth.dest[p2]
    d1, t1 = truth.k[p1] % 8, truth.k[p1] // 8
    d2, t2 = truth.k[p2] % 8, truth.k[p2] // 8
    s_u = D4_SIDE[d1, side]
    s_v = D4_SIDE[d2, (side + 2) % 4]
    i = D4_DET[d1] ^ D4_DET[d2]
    t = t1 ^ t2
    if puzzle == "etc":
        from .imgcore import PERM_INV, PERM_MUL

        c1, c2 = truth.c[p1], truth.c[p2]
        cf, cb = PERM_MUL[c1, PERM_INV[c2]], PERM_MUL[c2, PERM_INV[c1]]
    else:
        cf = cb = np.zeros_like(i)
    if puzzle == "type0" and (np.any(i) or np.any(t)):
        raise InvalidInputError("type0 ground truth cannot contain mirroring or NPT")
    kf = s_v * (1 if puzzle == "type0" else 4) + (0 if puzzle == "type0" else i * 2 + t) + cf * 16
    kb = s_u * (1 if puzzle == "type0" else 4) + (0 if puzzle == "type0" else i * 2 + t) + cb * 16
    return (np.concatenate([u, v]), np.concatenate([s_u, s_v]),
            np.concatenate([v, u]), np.concatenate([kf, kb]))


def _accuracy_of_best(best, K, truth, grid, puzzle, ignore_color):
    u, s_u, v, k = true_matches(truth, grid, puzzle)
    if len(u) == 0:
        return 1.0
    got = best[u * 4 + s_u]
    gv, gk = np.divmod(got, K)
    if ignore_color:
        ok = (gv == v) & (gk % 16 == k % 16)
    else:
        ok = (gv == v) & (gk == k)
    return float(ok.mean())


def metric_accuracy(tensor, truth, grid, ignore_color=False):
    """Fraction of true (block, side) matches that are the row minimum of ``tensor``."""
    return _accuracy_of_best(tensor.best, tensor.K, truth, grid, tensor.puzzle, ignore_color)


def accuracy_curve(ciphers, truth, grid, metric="mgc", puzzle="type1", block=8, ms=None,
                   ignore_color=False, cov="diag"):
    """Metric accuracy after averaging the first ``m`` ciphers, for every ``m`` in ``ms``.

    One pass over the tensor tiles serves all prefixes.
    """
    K = config_count(puzzle)
    stacks = _prepare(ciphers, puzzle, block)
    ms = sorted(set(ms or range(1, len(stacks) + 1)))
    if ms and (ms[0] < 1 or ms[-1] > len(stacks)):
        raise InvalidInputError("prefix sizes must lie in [1, len(ciphers)]")
    n = stacks[0].shape[0]
    feats = [_image_features(b, metric, puzzle, cov) for b in stacks[:ms[-1] if ms else 0]]
    bests = {m: np.empty(n * 4, dtype=np.int64) for m in ms}
    for rows in _row_tiles(n * 4, n * K):
        acc = np.zeros((rows.stop - rows.start, n * K))
        for m, (rf, cf) in enumerate(feats, start=1):
            acc += rf[rows] @ cf.T
            if m in bests:
                cur = acc.copy()
                _mask_self(cur, rows, K)
                bests[m][rows] = cur.argmin(axis=1)
    return {m: _accuracy_of_best(bests[m], K, truth, grid, puzzle, ignore_color) for m in ms}
