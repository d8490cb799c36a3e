"""Straight-line reference implementations used to check the vectorised code.

Nothing here reuses the package's gather tables or feature algebra: blocks
are oriented with ``np.rot90``/``np.flipud`` and scores are summed in loops.
"""

import itertools

import numpy as np

from etcbreak.compat import EPS
from etcbreak.imgcore import D4_DET, D4_SIDE, encode_config


def orient_left(a, s_u):
    """Rotate ``a`` so that its side ``s_u`` faces right (sides 0=top 1=right 2=bottom 3=left)."""
    # a CCW quarter turn sends side s to s-1
    return np.rot90(a, (s_u - 1) % 4)


def orient_right(b, s_v, i, t):
    """Rotate ``b`` so that side ``s_v`` faces left, flip top-bottom if ``i``, negate if ``t``."""
    out = np.rot90(b, (s_v - 3) % 4)
    if i:
        out = np.flipud(out)
    if t:
        out = 255 - out.astype(np.int64)
    return np.asarray(out, dtype=np.float64)


def ssd_oracle(a, b, s_u, s_v, i, t):
    A = orient_left(a, s_u).astype(np.float64)
    B = orient_right(b, s_v, i, t)
    total = 0.0
    for r in range(A.shape[0]):
        total += (A[r, -1] - B[r, 0]) ** 2
    return total


def _mean_var(g):
    L = len(g)
    mu = sum(g) / L
    var = sum((x - mu) ** 2 for x in g) / (L - 1)
    return mu, var + EPS


def _directed(near, inner, other):
    """sum_r ((other_r - near_r) - mu)^2 / var with mu, var from near - inner."""
    mu, var = _mean_var([near[r] - inner[r] for r in range(len(near))])
    return sum(((other[r] - near[r]) - mu) ** 2 / var for r in range(len(near)))


def mgc_oracle(a, b, s_u, s_v, i, t):
    A = orient_left(a, s_u).astype(np.float64)
    B = orient_right(b, s_v, i, t)
    a0, a1, b0, b1 = A[:, -1], A[:, -2], B[:, 0], B[:, 1]
    return _directed(a0, a1, b0) + _directed(b0, b1, a0)


def emgc_oracle(a, b, s_u, s_v, i, t):
    A = orient_left(a, s_u).astype(np.float64)
    B = orient_right(b, s_v, i, t)
    cols = [A[:, -1], A[:, -2], B[:, 0], B[:, 1]]
    # differences along the boundary
    d = [[c[r + 1] - c[r] for r in range(len(c) - 1)] for c in cols]
    return mgc_oracle(a, b, s_u, s_v, i, t) + _directed(d[0], d[1], d[2]) + _directed(d[2], d[3], d[0])


ORACLES = {"ssd": ssd_oracle, "mgc": mgc_oracle, "emgc": emgc_oracle}


def zero_cost_layouts(tensor, rows, cols, puzzle="type1", limit=100):
    """Every placement of ``rows*cols`` blocks with all adjacent scores zero.

    Exhaustive backtracking over (block, D4 element, NPT bit) per cell in
    raster order; a cell is only kept when its left and top neighbours
    score exactly zero.  Returns a list of ``{(x, y): (block, d, t)}``.
    """
    n = tensor.n
    states = [(d, t) for d in range(8) for t in range(2)] if puzzle == "type1" else [(d, 0) for d in range(4)]
    dense = tensor.dense

    def cost(left, right, world):
        (u, du, tu), (v, dv, tv) = left, right
        # block side that the shown tile exposes on a world side
        s_u = int(np.nonzero(D4_SIDE[du] == world)[0][0])
        s_v = int(np.nonzero(D4_SIDE[dv] == (world + 2) % 4)[0][0])
        if puzzle == "type0":
            return dense[u, s_u, v, s_v]
        return dense[u, s_u, v, encode_config(s_v, D4_DET[du] ^ D4_DET[dv], tu ^ tv)]

    cells = list(itertools.product(range(rows), range(cols)))
    found = []

    def place(idx, used, layout):
        if len(found) >= limit:
            return
        if idx == len(cells):
            found.append(dict(layout))
            return
        y, x = cells[idx]
        for b in range(n):
            if b in used:
                continue
            for d, t in states:
                here = (b, d, t)
                if x > 0 and cost(layout[(x - 1, y)], here, 1) != 0:
                    continue
                if y > 0 and cost(layout[(x, y - 1)], here, 2) != 0:
                    continue
                layout[(x, y)] = here
                used.add(b)
                place(idx + 1, used, layout)
                used.discard(b)
                del layout[(x, y)]

    place(0, set(), {})
    return found


def brute_tree_leaves(variants, cipher_blocks):
    """``{cipher tuple: (plain variant ids, cipher ids)}`` by direct equality."""
    n, K, m = variants.shape
    groups = {}
    for j, c in enumerate(cipher_blocks):
        groups.setdefault(tuple(int(v) for v in c), ([], []))[1].append(j)
    for i in range(n):
        for k in range(K):
            key = tuple(int(v) for v in variants[i, k])
            if key in groups:
                groups[key][0].append(16 * i + k)
    return groups
