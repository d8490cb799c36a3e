"""Greedy Kruskal-style assembler for rotated, mirrored, negated and channel-shuffled blocks.

Every placed block carries a cell on an unbounded lattice and a state
``(d, t, c)``: the tile shown at that cell is the cipher block transformed by
the D4 element ``d``, negated if ``t`` and with channel order ``c``
(``shown[..., j] = block[..., PERMS[c][j]]``).  Merging two fragments moves
one of them rigidly (translation, D4 element, global NPT flip, global channel
relabelling) so that the chosen pair of sides meets; the per-block state
updates are the group products of that rigid move.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .imgcore import (
    D4_DET, D4_INV, D4_MATS, D4_MUL, D4_SIDE, PERM_INV, PERM_MUL, REL, SIDE_DIRS,
    BlockState, InvalidInputError, MatchConfig, assemble_blocks, decode_config,
    encode_config, transform_blocks,
)

PUZZLES = ("type0", "type1", "etc")


class Placement(NamedTuple):
    x: int
    y: int
    d: int = 0
    t: int = 0
    c: int = 0


class Edge(NamedTuple):
    cfg: MatchConfig
    weight: float


@dataclass
class Rejection:
    reason: str   # same-fragment | side-occupied | collision | cap

    def __bool__(self):
        return False


@dataclass
class Fragment:
    """Connected, collision-free set of placed blocks."""

    blocks: dict = field(default_factory=dict)   # block -> Placement
    cells: dict = field(default_factory=dict)    # (x, y) -> block

    @classmethod
    def single(cls, block):
        return cls({block: Placement(0, 0)}, {(0, 0): block})

    def __len__(self):
        return len(self.blocks)

    def __contains__(self, block):
        return block in self.blocks

    def neighbour_cell(self, block, side):
        p = self.blocks[block]
        dx, dy = SIDE_DIRS[D4_SIDE[p.d, side]]
        return p.x + int(dx), p.y + int(dy)


def _world_side(d, side):
    return int(D4_SIDE[d, side])


def _block_side(d, world_side):
    return int(D4_SIDE[D4_INV[d], world_side])


def pair_config(pa, pb, world_side):
    """Configuration index pieces ``(s_a, s_b, i, t)`` for b placed on ``world_side`` of a."""
    s_a = _block_side(pa.d, world_side)
    s_b = _block_side(pb.d, (world_side + 2) % 4)
    return s_a, s_b, int(D4_DET[pa.d] ^ D4_DET[pb.d]), pa.t ^ pb.t


def _rigid_move(anchor, moving, a, s_a, m, s_m, i, t):
    """Where ``moving`` goes when side ``s_m`` of block m meets side ``s_a`` of block a."""
    pa = anchor.blocks[a]
    pm = moving.blocks[m]
    dx, dy = SIDE_DIRS[_world_side(pa.d, s_a)]
    target = (pa.x + int(dx), pa.y + int(dy))
    new_dm = D4_MUL[pa.d, REL[s_a, s_m, i]]
    g = int(D4_MUL[new_dm, D4_INV[pm.d]])
    tau = pa.t ^ t ^ pm.t
    mat = D4_MATS[g]
    moved = {}
    for b, p in moving.blocks.items():
        rx, ry = p.x - pm.x, p.y - pm.y
        nx = target[0] + int(mat[0, 0] * rx + mat[0, 1] * ry)
        ny = target[1] + int(mat[1, 0] * rx + mat[1, 1] * ry)
        moved[b] = Placement(nx, ny, int(D4_MUL[g, p.d]), p.t ^ tau, p.c)
    return moved


def _recolor(moved, kappa):
    if kappa == 0:
        return moved
    return {b: p._replace(c=int(PERM_MUL[kappa, p.c])) for b, p in moved.items()}


def _boundary_pairs(anchor, moved):
    """Newly adjacent ``(anchor block, moved block, world side from anchor)`` triples."""
    out = []
    for b, p in moved.items():
        for ws in range(4):
            dx, dy = SIDE_DIRS[ws]
            a = anchor.cells.get((p.x - int(dx), p.y - int(dy)))
            if a is not None:
                out.append((a, b, ws))
    return out


def vote_color(anchor, moved, pairs, tensor):
    """Majority vote over the channel relabelling implied by each joined pair.

    ``moved`` holds the moving fragment's placements after the geometric move;
    returns the relabelling index ``kappa`` (``None`` when no pair has a finite score).
    Ties go to the lowest index.
    """
    votes = Counter()
    for a, b, ws in pairs:
        pa, pb = anchor.blocks[a], moved[b]
        s_a, s_b, i, t = pair_config(pa, pb, ws)
        scores = [tensor.lookup(a, s_a, b, encode_config(s_b, i, t, c, "etc")) for c in range(6)]
        if not np.isfinite(min(scores)):
            continue
        sigma = int(np.argmin(scores))
        want = PERM_MUL[pa.c, sigma]
        votes[int(PERM_MUL[want, PERM_INV[pb.c]])] += 1
    if not votes:
        return None
    top = max(votes.values())
    return min(k for k, v in votes.items() if v == top)


def merge_fragments(fa, fb, edge, cap=None, tensor=None, vote=False):
    """Join ``fb`` onto ``fa`` along ``edge`` (u in fa, v in fb) or return a :class:`Rejection`.

    The smaller fragment is the one actually moved; the result is the same
    assembly up to a global pose.
    """
    cfg = edge.cfg
    if fa is fb or cfg.v in fa:
        return Rejection("same-fragment")
    if cfg.u not in fa or cfg.v not in fb:
        raise InvalidInputError("edge endpoints are not in the given fragments")
    if cap is not None and len(fa) + len(fb) > cap:
        return Rejection("cap")
    if fa.neighbour_cell(cfg.u, cfg.s_u) in fa.cells or fb.neighbour_cell(cfg.v, cfg.s_v) in fb.cells:
        return Rejection("side-occupied")
    if len(fb) <= len(fa):
        anchor, moving = fa, fb
        args = (cfg.u, cfg.s_u, cfg.v, cfg.s_v)
        sigma = cfg.c
    else:
        anchor, moving = fb, fa
        args = (cfg.v, cfg.s_v, cfg.u, cfg.s_u)
        sigma = int(PERM_INV[cfg.c])
    moved = _rigid_move(anchor, moving, *args, cfg.i, cfg.t)
    if any((p.x, p.y) in anchor.cells for p in moved.values()):
        return Rejection("collision")
    a, m = args[0], args[2]
    want = PERM_MUL[anchor.blocks[a].c, sigma]
    kappa = int(PERM_MUL[want, PERM_INV[moved[m].c]])
    if vote and tensor is not None:
        voted = vote_color(anchor, moved, _boundary_pairs(anchor, moved), tensor)
        if voted is not None:
            kappa = voted
    moved = _recolor(moved, kappa)
    blocks = dict(anchor.blocks)
    blocks.update(moved)
    cells = dict(anchor.cells)
    cells.update({(p.x, p.y): b for b, p in moved.items()})
    return Fragment(blocks, cells)


# --------------------------------------------------------------------------
# assemblies

@dataclass
class Assembly:
    fragments: list
    diagnostic: str | None = None
    trace: list = field(default_factory=list)       # accepted edge weights in order
    rejections: Counter = field(default_factory=Counter)

    @property
    def n(self):
        return sum(len(f) for f in self.fragments)

    def placement(self, block):
        for f in self.fragments:
            if block in f.blocks:
                return f.blocks[block]
        raise KeyError(block)

    def arrays(self):
        """Per-block ``(frag, x, y, d, t, c)`` arrays indexed by block id."""
        n = self.n
        out = np.zeros((6, n), dtype=np.int64)
        for fi, f in enumerate(self.fragments):
            for b, p in f.blocks.items():
                out[:, b] = (fi, p.x, p.y, p.d, p.t, p.c)
        return out

    def to_text(self, color=False):
        lines = []
        for fi, f in enumerate(self.fragments):
            lines.append(f"# fragment {fi}")
            for b in sorted(f.blocks):
                p = f.blocks[b]
                s = BlockState.from_parts(p.d, p.t, p.c)
                row = f"{b} {p.x} {p.y} {s.r} {s.i} {s.t}"
                lines.append(row + (f" {p.c}" if color else ""))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        frags = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line[1:].split()[:1] == ["fragment"]:
                    frags.append(Fragment())
                continue
            if not frags:
                frags.append(Fragment())
            parts = [int(v) for v in line.split()]
            b, x, y, r, i, t = parts[:6]
            c = parts[6] if len(parts) > 6 else 0
            p = Placement(x, y, int(BlockState(r, i, t).d), t, c)
            frags[-1].blocks[b] = p
            frags[-1].cells[(x, y)] = b
        return cls(frags)


def truth_assembly(truth, grid):
    """The ideal assembly: one fragment per plane, every block at its plain-image cell."""
    frags = [Fragment() for _ in range(grid.planes)]
    for p in range(truth.n):
        b = int(truth.dest[p])
        plane = int(grid.plane_of(p))
        x, y = (int(v) for v in grid.cell_of(p))
        c = int(PERM_INV[truth.c[p]]) if truth.c is not None else 0
        frags[plane].blocks[b] = Placement(x, y, int(D4_INV[truth.k[p] % 8]), int(truth.k[p] // 8), c)
        frags[plane].cells[(x, y)] = b
    return Assembly(frags)


def solve(tensor, grid, puzzle="type1", fragment_cap=None, target=None, vote=None, edge_limit=None):
    """Consume edges by increasing weight, merging fragments until ``target`` remain.

    For flattened three-plane images the defaults are a cap of ``n // 3`` blocks
    per fragment and three final fragments.  If the edge list runs out first the
    partial assembly is returned with ``diagnostic`` set.
    """
    if puzzle not in PUZZLES:
        raise InvalidInputError(f"unknown puzzle {puzzle!r}")
    n = tensor.n
    if n != grid.n:
        raise InvalidInputError(f"tensor has {n} blocks, grid has {grid.n}")
    if fragment_cap is None:
        fragment_cap = n // grid.planes if grid.planes > 1 else n
    if target is None:
        target = grid.planes
    if vote is None:
        vote = puzzle == "etc"
    owner = list(range(n))
    frags = {b: Fragment.single(b) for b in range(n)}
    asm = Assembly([])
    count = n
    if count > target:
        us, sus, vs, ks, ws = tensor.edges(edge_limit)
        last = -np.inf
        for u, s_u, v, k, w in zip(us.tolist(), sus.tolist(), vs.tolist(), ks.tolist(), ws.tolist()):
            assert w >= last
            last = w
            fa, fb = frags[owner[u]], frags[owner[v]]
            if fa is fb:
                asm.rejections["same-fragment"] += 1
                continue
            s_v, i, t, c = decode_config(k, puzzle)
            res = merge_fragments(fa, fb, Edge(MatchConfig(u, v, s_u, s_v, i, t, c), w),
                                  fragment_cap, tensor, vote)
            if isinstance(res, Rejection):
                asm.rejections[res.reason] += 1
                continue
            root, gone = owner[u], owner[v]
            for b in fb.blocks:
                owner[b] = root
            frags[root] = res
            del frags[gone]
            asm.trace.append(w)
            count -= 1
            if count <= target:
                break
    seen = {}
    for b in range(n):
        f = frags[owner[b]]
        seen.setdefault(id(f), f)
    asm.fragments = sorted(seen.values(), key=lambda f: (-len(f), min(f.blocks)))
    if len(asm.fragments) > target:
        asm.diagnostic = (f"edge list exhausted with {len(asm.fragments)} fragments "
                          f"(target {target}, cap {fragment_cap})")
    return asm


# --------------------------------------------------------------------------
# rendering

def render_fragment(fragment, blocks, fill=0):
    """Paste the transformed cipher blocks of one fragment into its bounding box."""
    blocks = np.asarray(blocks)
    ids = np.fromiter(fragment.blocks, dtype=int)
    pl = [fragment.blocks[b] for b in ids]
    xs = np.array([p.x for p in pl])
    ys = np.array([p.y for p in pl])
    x0, y0 = xs.min(), ys.min()
    bh, bw = blocks.shape[1:3]
    tail = blocks.shape[3:]
    out = np.full(((ys.max() - y0 + 1) * bh, (xs.max() - x0 + 1) * bw, *tail), fill, dtype=np.uint8)
    tiles = transform_blocks(blocks[ids], [p.d for p in pl], [p.t for p in pl],
                             [p.c for p in pl] if tail else None)
    for tile, x, y in zip(tiles, xs - x0, ys - y0):
        out[y * bh:(y + 1) * bh, x * bw:(x + 1) * bw] = tile
    return out


def _fit(img, h, w, fill=128):
    out = np.full((h, w), fill, dtype=np.uint8)
    hh, ww = min(h, img.shape[0]), min(w, img.shape[1])
    out[:hh, :ww] = img[:hh, :ww]
    return out


def _colorfulness(rgb):
    rgb = rgb.astype(np.float64)
    rg = rgb[..., 0] - rgb[..., 1]
    yb = 0.5 * (rgb[..., 0] + rgb[..., 1]) - rgb[..., 2]
    return np.hypot(rg.std(), yb.std()) + 0.3 * np.hypot(rg.mean(), yb.mean())


def render(assembly, blocks, grid=None):
    """Recovered image(s) of an assembly.

    Returns a dict with ``planes`` (one grayscale or color image per fragment,
    largest first) and, for three-plane puzzles, ``composite``: an RGB guess
    that treats the two flattest planes centred near 128 as chroma.
    """
    from .imgcore import ycbcr_to_rgb

    planes = [render_fragment(f, blocks) for f in assembly.fragments]
    out = {"planes": planes}
    if grid is not None and grid.planes == 3 and len(planes) >= 3 and planes[0].ndim == 2:
        h, w = grid.rows * grid.block_h, grid.cols * grid.block_w
        top = [_fit(p, h, w) for p in planes[:3]]
        chroma_score = [abs(p.mean() - 128) + p.std() for p in top]
        order = np.argsort(chroma_score)
        y = top[order[2]]
        trials = []
        for cb, cr in ((order[0], order[1]), (order[1], order[0])):
            rgb = ycbcr_to_rgb(np.stack([y, top[cb], top[cr]], axis=2))
            trials.append((_colorfulness(rgb), rgb))
        out["composite"] = max(trials, key=lambda p: p[0])[1]
    elif grid is not None and len(planes) == 1:
        out["image"] = planes[0]
    return out
