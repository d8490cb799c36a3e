"""Test images, assembly scoring and the run fingerprint."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .codec import CODEC_ID
from .imgcore import D4_MATS, D4_MUL, PERM_MUL, InvalidInputError, read_image, ycbcr_to_rgb_float

# every interpretive choice that can change numbers; hashed into each report
DECISIONS = {
    "swap_mode": "sequential",
    "prng": "numpy-philox-4x64-tagged",
    "ycbcr_rounding": "floor(x+0.5), clamp 0..255",
    "mgc_variance": "per-channel variance, ddof=1, plus 1.0",
    "emgc": "mgc plus along-boundary difference term",
    "normalization": "divide by second smallest entry of each (u, side) row",
    "ties": "lowest flat index",
    "sparse_top_k": 24,
    "npt_pose": "global NPT flip treated as pose",
    "osn_model": "box smoothing blended 1:1 then JPEG",
    "kpa_candidates": "prod C(b,a) a!, a=|cipher set|, b=|plain set|",
}


def decision_fingerprint(extra=None):
    blob = dict(DECISIONS, **(extra or {}))
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]


def run_info(extra=None):
    return {"codec": CODEC_ID, "fingerprint": decision_fingerprint(extra)}


# --------------------------------------------------------------------------
# corpus

def _bundled_photos():
    """Color photographs that ship with installed packages (no network)."""
    out = []
    try:
        from sklearn.datasets import load_sample_images

        out.extend(load_sample_images().images)
    except ImportError:
        pass
    try:
        import skimage.data as sd

        for name in ("astronaut", "chelsea", "coffee", "rocket", "stereo_motorcycle",
                     "immunohistochemistry", "hubble_deep_field", "retina"):
            try:
                img = getattr(sd, name)()
            except Exception:   # optional sample may need a download
                continue
            img = img[0] if isinstance(img, tuple) else img
            if img.ndim == 3 and img.shape[2] == 3:
                out.append(img)
    except ImportError:
        pass
    return out


def _power_law_field(rng, size, alpha):
    """Gaussian random field with amplitude spectrum ~ 1/f^alpha, unit variance."""
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    f = np.hypot(fy, fx)
    f[0, 0] = 1.0
    spec = (rng.standard_normal(f.shape) + 1j * rng.standard_normal(f.shape)) / f**alpha
    spec[0, 0] = 0
    field = np.fft.irfft2(spec, s=(size, size))
    return field / field.std()


def _dead_leaves(rng, size, count=400):
    """Occluding discs with power-law radii: piecewise flat regions with sharp edges."""
    out = np.full((size, size, 3), np.nan)
    yy, xx = np.mgrid[0:size, 0:size]
    rmin, rmax = 2.0, size / 3
    for _ in range(count):
        u = rng.random()
        r = rmin * (rmax / rmin) ** u     # density ~ 1/r keeps the spectrum close to 1/f
        cx, cy = rng.uniform(-r, size + r, 2)
        disc = ((xx - cx) ** 2 + (yy - cy) ** 2 <= r * r) & np.isnan(out[..., 0])
        out[disc] = rng.standard_normal(3)
        if not np.isnan(out[..., 0]).any():
            break
    holes = np.isnan(out[..., 0])
    out[holes] = rng.standard_normal(3)
    return out


# plane statistics measured on the bundled photographs at 256x256
# (mean amplitude-spectrum slope and standard deviation of Y, Cb, Cr)
_PLANE_SLOPE = (1.27, 1.35, 1.41)
_PLANE_STD = (49.0, 12.0, 16.0)


def synthetic_image(size=256, seed=0):
    """Natural-like color image: dead-leaves regions plus power-law texture.

    Each YCbCr plane is scaled to the spectral slope and spread measured on
    real photographs, then converted to RGB with mild sensor noise.
    """
    rng = np.random.default_rng(seed)
    leaves = _dead_leaves(rng, size)
    planes = []
    for p in range(3):
        alpha = _PLANE_SLOPE[p] + rng.uniform(-0.1, 0.1)
        tex = _power_law_field(rng, size, alpha)
        mix = 0.6 * leaves[..., p] / (leaves[..., p].std() + 1e-9) + 0.8 * tex
        planes.append(mix / mix.std() * _PLANE_STD[p] * rng.uniform(0.7, 1.3))
    ycc = np.stack(planes, axis=2) + [rng.uniform(90, 160), 128 + rng.uniform(-10, 10),
                                      128 + rng.uniform(-10, 10)]
    rgb = ycbcr_to_rgb_float(ycc) + rng.normal(0, 1.0, (size, size, 3))
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def photo_crops(count, size=256, seed=0):
    """``count`` square crops of the bundled photographs, resized to ``size``.

    Each crop covers 45-90% of the source's short side, so blocks keep
    photographic statistics.  Falls back to synthetic images when no
    photographs are installed.
    """
    photos = _bundled_photos()
    if not photos:
        return [synthetic_image(size, seed + i) for i in range(count)]
    rng = np.random.default_rng(seed)
    out = []
    for j in range(count):
        src = photos[j % len(photos)]
        h, w = src.shape[:2]
        side = int(min(h, w) * rng.uniform(0.45, 0.9))
        y0 = int(rng.integers(0, h - side + 1))
        x0 = int(rng.integers(0, w - side + 1))
        im = Image.fromarray(np.ascontiguousarray(src[y0:y0 + side, x0:x0 + side]))
        im = im.resize((size, size), Image.LANCZOS)
        arr = np.asarray(im)
        if rng.integers(0, 2):
            arr = arr[:, ::-1]
        out.append(np.ascontiguousarray(arr))
    return out


def load_corpus(source="photos", count=16, size=256, seed=0):
    """Images from ``photos``, ``synthetic`` or a directory of PNG/JPEG files."""
    if source == "photos":
        return photo_crops(count, size, seed)
    if source == "synthetic":
        return [synthetic_image(size, seed + i) for i in range(count)]
    path = Path(source)
    if not path.is_dir():
        raise InvalidInputError(f"corpus source {source!r} is neither a known name nor a directory")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    if not files:
        raise InvalidInputError(f"no images in {path}")
    out = []
    for p in files[:count]:
        img = read_image(p)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        h, w = img.shape[:2]
        s = min(h, w)
        img = img[(h - s) // 2:(h - s) // 2 + s, (w - s) // 2:(w - s) // 2 + s]
        out.append(np.asarray(Image.fromarray(img).resize((size, size), Image.LANCZOS)))
    return out


# --------------------------------------------------------------------------
# assembly quality

def _shown_state(asm_arrays, truth):
    """Per plain block: fragment, shown cell, shown pose, shown NPT and shown channel order."""
    frag, x, y, d, t, c = asm_arrays
    b = truth.dest
    k = truth.k
    pose = D4_MUL[d[b], k % 8]
    npt = t[b] ^ (k // 8)
    col = PERM_MUL[c[b], truth.c] if truth.c is not None else np.zeros_like(b)
    return frag[b], x[b], y[b], pose, npt, col


def correct_pairs(assembly, truth, grid, ignore_color=None, strict=True):
    """Boolean per plain neighbour pair: is it reproduced by the assembly?

    Correct means both blocks lie in one fragment, share a pose, sit at the
    posed plain offset, and (``strict``) agree in NPT parity and, unless
    ``ignore_color``, channel order.  A global pose, NPT flip or channel
    relabelling of a fragment does not count against it.
    """
    pairs = np.array(grid.adjacent_pairs(), dtype=int).reshape(-1, 3)
    if ignore_color is None:
        ignore_color = truth.c is not None
    frag, x, y, pose, npt, col = _shown_state(assembly.arrays(), truth)
    p1, p2, side = pairs[:, 0], pairs[:, 1], pairs[:, 2]
    delta = np.where(side[:, None] == 1, [1, 0], [0, 1])
    off = np.einsum("nij,nj->ni", D4_MATS[pose[p1]], delta)
    ok = (frag[p1] == frag[p2]) & (pose[p1] == pose[p2])
    ok &= (x[p2] - x[p1] == off[:, 0]) & (y[p2] - y[p1] == off[:, 1])
    if strict:
        ok &= npt[p1] == npt[p2]
        if not ignore_color:
            ok &= col[p1] == col[p2]
    return pairs, ok


def neighbor_comparison(assembly, truth, grid, ignore_color=None, strict=True):
    """Share of plain neighbour pairs that are neighbours in the right way in the assembly."""
    pairs, ok = correct_pairs(assembly, truth, grid, ignore_color, strict)
    return float(ok.mean()) if len(ok) else 1.0


def largest_component(assembly, truth, grid, ignore_color=None, strict=True):
    """Largest set of blocks joined by correct pairs, as a share of one plane."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    pairs, ok = correct_pairs(assembly, truth, grid, ignore_color, strict)
    n = grid.n
    good = pairs[ok]
    g = coo_matrix((np.ones(len(good)), (good[:, 0], good[:, 1])), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    return float(np.bincount(labels).max() / (n // grid.planes))


def w_accuracy(estimate, truth, ignore_color=False):
    """Share of plain blocks whose destination and variant (and channel order) are right."""
    if estimate.n != truth.n:
        raise InvalidInputError("estimate and truth differ in length")
    ok = (estimate.dest == truth.dest) & (estimate.k == truth.k) & (estimate.dest >= 0)
    if not ignore_color and truth.c is not None:
        if estimate.c is None:
            return 0.0
        ok &= estimate.c == truth.c
    return float(ok.mean())

