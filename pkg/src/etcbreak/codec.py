"""The lossy channel: baseline JPEG round trips and a simulated social-network pipeline.

JPEG is delegated to Pillow's libjpeg build.  Bit-exactness is only promised for
one codec build, so every report carries :data:`CODEC_ID`.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageFilter, features
import PIL

from .imgcore import InvalidInputError, check_image

CODEC_ID = f"pillow-{PIL.__version__}/libjpeg-{features.version('jpg')}"

SUBSAMPLING = {"4:4:4": 0, "4:2:2": 1, "4:2:0": 2}


class ChannelError(RuntimeError):
    """The codec failed to encode or decode an image."""


@dataclass(frozen=True)
class CodecProfile:
    quality: int = 95
    subsampling: str = "4:2:0"

    def __post_init__(self):
        if not 1 <= int(self.quality) <= 100:
            raise InvalidInputError(f"quality must be in [1, 100], got {self.quality}")
        if self.subsampling not in SUBSAMPLING:
            raise InvalidInputError(f"unknown subsampling {self.subsampling!r}")


@dataclass(frozen=True)
class OsnProfile:
    """Decode, optionally smooth, re-encode at ``quality``.  Resizing is never applied."""

    quality: int = 71
    smoothing: int = 0
    subsampling: str = "4:2:0"
    resize: str = "none"

    def __post_init__(self):
        if self.resize != "none":
            raise InvalidInputError("the simulated channel never resizes")
        if self.smoothing < 0:
            raise InvalidInputError("smoothing width must be >= 0")
        CodecProfile(self.quality, self.subsampling)


def encode_jpeg(img, profile):
    arr = check_image(img)
    buf = io.BytesIO()
    kwargs = {"quality": int(profile.quality), "optimize": False}
    if arr.ndim == 3:
        kwargs["subsampling"] = SUBSAMPLING[profile.subsampling]
    try:
        Image.fromarray(arr).save(buf, format="JPEG", **kwargs)
    except (OSError, ValueError) as exc:
        raise ChannelError(f"JPEG encode failed: {exc}") from exc
    return buf.getvalue()


def decode_jpeg(data):
    try:
        with Image.open(io.BytesIO(data)) as im:
            return np.asarray(im).copy()
    except (OSError, ValueError) as exc:
        raise ChannelError(f"JPEG decode failed: {exc}") from exc


def jpeg_roundtrip(img, profile=None):
    """Compress and decompress; the output has the input's shape."""
    profile = profile or CodecProfile()
    out = decode_jpeg(encode_jpeg(img, profile))
    if out.shape != np.asarray(img).shape:
        raise ChannelError(f"codec changed shape {np.asarray(img).shape} -> {out.shape}")
    return out


def osn_channel(img, profile=None):
    """Simulated upload: decode -> optional box smoothing -> re-encode at ``profile.quality``."""
    profile = profile or OsnProfile()
    arr = check_image(img)
    if profile.smoothing > 0:
        size = int(profile.smoothing)
        if size % 2 == 0:
            size += 1
        pil = Image.fromarray(arr).filter(ImageFilter.BoxBlur(size // 2)) if size > 1 else Image.fromarray(arr)
        # light enhancement filter: blend back half of the original detail
        arr = ((np.asarray(pil).astype(np.uint16) + arr) // 2).astype(np.uint8)
    return jpeg_roundtrip(arr, CodecProfile(profile.quality, profile.subsampling))


def roundtrip_blocks(blocks, profile):
    """Round trip a stack of single-channel 8x8-aligned blocks as independent JPEG blocks.

    Grayscale baseline JPEG codes every 8x8 block on its own, so tiling the
    stack into one image and compressing it once is equivalent to compressing
    each block separately.
    """
    blocks = np.asarray(blocks, dtype=np.uint8)
    if blocks.ndim != 3 or blocks.shape[1] % 8 or blocks.shape[2] % 8:
        raise InvalidInputError("block round trip needs single-channel 8x8-aligned blocks")
    n, bh, bw = blocks.shape
    if n == 0:
        return blocks.copy()
    per_row = max(1, min(n, 4096 // bw))
    rows = -(-n // per_row)
    pad = rows * per_row - n
    stack = np.concatenate([blocks, np.zeros((pad, bh, bw), np.uint8)]) if pad else blocks
    tiled = stack.reshape(rows, per_row, bh, bw).swapaxes(1, 2).reshape(rows * bh, per_row * bw)
    out = jpeg_roundtrip(tiled, profile)
    back = out.reshape(rows, bh, per_row, bw).swapaxes(1, 2).reshape(rows * per_row, bh, bw)
    return np.ascontiguousarray(back[:n])


_JFIF = np.array([[0.299, 0.587, 0.114],
                  [-0.168736, -0.331264, 0.5],
                  [0.5, -0.418688, -0.081312]])


def _fancy_upsampler(m):
    """``(2m, m)`` matrix of libjpeg's triangular 2x chroma upsampling on an unbounded line."""
    u = np.zeros((2 * m, m + 2))   # columns: c[-1], c[0..m-1], c[m]
    for j in range(m):
        u[2 * j, j + 1], u[2 * j, j] = 0.75, 0.25
        u[2 * j + 1, j + 1], u[2 * j + 1, j + 2] = 0.75, 0.25
    return u


def unblend_chroma(img, block=16):
    """Remove chroma that a 4:2:0 decoder smeared across ``block``-aligned borders.

    Interior pixels of each block depend only on the block's own chroma
    samples; those are fitted by least squares and the outer ring of every
    block is re-synthesised from them with edge replication.
    """
    arr = check_image(img, channels=3).astype(np.float64)
    h, w = arr.shape[:2]
    if h % block or w % block or block % 2:
        raise InvalidInputError(f"image {w}x{h} is not tiled by {block}x{block} blocks")
    m = block // 2
    u = _fancy_upsampler(m)
    fit = np.linalg.pinv(u[1:-1, 1:-1])            # interior rows see only own samples
    local = u[:, 1:-1].copy()
    local[0, 0] = local[-1, -1] = 1.0               # replicate at block edges
    ycc = arr @ _JFIF.T
    by, bx = h // block, w // block
    for ch in (1, 2):
        x = ycc[..., ch].reshape(by, block, bx, block).transpose(0, 2, 1, 3)
        c = np.einsum("ij,abjk,lk->abil", fit, x[:, :, 1:-1, 1:-1], fit)
        ring = np.einsum("ij,abjk,lk->abil", local, c, local)
        y = x.copy()
        y[:, :, [0, -1], :] = ring[:, :, [0, -1], :]
        y[:, :, :, [0, -1]] = ring[:, :, :, [0, -1]]
        ycc[..., ch] = y.transpose(0, 2, 1, 3).reshape(h, w)
    rgb = ycc @ np.linalg.inv(_JFIF).T
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)
