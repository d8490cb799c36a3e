import numpy as np
import pytest

from etcbreak.cipher import Key, encrypt
from etcbreak.codec import (
    CODEC_ID, CodecProfile, OsnProfile, jpeg_roundtrip, osn_channel, roundtrip_blocks,
    unblend_chroma,
)
from etcbreak.evaluation import synthetic_image
from etcbreak.imgcore import InvalidInputError, rgb_to_ycbcr, split_blocks


def test_codec_id_names_libjpeg():
    assert CODEC_ID.startswith("pillow-") and "libjpeg" in CODEC_ID


def test_constant_image_survives_q100():
    img = np.full((32, 32), 140, np.uint8)
    assert np.array_equal(jpeg_roundtrip(img, CodecProfile(100, "4:4:4")), img)


def test_error_grows_as_quality_drops():
    plane = rgb_to_ycbcr(synthetic_image(128, 1))[..., 0]
    err = {q: np.abs(jpeg_roundtrip(plane, CodecProfile(q)).astype(int) - plane).mean() for q in (95, 47)}
    assert err[95] < err[47]


def test_block_roundtrip_matches_whole_image():
    rng = np.random.default_rng(0)
    blocks = rng.integers(0, 256, (37, 8, 8), dtype=np.uint8)
    out = roundtrip_blocks(blocks, CodecProfile(80))
    for j in (0, 5, 36):
        assert np.array_equal(out[j], jpeg_roundtrip(blocks[j], CodecProfile(80)))


def test_profile_validation():
    with pytest.raises(InvalidInputError):
        CodecProfile(0)
    with pytest.raises(InvalidInputError):
        OsnProfile(resize="half")


def test_osn_q100_is_one_generation():
    img = synthetic_image(64, 2)
    assert np.array_equal(osn_channel(img, OsnProfile(100, 0)), jpeg_roundtrip(img, CodecProfile(100)))


def _boundary_interior_ratio(img, out, block=16):
    err = np.abs(out.astype(float) - img).mean(axis=2)
    mask = np.zeros(err.shape[:2], bool)
    for k in range(0, err.shape[0], block):
        mask[k] = mask[k + block - 1] = True
        mask[:, k] = mask[:, k + block - 1] = True
    return err[mask].mean() / err[~mask].mean()


def test_subsampling_leaves_seams_in_etc_ciphers():
    img = synthetic_image(256, 3)
    cipher, _ = encrypt(img, Key.generate(1), "etc")
    r444 = _boundary_interior_ratio(cipher, jpeg_roundtrip(cipher, CodecProfile(95, "4:4:4")))
    r420 = _boundary_interior_ratio(cipher, jpeg_roundtrip(cipher, CodecProfile(95, "4:2:0")))
    assert r444 <= 1.2
    assert r420 > r444


def test_unblend_reduces_seam_error():
    img = synthetic_image(256, 4)
    cipher, _ = encrypt(img, Key.generate(2), "etc")
    dec = jpeg_roundtrip(cipher, CodecProfile(95))
    fixed = unblend_chroma(dec)
    assert fixed.shape == dec.shape and fixed.dtype == np.uint8
    assert _boundary_interior_ratio(cipher, fixed) < _boundary_interior_ratio(cipher, dec)


def test_unblend_keeps_smooth_chroma():
    # a decoded image with chroma already constant per block is a fixed point up to rounding
    img = np.zeros((32, 32, 3), np.uint8)
    blocks, _ = split_blocks(img, 16)
    img[:16, :16] = (200, 40, 40)
    img[16:, 16:] = (30, 90, 220)
    out = unblend_chroma(img)
    assert np.abs(out.astype(int) - img).max() <= 2
