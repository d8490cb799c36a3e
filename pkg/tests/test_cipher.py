import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etcbreak.cipher import (
    Key, KeyStream, WMap, cipher_grid, decrypt, decrypt_with_map, encrypt, etc_decrypt,
    etc_encrypt, etcs_decrypt, etcs_encrypt, keystream, permutation_order,
)
from etcbreak.codec import CodecProfile, jpeg_roundtrip
from etcbreak.evaluation import synthetic_image
from etcbreak.imgcore import InvalidInputError, flatten, rgb_to_ycbcr, split_blocks

keys = st.builds(Key, st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))


def test_keystream_deterministic_and_in_range():
    key = Key(1, 2, 3)
    a, b = keystream(key, 500, "etc"), keystream(key, 500, "etc")
    assert np.array_equal(a.s, b.s) and np.array_equal(a.rf, b.rf) and np.array_equal(a.cperm, b.cperm)
    assert a.s.min() >= 0 and a.s.max() <= 499
    assert set(np.unique(a.t)) <= {0, 1} and set(np.unique(a.cperm)) <= set(range(6))


def test_one_bit_key_change_changes_stream():
    rng = np.random.default_rng(0)
    for _ in range(100):
        k1 = int(rng.integers(0, 2**63))
        bit = 1 << int(rng.integers(0, 64))
        a = keystream(Key(k1, 5, 6), 3072).s
        b = keystream(Key(k1 ^ bit, 5, 6), 3072).s
        assert not np.array_equal(a, b)


def test_key_parse_and_errors():
    assert Key.parse(str(Key(7, 8, 9))) == Key(7, 8, 9)
    with pytest.raises(InvalidInputError):
        Key.parse("1,2")
    with pytest.raises(InvalidInputError):
        Key(-1, 0, 0)


def test_permutation_order_is_sequential_swaps():
    s = [2, 0, 2]
    # brute force: swap positions i and s[i] in turn
    order = list(range(3))
    for i, j in enumerate(s):
        order[i], order[j] = order[j], order[i]
    assert permutation_order(np.array(s)).tolist() == order


def test_identity_stream_gives_flattened_plane():
    img = synthetic_image(64, 1)
    cipher, wmap = etcs_encrypt(img, stream=KeyStream.identity(3 * 8 * 8))
    assert cipher.shape == (64, 192)
    assert np.array_equal(cipher, flatten(rgb_to_ycbcr(img)))
    assert np.array_equal(wmap.dest, np.arange(wmap.n)) and (wmap.k == 0).all()
    c2, _ = etc_encrypt(img, stream=KeyStream.identity(16, "etc"))
    assert np.array_equal(c2, img)


@settings(max_examples=20, deadline=None)
@given(keys, st.integers(0, 2**32 - 1))
def test_etcs_roundtrip_within_one(key, seed):
    img = np.random.default_rng(seed).integers(0, 256, (32, 48, 3), dtype=np.uint8)
    cipher, wmap = etcs_encrypt(img, key)
    assert cipher.shape == (32, 144)
    assert wmap.is_permutation()
    assert np.abs(etcs_decrypt(cipher, key).astype(int) - img).max() <= 1


@settings(max_examples=20, deadline=None)
@given(keys, st.integers(0, 2**32 - 1))
def test_etc_roundtrip_exact(key, seed):
    img = np.random.default_rng(seed).integers(0, 256, (32, 48, 3), dtype=np.uint8)
    cipher, wmap = etc_encrypt(img, key)
    assert wmap.is_permutation() and wmap.c is not None
    assert np.array_equal(etc_decrypt(cipher, key), img)


def test_wmap_describes_cipher():
    img = synthetic_image(64, 2)
    key = Key.generate(4)
    cipher, wmap = encrypt(img, key)
    plain_blocks, grid = split_blocks(flatten(rgb_to_ycbcr(img)), 8, planes=3)
    cblocks, _ = split_blocks(cipher, 8, planes=3)
    from etcbreak.imgcore import enumerate_variants

    for i in range(grid.n):
        assert np.array_equal(cblocks[wmap.dest[i]], enumerate_variants(plain_blocks[i])[wmap.k[i]])


def test_same_key_same_wmap():
    key = Key.generate(9)
    _, w1 = encrypt(synthetic_image(64, 1), key)
    _, w2 = encrypt(synthetic_image(64, 2), key)
    assert np.array_equal(w1.dest, w2.dest) and np.array_equal(w1.k, w2.k)


def test_wmap_text_roundtrip():
    _, wmap = encrypt(synthetic_image(64, 3), Key.generate(1), "etc")
    back = WMap.from_text(wmap.to_text())
    assert np.array_equal(back.dest, wmap.dest) and np.array_equal(back.c, wmap.c)
    partial = WMap(np.array([2, -1, 0]), np.array([5, -1, 0]))
    assert WMap.from_text(partial.to_text()).dest.tolist() == [2, -1, 0]


def test_wrong_key_decorrelates():
    img = synthetic_image(128, 5)
    cipher, _ = encrypt(img, Key.generate(1))
    wrong = decrypt(cipher, Key.generate(2)).astype(float)
    r = np.corrcoef(wrong.ravel(), img.astype(float).ravel())[0, 1]
    assert abs(r) < 0.1


def test_q100_is_near_lossless():
    img = synthetic_image(128, 6)
    key = Key.generate(1)
    cipher, _ = encrypt(img, key)
    out = decrypt(jpeg_roundtrip(cipher, CodecProfile(100)), key).astype(float)
    mse = ((out - img) ** 2).mean()
    assert 10 * np.log10(255**2 / mse) > 40


def test_etc_block_count_and_leak():
    img = synthetic_image(256, 7)
    cipher, _ = encrypt(img, Key.generate(3), "etc")
    grid = cipher_grid(cipher.shape, "etc")
    assert grid.n == 256
    # block means survive scrambling: regional statistics leak
    pm = split_blocks(img, 16)[0].mean(axis=(1, 2, 3))
    cm = split_blocks(jpeg_roundtrip(cipher, CodecProfile(95)), 16)[0].mean(axis=(1, 2, 3))
    assert np.corrcoef(np.sort(pm), np.sort(cm))[0, 1] > 0.5


def test_decrypt_with_map_matches_decrypt():
    img = synthetic_image(64, 8)
    key = Key.generate(5)
    for scheme in ("etcs", "etc"):
        cipher, wmap = encrypt(img, key, scheme)
        assert np.array_equal(decrypt_with_map(cipher, wmap, scheme), decrypt(cipher, key, scheme))


def test_stream_length_checked():
    with pytest.raises(InvalidInputError):
        etcs_encrypt(synthetic_image(64, 1), stream=KeyStream.identity(5))
