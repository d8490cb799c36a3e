from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etcbreak.attacks import (
    _greedy_pairs, build_tree, coa, cpa_construct, cpa_refine, kpa_candidates, kpa_exact,
    kpa_probability, kpa_similarity, plain_variants, psnr, variants_distinct,
)
from etcbreak.cipher import Key, decrypt, decrypt_with_map, encrypt
from etcbreak.codec import CodecProfile, jpeg_roundtrip, osn_channel, OsnProfile
from etcbreak.evaluation import neighbor_comparison, synthetic_image, w_accuracy
from etcbreak.imgcore import InvalidInputError, split_blocks
from oracles import brute_tree_leaves


def test_candidate_counts():
    assert kpa_candidates([(1, 1)] * 5) == 1
    assert kpa_candidates([(2, 3)]) == 6
    assert kpa_candidates([(1, 2), (2, 2)]) == 4
    with pytest.raises(InvalidInputError):
        kpa_candidates([(3, 2)])


def test_candidate_count_brute_force():
    # leaf with a cipher blocks and b plain variants: count injective maps cipher -> plain
    import itertools

    for a, b in [(1, 3), (2, 4), (3, 3)]:
        maps = list(itertools.permutations(range(b), a))
        assert kpa_candidates([(a, b)]) == len(maps)


def test_probability():
    assert kpa_probability(1, 1) == Fraction(256, 271)
    p = kpa_probability(3072, 64)
    assert 1 - p == Fraction(16 * 3072 - 1, 256**64 + 16 * 3072 - 1)
    assert Fraction(1, 10**150) < 1 - p < Fraction(1, 10**149)
    assert kpa_probability(10, 2) > kpa_probability(10, 1)
    assert kpa_probability(10, 1) > kpa_probability(20, 1)


@pytest.mark.parametrize("quality", [None, 80])
def test_tree_matches_brute_force(quality):
    img = synthetic_image(32, 3)
    cipher, _ = encrypt(img, Key.generate(1))
    codec = CodecProfile(quality) if quality else None
    if codec:
        cipher = jpeg_roundtrip(cipher, codec)
    var, grid = plain_variants(img, 8, codec)
    cblocks = split_blocks(cipher, 8, planes=3)[0].reshape(grid.n, -1)
    trace = []
    leaves = build_tree(var, cblocks, trace)
    # conservation: every cipher block sits in exactly one leaf, |B'| never shrinks
    assert sorted(np.concatenate([lf.cipher for lf in leaves]).tolist()) == list(range(grid.n))
    assert all(t[3] == grid.n for t in trace)
    assert all(t[2] >= trace[-1][2] for t in trace)
    got = {tuple(cblocks[lf.cipher[0]].tolist()): (sorted(lf.plain.tolist()), sorted(lf.cipher.tolist()))
           for lf in leaves}
    ref = brute_tree_leaves(var, cblocks)
    assert got == {k: (sorted(p), sorted(c)) for k, (p, c) in ref.items()}


def test_kpa_two_constant_blocks():
    img = np.zeros((8, 8, 3), np.uint8)
    img[..., 0] = 200       # Y, Cb, Cr planes are three distinct constant blocks
    cipher, truth = encrypt(img, Key.generate(2))
    est = kpa_exact(img, cipher, complete=True)
    assert np.array_equal(est.dest, truth.dest)
    assert np.array_equal(decrypt_with_map(cipher, est), decrypt(cipher, Key.generate(2)))
    strict = kpa_exact(img, cipher)
    assert strict.count == 8**3     # each constant block has 8 pixel-equal dihedral variants


def test_kpa_lossless_exact():
    img = synthetic_image(64, 7)
    cipher, truth = encrypt(img, Key.generate(3))
    est = kpa_exact(img, cipher)
    assert w_accuracy(est, truth) == 1.0 and est.count == 1


def test_kpa_completed_map_decrypts_exactly():
    img = synthetic_image(128, 102)
    img[:40, :40] = 255          # saturated patch: identical, symmetric blocks
    key = Key.generate(4)
    cipher, truth = encrypt(img, key)
    strict = kpa_exact(img, cipher)
    full = kpa_exact(img, cipher, complete=True)
    assert w_accuracy(strict, truth) < 1.0
    assert (full.dest >= 0).all() and full.is_permutation()
    assert np.array_equal(decrypt_with_map(cipher, full), decrypt(cipher, key))


@pytest.mark.parametrize("scheme", ["etcs", "etc"])
def test_similarity_lossless(scheme):
    img = synthetic_image(64, 8)
    cipher, truth = encrypt(img, Key.generate(5), scheme)
    assert w_accuracy(kpa_similarity(img, cipher, scheme), truth) == 1.0


def test_similarity_mild_channel():
    img = synthetic_image(128, 9)
    cipher, truth = encrypt(img, Key.generate(6))
    up = osn_channel(jpeg_roundtrip(cipher, CodecProfile(95)), OsnProfile(95))
    assert w_accuracy(kpa_similarity(img, up), truth) >= 0.95


def test_similarity_hurt_by_near_duplicates():
    rng = np.random.default_rng(1)
    distinct = synthetic_image(128, 10)
    dup = np.repeat(np.repeat(rng.integers(100, 140, (8, 8, 3)), 16, 0), 16, 1)
    dup = np.clip(dup + rng.integers(-1, 2, dup.shape), 0, 255).astype(np.uint8)
    q = CodecProfile(80)
    accs = []
    for img in (distinct, dup):
        cipher, truth = encrypt(img, Key.generate(7))
        accs.append(w_accuracy(kpa_similarity(img, jpeg_roundtrip(cipher, q)), truth))
    assert accs[1] < accs[0]


def test_greedy_pairs_ties_and_order():
    d = np.array([[0.0, 0.0], [0.0, 5.0]])
    assert _greedy_pairs(d) == [(0, 0), (1, 1)]
    # removing a selection's row and column together gives the same pairs as removing them one by one
    rng = np.random.default_rng(2)
    d = rng.integers(0, 5, (6, 6)).astype(float)
    pairs = _greedy_pairs(d)
    left = d.copy()
    ref = []
    for _ in range(6):
        r, c = np.unravel_index(np.argmin(left), left.shape)
        ref.append((int(r), int(c)))
        left[r, :] = np.inf
        left[:, c] = np.inf
    assert pairs == ref


def test_cpa_construct_properties():
    q = CodecProfile(95)
    a = cpa_construct(64, 32, q, seed=3)
    assert np.array_equal(a, cpa_construct(64, 32, q, seed=3))
    assert variants_distinct(a, q)
    cipher, truth = encrypt(a, Key.generate(8))
    est = kpa_exact(a, jpeg_roundtrip(cipher, q), codec=q)
    assert w_accuracy(est, truth) == 1.0


def test_cpa_refine():
    q = CodecProfile(95)
    good = cpa_construct(32, 32, q, seed=1)
    assert np.array_equal(cpa_refine(good, q), good)
    img = synthetic_image(64, 11)
    img[:16, :16] = 128
    assert not variants_distinct(img, q)
    out = cpa_refine(img, q, seed=2)
    assert variants_distinct(out, q)
    assert psnr(out, img) > 40


def test_coa_small_runs():
    imgs = [synthetic_image(64, s) for s in range(4)]
    key = Key.generate(9)
    enc = [encrypt(x, key) for x in imgs]
    res = coa([c for c, _ in enc], "mgc")
    assert len(res.assembly.fragments) == 3
    assert neighbor_comparison(res.assembly, enc[0][1], res.grid) > 0.8


def test_coa_errors():
    with pytest.raises(InvalidInputError):
        coa([])
    with pytest.raises(InvalidInputError):
        coa([np.zeros((16, 48), np.uint8)], scheme="xyz")


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kpa_exact_any_key(seed):
    img = synthetic_image(32, 12)
    cipher, truth = encrypt(img, Key.generate(seed))
    assert w_accuracy(kpa_exact(img, cipher), truth) == 1.0
