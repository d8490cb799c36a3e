"""scikit-learn style wrappers around the cipher and the attacks.

``X`` is always a list of images (a single ndarray is accepted and treated as
a one-element list).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import attacks
from .cipher import ETC_BLOCK, Key, decrypt, decrypt_with_map, encrypt
from .codec import CodecProfile, unblend_chroma
from .imgcore import InvalidInputError, split_blocks
from .solver import render


def _as_list(X):
    if isinstance(X, np.ndarray):
        return [X]
    X = list(X)
    if not X:
        raise InvalidInputError("no images given")
    return X


def _key(key):
    if key is None:
        raise InvalidInputError("a key is required")
    return key if isinstance(key, Key) else Key.parse(key)


class BlockCipher(BaseEstimator, TransformerMixin):
    """Encrypt with ``transform``, decrypt with ``inverse_transform``.

    After ``transform`` the ground-truth maps of the last batch are kept in ``wmaps_``.
    """

    def __init__(self, key=None, scheme="etcs", block=8):
        self.key = key
        self.scheme = scheme
        self.block = block

    def fit(self, X=None, y=None):
        self.key_ = _key(self.key)
        if self.scheme not in ("etcs", "etc"):
            raise InvalidInputError(f"unknown scheme {self.scheme!r}")
        return self

    def transform(self, X):
        check_is_fitted(self, "key_")
        out = [encrypt(img, self.key_, self.scheme, self.block) for img in _as_list(X)]
        self.wmaps_ = [w for _, w in out]
        return [c for c, _ in out]

    def inverse_transform(self, X):
        check_is_fitted(self, "key_")
        return [decrypt(c, self.key_, self.scheme, self.block) for c in _as_list(X)]


class CiphertextOnlyAttack(BaseEstimator, TransformerMixin):
    """Learn the block layout from ciphers sharing a key; ``transform`` rearranges any such cipher."""

    def __init__(self, metric="mgc", scheme="etcs", block=8, top_k=None, vote=None,
                 unblend=None, cov="diag"):
        self.metric = metric
        self.scheme = scheme
        self.block = block
        self.top_k = top_k
        self.vote = vote
        self.unblend = unblend
        self.cov = cov

    def fit(self, X, y=None):
        res = attacks.coa(_as_list(X), self.metric, self.scheme, self.block, self.top_k,
                          self.vote, self.unblend, cov=self.cov)
        self.assembly_ = res.assembly
        self.tensor_ = res.tensor
        self.grid_ = res.grid
        self.images_ = res.images
        return self

    def transform(self, X):
        """Recovered planes (ETCS) or images (ETC) for each cipher, largest fragment first."""
        check_is_fitted(self, "assembly_")
        block = ETC_BLOCK if self.scheme == "etc" else self.block
        out = []
        for c in _as_list(X):
            if self.scheme == "etc" and self.unblend is not False:
                c = unblend_chroma(c, ETC_BLOCK)
            blocks, _ = split_blocks(np.asarray(c), block)
            out.append(render(self.assembly_, blocks, self.grid_))
        return out


class KnownPlaintextAttack(BaseEstimator, TransformerMixin):
    """Recover W from plain/cipher pairs; ``transform`` decrypts further ciphers with it.

    ``method="exact"`` uses the prefix tree (grayscale-like scheme only),
    ``"similarity"`` the nearest-block pairing.  ``quality`` sets the
    attacker's copy of the JPEG channel for the exact method.  ``complete``
    fills entries the tree cannot separate with pixel-identical stand-ins.
    """

    def __init__(self, method="exact", scheme="etcs", block=8, quality=None, complete=True):
        self.method = method
        self.scheme = scheme
        self.block = block
        self.quality = quality
        self.complete = complete

    def fit(self, X, y):
        plains, ciphers = _as_list(X), _as_list(y)
        if len(plains) != len(ciphers):
            raise InvalidInputError("plain and cipher lists differ in length")
        # the first pair decides; further pairs only fill entries left open
        self.w_ = None
        for p, c in zip(plains, ciphers):
            est = self._one(p, c)
            self.w_ = est if self.w_ is None else _fill(self.w_, est)
        return self

    def _one(self, plain, cipher):
        if self.method == "exact":
            if self.scheme != "etcs":
                raise InvalidInputError("the exact attack targets the grayscale-like scheme")
            codec = CodecProfile(self.quality) if self.quality else None
            return attacks.kpa_exact(plain, cipher, self.block, codec, complete=self.complete)
        if self.method == "similarity":
            return attacks.kpa_similarity(plain, cipher, self.scheme, self.block)
        raise InvalidInputError(f"unknown method {self.method!r}")

    def transform(self, X):
        check_is_fitted(self, "w_")
        return [decrypt_with_map(c, self.w_, self.scheme, self.block) for c in _as_list(X)]


def _fill(base, extra):
    open_ = (base.dest < 0) & (extra.dest >= 0) & ~np.isin(extra.dest, base.dest[base.dest >= 0])
    dest, k = base.dest.copy(), base.k.copy()
    dest[open_], k[open_] = extra.dest[open_], extra.k[open_]
    c = None
    if base.c is not None:
        c = base.c.copy()
        c[open_] = extra.c[open_]
    return attacks.WEstimate(dest, k, c, dict(base.meta), base.candidates, base.count)
