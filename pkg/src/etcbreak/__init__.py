"""Attacks on block-scrambling encryption-then-compression images."""

from .attacks import (
    CoaResult, WEstimate, coa, cpa_construct, cpa_refine, kpa_candidates, kpa_exact,
    kpa_probability, kpa_similarity,
)
from .cipher import Key, WMap, decrypt, decrypt_with_map, encrypt
from .codec import CODEC_ID, CodecProfile, OsnProfile, jpeg_roundtrip, osn_channel, unblend_chroma
from .compat import accuracy_curve, metric_accuracy, score_all
from .estimators import BlockCipher, CiphertextOnlyAttack, KnownPlaintextAttack
from .evaluation import (
    decision_fingerprint, largest_component, load_corpus, neighbor_comparison, w_accuracy,
)
from .imgcore import InvalidInputError
from .solver import Assembly, render, solve

__version__ = "0.1.0"
