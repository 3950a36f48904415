"""Data access layer - weight container, corpora and report files."""

from san_attn.data_access.corpus import CorpusResult, read_corpus
from san_attn.data_access.weights import load_weights, save_weights

__all__ = [
    "CorpusResult",
    "read_corpus",
    "load_weights",
    "save_weights",
]
