"""Synthetic token-space corpus for the toy recipe.

Documents are random filler over the non-reserved vocabulary with an
embedded fact — a marker token followed by the key tokens — repeated a few
times in the body, and a closing query [query_marker, key_marker, key].
Because the query re-uses the fact marker, predicting the key after the
query is an induction copy (continue what followed the previous marker),
which a two-layer model learns reliably; the toy needle eval measures
exactly that behavior at controlled lengths and depths.

Documents are packed whole into fixed-length training sequences — a
document is never split across sequences, so every query can be answered
from facts inside its own sequence — under one of three separator modes: a
single separator token between documents, begin/end wrapper tokens around
each document, or no boundary tokens at all.  Leftover space at the end of
a sequence is backfilled with plain filler tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from ..formats import Document
from ..seeding import derive_seed

# Reserved token ids at the bottom of the vocabulary.
RESERVED = {
    "sep": 0,
    "begin": 1,
    "end": 2,
    "key_marker": 3,
    "query_marker": 4,
}
NUM_RESERVED = len(RESERVED)

SEPARATOR_MODES = ("separator", "begin_end", "none")


@dataclass
class ToyCorpusSpec:
    vocab_size: int = 128
    num_documents: int = 20000
    min_doc_len: int = 16
    max_doc_len: int | None = None  # defaults to target_len
    key_len: int = 2
    fact_repeats: int = 3
    fact_every: int | None = None  # scale repeats with length: one per this many tokens
    target_len: int = 256
    separator_mode: str = "separator"
    seed: int = 0

    def __post_init__(self):
        # documents as long as the packing target keep needle-to-query
        # distances in training matched to what the retrieval eval probes
        if self.max_doc_len is None:
            self.max_doc_len = self.target_len
        if self.vocab_size <= NUM_RESERVED + 1:
            raise ConfigurationError(
                f"vocab_size {self.vocab_size} too small to reserve "
                f"{NUM_RESERVED} special tokens"
            )
        if self.separator_mode not in SEPARATOR_MODES:
            raise ConfigurationError(f"unknown separator_mode {self.separator_mode!r}")
        if self.fact_every is not None and self.fact_every < 2 * (self.key_len + 1):
            raise ConfigurationError(
                f"fact_every must be >= {2 * (self.key_len + 1)} for key_len={self.key_len}"
            )
        min_needed = self.fact_repeats * (self.key_len + 1) + self.key_len + 2
        if self.min_doc_len < min_needed + 1:
            raise ConfigurationError(
                f"min_doc_len must be > {min_needed} for key_len={self.key_len}, "
                f"fact_repeats={self.fact_repeats}"
            )


def content_range(vocab_size: int) -> tuple[int, int]:
    """Half-open id range of non-reserved content tokens."""
    return NUM_RESERVED, vocab_size


def make_document(spec: ToyCorpusSpec, doc_index: int) -> Document:
    """filler | [key_marker key] x repeats | filler | query_marker key_marker key"""
    rng = np.random.default_rng(derive_seed(spec.seed, "doc", doc_index))
    lo, hi = content_range(spec.vocab_size)
    # log-uniform lengths: plenty of short documents to bootstrap the
    # retrieval behavior, with long ones still covering large distances
    u = rng.uniform(np.log(spec.min_doc_len), np.log(spec.max_doc_len + 1))
    length = min(int(np.exp(u)), spec.max_doc_len)
    key = rng.integers(lo, hi, size=spec.key_len)
    fact = np.concatenate(([RESERVED["key_marker"]], key))
    query = np.concatenate(([RESERVED["query_marker"], RESERVED["key_marker"]], key))
    repeats = spec.fact_repeats
    if spec.fact_every is not None:
        # keep predictable-token density roughly constant across lengths
        repeats = max(repeats, length // spec.fact_every)
    body_len = length - repeats * len(fact) - len(query)
    body = rng.integers(lo, hi, size=body_len)
    cuts = sorted(int(c) for c in rng.integers(0, body_len + 1, size=repeats))
    parts, prev = [], 0
    for c in cuts:
        parts += [body[prev:c], fact]
        prev = c
    parts += [body[prev:], query]
    tokens = np.concatenate(parts)
    if spec.separator_mode == "begin_end":
        tokens = np.concatenate(([RESERVED["begin"]], tokens, [RESERVED["end"]]))
    return Document(id=f"toy{doc_index}", source="toy", tokens=tokens.astype(np.uint32))


def make_toy_corpus(spec: ToyCorpusSpec) -> np.ndarray:
    """Packed training sequences of shape (n, target_len)."""
    lo, hi = content_range(spec.vocab_size)
    fill_rng = np.random.default_rng(derive_seed(spec.seed, "packfill"))
    use_sep = spec.separator_mode == "separator"
    sep = np.array([RESERVED["sep"]], dtype=np.uint32)
    seqs: list[np.ndarray] = []
    parts: list[np.ndarray] = []
    fill = 0

    def flush():
        nonlocal parts, fill
        pad = spec.target_len - fill
        if pad:
            parts.append(fill_rng.integers(lo, hi, size=pad).astype(np.uint32))
        seqs.append(np.concatenate(parts))
        parts, fill = [], 0

    for i in range(spec.num_documents):
        tokens = make_document(spec, i).tokens
        if len(tokens) > spec.target_len:
            continue  # begin_end wrappers can push a max-length doc over
        need = len(tokens) + (1 if use_sep and fill else 0)
        if fill + need > spec.target_len:
            flush()
        if use_sep and fill:
            parts.append(sep)
            fill += 1
        parts.append(tokens)
        fill += len(tokens)
    if fill:
        flush()
    if not seqs:
        raise ConfigurationError("corpus too small to fill one packed sequence")
    return np.stack(seqs).astype(np.int64)
