"""Length-bucketed corpus resampling and separator packing.

The pipeline: histogram the corpus by document length, derive per-document
multiplicities that hit a token target while reweighting short vs. long
documents, replay each document its realized number of times in a stable
seeded shuffle, then concatenate with a separator token between documents
and chop into fixed-length training sequences. Documents straddle sequence
boundaries; no attention mask is produced (downstream training uses full
attention).

Everything is deterministic given the master seed: per-document randomness
is derived by hashing (seed, doc id), so any sharding of the work yields
the same result.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, IntegrityError, VerificationError
from .formats import Boundary, Document, PackedSequence
from .seeding import derive_seed

DEFAULT_BUCKET_BOUNDS = (4096, 8192)
DEFAULT_BUCKET_WEIGHTS = (0.5, 1.0, 3.0)  # downsample short, upsample long


def bucket_index(length: int, bounds) -> int:
    """Bucket for a document length; lower bound inclusive, upper exclusive."""
    return int(np.searchsorted(np.asarray(bounds), length, side="right"))


@dataclass
class Histogram:
    bounds: tuple
    doc_counts: list
    token_counts: list

    @property
    def total_docs(self) -> int:
        return sum(self.doc_counts)

    @property
    def total_tokens(self) -> int:
        return sum(self.token_counts)


def histogram(corpus, bounds=DEFAULT_BUCKET_BOUNDS) -> Histogram:
    """Count documents and tokens per length bucket."""
    bounds = tuple(bounds)
    if list(bounds) != sorted(set(bounds)):
        raise ConfigurationError(f"bucket bounds must be strictly ascending: {bounds}")
    n = len(bounds) + 1
    docs, toks = [0] * n, [0] * n
    for doc in corpus:
        b = bucket_index(doc.length, bounds)
        docs[b] += 1
        toks[b] += doc.length
    return Histogram(bounds=bounds, doc_counts=docs, token_counts=toks)


@dataclass
class SamplingPlan:
    """Realized resampling plan: a multiplicity for every document."""

    bounds: tuple
    weights: tuple
    target_total_tokens: int
    seed: int
    multiplicities: dict = field(default_factory=dict)  # doc id -> int copies
    expected_multiplicity: dict = field(default_factory=dict)  # doc id -> float
    expected_bucket_tokens: list = field(default_factory=list)
    realized_total_tokens: int = 0
    realized_bucket_tokens: list = field(default_factory=list)


def _bernoulli(seed: int, p: float) -> int:
    """One seeded Bernoulli draw in [0,1) keyed entirely by the seed."""
    if p <= 0:
        return 0
    if p >= 1:
        return 1
    u = derive_seed(seed, "bernoulli") / 2**64
    return int(u < p)


def plan(
    corpus,
    weights=DEFAULT_BUCKET_WEIGHTS,
    target_total_tokens: int | None = None,
    seed: int = 0,
    bounds=DEFAULT_BUCKET_BOUNDS,
    jobs: int = 1,
) -> SamplingPlan:
    """Assign every document a realized multiplicity.

    Expected multiplicity for a document in bucket b is weight_b scaled by
    a global normalizer chosen so the expected token total equals the
    target; fractional parts are realized by per-document seeded Bernoulli
    draws, so the realization is independent of iteration order and shard
    count.
    """
    weights = tuple(float(w) for w in weights)
    bounds = tuple(bounds)
    if len(weights) != len(bounds) + 1:
        raise ConfigurationError(
            f"need {len(bounds) + 1} weights for {len(bounds)} bounds, got {len(weights)}"
        )
    if any(w <= 0 for w in weights):
        raise ConfigurationError(f"bucket weights must be positive: {weights}")

    docs = list(corpus)
    if not docs:
        raise ConfigurationError("cannot plan over an empty corpus")
    hist = histogram(docs, bounds)
    weighted_tokens = sum(w * t for w, t in zip(weights, hist.token_counts))
    if weighted_tokens <= 0:
        raise ConfigurationError("corpus has no tokens in any weighted bucket")
    if target_total_tokens is None:
        target_total_tokens = hist.total_tokens
    if target_total_tokens <= 0:
        raise ConfigurationError(
            f"target_total_tokens must be positive (achievable range: any "
            f"positive target; corpus holds {hist.total_tokens} tokens)"
        )
    normalizer = target_total_tokens / weighted_tokens

    p = SamplingPlan(
        bounds=bounds,
        weights=weights,
        target_total_tokens=int(target_total_tokens),
        seed=int(seed),
        expected_bucket_tokens=[
            normalizer * w * t for w, t in zip(weights, hist.token_counts)
        ],
        realized_bucket_tokens=[0] * len(weights),
    )

    def realize(doc):
        b = bucket_index(doc.length, bounds)
        m = normalizer * weights[b]
        whole = math.floor(m)
        copies = whole + _bernoulli(derive_seed(seed, "plan", doc.id), m - whole)
        return doc.id, b, doc.length, m, copies

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(realize, docs))
    else:
        results = [realize(d) for d in docs]

    for doc_id, b, length, m, copies in results:
        if doc_id in p.multiplicities:
            raise IntegrityError(f"duplicate document id {doc_id!r}")
        p.multiplicities[doc_id] = copies
        p.expected_multiplicity[doc_id] = m
        p.realized_total_tokens += copies * length
        p.realized_bucket_tokens[b] += copies * length
    return p


def resample(corpus, sampling_plan: SamplingPlan):
    """Yield documents per the plan's multiplicities in a stable seeded
    shuffle (keyed by hashing the seed with doc id and copy index)."""
    by_id = {}
    for doc in corpus:
        by_id[doc.id] = doc
    missing = set(sampling_plan.multiplicities) - set(by_id)
    if missing:
        raise IntegrityError(f"plan references missing documents: {sorted(missing)[:5]}")
    keyed = []
    for doc_id, copies in sampling_plan.multiplicities.items():
        for k in range(copies):
            keyed.append((derive_seed(sampling_plan.seed, "order", doc_id, k), doc_id))
    keyed.sort()
    for _, doc_id in keyed:
        yield by_id[doc_id]


@dataclass
class PackStats:
    input_total_tokens: int = 0
    resampled_total_tokens: int = 0
    sequences_emitted: int = 0
    tokens_dropped_at_tail: int = 0
    separators_inserted: int = 0  # occurrences between documents
    separator_tokens: int = 0
    padding_tokens: int = 0
    documents_in_stream: int = 0
    per_bucket_realized_tokens: list = field(default_factory=list)
    digest: str = ""

    def accounting_holds(self, target_len: int) -> bool:
        produced = self.sequences_emitted * target_len + self.tokens_dropped_at_tail
        consumed = self.resampled_total_tokens + self.separator_tokens + self.padding_tokens
        return produced == consumed

    def as_dict(self) -> dict:
        return {
            "input_total_tokens": self.input_total_tokens,
            "resampled_total_tokens": self.resampled_total_tokens,
            "sequences_emitted": self.sequences_emitted,
            "tokens_dropped_at_tail": self.tokens_dropped_at_tail,
            "separators_inserted": self.separators_inserted,
            "separator_tokens": self.separator_tokens,
            "padding_tokens": self.padding_tokens,
            "documents_in_stream": self.documents_in_stream,
            "per_bucket_realized_tokens": self.per_bucket_realized_tokens,
            "digest": self.digest,
        }


def pack(
    stream,
    target_len: int,
    separator_ids=(0,),
    tail_policy: str = "drop",
    pad_id: int = 0,
    stats: PackStats | None = None,
):
    """Concatenate documents with separators and chop into fixed chunks.

    The conceptual stream is doc1 + sep + doc2 + sep + ...; chunks of
    exactly target_len are yielded in order, with per-chunk boundary
    metadata (continuations flagged when a document straddles a chunk
    edge). The final partial chunk is dropped or padded per tail_policy.
    """
    if target_len < 2:
        raise ConfigurationError(f"target_len must be >= 2, got {target_len}")
    if isinstance(separator_ids, (int, np.integer)):
        separator_ids = (int(separator_ids),)
    separator_ids = tuple(int(t) for t in separator_ids)
    if tail_policy not in ("drop", "pad"):
        raise ConfigurationError(f"unknown tail_policy {tail_policy!r}")
    if stats is None:
        stats = PackStats()

    sep = np.asarray(separator_ids, dtype=np.uint32)
    buf = np.empty(target_len, dtype=np.uint32)
    fill = 0
    boundaries: list[Boundary] = []
    sep_positions: list[int] = []
    hasher = hashlib.sha256()
    first_doc = True

    def flush():
        nonlocal fill, boundaries, sep_positions
        tokens = buf.copy()
        hasher.update(tokens.astype("<u4").tobytes())
        seq = PackedSequence(tokens=tokens, boundaries=boundaries, separator_positions=sep_positions)
        stats.sequences_emitted += 1
        fill = 0
        boundaries, sep_positions = [], []
        return seq

    def push(tokens, doc_id=None, sep_run=False):
        """Append tokens, flushing full chunks; track metadata as we go."""
        nonlocal fill
        pos = 0
        continuation = False
        while pos < len(tokens):
            if doc_id is not None and pos == 0 or doc_id is not None and fill == 0:
                boundaries.append(Boundary(fill, doc_id, continuation))
            take = min(target_len - fill, len(tokens) - pos)
            if sep_run:
                sep_positions.extend(range(fill, fill + take))
            buf[fill : fill + take] = tokens[pos : pos + take]
            fill += take
            pos += take
            if fill == target_len:
                if pos < len(tokens):
                    continuation = True
                yield flush()

    for doc in stream:
        stats.documents_in_stream += 1
        stats.resampled_total_tokens += doc.length
        if not first_doc and len(sep) > 0:
            stats.separators_inserted += 1
            stats.separator_tokens += len(sep)
            yield from push(sep, doc_id=None, sep_run=True)
        first_doc = False
        yield from push(doc.tokens, doc_id=doc.id)

    if fill > 0:
        if tail_policy == "drop":
            stats.tokens_dropped_at_tail += fill
        else:
            pad_n = target_len - fill
            buf[fill:] = pad_id
            stats.padding_tokens += pad_n
            fill = target_len
            yield flush()
    stats.digest = hasher.hexdigest()


def pack_to_list(stream, target_len, separator_ids=(0,), tail_policy="drop", pad_id=0):
    """Convenience wrapper returning (sequences, stats)."""
    stats = PackStats()
    seqs = list(pack(stream, target_len, separator_ids, tail_policy, pad_id, stats))
    return seqs, stats


def verify(sequences, stream, target_len: int, separator_ids=(0,),
           tail_policy: str = "drop", pad_id: int = 0) -> PackStats:
    """Re-derive the packed output from the stream and compare token for
    token. Raises VerificationError at the first offending offset."""
    if isinstance(separator_ids, (int, np.integer)):
        separator_ids = (int(separator_ids),)
    expected, stats = pack_to_list(stream, target_len, separator_ids, tail_policy, pad_id)
    got = list(sequences)
    if len(got) != len(expected):
        raise VerificationError(
            f"sequence count mismatch: got {len(got)}, expected {len(expected)}"
        )
    sep_set = set(int(t) for t in separator_ids)
    for i, (g, e) in enumerate(zip(got, expected)):
        if g.tokens.size != target_len:
            raise VerificationError(f"sequence {i} has length {g.tokens.size} != {target_len}")
        diff = np.nonzero(g.tokens != e.tokens)[0]
        if diff.size:
            off = int(diff[0])
            raise VerificationError(
                f"token mismatch in sequence {i} at offset {off}: "
                f"got {int(g.tokens[off])}, expected {int(e.tokens[off])}"
            )
        # every non-initial, non-continuation boundary must follow a separator
        for b in g.boundaries:
            if b.offset > 0 and not b.is_continuation:
                prev = b.offset - 1
                if prev not in set(g.separator_positions) and int(g.tokens[prev]) not in sep_set:
                    raise VerificationError(
                        f"sequence {i}: document {b.doc_id!r} at offset {b.offset} "
                        f"not preceded by a separator"
                    )
    return stats


def separator_collisions(corpus, separator_ids) -> int:
    """Count source documents that already contain a separator id (warned,
    not fatal: collisions make boundary recovery ambiguous downstream)."""
    if isinstance(separator_ids, (int, np.integer)):
        separator_ids = (int(separator_ids),)
    ids = np.asarray(sorted(set(int(t) for t in separator_ids)), dtype=np.uint32)
    hits = 0
    for doc in corpus:
        if np.isin(doc.tokens, ids).any():
            hits += 1
    return hits
