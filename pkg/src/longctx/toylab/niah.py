"""Token-space needle retrieval for the toy model.

Each case is a filler token sequence with [key_marker, key...] planted at
a depth fraction and a trailing [query_marker, key_marker] query; the
model greedily decodes key_len tokens and scores by exact match. Lengths
are exact because there is no tokenizer in the loop.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from ..seeding import derive_seed
from .corpus import RESERVED, content_range
from .model import ToyModel, forward


def make_case(rng: np.random.Generator, vocab_size: int, length: int,
              depth_fraction: float, key_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Returns (sequence ending in [query_marker, key_marker], key tokens)."""
    lo, hi = content_range(vocab_size)
    fact_len = key_len + 1
    filler_len = length - fact_len - 2  # minus fact and two query tokens
    if filler_len < 0:
        raise ConfigurationError(f"length {length} too small for key_len {key_len}")
    key = rng.integers(lo, hi, size=key_len)
    filler = rng.integers(lo, hi, size=filler_len)
    start = round(depth_fraction * filler_len)
    seq = np.concatenate([
        filler[:start], [RESERVED["key_marker"]], key, filler[start:],
        [RESERVED["query_marker"], RESERVED["key_marker"]],
    ])
    return seq.astype(np.int64), key.astype(np.int64)


def greedy_decode(model: ToyModel, seqs: np.ndarray, n_tokens: int) -> np.ndarray:
    """Greedy continuation of a batch of equal-length sequences."""
    out = np.asarray(seqs)
    for _ in range(n_tokens):
        logits = forward(model, out)
        nxt = np.argmax(logits[:, -1, :], axis=-1)
        out = np.concatenate([out, nxt[:, None]], axis=1)
    return out[:, seqs.shape[1]:]


def toy_niah_eval(model: ToyModel, lengths, depths, seed: int = 0,
                  cases_per_cell: int = 8, key_len: int = 2) -> dict:
    """Exact-match retrieval accuracy per (length, depth) cell.

    Lengths must fit the model's current context (the decoded key tokens
    included). Returns {"grid": {(L, d): acc}, "by_length": {L: acc}}.
    """
    lengths = [int(x) for x in lengths]
    for L in lengths:
        if L + key_len > model.context_length:
            raise ConfigurationError(
                f"length {L} plus {key_len} decoded tokens exceeds context "
                f"{model.context_length}"
            )
    grid = {}
    by_length = {}
    for L in lengths:
        cell_hits, cell_total = 0, 0
        for d in depths:
            rng = np.random.default_rng(derive_seed(seed, "toy_niah", L, f"{d:.6f}"))
            seqs, keys = [], []
            for _ in range(cases_per_cell):
                s, k = make_case(rng, model.config.vocab_size, L, d, key_len)
                seqs.append(s)
                keys.append(k)
            seqs = np.stack(seqs)
            keys = np.stack(keys)
            decoded = greedy_decode(model, seqs, key_len)
            hits = int(np.sum(np.all(decoded == keys, axis=1)))
            grid[(L, float(d))] = hits / cases_per_cell
            cell_hits += hits
            cell_total += cases_per_cell
        by_length[L] = cell_hits / cell_total
    return {"grid": grid, "by_length": by_length}


def mean_accuracy(result: dict, length_range: tuple[int, int]) -> float:
    """Mean per-length accuracy over lengths in (low, high]."""
    low, high = length_range
    vals = [a for L, a in result["by_length"].items() if low < L <= high]
    if not vals:
        raise ConfigurationError(f"no evaluated lengths in ({low}, {high}]")
    return float(np.mean(vals))
