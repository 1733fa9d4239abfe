import numpy as np
import pytest

from longctx import packer
from longctx.errors import ConfigurationError, IntegrityError, VerificationError
from longctx.formats import Document


def doc(i, length, source="test", rng=None, fill=None):
    if rng is not None:
        tokens = rng.integers(2, 1000, size=length, dtype=np.uint32)
    else:
        tokens = np.full(length, fill if fill is not None else i + 2, dtype=np.uint32)
    return Document(id=f"d{i}", source=source, tokens=tokens)


class TestHistogram:
    def test_basic_classification(self):
        docs = [doc(0, 3000), doc(1, 5000), doc(2, 9000)]
        h = packer.histogram(docs, bounds=(4096, 8192))
        assert h.doc_counts == [1, 1, 1]
        assert h.token_counts == [3000, 5000, 9000]

    def test_empty_corpus(self):
        h = packer.histogram([], bounds=(4096, 8192))
        assert h.doc_counts == [0, 0, 0]

    def test_lower_bound_inclusive(self):
        h = packer.histogram([doc(0, 4096)], bounds=(4096, 8192))
        assert h.doc_counts == [0, 1, 0]

    def test_sums_match(self):
        rng = np.random.default_rng(0)
        docs = [doc(i, int(rng.integers(100, 12000))) for i in range(50)]
        h = packer.histogram(docs)
        assert h.total_docs == 50
        assert h.total_tokens == sum(d.length for d in docs)


class TestPlan:
    def test_identity_plan(self):
        docs = [doc(i, 100) for i in range(10)]
        p = packer.plan(docs, weights=(1, 1, 1), target_total_tokens=1000, seed=5)
        assert all(m == 1 for m in p.multiplicities.values())
        assert p.realized_total_tokens == 1000

    def test_weights_order_expected_multiplicity(self):
        a = Document("a", "", np.ones(99, dtype=np.uint32))
        b = Document("b", "", np.ones(100, dtype=np.uint32))
        c = Document("c", "", np.ones(101, dtype=np.uint32))
        p = packer.plan([a, b, c], weights=(0.5, 1.0, 2.0),
                        target_total_tokens=None, seed=0, bounds=(100, 101))
        assert p.expected_multiplicity["a"] < p.expected_multiplicity["b"] < p.expected_multiplicity["c"]

    def test_expectation_arithmetic(self):
        # one doc per bucket; weighted mass is 0.5*99 + 100 + 2*101 = 351.5,
        # so a target of 703 gives normalizer 2 exactly
        a = Document("a", "", np.ones(99, dtype=np.uint32))
        b = Document("b", "", np.ones(100, dtype=np.uint32))
        c = Document("c", "", np.ones(101, dtype=np.uint32))
        p = packer.plan([a, b, c], weights=(0.5, 1.0, 2.0),
                        target_total_tokens=703, seed=0, bounds=(100, 101))
        assert p.expected_bucket_tokens == pytest.approx([99.0, 200.0, 404.0])

    def test_seed_changes_realization_not_expectation(self):
        rng = np.random.default_rng(1)
        docs = [doc(i, int(rng.integers(50, 200)), rng=rng) for i in range(200)]
        p1 = packer.plan(docs, weights=(0.5, 1, 3), target_total_tokens=20000, seed=1,
                         bounds=(100, 150))
        p2 = packer.plan(docs, weights=(0.5, 1, 3), target_total_tokens=20000, seed=2,
                         bounds=(100, 150))
        assert p1.expected_multiplicity == p2.expected_multiplicity
        assert p1.multiplicities != p2.multiplicities

    def test_realization_statistics(self):
        # over many seeds the realized totals concentrate on the target
        docs = [Document(f"d{i}", "", np.ones(100, dtype=np.uint32)) for i in range(100)]
        target = 15_000
        realized = [
            packer.plan(docs, weights=(1,), target_total_tokens=target, seed=s,
                        bounds=()).realized_total_tokens
            for s in range(50)
        ]
        # expected multiplicity 1.5 -> Bernoulli(0.5) per doc, sigma = 100*sqrt(25)
        sigma = 100 * np.sqrt(100 * 0.25)
        assert abs(np.mean(realized) - target) < 3 * sigma / np.sqrt(50)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ConfigurationError):
            packer.plan([], target_total_tokens=100)

    def test_bad_weight_count(self):
        with pytest.raises(ConfigurationError):
            packer.plan([doc(0, 10)], weights=(1, 2), bounds=(5, 10))

    def test_jobs_equivalence(self):
        rng = np.random.default_rng(2)
        docs = [doc(i, int(rng.integers(10, 100)), rng=rng) for i in range(100)]
        p1 = packer.plan(docs, target_total_tokens=10000, seed=3, jobs=1)
        p4 = packer.plan(docs, target_total_tokens=10000, seed=3, jobs=4)
        assert p1.multiplicities == p4.multiplicities


class TestResample:
    def test_multiplicity_respected(self):
        docs = [doc(0, 10), doc(1, 10)]
        p = packer.plan(docs, weights=(1,), target_total_tokens=40, bounds=(), seed=0)
        stream = list(packer.resample(docs, p))
        ids = [d.id for d in stream]
        assert ids.count("d0") == p.multiplicities["d0"]

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        docs = [doc(i, int(rng.integers(5, 50)), rng=rng) for i in range(30)]
        p = packer.plan(docs, target_total_tokens=2000, seed=9, bounds=(20, 40),
                        weights=(0.5, 1, 2))
        s1 = [d.id for d in packer.resample(docs, p)]
        s2 = [d.id for d in packer.resample(docs, p)]
        assert s1 == s2

    def test_shuffle_is_permutation(self):
        docs = [doc(i, 10) for i in range(20)]
        p = packer.plan(docs, weights=(1,), target_total_tokens=200, bounds=(), seed=0)
        stream = sorted(d.id for d in packer.resample(docs, p))
        expect = sorted(
            did for did, m in p.multiplicities.items() for _ in range(m)
        )
        assert stream == expect

    def test_missing_document(self):
        docs = [doc(0, 10)]
        p = packer.plan(docs, weights=(1,), target_total_tokens=10, bounds=(), seed=0)
        with pytest.raises(IntegrityError):
            list(packer.resample([], p))


class TestPack:
    def test_hand_computed_stream(self):
        # 5 + 1 + 7 + 1 + 9 = 23 -> one chunk of 12, tail 11 dropped
        docs = [doc(0, 5), doc(1, 7), doc(2, 9)]
        seqs, stats = packer.pack_to_list(docs, 12, separator_ids=(1,))
        assert len(seqs) == 1
        assert stats.tokens_dropped_at_tail == 11
        assert stats.separators_inserted == 2
        assert stats.accounting_holds(12)
        # first chunk: doc0 (5), sep, doc1 (6 of 7)
        assert seqs[0].separator_positions == [5]
        ids = [(b.doc_id, b.is_continuation) for b in seqs[0].boundaries]
        assert ids == [("d0", False), ("d1", False)]

    def test_exact_fit_no_separators(self):
        docs = [doc(0, 12)]
        seqs, stats = packer.pack_to_list(docs, 12)
        assert len(seqs) == 1
        assert stats.separators_inserted == 0
        assert stats.tokens_dropped_at_tail == 0

    def test_two_docs_exact(self):
        docs = [doc(0, 3), doc(1, 3)]
        seqs, stats = packer.pack_to_list(docs, 7, separator_ids=(9,))
        assert len(seqs) == 1
        assert stats.separators_inserted == 1
        assert list(seqs[0].tokens) == [2, 2, 2, 9, 3, 3, 3]

    def test_straddling_continuation_flag(self):
        docs = [doc(0, 10)]
        seqs, stats = packer.pack_to_list(docs, 4)
        assert len(seqs) == 2  # 10 -> 4+4, tail 2 dropped
        assert seqs[0].boundaries[0].is_continuation is False
        assert seqs[1].boundaries[0].is_continuation is True

    def test_pad_policy(self):
        docs = [doc(0, 5)]
        seqs, stats = packer.pack_to_list(docs, 8, tail_policy="pad", pad_id=0)
        assert len(seqs) == 1
        assert list(seqs[0].tokens[5:]) == [0, 0, 0]
        assert stats.padding_tokens == 3
        assert stats.accounting_holds(8)

    def test_target_len_too_small(self):
        with pytest.raises(ConfigurationError):
            packer.pack_to_list([doc(0, 5)], 1)

    def test_all_sequences_exact_length(self):
        rng = np.random.default_rng(5)
        docs = [doc(i, int(rng.integers(1, 300)), rng=rng) for i in range(100)]
        seqs, _ = packer.pack_to_list(docs, 128)
        assert all(s.tokens.size == 128 for s in seqs)

    def test_conservation(self):
        rng = np.random.default_rng(6)
        docs = [doc(i, int(rng.integers(1, 50)), rng=rng) for i in range(40)]
        seqs, stats = packer.pack_to_list(docs, 32, separator_ids=(0,))
        flat = np.concatenate([s.tokens for s in seqs])
        stream = []
        for i, d in enumerate(docs):
            if i:
                stream.append(np.array([0], dtype=np.uint32))
            stream.append(d.tokens)
        stream = np.concatenate(stream)
        assert np.array_equal(flat, stream[: flat.size])
        assert stats.tokens_dropped_at_tail == stream.size - flat.size

    def test_separator_count_identity(self):
        docs = [doc(i, 10) for i in range(7)]
        _, stats = packer.pack_to_list(docs, 11)
        assert stats.separators_inserted == 6


class TestVerify:
    def make(self, seed=0, n=30):
        rng = np.random.default_rng(seed)
        return [doc(i, int(rng.integers(1, 60)), rng=rng) for i in range(n)]

    def test_untampered_passes(self):
        docs = self.make()
        seqs, _ = packer.pack_to_list(docs, 64)
        stats = packer.verify(seqs, docs, 64)
        assert stats.accounting_holds(64)

    def test_flipped_token_fails_with_offset(self):
        docs = self.make()
        seqs, _ = packer.pack_to_list(docs, 64)
        seqs[1].tokens[17] ^= 1
        with pytest.raises(VerificationError, match="sequence 1 at offset 17"):
            packer.verify(seqs, docs, 64)

    def test_determinism_digest(self):
        docs = self.make(seed=2)
        _, s1 = packer.pack_to_list(docs, 64)
        _, s2 = packer.pack_to_list(docs, 64)
        assert s1.digest == s2.digest
        assert len(s1.digest) == 64  # 256-bit hex

    def test_separator_collision_detection(self):
        clean = [doc(0, 10, fill=5)]
        dirty = [Document("x", "", np.array([5, 0, 5], dtype=np.uint32))]
        assert packer.separator_collisions(clean, (0,)) == 0
        assert packer.separator_collisions(dirty, (0,)) == 1
