import numpy as np
import pytest

from longctx.errors import ConfigurationError
from longctx.toylab.ablate import ExperimentSpec, Stage, standard_arms
from longctx.toylab.corpus import (
    RESERVED,
    ToyCorpusSpec,
    content_range,
    make_document,
    make_toy_corpus,
)
from longctx.toylab.model import ToyModelConfig, init_model
from longctx.toylab.niah import greedy_decode, make_case, mean_accuracy, toy_niah_eval


class TestCorpus:
    def spec(self, **kw):
        defaults = dict(num_documents=50, target_len=64, seed=3)
        defaults.update(kw)
        return ToyCorpusSpec(**defaults)

    def test_document_structure(self):
        spec = self.spec()
        doc = make_document(spec, 0)
        t = doc.tokens.astype(int)
        km, qm = RESERVED["key_marker"], RESERVED["query_marker"]
        # query tail: [query_marker, key_marker, key...]
        assert t[-(spec.key_len + 2)] == qm
        assert t[-(spec.key_len + 1)] == km
        key = t[-spec.key_len:]
        # the fact appears fact_repeats times in the body plus once in the query
        marker_positions = np.flatnonzero(t == km)
        assert len(marker_positions) == spec.fact_repeats + 1
        for pos in marker_positions:
            assert np.array_equal(t[pos + 1 : pos + 1 + spec.key_len], key)

    def test_document_lengths_span_configured_range(self):
        spec = self.spec(num_documents=300)
        lengths = [make_document(spec, i).length for i in range(300)]
        assert min(lengths) >= spec.min_doc_len
        assert max(lengths) <= spec.max_doc_len
        assert max(lengths) > spec.max_doc_len * 0.9  # long docs actually occur

    def test_max_doc_len_defaults_to_target(self):
        assert ToyCorpusSpec(target_len=128).max_doc_len == 128
        assert ToyCorpusSpec(target_len=128, max_doc_len=32).max_doc_len == 32

    def test_content_tokens_avoid_reserved(self):
        spec = self.spec()
        lo, hi = content_range(spec.vocab_size)
        for i in range(20):
            t = make_document(spec, i).tokens.astype(int)
            body = t[(t != RESERVED["key_marker"]) & (t != RESERVED["query_marker"])]
            assert body.min() >= lo or spec.separator_mode == "begin_end"

    def test_separator_mode_shapes(self):
        sep = make_toy_corpus(self.spec(separator_mode="separator"))
        none = make_toy_corpus(self.spec(separator_mode="none"))
        be = make_toy_corpus(self.spec(separator_mode="begin_end"))
        for c in (sep, none, be):
            assert c.shape[1] == 64
        assert np.any(sep == RESERVED["sep"])
        assert not np.any(none == RESERVED["sep"])
        assert np.any(be == RESERVED["begin"]) and np.any(be == RESERVED["end"])
        assert not np.any(be == RESERVED["sep"])

    def test_deterministic(self):
        a = make_toy_corpus(self.spec())
        b = make_toy_corpus(self.spec())
        assert np.array_equal(a, b)

    def test_doc_too_short_rejected(self):
        with pytest.raises(ConfigurationError):
            ToyCorpusSpec(min_doc_len=5, target_len=64)

    def test_unknown_separator_mode(self):
        with pytest.raises(ConfigurationError):
            ToyCorpusSpec(separator_mode="both")


class TestToyNiah:
    def test_case_structure(self):
        rng = np.random.default_rng(0)
        seq, key = make_case(rng, 128, 100, 0.5, 2)
        assert seq.shape == (100,)
        assert seq[-1] == RESERVED["key_marker"]
        assert seq[-2] == RESERVED["query_marker"]
        km_pos = np.flatnonzero(seq == RESERVED["key_marker"])[0]
        assert np.array_equal(seq[km_pos + 1 : km_pos + 3], key)

    def test_depth_controls_position(self):
        rng = np.random.default_rng(1)
        early, _ = make_case(rng, 128, 200, 0.0, 2)
        late, _ = make_case(rng, 128, 200, 1.0, 2)
        assert np.flatnonzero(early == RESERVED["key_marker"])[0] == 0
        assert np.flatnonzero(late == RESERVED["key_marker"])[0] > 180

    def test_untrained_model_scores_near_chance(self):
        cfg = ToyModelConfig(layers=1, d_model=16, heads=2, vocab_size=32,
                             context_length=64)
        model = init_model(cfg)
        result = toy_niah_eval(model, [32, 48], [0.5], seed=0, cases_per_cell=16)
        # exact 2-token match from an untrained model is essentially zero
        assert all(acc <= 0.1 for acc in result["by_length"].values())

    def test_greedy_decode_shape(self):
        cfg = ToyModelConfig(layers=1, d_model=16, heads=2, vocab_size=32,
                             context_length=32)
        model = init_model(cfg)
        seqs = np.zeros((3, 10), dtype=np.int64)
        out = greedy_decode(model, seqs, 4)
        assert out.shape == (3, 4)

    def test_mean_accuracy_range(self):
        result = {"by_length": {128: 1.0, 256: 0.5, 512: 0.25}}
        assert mean_accuracy(result, (128, 512)) == pytest.approx(0.375)
        with pytest.raises(ConfigurationError):
            mean_accuracy(result, (1000, 2000))

    def test_length_too_small(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigurationError):
            make_case(rng, 128, 3, 0.5, 2)


class TestAblationStructure:
    def small_spec(self):
        return ExperimentSpec(
            model=ToyModelConfig(layers=1, d_model=16, heads=2, vocab_size=32,
                                 context_length=32),
            base_steps=2, batch_size=2, corpus_documents=60,
            eval_lengths=(16, 32, 64), eval_cases_per_cell=2,
        )

    def test_standard_arms_budget_parity(self):
        arms = standard_arms(self.small_spec(), total_steps=6, target_context=128)
        budgets = {name: spec.stage_budget() for name, spec in arms.items()}
        assert len(set(budgets.values())) == 1
        assert set(arms) == {
            "one_step_yarn_sep", "one_step_yarn_begin_end", "one_step_ntk_sep",
            "one_step_pi_sep", "two_step_yarn_sep",
        }

    def test_two_step_structure(self):
        arms = standard_arms(self.small_spec(), total_steps=6, target_context=128)
        two = arms["two_step_yarn_sep"].stages
        assert [st.context_length for st in two] == [64, 128]
        assert two[0].s == 2.0 and two[1].s == 4.0

    def test_stage_consistency_validated(self):
        with pytest.raises(ConfigurationError):
            ExperimentSpec(
                model=ToyModelConfig(context_length=32),
                stages=[Stage(context_length=128, s=3.0)],
            )

    def test_nondecreasing_contexts(self):
        with pytest.raises(ConfigurationError):
            ExperimentSpec(
                model=ToyModelConfig(context_length=32),
                stages=[
                    Stage(context_length=128, s=4.0),
                    Stage(context_length=64, s=2.0),
                ],
            )

    def test_token_budget_arithmetic(self):
        st = Stage(context_length=128, s=4.0, steps=10)
        assert st.token_budget(batch_size=4) == 10 * 4 * 128
