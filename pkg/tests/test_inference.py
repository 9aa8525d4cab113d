"""Decoding tests: gate specs, constraints, beam and sampling behavior."""

import math

import numpy as np
import pytest

from hydrasum import inference as inf
from hydrasum.errors import ConfigError, InvalidArgumentError, UnsupportedConfigError
from hydrasum.model import ModelConfig, init_model
from hydrasum.tokenizer import BOS_ID, EOS_ID, PAD_ID, UNK_ID, build_vocab

# content ids in a 6-token vocabulary: reserved 0..3, then 4 and 5
A, B = 4, 5


def uniform_step(weights):
    """A step function ignoring the prefix, always returning `weights`."""
    row = np.asarray(weights, dtype=np.float64)

    def step(prefixes):
        return np.repeat(row[None], prefixes.shape[0], axis=0)

    return step


def make_vocab():
    return build_vocab(["the cat sat on the mat", "a dog ran home fast",
                        "birds fly over the lake", "rain fell all night"])


def make_model(vocab, k=2, seed=3):
    cfg = ModelConfig(vocab_size=vocab.size, d_model=16, n_heads=2,
                      encoder_layers=1, decoder_layers=2, shared_decoder_layers=1,
                      num_decoders=k, d_ff=32, max_positions=24, seed=seed)
    return init_model(cfg, vocab=vocab)


def short_config(**kw):
    base = dict(num_beams=2, max_length=8, min_length=1, no_repeat_ngram_size=0)
    base.update(kw)
    return inf.DecodingConfig(**base)


class TestGateSpec:
    def test_parse_learned(self):
        spec = inf.GateSpec.parse("learned", 2)
        assert spec.kind == "learned"
        assert spec.fixed_weights(2) is None
        assert spec.label() == "learned"

    def test_parse_single(self):
        spec = inf.GateSpec.parse("single:1", 2)
        assert spec.index == 1
        assert np.array_equal(spec.fixed_weights(2), [0.0, 1.0])
        assert spec.label() == "single:1"

    def test_parse_manual(self):
        spec = inf.GateSpec.parse("manual:0.25,0.75", 2)
        assert spec.weights == (0.25, 0.75)
        assert np.allclose(spec.fixed_weights(2), [0.25, 0.75])
        assert spec.label() == "manual:0.25,0.75"

    @pytest.mark.parametrize("text", [
        "single:5", "single:-1", "manual:0.5", "manual:0.7,0.7",
        "manual:-0.1,1.1", "manual:a,b", "banana", "", "single:x",
    ])
    def test_bad_specs_rejected(self, text):
        with pytest.raises(InvalidArgumentError):
            inf.GateSpec.parse(text, 2)

    def test_manual_weights_must_match_decoder_count(self):
        with pytest.raises(InvalidArgumentError):
            inf.GateSpec.parse("manual:0.5,0.25,0.25", 2)
        inf.GateSpec.parse("manual:0.5,0.25,0.25", 3)


class TestDecodingConfig:
    def test_defaults_valid(self):
        inf.DecodingConfig().validate()

    @pytest.mark.parametrize("kw", [
        dict(mode="walk"), dict(num_beams=0), dict(max_length=0),
        dict(min_length=-1), dict(min_length=32, max_length=32),
        dict(length_penalty=-0.5), dict(no_repeat_ngram_size=-1),
        dict(top_k=-1), dict(top_p=0.0), dict(top_p=1.5),
    ])
    def test_invalid_rejected(self, kw):
        with pytest.raises(ConfigError):
            inf.DecodingConfig(**kw).validate()


class TestApplyConstraints:
    def setup_method(self):
        self.probs = np.full(6, 1 / 6)

    def test_reserved_ids_always_banned(self):
        out, fb = inf.apply_constraints(self.probs, [A, A], short_config())
        assert out[PAD_ID] == out[BOS_ID] == out[UNK_ID] == 0.0
        assert not fb
        assert out.sum() == pytest.approx(1.0)

    def test_min_length_bans_end_token(self):
        cfg = short_config(min_length=2)
        out, _ = inf.apply_constraints(self.probs, [A], cfg)
        assert out[EOS_ID] == 0.0
        out, _ = inf.apply_constraints(self.probs, [A, B], cfg)
        assert out[EOS_ID] > 0.0

    def test_no_repeat_bigram(self):
        cfg = short_config(no_repeat_ngram_size=2)
        # bigrams seen: (A,B), (B,A); prefix A bans the continuation B
        out, _ = inf.apply_constraints(self.probs, [A, B, A], cfg)
        assert out[B] == 0.0
        assert out[A] > 0.0

    def test_no_repeat_unigram(self):
        cfg = short_config(no_repeat_ngram_size=1)
        out, _ = inf.apply_constraints(self.probs, [A], cfg)
        assert out[A] == 0.0
        assert out[B] > 0.0

    def test_zero_disables_no_repeat(self):
        out, _ = inf.apply_constraints(self.probs, [A, A, A], short_config())
        assert out[A] > 0.0

    def test_fallback_when_everything_banned(self):
        probs = np.zeros(6)
        probs[EOS_ID] = 1.0
        cfg = short_config(min_length=2)
        out, fb = inf.apply_constraints(probs, [], cfg)
        assert fb
        assert out[EOS_ID] == pytest.approx(1.0)

    def test_input_not_mutated(self):
        before = self.probs.copy()
        inf.apply_constraints(self.probs, [A], short_config(min_length=3))
        assert np.array_equal(self.probs, before)


class TestTopKTopP:
    def setup_method(self):
        self.probs = np.array([0.4, 0.3, 0.2, 0.1])

    def test_top_k_keeps_largest(self):
        out = inf.filter_top_k_top_p(self.probs, top_k=2, top_p=1.0)
        assert np.allclose(out, [4 / 7, 3 / 7, 0, 0])

    def test_top_p_smallest_prefix_reaching_mass(self):
        out = inf.filter_top_k_top_p(self.probs, top_k=0, top_p=0.5)
        assert np.allclose(out, [4 / 7, 3 / 7, 0, 0])

    def test_top_p_exact_boundary_keeps_single_token(self):
        out = inf.filter_top_k_top_p(self.probs, top_k=0, top_p=0.4)
        assert np.allclose(out, [1, 0, 0, 0])

    def test_top_p_one_keeps_everything(self):
        out = inf.filter_top_k_top_p(self.probs, top_k=0, top_p=1.0)
        assert np.allclose(out, self.probs)

    def test_top_k_zero_disables_count_cut(self):
        out = inf.filter_top_k_top_p(self.probs, top_k=0, top_p=1.0)
        assert (out > 0).all()

    def test_order_is_k_then_p(self):
        # top_k=3 keeps 0.9 of mass, then top_p=0.5 cuts within that set
        out = inf.filter_top_k_top_p(self.probs, top_k=3, top_p=0.5)
        assert np.allclose(out, [4 / 7, 3 / 7, 0, 0])

    def test_stable_tie_handling(self):
        out = inf.filter_top_k_top_p(np.full(4, 0.25), top_k=2, top_p=1.0)
        assert np.allclose(out, [0.5, 0.5, 0, 0])


class TestBeamSearch:
    def test_prefers_high_probability_path(self):
        def step(prefixes):
            rows = np.zeros((prefixes.shape[0], 6))
            for i, row in enumerate(prefixes):
                n_generated = row.shape[0] - 1
                if n_generated >= 2:
                    rows[i, EOS_ID], rows[i, A], rows[i, B] = 0.9, 0.06, 0.04
                else:
                    rows[i, EOS_ID], rows[i, A], rows[i, B] = 0.05, 0.9, 0.05
            return rows

        hyp = inf.beam_search(step, short_config())[0]
        assert hyp.tokens == [A, A, EOS_ID]
        assert hyp.logprob_sum < 0
        assert not hyp.fallback

    def test_ties_break_toward_smaller_token_id(self):
        step = uniform_step([0, 0, 0.2, 0, 0.4, 0.4])
        hyp = inf.beam_search(step, short_config(num_beams=1, max_length=3))[0]
        assert hyp.tokens[:2] == [A, A]

    def test_single_beam_equals_greedy_argmax(self):
        rng = np.random.default_rng(0)
        raw = rng.random(6)
        step = uniform_step(raw / raw.sum())
        cfg = short_config(num_beams=1, max_length=5)
        hyp = inf.beam_search(step, cfg)[0]

        tokens = []
        while len(tokens) < cfg.max_length:
            probs, _ = inf.apply_constraints(step(np.array([[BOS_ID] + tokens]))[0],
                                             tokens, cfg)
            tok = int(np.argmax(probs)) if len(tokens) < cfg.max_length - 1 else EOS_ID
            tokens.append(tok)
            if tok == EOS_ID:
                break
        assert hyp.tokens == tokens

    def test_no_repeat_forces_variety(self):
        step = uniform_step([0, 0, 0.001, 0, 0.989, 0.01])
        cfg = short_config(min_length=0, no_repeat_ngram_size=1, max_length=6)
        hyp = inf.beam_search(step, cfg)[0]
        assert hyp.tokens == [A, B, EOS_ID]

    def test_forced_finish_at_max_length(self):
        step = uniform_step([0, 0, 0.0001, 0, 0.9999, 0])
        cfg = short_config(num_beams=1, max_length=4)
        hyp = inf.beam_search(step, cfg)[0]
        assert len(hyp.tokens) == 4
        assert hyp.tokens == [A, A, A, EOS_ID]

    def test_length_penalty_favors_longer_finishes(self):
        # with alpha large, dividing a negative score by a bigger factor
        # makes longer hypotheses win even at lower total probability
        step = uniform_step([0, 0, 0.5, 0, 0.5, 0])
        short = inf.beam_search(step, short_config(min_length=0, num_beams=4,
                                                   max_length=6, length_penalty=0.0))[0]
        long = inf.beam_search(step, short_config(min_length=0, num_beams=4,
                                                  max_length=6, length_penalty=5.0))[0]
        assert len(long.tokens) > len(short.tokens)

    def test_fallback_flag_propagates(self):
        probs = np.zeros(6)
        probs[EOS_ID] = 1.0
        cfg = short_config(min_length=2, max_length=4, num_beams=1)
        hyp = inf.beam_search(uniform_step(probs), cfg)[0]
        assert hyp.fallback

    def test_deterministic(self):
        step = uniform_step([0, 0, 0.1, 0, 0.5, 0.4])
        cfg = short_config(num_beams=3, max_length=6)
        a = inf.beam_search(step, cfg)[0]
        b = inf.beam_search(step, cfg)[0]
        assert a.tokens == b.tokens
        assert a.logprob_sum == b.logprob_sum

    def test_filter_in_beam_runs(self):
        step = uniform_step([0, 0, 0.1, 0, 0.5, 0.4])
        cfg = short_config(num_beams=2, max_length=5, filter_in_beam=True,
                           top_k=1, top_p=1.0)
        hyp = inf.beam_search(step, cfg)[0]
        assert hyp.tokens[0] == A

    def test_returns_ranked_list(self):
        step = uniform_step([0, 0, 0.2, 0, 0.5, 0.3])
        cfg = short_config(num_beams=3, max_length=4)
        hyps = inf.beam_search(step, cfg, early_stop=False)
        assert len(hyps) >= 2
        scores = [h.score(cfg.length_penalty) for h in hyps]
        assert scores == sorted(scores, reverse=True)
        assert all(h.tokens[-1] == EOS_ID for h in hyps)

    def test_top_hypothesis_matches_exhaustive_enumeration(self):
        """Wide beams on a fixed per-step distribution find the global optimum."""
        probs = np.array([0, 0, 0.25, 0, 0.45, 0.3])
        step = uniform_step(probs)
        cfg = short_config(num_beams=16, max_length=4, min_length=1,
                           no_repeat_ngram_size=0)

        def renorm(banned):
            p = probs.copy()
            p[[0, 1, 3]] = 0.0
            for b in banned:
                p[b] = 0.0
            return p / p.sum()

        best_score, best_tokens = -np.inf, None
        seqs = [[]]
        for depth in range(cfg.max_length):
            forced_eos = depth == cfg.max_length - 1
            nxt = []
            for seq in seqs:
                banned = [EOS_ID] if len(seq) < cfg.min_length else []
                dist = renorm(banned)
                choices = [EOS_ID] if forced_eos else [t for t in (A, B, EOS_ID)
                                                       if dist[t] > 0]
                for tok in choices:
                    cand = seq + [tok]
                    logp = sum(np.log(renorm([EOS_ID] if len(cand[:i]) < cfg.min_length
                                             else [])[t])
                               for i, t in enumerate(cand))
                    if tok == EOS_ID:
                        score = logp / inf.length_penalty_factor(len(cand),
                                                                 cfg.length_penalty)
                        if score > best_score:
                            best_score, best_tokens = score, cand
                    else:
                        nxt.append(cand)
            seqs = nxt

        top = inf.beam_search(step, cfg)[0]
        assert top.tokens == best_tokens
        assert top.score(cfg.length_penalty) == pytest.approx(best_score)


class TestSampleSearch:
    def test_deterministic_per_seed(self):
        step = uniform_step([0, 0, 0.2, 0, 0.4, 0.4])
        cfg = short_config(mode="sample", max_length=6, top_k=0, top_p=1.0, seed=11)
        a = inf.sample_search(step, cfg)
        b = inf.sample_search(step, cfg)
        assert a.tokens == b.tokens

    def test_seed_changes_draws(self):
        step = uniform_step([0, 0, 0.2, 0, 0.4, 0.4])
        outcomes = set()
        for seed in range(8):
            cfg = short_config(mode="sample", max_length=6, top_k=0, top_p=1.0, seed=seed)
            outcomes.add(tuple(inf.sample_search(step, cfg).tokens))
        assert len(outcomes) > 1

    def test_ends_with_eos_and_respects_min_length(self):
        step = uniform_step([0, 0, 0.8, 0, 0.1, 0.1])
        cfg = short_config(mode="sample", min_length=3, max_length=6, seed=0,
                           top_k=0, top_p=1.0)
        hyp = inf.sample_search(step, cfg)
        assert hyp.tokens[-1] == EOS_ID
        assert len(hyp.tokens) >= 4  # three content tokens, then EOS

    def test_tiny_top_p_reduces_to_greedy(self):
        step = uniform_step([0, 0, 0.1, 0, 0.5, 0.4])
        sample_cfg = short_config(mode="sample", max_length=5, top_k=0, top_p=1e-9)
        beam_cfg = short_config(num_beams=1, max_length=5)
        assert inf.sample_search(step, sample_cfg).tokens == \
            inf.beam_search(step, beam_cfg)[0].tokens


class TestGenerate:
    def setup_method(self):
        self.vocab = make_vocab()
        self.model = make_model(self.vocab)
        self.article = "the cat sat on the mat"
        self.config = short_config(max_length=6)

    def test_result_fields(self):
        res = inf.generate(self.model, self.article, "single:0", self.config)
        assert isinstance(res.text, str)
        assert res.token_ids[-1] == EOS_ID
        assert math.isfinite(res.score)
        assert res.gate_label == "single:0"

    def test_single_equals_one_hot_manual_exactly(self):
        a = inf.generate(self.model, self.article, "single:0", self.config)
        b = inf.generate(self.model, self.article, "manual:1,0", self.config)
        assert a.token_ids == b.token_ids
        assert a.score == b.score

    def test_learned_gate_runs_on_unguided_model(self):
        self.model.train_mode = "unguided"
        res = inf.generate(self.model, self.article, "learned", self.config)
        assert res.token_ids[-1] == EOS_ID

    def test_learned_gate_refused_after_guided_training(self):
        self.model.train_mode = "guided"
        with pytest.raises(UnsupportedConfigError):
            inf.generate(self.model, self.article, "learned", self.config)
        res = inf.generate(self.model, self.article, "learned", self.config,
                           allow_untrained_gate=True)
        assert res.token_ids

    def test_sweep_matches_single_decoder_at_endpoints(self):
        pairs = inf.generate_diverse(self.model, self.article, self.config)
        assert [g for g, _ in pairs] == list(inf.SWEEP_GATES)
        left = inf.generate(self.model, self.article, "single:0", self.config)
        right = inf.generate(self.model, self.article, "single:1", self.config)
        assert pairs[0][1].token_ids == left.token_ids
        assert pairs[0][1].score == left.score
        assert pairs[-1][1].token_ids == right.token_ids
        assert pairs[-1][1].score == right.score

    def test_sweep_needs_two_decoders(self):
        model3 = make_model(self.vocab, k=3)
        with pytest.raises(UnsupportedConfigError):
            inf.generate_diverse(model3, self.article, self.config)

    def test_sweep_rejects_out_of_range_values(self):
        with pytest.raises(InvalidArgumentError):
            inf.generate_diverse(self.model, self.article, self.config,
                                 gate_values=[0.0, 1.5])

    def test_sample_mode_deterministic(self):
        cfg = short_config(mode="sample", max_length=6, seed=4)
        a = inf.generate(self.model, self.article, "single:0", cfg)
        b = inf.generate(self.model, self.article, "single:0", cfg)
        assert a.token_ids == b.token_ids

    def test_max_length_must_fit_positions(self):
        with pytest.raises(InvalidArgumentError):
            inf.generate(self.model, self.article, "single:0",
                         inf.DecodingConfig(max_length=64))

    def test_missing_vocab_rejected(self):
        bare = init_model(ModelConfig(vocab_size=self.vocab.size, d_model=16,
                                      n_heads=2, encoder_layers=1, decoder_layers=2,
                                      shared_decoder_layers=1, d_ff=32,
                                      max_positions=24))
        with pytest.raises(InvalidArgumentError):
            inf.generate(bare, self.article, "single:0", self.config)

    def test_text_decodes_generated_ids(self):
        res = inf.generate(self.model, self.article, "single:0", self.config)
        from hydrasum.tokenizer import decode
        assert res.text == decode(res.token_ids, self.vocab)


class TestCrossModel:
    def setup_method(self):
        self.vocab = make_vocab()
        self.model_a = make_model(self.vocab, seed=3)
        self.model_b = make_model(self.vocab, seed=4)
        self.article = "a dog ran home fast"
        self.config = short_config(max_length=6)

    def test_endpoints_match_single_models(self):
        left = inf.cross_model_generate(self.model_a, self.model_b, self.article,
                                        index_a=1, index_b=0, g=0.0, config=self.config)
        solo = inf.generate(self.model_a, self.article, "single:1", self.config)
        assert left.token_ids == solo.token_ids
        assert left.score == solo.score
        right = inf.cross_model_generate(self.model_a, self.model_b, self.article,
                                         index_a=1, index_b=0, g=1.0, config=self.config)
        solo_b = inf.generate(self.model_b, self.article, "single:0", self.config)
        assert right.token_ids == solo_b.token_ids
        assert right.score == solo_b.score

    def test_blend_runs(self):
        res = inf.cross_model_generate(self.model_a, self.model_b, self.article,
                                       g=0.5, config=self.config)
        assert res.token_ids[-1] == EOS_ID
        assert res.gate_label == "cross:0,0:0.5"

    def test_vocab_mismatch_rejected(self):
        other_vocab = build_vocab(["completely different words here"])
        other = make_model(other_vocab)
        with pytest.raises(InvalidArgumentError):
            inf.cross_model_generate(self.model_a, other, self.article,
                                     config=self.config)

    def test_bad_indices_and_weights_rejected(self):
        with pytest.raises(InvalidArgumentError):
            inf.cross_model_generate(self.model_a, self.model_b, self.article,
                                     index_a=5, config=self.config)
        with pytest.raises(InvalidArgumentError):
            inf.cross_model_generate(self.model_a, self.model_b, self.article,
                                     g=1.5, config=self.config)
