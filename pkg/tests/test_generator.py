"""Generator tests: vocabulary plumbing, the prefix attention mask (including
an exhaustive future-token invariance sweep), NLL oracles, memorization-level
training, seeded sampling, and checkpointing."""

import dataclasses

import numpy as np
import pytest

from robomotion import nn
from robomotion import generator as G
from robomotion.kinematics import default_model
from robomotion.motion_data import clip_to_rows, compute_norm_stats, synth_corpus
from robomotion.tokenizer import FsqConfig, TokenizerConfig, train_tokenizer


def tiny_config(**kw):
    defaults = dict(layers=2, heads=2, embed_dim=32, ff_dim=64, max_seq_len=64,
                    lr=6e-3, batch_size=4, steps=700, seed=0, max_len=24)
    defaults.update(kw)
    return G.GeneratorConfig(**defaults)


@pytest.fixture(scope="module")
def corpus4():
    vocab = G.Vocabulary(motion_vocab=16, words=(
        "arm", "left", "raises", "right", "robot", "squats", "the",
        "turns", "waves"))
    pairs = [
        ("the robot waves", (3, 7, 11, 7, 3, 0)),
        ("the robot squats", (1, 2, 4, 8, 4, 2, 1)),
        ("the robot turns left", (5, 5, 9, 13, 15)),
        ("the robot raises the right arm", (0, 6, 10, 14, 10, 6)),
    ]
    seqs = [G.TokenSequence(tuple(G.text_tokenize(t, vocab)), ids) for t, ids in pairs]
    return vocab, seqs


@pytest.fixture(scope="module")
def memorized(corpus4):
    vocab, seqs = corpus4
    model, curve = G.train_generator(tiny_config(), seqs, vocab)
    return model, curve


class TestVocabulary:
    def test_control_ids_follow_motion_ids(self):
        v = G.Vocabulary(motion_vocab=64, words=("a", "b"))
        assert (v.bos, v.eos, v.pad) == (64, 65, 66)
        assert v.motion_ids == 67
        assert v.text_ids == 3

    def test_build_is_sorted_and_deduplicated(self):
        v = G.build_vocabulary(["the robot waves", "Waves, the ROBOT!"], 8)
        assert v.words == ("robot", "the", "waves")

    def test_unknown_words_map_to_unk(self):
        v = G.build_vocabulary(["robot waves"], 8)
        assert G.text_tokenize("robot jumps", v) == [v.word_to_id["robot"], G.UNK_ID]

    def test_digit_runs_are_tokens(self):
        v = G.build_vocabulary(["turn 90 degrees"], 8)
        assert "90" in v.words

    def test_duplicate_words_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            G.Vocabulary(motion_vocab=8, words=("a", "a"))

    def test_nonpositive_codebook_rejected(self):
        with pytest.raises(ValueError):
            G.Vocabulary(motion_vocab=0, words=())


class TestPrefixMask:
    def test_structure(self):
        m = G.build_prefix_mask(2, 3)
        want = np.array([
            [1, 1, 0, 0, 0],
            [1, 1, 0, 0, 0],
            [1, 1, 1, 0, 0],
            [1, 1, 1, 1, 0],
            [1, 1, 1, 1, 1],
        ], dtype=bool)
        np.testing.assert_array_equal(m, want)

    def test_text_only_is_fully_bidirectional(self):
        assert G.build_prefix_mask(4, 0).all()

    def test_motion_only_is_causal(self):
        m = G.build_prefix_mask(0, 4)
        np.testing.assert_array_equal(m, np.tril(np.ones((4, 4), dtype=bool)))

    def test_negative_lengths_rejected(self):
        with pytest.raises(ValueError):
            G.build_prefix_mask(-1, 3)


class TestPacking:
    def test_layout(self, corpus4):
        vocab, seqs = corpus4
        text, motion_in, targets, n_text, n_motion = G._pack_batch(vocab, seqs[:2])
        assert motion_in[0, 0] == vocab.bos
        ids = seqs[0].motion_ids
        assert tuple(motion_in[0, 1:1 + len(ids)]) == ids
        assert targets[0, len(ids)] == vocab.eos
        assert (targets[0, len(ids) + 1:] == vocab.pad).all()
        assert n_motion[0] == len(ids) + 1
        assert n_text[0] == len(seqs[0].text_ids)


class TestForward:
    def test_uniform_logits_at_init(self, corpus4):
        # zero output projection -> exactly uniform next-token distribution
        vocab, seqs = corpus4
        cfg = tiny_config()
        params = G.init_generator_params(cfg, vocab, np.random.default_rng(0))
        text, motion_in, targets, n_text, n_motion = G._pack_batch(vocab, seqs)
        logits = G.forward_batch(params, cfg, text, motion_in, n_text, n_motion)
        assert np.array_equal(logits.data, np.zeros_like(logits.data))
        loss = G.nll_loss(logits, targets, vocab.pad)
        assert abs(loss.data - np.log(vocab.motion_ids)) < 1e-12

    def test_sequence_budget_enforced(self, corpus4):
        vocab, _ = corpus4
        cfg = tiny_config(max_seq_len=8)
        params = G.init_generator_params(cfg, vocab, np.random.default_rng(0))
        with pytest.raises(ValueError, match="exceeds"):
            G.forward_sequence(params, cfg, [1, 2, 3, 4], [vocab.bos, 1, 2, 3, 4])


def randomized_params(vocab, cfg, seed):
    rng = np.random.default_rng(seed)
    params = G.init_generator_params(cfg, vocab, rng)
    params["out_w"] = nn.parameter(rng.normal(0.0, 0.5, params["out_w"].data.shape))
    return params


class TestMaskProperties:
    def test_future_motion_tokens_never_leak(self, corpus4):
        # exhaustive over prefix/suffix lengths: logits at step t are
        # bit-identical after rewriting every later motion input
        vocab, _ = corpus4
        cfg = tiny_config()
        params = randomized_params(vocab, cfg, 1)
        rng = np.random.default_rng(2)
        for n_text in range(9):
            for n_motion in range(1, 9):
                text = rng.integers(0, vocab.text_ids, n_text)
                motion = rng.integers(0, vocab.motion_vocab, n_motion)
                base = G.forward_sequence(params, cfg, text, motion).data
                for t in range(n_motion - 1):
                    fut = motion.copy()
                    fut[t + 1:] = (fut[t + 1:] + 1 + rng.integers(
                        0, vocab.motion_vocab - 1, n_motion - t - 1)) % vocab.motion_vocab
                    other = G.forward_sequence(params, cfg, text, fut).data
                    assert np.array_equal(base[:t + 1], other[:t + 1])

    def test_text_perturbation_moves_every_logit(self, corpus4):
        vocab, _ = corpus4
        cfg = tiny_config()
        params = randomized_params(vocab, cfg, 3)
        rng = np.random.default_rng(4)
        hits = 0
        for _ in range(100):
            n_text = int(rng.integers(1, 9))
            n_motion = int(rng.integers(1, 9))
            text = rng.integers(0, vocab.text_ids, n_text)
            motion = rng.integers(0, vocab.motion_vocab, n_motion)
            base = G.forward_sequence(params, cfg, text, motion).data
            j = int(rng.integers(0, n_text))
            text2 = text.copy()
            text2[j] = (text2[j] + 1) % vocab.text_ids
            other = G.forward_sequence(params, cfg, text2, motion).data
            hits += bool(np.abs(base - other).max() > 0.0)
        assert hits == 100


class TestTraining:
    def test_memorizes_four_pairs(self, corpus4, memorized):
        vocab, seqs = corpus4
        model, curve = memorized
        assert curve.loss[-1] < curve.loss[0]
        for s in seqs:
            assert tuple(G.greedy_decode(model, list(s.text_ids))) == s.motion_ids
            p = np.exp(G.sequence_log_prob(model, s.text_ids, s.motion_ids))
            assert p >= 0.99

    def test_same_seed_reproduces_training(self, corpus4):
        vocab, seqs = corpus4
        cfg = tiny_config(steps=30)
        m1, c1 = G.train_generator(cfg, seqs, vocab)
        m2, c2 = G.train_generator(cfg, seqs, vocab)
        assert c1.loss == c2.loss
        for k in m1.params:
            np.testing.assert_array_equal(m1.params[k].data, m2.params[k].data)

    def test_empty_corpus_rejected(self, corpus4):
        vocab, _ = corpus4
        with pytest.raises(ValueError, match="empty"):
            G.train_generator(tiny_config(), [], vocab)

    def test_out_of_range_motion_ids_rejected(self, corpus4):
        vocab, _ = corpus4
        bad = [G.TokenSequence((1,), (vocab.motion_vocab,))]
        with pytest.raises(ValueError, match="codebook"):
            G.train_generator(tiny_config(), bad, vocab)


class TestSampling:
    def test_seeded_sampling_is_deterministic(self, memorized):
        model, _ = memorized
        a = G.sample(model, "the robot waves", seed=11)
        b = G.sample(model, "the robot waves", seed=11)
        assert a == b

    def test_zero_temperature_equals_top1(self, memorized):
        model, _ = memorized
        a = G.sample(model, "the robot squats", temperature=0.0, seed=5)
        b = G.sample(model, "the robot squats", temperature=1.0, top_k=1, seed=6)
        assert a == b

    def test_token_ids_stay_in_codebook(self, memorized):
        model, _ = memorized
        ids = G.sample(model, "the robot turns left", temperature=1.3, top_k=8, seed=9)
        assert all(0 <= i < model.vocab.motion_vocab for i in ids)
        assert len(ids) <= model.config.max_len

    def test_empty_text_still_generates(self, memorized):
        model, _ = memorized
        ids = G.sample(model, "", seed=0)
        assert isinstance(ids, list)

    def test_parameter_validation(self, memorized):
        model, _ = memorized
        with pytest.raises(ValueError):
            G.sample(model, "x", temperature=-0.1)
        with pytest.raises(ValueError):
            G.sample(model, "x", top_k=0)


class TestPersistence:
    def test_round_trip(self, memorized, tmp_path):
        model, _ = memorized
        path = tmp_path / "gen.ckpt"
        G.save_generator(path, model)
        back = G.load_generator(path)
        assert back.vocab == model.vocab
        assert back.config == model.config
        assert G.greedy_decode(back, "the robot waves") == \
            G.greedy_decode(model, "the robot waves")

    def test_wrong_kind_rejected(self, tmp_path):
        path = tmp_path / "other.ckpt"
        nn.save_checkpoint(path, {"w": np.zeros(2)}, {"kind": "tokenizer"})
        with pytest.raises(nn.CheckpointError, match="generator"):
            G.load_generator(path)


@pytest.fixture(scope="module")
def stage1():
    model = default_model()
    clips = synth_corpus(model, n_clips=2, seed=5, duration_range=(1.5, 2.0))
    rows = [clip_to_rows(c, model) for c in clips]
    stats = compute_norm_stats(np.concatenate(rows, axis=0))
    cfg = TokenizerConfig(quantizer=FsqConfig((4, 4, 4)), input_dim=137,
                          width=16, res_blocks=1, downsample_factor=2,
                          lr=3e-3, batch_size=4, steps=60, window=16, seed=0)
    tok, _ = train_tokenizer(cfg, rows, stats)
    return model, tok


class TestDetokenize:
    def test_round_trip_to_clip(self, stage1):
        model, tok = stage1
        clip, gap = G.detokenize_to_clip([5, 9, 13, 2], tok, model, text="test")
        assert clip.n_frames == 4 * tok.config.downsample_factor
        assert clip.dofs.shape == (clip.n_frames, model.dof_count)
        assert np.isfinite(gap) and gap >= 0.0

    def test_empty_and_out_of_range_ids(self, stage1):
        model, tok = stage1
        with pytest.raises(ValueError, match="no motion tokens"):
            G.detokenize_to_clip([], tok, model)
        with pytest.raises(ValueError, match="codebook"):
            G.detokenize_to_clip([64], tok, model)

    def test_model_hash_mismatch(self, stage1):
        model, tok = stage1
        stale = dataclasses.replace(tok, model_hash="0000")
        with pytest.raises(ValueError, match="different robot model"):
            G.detokenize_to_clip([1], stale, model)
