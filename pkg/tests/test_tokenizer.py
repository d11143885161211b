"""Tokenizer tests: FSQ/VQ quantizer oracles, index codec round-trips,
EMA codebook maintenance, straight-through gradients, the small conv
autoencoder, training-loop behavior, and serialization."""

import itertools
import types

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robomotion import nn
from robomotion import tokenizer as T


def tiny_config(quantizer, **kw):
    defaults = dict(input_dim=6, width=8, res_blocks=1, downsample_factor=2,
                    lr=3e-3, batch_size=4, steps=12, window=8, seed=0)
    defaults.update(kw)
    return T.TokenizerConfig(quantizer=quantizer, **defaults)


def random_walk_rows(rng, n, dim=6):
    return np.cumsum(rng.normal(0.0, 0.1, (n, dim)), axis=0)


def tiny_stats(rows_list):
    from robomotion.motion_data import compute_norm_stats
    return compute_norm_stats(np.concatenate(rows_list))


# ---------------------------------------------------------------------------
# FSQ primitives


class TestFsqBound:
    def test_zero_maps_to_mid_level(self):
        np.testing.assert_allclose(T.fsq_bound(np.zeros(3), [3, 3, 3]), [1.0, 1.0, 1.0])

    def test_asymptotes_stay_inside_range(self):
        b = T.fsq_bound(np.array([20.0, -20.0]), [3, 3])
        np.testing.assert_allclose(b, [2.0, 0.0], atol=1e-8)
        assert 0.0 < b[0] < 2.0 and 0.0 < b[1] < 2.0

    def test_large_negative_input_value(self):
        # 7 * sigmoid(-10)
        b = T.fsq_bound(np.array([-10.0]), [8])
        np.testing.assert_allclose(b[0], 7.0 / (1.0 + np.exp(10.0)), rtol=1e-12)
        assert abs(b[0] - 0.000318) < 1e-6

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            T.fsq_bound(np.zeros(2), [3, 3, 3])


class TestFsqQuantize:
    def test_zero_latent_hits_center_code(self):
        codes, bounded = T.fsq_quantize(np.zeros(3), [3, 3, 3])
        assert codes.tolist() == [1, 1, 1]
        np.testing.assert_allclose(bounded, 1.0)

    def test_half_rounds_up(self):
        # L=2 at z=0 puts the bounded value exactly on the 0.5 boundary
        codes, bounded = T.fsq_quantize(np.zeros(1), [2])
        assert bounded[0] == 0.5
        assert codes[0] == 1

    def test_matches_per_channel_scan(self):
        levels = (8, 5, 5, 5)
        rng = np.random.default_rng(3)
        z = rng.normal(0.0, 3.0, (1000, 4))
        codes, bounded = T.fsq_quantize(z, levels)
        for ch, L in enumerate(levels):
            grid = np.arange(L)
            want = np.argmin(np.abs(bounded[:, ch, None] - grid), axis=1)
            np.testing.assert_array_equal(codes[:, ch], want)
        assert (codes >= 0).all() and (codes < np.array(levels)).all()

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_codes_always_on_lattice(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.normal(0.0, 5.0, (4, 3))
        codes, _ = T.fsq_quantize(z, [4, 4, 4])
        assert codes.dtype == np.int64
        assert (codes >= 0).all() and (codes <= 3).all()


class TestFsqIndexCodec:
    def test_extremes(self):
        assert T.fsq_index_encode([0, 0, 0], [3, 3, 3]) == 0
        assert T.fsq_index_encode([2, 2, 2], [3, 3, 3]) == 26

    def test_matches_enumeration_order(self):
        # big-endian: itertools.product order is the index order
        for pos, code in enumerate(itertools.product(range(3), repeat=3)):
            assert T.fsq_index_encode(list(code), [3, 3, 3]) == pos
        assert T.fsq_index_encode([1, 0, 2], [3, 3, 3]) == 11

    @pytest.mark.parametrize("size", [64, 256, 1024, 4096])
    def test_exhaustive_round_trip(self, size):
        levels = T.FSQ_LEVELS[size]
        idx = np.arange(size)
        codes = T.fsq_index_decode(idx, levels)
        np.testing.assert_array_equal(T.fsq_index_encode(codes, levels), idx)
        assert len(np.unique(T.fsq_index_encode(codes, levels))) == size

    def test_mixed_radix(self):
        levels = [2, 5, 3]
        seen = set()
        for code in itertools.product(range(2), range(5), range(3)):
            seen.add(int(T.fsq_index_encode(list(code), levels)))
        assert seen == set(range(30))

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            T.fsq_index_encode([3, 0, 0], [3, 3, 3])
        with pytest.raises(ValueError):
            T.fsq_index_encode([-1, 0, 0], [3, 3, 3])
        with pytest.raises(ValueError):
            T.fsq_index_decode([27], [3, 3, 3])
        with pytest.raises(ValueError):
            T.fsq_index_decode([-1], [3, 3, 3])

    def test_vectorized_shapes(self):
        codes = T.fsq_index_decode(np.array([0, 11, 26]), [3, 3, 3])
        assert codes.shape == (3, 3)
        assert codes[1].tolist() == [1, 0, 2]


class TestFsqLoss:
    def test_perfect_reconstruction_is_zero(self):
        x = nn.constant(np.ones((2, 3)))
        assert T.fsq_loss(x, nn.constant(np.ones((2, 3)))).data == 0.0

    def test_uniform_offset(self):
        x = nn.constant(np.zeros((4, 5)))
        recon = nn.constant(np.full((4, 5), 0.1))
        np.testing.assert_allclose(T.fsq_loss(x, recon).data, 0.01, rtol=1e-12)


# ---------------------------------------------------------------------------
# VQ primitives


class TestVqQuantize:
    def test_picks_nearest_code(self):
        cb = np.array([[0.0], [1.0]])
        zq, idx = T.vq_quantize(np.array([[0.9]]), cb)
        assert idx[0] == 1 and zq[0, 0] == 1.0

    def test_tie_breaks_to_lowest_index(self):
        cb = np.zeros((8, 2))
        cb[2] = [1.0, 0.0]
        cb[5] = [-1.0, 0.0]   # same distance from the origin as code 2
        cb[0] = [3.0, 3.0]
        cb[1] = [3.0, -3.0]
        _, idx = T.vq_quantize(np.zeros((1, 2)), cb[[0, 1, 2, 5]])
        assert idx[0] == 2

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(11)
        cb = rng.normal(size=(16, 4))
        z = rng.normal(size=(1000, 4))
        zq, idx = T.vq_quantize(z, cb)
        want = np.array([np.argmin(((row - cb) ** 2).sum(1)) for row in z])
        np.testing.assert_array_equal(idx, want)
        np.testing.assert_allclose(zq, cb[want])

    def test_batched_shape_follows_input(self):
        rng = np.random.default_rng(1)
        cb = rng.normal(size=(5, 3))
        z = rng.normal(size=(2, 7, 3))
        zq, idx = T.vq_quantize(z, cb)
        assert zq.shape == (2, 7, 3) and idx.shape == (2, 7)

    def test_bad_codebook_rejected(self):
        with pytest.raises(ValueError):
            T.vq_quantize(np.zeros((1, 2)), np.zeros((0, 2)))
        with pytest.raises(ValueError):
            T.vq_quantize(np.zeros((1, 2)), np.zeros((4, 3)))


class TestVqLoss:
    def test_perfect_everything_is_zero(self):
        x = nn.constant(np.ones((2, 2)))
        z = nn.constant(np.ones((2, 2)))
        assert T.vq_loss(x, x, z, z, 0.25).data == 0.0

    def test_commitment_closed_form(self):
        # recon exact, z - zq uniform 0.1, alpha 0.25 -> 0.25 * 0.01
        x = nn.constant(np.zeros((3, 4)))
        z = nn.constant(np.full((3, 4), 0.1))
        zq = nn.constant(np.zeros((3, 4)))
        np.testing.assert_allclose(T.vq_loss(x, x, z, zq, 0.25).data, 0.0025, rtol=1e-12)

    def test_commitment_gradient_analytic(self):
        rng = np.random.default_rng(5)
        zv = rng.normal(size=(4, 3))
        zqv = rng.normal(size=(4, 3))
        x = np.zeros((4, 3))
        tape = nn.Tape()
        with nn.record(tape):
            z = nn.parameter(zv)
            loss = T.vq_loss(nn.constant(x), nn.constant(x), z, nn.constant(zqv), 0.25)
        nn.backward(tape, loss)
        np.testing.assert_allclose(z.grad, 2 * 0.25 * (zv - zqv) / zv.size, atol=1e-12)

    def test_no_gradient_into_codes(self):
        # the commitment term must not push the quantized constant
        zqv = np.ones((2, 2))
        tape = nn.Tape()
        with nn.record(tape):
            z = nn.parameter(np.zeros((2, 2)))
            zq = nn.constant(zqv)
            loss = T.vq_loss(nn.constant(zqv), nn.constant(zqv), z, zq, 0.25)
        nn.backward(tape, loss)
        assert zq.grad is None or not np.any(zq.grad)


class TestEmaUpdate:
    def _state(self, S=4, C=2, seed=0):
        rng = np.random.default_rng(seed)
        return T.VqState.init(rng.normal(size=(S, C))), rng

    def test_decay_zero_jumps_to_batch_mean(self):
        state, rng = self._state()
        cfg = types.SimpleNamespace(ema_decay=0.0, reset_threshold=1000)
        z = np.array([[1.0, 1.0], [3.0, 3.0], [10.0, 0.0]])
        idx = np.array([0, 0, 2])
        T.vq_ema_update(state, z, idx, cfg, rng)
        np.testing.assert_allclose(state.codebook[0], [2.0, 2.0], rtol=1e-4)
        np.testing.assert_allclose(state.codebook[2], [10.0, 0.0], rtol=1e-4)

    def test_decay_one_is_a_no_op(self):
        state, rng = self._state()
        before = state.codebook.copy()
        cfg = types.SimpleNamespace(ema_decay=1.0, reset_threshold=1000)
        z = np.array([[5.0, 5.0]])
        T.vq_ema_update(state, z, np.array([1]), cfg, rng)
        np.testing.assert_allclose(state.codebook, before, atol=1e-12)

    def test_stale_code_reset_at_threshold(self):
        state, rng = self._state(S=3)
        cfg = types.SimpleNamespace(ema_decay=0.99, reset_threshold=4)
        z = np.array([[1.0, 2.0], [1.5, 2.5]])
        idx = np.array([0, 1])   # code 2 never assigned
        for batch in range(3):
            T.vq_ema_update(state, z, idx, cfg, rng)
            assert state.unused[2] == batch + 1
        before = state.codebook[2].copy()
        assert not any(np.allclose(before, row) for row in z)
        T.vq_ema_update(state, z, idx, cfg, rng)   # 4th miss triggers the reset
        assert state.unused[2] == 0
        assert any(np.allclose(state.codebook[2], row) for row in z)
        assert state.ema_size[2] == 1.0

    def test_assignment_clears_unused_counter(self):
        state, rng = self._state(S=2)
        cfg = types.SimpleNamespace(ema_decay=0.9, reset_threshold=16)
        T.vq_ema_update(state, np.array([[1.0, 1.0]]), np.array([0]), cfg, rng)
        assert state.unused.tolist() == [0, 1]
        T.vq_ema_update(state, np.array([[1.0, 1.0]]), np.array([1]), cfg, rng)
        assert state.unused.tolist() == [1, 0]


class TestUsage:
    def test_full_coverage(self):
        assert T.codebook_usage(np.arange(16), 16) == 1.0

    def test_constant_stream(self):
        assert T.codebook_usage(np.zeros(100, dtype=int), 8) == 1 / 8

    def test_repeats_do_not_inflate(self):
        assert T.codebook_usage([3, 3, 5, 5, 5], 16) == 2 / 16

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            T.codebook_usage([16], 16)
        with pytest.raises(ValueError):
            T.codebook_usage([-1], 16)


# ---------------------------------------------------------------------------
# configs


class TestConfigs:
    def test_level_ladder_table(self):
        assert T.FSQ_LEVELS == {64: (4, 4, 4), 256: (4, 4, 4, 4), 1024: (4, 4, 4, 4, 4),
                                4096: (8, 8, 8, 8), 65536: (16, 16, 16, 16)}
        for size, levels in T.FSQ_LEVELS.items():
            assert T.FsqConfig(levels).codebook_size == size

    def test_fsq_validation(self):
        with pytest.raises(ValueError):
            T.FsqConfig(())
        with pytest.raises(ValueError):
            T.FsqConfig((4, 1))
        with pytest.raises(ValueError):
            T.FsqConfig((2,) * 64)   # token ids would overflow int64

    def test_vq_validation(self):
        with pytest.raises(ValueError):
            T.VqConfig(1)
        with pytest.raises(ValueError):
            T.VqConfig(8, commitment=0.0)
        with pytest.raises(ValueError):
            T.VqConfig(8, ema_decay=1.0)
        with pytest.raises(ValueError):
            T.VqConfig(8, ema_decay=0.0)

    def test_latent_dim_follows_quantizer(self):
        assert tiny_config(T.FsqConfig((4, 4, 4))).latent_dim == 3
        assert tiny_config(T.VqConfig(64, code_dim=5)).latent_dim == 5
        assert tiny_config(T.FsqConfig((8, 8))).codebook_size == 64

    def test_factor_must_be_power_of_two(self):
        with pytest.raises(ValueError):
            tiny_config(T.FsqConfig((4, 4)), downsample_factor=3)
        with pytest.raises(ValueError):
            tiny_config(T.FsqConfig((4, 4)), downsample_factor=4, window=10)

    @pytest.mark.parametrize("quantizer", [T.FsqConfig((4, 4, 4)), T.VqConfig(32, code_dim=4)])
    def test_dict_round_trip(self, quantizer):
        cfg = tiny_config(quantizer, lr_final=1e-5, warmup_steps=3, input_noise=0.05)
        assert T.TokenizerConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------------------
# encoder / decoder plumbing


class TestEncoderDecoder:
    def test_stride_arithmetic(self):
        cfg = tiny_config(T.FsqConfig((4, 4)), downsample_factor=4, window=16)
        rng = np.random.default_rng(0)
        params = T.init_tokenizer_params(cfg, rng)
        x = nn.constant(rng.normal(size=(1, 64, 6)))
        z = T.encoder_forward(params, x, cfg)
        assert z.data.shape == (1, 16, 2)
        back = T.decoder_forward(params, z, cfg)
        assert back.data.shape == (1, 64, 6)

    def test_identical_inputs_identical_latents(self):
        cfg = tiny_config(T.FsqConfig((4, 4)))
        rng = np.random.default_rng(0)
        params = T.init_tokenizer_params(cfg, rng)
        x = rng.normal(size=(1, 8, 6))
        z1 = T.encoder_forward(params, nn.constant(x.copy()), cfg)
        z2 = T.encoder_forward(params, nn.constant(x.copy()), cfg)
        np.testing.assert_array_equal(z1.data, z2.data)

    def test_zero_head_gives_centered_latents(self):
        # a zero head output sits at the median of the (symmetric) running
        # stats, so the equalized latent lands on the bound's midpoint
        cfg = tiny_config(T.FsqConfig((4, 4)))
        rng = np.random.default_rng(0)
        params = T.init_tokenizer_params(cfg, rng)
        params["enc_head_w"].data[:] = 0.0
        params["enc_head_b"].data[:] = 0.0
        z = T.encoder_forward(params, nn.constant(rng.normal(size=(1, 8, 6))), cfg)
        np.testing.assert_allclose(z.data, 0.0, atol=1e-12)

    def test_zero_output_layer_gives_zero_rows(self):
        cfg = tiny_config(T.FsqConfig((4, 4)))
        rng = np.random.default_rng(0)
        params = T.init_tokenizer_params(cfg, rng)
        params["dec_out_w"].data[:] = 0.0
        params["dec_out_b"].data[:] = 0.0
        out = T.decoder_forward(params, nn.constant(rng.normal(size=(1, 4, 2))), cfg)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_pad_to_multiple_replicates_edge(self):
        rows = np.arange(14.0).reshape(7, 2)
        padded, orig = T.pad_to_multiple(rows, 4)
        assert orig == 7 and padded.shape == (8, 2)
        np.testing.assert_array_equal(padded[7], rows[6])
        same, orig2 = T.pad_to_multiple(rows[:4], 4)
        assert orig2 == 4 and same.shape == (4, 2)


# ---------------------------------------------------------------------------
# straight-through estimator


class TestStraightThrough:
    def _loss_through(self, z_value, w, use_quantizer, levels=(8, 8, 8)):
        tape = nn.Tape()
        with nn.record(tape):
            z = nn.parameter(z_value)
            bounded = nn.sigmoid(z) * (np.asarray(levels) - 1.0)
            if use_quantizer:
                codes = T.round_half_up(bounded.data)
                out = bounded + nn.constant(codes - bounded.data)
            else:
                out = bounded
            loss = nn.sum_(out * nn.constant(w))
        nn.backward(tape, loss)
        return loss.data, z.grad

    def test_fsq_backward_matches_identity_surrogate(self):
        # gradient w.r.t. the encoder side must ignore the rounding jump
        rng = np.random.default_rng(9)
        for _ in range(10):
            zv = rng.normal(0.0, 2.0, (5, 3))
            w = rng.normal(size=(5, 3))
            _, g_ste = self._loss_through(zv, w, use_quantizer=True)
            _, g_id = self._loss_through(zv, w, use_quantizer=False)
            np.testing.assert_allclose(g_ste, g_id, atol=1e-12)

    def test_fsq_forward_is_the_lattice_point(self):
        rng = np.random.default_rng(2)
        zv = rng.normal(0.0, 2.0, (4, 3))
        w = np.ones((4, 3))
        loss, _ = self._loss_through(zv, w, use_quantizer=True)
        codes, _ = T.fsq_quantize(zv, [8, 8, 8])
        np.testing.assert_allclose(loss, codes.sum(), atol=1e-12)

    def test_fsq_forward_invariant_inside_cell(self):
        # nudges that do not cross a rounding boundary cannot change codes
        z = np.array([[0.3, -0.2, 1.1]])
        codes, bounded = T.fsq_quantize(z, [8, 8, 8])
        dist = np.abs(bounded - (codes + 0.49))   # margin to the next boundary
        eps = 1e-3
        z2 = z + eps * np.where(bounded < codes, 1.0, -1.0)
        codes2, _ = T.fsq_quantize(z2, [8, 8, 8])
        np.testing.assert_array_equal(codes, codes2)

    def test_vq_backward_is_identity(self):
        rng = np.random.default_rng(4)
        cb = rng.normal(size=(6, 3))
        zv = rng.normal(size=(5, 3))
        w = rng.normal(size=(5, 3))
        tape = nn.Tape()
        with nn.record(tape):
            z = nn.parameter(zv)
            zq, _ = T.vq_quantize(z.data, cb)
            ste = z + nn.constant(zq - z.data)
            loss = nn.sum_(ste * nn.constant(w))
        nn.backward(tape, loss)
        np.testing.assert_allclose(z.grad, w, atol=1e-12)
        np.testing.assert_allclose(loss.data, (zq * w).sum(), atol=1e-12)


# ---------------------------------------------------------------------------
# training loop


class TestTraining:
    def _corpus(self, seed=0, n_clips=3, T_=40):
        rng = np.random.default_rng(seed)
        return [random_walk_rows(rng, T_) for _ in range(n_clips)]

    def test_same_seed_same_curve(self):
        corpus = self._corpus()
        stats = tiny_stats(corpus)
        cfg = tiny_config(T.FsqConfig((4, 4)))
        _, c1 = T.train_tokenizer(cfg, corpus, stats)
        _, c2 = T.train_tokenizer(cfg, corpus, stats)
        assert c1.loss == c2.loss and len(c1.loss) == cfg.steps

    def test_vq_path_trains_and_tracks_usage(self):
        corpus = self._corpus()
        stats = tiny_stats(corpus)
        cfg = tiny_config(T.VqConfig(8, code_dim=2), steps=16)
        model, curve = T.train_tokenizer(cfg, corpus, stats)
        assert model.codebook.shape == (8, 2)
        assert curve.usage and all(0.0 < u <= 1.0 for u in curve.usage)
        assert curve.usage_steps[-1] == cfg.steps

    def test_divergence_aborts_with_step(self):
        corpus = self._corpus(T_=8)
        corpus[0][3, 2] = np.inf
        stats = tiny_stats(self._corpus(T_=8))
        cfg = tiny_config(T.FsqConfig((4, 4)))
        with pytest.raises(T.DivergenceError, match="step"):
            T.train_tokenizer(cfg, corpus, stats)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            T.train_tokenizer(tiny_config(T.FsqConfig((4, 4))), [], None)

    def test_loss_decreases_on_tiny_overfit(self):
        corpus = self._corpus(n_clips=1, T_=8)
        stats = tiny_stats(corpus)
        cfg = tiny_config(T.FsqConfig((8, 8)), steps=150, width=12, lr=5e-3)
        _, curve = T.train_tokenizer(cfg, corpus, stats)
        assert np.mean(curve.loss[-10:]) < 0.5 * np.mean(curve.loss[:10])


# ---------------------------------------------------------------------------
# round trips and files


class TestRoundTrips:
    def _trained(self, quantizer, tmp_path=None, **kw):
        rng = np.random.default_rng(7)
        corpus = [random_walk_rows(rng, 30) for _ in range(2)]
        stats = tiny_stats(corpus)
        model, _ = T.train_tokenizer(tiny_config(quantizer, **kw), corpus, stats)
        return model, corpus

    def test_tokenize_shapes_and_trim(self):
        model, corpus = self._trained(T.FsqConfig((4, 4)))
        rows = corpus[0][:29]   # odd length forces padding
        tokens, orig = T.tokenize_rows(model, rows)
        assert orig == 29 and tokens.shape == (15,)
        back = T.detokenize_tokens(model, tokens, orig)
        assert back.shape == rows.shape

    def test_reconstruct_is_deterministic(self):
        model, corpus = self._trained(T.FsqConfig((4, 4)))
        r1 = T.reconstruct_rows(model, corpus[0])
        r2 = T.reconstruct_rows(model, corpus[0])
        np.testing.assert_array_equal(r1, r2)

    def test_vq_detokenize_uses_codebook_rows(self):
        model, corpus = self._trained(T.VqConfig(8, code_dim=2))
        tokens, orig = T.tokenize_rows(model, corpus[0])
        assert (tokens >= 0).all() and (tokens < 8).all()
        with pytest.raises(ValueError):
            T.detokenize_tokens(model, np.array([8]), 2)

    def test_save_load_round_trip(self, tmp_path):
        model, corpus = self._trained(T.VqConfig(8, code_dim=2))
        path = tmp_path / "tok.npz"
        T.save_tokenizer(path, model)
        loaded = T.load_tokenizer(path)
        assert loaded.config == model.config
        np.testing.assert_array_equal(loaded.codebook, model.codebook)
        np.testing.assert_array_equal(
            T.reconstruct_rows(loaded, corpus[0]), T.reconstruct_rows(model, corpus[0]))

    def test_load_rejects_other_checkpoints(self, tmp_path):
        path = tmp_path / "other.npz"
        nn.save_checkpoint(path, {"w": np.zeros(3)}, {"kind": "something_else"})
        with pytest.raises(nn.CheckpointError):
            T.load_tokenizer(path)


class TestTokenFile:
    def _model(self):
        rng = np.random.default_rng(7)
        corpus = [random_walk_rows(rng, 20)]
        return T.train_tokenizer(tiny_config(T.FsqConfig((4, 4)), steps=4),
                                 corpus, tiny_stats(corpus))[0]

    def test_round_trip(self, tmp_path):
        model = self._model()
        path = tmp_path / "tokens.jsonl"
        entries = [{"id": "a", "text": "walks", "fps": 30.0, "orig_len": 9,
                    "tokens": [0, 5, 15]},
                   {"id": "b", "text": "waves", "fps": 30.0, "orig_len": 4,
                    "tokens": [3, 3]}]
        T.write_token_file(path, model, entries, model_hash="abc")
        header, back = T.read_token_file(path)
        assert header["codebook_size"] == 16 and header["levels"] == [4, 4]
        assert header["downsample_factor"] == 2 and header["model_hash"] == "abc"
        assert [e["id"] for e in back] == ["a", "b"]
        assert back[0]["tokens"] == [0, 5, 15]

    def test_out_of_range_token_names_line(self, tmp_path):
        model = self._model()
        path = tmp_path / "tokens.jsonl"
        T.write_token_file(path, model, [{"id": "a", "text": "", "fps": 30.0,
                                          "orig_len": 2, "tokens": [16]}])
        with pytest.raises(ValueError, match="line 2"):
            T.read_token_file(path)

    def test_empty_and_bad_version_rejected(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        with pytest.raises(ValueError, match="empty"):
            T.read_token_file(empty)
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"format_version": 9}\n')
        with pytest.raises(ValueError, match="format_version"):
            T.read_token_file(bad)
