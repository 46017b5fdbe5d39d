import numpy as np
import pytest

from breathauth.autodiff import Tensor, backward, softmax, softmax_cross_entropy
from breathauth.errors import ConfigError, DataError
from breathauth.models import (
    CnnLstmConfig,
    CnnLstmModel,
    TcnConfig,
    TcnModel,
    embed,
    load_model,
    make_model,
    save_model,
)

TINY_CNN = CnnLstmConfig(n_filters=4, kernel=5, stride=1, hidden=8)
TINY_TCN = TcnConfig(stage1_filters=4, stage2_filters=8, kernel=3, dropout=0.1)


def random_inputs(rng, n=2, t=30):
    return (
        rng.normal(size=(n, t, 20)).astype(np.float32),
        rng.normal(size=(n, t, 6)).astype(np.float32),
    )


class TestConfigs:
    def test_tcn_filters_must_grow(self):
        with pytest.raises(ConfigError):
            TcnConfig(stage1_filters=8, stage2_filters=8)

    def test_receptive_field_formula(self):
        # One stage with kernel 5 and dilations 1+2+4+8 spans 61 frames,
        # i.e. 1.22 s at 50 frames/s.
        assert TcnConfig(stage1_filters=4, stage2_filters=8, kernel=5).receptive_field() == 61
        assert 61 / 50.0 == pytest.approx(1.22)

    def test_bad_mode_rejected(self):
        with pytest.raises(ConfigError):
            CnnLstmModel(TINY_CNN, 3, mode="video")


class TestCnnLstm:
    def test_fused_sequence_shape(self):
        # Both branches at T=225, kernel 9: conv gives 217 frames, fusion
        # doubles the channels.
        cfg = CnnLstmConfig(n_filters=64, kernel=9, stride=1, hidden=16)
        model = CnnLstmModel(cfg, 20, "multimodal", np.random.default_rng(0))
        audio = Tensor(np.random.default_rng(1).normal(size=(1, 225, 20)).astype(np.float32))
        motion = Tensor(np.random.default_rng(2).normal(size=(1, 225, 6)).astype(np.float32))
        fused = model._branch(audio, "audio_conv")
        assert fused.data.shape == (1, 217, 64)
        logits, emb = model.forward_tensors(audio, motion)
        assert logits.data.shape == (1, 20)
        assert emb.data.shape == (1, 16)

    def test_monomodal_audio_ignores_motion(self):
        rng = np.random.default_rng(3)
        model = CnnLstmModel(TINY_CNN, 3, "audio", np.random.default_rng(0))
        audio, motion = random_inputs(rng)
        a = model.forward(audio, motion)
        b = model.forward(audio, rng.normal(size=motion.shape).astype(np.float32))
        assert np.array_equal(a.logits, b.logits)

    def test_monomodal_param_count_below_multimodal(self):
        multi = CnnLstmModel(TINY_CNN, 5, "multimodal", np.random.default_rng(0))
        audio = CnnLstmModel(TINY_CNN, 5, "audio", np.random.default_rng(0))
        motion = CnnLstmModel(TINY_CNN, 5, "motion", np.random.default_rng(0))
        assert audio.param_count() < multi.param_count()
        assert motion.param_count() < multi.param_count()

    def test_param_count_matches_config_arithmetic(self):
        c = TINY_CNN
        n = 5
        model = CnnLstmModel(c, n, "multimodal", np.random.default_rng(0))
        expected = (
            c.n_filters * 20 * c.kernel + c.n_filters          # audio conv
            + c.n_filters * 6 * c.kernel + c.n_filters         # motion conv
            + (2 * c.n_filters + c.hidden) * 4 * c.hidden + 4 * c.hidden  # lstm
            + c.hidden * n + n                                 # head
        )
        assert model.param_count() == expected

    def test_softmax_of_logits_is_probability(self):
        rng = np.random.default_rng(8)
        model = CnnLstmModel(TINY_CNN, 7, "multimodal", np.random.default_rng(1))
        audio, motion = random_inputs(rng, n=4)
        out = model.forward(audio, motion)
        p = softmax(out.logits)
        assert np.all(p >= 0) and np.allclose(p.sum(axis=1), 1.0, atol=1e-6)

    def test_forget_gate_bias_init(self):
        model = CnnLstmModel(TINY_CNN, 3, "audio", np.random.default_rng(0))
        b = model._params["lstm.b"].data
        h = TINY_CNN.hidden
        assert np.all(b[h : 2 * h] == TINY_CNN.forget_bias)
        assert np.all(b[:h] == 0.0) and np.all(b[2 * h :] == 0.0)


class TestTcn:
    def test_output_length_preserved(self):
        rng = np.random.default_rng(0)
        model = TcnModel(TINY_TCN, 4, "multimodal", np.random.default_rng(0))
        audio, motion = random_inputs(rng, n=1, t=50)
        logits, emb = model.forward_tensors(Tensor(audio), Tensor(motion))
        stage_out = model._run_stage(model.audio_stage, Tensor(audio), False, None)
        assert stage_out.data.shape == (1, 50, TINY_TCN.stage1_filters)
        assert emb.data.shape == (1, TINY_TCN.stage2_filters)
        assert logits.data.shape == (1, 4)

    def test_causality_full_stack(self):
        # Perturbing frame t must leave every output strictly before t
        # untouched, through both stages and the fusion.
        rng = np.random.default_rng(1)
        model = TcnModel(TINY_TCN, 3, "multimodal", np.random.default_rng(2))
        audio, motion = random_inputs(rng, n=1, t=40)
        out1 = model.sequence_outputs(audio, motion)
        for t_hit in (0, 17, 39):
            audio2 = audio.copy()
            audio2[0, t_hit] += 3.0
            out2 = model.sequence_outputs(audio2, motion)
            assert np.array_equal(out1[:, :t_hit], out2[:, :t_hit])
            assert not np.array_equal(out1[:, t_hit:], out2[:, t_hit:])

    def test_final_frame_perturbation_moves_logits(self):
        rng = np.random.default_rng(4)
        model = TcnModel(TINY_TCN, 3, "multimodal", np.random.default_rng(2))
        audio, motion = random_inputs(rng, n=1, t=40)
        base = model.forward(audio, motion)
        audio[0, -1] += 2.0
        moved = model.forward(audio, motion)
        assert not np.array_equal(base.logits, moved.logits)

    def test_monomodal_motion_ignores_audio(self):
        rng = np.random.default_rng(5)
        model = TcnModel(TINY_TCN, 3, "motion", np.random.default_rng(0))
        audio, motion = random_inputs(rng)
        a = model.forward(audio, motion)
        b = model.forward(None, motion)
        assert np.array_equal(a.logits, b.logits)

    def test_param_count_matches_config_arithmetic(self):
        c = TINY_TCN
        n = 4
        model = TcnModel(c, n, "audio", np.random.default_rng(0))

        def block_params(c_in, c_out):
            total = c_out * c_in * c.kernel + c_out + c_out  # v, g, b
            if c_in != c_out:
                total += c_out * c_in * 1 + c_out            # 1x1 residual
            return total

        expected = 0
        c_in = 20
        for _ in range(4):
            expected += block_params(c_in, c.stage1_filters)
            c_in = c.stage1_filters
        c_in = c.stage1_filters
        for _ in range(4):
            expected += block_params(c_in, c.stage2_filters)
            c_in = c.stage2_filters
        expected += c.stage2_filters * n + n
        assert model.param_count() == expected

    def test_dropout_only_in_training(self):
        rng = np.random.default_rng(6)
        model = TcnModel(TINY_TCN, 3, "multimodal", np.random.default_rng(1))
        audio, motion = random_inputs(rng)
        a = model.forward(audio, motion)
        b = model.forward(audio, motion)
        assert np.array_equal(a.logits, b.logits)  # inference deterministic
        la, _ = model.forward_tensors(Tensor(audio), Tensor(motion), training=True,
                                      rng=np.random.default_rng(0))
        lb, _ = model.forward_tensors(Tensor(audio), Tensor(motion), training=True,
                                      rng=np.random.default_rng(1))
        assert not np.array_equal(la.data, lb.data)  # masks differ by rng


class TestGradientsThroughModels:
    """Composite end-to-end gradient checks at double precision."""

    def _check(self, model, t=12, tol=1e-4):
        rng = np.random.default_rng(77)
        audio = Tensor(rng.normal(size=(2, t, 20)))
        motion = Tensor(rng.normal(size=(2, t, 6)))
        labels = np.array([0, 1])
        params = model.parameters()

        def loss():
            logits, _ = model.forward_tensors(audio, motion, training=False)
            return softmax_cross_entropy(logits, labels)

        from gradcheck import check_gradients

        check_gradients(loss, [p.tensor for p in params], tol=tol)

    def test_cnn_lstm_full_loss(self):
        model = CnnLstmModel(CnnLstmConfig(n_filters=2, kernel=3, stride=1, hidden=3),
                             2, "multimodal", np.random.default_rng(0), dtype=np.float64)
        self._check(model)

    def test_tcn_full_loss(self):
        model = TcnModel(TcnConfig(stage1_filters=2, stage2_filters=3, kernel=2, dropout=0.0),
                         2, "multimodal", np.random.default_rng(0), dtype=np.float64)
        self._check(model)


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        model = make_model("tcn", TINY_TCN, 4, "multimodal", seed=3)
        model.trained = True
        audio, motion = random_inputs(rng, n=1)
        before = embed(model, audio, motion)

        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.arch == "tcn" and loaded.mode == "multimodal"
        assert loaded.n_subjects == 4 and loaded.trained
        for name, p in model._params.items():
            assert np.array_equal(p.data, loaded._params[name].data), name
        after = embed(loaded, audio, motion)
        assert np.array_equal(before, after)

    def test_untrained_embed_rejected(self):
        model = make_model("cnn-lstm", TINY_CNN, 3, "audio", seed=0)
        with pytest.raises(ConfigError):
            embed(model, np.zeros((1, 30, 20), dtype=np.float32), None)

    def test_missing_checkpoint_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_model(tmp_path / "nope.json")

    def test_embedding_deterministic(self):
        rng = np.random.default_rng(1)
        model = make_model("cnn-lstm", TINY_CNN, 3, "multimodal", seed=5)
        model.trained = True
        audio, motion = random_inputs(rng, n=1)
        assert np.array_equal(embed(model, audio, motion), embed(model, audio, motion))

    def test_embedding_dims(self):
        cnn = make_model("cnn-lstm", TINY_CNN, 3, "multimodal", seed=0)
        tcn = make_model("tcn", TINY_TCN, 3, "multimodal", seed=0)
        assert cnn.embedding_dim == TINY_CNN.hidden
        assert tcn.embedding_dim == TINY_TCN.stage2_filters
