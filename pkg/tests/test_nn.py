import numpy as np
import pytest

from streamvox import nn
from streamvox.errors import BadMagic, ShapeMismatch, TruncatedFile, VersionMismatch

import oracles


def dense_layer(w, b, act="linear", name="d"):
    w = np.asarray(w, dtype=np.float32)
    return nn.LayerSpec(name, "dense", w.shape[1], w.shape[0], act, 0, [w, b])


def random_lstm(rng, in_dim, out_dim, scale=0.3):
    w = rng.normal(0, scale, (in_dim + out_dim, 4 * out_dim)).astype(np.float32)
    b = rng.normal(0, scale, 4 * out_dim).astype(np.float32)
    return nn.LayerSpec("lstm", "lstm", in_dim, out_dim, "linear", 0, [w, b])


def random_gru(rng, in_dim, out_dim, scale=0.3, mask=None):
    w = rng.normal(0, scale, (in_dim + out_dim, 3 * out_dim)).astype(np.float32)
    b = rng.normal(0, scale, 3 * out_dim).astype(np.float32)
    return nn.LayerSpec("gru", "gru", in_dim, out_dim, "linear", 0, [w, b], mask)


class TestDense:
    def test_identity_relu_clips(self):
        layer = dense_layer(np.eye(2), np.zeros(2), "relu")
        assert np.array_equal(nn.dense_forward([1.0, -1.0], layer), [1.0, 0.0])

    def test_zero_weights(self):
        layer = dense_layer(np.zeros((3, 4)), np.zeros(3))
        assert np.array_equal(nn.dense_forward(np.ones(4), layer), np.zeros(3))

    def test_random_matches_matrix_product(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(5, 7)).astype(np.float32)
        b = rng.normal(size=5).astype(np.float32)
        x = rng.normal(size=7).astype(np.float32)
        out = nn.dense_forward(x, dense_layer(w, b, "tanh"))
        expected = np.tanh(w.astype(float) @ x.astype(float) + b)
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            nn.dense_forward(np.ones(3), dense_layer(np.zeros((2, 4)), np.zeros(2)))


class TestLstm:
    def test_all_zero(self):
        layer = nn.LayerSpec("z", "lstm", 2, 3, "linear", 0,
                             [np.zeros((5, 12), np.float32), np.zeros(12, np.float32)])
        h, (h2, c2) = nn.lstm_step(np.zeros(2), (np.zeros(3, np.float32),) * 2, layer)
        assert np.all(h == 0) and np.all(c2 == 0)

    def test_scalar_forget_cell(self):
        # single unit, weights zero, forget bias +10, input bias -10: memory held
        b = np.array([-10.0, 10.0, 0.0, 0.0], dtype=np.float32)
        layer = nn.LayerSpec("m", "lstm", 1, 1, "linear", 0,
                             [np.zeros((2, 4), np.float32), b])
        c0 = np.ones(1, dtype=np.float32)
        h, (_, c1) = nn.lstm_step(np.zeros(1), (np.zeros(1, np.float32), c0), layer)
        sig = lambda v: 1.0 / (1.0 + np.exp(-v))
        c_expected = sig(10.0) * 1.0 + sig(-10.0) * np.tanh(0.0)
        assert c1[0] == pytest.approx(c_expected, rel=1e-6)
        assert h[0] == pytest.approx(sig(0.0) * np.tanh(c_expected), rel=1e-6)

    def test_five_steps_match_equations(self):
        rng = np.random.default_rng(1)
        layer = random_lstm(rng, 4, 3)
        xs = rng.normal(size=(5, 4)).astype(np.float32)
        h = np.zeros(3, np.float32)
        c = np.zeros(3, np.float32)
        h_ref, c_ref = np.zeros(3), np.zeros(3)
        for x in xs:
            _, (h, c) = nn.lstm_step(x, (h, c), layer)
            h_ref, c_ref = oracles.lstm_step_oracle(
                x.astype(float), h_ref, c_ref, layer.weights[0].astype(float),
                layer.weights[1].astype(float))
            np.testing.assert_allclose(h, h_ref, atol=1e-6)
            np.testing.assert_allclose(c, c_ref, atol=1e-6)

    def test_streaming_equals_batch_bitwise(self):
        rng = np.random.default_rng(2)
        layer = random_lstm(rng, 6, 5)
        xs = rng.normal(size=(20, 6)).astype(np.float32)

        def run(chunks):
            h = np.zeros(5, np.float32)
            c = np.zeros(5, np.float32)
            outs = []
            for chunk in chunks:
                for x in chunk:
                    out, (h, c) = nn.lstm_step(x, (h, c), layer)
                    outs.append(out.copy())
            return np.array(outs)

        one_shot = run([xs])
        chunked = run([xs[:1], xs[1:7], xs[7:]])
        assert np.array_equal(one_shot, chunked)

    def test_causality(self):
        rng = np.random.default_rng(3)
        layer = random_lstm(rng, 4, 4)
        xs = rng.normal(size=(10, 4)).astype(np.float32)
        ys = xs.copy()
        ys[6:] += 1.0

        def outputs(seq):
            h = np.zeros(4, np.float32)
            c = np.zeros(4, np.float32)
            res = []
            for x in seq:
                out, (h, c) = nn.lstm_step(x, (h, c), layer)
                res.append(out)
            return np.array(res)

        assert np.array_equal(outputs(xs)[:6], outputs(ys)[:6])


class TestGru:
    def test_all_zero(self):
        layer = nn.LayerSpec("z", "gru", 2, 3, "linear", 0,
                             [np.zeros((5, 9), np.float32), np.zeros(9, np.float32)])
        h, _ = nn.gru_step(np.zeros(2), np.zeros(3, np.float32), layer)
        assert np.all(h == 0)

    def test_update_gate_frozen(self):
        rng = np.random.default_rng(4)
        layer = random_gru(rng, 3, 4)
        layer.weights[1][:4] = -50.0  # z ~ 0: state must not move
        h0 = rng.normal(size=4).astype(np.float32)
        h1, _ = nn.gru_step(rng.normal(size=3).astype(np.float32), h0, layer)
        np.testing.assert_allclose(h1, h0, atol=1e-6)

    def test_matches_equations(self):
        rng = np.random.default_rng(5)
        layer = random_gru(rng, 5, 4)
        h = np.zeros(4, np.float32)
        h_ref = np.zeros(4)
        for _ in range(5):
            x = rng.normal(size=5).astype(np.float32)
            h, _ = nn.gru_step(x, h, layer)
            h_ref = oracles.gru_step_oracle(x.astype(float), h_ref,
                                            layer.weights[0].astype(float),
                                            layer.weights[1].astype(float))
            np.testing.assert_allclose(h, h_ref, atol=1e-6)

    def test_masked_equals_dense_of_masked_matrix(self):
        rng = np.random.default_rng(6)
        in_dim, out_dim = 37, 24  # rows 61: exercises block padding
        n_rows = -(-(in_dim + out_dim) // 16)
        mask = rng.random((n_rows, 3 * out_dim)) < 0.4
        masked = random_gru(rng, in_dim, out_dim, mask=mask)
        dense_equiv = nn.LayerSpec("gru", "gru", in_dim, out_dim, "linear", 0,
                                   [masked.weights[0].copy(), masked.weights[1].copy()])
        h = rng.normal(size=out_dim).astype(np.float32)
        x = rng.normal(size=in_dim).astype(np.float32)
        out_masked, _ = nn.gru_step(x, h.copy(), masked)
        out_dense, _ = nn.gru_step(x, h.copy(), dense_equiv)
        assert np.array_equal(out_masked, out_dense)  # exact: same zeroed matrix

    def test_block_sparse_matvec_matches_dense(self):
        rng = np.random.default_rng(7)
        rows, cols = 61, 72
        n_rows = -(-rows // 16)
        mask = rng.random((n_rows, cols)) < 0.35
        w = nn.apply_block_mask(rng.normal(size=(rows, cols)).astype(np.float32), mask)
        x = rng.normal(size=rows).astype(np.float32)
        sparse = nn.block_sparse_matvec(w, mask, x)
        dense = x.astype(float) @ w.astype(float)
        np.testing.assert_allclose(sparse, dense, atol=1e-7)

    def test_mask_zeroes_dropped_blocks(self):
        rng = np.random.default_rng(8)
        layer = random_gru(rng, 16, 16, mask=np.zeros((2, 48), dtype=bool))
        assert np.all(layer.weights[0] == 0)
        assert layer.density == 0.0


class TestConv:
    def test_identity_kernel(self):
        dim = 4
        w = np.zeros((3, dim, dim), dtype=np.float32)
        w[1] = np.eye(dim)
        layer = nn.LayerSpec("c", "conv1d", dim, dim, "linear", 3, [w, np.zeros(dim, np.float32)])
        frames = np.random.default_rng(9).normal(size=(6, dim)).astype(np.float32)
        np.testing.assert_allclose(nn.conv1d_forward(frames, layer), frames, atol=0)

    def test_impulse_receptive_field_is_five(self):
        rng = np.random.default_rng(10)
        mk = lambda name: nn.LayerSpec(name, "conv1d", 3, 3, "linear", 3,
                                       [rng.normal(size=(3, 3, 3)).astype(np.float32),
                                        np.zeros(3, np.float32)])
        l1, l2 = mk("c1"), mk("c2")
        base = np.zeros((21, 3), dtype=np.float32)
        impulse = base.copy()
        impulse[10] = 1.0
        delta = nn.conv1d_forward(nn.conv1d_forward(impulse, l1), l2) \
            - nn.conv1d_forward(nn.conv1d_forward(base, l1), l2)
        affected = np.nonzero(np.any(delta != 0, axis=1))[0]
        assert affected.min() == 8 and affected.max() == 12  # +-2 frames

    def test_random_matches_defining_sum(self):
        rng = np.random.default_rng(11)
        w = rng.normal(size=(3, 5, 4)).astype(np.float32)
        b = rng.normal(size=4).astype(np.float32)
        layer = nn.LayerSpec("c", "conv1d", 5, 4, "linear", 3, [w, b])
        frames = rng.normal(size=(9, 5)).astype(np.float32)
        np.testing.assert_allclose(nn.conv1d_forward(frames, layer),
                                   oracles.conv1d_oracle(frames, w, b), atol=1e-6)


class TestSampling:
    def test_one_hot_limit(self):
        logits = np.full(256, -50.0)
        logits[37] = 50.0
        for seed in range(20):
            assert nn.sample_categorical(logits, seed) == 37

    def test_uniform_frequencies(self):
        rng = np.random.default_rng(12)
        counts = np.bincount(
            [nn.sample_categorical(np.zeros(256), rng) for _ in range(100_000)],
            minlength=256)
        p = 1 / 256
        sigma = np.sqrt(100_000 * p * (1 - p))
        assert np.all(np.abs(counts - 100_000 * p) < 5 * sigma)

    def test_deterministic_given_seed(self):
        logits = np.random.default_rng(13).normal(size=256)
        a = [nn.sample_categorical(logits, 99, 0.7) for _ in range(10)]
        b = [nn.sample_categorical(logits, 99, 0.7) for _ in range(10)]
        assert a == b

    def test_softmax_properties(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=256)
        p = nn.softmax(x)
        assert abs(p.sum() - 1.0) < 1e-6
        np.testing.assert_allclose(nn.softmax(x + 10.0), p, atol=1e-9)


class TestBundle:
    def test_roundtrip_bitwise(self):
        bundle = nn.random_bundle(5, 4, seed=1)
        blob = nn.save_bundle(bundle)
        again = nn.save_bundle(nn.load_bundle(blob))
        assert blob == again

    def test_roundtrip_with_mask(self):
        bundle = nn.random_bundle(5, 4, seed=2)
        rng = np.random.default_rng(3)
        gru_a = bundle[nn.SAMPLE_RATE][3]
        n_rows = -(-(gru_a.in_dim + gru_a.out_dim) // 16)
        mask = rng.random((n_rows, 3 * gru_a.out_dim)) < 0.5
        bundle[nn.SAMPLE_RATE][3] = nn.LayerSpec(
            gru_a.name, "gru", gru_a.in_dim, gru_a.out_dim, "linear", 0,
            [w.copy() for w in gru_a.weights], mask)
        blob = nn.save_bundle(bundle)
        loaded = nn.load_bundle(blob)
        assert np.array_equal(loaded[nn.SAMPLE_RATE][3].mask, mask)
        assert nn.save_bundle(loaded) == blob
        assert loaded[nn.SAMPLE_RATE][3].density == pytest.approx(np.mean(mask))

    def test_bad_magic(self):
        blob = bytearray(nn.save_bundle(nn.random_bundle(5, 4)))
        blob[:4] = b"NOPE"
        with pytest.raises(BadMagic):
            nn.load_bundle(bytes(blob))

    def test_version_mismatch(self):
        blob = bytearray(nn.save_bundle(nn.random_bundle(5, 4)))
        blob[4] = 9
        with pytest.raises(VersionMismatch):
            nn.load_bundle(bytes(blob))

    def test_corrupt_shape_names_layer(self):
        bundle = nn.random_bundle(5, 4)
        blob = nn.save_bundle(bundle)
        # bump the classifier's out_dim field: find its layer record
        marker = b"classifier"
        pos = blob.index(marker) + len(marker)
        corrupted = bytearray(blob)
        corrupted[pos + 5] ^= 0xFF  # out_dim lives 5 bytes after kind byte
        with pytest.raises((ShapeMismatch, TruncatedFile)) as err:
            nn.load_bundle(bytes(corrupted))
        assert "classifier" in str(err.value)

    def test_truncated_file(self):
        blob = nn.save_bundle(nn.random_bundle(5, 4))
        with pytest.raises(TruncatedFile):
            nn.load_bundle(blob[: len(blob) - 100])

    def test_validation_rejects_broken_topology(self):
        bundle = nn.random_bundle(5, 4)
        layers = {k: list(v) for k, v in bundle.models.items()}
        layers[nn.ACOUSTIC] = layers[nn.ACOUSTIC][:4]  # drop classifier
        with pytest.raises(ShapeMismatch):
            nn.ModelBundle(layers)

    def test_derived_metadata(self):
        bundle = nn.random_bundle(7, 6)
        assert bundle.n_phonemes == 7
        assert bundle.n_speakers == 6
        assert bundle.ppg_dim == nn.TOY_DIMS["acoustic_lstm"][1]
        assert bundle.cond_dim == 128
        assert bundle.feature_dim == 20

    def test_default_sizes_hit_two_million_parameters(self):
        bundle = nn.build_bundle(n_phonemes=40, n_speakers=8, dims=nn.ENGINE_DIMS)
        for model in (nn.ACOUSTIC, nn.CONVERSION):
            count = bundle.param_count(model)
            assert abs(count - 2_000_000) / 2_000_000 < 0.10, (model, count)
