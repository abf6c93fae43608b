"""
MLP tests
Forward/backward, Adam, initialisation, learning-rate schedule and the encoder/decoder pair
"""
import numpy as np
import pytest

from config import EMBED_RADIUS
from exceptions import DivergenceError, InvalidInputError, ShapeMismatchError, StaleCacheError
from nn_model import (AdamState, AutoEncoder, Layer, LayerSpec, MlpEmbedder, MlpModel, adam_step, backward,
                      build_autoencoder, center_encoder_output, decoder_specs, encoder_specs, forward, init_model,
                      lr_schedule)


def _scalar_model(w: float) -> MlpModel:
    return MlpModel(layers=[Layer(weight=np.array([[w]]), bias=np.zeros(1), activation="identity")])


def _reference_forward(model: MlpModel, x):
    h = x
    for layer in model.layers:
        a = h @ layer.weight + layer.bias
        if layer.activation == "relu":
            h = np.where(a > 0, a, 0.0)
        elif layer.activation == "sigmoid":
            h = 1.0 / (1.0 + np.exp(-a))
        else:
            h = a
    return h


class TestLayerSpecs:
    def test_rejects_unknown_activation(self):
        with pytest.raises(InvalidInputError):
            LayerSpec(2, 3, "tanh")

    def test_rejects_non_chaining_layers(self):
        with pytest.raises(ShapeMismatchError):
            MlpModel(layers=[Layer(np.zeros((2, 3)), np.zeros(3), "relu"), Layer(np.zeros((4, 1)), np.zeros(1), "relu")])

    def test_encoder_decoder_shapes(self):
        enc = encoder_specs(256, 128, (256, 128))
        dec = decoder_specs(128, 256, (256, 128))
        assert [(s.in_dim, s.out_dim, s.activation) for s in enc] == [
            (256, 256, "relu"), (256, 128, "relu"), (128, 128, "identity")]
        assert [(s.in_dim, s.out_dim, s.activation) for s in dec] == [
            (128, 128, "relu"), (128, 256, "relu"), (256, 256, "sigmoid")]


class TestForward:
    def test_identity_layer(self):
        model = MlpModel(layers=[Layer(np.eye(3), np.zeros(3), "identity")])
        x = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(forward(model, x)[0], x)

    def test_relu_of_negative_inputs(self):
        model = MlpModel(layers=[Layer(np.eye(2), np.zeros(2), "relu")])
        np.testing.assert_array_equal(forward(model, -np.ones((3, 2)))[0], 0.0)

    def test_matches_reference(self):
        model = init_model([LayerSpec(5, 7, "relu"), LayerSpec(7, 3, "sigmoid")], seed=4)
        x = np.random.default_rng(0).normal(size=(6, 5))
        np.testing.assert_allclose(forward(model, x)[0], _reference_forward(model, x), rtol=1e-12)

    def test_deterministic(self):
        model = init_model([LayerSpec(4, 4, "relu"), LayerSpec(4, 2, "identity")], seed=1)
        x = np.ones((2, 4))
        np.testing.assert_array_equal(forward(model, x)[0], forward(model, x)[0])

    def test_sigmoid_output_range(self):
        model = build_autoencoder(6, 3, (5,), seed=0)
        x_hat, _ = forward(model.decoder, np.random.default_rng(1).normal(size=(10, 3)))
        assert np.all((x_hat > 0) & (x_hat < 1))

    def test_input_dim_checked(self):
        model = _scalar_model(1.0)
        with pytest.raises(ShapeMismatchError):
            forward(model, np.zeros((2, 3)))


class TestBackward:
    def test_zero_upstream_gradient(self):
        model = init_model([LayerSpec(3, 4, "relu"), LayerSpec(4, 2, "sigmoid")], seed=0)
        out, cache = forward(model, np.ones((2, 3)))
        grads, grad_input = backward(model, cache, np.zeros_like(out))
        for dw, db in grads:
            np.testing.assert_array_equal(dw, 0.0)
            np.testing.assert_array_equal(db, 0.0)
        np.testing.assert_array_equal(grad_input, 0.0)

    def test_linear_layer_sum(self):
        model = MlpModel(layers=[Layer(np.ones((3, 2)), np.zeros(2), "identity")])
        x = np.arange(12.0).reshape(4, 3)
        out, cache = forward(model, x)
        [(dw, db)], _ = backward(model, cache, np.ones_like(out))
        np.testing.assert_allclose(dw, x.T @ np.ones((4, 2)))
        np.testing.assert_allclose(db, [4.0, 4.0])

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        model = init_model([LayerSpec(4, 6, "sigmoid"), LayerSpec(6, 3, "identity")], seed=3)
        x = rng.normal(size=(5, 4))
        upstream = rng.normal(size=(5, 3))
        out, cache = forward(model, x)
        grads, grad_input = backward(model, cache, upstream)

        def objective():
            return float(np.sum(forward(model, x)[0] * upstream))

        h = 1e-6
        for layer, (dw, _) in zip(model.layers, grads):
            for index in np.ndindex(*layer.weight.shape):
                original = layer.weight[index]
                layer.weight[index] = original + h
                plus = objective()
                layer.weight[index] = original - h
                minus = objective()
                layer.weight[index] = original
                assert dw[index] == pytest.approx((plus - minus) / (2 * h), rel=1e-4, abs=1e-8)

        numeric_input = np.zeros_like(x)
        for index in np.ndindex(*x.shape):
            shifted = x.copy()
            shifted[index] += h
            up = float(np.sum(forward(model, shifted)[0] * upstream))
            shifted[index] -= 2 * h
            down = float(np.sum(forward(model, shifted)[0] * upstream))
            numeric_input[index] = (up - down) / (2 * h)
        np.testing.assert_allclose(grad_input, numeric_input, rtol=1e-4, atol=1e-8)

    def test_stale_cache_rejected(self):
        model = _scalar_model(1.0)
        out, cache = forward(model, np.ones((1, 1)))
        grads, _ = backward(model, cache, np.ones_like(out))
        adam_step(model, grads, AdamState.for_model(model))
        with pytest.raises(StaleCacheError):
            backward(model, cache, np.ones_like(out))


class TestAdam:
    def test_zero_gradients_leave_parameters(self):
        model = _scalar_model(0.5)
        state = AdamState.for_model(model)
        adam_step(model, [(np.zeros((1, 1)), np.zeros(1))], state)
        assert model.layers[0].weight[0, 0] == 0.5
        assert state.step == 1

    def test_first_step_moves_by_lr(self):
        model = _scalar_model(0.0)
        state = AdamState.for_model(model, lr=1e-3)
        adam_step(model, [(np.ones((1, 1)), np.zeros(1))], state)
        assert model.layers[0].weight[0, 0] == pytest.approx(-1e-3, rel=1e-4)

    def test_converges_on_quadratic(self):
        model = _scalar_model(0.0)
        state = AdamState.for_model(model, lr=0.1)
        for _ in range(200):
            w = model.layers[0].weight[0, 0]
            adam_step(model, [(np.array([[2.0 * (w - 3.0)]]), np.zeros(1))], state)
        assert abs(model.layers[0].weight[0, 0] - 3.0) < 0.1

    def test_rejects_non_finite_gradient(self):
        model = _scalar_model(0.0)
        with pytest.raises(DivergenceError):
            adam_step(model, [(np.array([[np.nan]]), np.zeros(1))], AdamState.for_model(model))

    def test_parameter_explosion_guard(self):
        model = _scalar_model(1e8)
        with pytest.raises(DivergenceError):
            adam_step(model, [(np.array([[-1.0]]), np.zeros(1))], AdamState.for_model(model, lr=10.0))


class TestInitialisation:
    def test_same_seed_same_parameters(self):
        specs = [LayerSpec(5, 4, "relu"), LayerSpec(4, 2, "identity")]
        a, b = init_model(specs, 7), init_model(specs, 7)
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.weight, lb.weight)

    def test_different_seeds_differ(self):
        specs = [LayerSpec(5, 4, "relu")]
        assert not np.array_equal(init_model(specs, 1).layers[0].weight, init_model(specs, 2).layers[0].weight)

    def test_he_variance(self):
        weight = init_model([LayerSpec(1000, 1000, "relu")], seed=0).layers[0].weight
        assert abs(weight.var() - 2 / 1000) < 0.2 * 2 / 1000

    def test_zero_biases(self):
        model = init_model([LayerSpec(3, 3, "sigmoid")], seed=0)
        np.testing.assert_array_equal(model.layers[0].bias, 0.0)


class TestLrSchedule:
    def test_epoch_zero(self):
        assert lr_schedule(1e-3, 0, 30, 0.5) == 1e-3

    def test_step_decay(self):
        assert lr_schedule(1e-3, 60, 30, 0.5) == pytest.approx(2.5e-4)

    def test_constant_factor(self):
        assert lr_schedule(1e-3, 500, 30, 1.0) == 1e-3


class TestAutoEncoder:
    def test_encode_on_default_sphere(self):
        model = build_autoencoder(8, 4, (6,), seed=0)
        z = model.encode(np.random.default_rng(0).uniform(size=(5, 8)))
        np.testing.assert_allclose(np.linalg.norm(z, axis=1), EMBED_RADIUS)

    @pytest.mark.parametrize("radius", [0.28, 1.0, 3.0])
    def test_encode_on_given_radius(self, radius):
        model = build_autoencoder(8, 4, (6,), seed=0, radius=radius)
        z = model.encode(np.random.default_rng(0).uniform(size=(5, 8)))
        np.testing.assert_allclose(np.linalg.norm(z, axis=1), radius)

    @pytest.mark.parametrize("radius", [0.0, -0.5, float("nan")])
    def test_rejects_bad_radius(self, radius):
        model = build_autoencoder(8, 4, (6,), seed=0)
        with pytest.raises(InvalidInputError):
            AutoEncoder(encoder=model.encoder, decoder=model.decoder, radius=radius)

    def test_center_encoder_output(self):
        model = build_autoencoder(8, 4, (6,), seed=0)
        x = np.random.default_rng(1).uniform(size=(30, 8))
        version = model.encoder.version
        center_encoder_output(model, x)
        np.testing.assert_allclose(forward(model.encoder, x)[0].mean(axis=0), 0.0, atol=1e-12)
        assert model.encoder.version == version + 1

    def test_centring_spreads_non_negative_inputs(self):
        # relu features of inputs in [0, 1] all point the same way until centred
        x = np.random.default_rng(2).uniform(size=(40, 8))
        raw = build_autoencoder(8, 4, (16,), seed=0)
        centred = center_encoder_output(build_autoencoder(8, 4, (16,), seed=0), x)
        spread = [np.linalg.norm(model.encode(x).mean(axis=0)) for model in (raw, centred)]
        assert spread[1] < spread[0]

    def test_dims(self):
        model = build_autoencoder(8, 4, (6, 5), seed=0, normalize=False)
        assert (model.input_dim, model.embed_dim) == (8, 4)
        assert model.decoder.output_dim == 8

    def test_embedder_step_changes_encoder(self):
        model = build_autoencoder(4, 2, (8,), seed=0, normalize=False)
        embedder = MlpEmbedder(model, lr=1e-2)
        x = np.random.default_rng(0).uniform(size=(3, 4))
        before = [layer.weight.copy() for layer in model.encoder.layers]
        embedder.step(x, np.ones((3, 2)))
        assert embedder.state.step == 1
        assert any(not np.array_equal(b, layer.weight) for b, layer in zip(before, model.encoder.layers))
