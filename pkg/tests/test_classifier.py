import struct

import numpy as np
import pytest

from backend.classifier.dataset import (
    Dataset,
    LabeledPoint,
    load_dataset,
    make_blobs,
    save_dataset,
    train_eval_split,
)
from backend.classifier.network import (
    ClassifierWeights,
    backward_input,
    forward,
    init_weights,
    parameter_gradients,
    predict,
    predict_batch,
    zero_weights,
)
from backend.classifier.training import TrainingConfig, clean_accuracy, pgd_perturb, train_toy
from backend.classifier.weights_io import MAGIC, decode_weights, encode_weights, load_weights, save_weights
from backend.errors import InvalidArgumentError, WeightFileError
from backend.numerics.smooth import finite_diff_grad


def identity_layer(n):
    return ClassifierWeights((n, n), (np.eye(n),), (np.zeros(n),))


class TestForward:
    def test_zero_weights_give_zero_logits(self):
        w = zero_weights((2, 5, 3))
        np.testing.assert_array_equal(forward(w, [0.3, 0.9]), np.zeros(3))

    def test_identity_layer(self):
        np.testing.assert_array_equal(forward(identity_layer(3), [1.0, 0.0, 0.0]), [1.0, 0.0, 0.0])

    def test_batch_matches_single(self, tiny_model, rng):
        X = rng.uniform(size=(6, 2))
        batch = forward(tiny_model, X)
        for i in range(6):
            np.testing.assert_array_equal(batch[i], forward(tiny_model, X[i]))

    def test_golden_logits(self, golden_network):
        model, cases = golden_network
        for x, expected in cases:
            np.testing.assert_array_equal(forward(model, x), expected)
            assert predict(model, x) == int(np.argmax(expected))
        batch = forward(model, np.vstack([x for x, _ in cases]))
        np.testing.assert_array_equal(batch, np.vstack([e for _, e in cases]))

    def test_golden_logits_survive_weight_file(self, golden_network):
        model, cases = golden_network
        restored = decode_weights(encode_weights(model))
        for x, expected in cases:
            np.testing.assert_array_equal(forward(restored, x), expected)

    def test_seeded_network_is_bit_stable(self):
        x = np.array([0.25, 0.75])
        first = forward(init_weights((2, 16, 3), seed=11), x)
        second = forward(init_weights((2, 16, 3), seed=11), x)
        assert first.tobytes() == second.tobytes()

    def test_dimension_mismatch(self, tiny_model):
        with pytest.raises(InvalidArgumentError):
            forward(tiny_model, [0.1, 0.2, 0.3])

    def test_weights_are_read_only(self, tiny_model):
        with pytest.raises(ValueError):
            tiny_model.weights[0][0, 0] = 1.0


class TestBackward:
    def test_zero_grad_logits(self, tiny_model):
        np.testing.assert_array_equal(backward_input(tiny_model, [0.4, 0.6], np.zeros(3)), np.zeros(2))

    def test_linear_model_gradient_is_transpose(self):
        weight = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]])
        w = ClassifierWeights((2, 3), (weight,), (np.zeros(3),))
        g = np.array([1.0, -2.0, 4.0])
        np.testing.assert_allclose(backward_input(w, [0.2, 0.1], g), weight.T @ g)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        w = init_weights((4, 12, 12, 3), seed=seed)
        x = rng.uniform(0.2, 0.8, size=4)
        g = rng.normal(size=3)
        analytic = backward_input(w, x, g)
        numeric = finite_diff_grad(lambda v: float(g @ forward(w, v)), x)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)

    def test_parameter_gradient_matches_finite_differences(self, tiny_model, rng):
        batch = rng.uniform(size=(5, 2))
        G = rng.normal(size=(5, 3))
        _, grad_w, grad_b = parameter_gradients(tiny_model, batch, lambda logits: G)

        def objective(bias0):
            biases = (bias0,) + tiny_model.biases[1:]
            w = ClassifierWeights(tiny_model.layer_dims, tiny_model.weights, biases)
            return float(np.sum(G * forward(w, batch)))

        numeric = finite_diff_grad(objective, np.array(tiny_model.biases[0]))
        np.testing.assert_allclose(grad_b[0], numeric, rtol=1e-5, atol=1e-8)
        assert grad_w[0].shape == tiny_model.weights[0].shape


class TestPredict:
    def test_zero_logits_pick_class_zero(self):
        assert predict(zero_weights((2, 3)), [0.5, 0.5]) == 0

    @pytest.mark.parametrize("logits, expected", [([1.0, 3.0, 2.0], 1), ([2.0, 2.0, 1.0], 0)])
    def test_argmax_with_lowest_index_ties(self, logits, expected):
        assert predict(identity_layer(3), logits) == expected

    def test_predict_batch(self):
        preds = predict_batch(identity_layer(3), [[1.0, 3.0, 2.0], [2.0, 2.0, 1.0]])
        np.testing.assert_array_equal(preds, [1, 0])


class TestWeightFile:
    def test_round_trip_is_bit_exact(self, tiny_model, tmp_path):
        path = save_weights(tmp_path / "model.mosw", tiny_model)
        loaded = load_weights(path)
        assert loaded.same_parameters(tiny_model)
        x = np.array([0.1, 0.7])
        assert forward(loaded, x).tobytes() == forward(tiny_model, x).tobytes()

    def test_header_layout(self, tiny_model):
        data = encode_weights(tiny_model)
        assert data[:4] == MAGIC
        assert struct.unpack_from("<HH", data, 4) == (1, 3)
        assert struct.unpack_from("<3I", data, 8) == (2, 16, 3)

    def test_bad_magic(self, tiny_model):
        data = b"XXXX" + encode_weights(tiny_model)[4:]
        with pytest.raises(WeightFileError) as exc:
            decode_weights(data)
        assert exc.value.offset == 0

    def test_unsupported_version(self, tiny_model):
        data = bytearray(encode_weights(tiny_model))
        struct.pack_into("<H", data, 4, 9)
        with pytest.raises(WeightFileError) as exc:
            decode_weights(bytes(data))
        assert exc.value.offset == 4

    def test_zero_width(self, tiny_model):
        data = bytearray(encode_weights(tiny_model))
        struct.pack_into("<I", data, 12, 0)
        with pytest.raises(WeightFileError) as exc:
            decode_weights(bytes(data))
        assert exc.value.offset == 12

    def test_truncated(self, tiny_model):
        data = encode_weights(tiny_model)[:-5]
        with pytest.raises(WeightFileError) as exc:
            decode_weights(data)
        assert exc.value.offset == len(data)

    def test_trailing_bytes(self, tiny_model):
        data = encode_weights(tiny_model)
        with pytest.raises(WeightFileError) as exc:
            decode_weights(data + b"\x00\x00")
        assert exc.value.offset == len(data)

    def test_non_finite_parameter(self, tiny_model):
        data = bytearray(encode_weights(tiny_model))
        first_param = 4 + 4 + 4 * 3
        struct.pack_into("<d", data, first_param + 8 * 3, float("nan"))
        with pytest.raises(WeightFileError) as exc:
            decode_weights(bytes(data))
        assert exc.value.offset == first_param + 8 * 3


class TestDataset:
    def test_blobs_are_balanced_and_boxed(self):
        ds = make_blobs(300, 2, 3, seed=1)
        assert len(ds) == 300
        assert np.bincount(ds.labels).tolist() == [100, 100, 100]
        assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0

    def test_blobs_are_deterministic(self):
        a = make_blobs(50, 5, 4, seed=9)
        b = make_blobs(50, 5, 4, seed=9)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_split_sizes(self):
        train, held_out = train_eval_split(40, 10, seed=2)
        assert (len(train), len(held_out)) == (40, 10)

    def test_csv_round_trip(self, tmp_path):
        ds = make_blobs(20, 3, 4, seed=5)
        path = save_dataset(tmp_path / "eval.csv", ds)
        assert path.read_text().splitlines()[0] == "# mosattack-dataset v1 d=3 C=4"
        loaded = load_dataset(path)
        np.testing.assert_array_equal(loaded.features, ds.features)
        np.testing.assert_array_equal(loaded.labels, ds.labels)
        assert loaded.C == 4

    def test_csv_without_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x0,x1,label\n0.1,0.2,0\n")
        with pytest.raises(InvalidArgumentError):
            load_dataset(path)

    def test_point_outside_box_rejected(self):
        with pytest.raises(InvalidArgumentError):
            LabeledPoint(np.array([1.2, 0.5]), 0)

    def test_label_out_of_range_rejected(self):
        with pytest.raises(InvalidArgumentError):
            Dataset(np.zeros((2, 2)), np.array([0, 3]), 3)


class TestTraining:
    def test_zero_epochs_returns_initialization(self):
        cfg = TrainingConfig(epochs=0, n_train=30)
        trained = train_toy(cfg)
        assert trained.same_parameters(init_weights(cfg.layer_dims, cfg.seed))
        assert trained.report["epochs"] == 0

    def test_standard_training_accuracy(self):
        cfg = TrainingConfig(seed=7, data_seed=7, n_train=1500)
        model = train_toy(cfg)
        assert model.report["clean_accuracy"] >= 0.95
        assert len(model.report["loss_history"]) == cfg.epochs

    def test_training_is_deterministic(self):
        cfg = TrainingConfig(epochs=3, n_train=200)
        assert train_toy(cfg).same_parameters(train_toy(cfg))

    @pytest.mark.slow
    def test_adversarial_training_lowers_pgd_error(self):
        cfg = TrainingConfig(seed=7, data_seed=7, n_train=1500, epsilon=0.1)
        train, held_out = train_eval_split(1500, 500, seed=7)
        standard = train_toy(cfg, train, adversarial=False)
        robust = train_toy(cfg, train, adversarial=True)
        assert robust.report["adversarial"] is True
        assert clean_accuracy(robust, held_out) >= 0.85

        def pgd_error(model):
            perturbed = pgd_perturb(model, held_out.features, held_out.labels, 0.1, 20, np.random.default_rng(0))
            return float(np.mean(predict_batch(model, perturbed) != held_out.labels))

        assert pgd_error(robust) < pgd_error(standard)

    def test_config_rejects_bad_values(self):
        with pytest.raises(InvalidArgumentError):
            TrainingConfig(step_size=0.0).validate()
        with pytest.raises(InvalidArgumentError):
            TrainingConfig(hidden=[0]).validate()

    def test_config_warns_on_unknown_keys(self, caplog):
        cfg = TrainingConfig.from_dict({"epochs": 2, "lr": 0.1})
        assert cfg.epochs == 2
        assert "lr" in caplog.text
