import numpy as np
import pytest

from sinkbreak.mlp import (
    MODEL_MAGIC,
    MlpModel,
    ModelFormatError,
    forward,
    init_model,
    input_grad,
    load_model,
    param_grad,
    predict_dummy,
    save_model,
)
from sinkbreak.numkit import cross_entropy

from conftest import away_from_kinks, central_diff, rel_err


def forward_oracle(model, x):
    """Straight-line reimplementation of the forward pass for cross-checking."""
    h = np.asarray(x, dtype=np.float64)
    for i in range(model.depth):
        h = model.weights[i] @ h + model.biases[i]
        if i < model.depth - 1:
            h = np.maximum(h, 0.0)
    return h


class TestForward:
    def test_matches_independent_recomputation(self, random_model):
        rng = np.random.default_rng(10)
        for _ in range(50):
            x = rng.uniform(0, 1, size=16)
            z, _ = forward(random_model, x)
            np.testing.assert_allclose(z, forward_oracle(random_model, x), rtol=1e-13)

    def test_hand_worked_tiny_network(self):
        # 2 -> 2 -> 2 with identity-ish weights, worked by hand:
        # pre1 = [x0 - x1, -x0] -> relu -> logits = W2 h + b2
        model = MlpModel(
            [2, 2, 2],
            [np.array([[1.0, -1.0], [-1.0, 0.0]]), np.array([[2.0, 0.0], [0.0, 3.0]])],
            [np.zeros(2), np.array([0.5, -0.5])],
            num_classes=1,
        )
        z, tape = forward(model, np.array([3.0, 1.0]))
        np.testing.assert_allclose(z, [4.5, -0.5])
        np.testing.assert_allclose(tape.pre[0], [2.0, -3.0])
        np.testing.assert_allclose(tape.act[1], [2.0, 0.0])

    def test_wrong_input_dim(self, random_model):
        with pytest.raises(Exception):
            forward(random_model, np.zeros(5))


class TestGradients:
    def test_input_grad_finite_differences(self, random_model):
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 20:
            x = rng.uniform(0, 1, size=16)
            if not away_from_kinks(random_model, x):
                continue
            label = int(rng.integers(8))

            def loss_of(v):
                z, _ = forward(random_model, v)
                return cross_entropy(z, label)[0]

            z, tape = forward(random_model, x)
            _, gz = cross_entropy(z, label)
            gx = input_grad(random_model, tape, gz)
            assert rel_err(gx, central_diff(loss_of, x)) < 1e-6
            checked += 1

    def test_param_grad_finite_differences(self, random_model):
        rng = np.random.default_rng(12)
        model = random_model.copy()
        checked = 0
        while checked < 5:
            x = rng.uniform(0, 1, size=16)
            if not away_from_kinks(model, x):
                continue
            label = int(rng.integers(8))
            z, tape = forward(model, x)
            _, gz = cross_entropy(z, label)
            gw, gb = param_grad(model, tape, gz)
            # probe a handful of scalar parameters per layer
            for li in range(model.depth):
                for _ in range(5):
                    r = int(rng.integers(model.weights[li].shape[0]))
                    c = int(rng.integers(model.weights[li].shape[1]))
                    h = 1e-6
                    old = model.weights[li][r, c]
                    model.weights[li][r, c] = old + h
                    up = cross_entropy(forward(model, x)[0], label)[0]
                    model.weights[li][r, c] = old - h
                    dn = cross_entropy(forward(model, x)[0], label)[0]
                    model.weights[li][r, c] = old
                    assert gw[li][r, c] == pytest.approx((up - dn) / (2 * h), rel=1e-4, abs=1e-9)
                r = int(rng.integers(model.biases[li].size))
                h = 1e-6
                old = model.biases[li][r]
                model.biases[li][r] = old + h
                up = cross_entropy(forward(model, x)[0], label)[0]
                model.biases[li][r] = old - h
                dn = cross_entropy(forward(model, x)[0], label)[0]
                model.biases[li][r] = old
                assert gb[li][r] == pytest.approx((up - dn) / (2 * h), rel=1e-4, abs=1e-9)
            checked += 1


class TestPredictDummy:
    def test_brute_force_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(1000):
            k = int(rng.integers(2, 6))
            z = rng.normal(size=2 * k)
            pred, raw = predict_dummy(z, k)
            raw_ref = max(range(2 * k), key=lambda i: (z[i], -i))
            assert raw == raw_ref
            assert pred == (raw_ref if raw_ref < k else raw_ref - k)
            assert 0 <= pred < k

    def test_dummy_slot_remapped(self):
        pred, raw = predict_dummy(np.array([0.0, 1.0, 5.0, 2.0]), 2)
        assert (pred, raw) == (0, 2)

    def test_tie_prefers_lower_index(self):
        pred, raw = predict_dummy(np.array([3.0, 1.0, 3.0, 0.0]), 2)
        assert (pred, raw) == (0, 0)


class TestSerialization:
    def test_round_trip(self, random_model, tmp_path):
        p = str(tmp_path / "m.bin")
        save_model(random_model, p)
        back = load_model(p)
        assert back.layer_dims == random_model.layer_dims
        assert back.num_classes == random_model.num_classes
        for w1, w2 in zip(back.weights, random_model.weights):
            np.testing.assert_array_equal(w1, w2)
        for b1, b2 in zip(back.biases, random_model.biases):
            np.testing.assert_array_equal(b1, b2)
        x = np.linspace(0, 1, 16)
        np.testing.assert_array_equal(forward(back, x)[0], forward(random_model, x)[0])

    def test_hand_written_file(self, tmp_path):
        # 1 -> 2 network, K=1: logits = [2x + 0.5, -x]
        import struct

        blob = MODEL_MAGIC + struct.pack("<III", 1, 1, 2) + struct.pack("<2I", 1, 2)
        blob += struct.pack("<2d", 2.0, -1.0)  # W: shape (2, 1)
        blob += struct.pack("<2d", 0.5, 0.0)  # b
        p = tmp_path / "hand.bin"
        p.write_bytes(blob)
        model = load_model(str(p))
        np.testing.assert_allclose(forward(model, np.array([3.0]))[0], [6.5, -3.0])

    def test_truncated_file(self, random_model, tmp_path):
        p = tmp_path / "m.bin"
        save_model(random_model, str(p))
        blob = p.read_bytes()
        for cut in (4, 12, 20, len(blob) // 2, len(blob) - 1):
            p.write_bytes(blob[:cut])
            with pytest.raises(ModelFormatError, match="byte"):
                load_model(str(p))

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "m.bin"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(ModelFormatError):
            load_model(str(p))

    def test_trailing_garbage(self, random_model, tmp_path):
        p = tmp_path / "m.bin"
        save_model(random_model, str(p))
        p.write_bytes(p.read_bytes() + b"\x00")
        with pytest.raises(ModelFormatError, match="trailing"):
            load_model(str(p))

    def test_non_finite_parameters(self, tmp_path):
        import struct

        blob = MODEL_MAGIC + struct.pack("<III", 1, 1, 2) + struct.pack("<2I", 1, 2)
        blob += struct.pack("<2d", float("nan"), -1.0)
        blob += struct.pack("<2d", 0.5, 0.0)
        p = tmp_path / "bad.bin"
        p.write_bytes(blob)
        with pytest.raises(ModelFormatError, match="non-finite"):
            load_model(str(p))


def test_init_model_deterministic():
    a = init_model(4, [8], 2, seed=42)
    b = init_model(4, [8], 2, seed=42)
    for w1, w2 in zip(a.weights, b.weights):
        np.testing.assert_array_equal(w1, w2)
    c = init_model(4, [8], 2, seed=43)
    assert any(not np.array_equal(w1, w2) for w1, w2 in zip(a.weights, c.weights))


def test_init_model_glorot_bounds():
    m = init_model(10, [20], 3, seed=0)
    a0 = np.sqrt(6.0 / (10 + 20))
    assert np.all(np.abs(m.weights[0]) <= a0)
    assert np.all(m.biases[0] == 0.0)
