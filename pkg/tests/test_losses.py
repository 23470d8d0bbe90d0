import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inside_cond.losses import (
    LossConfig,
    combined_loss,
    dice_loss,
    dice_score,
    focal_loss,
    one_hot,
    sigma_penalty,
)
from inside_cond.tensor import Tensor, finite_difference_check


def soft_dice_oracle(probs, target, foreground, smooth):
    """Scalar-loop reference for the smoothed soft Dice loss."""
    total = 0.0
    for c in foreground:
        inter = float((probs[:, c] * target[:, c]).sum())
        denom = float(probs[:, c].sum() + target[:, c].sum())
        total += (2.0 * inter + smooth) / (denom + smooth)
    return 1.0 - total / len(foreground)


def make_probs(rng, n=1, c=2, h=4, w=4):
    logits = rng.normal(size=(n, c, h, w))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class TestDiceLoss:
    def test_perfect_binary_prediction_is_zero(self):
        labels = np.array([[0, 1], [1, 0]])
        target = one_hot(labels, 2, dtype=np.float64)
        assert dice_loss(Tensor(target), Tensor(target), (1,)).data == pytest.approx(0.0)

    def test_total_miss(self):
        # 3 foreground target pixels, zero predicted: 1 - 1/(3+1) = 0.75
        target = one_hot(np.array([[1, 1], [1, 0]]), 2, dtype=np.float64)
        pred = one_hot(np.array([[0, 0], [0, 0]]), 2, dtype=np.float64)
        assert dice_loss(Tensor(pred), Tensor(target), (1,)).data == pytest.approx(0.75)

    def test_smoothing_handles_empty_masks(self):
        empty = one_hot(np.zeros((2, 2), int), 2, dtype=np.float64)
        assert dice_loss(Tensor(empty), Tensor(empty), (1,)).data == pytest.approx(0.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        probs = make_probs(rng, n=2, c=3)
        target = one_hot(rng.integers(0, 3, size=(2, 4, 4)), 3, dtype=np.float64)
        got = dice_loss(Tensor(probs), Tensor(target), (1, 2), smooth=1.0).data
        assert got == pytest.approx(soft_dice_oracle(probs, target, (1, 2), 1.0))

    def test_half_overlap_example(self):
        # prediction and target each cover 2 pixels, sharing 1:
        # 1 - (2*1 + 1)/(2 + 2 + 1) = 0.4
        pred = one_hot(np.array([[1, 1], [0, 0]]), 2, dtype=np.float64)
        target = one_hot(np.array([[1, 0], [1, 0]]), 2, dtype=np.float64)
        assert dice_loss(Tensor(pred), Tensor(target), (1,)).data == pytest.approx(0.4)

    def test_empty_foreground_rejected(self):
        t = one_hot(np.zeros((2, 2), int), 2, dtype=np.float64)
        with pytest.raises(ValueError, match="foreground"):
            dice_loss(Tensor(t), Tensor(t), ())


class TestFocalLoss:
    def test_gamma_zero_is_cross_entropy(self):
        probs = np.full((1, 2, 2, 2), 0.5)
        target = one_hot(np.zeros((1, 2, 2), int), 2, dtype=np.float64)
        got = focal_loss(Tensor(probs), Tensor(target), gamma=0.0).data
        assert got == pytest.approx(np.log(2.0))

    def test_uniform_probs_with_default_gamma(self):
        # p_t = 0.5 everywhere: (1 - 0.5)^0.5 * log 2
        probs = np.full((1, 2, 2, 2), 0.5)
        target = one_hot(np.zeros((1, 2, 2), int), 2, dtype=np.float64)
        got = focal_loss(Tensor(probs), Tensor(target), gamma=0.5).data
        assert got == pytest.approx(np.sqrt(0.5) * np.log(2.0))

    def test_downweights_easy_pixels(self):
        easy = np.zeros((1, 2, 1, 1))
        easy[0, 0] = 0.95
        easy[0, 1] = 0.05
        target = one_hot(np.zeros((1, 1, 1), int), 2, dtype=np.float64)
        focal = focal_loss(Tensor(easy), Tensor(target), gamma=0.5).data
        ce = focal_loss(Tensor(easy), Tensor(target), gamma=0.0).data
        assert focal < ce

    def test_confident_correct_prediction_is_finite_zero(self):
        target = one_hot(np.zeros((2, 2), int), 2, dtype=np.float64)
        got = focal_loss(Tensor(target.copy()), Tensor(target)).data
        assert np.isfinite(got)
        assert got == pytest.approx(0.0, abs=1e-5)

    def test_gradient_finite_at_saturation(self):
        target = one_hot(np.zeros((1, 2, 2), int), 2, dtype=np.float64)
        probs = Tensor(np.clip(target[None] * 1.0, 1e-9, 1 - 1e-9)[0],
                       requires_grad=True)
        focal_loss(probs, Tensor(target)).backward()
        assert np.isfinite(probs.grad).all()

    def test_scalar_loop_oracle(self):
        rng = np.random.default_rng(1)
        probs = make_probs(rng, n=1, c=3, h=3, w=3)
        labels = rng.integers(0, 3, size=(1, 3, 3))
        target = one_hot(labels, 3, dtype=np.float64)
        expected = 0.0
        for i in range(3):
            for j in range(3):
                pt = probs[0, labels[0, i, j], i, j]
                expected += -((1 - pt) ** 0.5) * np.log(pt)
        expected /= 9
        got = focal_loss(Tensor(probs), Tensor(target), gamma=0.5).data
        assert got == pytest.approx(expected)


class TestSigmaPenalty:
    def test_no_attention_layers_gives_zero(self):
        assert sigma_penalty([]).data == 0.0

    def test_single_layer_value(self):
        s = Tensor(np.array([[0.5, 0.5]]))
        assert sigma_penalty([s], eta=1e-4).data == pytest.approx(5e-5)

    def test_sums_layers_averages_batch(self):
        a = Tensor(np.array([[1.0], [0.0]]))   # batch mean of squares: 0.5
        b = Tensor(np.array([[2.0], [2.0]]))   # 4.0
        assert sigma_penalty([a, b], eta=1.0).data == pytest.approx(4.5)

    def test_zero_eta_disables(self):
        s = Tensor(np.array([[0.7, 0.7]]))
        assert sigma_penalty([s], eta=0.0).data == pytest.approx(0.0)


class TestCombinedLoss:
    def test_composition(self):
        rng = np.random.default_rng(2)
        probs = make_probs(rng)
        target = one_hot(rng.integers(0, 2, size=(1, 4, 4)), 2, dtype=np.float64)
        sig = [Tensor(np.array([[0.5, 0.25]]))]
        cfg = LossConfig()
        total = combined_loss(Tensor(probs), Tensor(target), sig, cfg).data
        expected = (dice_loss(Tensor(probs), Tensor(target), (1,)).data
                    + 0.1 * focal_loss(Tensor(probs), Tensor(target), 0.5).data
                    + 1e-4 * (0.25 + 0.0625))
        assert total == pytest.approx(expected)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        target = one_hot(rng.integers(0, 2, size=(1, 4, 4)), 2, dtype=np.float64)
        cfg = LossConfig()

        def f(logits):
            probs = logits.softmax(axis=1)
            return combined_loss(probs, Tensor(target), [], cfg)

        x = Tensor(rng.normal(size=(1, 2, 4, 4)))
        assert finite_difference_check(f, x) <= 1e-4

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LossConfig(focal_weight=-0.1)
        with pytest.raises(ValueError):
            LossConfig(dice_smooth=0.0)


class TestDiceScore:
    def test_identical_masks(self):
        m = np.array([[0, 1], [1, 1]])
        per_class, mean = dice_score(m, m)
        assert per_class[1] == 1.0 and mean == 1.0

    def test_disjoint_masks(self):
        a = np.array([[1, 0], [0, 0]])
        b = np.array([[0, 0], [0, 1]])
        assert dice_score(a, b)[1] == 0.0

    def test_partial_overlap(self):
        a = np.array([[1, 1], [0, 0]])
        b = np.array([[1, 0], [1, 0]])
        assert dice_score(a, b)[1] == pytest.approx(0.5)

    def test_both_empty_counts_as_one(self):
        z = np.zeros((3, 3), int)
        assert dice_score(z, z)[1] == 1.0

    def test_multiclass_mean(self):
        a = np.array([[1, 2], [0, 0]])
        b = np.array([[1, 0], [0, 2]])
        per_class, mean = dice_score(a, b, foreground=(1, 2))
        assert per_class[1] == 1.0
        assert per_class[2] == 0.0
        assert mean == pytest.approx(0.5)


class TestOneHot:
    def test_roundtrip_argmax(self):
        rng = np.random.default_rng(4)
        labels = rng.integers(0, 3, size=(2, 5, 5))
        oh = one_hot(labels, 3)
        assert oh.shape == (2, 3, 5, 5)
        assert np.array_equal(oh.argmax(axis=1), labels)
        assert np.allclose(oh.sum(axis=1), 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_dice_loss_bounded(seed):
    rng = np.random.default_rng(seed)
    probs = make_probs(rng)
    target = one_hot(rng.integers(0, 2, size=(1, 4, 4)), 2, dtype=np.float64)
    val = dice_loss(Tensor(probs), Tensor(target), (1,)).data
    assert 0.0 <= val <= 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_dice_score_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, size=(6, 6))
    b = rng.integers(0, 2, size=(6, 6))
    _, ab = dice_score(a, b)
    _, ba = dice_score(b, a)
    assert ab == ba
    assert 0.0 <= ab <= 1.0
