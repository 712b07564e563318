import numpy as np
import pytest

from mtal.adversary import (
    assemble_combo,
    combo_width,
    discriminator_accuracy,
    loss_adv_recognizer,
    loss_discriminator,
    loss_recognizer_total,
    slice_combo,
    subset_fields,
)
from mtal.errors import ConfigurationError
from mtal.losses import LabelBundle, LossWeights
from mtal.models import Discriminator, Recognizer
from mtal.tensor import Tape, Tensor, backward, zero_grads

LN2 = np.log(2.0)


def random_bundle(rng, batch=4, m=5, k=13):
    return LabelBundle(
        landmarks=rng.random((batch, 2 * m)),
        visibility=(rng.random((batch, m)) < 0.7).astype(float),
        pose=np.eye(k)[rng.integers(0, k, batch)],
        gender=(rng.random((batch, 1)) < 0.5).astype(float),
    )


class TestAssemble:
    def test_lv_width_for_m5(self):
        assert combo_width("lv", m=5) == 15

    def test_all_width(self):
        assert combo_width("all", m=5, pose_width=13) == 29
        assert combo_width("attr", n_attributes=12) == 12

    def test_round_trip_recovers_fields(self):
        rng = np.random.default_rng(0)
        bundle = random_bundle(rng)
        combo = assemble_combo(bundle, "all")
        parts = slice_combo(combo.data, "all", m=5, pose_width=13)
        np.testing.assert_array_equal(parts["landmarks"], bundle.landmarks)
        np.testing.assert_array_equal(parts["visibility"], bundle.visibility)
        np.testing.assert_array_equal(parts["pose"], bundle.pose)
        np.testing.assert_array_equal(parts["gender"], bundle.gender)

    def test_missing_field_is_configuration_error(self):
        bundle = LabelBundle(landmarks=np.zeros((1, 10)))
        with pytest.raises(ConfigurationError):
            assemble_combo(bundle, "lv")

    def test_unknown_subset(self):
        with pytest.raises(ConfigurationError):
            subset_fields("lvgp")

    def test_none_subset_has_no_combo(self):
        with pytest.raises(ConfigurationError):
            assemble_combo(LabelBundle(), "none")

    def test_injective_on_covered_fields(self):
        rng = np.random.default_rng(1)
        a = random_bundle(rng)
        b = random_bundle(rng)
        ca = assemble_combo(a, "all").data
        cb = assemble_combo(b, "all").data
        assert not np.array_equal(ca, cb)

    def test_continuous_pose_scaled(self):
        bundle = LabelBundle(
            landmarks=np.zeros((1, 10)), visibility=np.ones((1, 5)),
            pose=np.array([[0.0, 0.0, 45.0]]), gender=np.ones((1, 1)),
        )
        combo = assemble_combo(bundle, "all", pose_scale=1.0 / 90.0)
        np.testing.assert_allclose(combo.data[0, 15:18], [0.0, 0.0, 0.5])


class TestAdversarialLosses:
    def test_fooled_at_half_is_ln2(self):
        assert loss_adv_recognizer(Tensor([[0.5]])).item() == pytest.approx(LN2, abs=1e-12)

    def test_fully_fooled_near_zero(self):
        assert loss_adv_recognizer(Tensor([[1.0]])).item() < 1e-10

    def test_monotone_in_d_output(self):
        low = loss_adv_recognizer(Tensor([[0.1]])).item()
        high = loss_adv_recognizer(Tensor([[0.9]])).item()
        assert high < low

    def test_discriminator_symmetric_case(self):
        out = loss_discriminator(Tensor([[0.5]]), Tensor([[0.5]]))
        assert out.item() == pytest.approx(2 * LN2, abs=1e-12)

    def test_perfect_discrimination_near_zero(self):
        out = loss_discriminator(Tensor([[1.0]]), Tensor([[0.0]]))
        assert 0.0 <= out.item() < 1e-10

    def test_saddle_point_bound(self):
        # For a fixed D output d, the recognizer term -log d plus the fake
        # half of the discriminator loss -log(1-d) is at least 2 ln 2, with
        # equality exactly at d = 1/2.
        rng = np.random.default_rng(2)
        for _ in range(50):
            d = Tensor([[float(rng.uniform(1e-6, 1 - 1e-6))]])
            fake_half = (loss_discriminator(Tensor([[1.0]]), d).item()
                         - loss_discriminator(Tensor([[1.0]]), Tensor([[0.0]])).item())
            combined = loss_adv_recognizer(d).item() + fake_half
            assert combined >= 2 * LN2 - 1e-9
        at_half = (loss_adv_recognizer(Tensor([[0.5]])).item()
                   + loss_discriminator(Tensor([[1.0]]), Tensor([[0.5]])).item()
                   - loss_discriminator(Tensor([[1.0]]), Tensor([[0.0]])).item())
        assert at_half == pytest.approx(2 * LN2, abs=1e-9)

    def test_total_recovers_supervised_when_weight_zero(self):
        w = LossWeights(adversarial=0.0)
        total = loss_recognizer_total(Tensor(2.0), Tensor(0.5), w)
        assert total.item() == 2.0

    def test_total_hand_case(self):
        w = LossWeights(adversarial=1.0)
        assert loss_recognizer_total(Tensor(2.0), Tensor(0.5), w).item() == 2.5

    def test_total_linear_in_weight(self):
        a = loss_recognizer_total(Tensor(1.0), Tensor(0.5), LossWeights(adversarial=0.2)).item()
        b = loss_recognizer_total(Tensor(1.0), Tensor(0.5), LossWeights(adversarial=0.4)).item()
        assert (b - a) == pytest.approx(0.1, abs=1e-12)


def test_detached_fake_path_leaves_recognizer_gradient_zero():
    rng = np.random.default_rng(3)
    recognizer = Recognizer(in_dim=6, trunk=(8,), m=2, pose_bins=4,
                            rng=np.random.default_rng(4))
    disc = Discriminator(combo_width("all", m=2, pose_width=4), rng=np.random.default_rng(5))
    x = rng.normal(size=(3, 6))
    truth = random_bundle(rng, batch=3, m=2, k=4)

    zero_grads(recognizer.parameters())
    zero_grads(disc.parameters())
    from mtal.losses import bundle_values
    fake_values = bundle_values(recognizer.forward(x))  # off-tape forward = detached
    with Tape() as tape:
        d_real = disc.forward(assemble_combo(truth, "all"))
        d_fake = disc.forward(assemble_combo(fake_values, "all"))
        loss = loss_discriminator(d_real, d_fake)
    backward(loss, tape)
    for p in recognizer.parameters():
        np.testing.assert_array_equal(p.grad, np.zeros_like(p.data))
    assert any(np.any(p.grad != 0) for p in disc.parameters())


def test_discriminator_accuracy_counts():
    real = np.array([[0.9], [0.4]])
    fake = np.array([[0.2], [0.6]])
    assert discriminator_accuracy(real, fake) == 0.5
