"""Cross-modal translation: attention geometry and the alignment loss."""

import math

import numpy as np
import pytest
import torch
from scipy.optimize import nnls

from prosurv.prototypes import PrototypeBank
from prosurv.translation import CrossModalTranslator, alignment_loss

from fdutil import check_gradients


def identity_projections(translator):
    with torch.no_grad():
        for layer in (translator.query, translator.key, translator.value):
            layer.weight.copy_(torch.eye(translator.embed_dim))


class TestCrossModalTranslator:
    def test_degenerate_bank_returns_its_value_projection(self):
        """When every prototype is the same vector, attention cannot matter."""
        torch.manual_seed(0)
        translator = CrossModalTranslator(embed_dim=6)
        bank = PrototypeBank(2, 3, 6, seed=1)
        row = torch.randn(6)
        with torch.no_grad():
            bank.weight.copy_(row.expand(2, 3, 6))
            for feature in (torch.randn(6), torch.zeros(6), 10 * torch.randn(6)):
                out = translator(feature, bank)
                np.testing.assert_allclose(
                    out.numpy(), translator.value(row).numpy(), rtol=1e-5, atol=1e-6
                )

    def test_small_temperature_approaches_argmax_row(self):
        """With one strictly dominant score, a cold softmax picks that row."""
        translator = CrossModalTranslator(embed_dim=4, temperature=1e-2)
        identity_projections(translator)
        bank = PrototypeBank(2, 2, 4, seed=2)
        feature = torch.tensor([1.0, 0.0, 0.0, 0.0])
        with torch.no_grad():
            bank.weight.copy_(torch.randn(2, 2, 4, generator=torch.Generator().manual_seed(3)))
            bank.weight[1, 1] = torch.tensor([5.0, 0.0, 0.0, 0.0])
            out = translator(feature, bank)
        np.testing.assert_allclose(out.numpy(), [5.0, 0.0, 0.0, 0.0], atol=1e-4)

    def test_two_row_hand_computation(self):
        """Identity projections reduce the layer to a softmax we can do by
        hand."""
        translator = CrossModalTranslator(embed_dim=2, temperature=0.5)
        identity_projections(translator)
        bank = PrototypeBank(2, 1, 2, seed=4)
        with torch.no_grad():
            bank.weight.copy_(torch.tensor([[[1.0, 0.0]], [[0.0, 1.0]]]))
            out, attention = translator(
                torch.tensor([1.0, 0.0]), bank, return_attention=True
            )
        score = 1.0 / (0.5 * math.sqrt(2.0))
        expected_first = math.exp(score) / (math.exp(score) + 1.0)
        np.testing.assert_allclose(
            attention.numpy(), [expected_first, 1.0 - expected_first], rtol=1e-6
        )
        np.testing.assert_allclose(
            out.numpy(), [expected_first, 1.0 - expected_first], rtol=1e-6
        )

    def test_attention_is_a_probability_vector(self):
        """Weights are non-negative and sum to 1 within 1e-6, even for
        large-magnitude inputs."""
        rng = np.random.default_rng(5)
        translator = CrossModalTranslator(embed_dim=5).double()
        bank = PrototypeBank(2, 4, 5, seed=6).double()
        with torch.no_grad():
            for scale in (1.0, 10.0, 100.0):
                bank.weight.copy_(torch.from_numpy(rng.normal(scale=scale, size=(2, 4, 5))))
                feature = torch.from_numpy(rng.normal(scale=scale, size=5))
                _, attention = translator(feature, bank, return_attention=True)
                assert float(attention.min()) >= 0.0
                np.testing.assert_allclose(float(attention.sum()), 1.0, rtol=0, atol=1e-6)

    def test_output_lies_in_convex_hull_of_value_rows(self):
        """Non-negative least squares recovers the output as a convex
        combination of value-projected prototypes, without reusing the
        layer's own weights."""
        rng = np.random.default_rng(7)
        for trial in range(100):
            d = int(rng.integers(2, 6))
            per_bin = int(rng.integers(1, 5))
            translator = CrossModalTranslator(embed_dim=d).double()
            bank = PrototypeBank(2, per_bin, d, seed=trial).double()
            with torch.no_grad():
                feature = torch.from_numpy(rng.normal(size=d))
                out = translator(feature, bank).numpy()
                values = translator.value(bank.flat()).numpy()
            constraint = 10.0
            system = np.vstack([values.T, constraint * np.ones((1, values.shape[0]))])
            target = np.concatenate([out, [constraint]])
            coefficients, residual = nnls(system, target)
            assert residual < 1e-6
            assert (coefficients >= 0).all()

    def test_rejects_bad_temperature(self):
        with pytest.raises(ValueError, match="temperature"):
            CrossModalTranslator(embed_dim=4, temperature=0.0)

    def test_rejects_width_mismatch(self):
        translator = CrossModalTranslator(embed_dim=4)
        with pytest.raises(ValueError, match="width"):
            translator(torch.randn(3), PrototypeBank(2, 2, 4, seed=8))
        with pytest.raises(ValueError, match="width"):
            translator(torch.randn(4), PrototypeBank(2, 2, 6, seed=9))

    def test_detach_bank_blocks_bank_gradients_only(self):
        torch.manual_seed(10)
        translator = CrossModalTranslator(embed_dim=4)
        bank = PrototypeBank(2, 2, 4, seed=11)
        feature = torch.randn(4)
        translator(feature, bank, detach_bank=True).sum().backward()
        assert bank.weight.grad is None
        assert translator.value.weight.grad is not None
        translator.zero_grad()
        translator(feature, bank).sum().backward()
        assert bank.weight.grad is not None

    def test_gradients_match_central_differences(self):
        """Feature, bank and all three projections agree with finite
        differences."""
        torch.manual_seed(12)
        translator = CrossModalTranslator(embed_dim=5).double()
        bank = PrototypeBank(2, 2, 5, seed=13).double()
        feature = torch.randn(5, dtype=torch.float64, requires_grad=True)
        target = torch.randn(5, dtype=torch.float64)
        tensors = [
            feature,
            bank.weight,
            translator.query.weight,
            translator.key.weight,
            translator.value.weight,
        ]
        check_gradients(
            lambda: alignment_loss(target, translator(feature, bank)), tensors, tol=1e-4
        )


class TestAlignmentLoss:
    def test_zero_iff_identical(self):
        x = torch.tensor([1.5, -2.0, 0.25])
        assert float(alignment_loss(x, x.clone())) == 0.0
        assert float(alignment_loss(x, x + 1e-3)) > 0.0

    def test_unit_basis_hand_value(self):
        loss = alignment_loss(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0]))
        np.testing.assert_allclose(float(loss), 2.0, rtol=1e-7)

    def test_quadratic_in_the_gap(self):
        rng = np.random.default_rng(14)
        a = torch.from_numpy(rng.normal(size=6))
        b = torch.from_numpy(rng.normal(size=6))
        base = float(alignment_loss(a, b))
        scaled = float(alignment_loss(a, a + 3.0 * (b - a)))
        np.testing.assert_allclose(scaled, 9.0 * base, rtol=1e-10)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            alignment_loss(torch.zeros(3), torch.zeros(4))
