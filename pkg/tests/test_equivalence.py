import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from engine.layers import DenseStdParams, dense_std_forward
from tools.equivalence import (
    ChainSpec,
    dac1d_to_two_layer_standard,
    evaluate_chain,
    evaluate_dac1d,
    non_equivalence_witness,
    normalize_hidden_layer,
    preactivated_to_dac,
    random_standard_chain,
    replicate_input,
    run_equivalence,
    split_replicated_layer,
    standard_replication_collapse,
    standard_to_preactivated_shared,
)
from utils.errors import ContractError, ShapeError


class TestChainRewrites:
    """Переписывание стандартной цепочки в предактивированную и DAC-форму."""

    @pytest.mark.parametrize("layers,width", [(1, 4), (3, 8), (5, 3)])
    def test_preactivated_matches_standard(self, rng, layers, width):
        """Предактивированная цепочка с общими смещениями совпадает со стандартной."""
        chain = random_standard_chain(rng, layers, width)
        x = rng.normal(size=(50, width))
        rewritten = standard_to_preactivated_shared(chain)
        deviation = np.max(np.abs(evaluate_chain(chain, x) - evaluate_chain(rewritten, x)))
        assert deviation <= 1e-12

    def test_first_layer_reads_raw_inputs(self, rng):
        """Первый слой предактивированной цепочки не фильтрует вход."""
        rewritten = standard_to_preactivated_shared(random_standard_chain(rng, 3, 4))
        assert rewritten.layers[0].input_bias is None
        assert all(layer.input_bias is not None for layer in rewritten.layers[1:])
        assert rewritten.final_bias is not None

    def test_dac_form_matches(self, rng):
        """DAC-цепочка с b_ij = b_j совпадает с исходной."""
        chain = random_standard_chain(rng, 4, 6, in_features=3)
        dac = preactivated_to_dac(standard_to_preactivated_shared(chain))
        x = rng.normal(size=(40, 3))
        assert dac.flavor == "dac"
        assert dac.stem.shape == (6, 3)
        for layer in dac.layers:
            assert np.all(layer.dac_biases == layer.dac_biases[0])
        np.testing.assert_allclose(evaluate_chain(dac, x), evaluate_chain(chain, x), atol=1e-10)

    def test_wrong_flavor_rejected(self, rng):
        """Переписывание проверяет вид цепочки."""
        chain = random_standard_chain(rng, 2, 3)
        with pytest.raises(ContractError):
            preactivated_to_dac(chain)
        with pytest.raises(ContractError):
            standard_to_preactivated_shared(standard_to_preactivated_shared(chain))

    def test_non_relu_layer_rejected(self, rng):
        """Стандартная цепочка должна использовать relu во всех слоях."""
        chain = ChainSpec("standard", (DenseStdParams(rng.normal(size=(2, 2)), np.zeros(2)),))
        with pytest.raises(ContractError):
            standard_to_preactivated_shared(chain)

    def test_dimension_mismatch(self, rng):
        """Соседние слои должны быть согласованы по ширине."""
        with pytest.raises(ShapeError):
            ChainSpec(
                "standard",
                (
                    DenseStdParams(rng.normal(size=(3, 2)), out_activation="relu"),
                    DenseStdParams(rng.normal(size=(2, 4)), out_activation="relu"),
                ),
            )

    def test_run_equivalence_report(self):
        """Отчет проверки эквивалентности проходит допуск."""
        report = run_equivalence(layers=3, width=8, seed=0, samples=100)
        assert report.passed
        assert report.max_deviation <= report.tolerance == 1e-12

    def test_run_equivalence_single_layer(self):
        """Для одного слоя отклонение нулевое в пределах округления."""
        assert run_equivalence(layers=1, width=5, seed=7, samples=20).max_deviation <= 1e-12


class TestReplication:
    """Репликация входа перед стандартным слоем."""

    def test_replicate_input(self):
        """Копии входа склеиваются по последней оси."""
        np.testing.assert_array_equal(replicate_input(np.array([[1.0, 2.0]]), 3), [[1, 2, 1, 2, 1, 2]])

    def test_replication_count_checked(self):
        with pytest.raises(ContractError):
            replicate_input(np.ones(2), 0)

    @settings(max_examples=25, deadline=None)
    @given(
        seed=st.integers(0, 2**31 - 1),
        m=st.integers(1, 5),
        n=st.integers(1, 5),
        r=st.integers(1, 4),
    )
    def test_collapse_preserves_outputs(self, seed, m, n, r):
        """Слой над r копиями входа равен свернутому слою над исходным входом."""
        rng = np.random.default_rng(seed)
        original = DenseStdParams(rng.normal(size=(n, m)), rng.normal(size=n), "relu")
        replicated = split_replicated_layer(original, r, rng)
        collapsed = standard_replication_collapse(replicated, r)
        x = rng.normal(size=(7, m))
        wide = dense_std_forward(replicated, replicate_input(x, r))
        np.testing.assert_allclose(wide, dense_std_forward(collapsed, x), atol=1e-10)
        np.testing.assert_allclose(collapsed.weights, original.weights, atol=1e-10)

    def test_collapse_rejects_bad_width(self, rng):
        """Число входов должно делиться на число копий."""
        with pytest.raises(ShapeError):
            standard_replication_collapse(DenseStdParams(rng.normal(size=(2, 5))), 2)


class TestOneDimensionalUnit:
    """Одномерный DAC-нейрон и его двухслойная стандартная форма."""

    def test_normalize_hidden_layer(self, rng):
        """Нормировка скрытых весов до +-1 не меняет функцию."""
        w0 = rng.normal(size=6)
        w = np.array([2.0, -0.5, 0.0, 1.5, -3.0, 0.25])
        b = rng.normal(size=6)
        net = normalize_hidden_layer(w0, w, b, outer_bias=0.3)
        x = np.linspace(-3, 3, 101)
        reference = np.maximum(b + x[:, None] * w, 0) @ w0 + 0.3
        assert set(np.abs(net.hidden_weights).tolist()) == {1.0}
        assert net.width == 5
        np.testing.assert_allclose(net.evaluate(x), reference, atol=1e-12)

    def test_dac_unit_equals_two_layer_form(self, rng):
        """DAC-нейрон равен двухслойной сети с единичными скрытыми весами."""
        w = rng.normal(size=5)
        b = rng.normal(size=5)
        x = np.linspace(-2, 2, 81)
        net = dac1d_to_two_layer_standard(w, b)
        assert np.all(net.hidden_weights == 1.0)
        np.testing.assert_allclose(evaluate_dac1d(w, b, x), net.evaluate(x), atol=1e-12)

    def test_mismatched_coefficients(self):
        with pytest.raises(ShapeError):
            evaluate_dac1d(np.ones(2), np.ones(3), np.zeros(4))


class TestWitness:
    """Поиск общих смещений для DAC-экземпляра с разными порогами."""

    def test_shared_bias_cannot_represent(self):
        """Лучшее отклонение на сетке заметно больше нуля."""
        report = non_equivalence_witness()
        assert report.best_deviation > 0.1
        assert not report.representable
        assert report.candidates_tried == 41 * 41 * 41
