import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from engine.executor import count_parameters
from models.network import LayerSpec, NetworkSpec
from tools.approximator import spike_nd_deep_network
from tools.complexity import (
    compare_reports,
    flops_conv,
    flops_dense,
    flops_sparse,
    model_report,
    run_flops,
    total_flops,
    weights_conv,
    weights_dense,
)
from tools.resnet import preset
from utils.errors import ContractError, ShapeError


def single_layer(layer: LayerSpec, input_shape) -> NetworkSpec:
    return NetworkSpec(name=layer.name, input_shape=list(input_shape), layers=[layer])


class TestFormulas:
    """Замкнутые формулы FLOPs и весов."""

    def test_dense_values(self):
        """Плотные слои: (2m+1)n и (3m+1)n FLOPs, (m+1)n и (2m+1)n весов."""
        assert flops_dense("std", 3, 2) == 14
        assert flops_dense("dac", 3, 2) == 20
        assert weights_dense("std", 3, 2) == 8
        assert weights_dense("dac", 3, 2) == 14

    def test_conv_values(self):
        """Свертки: DAC добавляет m n s t на плоскость активаций."""
        assert flops_conv("std", 3, 2, 4, 5, 5) == (2 * 9 * 2 + 1) * 4 * 25
        assert flops_conv("dac", 3, 2, 4, 5, 5) == 2 * 4 * 25 + (2 * 9 * 2 + 1) * 4 * 25
        assert flops_conv("dac", 3, 2, 4, 5, 5, in_s=10, in_t=10) == 2 * 4 * 100 + (2 * 9 * 2 + 1) * 4 * 25
        assert weights_conv("std", 3, 2, 4) == (9 * 2 + 1) * 4
        assert weights_conv("dac", 3, 2, 4) == (2 * 10 + 1) * 4

    def test_sparse_values(self):
        assert flops_sparse(10, 3) == 33

    def test_overhead_limits(self):
        """Отношения DAC/std стремятся к 1.5, 1 + 1/(2L^2) и 1 + 1/L^2."""
        m = 10**6
        assert flops_dense("dac", m, 1) / flops_dense("std", m, 1) == pytest.approx(1.5, rel=1e-6)
        for L in (1, 3, 5):
            flops_ratio = flops_conv("dac", L, m, 4, 8, 8) / flops_conv("std", L, m, 4, 8, 8)
            weights_ratio = weights_conv("dac", L, m, 4) / weights_conv("std", L, m, 4)
            assert flops_ratio == pytest.approx(1 + 1 / (2 * L * L), rel=1e-6)
            assert weights_ratio == pytest.approx(1 + 1 / (L * L), rel=1e-6)

    def test_invalid_arguments(self):
        """Неизвестный вид, четное ядро и нулевые размеры отклоняются."""
        with pytest.raises(ContractError):
            flops_dense("wide", 2, 2)
        with pytest.raises(ContractError):
            flops_conv("std", 2, 1, 1, 1, 1)
        with pytest.raises(ContractError):
            weights_dense("std", 0, 2)


class TestInstrumented:
    """Инструментированный подсчет совпадает с формулами."""

    @settings(max_examples=25, deadline=None)
    @given(
        m=st.integers(1, 12),
        n=st.integers(1, 12),
        dac=st.booleans(),
        use_bias=st.booleans(),
    )
    def test_dense(self, m, n, dac, use_bias):
        """Плотный слой любой ширины."""
        kind = "dense_dac" if dac else "dense_std"
        spec = single_layer(LayerSpec(kind=kind, name="d", out_features=n, use_bias=use_bias), [m])
        entry = model_report(spec).entries[0]
        assert entry.flops_instrumented == entry.flops_formula == flops_dense("dac" if dac else "std", m, n)
        assert entry.weights == (weights_dense("dac" if dac else "std", m, n) - (0 if use_bias else n))

    @settings(max_examples=25, deadline=None)
    @given(
        size=st.sampled_from([1, 3, 5]),
        m=st.integers(1, 4),
        n=st.integers(1, 4),
        side=st.integers(5, 9),
        stride=st.sampled_from([1, 2]),
        padding=st.sampled_from(["same", "valid"]),
        dac=st.booleans(),
    )
    def test_conv(self, size, m, n, side, stride, padding, dac):
        """Свертка любой формы, шага и заполнения."""
        layer = LayerSpec(
            kind="conv_dac" if dac else "conv_std",
            name="c",
            out_channels=n,
            kernel_size=size,
            stride=stride,
            padding=padding,
        )
        entry = model_report(single_layer(layer, [side, side + 1, m])).entries[0]
        assert entry.covered
        assert entry.flops_instrumented == entry.flops_formula

    def test_uncached_dac_conv_costs_more(self):
        """Без кэширования активации пересчитываются для каждого смещения ядра."""
        layer = LayerSpec(kind="conv_dac", name="c", out_channels=4, kernel_size=3)
        spec = single_layer(layer, [6, 6, 2])
        cached = model_report(spec, cached=True).entries[0].flops_instrumented
        uncached = model_report(spec, cached=False).entries[0].flops_instrumented
        assert uncached - cached == 9 * 2 * 4 * 36 - 2 * 4 * 36

    def test_sparse_network(self):
        """Разреженные слои пика: формула 3E + n совпадает с подсчетом."""
        report = model_report(spike_nd_deep_network(3))
        for entry in report.entries:
            assert entry.flops_instrumented == entry.flops_formula
        assert report.totals.flops_uncovered == 0

    def test_input_shape_override(self):
        """Другая форма входа меняет подсчет, несовместимая дает ShapeError."""
        spec = preset("resnet20")
        small = model_report(spec, [16, 16, 3])
        assert small.input_shape == [16, 16, 3]
        with pytest.raises(ShapeError):
            model_report(spec, [16, 16])


class TestResNetComplexity:
    """Сложность ResNet20 и ее DAC-варианта."""

    def test_parameter_counts(self):
        """269 722 параметра у ResNet20 v1 и 298 842 у DAC-варианта."""
        assert count_parameters(preset("resnet20")) == 269_722
        assert count_parameters(preset("resnet20-dac")) == 298_842

    def test_report_weights_match_parameter_count(self):
        report = model_report(preset("resnet20-dac"))
        assert report.totals.weights == 298_842

    def test_flops_ratio(self):
        """Отношение FLOPs DAC/std для ResNet20 около 1.065."""
        report = run_flops(preset("resnet20-dac"), baseline=preset("resnet20"))
        ratios = report.dac_overhead_ratios
        assert ratios["flops"] == pytest.approx(1.065, rel=0.01)
        assert ratios["weights"] == pytest.approx(298_842 / 269_722)
        assert "DAC/std ratios" in report.to_text()

    def test_compare_reports(self):
        """Сравнение отчетов делит полные FLOPs."""
        std = model_report(preset("dense-std"))
        dac = model_report(preset("dense-dac"))
        ratios = compare_reports(std, dac).dac_overhead_ratios
        assert ratios["flops"] == total_flops(dac) / total_flops(std)
        assert ratios["flops_formula"] == pytest.approx((3 * 16 + 1) / (2 * 16 + 1))
        assert np.isclose(ratios["weights"], (2 * 16 + 1) / (16 + 1))

    def test_flops_ratio_at_80x80(self):
        """При входе 80x80x3 отношение остается около 0.542 / 0.509."""
        report = run_flops(preset("resnet20-dac"), [80, 80, 3], baseline=preset("resnet20"))
        assert report.dac_overhead_ratios["flops"] == pytest.approx(0.542 / 0.509, rel=0.01)

    def test_ratio_precision_at_finite_width(self):
        """m = 1024 для плотного слоя и m = 256, L = 3 для свертки."""
        assert flops_dense("dac", 1024, 8) / flops_dense("std", 1024, 8) == pytest.approx(1.5, abs=0.001)
        conv = flops_conv("dac", 3, 256, 8, 8, 8) / flops_conv("std", 3, 256, 8, 8, 8)
        assert conv == pytest.approx(1 + 1 / 18, abs=0.005)
        weights = weights_conv("dac", 3, 256, 8) / weights_conv("std", 3, 256, 8)
        assert weights == pytest.approx(1 + 1 / 9, abs=0.005)
