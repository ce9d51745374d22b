import math

import numpy as np
import pytest

from engine.executor import NetworkRunner
from engine.layers import dense_dac_forward
from tools.approximator import (
    approx_1d,
    approx_nd,
    build_plan,
    certify,
    default_shrink,
    layer_widths,
    max_fan_in,
    modulus_of_continuity,
    normalization_const,
    partition_axis,
    riemann_sum,
    run_approximation,
    search_params,
    select_params,
    spike_1d,
    spike_1d_as_dac,
    spike_nd,
    spike_nd_deep_network,
    spike_nd_shallow_network,
)
from tools.equivalence import replicate_input
from tools.targets import get_target, resolve_target, table_target, uniform_grid
from utils.errors import ContractError, DatasetError, ParameterSearchError
from utils.file_utils import write_table_csv


def predict(net, x):
    return NetworkRunner(net).predict(x)[:, 0]


class TestSpikes:
    """Тесты функции-пика и ее DAC-реализаций."""

    def test_spike_values(self):
        """psi_d(0) = 1, на границе и за ней 0."""
        assert spike_1d(np.array([0.0, 0.5, 1.0, -2.0])).tolist() == [1.0, 0.5, 0.0, 0.0]
        assert spike_nd(np.array([[0.25, -0.25], [1.0, 0.5]])).tolist() == [0.5, 0.0]

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_normalization_integral(self, d):
        """Интеграл нормированного пика равен 1."""
        cells = {1: 4000, 2: 400, 3: 80}[d]
        axis = partition_axis(cells)
        grids = np.meshgrid(*([axis] * d), indexing="ij")
        points = np.stack([g.ravel() for g in grids], axis=1)
        integral = normalization_const(d) * spike_nd(points).sum() * (2.0 / cells) ** d
        assert integral == pytest.approx(1.0, abs=2e-3)

    def test_normalization_constants(self):
        """C_1 = 1, C_2 = 3/2, C_3 = 3."""
        assert normalization_const(1) == 1.0
        assert normalization_const(2) == 1.5
        assert normalization_const(3) == 3.0
        with pytest.raises(ContractError):
            normalization_const(0)

    def test_1d_spike_as_dac_unit(self):
        """Одномерный пик как один DAC-нейрон над тремя копиями входа."""
        delta = 0.5
        unit = spike_1d_as_dac(delta)
        x = np.linspace(-1, 1, 41).reshape(-1, 1)
        out = dense_dac_forward(unit, replicate_input(x, 3))[:, 0]
        np.testing.assert_allclose(out, spike_1d(x[:, 0] / delta) / delta, atol=1e-12)

    def test_invalid_delta(self):
        with pytest.raises(ContractError):
            spike_1d_as_dac(0.0)

    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    @pytest.mark.parametrize("delta", [0.5, 1.0])
    def test_deep_network_matches_closed_form(self, rng, d, delta):
        """Глубокая сеть вычисляет psi_d((x - c) / delta) на кубе."""
        c = rng.uniform(-1, 1, size=d)
        net = spike_nd_deep_network(d, c, delta=delta, normalize=False)
        x = np.vstack([rng.uniform(-1, 1, size=(300, d)), c[None], c[None] + delta / (2 * d)])
        x = np.clip(x, -1, 1)
        np.testing.assert_allclose(predict(net, x), spike_nd((x - c) / delta), atol=1e-12)

    def test_deep_network_normalized(self, rng):
        """Нормированная сеть умножает пик на C_d delta^-d."""
        net = spike_nd_deep_network(2, [0.1, -0.2], delta=0.5)
        x = rng.uniform(-1, 1, size=(50, 2))
        expected = normalization_const(2) * 0.5**-2 * spike_nd((x - [0.1, -0.2]) / 0.5)
        np.testing.assert_allclose(predict(net, x), expected, atol=1e-10)

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_deep_network_shape(self, d):
        """d слоев шириной 2k + d - l (k = 1), не более 4 входов на нейрон."""
        net = spike_nd_deep_network(d)
        widths = layer_widths(net)
        assert len(widths) == d
        assert widths == [2 + d - l for l in range(1, d)] + [1]
        assert max(max_fan_in(net)) <= 4

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_shallow_network(self, rng, d):
        """Двухслойная форма совпадает с psi_d на кубе."""
        net = spike_nd_shallow_network(d)
        x = rng.uniform(-1, 1, size=(200, d))
        np.testing.assert_allclose(predict(net, x), spike_nd(x), atol=1e-12)
        assert layer_widths(net) == [1, 1]


class TestApprox1d:
    """Одномерное приближение одним DAC-нейроном."""

    def test_interpolates_linear_function(self):
        """При delta = 2/k сумма пиков интерполирует линейную функцию на [t_1, t_k]."""
        k = 8
        unit = approx_1d(lambda p: 3.0 * p[:, 0] - 1.0, 2.0 / k, k)
        assert unit.in_features == 3 * k
        x = np.linspace(-1 + 1 / k, 1 - 1 / k, 57).reshape(-1, 1)
        out = dense_dac_forward(unit, replicate_input(x, 3 * k))[:, 0]
        np.testing.assert_allclose(out, 3.0 * x[:, 0] - 1.0, atol=1e-12)

    def test_sampled_values(self):
        """Значения можно передать списком."""
        unit = approx_1d([1.0, 1.0], 1.0, 2)
        out = dense_dac_forward(unit, replicate_input(np.array([[-0.5], [0.5]]), 6))[:, 0]
        np.testing.assert_allclose(out, [1.0, 1.0], atol=1e-12)

    def test_wrong_sample_count(self):
        with pytest.raises(ContractError):
            approx_1d([1.0, 2.0, 3.0], 0.5, 2)


class TestRiemannNetworks:
    """Сети, построенные по плану разбиения куба."""

    @pytest.mark.parametrize("d,mesh", [(1, 16), (2, 8), (3, 4)])
    @pytest.mark.parametrize("contract", [False, True])
    def test_network_matches_closed_form(self, rng, d, mesh, contract):
        """Выход сети совпадает с замкнутой формой суммы Римана, со сжатием и без."""
        f = get_target("gaussian")
        delta = 2.0 * 2.0 / mesh
        shrink = default_shrink(delta) if contract else 1.0
        plan = build_plan(f, d, delta, mesh, shrink)
        net = approx_nd(f, d, delta, mesh, shrink=shrink, function="gaussian")
        x = rng.uniform(-1, 1, size=(200, d))
        np.testing.assert_allclose(predict(net, x), riemann_sum(plan, shrink * x), atol=1e-9)

    def test_layer_widths(self):
        """Ширины слоев 2k + d - l, последний слой один нейрон."""
        net = approx_nd(get_target("gaussian"), 3, 0.5, 2)
        k = 8
        assert net.meta["k"] == k
        assert layer_widths(net) == [2 * k + 2, 2 * k + 1, 1]
        assert max(max_fan_in(net)[:-1]) <= 4

    def test_plain_construction_weights(self):
        """Без сжатия последний слой несет веса 2^d / k f(c), умноженные на веса пика."""
        f = get_target("product")
        plan = build_plan(f, 2, 0.5, 4)
        assert plan.shrink == 1.0
        assert plan.k == 16
        assert np.abs(plan.centers_array()).max() < 1
        np.testing.assert_allclose(plan.values_array(), f(plan.centers_array()))
        w = 4 / 16 * f(plan.centers_array()) * normalization_const(2) * 0.5**-2
        last = approx_nd(f, 2, 0.5, 4).layers[-1].param_array("weights")[0]
        np.testing.assert_allclose(last[0::3], w)
        np.testing.assert_allclose(last[1::3], -2 * w)
        np.testing.assert_allclose(last[2::3], w)

    def test_contracted_plan_samples_stretched_target(self):
        """Со сжатием r значения берутся в точках clamp(c / r)."""
        f = get_target("product")
        plan = build_plan(f, 2, 0.5, 4, shrink=default_shrink(0.5))
        assert plan.shrink == 0.5
        expected = f(np.clip(plan.centers_array() / 0.5, -1.0, 1.0))
        np.testing.assert_allclose(plan.values_array(), expected)

    def test_plain_construction_at_boundary(self):
        """Без сжатия константа теряет половину массы на краях куба."""
        net = approx_nd(get_target("constant"), 1, 0.25, 8)
        np.testing.assert_allclose(predict(net, np.array([[0.0], [0.5], [1.0], [-1.0]])), [1.0, 1.0, 0.5, 0.5])

    def test_constant_reproduced(self):
        """Постоянная функция воспроизводится точно при delta, равном шагу."""
        plan = build_plan(get_target("constant"), 1, 0.25, 8)
        y = np.linspace(-0.75, 0.75, 31).reshape(-1, 1)
        np.testing.assert_allclose(riemann_sum(plan, y), 1.0, atol=1e-12)

    def test_invalid_mesh(self):
        with pytest.raises(ContractError):
            build_plan(get_target("constant"), 1, 0.5, 0)


class TestParameterSearch:
    """Выбор delta и шага сетки."""

    def test_modulus_of_continuity(self):
        """Модуль непрерывности sin(pi x) близок к pi t при малом t."""
        omega = modulus_of_continuity(get_target("sin_pi"), 1, 0.01)
        assert omega == pytest.approx(math.sin(math.pi * 0.01), rel=1e-3)
        assert modulus_of_continuity(get_target("constant"), 2, 0.3) == 0.0

    def test_constant_target(self):
        """Константа: сетки из 1 и 2 ячеек не проходят, первая подходящая сетка 4."""
        result = search_params(get_target("constant"), 1, 0.1)
        assert (result.delta, result.mesh) == (0.5, 4)
        assert result.phase == "modulus"
        assert [mesh for _, mesh, _ in result.tried] == [1, 2, 4]
        assert all(error >= 0.05 for _, _, error in result.tried[:2])

    def test_sin_pi(self):
        """sin(pi x) при eps = 0.05: delta = 1/128, mesh = 256."""
        assert select_params(get_target("sin_pi"), 1, 0.05) == (1 / 128, 256)

    def test_validated_at_half_epsilon(self):
        """Найденная пара проходит проверку с порогом eps / 2."""
        result = search_params(get_target("sin_pi"), 1, 0.05)
        assert result.error < 0.025
        assert result.shrink == 1 - result.delta

    def test_lipschitz_one_dimension(self):
        """Липшицева функция, eps = 0.2, d = 1: delta не больше eps / (2d)."""
        result = search_params(get_target("identity"), 1, 0.2)
        assert result.delta <= 0.1
        assert (result.delta, result.mesh) == (1 / 16, 32)

    def test_lipschitz_two_dimensions(self):
        """Липшицева функция, eps = 0.2, d = 2: delta не больше 0.05, предел сетки не хватает."""
        with pytest.raises(ParameterSearchError) as excinfo:
            search_params(get_target("identity"), 2, 0.2)
        diagnostic = excinfo.value.diagnostic
        assert diagnostic["modulus_delta"] == 1 / 32
        assert diagnostic["modulus_delta"] <= 0.05
        assert diagnostic["mesh_cap"] == 64
        assert diagnostic["threshold"] == 0.1
        assert diagnostic["best"]["delta"] <= 0.05

    def test_unreachable_epsilon(self):
        """Допустимая delta есть, но ни одна сетка до предела не дает нужной ошибки."""
        with pytest.raises(ParameterSearchError) as excinfo:
            search_params(get_target("sin_pi"), 1, 1e-3)
        diagnostic = excinfo.value.diagnostic
        assert diagnostic["mesh_cap"] == 512
        assert diagnostic["modulus_delta"] == 2.0**-13
        assert diagnostic["candidates"] == 10
        assert diagnostic["best"]["error"] > 1e-3

    def test_no_admissible_delta(self):
        """Слишком малое eps: ни одна delta не допустима, кандидатов нет."""
        with pytest.raises(ParameterSearchError) as excinfo:
            search_params(get_target("sin_pi"), 1, 1e-9)
        diagnostic = excinfo.value.diagnostic
        assert diagnostic["modulus_delta"] is None
        assert diagnostic["candidates"] == 0
        assert diagnostic["best"] is None

    def test_invalid_arguments(self):
        """eps <= 0 и неподдерживаемая размерность отклоняются."""
        with pytest.raises(ContractError):
            search_params(get_target("constant"), 1, 0.0)
        with pytest.raises(ContractError):
            search_params(get_target("constant"), 4, 0.1)


class TestCertificates:
    """Сертификат построенной сети."""

    def test_run_with_explicit_parameters(self):
        """Постоянная функция с заданными delta и mesh."""
        net, cert = run_approximation(get_target("constant"), "constant", 1, eps=0.01, delta=0.25, mesh=8)
        assert cert.passed
        assert cert.sup_error < 1e-9
        assert cert.k == 8
        assert cert.layer_widths == [1]
        text = cert.to_text()
        assert "certified: yes" in text
        assert "function: constant" in text

    def test_run_with_search(self):
        """Поиск параметров и проверка на сетке из 1001 точки."""
        net, cert = run_approximation(get_target("sin_pi"), "sin_pi", 1, eps=0.05)
        assert cert.passed
        assert cert.grid_points == 1001
        assert cert.sup_error < 0.05
        assert net.meta["mesh"] == 256

    def test_missing_parameters(self):
        with pytest.raises(ContractError):
            run_approximation(get_target("identity"), "identity", 1)

    def test_certify_without_epsilon(self):
        """Без eps сертификат только измеряет ошибку."""
        net = approx_nd(get_target("constant"), 1, 0.25, 8, shrink=default_shrink(0.25))
        cert = certify(net, get_target("constant"), "constant", grid=101)
        assert cert.passed is None
        assert cert.sup_error < 1e-9
        assert cert.shrink == 0.75
        text = cert.to_text()
        assert "certified" not in text
        assert "input contraction: 0.75" in text

    def test_run_without_contraction(self):
        """Без сжатия константа теряет точность на краях куба."""
        net, cert = run_approximation(
            get_target("constant"), "constant", 1, eps=0.01, delta=0.25, mesh=8, contract=False
        )
        assert cert.shrink == 1.0
        assert cert.sup_error == pytest.approx(0.5)
        assert not cert.passed


class TestTargets:
    """Целевые функции."""

    def test_unknown_name(self):
        with pytest.raises(ContractError):
            get_target("nope")

    def test_uniform_grid(self):
        grid = uniform_grid(2, 3)
        assert grid.shape == (9, 2)
        assert grid.min() == -1.0 and grid.max() == 1.0

    def test_table_target(self, tmp_path):
        """Табличная функция интерполируется билинейно и зажимается на границе."""
        grid = uniform_grid(2, 3)
        values = grid[:, 0] + 2 * grid[:, 1]
        path = write_table_csv(tmp_path / "plane.csv", grid, [repr(float(v)) for v in values], value_name="value")
        target = resolve_target(str(path))
        assert target.d == 2
        points = np.array([[0.5, 0.5], [-0.25, 1.0], [2.0, 0.0]])
        np.testing.assert_allclose(target(points), [1.5, 1.75, 1.0], atol=1e-12)

    def test_table_not_a_grid(self, tmp_path):
        """Строки, не образующие регулярную сетку, отклоняются."""
        path = write_table_csv(tmp_path / "bad.csv", np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]]), ["1", "2", "3"])
        with pytest.raises(DatasetError):
            table_target(path)

    def test_dimension_checked(self):
        """Именованная функция без фиксированной размерности принимает любое d."""
        target = get_target("identity")
        assert target(np.array([[0.5, 0.2]])).tolist() == [0.5]
