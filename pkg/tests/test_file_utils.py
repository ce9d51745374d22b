import json

import numpy as np
import pytest

from engine.executor import init_params
from models.network import LayerSpec, NetworkSpec
from models.reports import HistoryRow
from tools.resnet import preset
from utils.errors import SpecError
from utils.file_utils import (
    load_config_file,
    load_spec,
    read_blob,
    save_spec,
    write_blob,
    write_history_csv,
)


def wide_dense(rng) -> NetworkSpec:
    """Плотный слой 400 x 400: веса больше 1 МБ и уходят в blob."""
    layer = LayerSpec(kind="dense_dac", name="wide", in_features=400, out_features=400, use_bias=True)
    return init_params(NetworkSpec(name="wide", input_shape=[400], layers=[layer]), rng)


class TestSpecFiles:
    """Запись и чтение спецификаций сети."""

    def test_small_spec_inline(self, tmp_path, rng):
        """Малые тензоры хранятся прямо в JSON."""
        spec = init_params(preset("square-dac"), rng)
        path = save_spec(spec, tmp_path / "square.json")
        assert list(tmp_path.glob("*.bin")) == []
        assert load_spec(path) == spec

    def test_large_tensors_go_to_blobs(self, tmp_path, rng):
        """Тензоры больше 1 МБ пишутся в {stem}.{layer}.{key}.bin."""
        spec = wide_dense(rng)
        path = save_spec(spec, tmp_path / "model.json")
        blobs = sorted(p.name for p in tmp_path.glob("*.bin"))
        assert blobs == ["model.wide.dac_biases.bin", "model.wide.weights.bin"]
        document = json.loads(path.read_text())
        assert document["layers"][0]["params"]["weights"] == {"shape": [400, 400], "blob": "model.wide.weights.bin"}
        loaded = load_spec(path)
        np.testing.assert_array_equal(
            loaded.layers[0].param_array("weights"), spec.layers[0].param_array("weights")
        )
        assert loaded == spec

    def test_missing_blob(self, tmp_path, rng):
        """Отсутствующий blob дает FileNotFoundError."""
        path = save_spec(wide_dense(rng), tmp_path / "model.json")
        (tmp_path / "model.wide.weights.bin").unlink()
        with pytest.raises(FileNotFoundError):
            load_spec(path)

    def test_missing_spec(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_spec(tmp_path / "absent.json")

    def test_parameter_free_spec(self, tmp_path):
        """Спецификация без параметров тоже сохраняется."""
        spec = preset("resnet20-dac")
        assert load_spec(save_spec(spec, tmp_path / "r.json")) == spec


class TestBlobs:
    """Бинарный формат blob."""

    def test_header_layout(self, tmp_path):
        """Ранг uint32, размеры uint64, данные float64 little-endian."""
        path = tmp_path / "a.bin"
        write_blob(path, np.arange(6.0).reshape(2, 3))
        raw = path.read_bytes()
        assert len(raw) == 4 + 2 * 8 + 6 * 8
        assert raw[:4] == (2).to_bytes(4, "little")
        np.testing.assert_array_equal(read_blob(path), np.arange(6.0).reshape(2, 3))

    def test_truncated(self, tmp_path):
        path = tmp_path / "a.bin"
        write_blob(path, np.ones(4))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(SpecError):
            read_blob(path)


class TestCsvAndConfig:
    """История обучения и файлы конфигурации."""

    def test_history_csv(self, tmp_path):
        """Пустые ошибки пишутся пустыми ячейками, числа в формате .6g."""
        rows = [
            HistoryRow(epoch=1, iteration=5, train_err=0.5, val_err=None, test_err=0.25, train_loss=1.23456789, lr=0.1),
        ]
        path = write_history_csv(rows, tmp_path / "h" / "history.csv")
        assert path.read_text().splitlines() == [
            "epoch,train_err,val_err,test_err,train_loss,lr",
            "1,0.5,,0.25,1.23457,0.1",
        ]

    def test_yaml_config(self, tmp_path):
        path = tmp_path / "c.yml"
        path.write_text("base_lr: 0.05\nlr_boundaries: [10, 20]\n")
        assert load_config_file(path) == {"base_lr": 0.05, "lr_boundaries": [10, 20]}

    def test_json_config(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"batch_size": 64}))
        assert load_config_file(path) == {"batch_size": 64}

    def test_empty_yaml(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("")
        assert load_config_file(path) == {}

    def test_non_mapping(self, tmp_path):
        """Конфигурация должна быть словарем."""
        path = tmp_path / "c.json"
        path.write_text("[1, 2]")
        with pytest.raises(ValueError):
            load_config_file(path)
