import logging

import pytest

import config
from utils.logger import get_log_dir, get_logger


class TestSeed:
    """Seed по умолчанию из окружения."""

    def test_env_value(self, monkeypatch):
        monkeypatch.setenv("DACNET_SEED", " 17 ")
        assert config.get_default_seed() == 17

    def test_invalid_value(self, monkeypatch):
        """Нецелое значение DACNET_SEED: ошибка."""
        monkeypatch.setenv("DACNET_SEED", "abc")
        with pytest.raises(ValueError):
            config.get_default_seed()

    def test_constants(self):
        """Коды выхода и глубины ResNet."""
        assert (config.EXIT_OK, config.EXIT_USAGE, config.EXIT_CRITERION_UNMET, config.EXIT_RUNTIME_FAILURE) == (
            0,
            2,
            3,
            4,
        )
        assert {depth: 6 * n + 2 for depth, n in config.RESNET_DEPTHS.items()} == {d: d for d in (20, 32, 44, 56)}


class TestLogger:
    """Настройка логгеров."""

    def test_handlers_added_once(self):
        """Повторный вызов не дублирует обработчики."""
        first = get_logger("dacnet.test.once")
        count = len(first.handlers)
        second = get_logger("dacnet.test.once")
        assert first is second
        assert len(second.handlers) == count == 3

    def test_console_only_warnings(self):
        """В консоль попадают только предупреждения и ошибки."""
        logger = get_logger("dacnet.test.console")
        console = [h for h in logger.handlers if type(h) is logging.StreamHandler]
        assert [h.level for h in console] == [logging.WARNING]

    def test_log_dir_override(self, monkeypatch, tmp_path):
        monkeypatch.setenv("DACNET_LOG_DIR", str(tmp_path / "logs"))
        assert get_log_dir() == tmp_path / "logs"
