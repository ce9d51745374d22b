import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

# Добавляем корневую директорию проекта в sys.path, чтобы можно было импортировать модули
PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

# Логи тестов не должны попадать в logs/ проекта
os.environ.setdefault("DACNET_LOG_DIR", tempfile.mkdtemp(prefix="dacnet-test-logs-"))


@pytest.fixture
def rng():
    """Детерминированный генератор случайных чисел."""
    return np.random.default_rng(1234)
