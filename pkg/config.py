"""Configuration module for dacnet.

Module-level defaults for the approximator, the complexity analyzer, the
training harness and the CLI, plus environment-driven settings.
"""

import os

DEFAULT_SEED = 0


def get_default_seed() -> int:
    """
    Получает seed по умолчанию из переменных окружения или файла .env.

    Приоритет:
    1. Переменная окружения `DACNET_SEED`.
    2. Файл `.env` в корневом каталоге проекта (для локальной разработки).
    3. Константа `DEFAULT_SEED`.

    Returns:
        int: Найденный seed.

    Raises:
        ValueError: Если значение задано, но не является целым числом.
    """
    # 1. Переменные окружения (высший приоритет)
    raw = os.getenv("DACNET_SEED")

    # 2. Пытаемся загрузить из .env
    if not raw:
        try:
            from dotenv import load_dotenv

            load_dotenv()
            raw = os.getenv("DACNET_SEED")
        except ImportError:
            # Если dotenv не установлен, просто пропускаем этот шаг
            pass

    if not raw:
        return DEFAULT_SEED

    try:
        return int(raw.strip())
    except ValueError:
        raise ValueError(
            f"DACNET_SEED must be an integer, got {raw!r}. "
            "Unset it or provide --seed explicitly."
        ) from None


# --- Numerics ---

DEFAULT_PRECISION = "f64"
TRAIN_PRECISION = "f32"
GRAD_CHECK_STEP = 1e-6

# --- Serialization ---

SPEC_VERSION = 1
BLOB_THRESHOLD_BYTES = 1024 * 1024  # 1MB

# --- Approximator ---

# Sup-error grid points per axis, indexed by dimension
CERTIFICATE_GRID = {1: 1001, 2: 201, 3: 41}
MODULUS_GRID = {1: 401, 2: 41, 3: 15}
MESH_CAPS = {1: 512, 2: 64, 3: 16}
MIN_DELTA_EXPONENT = 14  # smallest dyadic delta tried is 2**-14
MAX_DELTA = 0.5
MAX_SPACING_RATIO = 8  # delta / cell size tried in the widened search
EVAL_CHUNK = 4096
EVAL_ELEMENT_BUDGET = 2**22  # elements per intermediate array during inference

# --- Batch normalization ---

BN_EPSILON = 1e-3
BN_MOMENTUM = 0.9

# --- Training (desk-scale analogue of the 80k-iteration CIFAR schedule) ---

FULL_SCHEDULE_ITERS = 80_000
FULL_SCHEDULE_BOUNDARIES = [32_000, 48_000, 64_000]
DESK_TRAIN_ITERS = 2_000  # CLI default when neither --config nor --iters is given
DEFAULT_BASE_LR = 0.1
DEFAULT_LR_DECAY = 0.1
DEFAULT_MOMENTUM = 0.9
DEFAULT_L2_KERNEL = 1e-4
DEFAULT_BATCH_SIZE = 128
AUGMENT_PAD = 4
AUGMENT_FLIP_PROB = 0.5
DEFAULT_FOLDS = 5
ESTIMATOR_HALF_WINDOW = 2

# --- CLI ---

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CRITERION_UNMET = 3
EXIT_RUNTIME_FAILURE = 4

RESNET_DEPTHS = {20: 3, 32: 5, 44: 7, 56: 9}
SMALL_PRESETS = ["dense-std", "dense-dac", "square-dac", "blobs-dac"]
EQUIVALENCE_TOLERANCE = 1e-12
