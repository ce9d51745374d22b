import numpy as np
import pytest

from tools.datasets import (
    Dataset,
    export_csv,
    gen_blobs,
    gen_image_dataset,
    gen_square_dataset,
    gen_three_point_dataset,
    kfold_split,
    linear_separability_certificate,
    load_cifar10_bin,
    load_cifar100_bin,
    load_dataset,
    normalize,
    read_cifar_records,
    with_holdout,
    write_cifar_records,
)
from utils.errors import ContractError, DatasetError
from utils.file_utils import read_table_csv


def random_images(rng, n):
    return rng.integers(0, 256, size=(n, 32, 32, 3), dtype=np.uint8)


class TestCifarRecords:
    """Бинарный формат CIFAR."""

    def test_write_then_read(self, tmp_path, rng):
        """Записанные изображения читаются без изменений."""
        images = random_images(rng, 4)
        labels = [3, 0, 9, 1]
        path = write_cifar_records(tmp_path / "batch.bin", images, labels)
        assert path.stat().st_size == 4 * 3073
        read_images, read_labels = read_cifar_records(path)
        np.testing.assert_array_equal(read_images, images)
        np.testing.assert_array_equal(read_labels, labels)

    def test_channel_planes(self, tmp_path):
        """Пиксели хранятся плоскостями R, G, B построчно."""
        raw = np.zeros(3073, dtype=np.uint8)
        raw[0] = 7
        raw[1] = 11  # R(0, 0)
        raw[1 + 1024 + 33] = 22  # G(1, 1)
        raw[1 + 2048 + 1023] = 33  # B(31, 31)
        path = tmp_path / "one.bin"
        raw.tofile(path)
        images, labels = read_cifar_records(path)
        assert images.shape == (1, 32, 32, 3)
        assert labels.tolist() == [7]
        assert images[0, 0, 0, 0] == 11
        assert images[0, 1, 1, 1] == 22
        assert images[0, 31, 31, 2] == 33

    def test_fine_label_of_cifar100(self, tmp_path, rng):
        """Для CIFAR-100 используется второй (тонкий) байт метки."""
        path = write_cifar_records(tmp_path / "train.bin", random_images(rng, 2), [42, 99], coarse_labels=[1, 19])
        _, labels = read_cifar_records(path, label_bytes=2, num_classes=100)
        assert labels.tolist() == [42, 99]

    def test_out_of_range_label(self, tmp_path):
        """Метка 255 для CIFAR-10 отклоняется."""
        raw = np.zeros(3073, dtype=np.uint8)
        raw[0] = 255
        path = tmp_path / "bad.bin"
        raw.tofile(path)
        with pytest.raises(DatasetError):
            read_cifar_records(path)

    def test_truncated_file(self, tmp_path):
        """Неполная запись дает DatasetError."""
        path = tmp_path / "short.bin"
        np.zeros(3073 + 100, dtype=np.uint8).tofile(path)
        with pytest.raises(DatasetError):
            read_cifar_records(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.bin"
        path.write_bytes(b"")
        with pytest.raises(DatasetError):
            read_cifar_records(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_cifar_records(tmp_path / "nope.bin")

    def test_load_directory(self, tmp_path, rng):
        """Каталог с батчами: train из data_batch_*, test из test_batch, среднее вычтено."""
        write_cifar_records(tmp_path / "data_batch_1.bin", random_images(rng, 6), [0, 1, 2, 3, 4, 5])
        write_cifar_records(tmp_path / "data_batch_2.bin", random_images(rng, 4), [6, 7, 8, 9])
        write_cifar_records(tmp_path / "test_batch.bin", random_images(rng, 3), [1, 1, 1])
        dataset = load_cifar10_bin(tmp_path)
        assert len(dataset.splits["train"]) == 10
        assert len(dataset.splits["test"]) == 3
        x_train, _ = dataset.part("train")
        np.testing.assert_allclose(x_train.mean(axis=(0, 1, 2)), 0.0, atol=1e-5)
        assert dataset.mean.shape == (3,)

    def test_load_with_fold(self, tmp_path, rng):
        """С fold обучающие записи делятся на train и val."""
        write_cifar_records(tmp_path / "data_batch_1.bin", random_images(rng, 10), list(range(10)))
        dataset = load_cifar10_bin(tmp_path, fold=0, folds=5)
        assert len(dataset.splits["val"]) == 2
        assert len(dataset.splits["train"]) == 8

    def test_load_cifar100_file(self, tmp_path, rng):
        path = write_cifar_records(tmp_path / "train.bin", random_images(rng, 3), [5, 50, 95], coarse_labels=[0, 1, 2])
        dataset = load_cifar100_bin(path)
        assert dataset.num_classes == 100
        assert dataset.y.tolist() == [5, 50, 95]


class TestSplits:
    """Разбиения на фолды и отложенные выборки."""

    def test_kfold_sizes(self):
        """50000 образцов, 5 фолдов: 40000 train и 10000 val."""
        split = kfold_split(50_000, 5, 2, seed=0)
        assert len(split["train"]) == 40_000
        assert len(split["val"]) == 10_000
        joined = np.sort(np.concatenate([split["train"], split["val"]]))
        np.testing.assert_array_equal(joined, np.arange(50_000))

    def test_folds_are_disjoint(self):
        """Валидационные фолды не пересекаются и покрывают все индексы."""
        vals = [kfold_split(23, 4, k, seed=5)["val"] for k in range(4)]
        np.testing.assert_array_equal(np.sort(np.concatenate(vals)), np.arange(23))

    def test_deterministic(self):
        a = kfold_split(100, 5, 1, seed=9)
        b = kfold_split(100, 5, 1, seed=9)
        np.testing.assert_array_equal(a["val"], b["val"])

    @pytest.mark.parametrize("n,folds,index", [(10, 1, 0), (10, 5, 5), (3, 5, 0)])
    def test_invalid(self, n, folds, index):
        with pytest.raises(ContractError):
            kfold_split(n, folds, index, seed=0)

    def test_holdout_partition(self):
        """Отложенные выборки 60/20/20 образуют разбиение."""
        dataset = with_holdout(gen_blobs(50, 2, seed=1), 0.2, 0.2, seed=1)
        sizes = {k: len(v) for k, v in dataset.splits.items()}
        assert sizes == {"train": 30, "val": 10, "test": 10}

    def test_splits_must_partition(self):
        """Перекрывающиеся разбиения отклоняются."""
        with pytest.raises(ContractError):
            Dataset("x", np.zeros((4, 2)), np.zeros(4), 2, {"train": np.array([0, 1, 2]), "val": np.array([2, 3])})

    def test_labels_in_range(self):
        with pytest.raises(DatasetError):
            Dataset("x", np.zeros((2, 2)), np.array([0, 2]), num_classes=2)


class TestNormalize:
    """Нормализация по статистике обучающей выборки."""

    def test_uses_train_split_only(self):
        """Среднее берется только по train."""
        x = np.array([[1.0], [3.0], [100.0]])
        dataset = Dataset("x", x, np.zeros(3), 2, {"train": np.array([0, 1]), "test": np.array([2])})
        normed = normalize(dataset)
        np.testing.assert_allclose(normed.mean, [2.0])
        np.testing.assert_allclose(normed.x[:, 0], [-1.0, 1.0, 98.0])

    def test_renormalize_restores_previous_mean(self):
        """Повторная нормализация по другой выборке начинает с исходных данных."""
        x = np.array([[1.0], [3.0], [5.0]])
        dataset = Dataset("x", x, np.zeros(3), 2, {"train": np.array([0, 1]), "val": np.array([2])})
        twice = normalize(normalize(dataset), split="val")
        np.testing.assert_allclose(twice.x[:, 0], [-4.0, -2.0, 0.0])


class TestSynthetic:
    """Синтетические наборы данных."""

    def test_square_labels(self):
        """Метка 1 внутри |x|_1 < 1, с зазором от границы."""
        dataset = gen_square_dataset(500, seed=0)
        norm = np.abs(dataset.x).sum(axis=1)
        np.testing.assert_array_equal(dataset.y, (norm < 1.0).astype(int))
        assert np.all(np.abs(1.0 - norm) >= 0.1)
        assert np.all(np.abs(dataset.x) <= 2.0)
        assert 0 < dataset.y.sum() < 500

    def test_square_deterministic(self):
        np.testing.assert_array_equal(gen_square_dataset(50, 3).x, gen_square_dataset(50, 3).x)

    def test_three_points_collinear_and_inseparable(self):
        """Три точки на одной прямой, средняя другого класса: линейно неразделимы."""
        dataset = gen_three_point_dataset()
        p = dataset.x
        cross = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
        assert cross == pytest.approx(0.0, abs=1e-12)
        assert dataset.y.tolist() == [0, 1, 0]
        certificate = linear_separability_certificate(dataset.x, dataset.y)
        assert not certificate.separable
        assert certificate.best_margin <= 0.0
        assert certificate.candidates == 3600

    def test_separable_points_certified(self):
        certificate = linear_separability_certificate(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([0, 1]))
        assert certificate.separable
        assert certificate.best_margin == pytest.approx(np.sqrt(2) / 2, rel=1e-4)

    def test_blobs_balanced(self):
        dataset = gen_blobs(90, 3, seed=0)
        assert np.bincount(dataset.y).tolist() == [30, 30, 30]

    def test_images(self):
        """Синтетические изображения в [0, 1] формы N x 32 x 32 x 3."""
        dataset = gen_image_dataset(20, classes=4, seed=1)
        assert dataset.x.shape == (20, 32, 32, 3)
        assert dataset.x.min() >= 0.0 and dataset.x.max() <= 1.0
        assert dataset.is_image

    def test_load_dataset(self):
        """synthetic:square получает отложенные выборки 60/20/20."""
        dataset = load_dataset("synthetic:square", seed=0, samples=100)
        assert {k: len(v) for k, v in dataset.splits.items()} == {"train": 60, "val": 20, "test": 20}
        assert len(load_dataset("synthetic:three-point")) == 3

    def test_load_unknown(self):
        with pytest.raises(ContractError):
            load_dataset("synthetic:spiral")

    def test_export_csv(self, tmp_path):
        """Экспорт в CSV: координаты и метка."""
        dataset = gen_three_point_dataset()
        path = export_csv(dataset, tmp_path / "three.csv")
        assert path.read_text().splitlines()[0] == "x1,x2,label"
        header, table = read_table_csv(path)
        assert header == ["x1", "x2", "label"]
        np.testing.assert_allclose(table[:, :2], dataset.x)
        assert table[:, 2].tolist() == [0.0, 1.0, 0.0]
