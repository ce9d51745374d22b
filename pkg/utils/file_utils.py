"""File handling utilities: network specs, sidecar blobs, CSV and config files.

Specs are written as pretty-printed JSON. Tensors above the blob threshold
go to a sidecar binary file next to the JSON document: a little-endian
header (uint32 rank, uint64 extents) followed by little-endian float64 data.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from config import BLOB_THRESHOLD_BYTES
from models.network import NetworkSpec, TensorPayload
from models.reports import HistoryRow
from utils.errors import SpecError
from utils.logger import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]

HISTORY_HEADER = ["epoch", "train_err", "val_err", "test_err", "train_loss", "lr"]


def write_blob(path: PathLike, array: np.ndarray) -> None:
    """Write ``array`` as a sidecar blob."""
    array = np.asarray(array, dtype="<f8")
    header = struct.pack("<I", array.ndim) + struct.pack(f"<{array.ndim}Q", *array.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(array).tobytes())


def read_blob(path: PathLike) -> np.ndarray:
    """Read a sidecar blob written by :func:`write_blob`.

    Raises:
        SpecError: If the blob is truncated.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise SpecError(f"Blob {path} is truncated")
    (rank,) = struct.unpack_from("<I", raw, 0)
    offset = 4 + 8 * rank
    if len(raw) < offset:
        raise SpecError(f"Blob {path} is truncated")
    shape = struct.unpack_from(f"<{rank}Q", raw, 4)
    count = int(np.prod(shape)) if rank else 1
    if len(raw) != offset + 8 * count:
        raise SpecError(f"Blob {path} holds {len(raw) - offset} data bytes, expected {8 * count}")
    return np.frombuffer(raw, dtype="<f8", offset=offset).reshape(shape).astype(np.float64)


def spec_to_document(
    spec: NetworkSpec, blob_dir: Path = None, stem: str = "spec"
) -> Dict[str, Any]:
    """JSON-ready document; large tensors are written as blobs when ``blob_dir`` is set."""
    document = spec.model_dump(mode="json", exclude_none=True)
    if blob_dir is None:
        return document
    for layer_doc, layer in zip(document["layers"], spec.layers):
        for key, payload in layer.params.items():
            if payload.data is None or 8 * payload.size <= BLOB_THRESHOLD_BYTES:
                continue
            blob_name = f"{stem}.{layer.name}.{key}.bin"
            write_blob(blob_dir / blob_name, payload.to_array())
            layer_doc["params"][key] = {"shape": payload.shape, "blob": blob_name}
    return document


def save_spec(spec: NetworkSpec, path: PathLike) -> Path:
    """Write a spec as JSON (plus sidecar blobs for tensors above 1 MB)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = spec_to_document(spec, blob_dir=path.parent, stem=path.stem)
    path.write_text(json.dumps(document, indent=2), encoding="utf-8")
    logger.info(f"💾 Spec '{spec.name}' written to {path}")
    return path


def load_spec(path: PathLike) -> NetworkSpec:
    """Parse a spec file, resolving blob references relative to it.

    Raises:
        FileNotFoundError: If the spec or one of its blobs is missing.
        pydantic.ValidationError: If the document does not match the schema.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Spec file not found: {path}")
    spec = NetworkSpec.model_validate(json.loads(path.read_text(encoding="utf-8")))
    layers = []
    for layer in spec.layers:
        params = {}
        for key, payload in layer.params.items():
            if payload.blob is not None and payload.data is None:
                array = read_blob(path.parent / payload.blob)
                if list(array.shape) != payload.shape:
                    raise SpecError(
                        f"Blob {payload.blob} has shape {array.shape}, spec says {payload.shape}"
                    )
                payload = TensorPayload.from_array(array)
            params[key] = payload
        layers.append(layer.model_copy(update={"params": params}))
    return spec.model_copy(update={"layers": layers})


def _fmt(value) -> str:
    if value is None:
        return ""
    return f"{value:.6g}"


def write_history_csv(rows: Iterable[HistoryRow], path: PathLike) -> Path:
    """Write ``epoch,train_err,val_err,test_err,train_loss,lr`` rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_HEADER)
        for row in rows:
            writer.writerow(
                [row.epoch] + [_fmt(getattr(row, name)) for name in HISTORY_HEADER[1:]]
            )
    return path


def write_table_csv(
    path: PathLike, points: np.ndarray, values: Sequence, value_name: str = "label"
) -> Path:
    """Write ``x1,...,xd,<value_name>`` rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    points = np.asarray(points, dtype=np.float64).reshape(len(values), -1)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([f"x{j + 1}" for j in range(points.shape[1])] + [value_name])
        for point, value in zip(points, values):
            writer.writerow([repr(float(v)) for v in point] + [value])
    return path


def read_table_csv(path: PathLike) -> Tuple[List[str], np.ndarray]:
    """Read a numeric CSV with a header row.

    Returns:
        Column names and a rows x columns float array.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"CSV file not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"CSV file {path} is empty")
        rows = [[float(cell) for cell in row] for row in reader if row]
    if not rows:
        raise ValueError(f"CSV file {path} has no data rows")
    table = np.asarray(rows, dtype=np.float64)
    if table.shape[1] != len(header):
        raise ValueError(f"CSV file {path}: {table.shape[1]} columns, header has {len(header)}")
    return header, table


def load_config_file(path: PathLike) -> Dict[str, Any]:
    """Load a JSON or YAML mapping (YAML for ``.yaml``/``.yml`` suffixes)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"Config file {path} must contain a mapping, got {type(data).__name__}")
    return data
