"""SIMPL-CKPT v1 checkpoint format.

    SIMPL-CKPT v1 <model config as compact JSON>\\n
    <name> <dtype> <ndim> <e1> ... <ek>\\n
    <prod(e) little-endian IEEE-754 values>
    ...

Tensors are written in sorted name order.
"""
import json
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np
import torch
from pydantic import ValidationError

from app.config import TrainingConfig
from app.models.forecasting_model import SimplForecastingModel
from app.utils.errors import StorageError

MAGIC = "SIMPL-CKPT v1"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(model: SimplForecastingModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    header = f"{MAGIC} {json.dumps(model.config.architecture(), sort_keys=True, separators=(',', ':'))}\n"
    state = model.state_dict()
    arrays = OrderedDict()
    for name in sorted(state):
        array = state[name].detach().cpu().numpy()
        if str(array.dtype) not in _DTYPES:
            raise StorageError(f"cannot store tensor {name} of dtype {array.dtype}")
        arrays[name] = array
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write(header.encode("utf-8"))
            for name, array in arrays.items():
                dtype = str(array.dtype)
                shape = " ".join(str(e) for e in array.shape)
                f.write(f"{name} {dtype} {array.ndim} {shape}".rstrip().encode("utf-8") + b"\n")
                f.write(np.ascontiguousarray(array).astype(_DTYPES[dtype]).tobytes())
    except OSError as e:
        raise StorageError(f"cannot write checkpoint {path}: {e}") from e
    return path


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, Any], "OrderedDict[str, np.ndarray]"]:
    """Header config and tensors of a checkpoint file"""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError as e:
        raise StorageError(f"checkpoint not found: {path}") from e
    except OSError as e:
        raise StorageError(f"cannot read checkpoint {path}: {e}") from e

    end = blob.find(b"\n")
    header = blob[:end].decode("utf-8", errors="replace") if end >= 0 else ""
    if not header.startswith(MAGIC):
        raise StorageError(f"{path} is not a {MAGIC} checkpoint")
    try:
        config = json.loads(header[len(MAGIC):].strip() or "{}")
    except json.JSONDecodeError as e:
        raise StorageError(f"{path}: corrupt checkpoint header") from e

    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    pos = end + 1
    while pos < len(blob):
        line_end = blob.find(b"\n", pos)
        if line_end < 0:
            raise StorageError(f"{path}: truncated tensor record")
        fields = blob[pos:line_end].decode("utf-8", errors="replace").split()
        try:
            name, dtype, ndim = fields[0], fields[1], int(fields[2])
            shape = tuple(int(e) for e in fields[3:3 + ndim])
        except (IndexError, ValueError) as e:
            raise StorageError(f"{path}: corrupt tensor record {fields!r}") from e
        if dtype not in _DTYPES or len(shape) != ndim:
            raise StorageError(f"{path}: corrupt tensor record {fields!r}")
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * np.dtype(_DTYPES[dtype]).itemsize
        start = line_end + 1
        if start + nbytes > len(blob):
            raise StorageError(f"{path}: tensor {name} is truncated")
        tensors[name] = np.frombuffer(blob[start:start + nbytes], dtype=_DTYPES[dtype]).astype(dtype).reshape(shape)
        pos = start + nbytes
    return config, tensors


def load_checkpoint(path: Union[str, Path]) -> SimplForecastingModel:
    """Rebuild the model described by the header and load every tensor"""
    config, tensors = read_checkpoint(path)
    try:
        model = SimplForecastingModel(TrainingConfig(**config))
    except ValidationError as e:
        raise StorageError(f"{path}: checkpoint header holds an invalid config: {e}") from e
    state = OrderedDict((name, torch.from_numpy(array.copy())) for name, array in tensors.items())
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as e:
        raise StorageError(f"{path}: tensors do not match the model: {e}") from e
    model.eval()
    return model
