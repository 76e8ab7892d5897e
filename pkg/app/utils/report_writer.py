import json
from pathlib import Path
from typing import Any, Dict, Sequence, Union

import pandas as pd

from app.utils.errors import StorageError


def write_csv(rows: Sequence[Dict[str, Any]], path: Union[str, Path], columns: Sequence[str] = None) -> Path:
    """Write rows as CSV, keeping the given column order"""
    path = Path(path)
    frame = pd.DataFrame(list(rows), columns=list(columns) if columns is not None else None)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False)
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e
    return path


def write_json(payload: Any, path: Union[str, Path], indent: int = None) -> Path:
    """Compact JSON unless an indent is given"""
    path = Path(path)
    text = json.dumps(payload, indent=indent) if indent is not None else json.dumps(payload, separators=(",", ":"))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e
    return path


def read_json(path: Union[str, Path]) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise StorageError(f"file not found: {path}") from e
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise StorageError(f"{path} is not valid JSON: {e}") from e
