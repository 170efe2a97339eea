"""Atomic file output with a manifest of everything written"""
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from ionflux.errors import IoError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.17g"


def to_jsonable(obj):
    """numpy scalars and arrays, paths and nested containers to plain JSON types"""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


class OutputWriter:
    """Single writer for a run directory: temp file in place, then os.replace"""

    def __init__(self, directory, formats=("csv", "json", "svg")):
        self.directory = Path(directory)
        self.formats = tuple(formats)
        self.manifest: List[Dict[str, object]] = []
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise IoError(f"cannot create output directory {self.directory}: {str(e)}")

    def _atomic(self, name: str, kind: str, write) -> Path:
        target = self.directory / name
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=self.directory)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
                write(handle)
            os.replace(tmp, target)
        except Exception as e:
            if os.path.exists(tmp):
                os.remove(tmp)
            logging.error(f"Writing {target} failed: {str(e)}")
            raise IoError(f"cannot write {target}: {str(e)}")
        self.manifest.append({"file": name, "kind": kind, "bytes": target.stat().st_size})
        logger.debug(f"wrote {target}")
        return target

    def write_csv(self, name: str, frame: pd.DataFrame) -> Optional[Path]:
        if "csv" not in self.formats:
            return None
        return self._atomic(name, "csv", lambda h: frame.to_csv(h, index=False, float_format=FLOAT_FORMAT))

    def write_json(self, name: str, payload: Dict[str, object], always: bool = False) -> Optional[Path]:
        if not always and "json" not in self.formats:
            return None
        body = {"schema_version": SCHEMA_VERSION, **to_jsonable(payload)}
        return self._atomic(name, "json", lambda h: json.dump(body, h, indent=2, sort_keys=False))

    def write_svg(self, name: str, figure) -> Optional[Path]:
        if "svg" not in self.formats:
            return None
        return self._atomic(name, "svg", lambda h: figure.savefig(h, format="svg", metadata={"Date": None}))

    def files(self) -> List[str]:
        return [entry["file"] for entry in self.manifest]
