"""
Persistence helpers: provenance headers, JSONL logs and npz containers.

Every artifact the stack writes carries a provenance header with the config
hash, the seed and the code version. npz containers are written with fixed
zip timestamps and little-endian arrays so identical inputs give identical
bytes.

Trajectory JSONL layout (one JSON object per line, sorted keys):

    line 1   {"type": "header", "format": "strap-trajectory", "hook_shape": {...},
              "closure_drop": float, "material": str, "slack": float, "particles": int,
              "dt": float, trial fields (trial_id, method, seed, provenance),
              "oracle": {...} (annotated copies only)}
    line k   {"type": "step", "step": int, "time": float, "bar_angle": float,
              "gripper": [x, y, z, rx, ry, rz], "action": [7 floats],
              "positions": [[x, y, z] * N], "observation": {...} (optional),
              "link": float (optional)}
"""

import io
import json
import zipfile
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from .. import __version__
from .exceptions import CheckpointError, DatasetError, handle_io_error

HEADER_KEY = "__header__"
TRAJECTORY_FORMAT = "strap-trajectory"
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def build_provenance(config_hash: str, seed: Optional[int], **extra: Any) -> Dict[str, Any]:
    """
    Build the provenance block embedded in every artifact.

    Args:
        config_hash: Hash of the effective configuration
        seed: Seed used to produce the artifact
        **extra: Additional fields (hook, material, inputs, ...)

    Returns:
        Provenance dict
    """
    provenance = {"config_hash": config_hash, "seed": seed, "version": __version__}
    provenance.update(extra)
    return provenance


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def save_npz(path: Path, header: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> Path:
    """
    Write arrays plus a JSON header into a deterministic npz file.

    Args:
        path: Output path
        header: JSON-serializable header
        arrays: Named arrays; floats are stored as little-endian float64

    Returns:
        The written path

    Raises:
        CheckpointError: On I/O failure
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            entries = {HEADER_KEY: np.frombuffer(_dumps(header).encode("utf-8"), dtype=np.uint8)}
            entries.update(arrays)
            for name in sorted(entries):
                array = np.asarray(entries[name])
                if array.dtype.kind == "f":
                    array = array.astype("<f8")
                elif array.dtype.kind in "iu" and array.dtype.itemsize > 1:
                    array = array.astype("<i8")
                info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH)
                info.compress_type = zipfile.ZIP_DEFLATED
                buffer = io.BytesIO()
                np.lib.format.write_array(buffer, np.ascontiguousarray(array), allow_pickle=False)
                zf.writestr(info, buffer.getvalue())
    except OSError as e:
        raise handle_io_error("save", path, e)
    return path


def load_npz(path: Path, expected_format: Optional[str] = None) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Read a container written by :func:`save_npz`.

    Args:
        path: Input path
        expected_format: Required ``header["format"]`` value

    Returns:
        (header, arrays)

    Raises:
        CheckpointError: If the file is missing, unreadable or of another format
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError("Artifact not found", path=path, reason="missing")
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {name: data[name] for name in data.files}
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise CheckpointError("Artifact is not a readable npz container", path=path,
                              reason="malformed", details=str(e))
    if HEADER_KEY not in arrays:
        raise CheckpointError("Artifact has no header", path=path, reason="malformed")
    try:
        header = json.loads(arrays.pop(HEADER_KEY).tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError("Artifact header is not valid JSON", path=path,
                              reason="malformed", details=str(e))
    if expected_format is not None and header.get("format") != expected_format:
        raise CheckpointError(f"Expected a {expected_format} artifact", path=path,
                              reason="format", details=f"found {header.get('format')!r}")
    return header, arrays


class JsonlWriter:
    """
    Line-oriented JSON log with a header line.

    Used as a context manager::

        with JsonlWriter(path, {"format": TRAJECTORY_FORMAT, ...}) as log:
            log.write({"type": "step", ...})
    """

    def __init__(self, path: Path, header: Dict[str, Any]):
        self.path = Path(path)
        self.header = dict(header)
        self.header.setdefault("type", "header")
        self._handle = None
        self.records_written = 0

    def __enter__(self) -> "JsonlWriter":
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = self.path.open("w", encoding="utf-8", newline="\n")
            self._handle.write(_dumps(self.header) + "\n")
        except OSError as e:
            raise handle_io_error("open", self.path, e)
        return self

    def write(self, record: Dict[str, Any]):
        """Append one record."""
        self._handle.write(_dumps(record) + "\n")
        self.records_written += 1

    def __exit__(self, exc_type, exc, tb):
        if self._handle is not None:
            self._handle.close()
            self._handle = None
        return False


def iter_jsonl(path: Path) -> Iterator[Dict[str, Any]]:
    """
    Yield the JSON objects of a JSONL file in order.

    Raises:
        DatasetError: On unreadable files or malformed lines
    """
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as handle:
            for number, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as e:
                    raise DatasetError("Malformed JSONL line", path=path, reason="malformed",
                                       details=f"line {number}: {e}")
    except OSError as e:
        raise handle_io_error("read", path, e)


def read_jsonl(path: Path) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    """Return (header, records) of a JSONL log written by :class:`JsonlWriter`."""
    lines = list(iter_jsonl(path))
    if not lines or lines[0].get("type") != "header":
        raise DatasetError("JSONL log has no header line", path=Path(path), reason="malformed")
    return lines[0], lines[1:]


def write_json(path: Path, data: Dict[str, Any]) -> Path:
    """Write a JSON document with sorted keys and a trailing newline."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise handle_io_error("save", path, e)
    return path
