"""Raw-blob tensor serialization.

A blob is the little-endian real32 concatenation of arrays in manifest
order; the JSON sidecar records name/shape/dtype/offset per tensor plus a
whole-file sha256. ``<base>.blob`` and ``<base>.manifest.json`` always
travel together.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import DataError

_DTYPES = {"real32": np.dtype("<f4"), "real64": np.dtype("<f8")}


def save_arrays(base: Path | str, arrays: dict[str, np.ndarray], *,
                dtype: str = "real32", extra: dict | None = None) -> None:
    base = Path(base)
    wire = _DTYPES[dtype]
    chunks: list[bytes] = []
    entries = []
    offset = 0
    for name, arr in arrays.items():
        payload = np.ascontiguousarray(arr, dtype=wire).tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": dtype,
            "offset": offset,
            "nbytes": len(payload),
        })
        chunks.append(payload)
        offset += len(payload)
    blob = b"".join(chunks)
    manifest = {
        "format": "hima-tensors-v1",
        "dtype": dtype,
        "checksum_sha256": hashlib.sha256(blob).hexdigest(),
        "total_bytes": len(blob),
        "tensors": entries,
    }
    if extra:
        manifest["extra"] = extra
    base.parent.mkdir(parents=True, exist_ok=True)
    base.with_suffix(base.suffix + ".blob").write_bytes(blob)
    base.with_suffix(base.suffix + ".manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=False))


def load_arrays(base: Path | str) -> tuple[dict[str, np.ndarray], dict]:
    base = Path(base)
    man_path = base.with_suffix(base.suffix + ".manifest.json")
    blob_path = base.with_suffix(base.suffix + ".blob")
    if not man_path.exists() or not blob_path.exists():
        raise DataError(f"missing manifest or blob at {base}")
    try:
        manifest = json.loads(man_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"unreadable manifest {man_path}: {exc}") from exc
    blob = blob_path.read_bytes()
    if len(blob) != manifest.get("total_bytes"):
        raise DataError(
            f"blob truncated: expected {manifest.get('total_bytes')} bytes, found {len(blob)}"
        )
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest.get("checksum_sha256"):
        raise DataError("blob checksum mismatch")
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        wire = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        if entry["nbytes"] != count * wire.itemsize:
            raise DataError(f"tensor {entry['name']} has inconsistent byte count")
        raw = blob[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=wire).reshape(entry["shape"]).copy()
    return arrays, manifest.get("extra", {})


def save_tensor(base: Path | str, name: str, array: np.ndarray, dtype: str = "real32") -> None:
    save_arrays(base, {name: array}, dtype=dtype)


def load_tensor(base: Path | str) -> tuple[str, np.ndarray]:
    arrays, _ = load_arrays(base)
    ((name, arr),) = arrays.items()
    return name, arr
