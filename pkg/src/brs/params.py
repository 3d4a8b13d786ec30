"""Named parameter collections and their on-disk formats.

A ParameterVector is an ordered mapping name -> float64 array. It is the
unit stored in replay buffers and checkpoints, so it is immutable by
convention: every operation returns a new instance.

Checkpoint format (version 1): magic ``BRSCKPT1``, a little-endian uint32
header length, a JSON header (names, shapes, metadata), then the raw
little-endian float64 payload in header order. Round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import ConfigError, NumericError

_MAGIC = b"BRSCKPT1"


class ParameterVector:
    """Immutable named collection of float64 arrays."""

    def __init__(self, arrays: Mapping[str, np.ndarray]):
        data: dict[str, np.ndarray] = {}
        for name, arr in arrays.items():
            a = np.asarray(arr, dtype=np.float64)
            if not np.all(np.isfinite(a)):
                raise NumericError(f"non-finite entries in parameter '{name}'")
            data[name] = a
        self._data = data

    def __getitem__(self, name: str) -> np.ndarray:
        return self._data[name]

    def __contains__(self, name: str) -> bool:
        return name in self._data

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def names(self) -> list[str]:
        return list(self._data)

    def arrays(self) -> dict[str, np.ndarray]:
        return dict(self._data)

    @property
    def total_dim(self) -> int:
        return sum(a.size for a in self._data.values())

    def copy(self) -> "ParameterVector":
        return ParameterVector({k: v.copy() for k, v in self._data.items()})

    def __add__(self, other: "ParameterVector") -> "ParameterVector":
        if self.names() != other.names():
            raise ConfigError("parameter name mismatch in addition")
        return ParameterVector({k: self._data[k] + other._data[k] for k in self._data})

    def scale(self, factor: float) -> "ParameterVector":
        return ParameterVector({k: v * factor for k, v in self._data.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self._data.values()]) \
            if self._data else np.zeros(0)

    def allclose(self, other: "ParameterVector", atol: float = 0.0) -> bool:
        return self.names() == other.names() and all(
            np.allclose(self._data[k], other._data[k], atol=atol, rtol=0.0)
            for k in self._data
        )

    def to_json_dict(self) -> dict:
        return {k: v.tolist() for k, v in self._data.items()}


def add_gaussian_noise(params: ParameterVector, sigma: float,
                       rng: np.random.Generator | int) -> ParameterVector:
    """Elementwise zero-mean Gaussian perturbation; the input is untouched."""
    if sigma < 0:
        raise ConfigError(f"noise standard deviation must be >= 0, got {sigma}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if sigma == 0:
        return params.copy()
    return ParameterVector({
        name: arr + rng.normal(0.0, sigma, size=arr.shape)
        for name, arr in params.arrays().items()
    })


def save_checkpoint(path: str | Path, params: ParameterVector,
                    meta: dict | None = None) -> None:
    entries = [{"name": k, "shape": list(v.shape)} for k, v in params.arrays().items()]
    header = json.dumps({"version": 1, "arrays": entries, "meta": meta or {}},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for arr in params.arrays().values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ParameterVector, dict]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[: len(_MAGIC)] != _MAGIC:
        raise ConfigError(f"{path}: not a version-1 checkpoint (bad magic)")
    offset = len(_MAGIC)
    (header_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    try:
        header = json.loads(raw[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: corrupt checkpoint header") from exc
    if header.get("version") != 1:
        raise ConfigError(f"{path}: unsupported checkpoint version {header.get('version')}")
    offset += header_len
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise ConfigError(f"{path}: truncated checkpoint payload")
        arrays[entry["name"]] = np.frombuffer(
            raw[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    return ParameterVector(arrays), header.get("meta", {})


def export_debug_json(path: str | Path, params: ParameterVector,
                      meta: dict | None = None) -> None:
    payload = {"meta": meta or {}, "arrays": params.to_json_dict()}
    Path(path).write_text(json.dumps(payload, indent=2))
