"""
Binary checkpoint files for ParamStore.

Layout (little-endian):
    b"EDAL"                       magic
    u32                           format version
    u32 k_e, u32 k_r, u32 k_s     dims
    u32 entities, relations, types
    f64[...] payload              entity_emb, relation_emb, rel_proj, type_proj, null_vec (row-major)
    u64                           checksum: sum of payload bytes mod 2**64
"""

import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from kgalign.core.exceptions import (
    CheckpointDimensionError,
    CheckpointFormatError,
    CheckpointTruncatedError,
)
from kgalign.core.logging import get_logger
from kgalign.core.params import ParamStore
from kgalign.models.schemas import Dims

logger = get_logger(__name__)

MAGIC = b"EDAL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sI3I3I")
_CHECKSUM = struct.Struct("<Q")
_F64 = np.dtype("<f8")


def _payload_shapes(dims: Dims, entities: int, relations: int, types: int):
    return [
        (entities, dims.k_e),
        (relations, dims.k_r),
        (relations, dims.k_r, dims.k_s),
        (types, dims.k_e, dims.k_s),
        (dims.k_s,),
    ]


def _checksum(payload: bytes) -> int:
    return int(np.frombuffer(payload, dtype=np.uint8).sum(dtype=np.uint64))


def save_checkpoint(store: ParamStore, path: Union[str, Path]) -> None:
    counts = store.counts
    dims = store.dims
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, dims.k_e, dims.k_r, dims.k_s,
        counts["entities"], counts["relations"], counts["types"],
    )
    payload = b"".join(
        np.ascontiguousarray(t, dtype=_F64).tobytes()
        for t in (store.entity_emb, store.relation_emb, store.rel_proj, store.type_proj, store.null_vec)
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)
        f.write(_CHECKSUM.pack(_checksum(payload)))
    logger.info("Checkpoint saved", path=str(path), bytes=len(header) + len(payload) + _CHECKSUM.size)


def load_checkpoint(path: Union[str, Path], expected_dims: Optional[Dims] = None,
                    expected_counts: Optional[dict] = None) -> ParamStore:
    """
    Read a checkpoint written by save_checkpoint.

    Args:
        expected_dims: if given, every dimension must match the header
        expected_counts: optional {"entities", "relations", "types"} to match

    Raises:
        CheckpointFormatError, CheckpointTruncatedError, CheckpointDimensionError
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        if not data.startswith(MAGIC[: len(data)]):
            raise CheckpointFormatError(f"{path}: not a checkpoint file (bad magic)")
        raise CheckpointTruncatedError(path, _HEADER.size, len(data))

    magic, version, k_e, k_r, k_s, entities, relations, types = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint file (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {version}")
    if min(k_e, k_r, k_s) < 1:
        raise CheckpointFormatError(f"{path}: invalid dims ({k_e}, {k_r}, {k_s})")
    dims = Dims(k_e=k_e, k_r=k_r, k_s=k_s)

    if expected_dims is not None:
        for name in ("k_e", "k_r", "k_s"):
            if getattr(expected_dims, name) != getattr(dims, name):
                raise CheckpointDimensionError(name, getattr(expected_dims, name), getattr(dims, name))
    if expected_counts is not None:
        actual = {"entities": entities, "relations": relations, "types": types}
        for name, value in expected_counts.items():
            if actual[name] != value:
                raise CheckpointDimensionError(name, value, actual[name])

    shapes = _payload_shapes(dims, entities, relations, types)
    payload_size = sum(int(np.prod(s)) for s in shapes) * _F64.itemsize
    expected_size = _HEADER.size + payload_size + _CHECKSUM.size
    if len(data) < expected_size:
        raise CheckpointTruncatedError(path, expected_size, len(data))
    if len(data) > expected_size:
        raise CheckpointFormatError(f"{path}: {len(data) - expected_size} unexpected trailing bytes")

    payload = data[_HEADER.size:_HEADER.size + payload_size]
    (stored_sum,) = _CHECKSUM.unpack_from(data, _HEADER.size + payload_size)
    if stored_sum != _checksum(payload):
        raise CheckpointFormatError(f"{path}: checksum mismatch")

    tensors = []
    offset = 0
    for shape in shapes:
        n = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype=_F64, count=n, offset=offset).reshape(shape)
        tensors.append(arr.astype(np.float64))
        offset += n * _F64.itemsize

    logger.info("Checkpoint loaded", path=str(path), k_e=k_e, k_r=k_r, k_s=k_s,
                entities=entities, relations=relations, types=types)
    return ParamStore(*tensors, dims=dims)
