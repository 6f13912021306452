"""Binary containers: the triplet dataset format and the checkpoint format.

Both share one record layout (little-endian sizes, u32 rank, u32 extents,
raw payload) framed by an 8-byte magic, a u32 version, a u64 record count,
and a trailing CRC32 over everything after the magic. Datasets carry f32
tensors; checkpoints carry named tensors with a dtype byte so parameters
round-trip in f64 and step counters in i64.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

DATASET_MAGIC = b"NALIGN01"
CHECKPOINT_MAGIC = b"NALIGNCK"
DATASET_VERSION = 1
CHECKPOINT_VERSION = 1

SPLIT_TRAIN = "train"
SPLIT_TEST = "test"
_SPLIT_CODES = {SPLIT_TRAIN: 0, SPLIT_TEST: 1}
_SPLIT_NAMES = {v: k for k, v in _SPLIT_CODES.items()}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}
_DTYPE_BY_CODE = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}


@dataclass
class TripletSample:
    pair_id: int
    split: str  # "train" or "test"
    fmri: np.ndarray  # (T_f, D_f) float32
    video: np.ndarray  # (T_v, D_v) float32
    caption: np.ndarray  # (D_c,) float32


class _Reader:
    def __init__(self, blob: bytes, start: int):
        self.blob = blob
        self.pos = start

    def pull(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.blob):
            raise FormatError("truncated container", offset=self.pos)
        out = struct.unpack_from(fmt, self.blob, self.pos)
        self.pos += size
        return out

    def pull_bytes(self, size: int) -> bytes:
        if self.pos + size > len(self.blob):
            raise FormatError("truncated container", offset=self.pos)
        out = self.blob[self.pos : self.pos + size]
        self.pos += size
        return out


def _pack_tensor(arr: np.ndarray, dtype: np.dtype) -> bytes:
    arr = arr.astype(dtype, copy=False)
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)  # would uprank 0-d inputs to (1,)
    head = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype(dtype.newbyteorder("<"), copy=False).tobytes(order="C")


def _unpack_tensor(r: _Reader, dtype: np.dtype) -> np.ndarray:
    (rank,) = r.pull("<I")
    if rank > 16:
        raise FormatError(f"implausible tensor rank {rank}", offset=r.pos - 4)
    shape = r.pull(f"<{rank}I") if rank else ()
    count = int(np.prod(shape)) if rank else 1
    payload = r.pull_bytes(count * dtype.itemsize)
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def _check_frame(blob: bytes, magic: bytes, version: int, path: str) -> _Reader:
    if len(blob) < len(magic) + 4 + 8 + 4:
        raise FormatError(f"{path}: container too small", offset=0)
    if blob[: len(magic)] != magic:
        raise FormatError(
            f"{path}: bad magic {blob[:len(magic)]!r}, expected {magic!r}", offset=0
        )
    stored_crc = struct.unpack_from("<I", blob, len(blob) - 4)[0]
    actual_crc = zlib.crc32(blob[len(magic) : -4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise FormatError(
            f"{path}: checksum mismatch, stored {stored_crc:#010x} "
            f"actual {actual_crc:#010x}",
            offset=len(blob) - 4,
        )
    r = _Reader(blob[:-4], len(magic))
    (got_version,) = r.pull("<I")
    if got_version != version:
        raise FormatError(
            f"{path}: unsupported version {got_version}, expected {version}",
            offset=len(magic),
        )
    return r


def write_dataset(path: str, samples: list[TripletSample]) -> None:
    body = bytearray()
    body += struct.pack("<I", DATASET_VERSION)
    body += struct.pack("<Q", len(samples))
    f32 = np.dtype("<f4")
    for s in samples:
        body += struct.pack("<Q", int(s.pair_id))
        body += struct.pack("<B", _SPLIT_CODES[s.split])
        for tensor in (s.fmri, s.video, s.caption):
            body += _pack_tensor(np.asarray(tensor), f32)
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(bytes(body))
        fh.write(struct.pack("<I", crc))


def read_dataset(path: str) -> list[TripletSample]:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _check_frame(blob, DATASET_MAGIC, DATASET_VERSION, path)
    (count,) = r.pull("<Q")
    f32 = np.dtype("<f4")
    samples = []
    for _ in range(count):
        (pair_id,) = r.pull("<Q")
        (split_code,) = r.pull("<B")
        if split_code not in _SPLIT_NAMES:
            raise FormatError(f"{path}: unknown split code {split_code}", offset=r.pos - 1)
        fmri = _unpack_tensor(r, f32)
        video = _unpack_tensor(r, f32)
        caption = _unpack_tensor(r, f32)
        samples.append(
            TripletSample(
                pair_id=int(pair_id),
                split=_SPLIT_NAMES[split_code],
                fmri=fmri,
                video=video,
                caption=caption,
            )
        )
    if r.pos != len(r.blob):
        raise FormatError(f"{path}: {len(r.blob) - r.pos} trailing bytes", offset=r.pos)
    return samples


def write_tensor_map(path: str, tensors: dict[str, np.ndarray]) -> None:
    """Checkpoint container: named tensors, insertion order preserved."""
    body = bytearray()
    body += struct.pack("<I", CHECKPOINT_VERSION)
    body += struct.pack("<Q", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise FormatError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        encoded = name.encode("utf-8")
        body += struct.pack("<H", len(encoded))
        body += encoded
        body += struct.pack("<B", code)
        body += _pack_tensor(arr, _DTYPE_BY_CODE[code])
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(bytes(body))
        fh.write(struct.pack("<I", crc))


def read_tensor_map(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _check_frame(blob, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, path)
    (count,) = r.pull("<Q")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.pull("<H")
        name = r.pull_bytes(name_len).decode("utf-8")
        (code,) = r.pull("<B")
        if code not in _DTYPE_BY_CODE:
            raise FormatError(f"{path}: unknown dtype code {code}", offset=r.pos - 1)
        out[name] = _unpack_tensor(r, _DTYPE_BY_CODE[code])
    if r.pos != len(r.blob):
        raise FormatError(f"{path}: {len(r.blob) - r.pos} trailing bytes", offset=r.pos)
    return out


def write_manifest(path: str, fields: dict) -> None:
    lines = [f"{key} = {fields[key]}" for key in sorted(fields)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
