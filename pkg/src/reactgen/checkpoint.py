"""Named-tensor checkpoint files.

Layout: magic "MRCK", u16 version, u32 header length, JSON header, u32 entry
count, then per entry (u16 name length, UTF-8 name, u8 dtype code, u8 ndim,
u32 dims..., raw little-endian data), and a trailing u32 CRC32 over all
preceding bytes. The header records the config hash, the noise-schedule
parameters and the motion layout; the schedule itself is always recomputed
from those parameters, never stored.

Tensor names are namespaced by component: ``vae.body.*``, ``vae.hands.*``,
``reactor.*``, ``diff.body.*``, ``diff.hands.*``. A stage-two checkpoint
embeds the stage-one ``vae.*`` entries unchanged, so one file restores the
whole pipeline.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from reactgen.errors import CheckpointError, ContractError

MAGIC = b"MRCK"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U8 = struct.Struct("<B")


def save_checkpoint(path, entries: dict, header: dict) -> None:
    if not entries:
        raise ContractError("refusing to write a checkpoint with no tensors")
    blob = bytearray()
    blob += MAGIC
    blob += _U16.pack(VERSION)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob += _U32.pack(len(header_bytes))
    blob += header_bytes
    blob += _U32.pack(len(entries))
    for name in sorted(entries):
        # ascontiguousarray promotes 0-d to 1-d, so keep the original around
        # for the recorded shape.
        src = np.asarray(entries[name])
        arr = np.ascontiguousarray(src)
        code = _DTYPE_CODES.get(arr.dtype.newbyteorder("<"))
        if code is None:
            raise ContractError(f"entry {name!r} has unsupported dtype {arr.dtype}")
        name_bytes = name.encode("utf-8")
        if len(name_bytes) > 0xFFFF:
            raise ContractError(f"entry name too long: {name[:40]}...")
        blob += _U16.pack(len(name_bytes))
        blob += name_bytes
        blob += _U8.pack(code)
        blob += _U8.pack(src.ndim)
        for dim in src.shape:
            blob += _U32.pack(dim)
        blob += arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    blob += _U32.pack(zlib.crc32(bytes(blob)))
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.path = path
        self.pos = 0

    def pull(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated file", offset=self.pos)
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return _U8.unpack(self.pull(1))[0]

    def u16(self) -> int:
        return _U16.unpack(self.pull(2))[0]

    def u32(self) -> int:
        return _U32.unpack(self.pull(4))[0]


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns (header, {name: array}). Verifies the CRC before parsing."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}", offset=0)
    if len(blob) < 10:
        raise CheckpointError(f"{path}: truncated file", offset=len(blob))
    (stored_crc,) = _U32.unpack(blob[-4:])
    actual_crc = zlib.crc32(blob[:-4])
    if stored_crc != actual_crc:
        raise CheckpointError(
            f"{path}: checksum mismatch (stored {stored_crc:#010x}, "
            f"computed {actual_crc:#010x})", offset=len(blob) - 4)

    r = _Reader(blob[:-4], path)
    r.pull(4)
    version = r.u16()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}", offset=4)
    header_len = r.u32()
    try:
        header = json.loads(r.pull(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})", offset=10) from None

    entries = {}
    count = r.u32()
    for _ in range(count):
        name = r.pull(r.u16()).decode("utf-8")
        code = r.u8()
        dtype = _CODE_DTYPES.get(code)
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name!r}",
                                  offset=r.pos - 1)
        shape = tuple(r.u32() for _ in range(r.u8()))
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        data = np.frombuffer(r.pull(n_bytes), dtype=dtype).reshape(shape)
        if name in entries:
            raise CheckpointError(f"{path}: duplicate entry {name!r}", offset=r.pos)
        entries[name] = data.copy()
    if r.pos != len(r.blob):
        raise CheckpointError(f"{path}: {len(r.blob) - r.pos} trailing bytes", offset=r.pos)
    return header, entries


def namespace(prefix: str, state: dict) -> dict:
    return {f"{prefix}.{name}": arr for name, arr in state.items()}


def strip_namespace(prefix: str, entries: dict) -> dict:
    dot = prefix + "."
    return {name[len(dot):]: arr for name, arr in entries.items() if name.startswith(dot)}


def summarize(header: dict, entries: dict) -> str:
    """Deterministic human-readable listing for the inspect command."""
    lines = [
        f"format version : {header.get('version', '?')}",
        f"kind           : {header.get('kind', '?')}",
        f"config hash    : {header.get('config_hash', '?')}",
        f"schedule       : T_diff={header.get('schedule', {}).get('T_diff', '?')} "
        f"s={header.get('schedule', {}).get('s', '?')}",
        f"layout joints  : {header.get('layout', {}).get('num_joints', '?')}",
        f"entries        : {len(entries)}",
    ]
    total = 0
    by_ns: dict[str, int] = {}
    for name in sorted(entries):
        arr = entries[name]
        total += arr.size
        by_ns[name.split(".")[0]] = by_ns.get(name.split(".")[0], 0) + arr.size
        shape = "x".join(str(d) for d in arr.shape) or "scalar"
        lines.append(f"  {name}  {shape}  {arr.dtype}")
    for ns in sorted(by_ns):
        lines.append(f"params[{ns}] = {by_ns[ns]}")
    lines.append(f"params[total] = {total}")
    return "\n".join(lines) + "\n"
