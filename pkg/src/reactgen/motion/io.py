"""Motion files.

Binary: magic "MRRS", u16 version=1, f32 fps, u32 N, u32 D, u32 K, then N*D
little-endian f32 frames. Text: header `#MRRS v1 fps=<f> N=<n> D=<d> K=<k>`,
optional further `#`-comment lines, then N whitespace-separated rows.
``write_motion`` picks text for paths ending in .txt, binary otherwise;
``read_motion`` sniffs the leading bytes.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from reactgen.errors import ContractError, MotionIOError
from reactgen.motion.layout import MotionLayout, MotionSequence

MAGIC = b"MRRS"
VERSION = 1
_HEADER = struct.Struct("<4sHfIII")


def write_motion(path, m: MotionSequence, comments: list[str] | None = None) -> None:
    if str(path).endswith(".txt"):
        _write_text(path, m, comments or [])
    else:
        if comments:
            raise ContractError("comments are only supported by the text format")
        _write_binary(path, m)


def read_motion(path) -> MotionSequence:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return _read_binary(path)
    if head == b"#MRR":
        return _read_text(path)
    if len(head) == 0:
        raise MotionIOError(f"{path}: empty file", offset=0)
    raise MotionIOError(f"{path}: unrecognized leading bytes {head!r}", offset=0)


def _write_binary(path, m: MotionSequence) -> None:
    frames = np.ascontiguousarray(m.frames, dtype="<f4")
    n, d = frames.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, float(m.fps), n, d, m.layout.num_joints))
        fh.write(frames.tobytes())


def _read_binary(path) -> MotionSequence:
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise MotionIOError(f"{path}: truncated header", offset=len(raw))
        magic, version, fps, n, d, k = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise MotionIOError(f"{path}: bad magic {magic!r}", offset=0)
        if version != VERSION:
            raise MotionIOError(f"{path}: unsupported format version {version}", offset=4)
        expected = _HEADER.size + 4 * n * d
        if size != expected:
            raise MotionIOError(
                f"{path}: payload size mismatch (expected {expected} bytes, file has {size})",
                offset=min(size, expected),
            )
        frames = np.frombuffer(fh.read(4 * n * d), dtype="<f4").reshape(n, d)
    layout = MotionLayout(num_joints=k)
    if layout.channels != d:
        raise MotionIOError(f"{path}: D={d} inconsistent with K={k}", offset=10)
    if not np.isfinite(frames).all():
        raise MotionIOError(f"{path}: non-finite frame values", offset=_HEADER.size)
    return MotionSequence(frames.astype(np.float32), fps=fps, layout=layout)


def _write_text(path, m: MotionSequence, comments: list[str]) -> None:
    frames = np.asarray(m.frames, dtype=np.float32)
    n, d = frames.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#MRRS v1 fps={m.fps:.9g} N={n} D={d} K={m.layout.num_joints}\n")
        for comment in comments:
            fh.write(f"# {comment}\n")
        for row in frames:
            fh.write(" ".join(f"{v:.9g}" for v in row))
            fh.write("\n")


def _read_text(path) -> MotionSequence:
    with open(path, "rb") as fh:
        blob = fh.read()
    offset = 0
    header = None
    rows: list[np.ndarray] = []
    meta: dict[str, str] = {}
    for line in blob.splitlines(keepends=True):
        stripped = line.strip()
        if header is None:
            if not stripped.startswith(b"#MRRS"):
                raise MotionIOError(f"{path}: missing #MRRS header", offset=offset)
            fields = stripped.decode("utf-8", "replace").split()
            if len(fields) < 2 or fields[1] != f"v{VERSION}":
                raise MotionIOError(f"{path}: unsupported text version", offset=offset)
            for tok in fields[2:]:
                if "=" not in tok:
                    raise MotionIOError(f"{path}: malformed header field {tok!r}", offset=offset)
                key, _, val = tok.partition("=")
                meta[key] = val
            for key in ("fps", "N", "D", "K"):
                if key not in meta:
                    raise MotionIOError(f"{path}: header missing {key}", offset=offset)
            header = meta
        elif stripped.startswith(b"#") or not stripped:
            pass  # comment / blank line
        else:
            try:
                row = np.array([float(v) for v in stripped.split()], dtype=np.float32)
            except ValueError:
                raise MotionIOError(f"{path}: unparsable frame row", offset=offset)
            rows.append(row)
        offset += len(line)
    if header is None:
        raise MotionIOError(f"{path}: empty file", offset=0)
    try:
        n, d, k = int(header["N"]), int(header["D"]), int(header["K"])
        fps = float(header["fps"])
    except ValueError:
        raise MotionIOError(f"{path}: non-numeric header field", offset=0)
    if len(rows) != n:
        raise MotionIOError(f"{path}: expected {n} frame rows, found {len(rows)}", offset=offset)
    frames = np.stack(rows) if rows else np.zeros((0, d), dtype=np.float32)
    if frames.shape[1] != d:
        raise MotionIOError(f"{path}: row width {frames.shape[1]} != D={d}", offset=offset)
    layout = MotionLayout(num_joints=k)
    if layout.channels != d:
        raise MotionIOError(f"{path}: D={d} inconsistent with K={k}", offset=0)
    if not np.isfinite(frames).all():
        raise MotionIOError(f"{path}: non-finite frame values", offset=0)
    return MotionSequence(frames, fps=fps, layout=layout)
