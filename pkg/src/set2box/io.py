"""Little-endian binary artifact helpers and bit-packed code streams."""

import json
import struct

import numpy as np

from .errors import ArtifactError


def write_u32(fh, *values):
    for v in values:
        fh.write(struct.pack("<I", int(v)))


def read_u32(fh, n=1):
    buf = fh.read(4 * n)
    if len(buf) != 4 * n:
        raise ArtifactError("truncated artifact header")
    vals = struct.unpack(f"<{n}I", buf)
    return vals[0] if n == 1 else vals


def write_f32(fh, arr):
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_f32(fh, shape):
    n = int(np.prod(shape))
    buf = fh.read(4 * n)
    if len(buf) != 4 * n:
        raise ArtifactError("truncated artifact payload")
    return np.frombuffer(buf, dtype="<f4").reshape(shape).copy()


def expect_magic(fh, magic, path=""):
    got = fh.read(len(magic))
    if got != magic:
        raise ArtifactError(f"{path}: bad magic {got!r}, expected {magic!r}")


def expect_eof(fh, path=""):
    if fh.read(1) != b"":
        raise ArtifactError(f"{path}: trailing bytes after payload")


def write_sidecar(path, meta):
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_sidecar(path):
    try:
        with open(str(path) + ".json", "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        return None
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}.json: invalid sidecar") from exc


def code_width(num_keys):
    """Bits per serialized code: ceil(log2 K), and 0 when K == 1."""
    if num_keys < 1:
        raise ArtifactError(f"invalid key count {num_keys}")
    return int(np.ceil(np.log2(num_keys))) if num_keys > 1 else 0


def pack_codes(codes, num_keys):
    """Pack an (n, D) int code table into an LSB-first bitstream.

    Codes are written row-major, each in ceil(log2 K) bits, lowest bit first
    within each byte; the final byte is zero-padded.
    """
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size and (codes.min() < 0 or codes.max() >= num_keys):
        raise ArtifactError("code out of range for key count")
    w = code_width(num_keys)
    if w == 0:
        return b""
    out = bytearray((codes.size * w + 7) // 8)
    bitpos = 0
    for c in codes.reshape(-1):
        c = int(c)
        for b in range(w):
            if (c >> b) & 1:
                out[bitpos >> 3] |= 1 << (bitpos & 7)
            bitpos += 1
    return bytes(out)


def unpack_codes(buf, n_rows, n_cols, num_keys):
    """Inverse of `pack_codes`; validates the buffer length."""
    w = code_width(num_keys)
    total = n_rows * n_cols
    if w == 0:
        if len(buf) != 0:
            raise ArtifactError("unexpected code payload for K=1")
        return np.zeros((n_rows, n_cols), dtype=np.int64)
    need = (total * w + 7) // 8
    if len(buf) != need:
        raise ArtifactError(f"code payload is {len(buf)} bytes, expected {need}")
    out = np.zeros(total, dtype=np.int64)
    bitpos = 0
    for i in range(total):
        c = 0
        for b in range(w):
            if buf[bitpos >> 3] & (1 << (bitpos & 7)):
                c |= 1 << b
            bitpos += 1
        out[i] = c
    if out.size and out.max() >= num_keys:
        raise ArtifactError("decoded code out of range")
    return out.reshape(n_rows, n_cols)
