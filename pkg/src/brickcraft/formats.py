"""On-disk formats: BBVOX1 voxel grids, plain PBM images, IDX (MNIST) and LDraw."""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


# -- BBVOX1 -----------------------------------------------------------------
# ASCII header "BBVOX1 nx ny nz\n" followed by nx*ny*nz '0'/'1' characters,
# x varying fastest, then y, then z.

def encode_bbvox(bits: np.ndarray) -> bytes:
    bits = np.asarray(bits, dtype=bool)
    if bits.ndim != 3:
        raise ValueError(f"expected a 3-D grid, got shape {bits.shape}")
    nx, ny, nz = bits.shape
    body = np.where(bits.ravel(order="F"), ord("1"), ord("0")).astype(np.uint8).tobytes()
    return f"BBVOX1 {nx} {ny} {nz}\n".encode("ascii") + body


def decode_bbvox(data: bytes) -> np.ndarray:
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError("missing header terminator", len(data))
    parts = data[:nl].split()
    if len(parts) != 4 or parts[0] != b"BBVOX1":
        raise FormatError("bad BBVOX1 header", 0)
    try:
        nx, ny, nz = (int(p) for p in parts[1:])
    except ValueError:
        raise FormatError("non-integer dimension", 7) from None
    if min(nx, ny, nz) < 0:
        raise FormatError("negative dimension", 7)
    body = data[nl + 1:]
    n = nx * ny * nz
    if len(body) < n:
        raise FormatError(f"truncated payload: expected {n} cells, got {len(body)}",
                          nl + 1 + len(body))
    if body[n:].strip():
        raise FormatError("trailing data after payload", nl + 1 + n)
    arr = np.frombuffer(body[:n], dtype=np.uint8)
    bad = np.flatnonzero((arr != ord("0")) & (arr != ord("1")))
    if bad.size:
        raise FormatError("cell character must be '0' or '1'", nl + 1 + int(bad[0]))
    return (arr == ord("1")).reshape((nx, ny, nz), order="F")


def write_bbvox(path: str | Path, bits: np.ndarray) -> None:
    Path(path).write_bytes(encode_bbvox(bits))


def read_bbvox(path: str | Path) -> np.ndarray:
    return decode_bbvox(Path(path).read_bytes())


# -- plain PBM (P1) ---------------------------------------------------------

def write_pbm(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=bool)
    h, w = image.shape
    rows = [" ".join("1" if v else "0" for v in row) for row in image]
    Path(path).write_text(f"P1\n{w} {h}\n" + "\n".join(rows) + "\n")


def read_pbm(path: str | Path) -> np.ndarray:
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P1":
        raise FormatError("not a plain PBM (P1) file", 0)
    w, h = int(tokens[1]), int(tokens[2])
    # P1 allows pixels without separating whitespace
    pix = "".join(tokens[3:])
    if len(pix) != w * h:
        raise FormatError(f"expected {w * h} pixels, got {len(pix)}", 0)
    return (np.frombuffer(pix.encode(), dtype=np.uint8) == ord("1")).reshape(h, w)


def write_pgm(path: str | Path, image: np.ndarray, maxval: int = 255) -> None:
    """Plain PGM (P2); boolean images map to 0 / maxval."""
    a = np.asarray(image)
    if a.dtype == bool:
        a = a.astype(np.int64) * maxval
    h, w = a.shape
    rows = [" ".join(str(int(v)) for v in row) for row in a]
    Path(path).write_text(f"P2\n{w} {h}\n{maxval}\n" + "\n".join(rows) + "\n")


# -- IDX (MNIST) ------------------------------------------------------------

_IDX_TYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path: str | Path) -> np.ndarray:
    """Read an IDX file (optionally gzipped), e.g. MNIST images 0x00000803 / labels 0x00000801."""
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise FormatError("bad IDX magic", 0)
    dtype = _IDX_TYPES.get(raw[2])
    if dtype is None:
        raise FormatError(f"unknown IDX element type 0x{raw[2]:02x}", 2)
    ndim = raw[3]
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError("truncated IDX dimensions", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims)) if dims else 1
    dt = np.dtype(dtype)
    if len(raw) - head < count * dt.itemsize:
        raise FormatError("truncated IDX payload", len(raw))
    return np.frombuffer(raw, dtype=dt, count=count, offset=head).reshape(dims)


def write_idx(path: str | Path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    head = bytes([0, 0, 0x08, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(head + arr.tobytes())


# -- LDraw ------------------------------------------------------------------

STUD_LDU = 20
BRICK_LDU = 24


def ldraw_lines(poses, color: int = 4) -> list[str]:
    """Type-1 lines placing part 3001 (2x4 brick); LDraw's -y is up."""
    out = []
    for p in poses:
        sx, sy = (4, 2) if p.dir == 0 else (2, 4)
        x = (p.x + sx / 2) * STUD_LDU
        z = (p.y + sy / 2) * STUD_LDU
        y = -(p.z + 1) * BRICK_LDU
        rot = "1 0 0 0 1 0 0 0 1" if p.dir == 0 else "0 0 1 0 1 0 -1 0 0"
        out.append(f"1 {color} {x:g} {y:g} {z:g} {rot} 3001.dat")
    return out


def write_ldraw(path: str | Path, poses, name: str = "assembly") -> None:
    lines = [f"0 {name}", f"0 Name: {Path(path).name}"] + ldraw_lines(poses)
    Path(path).write_text("\n".join(lines) + "\n")
