"""Binary tensor container (.ednt) and PNG export.

Layout, all little-endian:

    magic   4 bytes  b"EDNT"
    version u16      currently 1
    count   u32      number of sections
    per section:
        name_len u16, name UTF-8
        dtype    u8   (1 = float64, the only tag)
        rank     u32
        dims     u64 x rank
        payload  float64 row-major

Round trips are bit-exact. Any structural problem (bad magic, unknown
version or dtype, truncation, dimension overflow) raises FormatError
before any partial result escapes.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np
from PIL import Image

from rldenoise.exceptions import FormatError

MAGIC = b"EDNT"
VERSION = 1
DTYPE_F64 = 1
_MAX_ELEMENTS = 1 << 40  # sanity cap against absurd declared dims

PathLike = Union[str, Path]


def save_tensors(path: PathLike, sections: Dict[str, np.ndarray]) -> None:
    """Write named float64 arrays to ``path`` in container format."""
    parts = [MAGIC, struct.pack("<HI", VERSION, len(sections))]
    for name, arr in sections.items():
        # asarray (not ascontiguousarray): the latter promotes 0-d to 1-d.
        arr = np.asarray(arr, dtype=np.float64)
        name_bytes = name.encode("utf-8")
        if len(name_bytes) > 0xFFFF:
            raise ValueError(f"section name too long: {name!r}")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<BI", DTYPE_F64, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.astype("<f8", copy=False).tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError("container truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_tensors(path: PathLike) -> Dict[str, np.ndarray]:
    """Read a container back into an ordered name -> array mapping."""
    reader = _Reader(Path(path).read_bytes())
    if reader.take(4) != MAGIC:
        raise FormatError(f"bad magic in {path}")
    version, count = reader.unpack("<HI")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        dtype, rank = reader.unpack("<BI")
        if dtype != DTYPE_F64:
            raise FormatError(f"unknown dtype tag {dtype} for section {name!r}")
        dims = reader.unpack(f"<{rank}Q") if rank else ()
        n_elements = 1
        for d in dims:
            n_elements *= d
        if n_elements > _MAX_ELEMENTS:
            raise FormatError(f"dimension overflow in section {name!r}: {dims}")
        payload = reader.take(8 * n_elements)
        if name in out:
            raise FormatError(f"duplicate section name {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    if reader.pos != len(reader.blob):
        raise FormatError("trailing bytes after last section")
    return out


# -- RNG state as container payload --------------------------------------------


def rng_state_to_array(rng: np.random.Generator) -> np.ndarray:
    """Pack a PCG64 generator state into 6 float64 slots, bit-exactly."""
    state = rng.bit_generator.state
    if state["bit_generator"] != "PCG64":
        raise ValueError("only PCG64 generators are supported")
    s = state["state"]["state"]
    inc = state["state"]["inc"]
    words = np.array(
        [
            s & 0xFFFFFFFFFFFFFFFF,
            (s >> 64) & 0xFFFFFFFFFFFFFFFF,
            inc & 0xFFFFFFFFFFFFFFFF,
            (inc >> 64) & 0xFFFFFFFFFFFFFFFF,
            int(state["has_uint32"]),
            int(state["uinteger"]),
        ],
        dtype=np.uint64,
    )
    return words.view(np.float64)


def rng_state_from_array(arr: np.ndarray) -> np.random.Generator:
    words = np.ascontiguousarray(arr, dtype=np.float64).view(np.uint64)
    if words.size != 6:
        raise ValueError("rng state array must have 6 slots")
    state = {
        "bit_generator": "PCG64",
        "state": {
            "state": int(words[0]) | (int(words[1]) << 64),
            "inc": int(words[2]) | (int(words[3]) << 64),
        },
        "has_uint32": int(words[4]),
        "uinteger": int(words[5]),
    }
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


# -- PNG export ----------------------------------------------------------------


def save_png(path: PathLike, image: np.ndarray) -> None:
    """Write a [0,1] grayscale image as 8-bit PNG for human inspection."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PNG export expects a 2-d image, got shape {img.shape}")
    quantized = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized, mode="L").save(str(path), format="PNG")
