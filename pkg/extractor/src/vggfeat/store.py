"""Embedding store writers (the consumer side parses these formats).

Binary: magic "MMEB", little-endian u32 dimension, then per record a u32
key byte length, the UTF-8 key, and dim float32 little-endian values.
Text: a "dim=<N>" header line, then "<key> <v1> ... <vN>" per record.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MMEB"


def write_store(path: str | Path, dim: int,
                items: list[tuple[str, np.ndarray]], *, text: bool = False) -> None:
    path = Path(path)
    for key, vec in items:
        if vec.shape != (dim,):
            raise ValueError(f"vector for {key!r} has shape {vec.shape}, expected ({dim},)")
        if text and (" " in key or "\n" in key):
            raise ValueError(f"key {key!r} not representable in the text format")
    if text:
        with path.open("w", encoding="utf-8") as fh:
            fh.write(f"dim={dim}\n")
            for key, vec in items:
                fh.write(key + " " + " ".join(repr(float(x)) for x in vec) + "\n")
        return
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", dim))
        for key, vec in items:
            encoded = key.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(np.asarray(vec, dtype="<f4").tobytes())
