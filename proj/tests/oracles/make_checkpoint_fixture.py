#!/usr/bin/env python3
"""Writes the format-stability fixture checkpoint used by the test suite.

The byte layout mirrors include/wavedef/checkpoint.hpp exactly:
magic "WDC1", tag, parameter manifest (name, shape, offset), then raw
little-endian float32 buffers. The fixture pins the on-disk format: if the
C++ writer or reader changes behavior, loading this committed file breaks.
"""

import struct
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "fixtures" / "fixture_v1.ckpt"

TAG = b"fixture:v1"
PARAMS = [
    ("a.w", (2, 3), [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]),
    ("a.b", (2,), [-1.0, 2.0]),
]


def main() -> None:
    out = bytearray(b"WDC1")
    out += struct.pack("<I", len(TAG)) + TAG
    out += struct.pack("<I", len(PARAMS))
    offset = 0
    for name, shape, values in PARAMS:
        assert len(values) == int.__mul__(*shape) if len(shape) == 2 else len(values) == shape[0]
        out += struct.pack("<I", len(name)) + name.encode()
        out += struct.pack("<I", len(shape))
        for d in shape:
            out += struct.pack("<q", d)
        out += struct.pack("<Q", offset)
        offset += 4 * len(values)
    out += struct.pack("<Q", offset)
    for _, _, values in PARAMS:
        out += struct.pack(f"<{len(values)}f", *values)

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_bytes(bytes(out))
    print(f"wrote {OUT} ({len(out)} bytes)")


if __name__ == "__main__":
    main()
