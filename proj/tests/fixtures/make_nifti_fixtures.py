"""Writes the golden NIfTI-1 fixtures used by the reader tests.

The encoder here packs the 348-byte header field by field with `struct`, so
the fixtures do not depend on the C++ writer they are used to test. Voxel
values follow value(i) for flat index i (x fastest); the tests recompute them.

    python3 make_nifti_fixtures.py
"""

import gzip
import math
import struct

DIMS = (3, 2, 2)
N = DIMS[0] * DIMS[1] * DIMS[2]
SROW = ((2.0, 0.0, 0.0, -10.0), (0.0, 3.0, 0.0, 5.0), (0.0, 0.0, 1.5, 7.0))

TYPES = {
    # name: (datatype code, bitpix, struct code, value(i))
    "uint8": (2, 8, "B", lambda i: 20 * i + 3),
    "int16": (4, 16, "h", lambda i: -600 + 101 * i),
    "int32": (8, 32, "i", lambda i: -70000 + 12345 * i),
    "float32": (16, 32, "f", lambda i: 0.25 * i - 1.5),
    "float64": (64, 64, "d", lambda i: math.pi * (i - 5) / 7.0),
}


def header(order, code, bitpix, dims, slope=1.0, inter=0.0, sform=True, qform=False):
    h = bytearray(348)
    struct.pack_into(order + "i", h, 0, 348)
    dim = [3, *dims, 1, 1, 1, 1]
    struct.pack_into(order + "8h", h, 40, *dim)
    struct.pack_into(order + "h", h, 70, code)
    struct.pack_into(order + "h", h, 72, bitpix)
    struct.pack_into(order + "8f", h, 76, 1.0, 2.0, 3.0, 1.5, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into(order + "f", h, 108, 352.0)
    struct.pack_into(order + "f", h, 112, slope)
    struct.pack_into(order + "f", h, 116, inter)
    h[123] = 2  # xyzt_units: mm
    struct.pack_into(order + "h", h, 252, 1 if qform else 0)
    struct.pack_into(order + "h", h, 254, 1 if sform else 0)
    if qform:
        # 90 degrees about z: b = c = 0, d = sin(45deg)
        struct.pack_into(order + "3f", h, 256, 0.0, 0.0, math.sqrt(0.5))
        struct.pack_into(order + "3f", h, 268, 4.0, -8.0, 12.0)
    if sform:
        for row, off in zip(SROW, (280, 296, 312)):
            struct.pack_into(order + "4f", h, off, *row)
    h[344:348] = b"n+1\x00"
    return bytes(h)


def volume(order, fmt, fn, n):
    return struct.pack(order + fmt * n, *(fn(i) for i in range(n)))


def write(name, data):
    with open(name, "wb") as f:
        f.write(data)


for tname, (code, bitpix, fmt, fn) in TYPES.items():
    for order, tag in (("<", "le"), (">", "be")):
        data = header(order, code, bitpix, DIMS) + b"\x00" * 4 + volume(order, fmt, fn, N)
        write(f"{tname}_{tag}.nii", data)
        if tag == "le":
            write(f"{tname}_{tag}.nii.gz", gzip.compress(data, mtime=0))

# 2x2x2 uint8 0..7 with slope 2, intercept 1
scaled = header("<", 2, 8, (2, 2, 2), slope=2.0, inter=1.0) + b"\x00" * 4 + bytes(range(8))
write("uint8_scaled.nii", scaled)

# qform only, no sform
qf = header("<", 16, 32, DIMS, sform=False, qform=True) + b"\x00" * 4 + volume("<", "f", TYPES["float32"][3], N)
write("float32_qform.nii", qf)

# truncated: header promises 12 voxels, file holds 5
write("truncated.nii", header("<", 2, 8, DIMS) + b"\x00" * 4 + bytes(range(5)))

# paired-file magic
pair = bytearray(header("<", 2, 8, DIMS) + b"\x00" * 4 + bytes(range(N)))
pair[344:348] = b"ni1\x00"
write("paired_magic.nii", bytes(pair))
