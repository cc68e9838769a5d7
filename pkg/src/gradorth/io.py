"""File formats: GOMX binary matrices, CSV matrices, text-header containers.

GOMX layout (all integers little-endian):

    bytes 0-3    magic "GOMX"
    bytes 4-7    u32 format version, currently 1
    bytes 8-15   u64 row count
    bytes 16-23  u64 column count
    bytes 24-    rows*cols float64 values, row-major, little-endian

Container files (networks, subspaces) are a short ASCII header of
"key = value" lines between a magic line and an "end" line, followed by
back-to-back GOMX blobs. "offsetN" keys give each blob's byte offset
relative to the first byte after the header.
"""

import struct

import numpy as np

GOMX_MAGIC = b"GOMX"
GOMX_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def encode_matrix(a):
    """Serialize a 2-D float64 array to GOMX bytes."""
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    if a.ndim != 2:
        raise ValueError("GOMX stores 2-D matrices, got shape %s" % (a.shape,))
    header = _HEADER.pack(GOMX_MAGIC, GOMX_VERSION, a.shape[0], a.shape[1])
    return header + a.astype("<f8").tobytes(order="C")


def decode_matrix(buf, offset=0):
    """Parse one GOMX blob from buf at offset; returns (matrix, next_offset)."""
    if len(buf) < offset + _HEADER.size:
        raise ValueError("truncated GOMX header")
    magic, version, rows, cols = _HEADER.unpack_from(buf, offset)
    if magic != GOMX_MAGIC:
        raise ValueError("bad GOMX magic %r" % (magic,))
    if version != GOMX_VERSION:
        raise ValueError("unsupported GOMX version %d" % version)
    start = offset + _HEADER.size
    nbytes = rows * cols * 8
    if len(buf) < start + nbytes:
        raise ValueError("truncated GOMX payload: expected %d data bytes" % nbytes)
    flat = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=start)
    out = flat.reshape(rows, cols).astype(float)
    if not np.isfinite(out).all():
        raise ValueError("GOMX payload contains non-finite entries")
    return out, start + nbytes


def write_gomx(path, a):
    with open(path, "wb") as fh:
        fh.write(encode_matrix(a))


def read_gomx(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    matrix, consumed = decode_matrix(buf)
    if consumed != len(buf):
        raise ValueError("trailing bytes after GOMX payload in %s" % path)
    return matrix


def write_matrix_csv(path, a, header=None):
    a = np.asarray(a, dtype=float)
    with open(path, "w", encoding="ascii") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(a):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_csv(path, has_header=False):
    """Read a numeric CSV into a 2-D float array; has_header skips line one."""
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if has_header:
        lines = lines[1:]
    for lineno, line in enumerate(lines, start=1):
        try:
            rows.append([float(cell) for cell in line.split(",")])
        except ValueError as exc:
            raise ValueError("bad numeric cell on data line %d of %s: %s" % (lineno, path, exc))
    if not rows:
        raise ValueError("no data rows in %s" % path)
    width = len(rows[0])
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise ValueError(
                "ragged CSV %s: line %d has %d cells, expected %d" % (path, lineno, len(row), width)
            )
    return np.array(rows, dtype=float)


def write_container(path, magic_line, fields, blobs):
    """Write a text header plus concatenated GOMX blobs.

    Args:
        magic_line: first header line, e.g. "GONET 1".
        fields: ordered (key, value) pairs; offsets are appended here.
        blobs: list of already-encoded GOMX byte strings.
    """
    lines = [magic_line]
    lines += ["%s = %s" % (key, value) for key, value in fields]
    position = 0
    for i, blob in enumerate(blobs):
        lines.append("offset%d = %d" % (i, position))
        position += len(blob)
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for blob in blobs:
            fh.write(blob)


def read_container(path, expected_magic):
    """Parse a container; returns (fields dict, list of decoded matrices)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    end_marker = b"\nend\n"
    split = buf.find(end_marker)
    if split < 0:
        raise ValueError("missing end marker in %s" % path)
    header = buf[:split].decode("ascii").splitlines()
    payload = buf[split + len(end_marker):]
    if not header or header[0] != expected_magic:
        raise ValueError(
            "bad magic in %s: got %r, expected %r"
            % (path, header[0] if header else "", expected_magic)
        )
    fields = {}
    for line in header[1:]:
        key, sep, value = line.partition(" = ")
        if not sep:
            raise ValueError("malformed header line %r in %s" % (line, path))
        fields[key] = value
    offsets = []
    for i in range(len(fields)):
        key = "offset%d" % i
        if key not in fields:
            break
        offsets.append(int(fields.pop(key)))
    matrices = []
    for offset in offsets:
        matrix, _ = decode_matrix(payload, offset)
        matrices.append(matrix)
    return fields, matrices
