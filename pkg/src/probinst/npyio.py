"""NPY v1.0 array files: little-endian, C-order, no pickles.

Header layout: magic ``\\x93NUMPY``, version bytes ``1 0``, a little-endian
uint16 header length, then the dict literal
``{'descr': ..., 'fortran_order': False, 'shape': (...), }`` padded with
spaces and a final newline so that the data starts at a multiple of 64
bytes. The padding rule is fixed, so equal arrays give byte-identical files.
Files written by ``numpy.save`` are readable too.
"""

import ast
import os
import struct
import tempfile

import numpy as np

from .errors import NpyFormatError

MAGIC = b"\x93NUMPY"
ALIGN = 64
SUPPORTED = {"|b1", "|u1", "|i1", "<u2", "<i2", "<u4", "<i4", "<i8", "<u8", "<f4", "<f8"}


def _descr(dtype):
    dtype = np.dtype(dtype)
    descr = dtype.newbyteorder("<").str if dtype.byteorder not in ("|",) else dtype.str
    if descr not in SUPPORTED:
        raise NpyFormatError(f"unsupported element type {dtype}", field="descr")
    return descr


def header_bytes(descr, shape):
    shape_txt = "(" + ", ".join(str(int(s)) for s in shape) + ("," if len(shape) == 1 else "") + ")"
    text = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (descr, shape_txt)
    pad = -(len(MAGIC) + 2 + 2 + len(text) + 1) % ALIGN
    text = text + " " * pad + "\n"
    return MAGIC + b"\x01\x00" + struct.pack("<H", len(text)) + text.encode("latin1")


def to_bytes(array):
    arr = np.asarray(array)
    descr = _descr(arr.dtype)
    data = np.ascontiguousarray(arr, dtype=np.dtype(descr))
    return header_bytes(descr, arr.shape) + data.tobytes(order="C")


def write_array(path, array):
    """Write atomically: the file appears complete or not at all."""
    payload = to_bytes(array)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def from_bytes(buf):
    if buf[:6] != MAGIC:
        raise NpyFormatError("not an NPY file (bad magic bytes)", field="magic")
    if len(buf) < 10:
        raise NpyFormatError("truncated header", field="header_len")
    major, minor = buf[6], buf[7]
    if (major, minor) != (1, 0):
        raise NpyFormatError(f"unsupported NPY version {major}.{minor}", field="version")
    (hlen,) = struct.unpack("<H", buf[8:10])
    raw = buf[10:10 + hlen]
    if len(raw) != hlen:
        raise NpyFormatError("truncated header", field="header_len")
    try:
        header = ast.literal_eval(raw.decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise NpyFormatError(f"unparseable header: {exc}", field="header") from None
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise NpyFormatError("header must hold exactly descr, fortran_order and shape", field="header")
    if header["fortran_order"] is not False:
        raise NpyFormatError("Fortran-order arrays are not supported", field="fortran_order")
    descr = header["descr"]
    if not isinstance(descr, str) or descr not in SUPPORTED:
        raise NpyFormatError(f"unsupported element type {descr!r}", field="descr")
    shape = header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(s, int) and s >= 0 for s in shape):
        raise NpyFormatError(f"invalid shape {shape!r}", field="shape")
    dtype = np.dtype(descr)
    count = int(np.prod(shape, dtype=np.int64))
    data = buf[10 + hlen:]
    if len(data) != count * dtype.itemsize:
        raise NpyFormatError(
            f"expected {count * dtype.itemsize} data bytes, found {len(data)}", field="shape")
    return np.frombuffer(data, dtype=dtype, count=count).reshape(shape).copy()


def read_array(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
