"""Hyperspectral cube container and its on-disk format.

File layout (all integers decimal, payload little-endian)::

    {"bands":B,"byteorder":"little","dtype":"c64","height":H,"interleave":"bsq","magic":"JCUBE","version":1,"width":W}\\n
    <payload>

The first line is a compact JSON object with sorted keys terminated by a
single ``\\n``.  The payload follows immediately: ``B*H*W`` values stored
band-sequentially (band, then row, then column), each a little-endian
float32 (``dtype="f32"``) or a pair of float32 real/imaginary parts
(``dtype="c64"``).  Nothing follows the payload.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import CubeFormatError, DimensionError, DomainError

__all__ = ["HyperCube", "load_cube", "save_cube", "CUBE_MAGIC", "CUBE_VERSION"]

CUBE_MAGIC = "JCUBE"
CUBE_VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "c64": np.dtype("<c8")}
_MAX_HEADER = 4096


@dataclass(frozen=True)
class HyperCube:
    """Image cube of shape ``(bands, height, width)``, float32 or complex64."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or 0 in v.shape:
            raise DimensionError(f"cube values must be a non-empty (bands, height, width) array, got shape {v.shape}")
        v = v.astype(np.complex64 if np.iscomplexobj(v) else np.float32, copy=False)
        if not np.all(np.isfinite(v)):
            raise DomainError("cube contains non-finite values")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def bands(self):
        return self.values.shape[0]

    @property
    def height(self):
        return self.values.shape[1]

    @property
    def width(self):
        return self.values.shape[2]

    @property
    def is_complex(self):
        return np.iscomplexobj(self.values)

    @property
    def dtype_code(self):
        return "c64" if self.is_complex else "f32"

    def pixels(self):
        """``(height, width, bands)`` view: one spectrum per pixel."""
        return np.moveaxis(self.values, 0, -1)

    def header(self):
        return {
            "magic": CUBE_MAGIC,
            "version": CUBE_VERSION,
            "width": self.width,
            "height": self.height,
            "bands": self.bands,
            "dtype": self.dtype_code,
            "interleave": "bsq",
            "byteorder": "little",
        }


def save_cube(cube, path):
    header = json.dumps(cube.header(), sort_keys=True, separators=(",", ":")).encode("ascii") + b"\n"
    payload = cube.values.astype(_DTYPES[cube.dtype_code], copy=False).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def _positive_int(header, key):
    v = header.get(key)
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise CubeFormatError(f"header field {key!r} must be a positive integer, got {v!r}", offset=0)
    return v


def load_cube(path):
    """Read a cube file.

    Raises
    ------
    CubeFormatError
        On any inconsistency, with the byte offset where it was detected.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"\n", 0, _MAX_HEADER)
    if end < 0:
        raise CubeFormatError(f"no header line within the first {_MAX_HEADER} bytes", offset=min(len(data), _MAX_HEADER))
    try:
        header = json.loads(data[:end].decode("ascii"))
    except UnicodeDecodeError as exc:
        raise CubeFormatError("header is not ASCII", offset=exc.start) from None
    except json.JSONDecodeError as exc:
        raise CubeFormatError(f"header is not valid JSON: {exc.msg}", offset=exc.pos) from None
    if not isinstance(header, dict) or header.get("magic") != CUBE_MAGIC:
        raise CubeFormatError(f"bad magic, expected {CUBE_MAGIC!r}", offset=0)
    if header.get("version") != CUBE_VERSION:
        raise CubeFormatError(f"unknown version {header.get('version')!r}, expected {CUBE_VERSION}", offset=0)
    if header.get("interleave") != "bsq":
        raise CubeFormatError(f"unsupported interleave {header.get('interleave')!r}", offset=0)
    if header.get("byteorder") != "little":
        raise CubeFormatError(f"unsupported byte order {header.get('byteorder')!r}", offset=0)
    code = header.get("dtype")
    if code not in _DTYPES:
        raise CubeFormatError(f"unknown dtype {code!r}, expected one of {sorted(_DTYPES)}", offset=0)
    shape = tuple(_positive_int(header, k) for k in ("bands", "height", "width"))

    start = end + 1
    dtype = _DTYPES[code]
    expected = int(np.prod(shape)) * dtype.itemsize
    actual = len(data) - start
    if actual != expected:
        raise CubeFormatError(
            f"payload size mismatch: expected {expected} bytes, found {actual}",
            offset=start + min(actual, expected),
        )
    values = np.frombuffer(data, dtype=dtype, offset=start).reshape(shape)
    finite = np.isfinite(values)
    if not np.all(finite):
        first = int(np.flatnonzero(~finite.ravel())[0])
        raise CubeFormatError("non-finite value in payload", offset=start + first * dtype.itemsize)
    return HyperCube(values.astype(dtype.newbyteorder("="), copy=True))
