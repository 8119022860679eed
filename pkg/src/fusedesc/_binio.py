"""Little-endian byte readers/writers for the PFCK/PFST/PFDS/PFPS formats.

Readers track the current byte offset so a short or corrupt file is rejected
with a positioned :class:`~fusedesc.errors.FormatError` rather than a partial
object.
"""

import struct

import numpy as np

from .errors import FormatError


class ByteReader:
    def __init__(self, data: bytes, path=None):
        self._data = data
        self._pos = 0
        self.path = path

    @property
    def offset(self) -> int:
        return self._pos

    def take(self, n: int, what: str) -> bytes:
        if self._pos + n > len(self._data):
            raise FormatError(
                f"truncated while reading {what} ({n} bytes needed, "
                f"{len(self._data) - self._pos} left)",
                offset=self._pos,
                path=self.path,
            )
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def expect_magic(self, magic: bytes):
        got = self.take(len(magic), "magic")
        if got != magic:
            raise FormatError(
                f"bad magic {got!r}, expected {magic!r}", offset=0, path=self.path
            )

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def f64(self, what: str) -> float:
        return struct.unpack("<d", self.take(8, what))[0]

    def array(self, dtype, count: int, what: str) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        raw = self.take(dt.itemsize * count, what)
        return np.frombuffer(raw, dtype=dt).astype(dtype)

    def at_end(self) -> bool:
        return self._pos == len(self._data)

    def expect_eof(self, what: str):
        if not self.at_end():
            raise FormatError(
                f"{len(self._data) - self._pos} trailing bytes after {what}",
                offset=self._pos,
                path=self.path,
            )


class ByteWriter:
    def __init__(self):
        self._buf = bytearray()

    def raw(self, data: bytes):
        self._buf += data

    def u8(self, value: int):
        self._buf.append(value)

    def u16(self, value: int):
        self._buf += struct.pack("<H", value)

    def u32(self, value: int):
        self._buf += struct.pack("<I", value)

    def u64(self, value: int):
        self._buf += struct.pack("<Q", value)

    def f64(self, value: float):
        self._buf += struct.pack("<d", value)

    def array(self, values: np.ndarray, dtype):
        dt = np.dtype(dtype).newbyteorder("<")
        self._buf += np.ascontiguousarray(values, dtype=dt).tobytes()

    def getvalue(self) -> bytes:
        return bytes(self._buf)

    def write_to(self, path):
        with open(path, "wb") as fh:
            fh.write(self._buf)
