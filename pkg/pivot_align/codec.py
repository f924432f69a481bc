import struct
from typing import Tuple

import numpy as np
from crccheck.crc import Crc32  # type: ignore[import]

from pivot_align.exceptions import FormatError

_DTYPE_CODES = {0: np.dtype('<f4'), 1: np.dtype('<f8')}


def dtype_code(dtype: np.dtype) -> int:
    """Return the on-disk code for a float dtype: 0 = f32, 1 = f64."""
    for code, candidate in _DTYPE_CODES.items():
        if np.dtype(dtype).newbyteorder('<') == candidate:
            return code
    raise FormatError(f'Unsupported dtype {dtype}', header=b'')


def dtype_from_code(code: int) -> np.dtype:
    """Inverse of :func:`dtype_code`."""
    if code not in _DTYPE_CODES:
        raise FormatError(f'Unknown dtype code {code}', header=struct.pack('<I', code & 0xFFFFFFFF))
    return _DTYPE_CODES[code]


def crc32(data: bytes) -> int:
    """CRC-32 of a byte string."""
    return Crc32.calc(data)


class PayloadDecoder:
    """Cursor over a ``GTRF`` or ``GTCK`` file: header integers, raw bytes, then little-endian arrays."""

    def __init__(self, payload: bytes) -> None:
        self._payload = payload
        self._pointer = 0

    def _take(self, n: int) -> bytes:
        if self._pointer + n > len(self._payload):
            raise FormatError(
                f'Truncated payload: need {n} bytes at offset {self._pointer}, have {self.remaining_bytes}',
                header=self._payload[:16],
            )
        chunk = self._payload[self._pointer : self._pointer + n]
        self._pointer += n
        return chunk

    def decode_magic(self, expected: bytes) -> None:
        """Consume and check a magic byte string."""
        magic = self._take(len(expected))
        if magic != expected:
            raise FormatError(f'Bad magic {magic!r}, expected {expected!r}', header=self._payload[:16])

    def decode_32bit_uint(self) -> int:
        """Read a u32."""
        return struct.unpack('<I', self._take(4))[0]

    def decode_64bit_uint(self) -> int:
        """Read a u64."""
        return struct.unpack('<Q', self._take(8))[0]

    def decode_bytes(self, n: int) -> bytes:
        """Read exactly ``n`` raw bytes."""
        return self._take(n)

    def decode_array(self, dtype: np.dtype, shape: Tuple[int, ...]) -> np.ndarray:
        """Read a row-major little-endian array; the result is a native-order copy."""
        dtype = np.dtype(dtype).newbyteorder('<')
        count = int(np.prod(shape, dtype=np.int64))
        raw = self._take(count * dtype.itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder('='), copy=True)

    @property
    def exhausted(self) -> bool:
        """True once every header field and array of the file has been read; trailing bytes mean a corrupt file."""
        return self._pointer == len(self._payload)

    @property
    def offset(self) -> int:
        """Read position, in bytes from the start of the file."""
        return self._pointer

    @property
    def remaining_bytes(self) -> int:
        return len(self._payload) - self._pointer

    def rest(self) -> bytes:
        """Everything after the read position, e.g. the array blob that follows a ``GTCK`` manifest."""
        return self._payload[self._pointer :]


class PayloadEncoder:
    """Builds a ``GTRF`` or ``GTCK`` file in memory, one header field or array at a time."""

    def __init__(self) -> None:
        self._chunks = []  # type: ignore[var-annotated]
        self._size = 0

    def _add(self, chunk: bytes) -> None:
        self._chunks.append(chunk)
        self._size += len(chunk)

    def add_bytes(self, data: bytes) -> None:
        """Append raw bytes."""
        self._add(bytes(data))

    def add_32bit_uint(self, value: int) -> None:
        """Append a u32."""
        self._add(struct.pack('<I', value))

    def add_64bit_uint(self, value: int) -> None:
        """Append a u64."""
        self._add(struct.pack('<Q', value))

    def add_array(self, array: np.ndarray) -> int:
        """Append an array row-major and little-endian; returns the byte offset it starts at."""
        offset = self._size
        little = np.ascontiguousarray(array, dtype=array.dtype.newbyteorder('<'))
        self._add(little.tobytes(order='C'))
        return offset

    def __len__(self) -> int:
        return self._size

    def to_bytes(self) -> bytes:
        """The file contents built so far."""
        return b''.join(self._chunks)

    def crc(self) -> int:
        """CRC-32 of :meth:`to_bytes`, as stored in ``GTCK`` manifests."""
        return crc32(self.to_bytes())
