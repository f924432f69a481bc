import numpy as np
import pytest

from pivot_align.codec import PayloadDecoder, PayloadEncoder, crc32, dtype_code, dtype_from_code
from pivot_align.exceptions import DataError, FormatError


def test_crc32_check_value():
    assert crc32(b'123456789') == 0xCBF43926
    assert crc32(b'') == 0


def test_encoder_is_little_endian():
    encoder = PayloadEncoder()
    encoder.add_bytes(b'AB')
    encoder.add_32bit_uint(1)
    encoder.add_64bit_uint(2)
    assert encoder.to_bytes() == b'AB' + b'\x01\x00\x00\x00' + b'\x02' + b'\x00' * 7
    assert len(encoder) == 14
    assert encoder.crc() == crc32(encoder.to_bytes())


def test_add_array_reports_offset_and_normalises_byte_order():
    encoder = PayloadEncoder()
    encoder.add_32bit_uint(7)
    big = np.array([[1.5, -2.0], [0.25, 8.0]], dtype='>f8')
    assert encoder.add_array(big) == 4
    decoder = PayloadDecoder(encoder.to_bytes())
    assert decoder.decode_32bit_uint() == 7
    out = decoder.decode_array(np.float64, (2, 2))
    assert np.array_equal(out, big)
    assert out.dtype == np.dtype('=f8')
    assert decoder.exhausted


def test_decoder_bookkeeping():
    decoder = PayloadDecoder(b'MAGIxxyy')
    decoder.decode_magic(b'MAGI')
    assert decoder.offset == 4
    assert decoder.remaining_bytes == 4
    assert decoder.rest() == b'xxyy'
    assert decoder.decode_bytes(4) == b'xxyy'
    assert decoder.exhausted


def test_decoder_errors():
    with pytest.raises(FormatError, match='Bad magic') as e:
        PayloadDecoder(b'NOPE').decode_magic(b'GTRF')
    assert e.value.header == b'NOPE'
    with pytest.raises(FormatError, match='Truncated payload: need 8 bytes at offset 0, have 3'):
        PayloadDecoder(b'abc').decode_64bit_uint()
    assert issubclass(FormatError, DataError)


def test_dtype_codes():
    assert dtype_code(np.dtype(np.float32)) == 0
    assert dtype_code(np.dtype('>f8')) == 1
    assert dtype_from_code(1) == np.dtype('<f8')
    with pytest.raises(FormatError, match='Unsupported dtype'):
        dtype_code(np.dtype(np.int32))
    with pytest.raises(FormatError, match='Unknown dtype code 9'):
        dtype_from_code(9)
