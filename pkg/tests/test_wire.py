"""Intent-mask wire encoding tests."""

import io

import numpy as np
import pytest
from PIL import Image

from intentpaint.schedule import TernaryIntentMask
from intentpaint.wire import WireFormatError, decode_intent, encode_intent


def test_all_creation_mask_encodes_to_255():
    mask = TernaryIntentMask(np.ones((4, 4), dtype=np.int8))
    png = encode_intent(mask)
    with Image.open(io.BytesIO(png)) as im:
        assert im.mode == "L"
        assert np.all(np.asarray(im) == 255)
    assert np.array_equal(decode_intent(png).values, mask.values)


def test_mapping_table_2x2():
    mask = TernaryIntentMask(np.array([[-1, 0], [1, -1]], dtype=np.int8))
    png = encode_intent(mask)
    with Image.open(io.BytesIO(png)) as im:
        assert np.array_equal(np.asarray(im), [[0, 128], [255, 0]])


def test_random_masks_round_trip_exactly():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        h, w = int(rng.integers(1, 24)), int(rng.integers(1, 24))
        mask = TernaryIntentMask(rng.integers(-1, 2, size=(h, w)))
        assert np.array_equal(decode_intent(encode_intent(mask)).values, mask.values)


def test_decode_then_encode_preserves_legal_png_pixels():
    rng = np.random.default_rng(1)
    data = rng.choice([0, 128, 255], size=(9, 13)).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data, mode="L").save(buf, format="PNG")
    re_encoded = encode_intent(decode_intent(buf.getvalue()))
    with Image.open(io.BytesIO(re_encoded)) as im:
        assert np.array_equal(np.asarray(im), data)


def test_illegal_value_names_first_offending_pixel():
    data = np.full((4, 4), 128, dtype=np.uint8)
    data[2, 3] = 77
    buf = io.BytesIO()
    Image.fromarray(data, mode="L").save(buf, format="PNG")
    with pytest.raises(WireFormatError, match=r"77 at pixel \(y=2, x=3\)"):
        decode_intent(buf.getvalue())


def test_non_grayscale_png_rejected():
    buf = io.BytesIO()
    Image.new("RGB", (4, 4), (128, 128, 128)).save(buf, format="PNG")
    with pytest.raises(WireFormatError, match="single-channel"):
        decode_intent(buf.getvalue())


def test_garbage_bytes_rejected():
    with pytest.raises(WireFormatError, match="decodable"):
        decode_intent(b"not a png at all")
