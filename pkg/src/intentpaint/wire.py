"""Wire encoding of ternary intent masks.

A mask travels as a single-channel 8-bit PNG with exactly three legal pixel
values: 0 -> intent -1 (removal), 128 -> intent 0 (not applied), 255 ->
intent +1 (creation). decode(encode(m)) is the identity on masks and
encode(decode(p)) is the identity on legal PNGs.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image, UnidentifiedImageError

from .schedule import TernaryIntentMask

_VALUE_TO_BYTE = {-1: 0, 0: 128, 1: 255}
_BYTE_TO_VALUE = {0: -1, 128: 0, 255: 1}


class WireFormatError(ValueError):
    """Intent PNG violates the three-value wire contract."""


def encode_intent(mask: TernaryIntentMask) -> bytes:
    """Serialize a ternary mask to the 0/128/255 grayscale PNG encoding."""
    lut = np.array([128, 255, 0], dtype=np.uint8)  # index by value mod 3: 0, 1, -1
    data = lut[mask.values % 3]
    buf = io.BytesIO()
    Image.fromarray(data, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def decode_intent(png: bytes) -> TernaryIntentMask:
    """Parse an intent PNG, rejecting any pixel outside {0, 128, 255}."""
    try:
        with Image.open(io.BytesIO(png)) as im:
            if im.mode != "L":
                raise WireFormatError(
                    f"intent PNG must be single-channel 8-bit (mode 'L'), got mode {im.mode!r}"
                )
            data = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise WireFormatError(f"not a decodable PNG: {exc}") from exc

    legal = np.isin(data, (0, 128, 255))
    if not legal.all():
        ys, xs = np.nonzero(~legal)
        y, x = int(ys[0]), int(xs[0])
        raise WireFormatError(
            f"illegal intent value {int(data[y, x])} at pixel (y={y}, x={x}); "
            "legal values are 0 (removal), 128 (not applied), 255 (creation)"
        )
    values = np.zeros(data.shape, dtype=np.int8)
    values[data == 0] = -1
    values[data == 255] = 1
    return TernaryIntentMask(values)
