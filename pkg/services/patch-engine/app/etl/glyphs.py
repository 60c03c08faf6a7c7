"""
16x4 black/white barcode strip carrying a 16-bit id.

Column i (left to right) holds bit 15 - i of the id: white for 1, black
for 0. All four rows of a column are identical.
"""

import numpy as np

GLYPH_W = 16
GLYPH_H = 4

WHITE = 255
BLACK = 0

# classification thresholds for decoded pixels
BLACK_MAX = 24
WHITE_MIN = 232


def encode_glyph(value: int) -> np.ndarray:
    """(4, 16, 3) uint8 strip for ``value`` in [0, 65535]."""
    if not 0 <= value <= 0xFFFF:
        raise ValueError(f"Glyph value {value} outside 16 bits")
    bits = [(value >> (GLYPH_W - 1 - i)) & 1 for i in range(GLYPH_W)]
    row = np.where(np.asarray(bits, dtype=bool), WHITE, BLACK).astype(np.uint8)
    return np.repeat(np.repeat(row[None, :, None], GLYPH_H, axis=0), 3, axis=2)


def black_or_white(pixels: np.ndarray) -> np.ndarray:
    """Mask of pixels that are near-black or near-white in every channel."""
    return (pixels.max(axis=2) <= BLACK_MAX) | (pixels.min(axis=2) >= WHITE_MIN)


def decode_glyph(strip: np.ndarray) -> int:
    """Inverse of encode_glyph on a (4, 16, 3) region."""
    white = strip.min(axis=2) >= WHITE_MIN
    columns = white.mean(axis=0) > 0.5
    value = 0
    for bit in columns.tolist():
        value = (value << 1) | int(bit)
    return value


def find_glyph(pixels: np.ndarray) -> tuple:
    """
    Top-left (row, col) of the first 16x4 window whose pixels are all
    black or white, or None.
    """
    h, w = pixels.shape[:2]
    if h < GLYPH_H or w < GLYPH_W:
        return None
    mask = black_or_white(pixels).astype(np.int32)
    integral = np.zeros((h + 1, w + 1), dtype=np.int32)
    integral[1:, 1:] = mask.cumsum(axis=0).cumsum(axis=1)
    sums = (
        integral[GLYPH_H:, GLYPH_W:]
        - integral[:-GLYPH_H, GLYPH_W:]
        - integral[GLYPH_H:, :-GLYPH_W]
        + integral[:-GLYPH_H, :-GLYPH_W]
    )
    hits = np.argwhere(sums == GLYPH_W * GLYPH_H)
    if hits.shape[0] == 0:
        return None
    row, col = hits[0]
    return int(row), int(col)
