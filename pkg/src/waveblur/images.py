"""
Grayscale image I/O and the synthetic test images.
"""

import logging
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorruptFileError, UnsupportedFormatError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".pgm", ".png")
SYNTH_KINDS = ("checkerboard", "gaussian_bumps", "text_like_bars", "ramp")

_MAXVAL = {8: 255, 16: 65535}
_SIXTEEN_BIT_MODES = ("I", "I;16", "I;16B", "I;16L")


def _check_suffix(path: Path) -> None:
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise UnsupportedFormatError(f"Unsupported image format: {path.name!r}")


def _check_square(shape: tuple[int, ...], name: str) -> None:
    if len(shape) != 2 or shape[0] != shape[1]:
        raise UnsupportedFormatError(f"{name}: image must be square, got {shape!r}")
    n = shape[0]
    if n < 1 or n & (n - 1):
        raise UnsupportedFormatError(f"{name}: side {n} is not a power of two")


def load_image(path: str | Path) -> np.ndarray:
    """
    Load a grayscale PGM (P5) or PNG image with values mapped to [0, 1].

    Args:
        path: Image file.

    Returns:
        A float64 ``(n, n)`` array.

    Raises:
        UnsupportedFormatError: If the file is not a square power-of-two grayscale image.
        CorruptFileError: If the file cannot be decoded.
    """
    path = Path(path)
    _check_suffix(path)
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode == "L":
                maxval = _MAXVAL[8]
            elif mode in _SIXTEEN_BIT_MODES:
                maxval = _MAXVAL[16]
            else:
                raise UnsupportedFormatError(f"{path.name}: not grayscale (mode {mode})")
            pixels = np.asarray(img, dtype=np.float64)
    except UnsupportedFormatError:
        raise
    except (UnidentifiedImageError, SyntaxError, EOFError, ValueError) as e:
        raise CorruptFileError(f"{path.name}: {e}") from e
    except OSError as e:
        if not path.exists():
            raise
        raise CorruptFileError(f"{path.name}: {e}") from e
    _check_square(pixels.shape, path.name)
    return pixels / maxval


def save_image(path: str | Path, image: np.ndarray, bit_depth: int = 8) -> None:
    """
    Write an image in [0, 1] as an 8- or 16-bit grayscale PGM or PNG.

    Values are clipped to [0, 1] and rounded to the nearest level, so
    `load_image` returns the quantized values exactly.
    """
    path = Path(path)
    _check_suffix(path)
    if bit_depth not in _MAXVAL:
        raise UnsupportedFormatError(f"Unsupported bit depth: {bit_depth!r}")
    image = np.asarray(image, dtype=np.float64)
    _check_square(image.shape, path.name)
    maxval = _MAXVAL[bit_depth]
    levels = np.rint(np.clip(image, 0.0, 1.0) * maxval)
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(levels.astype(dtype)).save(path)
    logger.debug("Wrote %s (%d-bit)", path, bit_depth)


def _checkerboard(n: int, rng: np.random.Generator) -> np.ndarray:
    cell = max(n // 8, 1)
    phase = int(rng.integers(2))
    i, j = np.indices((n, n))
    return ((i // cell + j // cell + phase) % 2).astype(np.float64)


def _gaussian_bumps(n: int, rng: np.random.Generator, count: int = 8) -> np.ndarray:
    x = (np.arange(n) + 0.5) / n
    out = np.zeros((n, n))
    for _ in range(count):
        cy, cx = rng.random(2)
        width = rng.uniform(0.03, 0.15)
        amplitude = rng.uniform(0.3, 1.0)
        out += amplitude * np.exp(
            -((x[:, None] - cy) ** 2 + (x[None, :] - cx) ** 2) / (2 * width**2)
        )
    return out / out.max()


def _text_like_bars(n: int, rng: np.random.Generator) -> np.ndarray:
    out = np.ones((n, n))
    line = max(n // 8, 4)
    for top in range(line // 2, n - line // 2, line):
        col = int(rng.integers(1, 4))
        while col < n - 2:
            width = int(rng.integers(1, max(line // 2, 2) + 1))
            height = int(rng.integers(max(line // 4, 1), max(line // 2, 2) + 1))
            out[top : top + height, col : col + width] = 0.0
            col += width + int(rng.integers(1, 4))
    return out


def synth_image(kind: str, n: int, seed: int = 0) -> np.ndarray:
    """
    Generate a deterministic synthetic image in [0, 1].

    Args:
        kind: One of ``checkerboard``, ``gaussian_bumps``, ``text_like_bars`` or ``ramp``.
        n: Side, a power of two.
        seed: Seed of the generator; the same seed gives the same image.
    """
    _check_square((n, n), kind)
    rng = np.random.default_rng(seed)
    match kind:
        case "checkerboard":
            return _checkerboard(n, rng)
        case "gaussian_bumps":
            return _gaussian_bumps(n, rng)
        case "text_like_bars":
            return _text_like_bars(n, rng)
        case "ramp":
            # horizontal, from 0 in the first column to 1 in the last
            return np.tile(np.linspace(0.0, 1.0, n), (n, 1))
        case _:
            raise UnsupportedFormatError(f"Unknown synthetic image kind: {kind!r}")
