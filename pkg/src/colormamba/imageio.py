"""8-bit image files <-> float arrays in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ColorMambaError

IMAGE_SUFFIXES = (".pgm", ".png")


class ImageReadError(ColorMambaError, OSError):
    pass


def _open(path) -> Image.Image:
    try:
        with Image.open(path) as img:
            img.load()
            return img.copy()
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageReadError(f"cannot read image {path}: {exc}") from exc


def read_gray(path) -> np.ndarray:
    """(H, W, 1) float image; colour inputs are reduced to luminance."""
    img = _open(path)
    if img.mode != "L":
        img = img.convert("L")
    return (np.asarray(img, dtype=np.float64) / 255.0)[..., None]


def read_rgb(path) -> np.ndarray:
    img = _open(path)
    if img.mode != "RGB":
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def to_uint8(arr) -> np.ndarray:
    return np.clip(np.rint(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_rgb(path, arr) -> None:
    Image.fromarray(to_uint8(arr), mode="RGB").save(path, format="PNG")


def write_gray(path, arr) -> None:
    """PGM (P5) for ``.pgm`` suffixes, PNG otherwise."""
    a = to_uint8(np.asarray(arr)[..., 0] if np.ndim(arr) == 3 else arr)
    fmt = "PPM" if Path(path).suffix.lower() == ".pgm" else "PNG"
    Image.fromarray(a, mode="L").save(path, format=fmt)


def list_images(directory) -> dict[str, Path]:
    """Image files in ``directory`` keyed by stem."""
    d = Path(directory)
    if not d.is_dir():
        return {}
    return {p.stem: p for p in sorted(d.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def write_corpus(directory, nir, rgb, names=None) -> None:
    """Write paired arrays as ``nir/<name>.pgm`` and ``rgb/<name>.png`` under ``directory``."""
    root = Path(directory)
    (root / "nir").mkdir(parents=True, exist_ok=True)
    (root / "rgb").mkdir(parents=True, exist_ok=True)
    names = names or [f"pair{i:03d}" for i in range(len(nir))]
    for name, n, r in zip(names, nir, rgb):
        write_gray(root / "nir" / f"{name}.pgm", n)
        write_rgb(root / "rgb" / f"{name}.png", r)
