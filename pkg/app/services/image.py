import io
import logging
import math
from pathlib import Path
from typing import Iterable, List, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from app.core.errors import DataError, ShapeError
from app.models.image import PEAK, ImageGray, PatchSpec

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
SUPPORTED_EXTENSIONS = (".pgm", ".png")


def psnr(reference: ImageGray, test: ImageGray) -> float:
    """Peak signal-to-noise ratio in dB with peak 255; +inf for identical images."""
    if reference.shape != test.shape:
        raise ShapeError(f"psnr needs equal shapes, got {reference.shape} and {test.shape}")
    mse = float(np.mean((reference.data - test.data) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK ** 2 / mse)


# I/O

def _from_pil(img: Image.Image, source: str) -> ImageGray:
    if img.mode != "L":
        # 16-bit PGM opens as I/I;16, colour files as RGB/P
        raise DataError(f"{source}: unsupported pixel mode {img.mode!r}, need 8-bit grayscale")
    return ImageGray(np.asarray(img, dtype=np.float64))


def load_image(path: PathLike) -> ImageGray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image not found: {path}")
    try:
        with Image.open(path) as img:
            img.load()
            return _from_pil(img, str(path))
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise DataError(f"{path}: malformed image ({e})") from e


def decode_image(content: bytes, source: str = "upload") -> ImageGray:
    try:
        with Image.open(io.BytesIO(content)) as img:
            img.load()
            return _from_pil(img, source)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise DataError(f"{source}: malformed image ({e})") from e


def to_uint8(img: ImageGray) -> np.ndarray:
    return np.clip(np.rint(img.data), 0, 255).astype(np.uint8)


def save_image(img: ImageGray, path: PathLike) -> Path:
    """Quantize to 8 bits and write; the format follows the suffix (.pgm is binary P5)."""
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_EXTENSIONS:
        raise DataError(f"unsupported image format: {path.suffix}")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path)
    return path


def encode_png(img: ImageGray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img)).save(buf, format="PNG")
    return buf.getvalue()


def list_images(directory: PathLike, extensions: Iterable[str] = SUPPORTED_EXTENSIONS) -> List[Path]:
    """Image files of a dataset split, in lexicographic order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory not found: {directory}")
    exts = {e.lower() for e in extensions}
    files = sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in exts)
    if not files:
        raise DataError(f"no images with extensions {sorted(exts)} in {directory}")
    return files


def load_dataset(directory: PathLike, extensions: Iterable[str] = SUPPORTED_EXTENSIONS) -> List[ImageGray]:
    return [load_image(p) for p in list_images(directory, extensions)]


# Sampling and augmentation

def random_patch(img: ImageGray, spec: PatchSpec) -> ImageGray:
    if spec.size > min(img.height, img.width):
        raise ShapeError(f"patch {spec.size} does not fit in image {img.shape}")
    rng = np.random.default_rng(spec.seed)
    top = int(rng.integers(0, img.height - spec.size + 1))
    left = int(rng.integers(0, img.width - spec.size + 1))
    return ImageGray(img.data[top:top + spec.size, left:left + spec.size])


def dihedral(arr: np.ndarray, index: int) -> np.ndarray:
    """Element `index` of the dihedral group on the last two axes.

    0-3 rotate by index*90 degrees, 4-7 transpose first and then rotate.
    """
    if not 0 <= index <= 7:
        raise ShapeError(f"dihedral index must be in [0, 7], got {index}")
    if index >= 4:
        arr = np.swapaxes(arr, -1, -2)
    return np.rot90(arr, k=index % 4, axes=(-2, -1))


def augment_dihedral(img: ImageGray, index: int) -> ImageGray:
    return ImageGray(dihedral(img.data, index))


def add_gaussian_noise(img: ImageGray, sigma: float, seed: int) -> ImageGray:
    """Additive white Gaussian noise, unclipped."""
    if sigma < 0:
        raise ShapeError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img
    rng = np.random.default_rng(seed)
    return ImageGray(img.data + rng.normal(0.0, sigma, size=img.shape))


def center_crop(img: ImageGray, height: int, width: int) -> ImageGray:
    if height > img.height or width > img.width:
        raise ShapeError(f"crop {height}x{width} larger than image {img.shape}")
    top = (img.height - height) // 2
    left = (img.width - width) // 2
    return ImageGray(img.data[top:top + height, left:left + width])


def crop_border(img: ImageGray, border: int) -> ImageGray:
    if border <= 0:
        return img
    if 2 * border >= min(img.height, img.width):
        logger.warning("border %d too large for %s, not cropping", border, img.shape)
        return img
    return ImageGray(img.data[border:-border, border:-border])


class DatasetService:
    """Counts and dimension summary of an image directory."""

    def __init__(self, directory: PathLike, extensions: Iterable[str] = SUPPORTED_EXTENSIONS):
        self.directory = Path(directory)
        self.extensions = tuple(extensions)

    def verify(self, min_size: int = 1) -> dict:
        files = list_images(self.directory, self.extensions)
        shapes = []
        for path in files:
            img = load_image(path)
            if min(img.shape) < min_size:
                raise DataError(f"{path}: {img.shape} smaller than required {min_size}")
            shapes.append(img.shape)
        heights = [s[0] for s in shapes]
        widths = [s[1] for s in shapes]
        return {
            "directory": str(self.directory),
            "count": len(files),
            "min_height": min(heights),
            "max_height": max(heights),
            "min_width": min(widths),
            "max_width": max(widths),
        }
