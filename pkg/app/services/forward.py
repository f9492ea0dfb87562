"""Degradation operators H and the HQS data-consistency solvers.

All operators use periodic boundaries: convolution is diagonalized by the
2-D DFT, so the deblurring x-update is a per-frequency division and the SISR
x-update is a matrix-free conjugate-gradient solve.
"""
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from app.core.errors import ConfigError, DataError, NumericalFault, ShapeError
from app.models.degradation import Degradation, DegradationKind, Kernel
from app.models.image import ImageGray
from app.models.pnp import CGConfig
from app.services.image import add_gaussian_noise, center_crop

logger = logging.getLogger(__name__)

IMAG_TOLERANCE = 1e-9


# Kernels

def gaussian_kernel(size: int, sigma: float) -> Kernel:
    if size < 1 or size % 2 == 0:
        raise ConfigError(f"kernel size must be a positive odd integer, got {size}")
    if sigma <= 0:
        raise ConfigError(f"kernel sigma must be positive, got {sigma}")
    c = size // 2
    ax = np.arange(size) - c
    w = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma ** 2))
    return Kernel(w / w.sum())


def load_kernel(path: Union[str, Path]) -> Kernel:
    """Read a kernel from text: a `rows cols` header, then row-major floats.

    Weights are renormalized to sum to 1.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"kernel file not found: {path}")
    tokens = path.read_text().split()
    try:
        rows, cols = int(tokens[0]), int(tokens[1])
        values = np.array([float(t) for t in tokens[2:]], dtype=np.float64)
    except (IndexError, ValueError) as e:
        raise DataError(f"{path}: malformed kernel file ({e})") from e
    if values.size != rows * cols:
        raise DataError(f"{path}: header says {rows}x{cols} but found {values.size} values")
    w = values.reshape(rows, cols)
    if (w < 0).any() or w.sum() <= 0:
        raise DataError(f"{path}: kernel weights must be nonnegative with positive sum")
    return Kernel(w / w.sum())


def save_kernel(kernel: Kernel, path: Union[str, Path]) -> Path:
    path = Path(path)
    lines = [f"{kernel.size} {kernel.size}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in kernel.weights]
    path.write_text("\n".join(lines) + "\n")
    return path


# Spectra

class SpectrumCache:
    """Kernel transfer functions keyed by (kernel, image shape).

    The PnP kernel is fixed within a run, so every iteration after the first
    is a hit. Lookups are lock-protected for concurrent sweep workers.
    """

    def __init__(self, max_entries: int = 64):
        self._entries: dict = {}
        self._lock = threading.Lock()
        self.max_entries = max_entries
        self.hits = 0
        self.misses = 0

    def get(self, kernel: Kernel, shape: Tuple[int, int]) -> np.ndarray:
        key = (kernel.key, tuple(shape))
        with self._lock:
            otf = self._entries.get(key)
            if otf is not None:
                self.hits += 1
                return otf
            self.misses += 1
        otf = kernel_spectrum(kernel, shape)
        with self._lock:
            if len(self._entries) >= self.max_entries:
                self._entries.pop(next(iter(self._entries)))
            self._entries[key] = otf
        return otf


spectrum_cache = SpectrumCache()


def kernel_spectrum(kernel: Kernel, shape: Tuple[int, int]) -> np.ndarray:
    """DFT of the kernel zero-padded to `shape` with its center moved to (0, 0)."""
    h, w = shape
    if kernel.size > min(h, w):
        raise ShapeError(f"kernel of size {kernel.size} does not fit image {shape}")
    pad = np.zeros((h, w))
    pad[:kernel.size, :kernel.size] = kernel.weights
    pad = np.roll(pad, (-kernel.radius, -kernel.radius), axis=(0, 1))
    otf = np.fft.fft2(pad)
    otf.flags.writeable = False
    return otf


def _real(x: np.ndarray) -> np.ndarray:
    if np.abs(x.imag).max(initial=0.0) > IMAG_TOLERANCE * max(1.0, np.abs(x.real).max(initial=0.0)):
        logger.debug("discarding imaginary residue %.3g", np.abs(x.imag).max())
    return x.real


def _convolve(arr: np.ndarray, otf: np.ndarray) -> np.ndarray:
    return _real(np.fft.ifft2(np.fft.fft2(arr) * otf))


def _correlate(arr: np.ndarray, otf: np.ndarray) -> np.ndarray:
    return _real(np.fft.ifft2(np.fft.fft2(arr) * np.conj(otf)))


def circular_convolve(img: ImageGray, kernel: Kernel) -> ImageGray:
    otf = spectrum_cache.get(kernel, img.shape)
    return ImageGray(_convolve(img.data, otf))


def circular_correlate(img: ImageGray, kernel: Kernel) -> ImageGray:
    """Adjoint of circular_convolve (convolution with the flipped kernel)."""
    otf = spectrum_cache.get(kernel, img.shape)
    return ImageGray(_correlate(img.data, otf))


# Subsampling S (offset 0) and its adjoint

def subsample(arr: np.ndarray, factor: int) -> np.ndarray:
    return arr[::factor, ::factor]


def upsample_zeros(arr: np.ndarray, factor: int, shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    shape = shape or (arr.shape[0] * factor, arr.shape[1] * factor)
    out = np.zeros(shape)
    out[::factor, ::factor] = arr
    return out


def upsample_nearest(img: ImageGray, factor: int) -> ImageGray:
    return ImageGray(np.repeat(np.repeat(img.data, factor, axis=0), factor, axis=1))


def crop_to_multiple(img: ImageGray, factor: int) -> ImageGray:
    """Center crop to the largest size divisible by `factor`."""
    h = img.height - img.height % factor
    w = img.width - img.width % factor
    if h == 0 or w == 0:
        raise ShapeError(f"image {img.shape} is smaller than factor {factor}")
    if (h, w) == img.shape:
        return img
    return center_crop(img, h, w)


def degrade(x: ImageGray, d: Degradation, seed: int, allow_crop: bool = False) -> ImageGray:
    """y = Hx + n with H a circular blur, optionally followed by decimation."""
    if d.kind == DegradationKind.SISR and (x.height % d.factor or x.width % d.factor):
        if not allow_crop:
            raise ShapeError(f"image {x.shape} is not divisible by factor {d.factor}")
        x = crop_to_multiple(x, d.factor)
    blurred = circular_convolve(x, d.kernel)
    if d.kind == DegradationKind.SISR:
        blurred = ImageGray(subsample(blurred.data, d.factor))
    return add_gaussian_noise(blurred, d.noise_sigma, seed)


# Data consistency

def deblur_data_consistency(y: ImageGray, kernel: Kernel, z: ImageGray, mu: float) -> ImageGray:
    """Exact minimizer of ||Hx - y||^2 + mu ||x - z||^2 for circulant H."""
    if y.shape != z.shape:
        raise ShapeError(f"y {y.shape} and z {z.shape} must have equal shapes")
    if mu <= 0:
        raise ShapeError(f"mu must be positive, got {mu}")
    otf = spectrum_cache.get(kernel, y.shape)
    numerator = np.conj(otf) * np.fft.fft2(y.data) + mu * np.fft.fft2(z.data)
    x = np.fft.ifft2(numerator / (np.abs(otf) ** 2 + mu))
    return ImageGray(_real(x))


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    residual_history: List[float] = field(default_factory=list)
    energy_history: List[float] = field(default_factory=list)


def conjugate_gradient(
    apply_A: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    tol: float = 1e-6,
    max_iter: int = 100,
    x0: Optional[np.ndarray] = None,
) -> CGResult:
    """Solve Ax = b for symmetric positive definite A given as a callback.

    Stops once ||Ax - b|| / ||b|| <= tol. `residual` is that relative
    residual; histories hold it and the quadratic energy 0.5 x'Ax - b'x per
    iterate (the energy is non-increasing for SPD A).
    """
    if tol <= 0:
        raise ConfigError(f"CG tolerance must be positive, got {tol}")
    b_norm = float(np.linalg.norm(b))
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64, copy=True)
    if b_norm == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0, True, [0.0], [0.0])

    r = b - apply_A(x) if x0 is not None else b.copy()
    p = r.copy()
    rs_old = float(np.vdot(r, r))

    def energy() -> float:
        # 0.5 x'Ax - b'x = -0.5 (x'b + x'r) since Ax = b - r
        return -0.5 * float(np.vdot(x, b) + np.vdot(x, r))

    residuals = [np.sqrt(rs_old) / b_norm]
    energies = [energy()]
    iterations = 0
    while residuals[-1] > tol and iterations < max_iter:
        Ap = apply_A(p)
        curvature = float(np.vdot(p, Ap))
        if not curvature > 0:
            raise NumericalFault(f"CG breakdown at iteration {iterations}: curvature {curvature:.3g} <= 0 (operator not SPD)")
        alpha = rs_old / curvature
        x = x + alpha * p
        r = r - alpha * Ap
        rs_new = float(np.vdot(r, r))
        iterations += 1
        residuals.append(np.sqrt(rs_new) / b_norm)
        energies.append(energy())
        p = r + (rs_new / rs_old) * p
        rs_old = rs_new

    converged = residuals[-1] <= tol
    return CGResult(x, iterations, float(residuals[-1]), converged, residuals, energies)


class SISROperator:
    """Normal-equation operator G'S'SG + mu I for one (kernel, factor, shape)."""

    def __init__(self, kernel: Kernel, factor: int, shape: Tuple[int, int], mu: float):
        self.factor = factor
        self.shape = shape
        self.mu = mu
        self.otf = spectrum_cache.get(kernel, shape)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return subsample(_convolve(x, self.otf), self.factor)

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        return _correlate(upsample_zeros(v, self.factor, self.shape), self.otf)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.adjoint(self.forward(x)) + self.mu * x


def sisr_data_consistency(
    y: ImageGray,
    kernel: Kernel,
    factor: int,
    z: ImageGray,
    mu: float,
    cg: CGConfig = CGConfig(),
) -> ImageGray:
    """Approximate minimizer of ||SGx - y||^2 + mu ||x - z||^2 by CG."""
    if z.shape != (y.height * factor, y.width * factor):
        raise ShapeError(f"z {z.shape} must be factor {factor} times y {y.shape}")
    if mu <= 0:
        raise ShapeError(f"mu must be positive, got {mu}")
    op = SISROperator(kernel, factor, z.shape, mu)
    b = op.adjoint(y.data) + mu * z.data
    result = conjugate_gradient(op, b, tol=cg.tol, max_iter=cg.max_iter, x0=z.data)
    if not result.converged:
        message = f"CG stopped after {result.iterations} iterations with relative residual {result.residual:.3g}"
        if cg.strict:
            raise NumericalFault(message)
        logger.warning(message)
    return ImageGray(result.x)


def data_consistency(y: ImageGray, d: Degradation, z: ImageGray, mu: float, cg: CGConfig = CGConfig()) -> ImageGray:
    if d.kind == DegradationKind.DEBLUR:
        return deblur_data_consistency(y, d.kernel, z, mu)
    return sisr_data_consistency(y, d.kernel, d.factor, z, mu, cg)
