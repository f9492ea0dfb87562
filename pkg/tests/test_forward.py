import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from app.core.errors import ConfigError, DataError, NumericalFault, ShapeError
from app.models.degradation import Degradation, DegradationKind, Kernel
from app.models.image import ImageGray
from app.models.pnp import CGConfig
from app.services.forward import (
    SISROperator,
    SpectrumCache,
    circular_convolve,
    circular_correlate,
    conjugate_gradient,
    crop_to_multiple,
    data_consistency,
    deblur_data_consistency,
    degrade,
    gaussian_kernel,
    load_kernel,
    save_kernel,
    sisr_data_consistency,
    subsample,
    upsample_nearest,
    upsample_zeros,
)


def brute_convolve(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    h, w = x.shape
    r = k.shape[0] // 2
    out = np.zeros_like(x)
    for i in range(h):
        for j in range(w):
            for u in range(k.shape[0]):
                for v in range(k.shape[1]):
                    out[i, j] += k[u, v] * x[(i - (u - r)) % h, (j - (v - r)) % w]
    return out


def dense(apply, n_in: tuple, n_out: int) -> np.ndarray:
    """Matrix of a linear map by applying it to every basis image."""
    size = n_in[0] * n_in[1]
    mat = np.zeros((n_out, size))
    for j in range(size):
        e = np.zeros(size)
        e[j] = 1.0
        mat[:, j] = apply(e.reshape(n_in)).ravel()
    return mat


def asymmetric_kernel() -> Kernel:
    w = np.arange(1.0, 10.0).reshape(3, 3)
    return Kernel(w / w.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(7)


# Kernels

def test_gaussian_kernel_properties():
    k = gaussian_kernel(25, 2.0)
    assert k.size == 25 and k.radius == 12
    assert k.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(k.weights, k.weights.T)
    assert np.allclose(k.weights, k.weights[::-1, ::-1])
    assert k.weights.argmax() == 12 * 25 + 12


@pytest.mark.parametrize("size,sigma", [(4, 1.0), (0, 1.0), (5, 0.0)])
def test_gaussian_kernel_rejects_bad_parameters(size, sigma):
    with pytest.raises(ConfigError):
        gaussian_kernel(size, sigma)


def test_kernel_validation():
    with pytest.raises(ConfigError):
        Kernel(np.full((2, 2), 0.25))
    with pytest.raises(ConfigError):
        Kernel(np.array([[0.5, 0.5, 0.1]]))
    with pytest.raises(ConfigError):
        Kernel(np.array([[0.0, 2.0, -1.0], [0, 0, 0], [0, 0, 0]]))
    with pytest.raises(ConfigError):
        Kernel(np.full((3, 3), 0.2))


def test_kernel_file_is_renormalized(tmp_path):
    path = tmp_path / "k.txt"
    path.write_text("3 3\n0 0 0\n0 2 2\n0 0 0\n")
    k = load_kernel(path)
    assert k.weights[1, 1] == pytest.approx(0.5)
    again = load_kernel(save_kernel(k, tmp_path / "k2.txt"))
    assert np.array_equal(again.weights, k.weights)


def test_kernel_file_errors(tmp_path):
    path = tmp_path / "k.txt"
    path.write_text("3 3\n1 2 3\n")
    with pytest.raises(DataError):
        load_kernel(path)
    with pytest.raises(DataError):
        load_kernel(tmp_path / "missing.txt")


# Convolution

@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 3, 5]))
def test_fft_convolution_matches_direct_sum(seed, size):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 255, size=(9, 11))
    w = rng.uniform(0, 1, size=(size, size))
    k = Kernel(w / w.sum())
    out = circular_convolve(ImageGray(x), k)
    assert np.allclose(out.data, brute_convolve(x, k.weights), atol=1e-9)


@given(st.floats(0.0, 255.0), st.integers(0, 2**32 - 1), st.sampled_from([1, 3, 5, 7]))
def test_constant_image_is_preserved(value, seed, size):
    w = np.random.default_rng(seed).uniform(0, 1, size=(size, size))
    out = circular_convolve(ImageGray(np.full((9, 10), value)), Kernel(w / w.sum()))
    assert np.allclose(out.data, value, atol=1e-9)


def test_delta_kernel_is_identity(rng):
    x = ImageGray(rng.uniform(0, 255, size=(8, 8)))
    assert np.allclose(circular_convolve(x, Kernel.delta(3)).data, x.data, atol=1e-10)


def test_correlation_is_adjoint(rng):
    k = asymmetric_kernel()
    x = rng.normal(size=(10, 10))
    y = rng.normal(size=(10, 10))
    lhs = np.vdot(circular_convolve(ImageGray(x), k).data, y)
    rhs = np.vdot(x, circular_correlate(ImageGray(y), k).data)
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_kernel_larger_than_image():
    with pytest.raises(ShapeError):
        circular_convolve(ImageGray(np.zeros((10, 10))), gaussian_kernel(25, 2.0))


def test_spectrum_cache_hits():
    cache = SpectrumCache()
    k = gaussian_kernel(5, 1.0)
    first = cache.get(k, (16, 16))
    second = cache.get(k, (16, 16))
    assert first is second
    assert (cache.hits, cache.misses) == (1, 1)
    cache.get(k, (16, 18))
    assert cache.misses == 2


# Resampling

def test_subsample_and_adjoint(rng):
    x = rng.normal(size=(12, 12))
    v = rng.normal(size=(4, 4))
    assert subsample(x, 3).shape == (4, 4)
    assert np.vdot(subsample(x, 3), v) == pytest.approx(np.vdot(x, upsample_zeros(v, 3)))


def test_nearest_upsampling():
    up = upsample_nearest(ImageGray(np.array([[1.0, 2.0], [3.0, 4.0]])), 2)
    assert up.data.tolist() == [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]


def test_crop_to_multiple():
    img = ImageGray(np.zeros((13, 10)))
    assert crop_to_multiple(img, 4).shape == (12, 8)
    assert crop_to_multiple(ImageGray(np.zeros((12, 12))), 3).shape == (12, 12)
    with pytest.raises(ShapeError):
        crop_to_multiple(ImageGray(np.zeros((2, 8))), 3)


def test_degrade_shapes_and_determinism(rng):
    x = ImageGray(rng.uniform(0, 255, size=(24, 24)))
    k = gaussian_kernel(5, 1.0)
    sisr = Degradation(DegradationKind.SISR, k, 3, 1.0)
    y = degrade(x, sisr, seed=4)
    assert y.shape == (8, 8)
    assert np.array_equal(y.data, degrade(x, sisr, seed=4).data)
    with pytest.raises(ShapeError):
        degrade(ImageGray(np.zeros((25, 24))), sisr, seed=0)
    assert degrade(ImageGray(np.zeros((25, 24))), sisr, seed=0, allow_crop=True).shape == (8, 8)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_noise_free_degradation_is_linear(a, b):
    rng = np.random.default_rng(0)
    x1, x2 = rng.normal(size=(2, 12, 12))
    d = Degradation(DegradationKind.SISR, gaussian_kernel(5, 1.2), 2, 0.0)
    lhs = degrade(ImageGray(a * x1 + b * x2), d, seed=0).data
    rhs = a * degrade(ImageGray(x1), d, seed=0).data + b * degrade(ImageGray(x2), d, seed=0).data
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_deblur_requires_unit_factor():
    with pytest.raises(ConfigError):
        Degradation(DegradationKind.DEBLUR, Kernel.delta(1), 2)


# Data consistency

@pytest.mark.parametrize("mu", [0.1, 1.0, 10.0])
@pytest.mark.parametrize("seed", range(7))
def test_deblur_solution_matches_dense_solve(mu, seed):
    rng = np.random.default_rng(seed)
    shape = (12, 12)
    w = rng.uniform(0, 1, size=(3, 3))
    k = Kernel(w / w.sum())
    H = dense(lambda e: circular_convolve(ImageGray(e), k).data, shape, 144)
    y = rng.uniform(0, 255, size=shape)
    z = rng.uniform(0, 255, size=shape)
    expected = np.linalg.solve(H.T @ H + mu * np.eye(144), H.T @ y.ravel() + mu * z.ravel())
    x = deblur_data_consistency(ImageGray(y), k, ImageGray(z), mu)
    assert np.allclose(x.data.ravel(), expected, atol=1e-8)


def test_deblur_solution_is_stationary(rng):
    k = gaussian_kernel(5, 1.5)
    y, z = (ImageGray(a) for a in rng.uniform(0, 255, size=(2, 16, 16)))
    mu = 0.05
    x = deblur_data_consistency(y, k, z, mu)
    grad = circular_correlate(ImageGray(circular_convolve(x, k).data - y.data), k).data + mu * (x.data - z.data)
    assert np.abs(grad).max() < 1e-8


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_deblur_solution_is_linear_in_observation_and_prior(a, b, seed):
    rng = np.random.default_rng(seed)
    k = gaussian_kernel(3, 0.8)
    y1, y2, z1, z2 = rng.uniform(0, 255, size=(4, 8, 8))
    combined = deblur_data_consistency(ImageGray(a * y1 + b * y2), k, ImageGray(a * z1 + b * z2), 0.3)
    x1 = deblur_data_consistency(ImageGray(y1), k, ImageGray(z1), 0.3)
    x2 = deblur_data_consistency(ImageGray(y2), k, ImageGray(z2), 0.3)
    assert np.allclose(combined.data, a * x1.data + b * x2.data, atol=1e-8)


@pytest.mark.parametrize("mu", [0.1, 1.0, 4.0])
def test_delta_kernel_closed_form(rng, mu):
    y, z = (ImageGray(a) for a in rng.uniform(0, 255, size=(2, 8, 8)))
    expected = (y.data + mu * z.data) / (1 + mu)
    assert np.allclose(deblur_data_consistency(y, Kernel.delta(3), z, mu).data, expected, atol=1e-9)
    sisr = sisr_data_consistency(y, Kernel.delta(3), 1, z, mu, CGConfig(tol=1e-12, max_iter=50))
    assert np.allclose(sisr.data, expected, atol=1e-8)


def test_large_mu_returns_the_prior_estimate(rng):
    k = gaussian_kernel(5, 1.2)
    y = ImageGray(rng.uniform(0, 255, size=(8, 8)))
    z = ImageGray(rng.uniform(0, 255, size=(8, 8)))
    assert np.allclose(deblur_data_consistency(y, k, z, 1e6).data, z.data, atol=1e-3)
    z_hr = ImageGray(rng.uniform(0, 255, size=(16, 16)))
    assert np.allclose(sisr_data_consistency(y, k, 2, z_hr, 1e6).data, z_hr.data, atol=1e-3)


def test_unit_factor_sisr_agrees_with_deblur(rng):
    k = asymmetric_kernel()
    y, z = (ImageGray(a) for a in rng.uniform(0, 255, size=(2, 10, 10)))
    spectral = deblur_data_consistency(y, k, z, 0.5)
    iterative = sisr_data_consistency(y, k, 1, z, 0.5, CGConfig(tol=1e-12, max_iter=500))
    assert np.allclose(iterative.data, spectral.data, atol=1e-6)


def test_deblur_rejects_bad_inputs():
    y = ImageGray(np.zeros((8, 8)))
    with pytest.raises(ShapeError):
        deblur_data_consistency(y, Kernel.delta(3), ImageGray(np.zeros((8, 9))), 1.0)
    with pytest.raises(ShapeError):
        deblur_data_consistency(y, Kernel.delta(3), y, 0.0)


def test_sisr_operator_adjoint(rng):
    op = SISROperator(asymmetric_kernel(), 2, (12, 12), mu=0.1)
    x = rng.normal(size=(12, 12))
    v = rng.normal(size=(6, 6))
    assert np.vdot(op.forward(x), v) == pytest.approx(np.vdot(x, op.adjoint(v)), rel=1e-10)


def test_sisr_solution_matches_dense_solve(rng):
    shape = (12, 12)
    k = gaussian_kernel(5, 1.0)
    op = SISROperator(k, 2, shape, mu=0.2)
    A = dense(op.forward, shape, 36)
    y = rng.uniform(0, 255, size=(6, 6))
    z = rng.uniform(0, 255, size=shape)
    expected = np.linalg.solve(A.T @ A + 0.2 * np.eye(144), A.T @ y.ravel() + 0.2 * z.ravel())
    x = sisr_data_consistency(ImageGray(y), k, 2, ImageGray(z), 0.2, CGConfig(tol=1e-12, max_iter=500))
    assert np.allclose(x.data.ravel(), expected, atol=1e-6)


def test_sisr_shape_check():
    with pytest.raises(ShapeError):
        sisr_data_consistency(ImageGray(np.zeros((6, 6))), Kernel.delta(3), 2, ImageGray(np.zeros((12, 10))), 1.0)


def test_strict_cg_raises_when_not_converged(rng):
    y = ImageGray(rng.uniform(0, 255, size=(8, 8)))
    z = ImageGray(rng.uniform(0, 255, size=(16, 16)))
    with pytest.raises(NumericalFault):
        sisr_data_consistency(y, gaussian_kernel(5, 1.0), 2, z, 1e-3, CGConfig(tol=1e-14, max_iter=1, strict=True))
    relaxed = sisr_data_consistency(y, gaussian_kernel(5, 1.0), 2, z, 1e-3, CGConfig(tol=1e-14, max_iter=1))
    assert relaxed.shape == (16, 16)


def test_data_consistency_dispatch(rng):
    y = ImageGray(rng.uniform(0, 255, size=(8, 8)))
    d = Degradation(DegradationKind.DEBLUR, gaussian_kernel(3, 1.0))
    assert np.array_equal(data_consistency(y, d, y, 0.5).data, deblur_data_consistency(y, d.kernel, y, 0.5).data)


# Conjugate gradient

def spd_matrix(rng, n=20):
    m = rng.normal(size=(n, n))
    return m @ m.T + n * np.eye(n)


def test_cg_solves_spd_system(rng):
    A = spd_matrix(rng)
    b = rng.normal(size=20)
    result = conjugate_gradient(lambda v: A @ v, b, tol=1e-10, max_iter=100)
    assert result.converged
    assert np.allclose(result.x, np.linalg.solve(A, b), atol=1e-8)
    assert result.residual <= 1e-10
    assert result.iterations <= 20 + 5


def test_cg_energy_is_non_increasing(rng):
    A = spd_matrix(rng, 30)
    b = rng.normal(size=30)
    result = conjugate_gradient(lambda v: A @ v, b, tol=1e-12, max_iter=60)
    energies = result.energy_history
    assert all(e2 <= e1 + 1e-9 * abs(e1) for e1, e2 in zip(energies, energies[1:]))


def test_cg_zero_right_hand_side():
    result = conjugate_gradient(lambda v: 2 * v, np.zeros(5))
    assert result.iterations == 0 and result.converged
    assert not result.x.any()


def test_cg_warm_start_at_solution(rng):
    A = spd_matrix(rng)
    b = rng.normal(size=20)
    result = conjugate_gradient(lambda v: A @ v, b, tol=1e-8, x0=np.linalg.solve(A, b))
    assert result.iterations == 0


def test_cg_detects_indefinite_operator():
    with pytest.raises(NumericalFault):
        conjugate_gradient(lambda v: -v, np.ones(4))


def test_cg_iteration_cap(rng):
    A = spd_matrix(rng)
    result = conjugate_gradient(lambda v: A @ v, rng.normal(size=20), tol=1e-14, max_iter=2)
    assert result.iterations == 2 and not result.converged
    assert len(result.residual_history) == 3


def test_cg_identity_converges_in_one_iteration(rng):
    b = rng.normal(size=12)
    result = conjugate_gradient(lambda v: v, b, tol=1e-12)
    assert result.iterations == 1
    assert np.allclose(result.x, b, atol=1e-12)


def test_cg_diagonal_system(rng):
    diag = np.arange(1.0, 9.0)
    b = rng.normal(size=8)
    result = conjugate_gradient(lambda v: diag * v, b, tol=1e-10, max_iter=50)
    assert result.converged
    assert np.allclose(result.x, b / diag, atol=1e-8)
