"""Half-quadratic-splitting Plug-and-Play restoration and kernel-mismatch sweeps."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from app.core.errors import ConfigError, NumericalFault
from app.models.degradation import Degradation, DegradationKind
from app.models.experiment import PnPSection
from app.models.image import ImageGray
from app.models.pnp import CGConfig, PnPConfig, PnPResult, SweepRow, TraceEntry
from app.services.forward import crop_to_multiple, data_consistency, degrade, gaussian_kernel, upsample_nearest
from app.services.image import crop_border, psnr

logger = logging.getLogger(__name__)

Prior = Callable[[ImageGray, float], ImageGray]


def sigma_schedule(k: int, iterations: int, sigma_start: float, sigma_end: float) -> float:
    """Geometric decay from sigma_start (k = 0) to sigma_end (k = K-1)."""
    if iterations < 2:
        raise ConfigError(f"a decaying schedule needs at least 2 iterations, got {iterations}")
    if not 0 < sigma_end < sigma_start:
        raise ConfigError(f"need 0 < sigma_end < sigma_start, got {sigma_end} and {sigma_start}")
    if not 0 <= k < iterations:
        raise ConfigError(f"iteration index {k} outside [0, {iterations})")
    if k == 0:
        return float(sigma_start)
    if k == iterations - 1:
        return float(sigma_end)
    return sigma_start * (sigma_end / sigma_start) ** (k / (iterations - 1))


def resolve_sigma_end(section: PnPSection, noise_sigma: float) -> float:
    """Noise-free observations cannot decay to 0, so the schedule stops at the floor."""
    if section.sigma_end is not None:
        return section.sigma_end
    return max(noise_sigma, section.sigma_floor)


def build_pnp_config(section: PnPSection, degradation_est: Degradation, cg: CGConfig = CGConfig()) -> PnPConfig:
    sigma_end = resolve_sigma_end(section, degradation_est.noise_sigma)
    lam = section.lam if section.lam is not None else section.lambda_coeff * sigma_end ** 2
    return PnPConfig(
        iterations=section.iterations,
        sigma_start=section.sigma_start,
        sigma_end=sigma_end,
        lam=lam,
        degradation_est=degradation_est,
        sigma_train=section.sigma_train,
        cg=cg,
    )


def initial_estimate(y: ImageGray, d: Degradation) -> ImageGray:
    if d.kind == DegradationKind.SISR:
        return upsample_nearest(y, d.factor)
    return y


def run_pnp(
    y: ImageGray,
    cfg: PnPConfig,
    denoiser: Prior,
    init: Optional[ImageGray] = None,
    ground_truth: Optional[ImageGray] = None,
) -> PnPResult:
    d = cfg.degradation_est
    z = init if init is not None else initial_estimate(y, d)
    trace = []
    for k, (sigma, mu) in enumerate(zip(cfg.sigmas(), cfg.mus())):
        try:
            x = data_consistency(y, d, z, mu, cfg.cg)
            z = denoiser(x, sigma)
        except NumericalFault as e:
            raise NumericalFault(f"PnP iteration {k}: {e.detail}") from e
        value = psnr(ground_truth, z) if ground_truth is not None else None
        trace.append(TraceEntry(k, sigma, mu, value))
        logger.debug("pnp iteration %d sigma %.4f mu %.4g psnr %s", k, sigma, mu, value)
    return PnPResult(z, trace)


def identity_prior(x: ImageGray, sigma: float) -> ImageGray:
    return x


@dataclass
class RestorationOutcome:
    clean: ImageGray
    degraded: ImageGray
    restored: ImageGray
    psnr_input: float
    psnr_restored: float
    trace: List[TraceEntry]


def evaluation_border(cfg: PnPConfig, true_deg: Degradation, border_crop: bool) -> int:
    return max(true_deg.kernel.radius, cfg.degradation_est.kernel.radius) if border_crop else 0


def _crop_psnr(reference: ImageGray, test: ImageGray, border: int) -> float:
    return psnr(crop_border(reference, border), crop_border(test, border))


def restore_one(
    clean: ImageGray,
    true_deg: Degradation,
    cfg: PnPConfig,
    denoiser: Prior,
    seed: int,
    border_crop: bool = True,
    degraded: Optional[ImageGray] = None,
) -> RestorationOutcome:
    """Degrade with the true model, restore with cfg.degradation_est, score both."""
    if true_deg.kind == DegradationKind.SISR:
        clean = crop_to_multiple(clean, true_deg.factor)
    y = degraded if degraded is not None else degrade(clean, true_deg, seed)
    result = run_pnp(y, cfg, denoiser, ground_truth=clean)
    border = evaluation_border(cfg, true_deg, border_crop)
    baseline = initial_estimate(y, true_deg)
    return RestorationOutcome(
        clean=clean,
        degraded=y,
        restored=result.restored,
        psnr_input=_crop_psnr(clean, baseline, border),
        psnr_restored=_crop_psnr(clean, result.restored, border),
        trace=result.trace,
    )


def image_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


def robustness_sweep(
    clean_set: Sequence[ImageGray],
    true_deg: Degradation,
    est_sigmas: Sequence[float],
    cfg_template: PnPConfig,
    denoiser: Prior,
    seed: int = 0,
    jobs: int = 1,
    border_crop: bool = True,
    sigma_true: Optional[float] = None,
) -> List[SweepRow]:
    """Mean PSNR per estimated kernel sigma; every image is degraded once and reused.

    With `sigma_true` the first row is the control restored with the true
    kernel, whether or not that sigma is also listed in `est_sigmas`.
    """
    if not clean_set or not est_sigmas:
        raise ConfigError("robustness sweep needs images and estimate sigmas")
    if true_deg.kind == DegradationKind.SISR:
        clean_set = [crop_to_multiple(img, true_deg.factor) for img in clean_set]
    observations = [degrade(img, true_deg, image_seed(seed, i)) for i, img in enumerate(clean_set)]

    candidates = [(s, gaussian_kernel(true_deg.kernel.size, s), False) for s in est_sigmas]
    if sigma_true is not None:
        candidates = [(sigma_true, true_deg.kernel, True)] + [s for s in candidates if not math.isclose(s[0], sigma_true)]

    rows = []
    for sigma_est, kernel, control in candidates:
        cfg = cfg_template.model_copy(update={"degradation_est": true_deg.with_kernel(kernel)})

        def score(i: int) -> float:
            return restore_one(clean_set[i], true_deg, cfg, denoiser, 0, border_crop, degraded=observations[i]).psnr_restored

        # map keeps input order, so the reduction is deterministic
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            values = list(pool.map(score, range(len(clean_set))))
        row = SweepRow.from_values(sigma_est, values, control)
        logger.info("sigma_est %.2f%s mean psnr %.3f (n=%d)", sigma_est, " (control)" if control else "", row.mean_psnr, row.n_images)
        rows.append(row)
    return rows


def strictly_decreasing(rows: Sequence[SweepRow]) -> bool:
    """Trend over the biased rows; the control row is checked by control_is_best."""
    biased = [r for r in rows if not r.control]
    means = [r.mean_psnr for r in sorted(biased, key=lambda r: r.sigma_est)]
    return all(a > b for a, b in zip(means, means[1:])) and all(math.isfinite(m) for m in means)


def control_is_best(rows: Sequence[SweepRow]) -> bool:
    controls = [r for r in rows if r.control]
    if not controls:
        return True
    return all(controls[0].mean_psnr > r.mean_psnr for r in rows if not r.control)
