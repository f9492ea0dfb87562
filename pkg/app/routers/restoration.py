from typing import Optional

from fastapi import APIRouter, Depends, File, Form, HTTPException, UploadFile
from fastapi.responses import Response
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import RePnPError
from app.models.degradation import Degradation, DegradationKind
from app.models.experiment import PnPSection
from app.models.image import ImageGray
from app.services.denoiser import DRLDenoiser, denoise_greedy
from app.services.forward import gaussian_kernel
from app.services.image import decode_image, encode_png, psnr
from app.services.model_store import model_store
from app.services.network import parameter_report
from app.services.pnp import build_pnp_config, run_pnp

router = APIRouter()


def get_denoiser() -> DRLDenoiser:
    try:
        return model_store.get()
    except RePnPError as e:
        raise HTTPException(status_code=503, detail=e.detail)


async def _read_image(file: UploadFile) -> ImageGray:
    content = await file.read()
    try:
        img = decode_image(content, file.filename or "upload")
    except RePnPError as e:
        raise HTTPException(status_code=e.status_code, detail=e.detail)
    if img.height * img.width > settings.SERVICE_MAX_PIXELS:
        raise HTTPException(status_code=413, detail=f"image has more than {settings.SERVICE_MAX_PIXELS} pixels")
    return img


def _png(img: ImageGray) -> Response:
    return Response(content=encode_png(img), media_type="image/png")


def _restore(y: ImageGray, degradation: Degradation, iterations: int, denoiser: DRLDenoiser) -> ImageGray:
    try:
        section = PnPSection(iterations=iterations, sigma_train=denoiser.sigma_train)
        cfg = build_pnp_config(section, degradation)
        return run_pnp(y, cfg, denoiser).restored
    except RePnPError as e:
        raise HTTPException(status_code=e.status_code, detail=e.detail)
    except ValidationError as e:
        raise HTTPException(status_code=400, detail=f"invalid restoration parameters: {e.errors()[0]['msg']}")


@router.get("/model")
def read_model(denoiser: DRLDenoiser = Depends(get_denoiser)):
    """Architecture and parameter count of the loaded denoiser."""
    report = parameter_report(denoiser.net)
    return {
        "architecture": denoiser.net.arch.model_dump(),
        "parameters": report["total"],
        "steps": denoiser.episode.steps,
    }


@router.post("/psnr")
async def compute_psnr(reference: UploadFile = File(...), test: UploadFile = File(...)):
    ref = await _read_image(reference)
    tst = await _read_image(test)
    try:
        value = psnr(ref, tst)
    except RePnPError as e:
        raise HTTPException(status_code=e.status_code, detail=e.detail)
    return {"psnr": None if value == float("inf") else value}


@router.post("/denoise")
async def denoise(
    file: UploadFile = File(...),
    steps: Optional[int] = Form(None, ge=1, le=50),
    denoiser: DRLDenoiser = Depends(get_denoiser),
):
    img = await _read_image(file)
    episode = denoiser.episode if steps is None else denoiser.episode.model_copy(update={"steps": steps})
    return _png(denoise_greedy(denoiser.net, img, episode))


@router.post("/deblur")
async def deblur(
    file: UploadFile = File(...),
    sigma_est: float = Form(2.0, gt=0),
    kernel_size: int = Form(25, gt=0),
    noise_sigma: float = Form(7.65, ge=0),
    iterations: Optional[int] = Form(None, ge=1),
    denoiser: DRLDenoiser = Depends(get_denoiser),
):
    y = await _read_image(file)
    if kernel_size % 2 == 0 or kernel_size > min(y.shape):
        raise HTTPException(status_code=400, detail=f"kernel size {kernel_size} must be odd and fit the image")
    degradation = Degradation(DegradationKind.DEBLUR, gaussian_kernel(kernel_size, sigma_est), 1, noise_sigma)
    return _png(_restore(y, degradation, iterations or settings.SERVICE_PNP_ITERATIONS, denoiser))


@router.post("/sisr")
async def super_resolve(
    file: UploadFile = File(...),
    factor: int = Form(2, ge=1),
    sigma_est: float = Form(2.0, gt=0),
    kernel_size: int = Form(25, gt=0),
    iterations: Optional[int] = Form(None, ge=1),
    denoiser: DRLDenoiser = Depends(get_denoiser),
):
    y = await _read_image(file)
    if kernel_size % 2 == 0 or kernel_size > factor * min(y.shape):
        raise HTTPException(status_code=400, detail=f"kernel size {kernel_size} must be odd and fit the output")
    if factor * factor * y.height * y.width > settings.SERVICE_MAX_PIXELS:
        raise HTTPException(status_code=413, detail="super-resolved image would be too large")
    degradation = Degradation(DegradationKind.SISR, gaussian_kernel(kernel_size, sigma_est), factor, 0.0)
    return _png(_restore(y, degradation, iterations or settings.SERVICE_PNP_ITERATIONS, denoiser))
