"""Smoke-checks a running restoration service.

Start it with `uvicorn app.main:app --port 8002` and REPNP_CHECKPOINT set.
"""
import io
import json
import sys

import numpy as np
import requests
from PIL import Image

BASE_URL = "http://localhost:8002/api/v1"


def print_response(name, response):
    print(f"--- {name} ---")
    print(f"Status: {response.status_code}")
    if response.headers.get("content-type", "").startswith("image/"):
        print(f"<{len(response.content)} bytes of {response.headers['content-type']}>")
    else:
        try:
            print(json.dumps(response.json(), indent=2))
        except ValueError:
            print(response.text)
    print("\n")


def test_image(size=64, offset=0):
    yy, xx = np.mgrid[0:size, 0:size]
    arr = np.clip(64 + 2 * xx + yy + offset, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def run_verification():
    print("1. Model info...")
    resp = requests.get(f"{BASE_URL}/model")
    print_response("Model", resp)
    if resp.status_code != 200:
        print("No denoiser loaded, aborting.")
        sys.exit(1)

    print("2. PSNR of an image against itself shifted by 16...")
    resp = requests.post(f"{BASE_URL}/psnr", files={
        "reference": ("ref.png", test_image(), "image/png"),
        "test": ("test.png", test_image(offset=16), "image/png"),
    })
    print_response("PSNR", resp)

    print("3. Denoising...")
    resp = requests.post(f"{BASE_URL}/denoise", files={"file": ("x.png", test_image(), "image/png")})
    print_response("Denoise", resp)

    print("4. Deblurring...")
    resp = requests.post(
        f"{BASE_URL}/deblur",
        files={"file": ("x.png", test_image(), "image/png")},
        data={"sigma_est": 2.0, "kernel_size": 25, "noise_sigma": 7.65, "iterations": 5},
    )
    print_response("Deblur", resp)

    print("5. Super-resolving x2...")
    resp = requests.post(
        f"{BASE_URL}/sisr",
        files={"file": ("x.png", test_image(32), "image/png")},
        data={"factor": 2, "sigma_est": 2.0, "kernel_size": 25, "iterations": 5},
    )
    print_response("SISR", resp)


if __name__ == "__main__":
    run_verification()
