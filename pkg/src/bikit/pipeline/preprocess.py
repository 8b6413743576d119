"""Image preprocessing for training and evaluation.

Train mode: resize (shorter side) -> center crop -> random rotation ->
random horizontal/vertical flips -> per-channel normalization.
Eval mode: resize -> center crop -> normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from bikit.errors import PreprocessError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
MODES = ("train", "eval")


@dataclass(frozen=True)
class PreprocessSpec:
    target_side: int = 224
    # 224 / 0.875; the "1.1x" reading would give 246.
    resize_side: int = 256
    max_rotation_deg: float = 30.0
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD
    mode: str = "train"

    def __post_init__(self):
        if self.target_side < 1 or self.resize_side < self.target_side:
            raise PreprocessError(
                f"need 1 <= target_side <= resize_side, got {self.target_side}, {self.resize_side}",
                code="bad-spec",
            )
        for name in ("hflip_prob", "vflip_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise PreprocessError(f"{name} must lie in [0, 1]", code="bad-spec")
        if self.max_rotation_deg < 0:
            raise PreprocessError("max_rotation_deg must be non-negative", code="bad-spec")
        if len(self.mean) != 3 or len(self.std) != 3 or min(self.std) <= 0:
            raise PreprocessError("mean/std need three components, std > 0", code="bad-spec")
        if self.mode not in MODES:
            raise PreprocessError(f"mode must be one of {MODES}", code="bad-spec")


def _resize_shorter(img: np.ndarray, side: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h <= w:
        new_h, new_w = side, max(side, round(w * side / h))
    else:
        new_h, new_w = max(side, round(h * side / w)), side
    if (new_h, new_w) == (h, w):
        return img
    return np.asarray(Image.fromarray(img, mode="RGB").resize((new_w, new_h), Image.BILINEAR))


def _center_crop(img: np.ndarray, side: int) -> np.ndarray:
    h, w = img.shape[:2]
    top = (h - side) // 2
    left = (w - side) // 2
    return img[top:top + side, left:left + side]


def _rotate(chw: np.ndarray, angle: float) -> np.ndarray:
    # Out-of-bounds pixels take the channel mean of the crop.
    out = np.empty_like(chw)
    for c in range(chw.shape[0]):
        fill = float(chw[c].mean())
        out[c] = ndimage.rotate(chw[c], angle, reshape=False, order=1, mode="constant", cval=fill)
    return out


def preprocess(image: np.ndarray, spec: PreprocessSpec = PreprocessSpec(), seed: int = 0) -> np.ndarray:
    """Turn an H x W x 3 uint8 image into a normalized 3 x S x S float32 tensor.

    Random draws (rotation angle, then hflip, then vflip) come from a PCG64
    generator seeded with ``seed``; eval mode draws nothing.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise PreprocessError(f"expected an H x W x 3 image, got shape {img.shape}", code="bad-image")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise PreprocessError("image must be at least 1 x 1", code="bad-image")
    if img.dtype != np.uint8:
        raise PreprocessError(f"expected 8-bit pixels, got {img.dtype}", code="bad-image")

    img = _center_crop(_resize_shorter(np.ascontiguousarray(img), spec.resize_side), spec.target_side)
    chw = img.transpose(2, 0, 1).astype(np.float64)

    if spec.mode == "train":
        rng = np.random.Generator(np.random.PCG64(seed))
        angle = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg)
        hflip = rng.random() < spec.hflip_prob
        vflip = rng.random() < spec.vflip_prob
        if angle != 0.0:
            chw = _rotate(chw, angle)
        if hflip:
            chw = chw[:, :, ::-1]
        if vflip:
            chw = chw[:, ::-1, :]

    mean = np.asarray(spec.mean, dtype=np.float64).reshape(3, 1, 1)
    std = np.asarray(spec.std, dtype=np.float64).reshape(3, 1, 1)
    out = (chw / 255.0 - mean) / std
    return np.ascontiguousarray(out, dtype=np.float32)


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))
