"""Global light-direction estimation from a single grayscale image.

The light direction comes from the image point with the strongest Sobel
gradient after a Gaussian blur: l = [Gx, Gy, -1] / sqrt(Gx^2 + Gy^2 + 1).
The azimuth of that gradient, relative to a vehicle heading, selects one of
n discrete shadow direction buckets.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geom import wrap_angle

DEFAULT_BLUR_SIGMA = 2.0


@dataclass(slots=True)
class ImageGrid:
    width: int
    height: int
    luminance: np.ndarray  # (height, width), values in [0, 1]

    def __post_init__(self):
        self.luminance = np.asarray(self.luminance, dtype=float)
        if self.width < 3 or self.height < 3:
            raise ValueError("image must be at least 3x3")
        if self.luminance.shape != (self.height, self.width):
            raise ValueError("luminance shape must be (height, width)")


@dataclass(frozen=True, slots=True)
class LightEstimate:
    direction: tuple  # unit 3-vector, z < 0
    azimuth: float    # atan2(Gy, Gx) at the strongest-gradient pixel


def load_pgm(path) -> ImageGrid:
    """Read a P2 (ASCII) or P5 (binary) PGM, scaled to [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()

    tokens = []
    i = 0
    # tokenize header, honoring '#' comments
    while len(tokens) < 4 and i < len(data):
        if data[i : i + 1].isspace():
            i += 1
            continue
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        tokens.append(data[i:j])
        i = j
    if len(tokens) < 4 or tokens[0] not in (b"P2", b"P5"):
        raise ValueError(f"{path}: not a P2/P5 PGM")
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        i += 1  # single whitespace byte after maxval
        if maxval < 256:
            raw = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=i)
        else:
            raw = np.frombuffer(data, dtype=">u2", count=width * height, offset=i)
        pixels = raw.astype(float)
    else:
        pixels = np.array(data[i:].split(), dtype=float)
        if len(pixels) != width * height:
            raise ValueError(f"{path}: expected {width * height} samples, got {len(pixels)}")
    lum = pixels.reshape(height, width) / float(maxval)
    return ImageGrid(width=width, height=height, luminance=lum)


def write_pgm(path, values: np.ndarray, maxval: int = 255) -> None:
    """Write a P5 PGM from an integer grid (values already in 0..maxval)."""
    arr = np.asarray(values)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.astype(np.uint8).tobytes())


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge-replicate padding."""
    if sigma <= 0:
        return img.copy()
    radius = int(math.ceil(3.0 * sigma))
    k = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    k /= k.sum()
    padded = np.pad(img, ((0, 0), (radius, radius)), mode="edge")
    rows = np.apply_along_axis(lambda r: np.convolve(r, k, mode="valid"), 1, padded)
    padded = np.pad(rows, ((radius, radius), (0, 0)), mode="edge")
    return np.apply_along_axis(lambda c: np.convolve(c, k, mode="valid"), 0, padded)


def sobel(img: np.ndarray):
    """Sobel gradients (Gx along columns, Gy along rows), replicate edges."""
    p = np.pad(img, 1, mode="edge")
    gx = (
        -p[:-2, :-2] + p[:-2, 2:]
        - 2.0 * p[1:-1, :-2] + 2.0 * p[1:-1, 2:]
        - p[2:, :-2] + p[2:, 2:]
    )
    gy = (
        -p[:-2, :-2] - 2.0 * p[:-2, 1:-1] - p[:-2, 2:]
        + p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:]
    )
    return gx, gy


def estimate_light(img: ImageGrid, blur_sigma: float = DEFAULT_BLUR_SIGMA) -> LightEstimate:
    """Light direction from the maximum-gradient pixel (row-major tie-break)."""
    blurred = gaussian_blur(img.luminance, blur_sigma)
    gx, gy = sobel(blurred)
    mag2 = gx * gx + gy * gy
    p_star = int(np.argmax(mag2))  # first maximum in row-major order
    if mag2.flat[p_star] < 1e-24:
        # gradient-free image (modulo blur rounding noise): straight-down light
        return LightEstimate(direction=(0.0, 0.0, -1.0), azimuth=0.0)
    gxv = float(gx.flat[p_star])
    gyv = float(gy.flat[p_star])
    norm = math.sqrt(gxv * gxv + gyv * gyv + 1.0)
    direction = (gxv / norm, gyv / norm, -1.0 / norm)
    return LightEstimate(direction=direction, azimuth=math.atan2(gyv, gxv))


def shadow_bucket(light_azimuth: float, vehicle_heading: float, n_buckets: int = 8) -> int:
    """Relative light angle quantized into n equal buckets over [0, 2pi)."""
    if n_buckets < 1:
        raise ValueError("n_buckets must be >= 1")
    theta = wrap_angle(light_azimuth - vehicle_heading)
    if theta < 0:
        theta += 2.0 * math.pi
    theta %= 2.0 * math.pi
    return min(int(theta * n_buckets / (2.0 * math.pi)), n_buckets - 1)
