"""Synthetic phantoms standing in for the medical, industrial and composite datasets.

Every family is defined in continuous coordinates on [-1, 1]^2 and rendered
by point-sampling pixel centres. The same (family, seed) therefore renders
consistently at any resolution, which the high-resolution simulation relies
on.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

FAMILIES = ("ellipses", "manhattan", "fibers", "shepp_logan")

# (intensity, a, b, x0, y0, phi_deg), modified Shepp-Logan (Toft)
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


def _grid(side: int):
    c = (np.arange(side) + 0.5) / side * 2.0 - 1.0
    return np.meshgrid(c, -c)


def _ellipse_mask(x, y, a, b, x0, y0, phi_deg):
    phi = np.deg2rad(phi_deg)
    dx, dy = x - x0, y - y0
    u = dx * np.cos(phi) + dy * np.sin(phi)
    v = -dx * np.sin(phi) + dy * np.cos(phi)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def shepp_logan(side: int) -> np.ndarray:
    x, y = _grid(side)
    img = np.zeros((side, side))
    for val, a, b, x0, y0, phi in _SHEPP_LOGAN:
        img[_ellipse_mask(x, y, a, b, x0, y0, phi)] += val
    return np.clip(img, 0.0, 1.0)


def _ellipses(side, rng):
    x, y = _grid(side)
    disc = x ** 2 + y ** 2 <= 0.9 ** 2
    img = np.where(disc, rng.uniform(0.05, 0.2), 0.0)
    n = rng.integers(5, 13)
    # large soft-tissue blobs first, small dense inclusions last
    sizes = np.sort(rng.uniform(0.08, 0.45, size=(n, 2)), axis=0)[::-1]
    for i in range(n):
        a, b = sizes[i]
        rad = rng.uniform(0.0, 0.85 - max(a, b) * 0.5)
        ang = rng.uniform(0, 2 * np.pi)
        x0, y0 = rad * np.cos(ang), rad * np.sin(ang)
        val = rng.uniform(0.5, 1.0) if i == n - 1 else rng.uniform(0.0, 0.8)
        img[_ellipse_mask(x, y, a, b, x0, y0, rng.uniform(0, 180)) & disc] = val
    return img


def _manhattan(side, rng):
    x, y = _grid(side)
    cut = rng.uniform(-0.5, 0.5)
    levels = rng.uniform(0.05, 0.35, size=2)
    img = np.where(y > cut, levels[0], levels[1])
    img[x ** 2 + y ** 2 > 0.95 ** 2] = 0.0
    for _ in range(rng.integers(10, 31)):
        w, h = rng.uniform(0.05, 0.5, size=2)
        x0, y0 = rng.uniform(-0.65, 0.65 - w), rng.uniform(-0.65, 0.65 - h)
        box = (x >= x0) & (x <= x0 + w) & (y >= y0) & (y <= y0 + h)
        img[box] = rng.choice([rng.uniform(0.5, 1.0), rng.uniform(0.0, 0.2)], p=[0.7, 0.3])
    return img


def _fibers(side, rng):
    x, y = _grid(side)
    theta = rng.uniform(0, np.pi)
    # coordinate across the dominant fibre direction, with a gentle waviness
    u = -x * np.sin(theta) + y * np.cos(theta)
    v = x * np.cos(theta) + y * np.sin(theta)
    u = u + 0.02 * np.sin(2 * np.pi * v * rng.uniform(0.5, 2.0) + rng.uniform(0, 2 * np.pi))
    img = np.full((side, side), rng.uniform(0.1, 0.25))
    pos = -1.5
    while pos < 1.5:
        width = rng.uniform(0.03, 0.12)
        val = rng.uniform(0.55, 0.85)
        img[(u >= pos) & (u < pos + width)] = val
        pos += width + rng.uniform(0.02, 0.1)
    img[x ** 2 + y ** 2 > 0.9 ** 2] = 0.0
    return img


def make_phantom(family: str, side: int, seed: int = 0) -> np.ndarray:
    """Render a phantom of the given family; deterministic in (family, side, seed)."""
    if family not in FAMILIES:
        raise ValueError(f"unknown phantom family {family!r}; choose from {FAMILIES}")
    if side < 16:
        raise ValueError("phantom side must be at least 16")
    if family == "shepp_logan":
        return shepp_logan(side)
    rng = np.random.default_rng([FAMILIES.index(family), int(seed)])
    img = {"ellipses": _ellipses, "manhattan": _manhattan, "fibers": _fibers}[family](side, rng)
    return np.clip(img, 0.0, 1.0)


def rotate_image(image, angle: float) -> np.ndarray:
    """Bilinear rotation about the image centre, counter-clockwise in degrees."""
    if abs(angle) > 45:
        raise ValueError("rotation angle must satisfy |angle| <= 45")
    x = np.asarray(image, dtype=np.float64)
    if angle == 0:
        return x.copy()
    out = ndimage.rotate(x, angle, reshape=False, order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)
