"""Synthetic PPL/XPL image pairs for desk-scale runs and tests.

Grains are random rotated ellipses over a noisy dark background; the
mask is the exact union of the analytic ellipse memberships. PPL and XPL
renderings share grain geometry but differ by a per-grain brightness
factor; a fraction of grains go near-black in XPL to mimic extinction.
Ellipses are added until the mask reaches the requested foreground
fraction, so the realized fraction lands in [target, target + max
ellipse area).
"""

from dataclasses import dataclass

import numpy as np

from .datapipe import ImagePair
from .rng import Rng


@dataclass
class SynthConfig:
    axis_min_frac: float = 1 / 16   # semi-axis range, as fraction of min(h, w)
    axis_max_frac: float = 1 / 6
    extinction_prob: float = 0.25
    xpl_bright_lo: float = 0.35
    xpl_bright_hi: float = 1.2
    bg_level: float = 55.0
    bg_noise: float = 12.0
    grain_noise: float = 6.0
    max_grains: int = 5000


@dataclass
class Ellipse:
    cx: float
    cy: float
    a: float
    b: float
    theta: float


def _bbox(h: int, w: int, e: Ellipse):
    """Clipped row/col slices of the rotated ellipse's bounding box."""
    ct, st = np.cos(e.theta), np.sin(e.theta)
    half_x = np.sqrt((e.a * ct) ** 2 + (e.b * st) ** 2)
    half_y = np.sqrt((e.a * st) ** 2 + (e.b * ct) ** 2)
    r0 = max(0, int(np.floor(e.cy - half_y)) - 1)
    r1 = min(h, int(np.ceil(e.cy + half_y)) + 2)
    c0 = max(0, int(np.floor(e.cx - half_x)) - 1)
    c1 = min(w, int(np.ceil(e.cx + half_x)) + 2)
    return slice(r0, r1), slice(c0, c1)


def _membership_patch(rows: slice, cols: slice, e: Ellipse) -> np.ndarray:
    yy, xx = np.mgrid[rows, cols]
    dx = xx - e.cx
    dy = yy - e.cy
    ct, st = np.cos(e.theta), np.sin(e.theta)
    u = dx * ct + dy * st
    v = -dx * st + dy * ct
    return (u * u) / (e.a * e.a) + (v * v) / (e.b * e.b) <= 1.0


def ellipse_membership(h: int, w: int, e: Ellipse) -> np.ndarray:
    mask = np.zeros((h, w), bool)
    rows, cols = _bbox(h, w, e)
    mask[rows, cols] = _membership_patch(rows, cols, e)
    return mask


def synth_pair(rng: Rng, pair_id: str, h: int, w: int, grain_fraction: float,
               cfg: SynthConfig = SynthConfig()):
    """Returns (ImagePair, list of Ellipse)."""
    if not 0.0 < grain_fraction < 1.0:
        raise ValueError(f"grain_fraction must be in (0, 1), got {grain_fraction}")
    ref = min(h, w)
    mask = np.zeros((h, w), bool)

    ppl = np.clip(rng.normal(cfg.bg_level, cfg.bg_noise, (h, w, 3)), 0, 255)
    xpl = np.clip(rng.normal(cfg.bg_level * 0.6, cfg.bg_noise, (h, w, 3)), 0, 255)

    ellipses = []
    for _ in range(cfg.max_grains):
        if mask.mean() >= grain_fraction:
            break
        e = Ellipse(
            cx=float(rng.uniform(0, w)),
            cy=float(rng.uniform(0, h)),
            a=float(rng.uniform(cfg.axis_min_frac * ref, cfg.axis_max_frac * ref)),
            b=float(rng.uniform(cfg.axis_min_frac * ref, cfg.axis_max_frac * ref)),
            theta=float(rng.uniform(0, np.pi)),
        )
        rows, cols = _bbox(h, w, e)
        member = _membership_patch(rows, cols, e)
        color = rng.uniform(110, 230, 3)
        xpl_factor = (0.03 if rng.random() < cfg.extinction_prob
                      else float(rng.uniform(cfg.xpl_bright_lo, cfg.xpl_bright_hi)))
        # render only inside the bounding box; the rest of the frame is untouched
        jitter = rng.normal(0.0, cfg.grain_noise, member.shape + (3,))
        m3 = member[..., None]
        ppl[rows, cols] = np.where(m3, np.clip(color + jitter, 0, 255),
                                   ppl[rows, cols])
        xpl[rows, cols] = np.where(m3, np.clip(color * xpl_factor + jitter, 0, 255),
                                   xpl[rows, cols])
        mask[rows, cols] |= member
        ellipses.append(e)

    pair = ImagePair(id=pair_id,
                     ppl=ppl.astype(np.uint8),
                     xpl=xpl.astype(np.uint8),
                     mask=mask.astype(np.uint8) * 255)
    return pair, ellipses


def generate_synthetic(rng: Rng, count: int, h: int, w: int,
                       grain_fraction: float,
                       cfg: SynthConfig = SynthConfig()) -> list:
    if count <= 0:
        raise ValueError("count must be positive")
    pairs = []
    for i in range(count):
        pair, _ = synth_pair(rng, f"synth{i:03d}", h, w, grain_fraction, cfg)
        pairs.append(pair)
    return pairs
