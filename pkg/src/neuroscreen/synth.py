"""Procedural neuron-culture field views with dose-dependent morphology.

The Cy5 channel carries branching neurite arbours grown from soma points.
Aβ exposure shortens neurites, suppresses branching and breaks strokes into
beads; the other channels are plain blob fields with no class signal.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.morphology import skeletonize

from .plate import PlateLayout, TreatmentRegime, WellAddress

CHANNELS = ("Cy5", "DAPI", "dsRed", "FITC")
MAX_ABETA_UM = 30.0


@dataclass(frozen=True)
class SynthConfig:
    effect_size: float = 1.0
    protective_map: Mapping[str, float] = field(default_factory=dict)
    dose_k_um: float = 3.0
    image_size: int = 256
    fields_per_well: int = 30
    channels: tuple[str, ...] = CHANNELS
    base_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "protective_map", dict(self.protective_map))
        if not 0.0 <= self.effect_size <= 1.0:
            raise ValueError(f"effect_size must be in [0, 1], got {self.effect_size}")
        for name, p in self.protective_map.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"protective fraction for {name!r} must be in [0, 1], got {p}")
        if self.dose_k_um <= 0:
            raise ValueError("dose_k_um must be positive")
        if self.image_size < 64:
            raise ValueError("image_size must be at least 64")
        if self.fields_per_well < 1:
            raise ValueError("fields_per_well must be at least 1")
        unknown = set(self.channels) - set(CHANNELS)
        if unknown or not self.channels:
            raise ValueError(f"channels must be a nonempty subset of {CHANNELS}, got {self.channels}")

    def protective_fraction(self, compound: str) -> float:
        return float(self.protective_map.get(compound, 0.0))

    def to_dict(self) -> dict:
        return {
            "effect_size": self.effect_size,
            "protective_map": dict(self.protective_map),
            "dose_k_um": self.dose_k_um,
            "image_size": self.image_size,
            "fields_per_well": self.fields_per_well,
            "channels": list(self.channels),
            "base_seed": self.base_seed,
        }


@dataclass(frozen=True)
class FieldImage:
    plate_id: str
    well: WellAddress
    field_index: int
    channel: str
    pixels: np.ndarray = field(repr=False, compare=False)


def effective_exposure(regime: TreatmentRegime, p: float, dose_k_um: float) -> float:
    """Fraction of the full Aβ effect that reaches the cells.

    The compound cancels up to ``p`` of the effect, following a saturating
    dose response d / (d + K).
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"protective fraction must be in [0, 1], got {p}")
    d = float(regime.compound_dose_um)
    blocked = p * d / (d + dose_k_um)
    return (regime.abeta_dose_um / MAX_ABETA_UM) * (1.0 - blocked)


def field_seed(base_seed: int, plate_id: str, well: WellAddress, field_index: int,
               channel: str) -> int:
    key = f"{base_seed}|{plate_id}|{well}|{field_index}|{channel}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


# Arbour parameters at 256 px; lengths scale with image side.
_SOMA_RANGE = (4, 7)
_PRIMARY_RANGE = (4, 7)
_PRIMARY_STEPS = 70
_BRANCH_PROB = 0.035
_TURN_SD = 0.18
_GENERATIONS = 3
_MAX_SEGMENTS = 400


def _splat(canvas: np.ndarray, x: np.ndarray, y: np.ndarray, w: np.ndarray) -> None:
    """Bilinear point splatting, i.e. anti-aliased stroke deposition."""
    n = canvas.shape[0]
    keep = (x >= 0) & (x < n - 1) & (y >= 0) & (y < n - 1)
    x, y, w = x[keep], y[keep], w[keep]
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    fx, fy = x - x0, y - y0
    flat = canvas.ravel()
    base = y0 * n + x0
    np.add.at(flat, base, w * (1 - fx) * (1 - fy))
    np.add.at(flat, base + 1, w * fx * (1 - fy))
    np.add.at(flat, base + n, w * (1 - fx) * fy)
    np.add.at(flat, base + n + 1, w * fx * fy)


def _grow_arbours(rng: np.random.Generator, size: int, severity: float):
    """Random-walk neurite trees; returns point coordinates and weights."""
    scale = size / 256.0
    n_soma = max(1, int(round(rng.integers(*_SOMA_RANGE) * scale)))
    somas = rng.uniform(0.15 * size, 0.85 * size, size=(n_soma, 2))
    brightness = rng.uniform(0.55, 0.9, size=n_soma)

    n_prim = rng.integers(*_PRIMARY_RANGE, size=n_soma)
    owner = np.repeat(np.arange(n_soma), n_prim)
    start = somas[owner]
    heading = rng.uniform(0, 2 * np.pi, size=owner.size)
    mean_steps = _PRIMARY_STEPS * scale * (1.0 - 0.45 * severity)
    branch_p = _BRANCH_PROB * (1.0 - 0.8 * severity)
    gap_p = 0.06 * severity

    xs, ys, ws = [], [], []
    for gen in range(_GENERATIONS):
        n_seg = owner.size
        if n_seg == 0:
            break
        lengths = np.maximum(2, (mean_steps * (0.65 ** gen)
                                 * rng.uniform(0.6, 1.2, size=n_seg)).astype(int))
        max_len = int(lengths.max())
        turns = rng.normal(0.0, _TURN_SD, size=(n_seg, max_len))
        theta = heading[:, None] + np.cumsum(turns, axis=1)
        px = start[:, 0:1] + np.cumsum(np.cos(theta), axis=1)
        py = start[:, 1:2] + np.cumsum(np.sin(theta), axis=1)
        alive = np.arange(max_len)[None, :] < lengths[:, None]

        # beading: short intensity gaps along the stroke
        gaps = rng.random((n_seg, max_len)) < gap_p
        gaps = ndimage.maximum_filter1d(gaps.astype(np.uint8), size=5, axis=1,
                                        origin=-2).astype(bool)
        weight = np.where(gaps, 0.08, 1.0) * brightness[owner][:, None]
        taper = 1.0 - 0.35 * np.arange(max_len)[None, :] / np.maximum(lengths[:, None], 1)
        weight = weight * taper * (0.8 ** gen)

        xs.append(px[alive])
        ys.append(py[alive])
        ws.append(weight[alive])

        spawn = alive & (rng.random((n_seg, max_len)) < branch_p)
        seg_idx, step_idx = np.nonzero(spawn)
        if seg_idx.size > _MAX_SEGMENTS:
            pick = rng.choice(seg_idx.size, _MAX_SEGMENTS, replace=False)
            seg_idx, step_idx = seg_idx[pick], step_idx[pick]
        side = rng.choice([-1.0, 1.0], size=seg_idx.size)
        heading = theta[seg_idx, step_idx] + side * rng.uniform(0.4, 1.1, size=seg_idx.size)
        start = np.stack([px[seg_idx, step_idx], py[seg_idx, step_idx]], axis=1)
        owner = owner[seg_idx]

    return somas, brightness, np.concatenate(xs), np.concatenate(ys), np.concatenate(ws)


def _background(rng: np.random.Generator, size: int, level: float) -> np.ndarray:
    ang = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(ang) * np.linspace(-1, 1, size)[None, :] + np.sin(ang) * np.linspace(-1, 1, size)[:, None]
    return level + 0.02 * ramp


def _sensor(rng: np.random.Generator, signal: np.ndarray, photons: float = 400.0) -> np.ndarray:
    # shot noise in its Gaussian limit plus read noise; far cheaper than Poisson draws
    signal = np.clip(signal, 0, None)
    noisy = signal + np.sqrt(signal / photons + 0.008 ** 2) * rng.standard_normal(signal.shape)
    return np.clip(noisy, 0.0, 1.0)


def _render_cy5(rng: np.random.Generator, size: int, severity: float) -> np.ndarray:
    somas, brightness, x, y, w = _grow_arbours(rng, size, severity)
    canvas = np.zeros((size, size))
    _splat(canvas, x, y, w)
    canvas = ndimage.gaussian_filter(canvas, 0.8)
    bodies = np.zeros((size, size))
    _splat(bodies, somas[:, 0], somas[:, 1], brightness * 60.0 * (size / 256.0) ** 2)
    canvas += ndimage.gaussian_filter(bodies, 4.0 * size / 256.0)
    return _sensor(rng, canvas + _background(rng, size, 0.05))


def _render_blobs(rng: np.random.Generator, size: int, count: int, sigma: float,
                  amplitude: float) -> np.ndarray:
    pts = rng.uniform(0, size - 1, size=(count, 2))
    canvas = np.zeros((size, size))
    _splat(canvas, pts[:, 0], pts[:, 1],
           rng.uniform(0.5, 1.0, size=count) * amplitude * 2 * np.pi * sigma ** 2)
    canvas = ndimage.gaussian_filter(canvas, sigma)
    return _sensor(rng, canvas + _background(rng, size, 0.04))


def render_field(exposure: float, effect_size: float, channel: str, image_size: int,
                 seed: int) -> np.ndarray:
    """One grayscale field view with intensities in [0, 1]."""
    if not (0.0 <= exposure <= 1.0 and 0.0 <= effect_size <= 1.0):
        raise ValueError("exposure and effect_size must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    scale = image_size / 256.0
    if channel == "Cy5":
        return _render_cy5(rng, image_size, exposure * effect_size)
    if channel == "DAPI":
        return _render_blobs(rng, image_size, max(1, int(6 * scale)), 5.0 * scale, 0.5)
    if channel in ("dsRed", "FITC"):
        return _render_blobs(rng, image_size, max(4, int(150 * scale ** 2)), 1.2, 0.4)
    raise ValueError(f"unknown channel {channel!r}")


def skeleton_pixel_count(pixels: np.ndarray) -> int:
    """Length of the thresholded, skeletonized neurite network in pixels."""
    smooth = ndimage.gaussian_filter(pixels, 1.0)
    mask = smooth > np.median(smooth) + 0.08
    return int(skeletonize(mask).sum())


def iter_fields(layout: PlateLayout, config: SynthConfig) -> Iterator[FieldImage]:
    """Yield every field view of a plate in row-major well order.

    Each image draws from its own seed, so any one of them can be
    regenerated without the others.
    """
    p = config.protective_fraction(layout.compound_name)
    for well, regime in layout.wells:
        exposure = effective_exposure(regime, p, config.dose_k_um)
        for f in range(config.fields_per_well):
            for ch in config.channels:
                seed = field_seed(config.base_seed, layout.plate_id, well, f, ch)
                yield FieldImage(layout.plate_id, well, f, ch,
                                 render_field(exposure, config.effect_size, ch,
                                              config.image_size, seed))


def generate_plate(layout: PlateLayout, config: SynthConfig) -> list[FieldImage]:
    return list(iter_fields(layout, config))


def field_filename(plate_id: str, well: WellAddress, field_index: int, channel: str) -> str:
    return f"{plate_id}_{well.row}{well.col}_f{field_index:02d}_{channel}.png"


def save_png16(path, pixels: np.ndarray) -> None:
    data = np.round(np.clip(pixels, 0, 1) * 65535).astype(np.uint16)
    Image.fromarray(data).save(path)


def load_png16(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64) / 65535.0


def write_plate(layout: PlateLayout, config: SynthConfig, out_dir) -> list:
    """Render a plate to ``out_dir`` as 16-bit PNGs plus manifest and layout files.

    Returns the manifest records. Pixels are streamed to disk, not kept.
    """
    from .ingest import ManifestRecord, write_manifest_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for img in iter_fields(layout, config):
        name = field_filename(img.plate_id, img.well, img.field_index, img.channel)
        save_png16(out / name, img.pixels)
        regime = layout.regime_of(img.well)
        records.append(ManifestRecord(img.plate_id, layout.compound_name, img.well,
                                      img.field_index, img.channel,
                                      regime.compound_dose_um, regime.abeta_dose_um, name))
    write_manifest_csv(out / "manifest.csv", records)
    (out / "layout.json").write_text(layout.dumps())
    (out / "synth_config.json").write_text(json.dumps(config.to_dict(), indent=1))
    return records
