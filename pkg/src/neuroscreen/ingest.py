"""Manifests, plate-level splits, training label selection and augmentation."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch
import torchvision.transforms.functional as TF
from torchvision.transforms import InterpolationMode

from .plate import ABETA_ONLY, CONTROL, LayoutError, PlateLayout, WellAddress, load_layout

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("plate_id", "compound", "row", "col", "field", "channel",
                    "compound_dose_um", "abeta_dose_um", "path")
FILENAME_RE = re.compile(
    r"^(?P<plate>.+)_(?P<row>[A-Z])(?P<col>\d+)_f(?P<field>\d{2,})_(?P<channel>Cy5|DAPI|dsRed|FITC)\.png$")
TRAIN_CHANNEL = "Cy5"


class IngestError(Exception):
    pass


class EmptyDirectory(IngestError):
    pass


class DuplicateKey(IngestError):
    pass


class TooFewPlates(IngestError):
    pass


class MissingLayout(IngestError):
    pass


@dataclass(frozen=True)
class ManifestRecord:
    plate_id: str
    compound: str | None
    well: WellAddress
    field: int
    channel: str
    compound_dose_um: int | None
    abeta_dose_um: int | None
    path: str

    @property
    def key(self) -> tuple:
        return (self.plate_id, self.well, self.field, self.channel)


@dataclass
class Manifest:
    records: list[ManifestRecord]
    unparsed: list[str] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.key in seen:
                raise DuplicateKey(f"duplicate image key {rec.key}")
            seen.add(rec.key)

    @property
    def plates(self) -> list[str]:
        return sorted({r.plate_id for r in self.records})

    def __len__(self) -> int:
        return len(self.records)

    def select(self, plates: Iterable[str] | None = None, channel: str | None = None) -> list[ManifestRecord]:
        plates = None if plates is None else set(plates)
        return [r for r in self.records
                if (plates is None or r.plate_id in plates)
                and (channel is None or r.channel == channel)]


def write_manifest_csv(path, records: Iterable[ManifestRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_COLUMNS)
        for r in records:
            w.writerow([r.plate_id, r.compound or "", r.well.row, r.well.col, r.field, r.channel,
                        "" if r.compound_dose_um is None else r.compound_dose_um,
                        "" if r.abeta_dose_um is None else r.abeta_dose_um, r.path])


def read_manifest_csv(path) -> Manifest:
    """Read a manifest CSV; relative paths resolve against its directory."""
    base = Path(path).resolve().parent
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            p = Path(row["path"])
            records.append(ManifestRecord(
                row["plate_id"], row["compound"] or None,
                WellAddress(row["row"], int(row["col"])), int(row["field"]), row["channel"],
                int(row["compound_dose_um"]) if row["compound_dose_um"] else None,
                int(row["abeta_dose_um"]) if row["abeta_dose_um"] else None,
                str(p if p.is_absolute() else base / p)))
    return Manifest(records)


def load_layouts(root) -> dict[str, PlateLayout]:
    """Collect every ``layout.json`` below ``root``, keyed by plate id."""
    layouts = {}
    for path in sorted(Path(root).rglob("layout.json")):
        layout = load_layout(path)
        layouts[layout.plate_id] = layout
    return layouts


def build_manifest(root, layouts: Mapping[str, PlateLayout] | None = None) -> Manifest:
    """Index every image under ``root`` by parsing its filename.

    Files that do not follow the naming convention are listed in
    ``Manifest.unparsed`` and logged. When ``layouts`` is given, compound and
    doses are filled in and every well must resolve against its plate layout.
    """
    root = Path(root)
    if not root.is_dir():
        raise EmptyDirectory(f"{root} is not a directory")
    records, unparsed = [], []
    for path in sorted(root.rglob("*.png")):
        m = FILENAME_RE.match(path.name)
        if m is None:
            unparsed.append(str(path))
            continue
        try:
            well = WellAddress(m["row"], int(m["col"]))
        except LayoutError:
            unparsed.append(str(path))
            continue
        plate = m["plate"]
        compound = c_dose = a_dose = None
        if layouts is not None:
            if plate not in layouts:
                raise MissingLayout(f"no layout for plate {plate}")
            regime = layouts[plate].regime_of(well)
            compound = layouts[plate].compound_name
            c_dose, a_dose = regime.compound_dose_um, regime.abeta_dose_um
        records.append(ManifestRecord(plate, compound, well, int(m["field"]), m["channel"],
                                      c_dose, a_dose, str(path)))
    if unparsed:
        log.warning("%d files under %s do not match the naming convention", len(unparsed), root)
    if not records:
        raise EmptyDirectory(f"no images found under {root}")
    return Manifest(records, unparsed)


def split_plates(manifest: Manifest | Sequence[str], n_test: int, seed: int) -> tuple[list[str], list[str]]:
    """Random plate-level train/test partition."""
    plates = manifest.plates if isinstance(manifest, Manifest) else sorted(set(manifest))
    if n_test < 0 or n_test >= len(plates):
        raise TooFewPlates(f"cannot hold out {n_test} of {len(plates)} plates")
    shuffled = list(plates)
    random.Random(seed).shuffle(shuffled)
    test = sorted(shuffled[:n_test])
    train = sorted(shuffled[n_test:])
    assert not set(train) & set(test)
    return train, test


def write_split(path, train: Sequence[str], test: Sequence[str], seed: int) -> None:
    Path(path).write_text(json.dumps({"train": list(train), "test": list(test), "seed": seed}, indent=1))


def read_split(path) -> tuple[list[str], list[str], int]:
    doc = json.loads(Path(path).read_text())
    return doc["train"], doc["test"], doc["seed"]


def split_hash(train: Sequence[str], test: Sequence[str]) -> str:
    payload = json.dumps({"train": sorted(train), "test": sorted(test)}).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


@dataclass(frozen=True)
class LabeledExample:
    path: str
    label: int
    plate_id: str
    well: WellAddress
    field: int = 0


def training_pairs(manifest: Manifest, layouts: Mapping[str, PlateLayout],
                   plates: Iterable[str] | None = None) -> list[LabeledExample]:
    """Cy5 images of vehicle-control (label 0) and Aβ-only (label 1) wells."""
    records = manifest.select(plates, channel=TRAIN_CHANNEL)
    examples = []
    counts: dict[str, list[int]] = {}
    for rec in records:
        layout = layouts.get(rec.plate_id)
        if layout is None:
            raise MissingLayout(f"no layout for plate {rec.plate_id}")
        counts.setdefault(rec.plate_id, [0, 0])
        regime = layout.regime_of(rec.well)
        if regime == CONTROL:
            label = 0
        elif regime == ABETA_ONLY:
            label = 1
        else:
            continue
        counts[rec.plate_id][label] += 1
        examples.append(LabeledExample(rec.path, label, rec.plate_id, rec.well, rec.field))
    for plate, (n0, n1) in counts.items():
        if n0 == 0 or n1 == 0:
            log.warning("plate %s contributes %d control and %d Aβ examples", plate, n0, n1)
    return examples


@dataclass(frozen=True)
class AugmentBounds:
    max_rotation_deg: float = 15.0
    max_shear_deg: float = 10.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    crop_frac: float = 0.875
    flip_prob: float = 0.5


@dataclass(frozen=True)
class AugmentParams:
    angle: float = 0.0
    shear: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0
    crop_frac: float = 1.0
    crop_top: float = 0.5   # offset as a fraction of the free margin
    crop_left: float = 0.5
    hflip: bool = False
    vflip: bool = False

    @classmethod
    def identity(cls, crop_frac: float = 1.0) -> "AugmentParams":
        return cls(crop_frac=crop_frac)

    @property
    def is_affine_neutral(self) -> bool:
        return self.angle == 0 and self.shear == (0.0, 0.0) and self.scale == 1.0


def sample_augment(rng: np.random.Generator, bounds: AugmentBounds = AugmentBounds()) -> AugmentParams:
    return AugmentParams(
        angle=float(rng.uniform(-bounds.max_rotation_deg, bounds.max_rotation_deg)),
        shear=(float(rng.uniform(-bounds.max_shear_deg, bounds.max_shear_deg)),
               float(rng.uniform(-bounds.max_shear_deg, bounds.max_shear_deg))),
        scale=float(rng.uniform(*bounds.scale_range)),
        crop_frac=bounds.crop_frac,
        crop_top=float(rng.random()),
        crop_left=float(rng.random()),
        hflip=bool(rng.random() < bounds.flip_prob),
        vflip=bool(rng.random() < bounds.flip_prob),
    )


def apply_augment(image: np.ndarray, params: AugmentParams, output_size: int | None = None) -> np.ndarray:
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"expected a square 2-D image, got shape {image.shape}")
    t = torch.as_tensor(np.ascontiguousarray(image), dtype=torch.float32)[None]
    if not params.is_affine_neutral:
        t = TF.affine(t, angle=params.angle, translate=[0, 0], scale=params.scale,
                      shear=list(params.shear), interpolation=InterpolationMode.BILINEAR)
    n = image.shape[0]
    side = max(1, int(round(n * params.crop_frac)))
    if side < n:
        top = int(round((n - side) * params.crop_top))
        left = int(round((n - side) * params.crop_left))
        t = TF.crop(t, top, left, side, side)
    if params.hflip:
        t = TF.hflip(t)
    if params.vflip:
        t = TF.vflip(t)
    if output_size is not None and output_size != side:
        t = TF.resize(t, [output_size, output_size], antialias=True)
    return t[0].numpy()


def augment(image: np.ndarray, seed: int, output_size: int | None = None,
            bounds: AugmentBounds = AugmentBounds()) -> np.ndarray:
    """Random label-preserving augmentation, reproducible from ``seed``."""
    params = sample_augment(np.random.default_rng(seed), bounds)
    return apply_augment(image, params, output_size)


def preprocess(image: np.ndarray, output_size: int, crop_frac: float = AugmentBounds.crop_frac) -> np.ndarray:
    """Deterministic inference path: center crop, then resize."""
    return apply_augment(image, AugmentParams.identity(crop_frac), output_size)
