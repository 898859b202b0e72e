"""Image -> well -> regime score aggregation and protective-effect verdicts."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .plate import (ABETA_ONLY, CONTROL, REGIMES, PlateLayout, TreatmentRegime,
                    WellAddress)

DEFAULT_THRESHOLD = 0.5
UNTREATED = "untreated"
ABETA_TREATED = "abeta_treated"
SCREEN_DOSES = (1, 3, 10)


class ScreeningError(ValueError):
    pass


class EmptyWell(ScreeningError):
    pass


class MixedWells(ScreeningError):
    pass


class WrongWellCount(ScreeningError):
    pass


class MissingRegime(ScreeningError):
    pass


@dataclass(frozen=True)
class ImageScore:
    plate_id: str
    well: WellAddress
    field_index: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class WellScore:
    well: WellAddress
    mean_score: float
    n_fields: int
    plate_id: str = ""


@dataclass(frozen=True)
class RegimeSummary:
    regime: TreatmentRegime
    mean_score: float
    std_wells: float
    std_images: float
    n_wells: int
    well_means: tuple[float, ...] = ()
    wells: tuple[WellAddress, ...] = ()


@dataclass(frozen=True)
class ScreeningVerdict:
    compound_name: str
    compound_dose_um: int
    mean_score: float
    protective: bool
    threshold: float


@dataclass
class PlateScreen:
    plate_id: str
    compound_name: str
    threshold: float
    verdicts: list[ScreeningVerdict]
    control_label: str
    abeta_label: str
    invalid_controls: bool
    summaries: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "plate_id": self.plate_id,
            "compound": self.compound_name,
            "threshold": self.threshold,
            "invalid_controls": self.invalid_controls,
            "control_label": self.control_label,
            "abeta_label": self.abeta_label,
            "verdicts": [asdict(v) for v in self.verdicts],
        }


def score_well(scores: Sequence[ImageScore]) -> WellScore:
    """Average the field-view scores of a single well."""
    if not scores:
        raise EmptyWell("no scores for well")
    keys = {(s.plate_id, s.well) for s in scores}
    if len(keys) > 1:
        raise MixedWells(f"scores span several wells: {sorted(str(w) for _, w in keys)}")
    plate_id, well = keys.pop()
    # fixed summation order makes the result independent of input order
    values = np.array([s.score for s in sorted(scores, key=lambda s: s.field_index)],
                      dtype=np.float64)
    return WellScore(well, float(values.mean()), len(values), plate_id)


def summarize_regime(regime: TreatmentRegime, well_scores: Sequence[WellScore],
                     image_scores: Sequence[ImageScore] | Sequence[float] = (),
                     n_wells: int | None = 6) -> RegimeSummary:
    """Mean of well means, with population std over wells and over images.

    ``image_scores`` may be empty, in which case ``std_images`` is NaN.
    """
    if n_wells is not None and len(well_scores) != n_wells:
        raise WrongWellCount(f"regime {regime}: expected {n_wells} wells, got {len(well_scores)}")
    if not well_scores:
        raise WrongWellCount(f"regime {regime}: no wells")
    ordered = sorted(well_scores, key=lambda w: w.well)
    means = np.array([w.mean_score for w in ordered], dtype=np.float64)
    imgs = np.array([s.score if isinstance(s, ImageScore) else s for s in image_scores],
                    dtype=np.float64)
    return RegimeSummary(
        regime=regime,
        mean_score=float(means.mean()),
        std_wells=float(means.std()),
        std_images=float(imgs.std()) if imgs.size else float("nan"),
        n_wells=len(ordered),
        well_means=tuple(float(m) for m in means),
        wells=tuple(w.well for w in ordered),
    )


def classify_regime(summary: RegimeSummary, threshold: float = DEFAULT_THRESHOLD) -> str:
    """A score on the threshold counts as treated, so protection is never declared on a tie."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return ABETA_TREATED if summary.mean_score >= threshold else UNTREATED


def summarize_plate(scores: Iterable[ImageScore], layout: PlateLayout,
                    n_wells: int | None = 6) -> dict[TreatmentRegime, RegimeSummary]:
    """Group image scores by well and regime for one plate."""
    by_well: dict[WellAddress, list[ImageScore]] = defaultdict(list)
    for s in scores:
        if s.plate_id != layout.plate_id:
            raise MixedWells(f"score for plate {s.plate_id} given with layout {layout.plate_id}")
        by_well[s.well].append(s)
    summaries = {}
    for regime in layout.regimes:
        wells = [w for w in layout.wells_of(regime) if w in by_well]
        if not wells:
            continue
        well_scores = [score_well(by_well[w]) for w in wells]
        images = [s for w in wells for s in sorted(by_well[w], key=lambda s: s.field_index)]
        summaries[regime] = summarize_regime(regime, well_scores, images, n_wells)
    return summaries


def screen_compound(summaries: Mapping[TreatmentRegime, RegimeSummary] | Iterable[RegimeSummary],
                    threshold: float = DEFAULT_THRESHOLD, compound_name: str = "",
                    plate_id: str = "") -> PlateScreen:
    """One verdict per compound dose: protective iff (dose, 30 μM Aβ) scores as untreated.

    Controls are checked too; a plate whose vehicle wells do not score as
    untreated, or whose Aβ-only wells do not score as treated, still gets
    verdicts but is flagged ``invalid_controls``.
    """
    if not isinstance(summaries, Mapping):
        summaries = {s.regime: s for s in summaries}
    missing = [str(r) for r in REGIMES if r not in summaries]
    if missing:
        raise MissingRegime(f"regimes missing from plate: {missing}")
    verdicts = []
    for dose in SCREEN_DOSES:
        s = summaries[TreatmentRegime(dose, 30)]
        label = classify_regime(s, threshold)
        verdicts.append(ScreeningVerdict(compound_name, dose, s.mean_score,
                                         label == UNTREATED, threshold))
    control_label = classify_regime(summaries[CONTROL], threshold)
    abeta_label = classify_regime(summaries[ABETA_ONLY], threshold)
    invalid = control_label != UNTREATED or abeta_label != ABETA_TREATED
    return PlateScreen(plate_id, compound_name, threshold, verdicts, control_label,
                       abeta_label, invalid, dict(summaries))


# -- files -------------------------------------------------------------------

SCORE_COLUMNS = ("plate_id", "row", "col", "field", "score")


def write_scores_csv(path, scores: Iterable[ImageScore]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_COLUMNS)
        for s in scores:
            w.writerow([s.plate_id, s.well.row, s.well.col, s.field_index, repr(float(s.score))])


def read_scores_csv(path) -> list[ImageScore]:
    with open(path, newline="") as fh:
        return [ImageScore(r["plate_id"], WellAddress(r["row"], int(r["col"])),
                           int(r["field"]), float(r["score"]))
                for r in csv.DictReader(fh)]


def write_summary_csv(path, summaries: Mapping[TreatmentRegime, RegimeSummary]) -> None:
    """Regimes as columns; replicate wells, mean and both stds as rows."""
    regimes = [r for r in REGIMES if r in summaries]
    n_rows = max(s.n_wells for s in summaries.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["compound_dose_um"] + [r.compound_dose_um for r in regimes])
        w.writerow(["abeta_dose_um"] + [r.abeta_dose_um for r in regimes])
        for i in range(n_rows):
            w.writerow([f"well_{i + 1}"] + [
                f"{summaries[r].well_means[i]:.6f}" if i < len(summaries[r].well_means) else ""
                for r in regimes])
        w.writerow(["mean"] + [f"{summaries[r].mean_score:.6f}" for r in regimes])
        w.writerow(["std_wells"] + [f"{summaries[r].std_wells:.6f}" for r in regimes])
        w.writerow(["std_images"] + [f"{summaries[r].std_images:.6f}" for r in regimes])


def write_verdicts_json(path, screens: PlateScreen | Sequence[PlateScreen]) -> None:
    if isinstance(screens, PlateScreen):
        doc = screens.to_dict()
    else:
        doc = [s.to_dict() for s in screens]
    Path(path).write_text(json.dumps(doc, indent=1))
