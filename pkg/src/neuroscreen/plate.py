"""Assay plate geometry, treatment position map and compound catalog."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Iterable, Mapping

ROWS = ("B", "C", "D", "E", "F", "G", "H", "J")
COLS = range(2, 8)
COMPOUND_DOSES = (0, 1, 3, 10)
ABETA_DOSES = (0, 30)
REPLICATES = 6


class LayoutError(ValueError):
    """Base class for invalid plate layouts."""


class DuplicateWell(LayoutError):
    pass


class UnknownRow(LayoutError):
    pass


class ColumnOutOfRange(LayoutError):
    pass


class RegimeCountMismatch(LayoutError):
    pass


class InvalidDose(LayoutError):
    pass


class UnassignedWell(LayoutError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True, order=True)
class WellAddress:
    row: str
    col: int

    def __post_init__(self):
        if self.row not in ROWS:
            raise UnknownRow(f"row {self.row!r} not in {''.join(ROWS)}")
        if self.col not in COLS:
            raise ColumnOutOfRange(f"column {self.col} outside [{COLS.start}, {COLS.stop - 1}]")

    @classmethod
    def parse(cls, text: str) -> "WellAddress":
        text = text.strip().upper()
        try:
            col = int(text[1:])
        except ValueError:
            raise LayoutError(f"malformed well address {text!r}") from None
        return cls(text[:1], col)

    def __str__(self) -> str:
        return f"{self.row}{self.col}"


def _as_dose(value, allowed: tuple[int, ...], what: str) -> int:
    for d in allowed:
        if value == d:
            return d
    raise InvalidDose(f"{what} dose {value!r} not in {allowed}")


@dataclass(frozen=True, order=True)
class TreatmentRegime:
    compound_dose_um: int
    abeta_dose_um: int

    def __post_init__(self):
        object.__setattr__(self, "compound_dose_um",
                           _as_dose(self.compound_dose_um, COMPOUND_DOSES, "compound"))
        object.__setattr__(self, "abeta_dose_um",
                           _as_dose(self.abeta_dose_um, ABETA_DOSES, "abeta"))

    @property
    def is_vehicle_control(self) -> bool:
        return self.compound_dose_um == 0 and self.abeta_dose_um == 0

    def __str__(self) -> str:
        return f"{self.compound_dose_um}/{self.abeta_dose_um}"


# Column order used by the screening tables.
REGIMES = tuple(TreatmentRegime(c, a) for c in COMPOUND_DOSES for a in ABETA_DOSES)
CONTROL = TreatmentRegime(0, 0)
ABETA_ONLY = TreatmentRegime(0, 30)


@dataclass(frozen=True)
class PlateLayout:
    """Well-to-regime assignment for one plate.

    ``wells`` is kept sorted row-major so that equality and serialization are
    independent of the order wells were supplied in.
    """

    plate_id: str
    compound_name: str
    wells: tuple[tuple[WellAddress, TreatmentRegime], ...] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "wells", tuple(sorted(self.wells)))

    @cached_property
    def assignment(self) -> Mapping[WellAddress, TreatmentRegime]:
        return dict(self.wells)

    @property
    def regimes(self) -> tuple[TreatmentRegime, ...]:
        present = {r for _, r in self.wells}
        return tuple(r for r in REGIMES if r in present)

    def regime_of(self, well: WellAddress | str) -> TreatmentRegime:
        if isinstance(well, str):
            try:
                well = WellAddress.parse(well)
            except LayoutError:
                raise UnassignedWell(f"well {well} is not assigned on plate {self.plate_id}") from None
        try:
            return self.assignment[well]
        except KeyError:
            raise UnassignedWell(f"well {well} is not assigned on plate {self.plate_id}") from None

    def wells_of(self, regime: TreatmentRegime) -> list[WellAddress]:
        return [w for w, r in self.wells if r == regime]

    def with_compound(self, compound_name: str, plate_id: str | None = None) -> "PlateLayout":
        return PlateLayout(plate_id or self.plate_id, compound_name, self.wells)

    def to_dict(self) -> dict:
        return {
            "plate_id": self.plate_id,
            "compound": self.compound_name,
            "wells": [
                {"row": w.row, "col": w.col,
                 "compound_dose_um": r.compound_dose_um, "abeta_dose_um": r.abeta_dose_um}
                for w, r in self.wells
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def build_layout(plate_id: str, compound_name: str,
                 pairs: Iterable[tuple[WellAddress, TreatmentRegime]],
                 replicates: int | None = REPLICATES) -> PlateLayout:
    """Validate well/regime pairs and assemble a layout.

    With ``replicates=None`` the per-regime replicate count is not enforced,
    which admits plate designs other than the standard 8 x 6 one.
    """
    seen: dict[WellAddress, TreatmentRegime] = {}
    for well, regime in pairs:
        if well in seen:
            raise DuplicateWell(
                f"well {well} assigned twice ({seen[well]} and {regime})")
        seen[well] = regime
    if replicates is not None:
        counts = {r: 0 for r in REGIMES}
        for regime in seen.values():
            counts[regime] += 1
        bad = {str(r): n for r, n in counts.items() if n != replicates}
        if bad:
            raise RegimeCountMismatch(
                f"expected {replicates} wells per regime, got {bad}")
    return PlateLayout(plate_id, compound_name, tuple(seen.items()))


def parse_layout(text: str, replicates: int | None = REPLICATES) -> PlateLayout:
    """Parse a JSON layout document (``plate_id``, ``compound``, ``wells``)."""
    if not text.strip():
        return build_layout("", "", [], replicates)
    doc = json.loads(text)
    pairs = []
    for rec in doc.get("wells", []):
        well = WellAddress(str(rec["row"]).upper(), int(rec["col"]))
        pairs.append((well, TreatmentRegime(rec["compound_dose_um"], rec["abeta_dose_um"])))
    return build_layout(str(doc.get("plate_id", "")), str(doc.get("compound", "")),
                        pairs, replicates)


def load_layout(path, replicates: int | None = REPLICATES) -> PlateLayout:
    with open(path) as fh:
        return parse_layout(fh.read(), replicates)


def default_layout(compound_name: str, plate_id: str = "default") -> PlateLayout:
    """The standard 48-well position map, bound to ``compound_name``.

    The (10, 30) regime occupies J2-J4 and B5-B7.
    """
    text = resources.files("neuroscreen.data").joinpath("default_layout.json").read_text()
    return parse_layout(text).with_compound(compound_name, plate_id)


def load_catalog(path=None) -> list[str]:
    """Return the compound catalog; the bundled one has 36 names."""
    if path is None:
        text = resources.files("neuroscreen.data").joinpath("catalog.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    names = json.loads(text)
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise ValueError("catalog must be a JSON list of strings")
    if len(set(names)) != len(names):
        raise ValueError("catalog contains duplicate names")
    return names
