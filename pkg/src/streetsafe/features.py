"""Street-view visual features: tabular ingest, cover ratios, visual entropy.

The canonical feature set is the eight measurements per image: five
segmentation cover ratios, wire-pole presence, grayscale visual entropy,
and a car count. Segmentation and object detection happen upstream; this
module only loads their outputs or computes ratios/entropy from them.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .validation import DataValidationError

logger = logging.getLogger(__name__)

FEATURE_ORDER: tuple[str, ...] = (
    "greenery",
    "sky",
    "wall",
    "fence",
    "sidewalk",
    "wire",
    "entropy",
    "car_count",
)
RATIO_FEATURES: tuple[str, ...] = ("greenery", "sky", "wall", "fence", "sidewalk")
BINARY_FEATURES: tuple[str, ...] = ("wire",)
#: Features binarized by a fitted threshold (everything that is not already binary).
CONTINUOUS_FEATURES: tuple[str, ...] = tuple(
    f for f in FEATURE_ORDER if f not in BINARY_FEATURES
)

HISTOGRAM_BINS = 256
MAX_ENTROPY_BITS = 8.0

FEATURE_FILE_HEADER: tuple[str, ...] = ("image_id",) + FEATURE_ORDER
_GEO_HEADER: tuple[str, ...] = FEATURE_FILE_HEADER + ("lat", "lon")


@dataclass(frozen=True)
class FeatureVector:
    """The eight visual measurements of one street-view image."""

    greenery: float
    sky: float
    wall: float
    fence: float
    sidewalk: float
    wire: int
    entropy: float
    car_count: int

    def __post_init__(self) -> None:
        for name in RATIO_FEATURES:
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not np.isfinite(value):
                raise DataValidationError(f"{name} must be a finite number, got {value!r}")
            if not 0.0 <= value <= 1.0:
                raise DataValidationError(f"{name} must lie in [0, 1], got {value!r}")
        if self.wire not in (0, 1):
            raise DataValidationError(f"wire must be 0 or 1, got {self.wire!r}")
        if not np.isfinite(self.entropy) or not 0.0 <= self.entropy <= MAX_ENTROPY_BITS:
            raise DataValidationError(
                f"entropy must lie in [0, {MAX_ENTROPY_BITS}] bits, got {self.entropy!r}"
            )
        if not isinstance(self.car_count, int) or self.car_count < 0:
            raise DataValidationError(
                f"car_count must be a non-negative integer, got {self.car_count!r}"
            )

    def as_array(self, feature_order: Sequence[str] = FEATURE_ORDER) -> np.ndarray:
        return np.array([getattr(self, n) for n in feature_order], dtype=np.float64)


@dataclass(frozen=True)
class FeatureRow:
    image_id: str
    features: FeatureVector
    lat: float | None = None
    lon: float | None = None

    @property
    def has_geo(self) -> bool:
        return self.lat is not None and self.lon is not None


class FeatureTable:
    """Ordered per-image feature rows with unique image ids."""

    def __init__(self, rows: Sequence[FeatureRow]):
        self.rows: list[FeatureRow] = list(rows)
        self._index: dict[str, int] = {}
        for i, row in enumerate(self.rows):
            if row.image_id in self._index:
                raise DataValidationError(f"duplicate image_id {row.image_id!r}")
            self._index[row.image_id] = i

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[FeatureRow]:
        return iter(self.rows)

    def __getitem__(self, i: int) -> FeatureRow:
        return self.rows[i]

    def get(self, image_id: str) -> FeatureRow:
        try:
            return self.rows[self._index[image_id]]
        except KeyError:
            raise KeyError(f"unknown image_id {image_id!r}") from None

    @property
    def image_ids(self) -> list[str]:
        return [r.image_id for r in self.rows]

    @property
    def has_geo(self) -> bool:
        return bool(self.rows) and all(r.has_geo for r in self.rows)

    def to_array(self, feature_order: Sequence[str] = FEATURE_ORDER) -> np.ndarray:
        """(n, n_features) matrix with columns in ``feature_order``."""
        if not self.rows:
            return np.zeros((0, len(feature_order)))
        return np.stack([r.features.as_array(feature_order) for r in self.rows])


@dataclass(frozen=True)
class SegmentationMap:
    """Per-pixel class-id grid produced by an upstream segmentation model."""

    width: int
    height: int
    labels: np.ndarray  # (height, width), small non-negative ints

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise DataValidationError("segmentation map must have positive dimensions")
        if self.labels.shape != (self.height, self.width):
            raise DataValidationError(
                f"labels grid shape {self.labels.shape} does not match "
                f"{self.height}x{self.width}"
            )
        if self.labels.size and self.labels.min() < 0:
            raise DataValidationError("class identifiers must be non-negative")


def _parse_row(line_no: int, row: list[str], expect_geo: bool) -> FeatureRow:
    expected = len(_GEO_HEADER) if expect_geo else len(FEATURE_FILE_HEADER)
    if len(row) != expected:
        raise DataValidationError(
            f"line {line_no}: expected {expected} columns, got {len(row)}"
        )
    image_id = row[0]
    if not image_id:
        raise DataValidationError(f"line {line_no}: empty image_id")
    values: dict[str, float | int] = {}
    for name, raw in zip(FEATURE_ORDER, row[1:9]):
        try:
            if name in ("wire", "car_count"):
                values[name] = int(raw)
            else:
                values[name] = float(raw)
        except ValueError:
            raise DataValidationError(
                f"line {line_no}: column {name!r} has malformed value {raw!r}"
            ) from None
    try:
        features = FeatureVector(**values)
    except DataValidationError as exc:
        raise DataValidationError(f"line {line_no}: {exc}") from None
    lat = lon = None
    if expect_geo:
        try:
            lat, lon = float(row[9]), float(row[10])
        except ValueError:
            raise DataValidationError(f"line {line_no}: malformed lat/lon") from None
    return FeatureRow(image_id, features, lat, lon)


def load_feature_table(path: str | Path, skip_malformed: bool = False) -> FeatureTable:
    """Load a canonical feature CSV.

    Strict by default: any malformed row fails the whole load with its line
    number. With ``skip_malformed`` bad rows are logged and dropped instead.
    """
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"feature file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise DataValidationError(f"{path}: empty file") from None
        if header == FEATURE_FILE_HEADER:
            expect_geo = False
        elif header == _GEO_HEADER:
            expect_geo = True
        else:
            raise DataValidationError(
                f"{path}: bad header; expected {','.join(FEATURE_FILE_HEADER)}"
                " with optional trailing lat,lon"
            )
        rows: list[FeatureRow] = []
        seen: set[str] = set()
        for line_no, raw in enumerate(reader, start=2):
            if not raw:
                continue
            try:
                row = _parse_row(line_no, raw, expect_geo)
                if row.image_id in seen:
                    raise DataValidationError(
                        f"line {line_no}: duplicate image_id {row.image_id!r}"
                    )
            except DataValidationError as exc:
                if skip_malformed:
                    logger.warning("%s: skipping row: %s", path, exc)
                    continue
                raise DataValidationError(f"{path}: {exc}") from None
            seen.add(row.image_id)
            rows.append(row)
    return FeatureTable(rows)


def save_feature_table(table: FeatureTable, path: str | Path) -> None:
    """Write the canonical feature CSV (round-trips exactly via repr floats)."""
    path = Path(path)
    with_geo = table.has_geo
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_GEO_HEADER if with_geo else FEATURE_FILE_HEADER)
        for row in table:
            f = row.features
            record = [row.image_id] + [repr(getattr(f, n)) for n in FEATURE_ORDER]
            if with_geo:
                record += [repr(row.lat), repr(row.lon)]
            writer.writerow(record)


def load_segmentation_map(path: str | Path) -> SegmentationMap:
    """Read the plain-text map format: ``width height`` then row-major labels."""
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"segmentation map not found: {path}")
    text = path.read_text(encoding="utf-8").split()
    if len(text) < 2:
        raise DataValidationError(f"{path}: missing width/height header")
    try:
        width, height = int(text[0]), int(text[1])
        labels = np.array([int(t) for t in text[2:]], dtype=np.int64)
    except ValueError:
        raise DataValidationError(f"{path}: non-integer entries") from None
    if labels.size != width * height:
        raise DataValidationError(
            f"{path}: expected {width * height} labels, got {labels.size}"
        )
    return SegmentationMap(width, height, labels.reshape(height, width))


def compute_fov(seg_map: SegmentationMap, class_ids) -> float:
    """Fraction of pixels whose class id falls in ``class_ids``.

    An empty class set is allowed and yields 0.0.
    """
    ids = sorted(set(int(c) for c in class_ids))
    if not ids:
        return 0.0
    return float(np.isin(seg_map.labels, ids).mean())


def compute_visual_entropy(histogram) -> float:
    """Shannon entropy (bits) of an 8-bit grayscale histogram.

    ``-sum p_i log2 p_i`` over nonzero bins; result clamped to the
    theoretical [0, 8] range against roundoff.
    """
    hist = np.asarray(histogram, dtype=np.float64)
    if hist.shape != (HISTOGRAM_BINS,):
        raise DataValidationError(
            f"histogram must have exactly {HISTOGRAM_BINS} bins, got shape {hist.shape}"
        )
    if (hist < 0).any():
        raise DataValidationError("histogram counts must be non-negative")
    total = hist.sum()
    if total <= 0:
        raise DataValidationError("histogram must contain at least one count")
    p = hist[hist > 0] / total
    h = float(-(p * np.log2(p)).sum())
    return min(max(h, 0.0), MAX_ENTROPY_BITS)


def assemble_features(
    fov_by_class: Mapping[str, float],
    wire_present: bool,
    entropy: float,
    car_count: int,
) -> FeatureVector:
    """Compose a FeatureVector from its ingredients.

    ``fov_by_class`` maps ratio-feature names to cover ratios; missing
    features default to 0.0, unknown names are rejected.
    """
    unknown = set(fov_by_class) - set(RATIO_FEATURES)
    if unknown:
        raise DataValidationError(f"unknown ratio features: {sorted(unknown)}")
    ratios = {name: float(fov_by_class.get(name, 0.0)) for name in RATIO_FEATURES}
    return FeatureVector(
        **ratios,
        wire=1 if wire_present else 0,
        entropy=float(entropy),
        car_count=int(car_count),
    )


def load_class_map(path: str | Path) -> dict[str, frozenset[int]]:
    """Load the segmentation class-id mapping for the five ratio features.

    JSON object: feature name -> list of class ids. Different segmenters
    use different palettes, so this stays a user-supplied configuration.
    """
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"class map not found: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise DataValidationError(f"{path}: expected a JSON object")
    unknown = set(data) - set(RATIO_FEATURES)
    if unknown:
        raise DataValidationError(f"{path}: unknown features {sorted(unknown)}")
    return {
        name: frozenset(int(c) for c in data.get(name, ())) for name in RATIO_FEATURES
    }


def load_histogram(path: str | Path) -> np.ndarray:
    """Read a 256-bin grayscale histogram (whitespace-separated counts)."""
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"histogram file not found: {path}")
    try:
        counts = np.array(path.read_text(encoding="utf-8").split(), dtype=np.int64)
    except ValueError:
        raise DataValidationError(f"{path}: non-integer histogram counts") from None
    if counts.shape != (HISTOGRAM_BINS,):
        raise DataValidationError(
            f"{path}: expected {HISTOGRAM_BINS} counts, got {counts.size}"
        )
    return counts


MANIFEST_HEADER = ("image_id", "seg_path", "hist_path", "wire", "car_count")
_MANIFEST_GEO_HEADER = MANIFEST_HEADER + ("lat", "lon")


def ingest_manifest(
    manifest_path: str | Path, class_map: Mapping[str, frozenset[int]]
) -> FeatureTable:
    """Compute a FeatureTable from segmentation maps and histograms.

    The manifest CSV lists per image: the segmentation-map file, the
    histogram file, and the externally supplied wire flag and car count.
    Relative paths resolve against the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataValidationError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    rows: list[FeatureRow] = []
    with manifest_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise DataValidationError(f"{manifest_path}: empty file") from None
        if header == MANIFEST_HEADER:
            expect_geo = False
        elif header == _MANIFEST_GEO_HEADER:
            expect_geo = True
        else:
            raise DataValidationError(
                f"{manifest_path}: bad header; expected {','.join(MANIFEST_HEADER)}"
            )
        for line_no, raw in enumerate(reader, start=2):
            if not raw:
                continue
            expected = len(header)
            if len(raw) != expected:
                raise DataValidationError(
                    f"{manifest_path}: line {line_no}: expected {expected} columns"
                )
            image_id, seg_rel, hist_rel = raw[0], raw[1], raw[2]
            try:
                wire, cars = int(raw[3]), int(raw[4])
            except ValueError:
                raise DataValidationError(
                    f"{manifest_path}: line {line_no}: malformed wire/car_count"
                ) from None
            seg = load_segmentation_map(base / seg_rel)
            hist = load_histogram(base / hist_rel)
            features = assemble_features(
                {name: compute_fov(seg, ids) for name, ids in class_map.items()},
                wire_present=bool(wire),
                entropy=compute_visual_entropy(hist),
                car_count=cars,
            )
            lat = lon = None
            if expect_geo:
                lat, lon = float(raw[5]), float(raw[6])
            rows.append(FeatureRow(image_id, features, lat, lon))
    return FeatureTable(rows)
