"""Pairwise "which looks safer" comparisons into per-image skill scores.

Two-player, no-draw TrueSkill: every image holds a Gaussian skill
(mu, sigma); each forced choice moves the winner up and the loser down
and shrinks both uncertainties. Scores are min-max normalized mus, and
binary safety labels come from thresholding at the mean score, with an
explicit expert-override layer on top.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from scipy.special import erfcx

from .validation import DataValidationError

LABEL_SAFE = "safe"
LABEL_UNSAFE = "unsafe"

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)
# Below this t the direct pdf/cdf ratio loses precision to cdf underflow.
_V_DIRECT_CUTOFF = -6.0


@dataclass(frozen=True)
class TrueSkillParams:
    """Prior and dynamics parameters. Defaults are the standard ones.

    tau = 0 disables skill dynamics (pure shrinkage), which is the variant
    used by the closed-form oracle checks.
    """

    mu0: float = 25.0
    sigma0: float = 25.0 / 3.0
    beta: float = 25.0 / 6.0
    tau: float = 25.0 / 300.0

    def __post_init__(self) -> None:
        if self.sigma0 <= 0 or self.beta <= 0:
            raise DataValidationError("sigma0 and beta must be positive")
        if self.tau < 0:
            raise DataValidationError("tau must be non-negative")


@dataclass(frozen=True)
class PlayerRating:
    mu: float
    sigma: float
    games: int = 0

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise DataValidationError(f"sigma must be positive, got {self.sigma!r}")
        if self.games < 0:
            raise DataValidationError("games must be non-negative")


@dataclass(frozen=True)
class ComparisonRecord:
    """One crowdsourced forced choice; winner looked safer."""

    timestamp: float
    session: str
    winner_id: str
    loser_id: str
    age: str | None = None
    gender: str | None = None
    location: str | None = None

    def __post_init__(self) -> None:
        if self.winner_id == self.loser_id:
            raise DataValidationError(
                f"winner and loser must differ, got {self.winner_id!r} twice"
            )


@dataclass
class RatingTable:
    ratings: dict[str, PlayerRating] = field(default_factory=dict)
    params: TrueSkillParams = field(default_factory=TrueSkillParams)


@dataclass(frozen=True)
class LabelSet:
    """Binary safety labels derived from scores, plus recorded overrides."""

    scores: dict[str, float]
    labels: dict[str, str]
    threshold: float
    overridden: frozenset[str] = frozenset()


def init_rating(params: TrueSkillParams) -> PlayerRating:
    return PlayerRating(mu=params.mu0, sigma=params.sigma0, games=0)


def _v_win(t: float) -> float:
    """Mean-shift factor v(t) = pdf(t) / cdf(t) for a win at skill gap t.

    For strongly negative t the cdf underflows; the scaled-complementary-
    erf form v(t) = 2 / (sqrt(2*pi) * erfcx(-t/sqrt(2))) is the stable
    asymptotic branch and is exact for all t < 0.
    """
    if t < _V_DIRECT_CUTOFF:
        return float(2.0 / (_SQRT_2PI * erfcx(-t / _SQRT2)))
    pdf = math.exp(-0.5 * t * t) / _SQRT_2PI
    cdf = 0.5 * math.erfc(-t / _SQRT2)
    return pdf / cdf


def update(
    winner: PlayerRating, loser: PlayerRating, params: TrueSkillParams | None = None
) -> tuple[PlayerRating, PlayerRating]:
    """One two-player no-draw skill update.

    Variances are first inflated by tau^2, then with
    c^2 = 2*beta^2 + sigma_w^2 + sigma_l^2 and t = (mu_w - mu_l) / c:
    v = pdf(t)/cdf(t), w = v*(v + t); means move by (sigma^2/c)*v and each
    variance shrinks by the factor 1 - (sigma^2/c^2)*w, which lies in (0, 1).
    """
    params = params or TrueSkillParams()
    sw2 = winner.sigma**2 + params.tau**2
    sl2 = loser.sigma**2 + params.tau**2
    c2 = 2.0 * params.beta**2 + sw2 + sl2
    c = math.sqrt(c2)
    t = (winner.mu - loser.mu) / c
    v = _v_win(t)
    w = v * (v + t)
    new_winner = PlayerRating(
        mu=winner.mu + (sw2 / c) * v,
        sigma=math.sqrt(sw2 * (1.0 - (sw2 / c2) * w)),
        games=winner.games + 1,
    )
    new_loser = PlayerRating(
        mu=loser.mu - (sl2 / c) * v,
        sigma=math.sqrt(sl2 * (1.0 - (sl2 / c2) * w)),
        games=loser.games + 1,
    )
    return new_winner, new_loser


def replay_log(
    records: Iterable[ComparisonRecord], params: TrueSkillParams | None = None
) -> RatingTable:
    """Fold the update over an ordered comparison log.

    Deterministic: the table depends only on record order. First-seen ids
    start from the prior.
    """
    params = params or TrueSkillParams()
    table = RatingTable(params=params)
    for index, record in enumerate(records):
        if record.winner_id == record.loser_id:
            raise DataValidationError(f"record {index}: winner equals loser")
        winner = table.ratings.get(record.winner_id) or init_rating(params)
        loser = table.ratings.get(record.loser_id) or init_rating(params)
        table.ratings[record.winner_id], table.ratings[record.loser_id] = update(
            winner, loser, params
        )
    return table


def normalize_scores(table: RatingTable) -> dict[str, float]:
    """Min-max normalize mus into [0, 1], preserving order."""
    mus = [r.mu for r in table.ratings.values()]
    if len(set(mus)) < 2:
        raise DataValidationError(
            "need at least two distinct skill means to normalize; collect more comparisons"
        )
    lo, hi = min(mus), max(mus)
    return {
        image_id: (r.mu - lo) / (hi - lo) for image_id, r in table.ratings.items()
    }


def derive_labels(
    scores: Mapping[str, float], overrides: Mapping[str, str] | None = None
) -> LabelSet:
    """Threshold scores at their mean; apply expert overrides on top.

    Label is safe iff score > threshold (a score exactly at the threshold
    reads unsafe, matching the encoder's "equality falls low" rule).
    Overrides replace the thresholded label and are recorded as such.
    """
    if not scores:
        raise DataValidationError("cannot derive labels from empty scores")
    threshold = sum(scores.values()) / len(scores)
    labels = {
        image_id: (LABEL_SAFE if score > threshold else LABEL_UNSAFE)
        for image_id, score in scores.items()
    }
    overridden: set[str] = set()
    for image_id, label in (overrides or {}).items():
        if image_id not in labels:
            raise DataValidationError(f"override for unknown image_id {image_id!r}")
        if label not in (LABEL_SAFE, LABEL_UNSAFE):
            raise DataValidationError(f"override label must be safe/unsafe, got {label!r}")
        labels[image_id] = label
        overridden.add(image_id)
    return LabelSet(
        scores=dict(scores),
        labels=labels,
        threshold=threshold,
        overridden=frozenset(overridden),
    )


_MISSING = "-"


def format_comparison_line(record: ComparisonRecord) -> str:
    """One tab-separated log line; missing annotator fields become '-'."""
    fields = (
        repr(record.timestamp),
        record.session,
        record.winner_id,
        record.loser_id,
        record.age or _MISSING,
        record.gender or _MISSING,
        record.location or _MISSING,
    )
    return "\t".join(fields)


def parse_comparison_line(line: str, line_no: int = 0) -> ComparisonRecord:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 7:
        raise DataValidationError(f"line {line_no}: expected 7 tab-separated fields")
    try:
        timestamp = float(parts[0])
    except ValueError:
        raise DataValidationError(f"line {line_no}: malformed timestamp") from None
    try:
        return ComparisonRecord(
            timestamp=timestamp,
            session=parts[1],
            winner_id=parts[2],
            loser_id=parts[3],
            age=None if parts[4] == _MISSING else parts[4],
            gender=None if parts[5] == _MISSING else parts[5],
            location=None if parts[6] == _MISSING else parts[6],
        )
    except DataValidationError as exc:
        raise DataValidationError(f"line {line_no}: {exc}") from None


def load_comparison_log(path: str | Path) -> list[ComparisonRecord]:
    """Load an append-only comparison log, enforcing timestamp monotonicity."""
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"comparison log not found: {path}")
    records: list[ComparisonRecord] = []
    last_ts = -math.inf
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = parse_comparison_line(line, line_no)
            if record.timestamp < last_ts:
                raise DataValidationError(
                    f"line {line_no}: timestamps must be non-decreasing"
                )
            last_ts = record.timestamp
            records.append(record)
    return records


def save_labels(labels: LabelSet, path: str | Path, fingerprint: str = "") -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if fingerprint:
            fh.write(f"# fingerprint={fingerprint}\n")
        writer = csv.writer(fh)
        writer.writerow(("image_id", "score", "label", "overridden"))
        for image_id in labels.scores:
            writer.writerow(
                (
                    image_id,
                    repr(labels.scores[image_id]),
                    labels.labels[image_id],
                    int(image_id in labels.overridden),
                )
            )


def load_labels(path: str | Path) -> LabelSet:
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"label file not found: {path}")
    scores: dict[str, float] = {}
    labels: dict[str, str] = {}
    overridden: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header != ["image_id", "score", "label", "overridden"]:
        raise DataValidationError(f"{path}: bad label file header")
    for row in reader:
        if not row:
            continue
        if len(row) != 4 or row[2] not in (LABEL_SAFE, LABEL_UNSAFE):
            raise DataValidationError(f"{path}: malformed label row {row!r}")
        scores[row[0]] = float(row[1])
        labels[row[0]] = row[2]
        if row[3] == "1":
            overridden.add(row[0])
    threshold = sum(scores.values()) / len(scores) if scores else 0.0
    return LabelSet(scores, labels, threshold, frozenset(overridden))
