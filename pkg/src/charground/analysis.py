"""Corpus-scale analyses over grounding predictions.

Three analyses are supported, all consuming the prediction JSONL emitted by
the prediction step plus per-character profiles (mention counts and
referential gender, supplied as metadata):

  * protagonist mobility: how many distinct places the most-mentioned
    character of each book is grounded IN, against a rival drawn from the
    next five most central characters, over a fixed-size sample of IN
    predictions (a type/token-style count), repeated to average out
    sampling noise;
  * indoor proclivity: P(place is indoor | character gender) over
    IN-grounded, lexicon-covered mentions, with 95% Wald intervals;
  * temporal slices: the same proclivity computed inside publication-year
    buckets (<1873; 1873-1923; 1923-1973; 1973-2020).

Place identity for distinct-counting is the place's entity id when the
prediction carries one, otherwise the case-folded surface form. Sampling
is without replacement. Characters with fewer IN predictions than the
sample size are excluded, and a book is skipped whenever either member of
its pair is excluded.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .annotation import SpatialRel
from .util import atomic_write_text, substream

Z_95 = 1.96  # normal quantile for the 95% Wald interval

DEFAULT_SAMPLE_SIZE = 50
DEFAULT_REPEATS = 100
RIVAL_RANKS = range(2, 7)  # the five characters after the protagonist

TEMPORAL_BUCKETS = ("<1873", "1873-1923", "1923-1973", "1973-2020")


class AnalysisError(ValueError):
    pass


class Gender(Enum):
    HE = "HE"
    SHE = "SHE"
    OTHER_UNKNOWN = "OTHER_UNKNOWN"


class PlaceKind(Enum):
    INDOOR = "INDOOR"
    OUTDOOR = "OUTDOOR"


@dataclass(frozen=True, slots=True)
class GroundingPrediction:
    """A model-assigned spatial label for one character/place co-mention."""

    doc_id: str
    character_entity_id: str
    place_mention_id: str
    place_form: str
    label: SpatialRel
    probability: float
    place_entity_id: str | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.label, SpatialRel):
            raise AnalysisError(f"label must be a SpatialRel, got {self.label!r}")


@dataclass(frozen=True, slots=True)
class CharacterProfile:
    doc_id: str
    entity_id: str
    mention_count: int
    gender: Gender

    def __post_init__(self) -> None:
        if self.mention_count < 1:
            raise AnalysisError(
                f"character {self.entity_id!r}: mention_count must be >= 1"
            )


def place_identity(pred: GroundingPrediction) -> str:
    if pred.place_entity_id:
        return pred.place_entity_id
    return pred.place_form.casefold()


def _canonical(preds: Iterable[GroundingPrediction]) -> list[GroundingPrediction]:
    """Fixed ordering so results depend only on content, not input order."""
    return sorted(
        preds,
        key=lambda p: (
            p.doc_id,
            p.character_entity_id,
            p.place_mention_id,
            p.place_form,
            p.label.name,
            p.probability,
        ),
    )


# ---------------------------------------------------------------------------
# Mobility
# ---------------------------------------------------------------------------

def mobility(
    predictions: Sequence[GroundingPrediction],
    sample_size: int = DEFAULT_SAMPLE_SIZE,
    rng: np.random.Generator | None = None,
) -> int:
    """Distinct places among a fixed-size sample of IN predictions.

    Draws sample_size predictions uniformly without replacement and counts
    distinct place identities. Callers must pre-filter to one character's
    IN predictions and ensure there are at least sample_size of them.
    """
    if sample_size < 1:
        raise AnalysisError(f"sample_size must be >= 1, got {sample_size}")
    if len(predictions) < sample_size:
        raise AnalysisError(
            f"need at least {sample_size} IN predictions, got {len(predictions)}"
        )
    if rng is None:
        rng = np.random.default_rng()
    picked = rng.choice(len(predictions), size=sample_size, replace=False)
    return len({place_identity(predictions[i]) for i in picked})


@dataclass(frozen=True)
class MobilityReport:
    mean_relative_difference: float  # (protagonist - rival) / rival, as a fraction
    std_relative_difference: float   # spread over repeats
    repeats: int
    sample_size: int
    books_used: int      # books that entered at least one repeat
    books_skipped: int   # books never eligible
    per_repeat: tuple[float, ...] = field(repr=False, default=())


@dataclass(frozen=True)
class _Book:
    doc_id: str
    protagonist: CharacterProfile
    rivals: tuple[CharacterProfile, ...]  # centrality ranks 2..6


def _rank_characters(
    predictions: Sequence[GroundingPrediction],
    profiles: Sequence[CharacterProfile],
) -> tuple[list[_Book], dict[tuple[str, str], list[GroundingPrediction]]]:
    in_preds: dict[tuple[str, str], list[GroundingPrediction]] = defaultdict(list)
    for pred in _canonical(predictions):
        if pred.label is SpatialRel.IN:
            in_preds[(pred.doc_id, pred.character_entity_id)].append(pred)

    by_doc: dict[str, list[CharacterProfile]] = defaultdict(list)
    for prof in profiles:
        by_doc[prof.doc_id].append(prof)

    books = []
    for doc_id in sorted(by_doc):
        ranked = sorted(by_doc[doc_id], key=lambda p: (-p.mention_count, p.entity_id))
        if len(ranked) < 2:
            continue
        books.append(
            _Book(
                doc_id=doc_id,
                protagonist=ranked[0],
                rivals=tuple(ranked[1 : RIVAL_RANKS.stop - 1]),
            )
        )
    return books, in_preds


def protagonist_mobility_experiment(
    predictions: Sequence[GroundingPrediction],
    profiles: Sequence[CharacterProfile],
    sample_size: int = DEFAULT_SAMPLE_SIZE,
    repeats: int = DEFAULT_REPEATS,
    seed: int = 0,
) -> MobilityReport:
    """Average relative mobility of protagonists against near-central rivals.

    Per repeat and per book: draw one rival uniformly from centrality ranks
    2-6, skip the book if either character lacks sample_size IN predictions,
    otherwise compute both mobilities. Book-averaged protagonist and rival
    mobilities give one relative difference per repeat; the report holds
    their mean and standard deviation over repeats.
    """
    if repeats < 1:
        raise AnalysisError(f"repeats must be >= 1, got {repeats}")
    books, in_preds = _rank_characters(predictions, profiles)
    if not books:
        raise AnalysisError("no book has a protagonist and at least one rival")

    def preds_for(book: _Book, prof: CharacterProfile) -> list[GroundingPrediction]:
        return in_preds.get((book.doc_id, prof.entity_id), [])

    used: set[str] = set()
    diffs = []
    for rep in range(repeats):
        rng = substream(seed, f"mobility:rep{rep}")
        protagonist_counts = []
        rival_counts = []
        for book in books:
            rival = book.rivals[int(rng.integers(len(book.rivals)))]
            p_preds = preds_for(book, book.protagonist)
            r_preds = preds_for(book, rival)
            if len(p_preds) < sample_size or len(r_preds) < sample_size:
                continue
            protagonist_counts.append(mobility(p_preds, sample_size, rng))
            rival_counts.append(mobility(r_preds, sample_size, rng))
            used.add(book.doc_id)
        if not protagonist_counts:
            raise AnalysisError(
                f"repeat {rep}: no eligible book (every pair lacked "
                f"{sample_size} IN predictions)"
            )
        mean_p = float(np.mean(protagonist_counts))
        mean_r = float(np.mean(rival_counts))
        diffs.append((mean_p - mean_r) / mean_r)

    return MobilityReport(
        mean_relative_difference=float(np.mean(diffs)),
        std_relative_difference=float(np.std(diffs)),
        repeats=repeats,
        sample_size=sample_size,
        books_used=len(used),
        books_skipped=len(books) - len(used),
        per_repeat=tuple(diffs),
    )


def gender_stratified_mobility(
    predictions: Sequence[GroundingPrediction],
    profiles: Sequence[CharacterProfile],
    sample_size: int = DEFAULT_SAMPLE_SIZE,
    repeats: int = DEFAULT_REPEATS,
    seed: int = 0,
    genders: Sequence[Gender] = (Gender.HE, Gender.SHE),
) -> dict[Gender, MobilityReport]:
    """The mobility experiment restricted to books by protagonist gender."""
    by_doc: dict[str, list[CharacterProfile]] = defaultdict(list)
    for prof in profiles:
        by_doc[prof.doc_id].append(prof)
    protagonist_gender = {
        doc_id: sorted(profs, key=lambda p: (-p.mention_count, p.entity_id))[0].gender
        for doc_id, profs in by_doc.items()
    }
    out: dict[Gender, MobilityReport] = {}
    for gender in genders:
        doc_ids = {d for d, g in protagonist_gender.items() if g is gender}
        if not doc_ids:
            continue
        out[gender] = protagonist_mobility_experiment(
            [p for p in predictions if p.doc_id in doc_ids],
            [p for p in profiles if p.doc_id in doc_ids],
            sample_size=sample_size,
            repeats=repeats,
            seed=seed,
        )
    return out


# ---------------------------------------------------------------------------
# Indoor proclivity
# ---------------------------------------------------------------------------

def wald_half_width(p: float, n: int, z: float = Z_95) -> float:
    """Half-width of the normal-approximation interval: z * sqrt(p(1-p)/n)."""
    if not (0.0 <= p <= 1.0):
        raise AnalysisError(f"p must lie in [0, 1], got {p}")
    if n < 1:
        raise AnalysisError(f"n must be >= 1, got {n}")
    return z * math.sqrt(p * (1.0 - p) / n)


@dataclass(frozen=True)
class ProclivityStat:
    p_indoor: float
    half_width: float
    n: int


@dataclass(frozen=True)
class ProclivityReport:
    by_gender: dict[Gender, ProclivityStat]
    dropped_no_lexicon: int = 0
    dropped_no_profile: int = 0
    dropped_unknown_gender: int = 0


def indoor_proclivity(
    predictions: Sequence[GroundingPrediction],
    lexicon: Mapping[str, PlaceKind],
    profiles: Sequence[CharacterProfile],
) -> ProclivityReport:
    """P(indoor | gender) over IN predictions whose place the lexicon covers.

    Predictions for places outside the lexicon, for characters without a
    profile, or for characters of unknown gender are dropped (and counted).
    Genders with no observations are absent from the result rather than 0.
    """
    gender_of = {(prof.doc_id, prof.entity_id): prof.gender for prof in profiles}
    indoor: Counter[Gender] = Counter()
    total: Counter[Gender] = Counter()
    no_lex = no_prof = unk = 0
    for pred in predictions:
        if pred.label is not SpatialRel.IN:
            continue
        kind = lexicon.get(pred.place_form.casefold())
        if kind is None:
            no_lex += 1
            continue
        gender = gender_of.get((pred.doc_id, pred.character_entity_id))
        if gender is None:
            no_prof += 1
            continue
        if gender is Gender.OTHER_UNKNOWN:
            unk += 1
            continue
        total[gender] += 1
        if kind is PlaceKind.INDOOR:
            indoor[gender] += 1
    by_gender = {}
    for gender in (Gender.HE, Gender.SHE):
        n = total[gender]
        if n == 0:
            continue
        p = indoor[gender] / n
        by_gender[gender] = ProclivityStat(p_indoor=p, half_width=wald_half_width(p, n), n=n)
    return ProclivityReport(
        by_gender=by_gender,
        dropped_no_lexicon=no_lex,
        dropped_no_profile=no_prof,
        dropped_unknown_gender=unk,
    )


def bucket_for_year(year: int) -> str | None:
    """Publication-year bucket; boundary years fall in the later bucket."""
    if year < 1873:
        return TEMPORAL_BUCKETS[0]
    if year < 1923:
        return TEMPORAL_BUCKETS[1]
    if year < 1973:
        return TEMPORAL_BUCKETS[2]
    if year <= 2020:
        return TEMPORAL_BUCKETS[3]
    return None


@dataclass(frozen=True)
class TemporalProclivityReport:
    by_bucket: dict[str, ProclivityReport]
    skipped_no_year: int
    skipped_out_of_range: int


def temporal_slice_proclivity(
    predictions: Sequence[GroundingPrediction],
    lexicon: Mapping[str, PlaceKind],
    profiles: Sequence[CharacterProfile],
    years: Mapping[str, int | None],
) -> TemporalProclivityReport:
    """Indoor proclivity per publication-year bucket.

    Documents without year metadata (or outside the bucket range) are
    skipped, with counts reported.
    """
    skipped_docs_no_year: set[str] = set()
    skipped_docs_range: set[str] = set()
    per_bucket_preds: dict[str, list[GroundingPrediction]] = defaultdict(list)
    for pred in predictions:
        year = years.get(pred.doc_id)
        if year is None:
            skipped_docs_no_year.add(pred.doc_id)
            continue
        bucket = bucket_for_year(year)
        if bucket is None:
            skipped_docs_range.add(pred.doc_id)
            continue
        per_bucket_preds[bucket].append(pred)
    by_bucket = {
        bucket: indoor_proclivity(per_bucket_preds[bucket], lexicon, profiles)
        for bucket in TEMPORAL_BUCKETS
        if bucket in per_bucket_preds
    }
    return TemporalProclivityReport(
        by_bucket=by_bucket,
        skipped_no_year=len(skipped_docs_no_year),
        skipped_out_of_range=len(skipped_docs_range),
    )


# ---------------------------------------------------------------------------
# Place lexicon
# ---------------------------------------------------------------------------

LEXICON_HEADER = ("place_form", "label")


def build_place_lexicon(
    predictions: Sequence[GroundingPrediction], top_k: int = 500
) -> list[tuple[str, int]]:
    """The top_k most frequent IN-grounded place forms, most frequent first.

    Returned with their counts for inspection; the TSV skeleton written by
    write_lexicon_skeleton leaves the indoor/outdoor column empty for hand
    labeling.
    """
    if top_k < 1:
        raise AnalysisError(f"top_k must be >= 1, got {top_k}")
    counts = Counter(
        pred.place_form.casefold() for pred in predictions if pred.label is SpatialRel.IN
    )
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:top_k]


def write_lexicon_skeleton(ranked: Sequence[tuple[str, int]], path: str | Path) -> None:
    lines = ["\t".join(LEXICON_HEADER)]
    lines += [f"{form}\t" for form, _count in ranked]
    atomic_write_text(path, "\n".join(lines) + "\n")


def parse_lexicon(text: str) -> dict[str, PlaceKind]:
    """Parse a hand-completed lexicon TSV; rows still unlabeled are skipped."""
    lines = text.splitlines()
    if not lines or tuple(lines[0].split("\t")) != LEXICON_HEADER:
        raise AnalysisError(
            f"bad lexicon header: expected {list(LEXICON_HEADER)}, "
            f"got {lines[0].split(chr(9)) if lines else 'nothing'}"
        )
    lexicon: dict[str, PlaceKind] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise AnalysisError(f"line {lineno}: expected 2 columns, got {len(parts)}")
        form, label = parts
        form = form.casefold()
        if label == "":
            continue
        if label not in PlaceKind.__members__:
            raise AnalysisError(
                f"line {lineno}: label must be INDOOR or OUTDOOR, got {label!r}"
            )
        if form in lexicon:
            raise AnalysisError(f"line {lineno}: duplicate place form {form!r}")
        lexicon[form] = PlaceKind[label]
    return lexicon


def load_lexicon(path: str | Path) -> dict[str, PlaceKind]:
    with open(path, encoding="utf-8") as fh:
        return parse_lexicon(fh.read())


# ---------------------------------------------------------------------------
# Prediction / profile files and report rendering
# ---------------------------------------------------------------------------

def prediction_to_json(pred: GroundingPrediction) -> str:
    obj = {
        "doc_id": pred.doc_id,
        "character_entity_id": pred.character_entity_id,
        "place_mention_id": pred.place_mention_id,
        "place_form": pred.place_form,
        "label": pred.label.name,
        "probability": pred.probability,
    }
    if pred.place_entity_id is not None:
        obj["place_entity_id"] = pred.place_entity_id
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def save_predictions(preds: Iterable[GroundingPrediction], path: str | Path) -> None:
    atomic_write_text(path, "".join(prediction_to_json(p) + "\n" for p in preds))


def load_predictions(path: str | Path) -> list[GroundingPrediction]:
    preds = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                preds.append(
                    GroundingPrediction(
                        doc_id=str(obj["doc_id"]),
                        character_entity_id=str(obj["character_entity_id"]),
                        place_mention_id=str(obj["place_mention_id"]),
                        place_form=str(obj["place_form"]),
                        label=SpatialRel[obj["label"]],
                        probability=float(obj["probability"]),
                        place_entity_id=obj.get("place_entity_id"),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise AnalysisError(f"predictions line {lineno}: {exc}") from exc
    return preds


def load_profiles(path: str | Path) -> list[CharacterProfile]:
    profiles = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                profiles.append(
                    CharacterProfile(
                        doc_id=str(obj["doc_id"]),
                        entity_id=str(obj["entity_id"]),
                        mention_count=int(obj["mention_count"]),
                        gender=Gender[obj["gender"]],
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise AnalysisError(f"profiles line {lineno}: {exc}") from exc
    return profiles


def save_profiles(profiles: Iterable[CharacterProfile], path: str | Path) -> None:
    lines = [
        json.dumps(
            {
                "doc_id": p.doc_id,
                "entity_id": p.entity_id,
                "mention_count": p.mention_count,
                "gender": p.gender.name,
            },
            ensure_ascii=False,
            sort_keys=True,
        )
        for p in profiles
    ]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def mobility_report_to_dict(report: MobilityReport) -> dict:
    return {
        "mean_relative_difference": report.mean_relative_difference,
        "std_relative_difference": report.std_relative_difference,
        "repeats": report.repeats,
        "sample_size": report.sample_size,
        "books_used": report.books_used,
        "books_skipped": report.books_skipped,
    }


def proclivity_report_to_dict(report: ProclivityReport) -> dict:
    return {
        "by_gender": {
            gender.name: {
                "p_indoor": stat.p_indoor,
                "half_width": stat.half_width,
                "n": stat.n,
            }
            for gender, stat in report.by_gender.items()
        },
        "dropped_no_lexicon": report.dropped_no_lexicon,
        "dropped_no_profile": report.dropped_no_profile,
        "dropped_unknown_gender": report.dropped_unknown_gender,
    }


def proclivity_csv(reports_by_bucket: Mapping[str, ProclivityReport]) -> str:
    """Plot-ready CSV: bucket, gender, p, ci_low, ci_high."""
    lines = ["bucket,gender,p,ci_low,ci_high"]
    for bucket, report in reports_by_bucket.items():
        for gender, stat in report.by_gender.items():
            lines.append(
                f"{bucket},{gender.name},{stat.p_indoor},"
                f"{stat.p_indoor - stat.half_width},{stat.p_indoor + stat.half_width}"
            )
    return "\n".join(lines) + "\n"
