"""Four-task label schema, annotation records, agreement, and adjudication.

The labeling of a candidate pair is staged: a validity filter first discards
pairs whose character or place cannot be grounded (generic mentions, tagger
errors); valid pairs then receive a spatial relation, and optionally a
temporal span (punctual vs habitual) and a narrative tense (ongoing vs
already happened). Temporal and tense labels presuppose a relation, so they
are recorded only on VALID pairs.

Agreement between two annotators is measured with Cohen's kappa; gold data
is produced by adjudication, where the adjudicator's record wins any
disagreement.
"""

from __future__ import annotations

import csv
import io
from collections import Counter, defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .util import atomic_write_text


class Validity(Enum):
    VALID = "VALID"
    INVALID = "INVALID"


class SpatialRel(Enum):
    IN = "IN"
    NEAR = "NEAR"
    THRU = "THRU"
    TO = "TO"
    FROM = "FROM"
    NO_REL = "NO_REL"


class TemporalSpan(Enum):
    PUNCTUAL = "PUNCTUAL"
    HABITUAL = "HABITUAL"


class NarrativeTense(Enum):
    ONGOING = "ONGOING"
    ALREADY_HAPPENED = "ALREADY_HAPPENED"


TASK_VALIDITY = "validity"
TASK_SPATIAL = "spatial"
TASK_TEMPORAL = "temporal"
TASK_TENSE = "tense"

TASKS: dict[str, type[Enum]] = {
    TASK_VALIDITY: Validity,
    TASK_SPATIAL: SpatialRel,
    TASK_TEMPORAL: TemporalSpan,
    TASK_TENSE: NarrativeTense,
}


class AnnotationError(ValueError):
    """Invalid annotation record, task id, or agreement input."""


class AdjudicationError(AnnotationError):
    """Disagreements left unresolved by the adjudicator."""

    def __init__(self, unresolved: Sequence[str]):
        self.unresolved = list(unresolved)
        listed = ", ".join(self.unresolved)
        super().__init__(f"unresolved disagreement for pair_ids: {listed}")


@dataclass(frozen=True, slots=True)
class AnnotationRecord:
    """One annotator's labels for one candidate pair.

    INVALID records carry no further labels; VALID records must carry a
    spatial label and may carry temporal/tense labels.
    """

    pair_id: str
    annotator_id: str
    validity: Validity
    spatial: SpatialRel | None = None
    temporal: TemporalSpan | None = None
    tense: NarrativeTense | None = None
    note: str | None = None

    def __post_init__(self) -> None:
        if self.validity is Validity.INVALID:
            if self.spatial is not None or self.temporal is not None or self.tense is not None:
                raise AnnotationError(
                    f"pair {self.pair_id!r}: INVALID records must not carry "
                    "spatial/temporal/tense labels"
                )
        elif self.spatial is None:
            raise AnnotationError(
                f"pair {self.pair_id!r}: VALID records require a spatial label"
            )

    def label_for(self, task: str) -> Enum | None:
        if task == TASK_VALIDITY:
            return self.validity
        if task == TASK_SPATIAL:
            return self.spatial
        if task == TASK_TEMPORAL:
            return self.temporal
        if task == TASK_TENSE:
            return self.tense
        raise AnnotationError(f"unknown task {task!r}; expected one of {sorted(TASKS)}")

    def labels_key(self) -> tuple:
        """The four labels as a tuple, for unanimity comparison."""
        return (self.validity, self.spatial, self.temporal, self.tense)


def require_task(task: str) -> type[Enum]:
    if task not in TASKS:
        raise AnnotationError(f"unknown task {task!r}; expected one of {sorted(TASKS)}")
    return TASKS[task]


def task_label_map(records: Iterable[AnnotationRecord], task: str) -> dict[str, Enum]:
    """pair_id -> label for the given task, keeping only records that have one.

    For the validity task every record applies; for the other tasks only
    records whose label is present (necessarily VALID ones) apply.
    """
    require_task(task)
    out: dict[str, Enum] = {}
    for rec in records:
        label = rec.label_for(task)
        if label is not None:
            out[rec.pair_id] = label
    return out


def _aligned_labels(
    a: Iterable[AnnotationRecord], b: Iterable[AnnotationRecord], task: str
) -> tuple[list[Enum], list[Enum]]:
    # Non-validity tasks are only defined where both annotators said VALID;
    # restricting to pairs where both labels are present enforces exactly that.
    map_a = task_label_map(a, task)
    map_b = task_label_map(b, task)
    shared = sorted(set(map_a) & set(map_b))
    if not shared:
        raise AnnotationError(
            f"no shared pair_ids with labels for task {task!r}; cannot compute agreement"
        )
    return [map_a[p] for p in shared], [map_b[p] for p in shared]


def kappa_from_labels(labels_a: Sequence[Enum], labels_b: Sequence[Enum]) -> float:
    """Cohen's kappa, (p_o - p_e) / (1 - p_e), with p_e from the two marginals.

    Counts are kept in integers so p_e == 1 is detected exactly: that happens
    only when both annotators are constant on the same label, in which case
    kappa is defined as 1.0 (p_o is necessarily 1 there too).
    """
    if len(labels_a) != len(labels_b):
        raise AnnotationError("label sequences differ in length")
    n = len(labels_a)
    if n == 0:
        raise AnnotationError("empty label sequences")
    agree = sum(1 for x, y in zip(labels_a, labels_b) if x == y)
    count_a = Counter(labels_a)
    count_b = Counter(labels_b)
    # p_e * n^2 and p_o * n as exact integers
    expected_num = sum(count_a[label] * count_b.get(label, 0) for label in count_a)
    if expected_num == n * n:
        if agree == n:
            return 1.0
        raise AnnotationError(
            "chance agreement is 1 (both annotators constant on the same label) "
            "but observed agreement is not; kappa undefined"
        )
    p_o = agree / n
    p_e = expected_num / (n * n)
    return (p_o - p_e) / (1.0 - p_e)


def cohen_kappa(
    a: Iterable[AnnotationRecord], b: Iterable[AnnotationRecord], task: str
) -> float:
    """Agreement between two annotators on one task, over shared pair_ids."""
    labels_a, labels_b = _aligned_labels(a, b, task)
    return kappa_from_labels(labels_a, labels_b)


def confusion_matrix(
    a: Iterable[AnnotationRecord], b: Iterable[AnnotationRecord], task: str
) -> tuple[list[str], list[list[int]]]:
    """Label names (enum order) and counts[row a][col b] over shared pairs."""
    enum_cls = require_task(task)
    labels_a, labels_b = _aligned_labels(a, b, task)
    names = [member.name for member in enum_cls]
    index = {member: i for i, member in enumerate(enum_cls)}
    matrix = [[0] * len(names) for _ in names]
    for x, y in zip(labels_a, labels_b):
        matrix[index[x]][index[y]] += 1
    return names, matrix


def label_distribution(records: Iterable[AnnotationRecord], task: str) -> dict[Enum, int]:
    """Counts per label among records that carry the task's label.

    Returned in enum declaration order; labels with zero count are omitted,
    so an empty record list yields an empty map.
    """
    enum_cls = require_task(task)
    counts = Counter(task_label_map(records, task).values())
    return {member: counts[member] for member in enum_cls if counts[member] > 0}


def adjudicate(
    records: Iterable[AnnotationRecord], adjudicator_id: str
) -> list[AnnotationRecord]:
    """Collapse multiple annotators' records into one gold record per pair.

    A unanimous label set is kept as-is; any disagreement requires a record
    by the adjudicator, whose labels win. The output carries the adjudicator
    as annotator, one record per pair_id, sorted by pair_id.
    """
    grouped: dict[str, list[AnnotationRecord]] = defaultdict(list)
    for rec in records:
        grouped[rec.pair_id].append(rec)
    gold: list[AnnotationRecord] = []
    unresolved: list[str] = []
    for pair_id in sorted(grouped):
        group = grouped[pair_id]
        keys = {rec.labels_key() for rec in group}
        if len(keys) == 1:
            chosen = group[0]
        else:
            by_adjudicator = [r for r in group if r.annotator_id == adjudicator_id]
            if not by_adjudicator:
                unresolved.append(pair_id)
                continue
            chosen = by_adjudicator[0]
        gold.append(
            AnnotationRecord(
                pair_id=pair_id,
                annotator_id=adjudicator_id,
                validity=chosen.validity,
                spatial=chosen.spatial,
                temporal=chosen.temporal,
                tense=chosen.tense,
                note=chosen.note,
            )
        )
    if unresolved:
        raise AdjudicationError(unresolved)
    return gold


# ---------------------------------------------------------------------------
# TSV interchange. Header and label tokens are fixed; absent labels are
# empty strings. Round-tripping is lossless (an absent note and an empty
# note are the same thing).
# ---------------------------------------------------------------------------

TSV_HEADER = ("pair_id", "annotator_id", "validity", "spatial", "temporal", "tense", "note")


def _enum_from_token(enum_cls: type[Enum], token: str, line: int, field: str):
    if token == "":
        return None
    try:
        return enum_cls[token]
    except KeyError:
        raise AnnotationError(
            f"line {line}: field {field!r}: unknown label {token!r} "
            f"(expected one of {[m.name for m in enum_cls]})"
        ) from None


def records_to_tsv(records: Iterable[AnnotationRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_NONE)
    writer.writerow(TSV_HEADER)
    for rec in records:
        writer.writerow(
            [
                rec.pair_id,
                rec.annotator_id,
                rec.validity.name,
                rec.spatial.name if rec.spatial else "",
                rec.temporal.name if rec.temporal else "",
                rec.tense.name if rec.tense else "",
                rec.note or "",
            ]
        )
    return buf.getvalue()


def write_annotations_tsv(records: Iterable[AnnotationRecord], path: str | Path) -> None:
    atomic_write_text(path, records_to_tsv(records))


def records_from_tsv(text: str) -> list[AnnotationRecord]:
    reader = csv.reader(io.StringIO(text), delimiter="\t", quoting=csv.QUOTE_NONE)
    rows = list(reader)
    if not rows or tuple(rows[0]) != TSV_HEADER:
        raise AnnotationError(
            f"bad TSV header: expected {list(TSV_HEADER)}, got {rows[0] if rows else 'nothing'}"
        )
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(TSV_HEADER):
            raise AnnotationError(
                f"line {lineno}: expected {len(TSV_HEADER)} columns, got {len(row)}"
            )
        pair_id, annotator_id, validity, spatial, temporal, tense, note = row
        if validity == "":
            raise AnnotationError(f"line {lineno}: field 'validity': must not be empty")
        records.append(
            AnnotationRecord(
                pair_id=pair_id,
                annotator_id=annotator_id,
                validity=_enum_from_token(Validity, validity, lineno, "validity"),
                spatial=_enum_from_token(SpatialRel, spatial, lineno, "spatial"),
                temporal=_enum_from_token(TemporalSpan, temporal, lineno, "temporal"),
                tense=_enum_from_token(NarrativeTense, tense, lineno, "tense"),
                note=note or None,
            )
        )
    return records


def read_annotations_tsv(path: str | Path) -> list[AnnotationRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        return records_from_tsv(fh.read())
