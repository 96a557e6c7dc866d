"""Metrics, the majority-class baseline, and learning curves."""

from __future__ import annotations

import io
import json
from collections import Counter
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .annotation import TASKS, SpatialRel
from .classifier import (
    Dataset,
    SplitSpec,
    TrainConfig,
    fit,
    forward,
    split_indices,
    _encode_labels,
)
from .util import substream


class EvaluationError(ValueError):
    pass


def _as_name(label) -> str:
    return label.name if hasattr(label, "name") else str(label)


def accuracy(preds: Sequence, golds: Sequence) -> float:
    """Fraction of positions where prediction and gold are exactly equal."""
    if len(preds) != len(golds):
        raise EvaluationError(f"length mismatch: {len(preds)} predictions, {len(golds)} golds")
    if not golds:
        raise EvaluationError("cannot score an empty evaluation set")
    hits = sum(1 for p, g in zip(preds, golds) if _as_name(p) == _as_name(g))
    return hits / len(golds)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: bool = False  # some denominator was zero and was reported as 0


@dataclass(frozen=True)
class EvalReport:
    task: str
    accuracy: float
    per_class: dict[str, ClassMetrics]
    n_examples: int


def per_class_prf(
    preds: Sequence, golds: Sequence, vocabulary: Sequence[str], task: str = "model"
) -> EvalReport:
    """Precision/recall/F1 per class over an aligned prediction/gold list.

    Zero-denominator cases (no predictions or no gold examples of a class)
    are reported as 0 with the degenerate flag set, support included.
    """
    if len(preds) != len(golds):
        raise EvaluationError(f"length mismatch: {len(preds)} predictions, {len(golds)} golds")
    vocab = [_as_name(v) for v in vocabulary]
    known = set(vocab)
    pred_names = [_as_name(p) for p in preds]
    gold_names = [_as_name(g) for g in golds]
    for name in pred_names + gold_names:
        if name not in known:
            raise EvaluationError(f"label {name!r} outside vocabulary {vocab}")

    per_class: dict[str, ClassMetrics] = {}
    for label in vocab:
        tp = sum(1 for p, g in zip(pred_names, gold_names) if p == label and g == label)
        fp = sum(1 for p, g in zip(pred_names, gold_names) if p == label and g != label)
        fn = sum(1 for p, g in zip(pred_names, gold_names) if p != label and g == label)
        degenerate = (tp + fp == 0) or (tp + fn == 0)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[label] = ClassMetrics(
            precision=precision,
            recall=recall,
            f1=f1,
            support=tp + fn,
            degenerate=degenerate,
        )
    return EvalReport(
        task=task,
        accuracy=accuracy(pred_names, gold_names),
        per_class=per_class,
        n_examples=len(gold_names),
    )


# ---------------------------------------------------------------------------
# Majority baseline
# ---------------------------------------------------------------------------

# Spatial labels from most to least frequent in typical gold data; used only
# to break frequency ties deterministically.
_SPATIAL_TIE_ORDER = (
    SpatialRel.IN.name,
    SpatialRel.NO_REL.name,
    SpatialRel.NEAR.name,
    SpatialRel.TO.name,
    SpatialRel.FROM.name,
    SpatialRel.THRU.name,
)
_ENUM_ORDER: dict[str, int] = {}
for _enum in TASKS.values():
    for _pos, _member in enumerate(_enum):
        _ENUM_ORDER.setdefault(_member.name, _pos)


def _tie_rank(name: str) -> tuple:
    spatial = (
        _SPATIAL_TIE_ORDER.index(name) if name in _SPATIAL_TIE_ORDER else len(_SPATIAL_TIE_ORDER)
    )
    return (spatial, _ENUM_ORDER.get(name, len(_ENUM_ORDER)), name)


@dataclass(frozen=True)
class MajorityBaseline:
    """Constant predictor emitting the training set's most common label."""

    label: str

    def __call__(self, _x=None) -> str:
        return self.label

    def predict_many(self, n: int) -> list[str]:
        return [self.label] * n


def majority_baseline(train_golds: Sequence) -> MajorityBaseline:
    if not train_golds:
        raise EvaluationError("cannot build a majority baseline from no gold labels")
    counts = Counter(_as_name(g) for g in train_golds)
    top_count = max(counts.values())
    best = min((name for name, c in counts.items() if c == top_count), key=_tie_rank)
    return MajorityBaseline(label=best)


# ---------------------------------------------------------------------------
# Learning curve
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CurvePoint:
    fraction: float
    n_train: int
    mean_accuracy: float
    std_accuracy: float
    accuracies: tuple[float, ...]


DEFAULT_CURVE_FRACTIONS = (0.1, 0.25, 0.5, 0.75, 1.0)


def learning_curve(
    dataset: Dataset,
    split: SplitSpec,
    config: TrainConfig,
    fractions: Sequence[float] = DEFAULT_CURVE_FRACTIONS,
    repeats: int = 3,
    seed: int = 0,
    vocab: Sequence[str] | None = None,
) -> list[CurvePoint]:
    """Test accuracy as a function of how much of the training split is used.

    For each fraction, the training split is subsampled (seeded, without
    replacement), a model is fit with the given config, and accuracy is
    measured on the fixed test split. The trend is reported, not asserted.
    """
    if repeats < 1:
        raise EvaluationError(f"repeats must be >= 1, got {repeats}")
    parts = split_indices(len(dataset), split)
    if len(parts.test) == 0:
        raise EvaluationError("test split is empty; nothing to evaluate against")
    vocab_fixed, _ = _encode_labels(dataset.labels, vocab)
    train_ds = dataset.subset(parts.train)
    test_ds = dataset.subset(parts.test)
    _, y_test = _encode_labels(test_ds.labels, vocab_fixed)

    points: list[CurvePoint] = []
    for fraction in fractions:
        if not (0 < fraction <= 1):
            raise EvaluationError(f"fractions must lie in (0, 1], got {fraction}")
        size = max(1, int(np.floor(fraction * len(train_ds) + 0.5)))
        accs = []
        for rep in range(repeats):
            rng = substream(seed, f"curve:{fraction}:{rep}")
            picked = rng.choice(len(train_ds), size=size, replace=False)
            sub = train_ds.subset(np.sort(picked))
            _, y_sub = _encode_labels(sub.labels, vocab_fixed)
            params = fit(sub.x, y_sub, config, len(vocab_fixed))
            picks = np.atleast_2d(forward(params, test_ds.x)).argmax(axis=1)
            accs.append(float((picks == y_test).mean()))
        points.append(
            CurvePoint(
                fraction=float(fraction),
                n_train=size,
                mean_accuracy=float(np.mean(accs)),
                std_accuracy=float(np.std(accs)),
                accuracies=tuple(accs),
            )
        )
    return points


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

def report_to_dict(report: EvalReport) -> dict:
    return {
        "task": report.task,
        "n_examples": report.n_examples,
        "accuracy": report.accuracy,
        "per_class": {
            label: {
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "support": m.support,
                "degenerate": m.degenerate,
            }
            for label, m in report.per_class.items()
        },
    }


def format_report(report: EvalReport) -> str:
    """Aligned-column text table of the per-class metrics."""
    rows = [("class", "precision", "recall", "f1", "support")]
    for label, m in report.per_class.items():
        rows.append(
            (label, f"{m.precision:.3f}", f"{m.recall:.3f}", f"{m.f1:.3f}", str(m.support))
        )
    widths = [max(len(row[i]) for row in rows) for i in range(5)]
    out = io.StringIO()
    out.write(f"task: {report.task}   n: {report.n_examples}   accuracy: {report.accuracy:.4f}\n")
    for row in rows:
        out.write("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() + "\n")
    return out.getvalue()


def curve_to_csv(points: Iterable[CurvePoint]) -> str:
    lines = ["fraction,mean_acc,std"]
    for p in points:
        lines.append(f"{p.fraction},{p.mean_accuracy},{p.std_accuracy}")
    return "\n".join(lines) + "\n"


def report_to_json(report: EvalReport, extra: Mapping | None = None) -> str:
    obj = report_to_dict(report)
    if extra:
        obj.update(extra)
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"
