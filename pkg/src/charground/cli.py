"""Command-line surface for the full pipeline.

Subcommands: extract-pairs, iaa, train, grid, evaluate, predict,
analyze {mobility,indoor,slices}, lexicon-skeleton.

Most subcommands read a declarative INI config (key = value under
[paths]/[train]/[split]/[analysis]/[run]); command-line flags take
precedence over config keys, and built-in defaults apply last. Every
report carries the resolved seed and a hash of the resolved configuration
so runs can be told apart; identical inputs and seed produce byte-identical
outputs. All files are written atomically (temp file + rename), and any
failure is reported as a single JSON line on stderr with a nonzero exit.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, annotation, classifier, corpus, embeddings, evaluation
from .util import atomic_write_text

GRID_WIDTHS = (10, 50, 100)


class CliError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

_DEFAULTS = {
    "paths": {
        "corpus": "",
        "pairs": "",
        "annotations": "",
        "embeddings_10": "",
        "embeddings_50": "",
        "embeddings_100": "",
        "lexicon": "",
        "predictions": "",
        "profiles": "",
        "model_dir": "models",
        "report_dir": "reports",
    },
    "train": {
        "learning_rate": "1e-5",
        "max_epochs": "15",
        "batch_size": "32",
        "context_width": "100",
        "hidden_layers": "0",
        "hidden_width": "256",
        "optimizer": "sgd",
    },
    "split": {"train": "0.7", "dev": "0.1", "test": "0.2"},
    "analysis": {"sample_size": "50", "repeats": "100", "top_k": "500"},
    "run": {"seed": "0"},
}


@dataclass
class RunConfig:
    values: dict[str, dict[str, str]] = field(default_factory=dict)

    @classmethod
    def load(cls, config_path: str | None, overrides: dict[tuple[str, str], str]) -> "RunConfig":
        values = {section: dict(keys) for section, keys in _DEFAULTS.items()}
        if config_path:
            parser = configparser.ConfigParser()
            read = parser.read(config_path)
            if not read:
                raise CliError(f"config file not found: {config_path}")
            for section in parser.sections():
                if section not in values:
                    raise CliError(f"unknown config section [{section}]")
                for key, value in parser.items(section):
                    if key not in values[section]:
                        raise CliError(f"unknown config key {key!r} in [{section}]")
                    values[section][key] = value
        for (section, key), value in overrides.items():
            if value is not None:
                values[section][key] = str(value)
        return cls(values=values)

    def get(self, section: str, key: str) -> str:
        return self.values[section][key]

    def path(self, key: str, required_for: str | None = None) -> Path | None:
        raw = self.values["paths"][key]
        if not raw:
            if required_for:
                raise CliError(f"{required_for} requires paths.{key} (config or flag)")
            return None
        return Path(raw)

    @property
    def seed(self) -> int:
        return int(self.values["run"]["seed"])

    def train_config(self, seed: int | None = None) -> classifier.TrainConfig:
        t = self.values["train"]
        return classifier.TrainConfig(
            learning_rate=float(t["learning_rate"]),
            max_epochs=int(t["max_epochs"]),
            batch_size=int(t["batch_size"]),
            context_width=int(t["context_width"]),
            hidden_layers=int(t["hidden_layers"]),
            hidden_width=int(t["hidden_width"]),
            optimizer=t["optimizer"],
            rng_seed=self.seed if seed is None else seed,
        )

    def split_spec(self) -> classifier.SplitSpec:
        s = self.values["split"]
        return classifier.SplitSpec(
            train=float(s["train"]),
            dev=float(s["dev"]),
            test=float(s["test"]),
            rng_seed=self.seed,
        )

    def config_hash(self) -> str:
        lines = [
            f"{section}.{key}={self.values[section][key]}"
            for section in sorted(self.values)
            for key in sorted(self.values[section])
        ]
        return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:12]

    def stamp(self) -> dict:
        return {"seed": self.seed, "config_hash": self.config_hash()}


def _write_report(cfg: RunConfig, name: str, obj: dict, out_dir: Path | None = None) -> Path:
    report_dir = out_dir or Path(cfg.get("paths", "report_dir"))
    path = report_dir / name
    payload = dict(obj)
    payload.update(cfg.stamp())
    atomic_write_text(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# Dataset assembly from files
# ---------------------------------------------------------------------------

def _load_gold(cfg: RunConfig) -> list[annotation.AnnotationRecord]:
    path = cfg.path("annotations", required_for="this subcommand")
    return annotation.read_annotations_tsv(path)


def _load_pair_records(cfg: RunConfig) -> dict[str, corpus.PairRecord]:
    path = cfg.path("pairs", required_for="this subcommand")
    records = corpus.load_pair_records(path)
    return {rec.pair.pair_id: rec for rec in records}


def _task_vocab(task: str) -> list[str]:
    return [member.name for member in annotation.require_task(task)]


def _build_task_dataset(
    task: str,
    records: list[annotation.AnnotationRecord],
    pair_records: dict[str, corpus.PairRecord],
    table: embeddings.EmbeddingTable,
) -> classifier.Dataset:
    labels_by_pair = annotation.task_label_map(records, task)
    ids, feats, labels = [], [], []
    for pair_id in sorted(labels_by_pair):
        if pair_id not in pair_records:
            raise CliError(f"pair {pair_id!r} is annotated but missing from the pairs file")
        if pair_id not in table:
            raise CliError(f"pair {pair_id!r} has no embedding entry")
        feats.append(embeddings.build_pair_feature(pair_records[pair_id].pair, table))
        ids.append(pair_id)
        labels.append(labels_by_pair[pair_id].name)
    if not ids:
        raise CliError(f"no annotated examples for task {task!r}")
    return classifier.Dataset(pair_ids=ids, x=np.stack(feats), labels=labels)


def _embeddings_path_for_width(cfg: RunConfig, width: int) -> Path:
    key = f"embeddings_{width}"
    if key not in cfg.values["paths"]:
        raise CliError(f"no embeddings path key for context width {width}")
    path = cfg.path(key)
    if path is None:
        raise CliError(f"missing embeddings for context width {width} (set paths.{key})")
    return path


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_extract_pairs(args) -> int:
    docs = corpus.load_corpus(args.corpus)
    grouped = [(doc, corpus.extract_candidate_pairs(doc, max_gap=args.max_gap)) for doc in docs]
    count = corpus.export_pairs(grouped, args.out)
    print(f"pairs: {count}")
    print("invalid_rate: n/a (annotate the pairs to estimate validity)")
    return 0


def cmd_iaa(args) -> int:
    first = annotation.read_annotations_tsv(args.annotations[0])
    second = annotation.read_annotations_tsv(args.annotations[1])
    kappa = annotation.cohen_kappa(first, second, args.task)
    labels, matrix = annotation.confusion_matrix(first, second, args.task)
    n = int(sum(sum(row) for row in matrix))
    if args.json:
        print(json.dumps(
            {"task": args.task, "kappa": kappa, "labels": labels, "matrix": matrix, "n": n},
            sort_keys=True,
        ))
        return 0
    print(f"task: {args.task}   n: {n}")
    print(f"kappa: {kappa:.4f}")
    width = max(len(name) for name in labels) + 2
    print("confusion (rows = first file, cols = second):")
    print(" " * width + "".join(name.rjust(width) for name in labels))
    for name, row in zip(labels, matrix):
        print(name.rjust(width) + "".join(str(v).rjust(width) for v in row))
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    gold = _load_gold(cfg)
    pair_records = _load_pair_records(cfg)
    train_cfg = cfg.train_config()
    table = embeddings.load_embeddings(_embeddings_path_for_width(cfg, train_cfg.context_width))
    dataset = _build_task_dataset(args.task, gold, pair_records, table)
    result = classifier.train(
        dataset, cfg.split_spec(), train_cfg, task=args.task, vocab=_task_vocab(args.task)
    )

    test_ds = dataset.subset(result.split.test)
    preds, _ = classifier.predict_batch(result.model, test_ds.x)
    report = evaluation.per_class_prf(preds, test_ds.labels, result.model.vocab, task=args.task)

    model_dir = Path(args.out_dir) if args.out_dir else Path(cfg.get("paths", "model_dir"))
    model_path = model_dir / f"{args.task}.model.json"
    classifier.save_model(result.model, model_path)
    report_path = _write_report(
        cfg,
        f"train.{args.task}.json",
        {
            "model_path": str(model_path),
            "dev_accuracy_per_epoch": result.dev_accuracy,
            "test": evaluation.report_to_dict(report),
            "n_train": int(len(result.split.train)),
            "n_dev": int(len(result.split.dev)),
            "n_test": int(len(result.split.test)),
        },
        out_dir=Path(args.out_dir) if args.out_dir else None,
    )
    if args.json:
        print(json.dumps({"model": str(model_path), "report": str(report_path),
                          "test_accuracy": report.accuracy}, sort_keys=True))
    else:
        print(f"model: {model_path}")
        print(f"report: {report_path}")
        print(f"test accuracy: {report.accuracy:.4f}")
    return 0


def cmd_grid(args, cfg: RunConfig) -> int:
    gold = _load_gold(cfg)
    pair_records = _load_pair_records(cfg)
    datasets = {}
    for width in GRID_WIDTHS:
        table = embeddings.load_embeddings(_embeddings_path_for_width(cfg, width))
        datasets[width] = _build_task_dataset(args.task, gold, pair_records, table)
    result = classifier.grid_search(
        datasets,
        cfg.split_spec(),
        cfg.train_config(),
        task=args.task,
        vocab=_task_vocab(args.task),
    )
    model_dir = Path(args.out_dir) if args.out_dir else Path(cfg.get("paths", "model_dir"))
    model_path = model_dir / f"{args.task}.model.json"
    classifier.save_model(result.model, model_path)
    best = result.best_config
    report_path = _write_report(
        cfg,
        f"grid.{args.task}.json",
        {
            "model_path": str(model_path),
            "best": {
                "context_width": best.context_width,
                "hidden_layers": best.hidden_layers,
                "epochs": best.max_epochs,
            },
            "points": [
                {
                    "context_width": p.context_width,
                    "hidden_layers": p.hidden_layers,
                    "epochs": p.epochs,
                    "dev_accuracy": p.dev_accuracy,
                }
                for p in result.points
            ],
        },
        out_dir=Path(args.out_dir) if args.out_dir else None,
    )
    if args.json:
        print(json.dumps({"model": str(model_path), "report": str(report_path),
                          "best_width": best.context_width,
                          "best_hidden_layers": best.hidden_layers,
                          "best_epochs": best.max_epochs}, sort_keys=True))
    else:
        print(f"model: {model_path}")
        print(f"best: width={best.context_width} hidden_layers={best.hidden_layers} "
              f"epochs={best.max_epochs}")
        print(f"report: {report_path}")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    model = classifier.load_model(args.model)
    gold = _load_gold(cfg)
    pair_records = _load_pair_records(cfg)
    table = embeddings.load_embeddings(
        _embeddings_path_for_width(cfg, model.config.context_width)
    )
    dataset = _build_task_dataset(model.task, gold, pair_records, table)
    if args.split == "test":
        parts = classifier.split_indices(len(dataset), cfg.split_spec())
        dataset = dataset.subset(parts.test)
    preds, _ = classifier.predict_batch(model, dataset.x)
    report = evaluation.per_class_prf(preds, dataset.labels, model.vocab, task=model.task)
    report_path = _write_report(
        cfg,
        f"eval.{model.task}.json",
        {"split": args.split, **evaluation.report_to_dict(report)},
        out_dir=Path(args.out_dir) if args.out_dir else None,
    )
    if args.json:
        print(json.dumps({"accuracy": report.accuracy, "n": report.n_examples,
                          "report": str(report_path)}, sort_keys=True))
    else:
        print(evaluation.format_report(report), end="")
        print(f"report: {report_path}")
    return 0


def cmd_predict(args) -> int:
    model = classifier.load_model(args.model)
    if model.task != annotation.TASK_SPATIAL:
        raise CliError(
            f"predict emits grounding predictions and needs a spatial model; "
            f"this model's task is {model.task!r}"
        )
    pair_records = corpus.load_pair_records(args.pairs)
    table = embeddings.load_embeddings(args.embeddings)
    preds = []
    for rec in sorted(pair_records, key=lambda r: r.pair.pair_id):
        if rec.pair.pair_id not in table:
            raise CliError(f"pair {rec.pair.pair_id!r} has no embedding entry")
        feature = embeddings.build_pair_feature(rec.pair, table)
        label, probs = classifier.predict(model, feature)
        character = rec.pair.character
        place = rec.pair.place
        preds.append(
            analysis.GroundingPrediction(
                doc_id=rec.pair.doc_id,
                character_entity_id=character.entity_id or character.mention_id,
                place_mention_id=place.mention_id,
                place_form=rec.place_text.casefold(),
                label=annotation.SpatialRel[label],
                probability=float(np.max(probs)),
                place_entity_id=place.entity_id,
            )
        )
    analysis.save_predictions(preds, args.out)
    print(f"predictions: {len(preds)}")
    return 0


def cmd_analyze(args, cfg: RunConfig) -> int:
    preds = analysis.load_predictions(cfg.path("predictions", required_for="analyze"))
    profiles = analysis.load_profiles(cfg.path("profiles", required_for="analyze"))
    sample_size = int(cfg.get("analysis", "sample_size"))
    repeats = int(cfg.get("analysis", "repeats"))
    out_dir = Path(args.out_dir) if args.out_dir else None
    report_dir = out_dir or Path(cfg.get("paths", "report_dir"))

    if args.what == "mobility":
        overall = analysis.protagonist_mobility_experiment(
            preds, profiles, sample_size=sample_size, repeats=repeats, seed=cfg.seed
        )
        by_gender = analysis.gender_stratified_mobility(
            preds, profiles, sample_size=sample_size, repeats=repeats, seed=cfg.seed
        )
        obj = {
            "overall": analysis.mobility_report_to_dict(overall),
            "by_protagonist_gender": {
                g.name: analysis.mobility_report_to_dict(r) for g, r in by_gender.items()
            },
        }
        report_path = _write_report(cfg, "mobility.json", obj, out_dir=out_dir)
        csv_lines = ["group,mean_relative_difference,std,books_used"]
        csv_lines.append(
            f"all,{overall.mean_relative_difference},{overall.std_relative_difference},"
            f"{overall.books_used}"
        )
        for g, r in by_gender.items():
            csv_lines.append(
                f"{g.name},{r.mean_relative_difference},{r.std_relative_difference},"
                f"{r.books_used}"
            )
        atomic_write_text(report_dir / "mobility.csv", "\n".join(csv_lines) + "\n")
        summary = {"report": str(report_path),
                   "mean_relative_difference": overall.mean_relative_difference}
    else:
        lexicon = analysis.load_lexicon(cfg.path("lexicon", required_for="analyze"))
        if args.what == "indoor":
            report = analysis.indoor_proclivity(preds, lexicon, profiles)
            obj = analysis.proclivity_report_to_dict(report)
            report_path = _write_report(cfg, "indoor.json", obj, out_dir=out_dir)
            atomic_write_text(
                report_dir / "indoor.csv", analysis.proclivity_csv({"all": report})
            )
            summary = {"report": str(report_path)}
        else:  # slices
            docs = corpus.load_corpus(cfg.path("corpus", required_for="analyze slices"))
            years = {doc.doc_id: doc.year for doc in docs}
            sliced = analysis.temporal_slice_proclivity(preds, lexicon, profiles, years)
            obj = {
                "by_bucket": {
                    bucket: analysis.proclivity_report_to_dict(rep)
                    for bucket, rep in sliced.by_bucket.items()
                },
                "skipped_no_year": sliced.skipped_no_year,
                "skipped_out_of_range": sliced.skipped_out_of_range,
            }
            report_path = _write_report(cfg, "slices.json", obj, out_dir=out_dir)
            atomic_write_text(
                report_dir / "slices.csv", analysis.proclivity_csv(sliced.by_bucket)
            )
            summary = {"report": str(report_path)}

    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        for key, value in summary.items():
            print(f"{key}: {value}")
    return 0


def cmd_lexicon_skeleton(args) -> int:
    preds = analysis.load_predictions(args.predictions)
    ranked = analysis.build_place_lexicon(preds, top_k=args.k)
    analysis.write_lexicon_skeleton(ranked, args.out)
    print(f"places: {len(ranked)}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(sub, config: bool = True) -> None:
    if config:
        sub.add_argument("--config", help="INI run configuration")
    sub.add_argument("--seed", type=int, default=None, help="global seed (overrides config)")
    sub.add_argument("--out-dir", default=None, help="directory for reports/models")
    sub.add_argument("--json", action="store_true", help="machine-readable summary on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="charground",
        description="Ground characters to places in narrative text.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("extract-pairs", help="extract candidate pairs from a corpus")
    p.add_argument("--corpus", required=True, help="corpus JSONL")
    p.add_argument("--out", required=True, help="pairs JSONL to write")
    p.add_argument("--max-gap", type=int, default=corpus.DEFAULT_MAX_GAP)
    p.set_defaults(handler=lambda a: cmd_extract_pairs(a), needs_config=False)

    p = commands.add_parser("iaa", help="inter-annotator agreement between two TSV files")
    p.add_argument("--annotations", nargs=2, required=True, metavar=("A", "B"))
    p.add_argument("--task", required=True, choices=sorted(annotation.TASKS))
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=lambda a: cmd_iaa(a), needs_config=False)

    p = commands.add_parser("train", help="train one task head")
    p.add_argument("--task", required=True, choices=sorted(annotation.TASKS))
    _add_common(p)
    p.set_defaults(handler=cmd_train, needs_config=True)

    p = commands.add_parser("grid", help="hyperparameter grid search for one task")
    p.add_argument("--task", required=True, choices=sorted(annotation.TASKS))
    _add_common(p)
    p.set_defaults(handler=cmd_grid, needs_config=True)

    p = commands.add_parser("evaluate", help="evaluate a saved model")
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--split", choices=("all", "test"), default="all",
                   help="evaluate on everything or only the held-out test partition")
    _add_common(p)
    p.set_defaults(handler=cmd_evaluate, needs_config=True)

    p = commands.add_parser("predict", help="emit grounding predictions for pairs")
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=lambda a: cmd_predict(a), needs_config=False)

    p = commands.add_parser("analyze", help="corpus-scale analyses over predictions")
    p.add_argument("what", choices=("mobility", "indoor", "slices"))
    _add_common(p)
    p.set_defaults(handler=cmd_analyze, needs_config=True)

    p = commands.add_parser("lexicon-skeleton", help="emit top-k places for hand labeling")
    p.add_argument("--predictions", required=True)
    p.add_argument("--k", type=int, default=500)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=lambda a: cmd_lexicon_skeleton(a), needs_config=False)

    return parser


_EXPECTED_ERRORS = (
    CliError,
    corpus.CorpusError,
    annotation.AnnotationError,
    embeddings.EmbeddingError,
    classifier.ClassifierError,
    evaluation.EvaluationError,
    analysis.AnalysisError,
    OSError,
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "needs_config", False):
            overrides: dict[tuple[str, str], str] = {}
            if getattr(args, "seed", None) is not None:
                overrides[("run", "seed")] = str(args.seed)
            cfg = RunConfig.load(getattr(args, "config", None), overrides)
            return args.handler(args, cfg)
        return args.handler(args)
    except _EXPECTED_ERRORS as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
