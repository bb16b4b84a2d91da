"""Command-line entry point: ``semreader <subcommand> [--config PATH] [--set K=V ...] [--seed N] [--out DIR]``.

Every subcommand reads a JSON run config (defaults below, overridable per
key), writes its artifacts atomically under ``--out`` and records a run
manifest in ``<out>/manifests/<subcommand>.json``.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .data import FixtureConfig, dataset_stats, featurize, gen_fixture, load_squad_v2, save_squad_v2
from .encoder import EncoderConfig
from .errors import ConfigurationError
from .io_utils import atomic_write_text, dump_json, file_sha256
from .metrics import evaluate_predictions, paired_t_test
from .reader import (
    ReaderTrainConfig,
    VerifierParams,
    load_reader,
    predict,
    predictions_dict,
    save_reader,
    score_features,
    train_module,
    tune_verifier,
)
from .sembert import SemanticConfig
from .srl import (
    LabelInventory,
    SrlConfig,
    annotate_mrc_dataset,
    gen_srl_fixture,
    load_annotations,
    load_srl_jsonl,
    load_tagger,
    save_tagger,
    train_srl_kfold,
    write_annotations,
    write_srl_jsonl,
)
from .tokenizer import Vocabulary, build_vocab

log = logging.getLogger("semreader")

DEFAULT_CONFIG = {
    "seed": 0,
    "paths": {
        "train": "train.json",
        "dev": "dev.json",
        "test": "test.json",
        "srl": "srl.jsonl",
        "vocab": "vocab.txt",
        "annotations": "annotations.jsonl",
        "srl_report": "srl_report.json",
        "srl_taggers": "srl",
        "sketchy": "sketchy.ckpt",
        "intensive": "intensive.ckpt",
        "verifier": "verifier.json",
        "predictions": "predictions.json",
        "report": "report.json",
        "scores_a": "scores_a.json",
        "scores_b": "scores_b.json",
        "significance": "significance.json",
    },
    "tokenizer": {"min_frequency": 1, "max_size": 30000},
    "fixture": {
        "train_size": 64, "dev_size": 32, "test_size": 32, "unanswerable_fraction": 0.5,
        "vocab_size": 60, "context_min": 6, "context_max": 10, "signal": "lexical", "srl_sentences": 40,
    },
    "encoder": {"layer_count": 2, "head_count": 2, "model_dim": 32, "feed_forward_dim": 64,
                "max_position": 512, "dropout": 0.0},
    "semantic": SemanticConfig().to_dict(),
    "srl": {k: v for k, v in SrlConfig().__dict__.items() if k != "seed"},
    "sketchy": {k: v for k, v in ReaderTrainConfig.sketchy().__dict__.items() if k not in ("kind", "seed")},
    "intensive": {k: v for k, v in ReaderTrainConfig.intensive().__dict__.items() if k not in ("kind", "seed")},
    "verifier": {"beta_grid": None, "delta_grid": None},
    "predict": {"batch_size": 64},
}


# config handling

def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config, assignment):
    """Set a dotted key (``sketchy.learning_rate=1e-3``); the key must already exist."""
    if "=" not in assignment:
        raise ConfigurationError(f"--set expects KEY=VALUE, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = config
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigurationError(f"unknown config key {key!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigurationError(f"unknown config key {key!r}")
    node[parts[-1]] = _parse_value(raw)


def _merge(base, update, prefix=""):
    for key, value in update.items():
        if key not in base:
            raise ConfigurationError(f"unknown config key {prefix + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value, prefix + key + ".")
        else:
            base[key] = value


def load_config(path=None, overrides=(), seed=None):
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigurationError(f"{path}: config must be a JSON object")
        _merge(config, user)
    for assignment in overrides:
        apply_override(config, assignment)
    if seed is not None:
        config["seed"] = seed
    if not isinstance(config["seed"], int):
        raise ConfigurationError(f"seed must be an integer, got {config['seed']!r}")
    return config


def config_hash(config):
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()


class Run:
    """Resolved paths plus manifest bookkeeping for one subcommand."""

    def __init__(self, command, config, out):
        self.command = command
        self.config = config
        self.out = Path(out)
        self.inputs = {}
        self.outputs = []

    def path(self, name):
        p = Path(self.config["paths"][name])
        return p if p.is_absolute() else self.out / p

    def input(self, name):
        p = self.path(name)
        if not p.exists():
            raise FileNotFoundError(f"{name} input not found: {p}")
        self.inputs[name] = p
        return p

    def output(self, name):
        p = self.path(name)
        self.outputs.append(p)
        return p

    def write_manifest(self):
        def rel(p):
            try:
                return str(p.relative_to(self.out))
            except ValueError:
                return str(p)

        def digest(p):
            if p.is_dir():
                return {rel(q): file_sha256(q) for q in sorted(p.iterdir()) if q.is_file()}
            return file_sha256(p)

        manifest = {
            "command": self.command,
            "version": __version__,
            "seed": self.config["seed"],
            "config_sha256": config_hash(self.config),
            "config": self.config,
            "inputs": {name: {"path": rel(p), "sha256": digest(p)} for name, p in sorted(self.inputs.items())},
            "outputs": {rel(p): digest(p) for p in self.outputs if p.exists()},
        }
        dump_json(self.out / "manifests" / f"{self.command}.json", manifest)


def _encoder_config(config, vocab):
    return EncoderConfig(vocab_size=len(vocab), **config["encoder"])


def _train_config(config, kind):
    factory = ReaderTrainConfig.sketchy if kind == "sketchy" else ReaderTrainConfig.intensive
    return factory(seed=config["seed"], **config[kind])


def _load_dataset(run, name):
    return load_squad_v2(run.input(name))


# subcommands

def cmd_gen_fixtures(run):
    cfg, seed = run.config["fixture"], run.config["seed"]
    common = dict(unanswerable_fraction=cfg["unanswerable_fraction"], vocab_size=cfg["vocab_size"],
                  context_min=cfg["context_min"], context_max=cfg["context_max"], signal=cfg["signal"])
    annotations = {}
    for offset, split in enumerate(("train", "dev", "test")):
        fx = FixtureConfig(size=cfg[f"{split}_size"], seed=seed + offset, id_prefix=split, **common)
        examples, ann = gen_fixture(fx)
        save_squad_v2(run.output(split), examples)
        annotations.update(ann)
        log.info("%s: %s", split, dataset_stats(examples).to_dict())
    write_annotations(run.output("annotations"), annotations)
    write_srl_jsonl(run.output("srl"), gen_srl_fixture(cfg["srl_sentences"], seed))


def cmd_build_vocab(run):
    texts = []
    for split in ("train", "dev", "test"):
        if run.path(split).exists():
            for ex in _load_dataset(run, split):
                texts.extend([ex.question, ex.context])
    if run.path("srl").exists():
        texts.extend(" ".join(s.words) for s in load_srl_jsonl(run.input("srl")))
    vocab = build_vocab(texts, **run.config["tokenizer"])
    vocab.save(run.output("vocab"))
    log.info("vocabulary: %d tokens", len(vocab))


def _tagger_paths(run, k):
    return [run.path("srl_taggers") / f"fold{i + 1:02d}.ckpt" for i in range(k)]


def cmd_train_srl(run):
    vocab = Vocabulary.load(run.input("vocab"))
    dataset = load_srl_jsonl(run.input("srl"))
    srl_config = SrlConfig(seed=run.config["seed"], **run.config["srl"])
    result = train_srl_kfold(dataset, vocab, srl_config)
    for tagger, path in zip(result.taggers, _tagger_paths(run, len(result.taggers))):
        save_tagger(path, tagger)
    run.outputs.append(run.path("srl_taggers"))
    dump_json(run.output("srl_report"), result.to_dict())
    print(result.table())


def cmd_annotate(run):
    vocab = Vocabulary.load(run.input("vocab"))
    directory = run.input("srl_taggers")
    paths = sorted(directory.glob("fold*.ckpt"))
    if not paths:
        raise FileNotFoundError(f"no tagger checkpoints in {directory}")
    taggers = [load_tagger(p, vocab) for p in paths]
    examples = []
    for split in ("train", "dev", "test"):
        if run.path(split).exists():
            examples.extend(_load_dataset(run, split))
    annotations = annotate_mrc_dataset(examples, taggers, run.config["semantic"]["m_max"])
    write_annotations(run.output("annotations"), annotations)


def _train_reader(run, kind):
    vocab = Vocabulary.load(run.input("vocab"))
    examples = _load_dataset(run, "train")
    annotations = load_annotations(run.input("annotations")) if kind == "sketchy" else None
    model, result = train_module(kind, examples, vocab, _train_config(run.config, kind),
                                 _encoder_config(run.config, vocab), annotations=annotations,
                                 semantic_config=SemanticConfig(**run.config["semantic"]), inventory=LabelInventory())
    save_reader(run.output(kind), model)
    log.info("%s: %d steps, final loss %.6f", kind, result.steps, result.losses[-1] if result.losses else float("nan"))


def cmd_train_sketchy(run):
    _train_reader(run, "sketchy")


def cmd_train_intensive(run):
    _train_reader(run, "intensive")


def _grids(config):
    beta = config["verifier"]["beta_grid"]
    delta = config["verifier"]["delta_grid"]
    return ([tuple(b) for b in beta] if beta is not None else None), delta


def cmd_tune_verifier(run):
    vocab = Vocabulary.load(run.input("vocab"))
    sketchy = load_reader(run.input("sketchy"))
    intensive = load_reader(run.input("intensive"))
    annotations = load_annotations(run.input("annotations"))
    cfg = run.config["intensive"]
    features = featurize(_load_dataset(run, "dev"), vocab, cfg["max_seq_length"], cfg["max_query_length"],
                         annotations, sketchy.inventory, sketchy.semantic_config.m_max, require_annotations=True)
    items = score_features(sketchy, intensive, features, run.config["predict"]["batch_size"],
                           cfg["max_answer_length"])
    beta_grid, delta_grid = _grids(run.config)
    best = tune_verifier(items, beta_grid, delta_grid)
    dump_json(run.output("verifier"), best.to_dict())
    log.info("verifier: %s (dev F1 %.3f, EM %.3f)", best.to_dict(), best.f1, best.exact_match)


def cmd_predict(run):
    vocab = Vocabulary.load(run.input("vocab"))
    with open(run.input("verifier"), encoding="utf-8") as fh:
        raw = json.load(fh)
    verifier = VerifierParams(float(raw["beta1"]), float(raw["beta2"]), float(raw["delta"]))
    cfg = run.config["intensive"]
    verdicts = predict(_load_dataset(run, "test"), vocab, load_reader(run.input("sketchy")),
                       load_reader(run.input("intensive")), verifier, load_annotations(run.input("annotations")),
                       cfg["max_seq_length"], cfg["max_query_length"], cfg["max_answer_length"],
                       run.config["predict"]["batch_size"])
    dump_json(run.output("predictions"), predictions_dict(verdicts))


def cmd_evaluate(run):
    with open(run.input("predictions"), encoding="utf-8") as fh:
        predictions = json.load(fh)
    report = evaluate_predictions(predictions, _load_dataset(run, "test"))
    dump_json(run.output("report"), report.to_dict())
    print(json.dumps(report.to_dict(), ensure_ascii=False, indent=2))


def cmd_significance(run):
    with open(run.input("scores_a"), encoding="utf-8") as fh:
        a = json.load(fh)
    with open(run.input("scores_b"), encoding="utf-8") as fh:
        b = json.load(fh)
    result = paired_t_test(a, b)
    out = {"t": result.t, "df": result.df, "p": result.p}
    dump_json(run.output("significance"), out)
    print(json.dumps(out))


def cmd_gradcheck(run):
    from .gradchecks import run_all

    failures = 0
    lines = []
    for name, report, passed in run_all():
        failures += not passed
        lines.append(f"{'PASS' if passed else 'FAIL'} {name} max_rel_err={report.max_relative_error:.3e}")
    text = "\n".join(lines) + "\n"
    atomic_write_text(run.out / "gradcheck.txt", text)
    run.outputs.append(run.out / "gradcheck.txt")
    sys.stdout.write(text)
    return 1 if failures else 0


COMMANDS = {
    "gen-fixtures": cmd_gen_fixtures,
    "build-vocab": cmd_build_vocab,
    "train-srl": cmd_train_srl,
    "annotate": cmd_annotate,
    "train-sketchy": cmd_train_sketchy,
    "train-intensive": cmd_train_intensive,
    "tune-verifier": cmd_tune_verifier,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "significance": cmd_significance,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="semreader", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON run config")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value (dotted key, JSON value); repeatable")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", default=".", help="artifact directory (default: current directory)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, args.overrides, args.seed)
        run = Run(args.command, config, args.out)
        run.out.mkdir(parents=True, exist_ok=True)
        status = COMMANDS[args.command](run) or 0
        run.write_manifest()
    except (ValueError, KeyError, ArithmeticError, OSError) as exc:
        print(f"semreader {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return status


if __name__ == "__main__":
    sys.exit(main())
