"""Operator-facing command surface.

Subcommands: ingest, train, eval, topics, sweep-t, kl-test.  Every run is
driven by a flat JSON config (defaults < preset < file < flags), prints
its effective configuration, and writes a manifest with artifact hashes
so it can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import metrics as metrics_mod
from . import trainer as trainer_mod
from .corpus import (
    AllTokensPruned,
    CacheFormatError,
    Dataset,
    EmptySplit,
    ingest_presplit,
    ingest_single,
    read_corpus_cache,
    read_vocabulary,
    write_corpus_cache,
    write_vocabulary,
)
from .metrics import VocabularyMismatch
from .model import ModelConfig
from .trainer import CorruptCheckpoint, Diverged, TrainConfig, load_checkpoint


class ConfigError(ValueError):
    """A config key is unknown, mistyped, or references a missing path."""


# key -> (type, default, description); None defaults mean "unset"
CONFIG_SCHEMA: dict[str, tuple[type, object, str]] = {
    # corpus
    "train_file": (str, None, "one-document-per-line train split"),
    "valid_file": (str, None, "one-document-per-line validation split"),
    "test_file": (str, None, "one-document-per-line test split"),
    "input_file": (str, None, "single unsplit corpus (alternative to per-split files)"),
    "split_fractions": (list, [0.8, 0.1, 0.1], "train/valid/test fractions for input_file"),
    "split_seed": (int, 7, "shuffle seed for splitting input_file"),
    "min_df": (int, 3, "prune tokens whose document frequency is below this"),
    "stopword_file": (str, None, "optional newline-separated stop-word list"),
    "corpus_dir": (str, None, "directory of ingested corpus artifacts"),
    # model
    "num_topics": (int, 50, "number of topics K"),
    "embed_size": (int, 300, "word/topic embedding width"),
    "hidden_size": (int, 800, "encoder hidden width"),
    "diff_steps": (int, 100, "forward-diffusion step count T"),
    "beta_start": (float, 0.0, "first noise-schedule beta"),
    "beta_end": (float, 0.02, "last noise-schedule beta"),
    "kl_weight": (float, 1.0, "weight of the KL term in the loss"),
    "mode": (str, "diffusion", "diffusion | no_diffusion | standard_etm"),
    "seed": (int, 0, "master seed for init/shuffle/noise streams"),
    # training
    "epochs": (int, 300, "training epochs"),
    "batch_size": (int, 1000, "mini-batch size"),
    "learning_rate": (float, 0.008, "Adam learning rate"),
    "eval_every": (int, 1, "validate every N epochs"),
    "max_checkpoints": (int, 0, "retained improving checkpoints (0 = all)"),
    "deterministic": (bool, False, "suppress wall-clock so artifacts are bitwise stable"),
    "clip_norm": (float, 0.0, "global gradient-norm clip (0 = off)"),
    "output_dir": (str, "runs", "root directory for run artifacts"),
    # evaluation
    "eval_split": (str, "test", "split evaluated by eval/kl-test"),
    "top_words_export": (int, 25, "words per topic in the exported TSV"),
    # sweep
    "sweep_t_values": (list, [0, 20, 50, 100, 150, 200], "diffusion steps tried by sweep-t"),
}

# named presets bundling the reference hyperparameters per dataset setting
PRESETS: dict[str, dict] = {
    "20ng-k50": {"num_topics": 50, "learning_rate": 0.008, "batch_size": 1000},
    "20ng-k100": {"num_topics": 100, "learning_rate": 0.009, "batch_size": 1000},
    "20ng-k200": {"num_topics": 200, "learning_rate": 0.01, "batch_size": 1000},
    "nyt-10000": {"min_df": 10000, "learning_rate": 0.008, "batch_size": 512},
    "nyt-5000": {"min_df": 5000, "learning_rate": 0.007, "batch_size": 512},
    "nyt-3000": {"min_df": 3000, "learning_rate": 0.007, "batch_size": 512},
}


def _check_type(key: str, value, want: type):
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r}: expected a number, got {value!r}")
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r}: expected an integer, got {value!r}")
        return value
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r}: expected true/false, got {value!r}")
        return value
    if want is str:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"config key {key!r}: expected a string, got {value!r}")
        return value
    if want is list:
        if not isinstance(value, list):
            raise ConfigError(f"config key {key!r}: expected a list, got {value!r}")
        return value
    raise AssertionError(key)


def load_config(
    config_path: str | None = None,
    preset: str | None = None,
    overrides: dict | None = None,
) -> dict:
    """Merge defaults, preset, config file, and flag overrides, validating
    every key against the schema."""
    cfg = {key: default for key, (_, default, _) in CONFIG_SCHEMA.items()}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; available: {', '.join(sorted(PRESETS))}"
            )
        cfg.update(PRESETS[preset])
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
        for key, value in loaded.items():
            if key not in CONFIG_SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = _check_type(key, value, CONFIG_SCHEMA[key][0])
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = _check_type(key, value, CONFIG_SCHEMA[key][0])

    fr = cfg["split_fractions"]
    if len(fr) != 3 or not all(isinstance(f, (int, float)) for f in fr):
        raise ConfigError("config key 'split_fractions': expected three numbers")
    tv = cfg["sweep_t_values"]
    if not tv or not all(isinstance(t, int) and not isinstance(t, bool) and t >= 0 for t in tv):
        raise ConfigError("config key 'sweep_t_values': expected nonnegative integers")
    return cfg


def run_id_of(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:10]


def model_config_of(cfg: dict) -> ModelConfig:
    return ModelConfig(
        num_topics=cfg["num_topics"],
        embed_size=cfg["embed_size"],
        hidden_size=cfg["hidden_size"],
        diff_steps=cfg["diff_steps"],
        beta_start=cfg["beta_start"],
        beta_end=cfg["beta_end"],
        kl_weight=cfg["kl_weight"],
        mode=cfg["mode"],
        seed=cfg["seed"],
    )


def train_config_of(cfg: dict, output_dir: Path) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"],
        eval_every=cfg["eval_every"],
        max_checkpoints=cfg["max_checkpoints"],
        deterministic=cfg["deterministic"],
        output_dir=str(output_dir),
        clip_norm=cfg["clip_norm"],
    )


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, cfg: dict, artifacts: list[Path]) -> Path:
    manifest = {
        "command": command,
        "run_id": run_id_of(cfg),
        "seed": cfg["seed"],
        "config": cfg,
        "artifacts": {p.name: _sha256(p) for p in sorted(artifacts)},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _print_effective(cfg: dict, command: str) -> None:
    print(f"[{command}] effective config:")
    print(json.dumps(cfg, indent=2, sort_keys=True))


def _require_dir_key(cfg: dict, key: str) -> Path:
    if not cfg[key]:
        raise ConfigError(f"config key {key!r} is required for this command")
    return Path(cfg[key])


def _require_file_key(cfg: dict, key: str) -> Path:
    path = _require_dir_key(cfg, key)
    if not path.exists():
        raise ConfigError(f"config key {key!r}: path does not exist: {path}")
    return path


def load_dataset(corpus_dir: Path) -> Dataset:
    vocab_path = corpus_dir / "vocab.tsv"
    if not vocab_path.exists():
        raise ConfigError(f"no vocab.tsv under {corpus_dir}; run ingest first")
    vocab = read_vocabulary(vocab_path)
    splits = {}
    for name in ("train", "valid", "test"):
        cache = corpus_dir / f"{name}.corpus"
        if not cache.exists():
            raise ConfigError(f"missing corpus cache {cache}; run ingest first")
        splits[name] = read_corpus_cache(cache, name, vocab)
    return Dataset(vocab, splits["train"], splits["valid"], splits["test"])


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(cfg: dict) -> int:
    out_dir = _require_dir_key(cfg, "corpus_dir")
    if cfg["input_file"]:
        path = _require_file_key(cfg, "input_file")
        dataset, report = ingest_single(
            path,
            cfg["min_df"],
            tuple(float(f) for f in cfg["split_fractions"]),
            cfg["split_seed"],
            stopword_path=cfg["stopword_file"],
        )
    else:
        paths = {key: _require_file_key(cfg, key) for key in ("train_file", "valid_file", "test_file")}
        dataset, report = ingest_presplit(
            paths["train_file"],
            paths["valid_file"],
            paths["test_file"],
            cfg["min_df"],
            stopword_path=cfg["stopword_file"],
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = [out_dir / "vocab.tsv"]
    write_vocabulary(dataset.vocab, artifacts[0])
    for name in ("train", "valid", "test"):
        cache = out_dir / f"{name}.corpus"
        write_corpus_cache(dataset.split(name), dataset.vocab.V, cache)
        artifacts.append(cache)
    report_path = out_dir / "ingest_report.json"
    report_path.write_text(json.dumps(report.as_dict(), indent=2))
    artifacts.append(report_path)
    write_manifest(out_dir, "ingest", cfg, artifacts)
    print(
        f"[ingest] V={report.vocab_size} docs kept "
        + "/".join(str(report.docs_kept[s]) for s in ("train", "valid", "test"))
        + f" -> {out_dir}"
    )
    return 0


def cmd_train(cfg: dict) -> int:
    dataset = load_dataset(_require_dir_key(cfg, "corpus_dir"))
    run_dir = Path(cfg["output_dir"]) / run_id_of(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    model_config = model_config_of(cfg)
    train_config = train_config_of(cfg, run_dir)
    try:
        report = trainer_mod.train(model_config, train_config, dataset)
    except Diverged as exc:
        if exc.report is not None:
            (run_dir / "train_report.json").write_text(exc.report.to_json())
        write_manifest(run_dir, "train", cfg, sorted(run_dir.glob("*")))
        print(f"[train] diverged: {exc}", file=sys.stderr)
        return 1
    write_manifest(run_dir, "train", cfg, [p for p in sorted(run_dir.glob("*")) if p.name != "manifest.json"])
    print(
        f"[train] best validation perplexity {report.best_val_perplexity:.2f} "
        f"at epoch {report.best_epoch} -> {run_dir}"
    )
    return 0


def _export_top_words(beta, vocab, n: int, path: Path) -> None:
    lists = metrics_mod.top_words(beta, n)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("topic_id\trank\ttoken\tprobability\n")
        for topic_id, words in enumerate(lists):
            for rank, w in enumerate(words, start=1):
                fh.write(f"{topic_id}\t{rank}\t{vocab.tokens[w]}\t{beta[topic_id, w]!r}\n")


def _load_eval_inputs(cfg: dict, checkpoint: str) -> tuple:
    ckpt_path = Path(checkpoint)
    if not ckpt_path.exists():
        raise ConfigError(f"checkpoint does not exist: {ckpt_path}")
    store, model_config = load_checkpoint(ckpt_path)
    dataset = load_dataset(_require_dir_key(cfg, "corpus_dir"))
    if dataset.vocab.V != store["word_emb"].rows:
        raise VocabularyMismatch(
            f"checkpoint vocabulary {store['word_emb'].rows} != corpus vocabulary {dataset.vocab.V}"
        )
    return store, model_config, dataset, ckpt_path


def cmd_eval(cfg: dict, checkpoint: str) -> int:
    store, model_config, dataset, ckpt_path = _load_eval_inputs(cfg, checkpoint)
    out_dir = Path(cfg["output_dir"]) / f"eval_{run_id_of(cfg)}"
    out_dir.mkdir(parents=True, exist_ok=True)
    report, beta = metrics_mod.evaluate_model(
        store,
        model_config,
        dataset.split(cfg["eval_split"]),
        dataset.train,
        dataset.vocab.V,
        corpus_id=dataset.vocab.ref_id,
        checkpoint_id=_sha256(ckpt_path)[:12],
    )
    report_path = out_dir / "metrics_report.json"
    report_path.write_text(report.to_json())
    words_path = out_dir / "top_words.tsv"
    _export_top_words(beta, dataset.vocab, cfg["top_words_export"], words_path)
    write_manifest(out_dir, "eval", cfg, [report_path, words_path])
    print(
        f"[eval] coherence={report.coherence:.4f} diversity={report.diversity:.4f} "
        f"quality={report.quality:.4f} perplexity={report.perplexity:.2f} -> {out_dir}"
    )
    return 0


def cmd_topics(cfg: dict, checkpoint: str) -> int:
    store, _, dataset, _ = _load_eval_inputs(cfg, checkpoint)
    from . import autodiff as ad
    from .model import topic_word_dist

    with ad.no_grad():
        beta = topic_word_dist(store["topic_emb"], store["word_emb"]).data
    out_dir = Path(cfg["output_dir"]) / f"topics_{run_id_of(cfg)}"
    out_dir.mkdir(parents=True, exist_ok=True)
    words_path = out_dir / "top_words.tsv"
    _export_top_words(beta, dataset.vocab, cfg["top_words_export"], words_path)
    write_manifest(out_dir, "topics", cfg, [words_path])
    print(f"[topics] wrote {words_path}")
    return 0


def cmd_sweep_t(cfg: dict) -> int:
    dataset = load_dataset(_require_dir_key(cfg, "corpus_dir"))
    sweep_dir = Path(cfg["output_dir"]) / f"sweep_{run_id_of(cfg)}"
    sweep_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for t in cfg["sweep_t_values"]:
        run_dir = sweep_dir / f"t{t:04d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        model_config = replace(model_config_of(cfg), diff_steps=t, mode="diffusion")
        train_config = train_config_of(cfg, run_dir)
        try:
            trainer_mod.train(model_config, train_config, dataset)
            store, ckpt_config = load_checkpoint(run_dir / "best.ckpt")
            report, _ = metrics_mod.evaluate_model(
                store,
                ckpt_config,
                dataset.split(cfg["eval_split"]),
                dataset.train,
                dataset.vocab.V,
                corpus_id=dataset.vocab.ref_id,
            )
            rows.append(
                (t, report.coherence, report.diversity, report.quality, report.perplexity)
            )
            print(
                f"[sweep-t] T={t}: quality={report.quality:.4f} "
                f"perplexity={report.perplexity:.2f}"
            )
        except (Diverged, CorruptCheckpoint) as exc:
            rows.append((t, float("nan"), float("nan"), float("nan"), float("nan")))
            print(f"[sweep-t] T={t} failed: {exc}", file=sys.stderr)
    csv_path = sweep_dir / "sweep.csv"
    lines = ["T,coherence,diversity,quality,perplexity"]
    for t, coh, div, quality, ppl in rows:
        lines.append(f"{t},{coh!r},{div!r},{quality!r},{ppl!r}")
    csv_path.write_text("\n".join(lines) + "\n")
    write_manifest(sweep_dir, "sweep-t", cfg, [csv_path])
    print(f"[sweep-t] wrote {csv_path}")
    return 0


def cmd_kl_test(cfg: dict, run_dir_arg: str) -> int:
    """Post-hoc test-set KL/perplexity trajectory over a run's checkpoints."""
    run_dir = Path(run_dir_arg)
    if not run_dir.exists():
        raise ConfigError(f"run directory does not exist: {run_dir}")
    ckpts = sorted(run_dir.glob("checkpoint_epoch*.ckpt"))
    if not ckpts:
        raise ConfigError(f"no epoch checkpoints under {run_dir}")
    dataset = load_dataset(_require_dir_key(cfg, "corpus_dir"))
    split = dataset.split(cfg["eval_split"])
    points = []
    best = float("inf")
    for ckpt in ckpts:
        epoch = int(ckpt.stem.removeprefix("checkpoint_epoch"))
        store, model_config = load_checkpoint(ckpt)
        if store["word_emb"].rows != dataset.vocab.V:
            raise VocabularyMismatch(
                f"checkpoint vocabulary {store['word_emb'].rows} != corpus vocabulary {dataset.vocab.V}"
            )
        ppl, kl = trainer_mod.validate(store, model_config, split)
        if ppl < best:
            best = ppl
            points.append((epoch, kl, ppl))
    csv_path = run_dir / "kl_test.csv"
    lines = ["epoch,kl,perplexity"]
    for epoch, kl, ppl in points:
        lines.append(f"{epoch},{kl!r},{ppl!r}")
    csv_path.write_text("\n".join(lines) + "\n")
    write_manifest(run_dir, "kl-test", cfg, [csv_path])
    print(f"[kl-test] {len(points)} improving checkpoints -> {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat JSON config file")
    parser.add_argument("--preset", help=f"named preset: {', '.join(sorted(PRESETS))}")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument(
        "--deterministic", action="store_true", default=None,
        help="suppress wall-clock timing so artifacts are bitwise stable",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffetm", description="topic modeling toolchain with a diffusion latent sampler"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, doc in [
        ("ingest", "tokenize, prune, vectorize, and cache a corpus"),
        ("train", "train a model against an ingested corpus"),
        ("eval", "compute coherence/diversity/quality/perplexity for a checkpoint"),
        ("topics", "export per-topic top words for a checkpoint"),
        ("sweep-t", "train once per diffusion step count and tabulate metrics"),
        ("kl-test", "post-hoc test-set KL trajectory over a run's checkpoints"),
    ]:
        p = sub.add_parser(name, help=doc)
        _add_common(p)
        if name in ("eval", "topics"):
            p.add_argument("--checkpoint", required=True, help="checkpoint file to load")
        if name == "kl-test":
            p.add_argument("--run-dir", required=True, help="training run directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides: dict = {"seed": args.seed, "deterministic": args.deterministic}
    if args.out is not None:
        overrides["corpus_dir" if args.command == "ingest" else "output_dir"] = args.out
    try:
        cfg = load_config(args.config, args.preset, overrides)
        _print_effective(cfg, args.command)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "topics":
            return cmd_topics(cfg, args.checkpoint)
        if args.command == "sweep-t":
            return cmd_sweep_t(cfg)
        if args.command == "kl-test":
            return cmd_kl_test(cfg, args.run_dir)
        raise AssertionError(args.command)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (
        AllTokensPruned,
        EmptySplit,
        CacheFormatError,
        CorruptCheckpoint,
        VocabularyMismatch,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
