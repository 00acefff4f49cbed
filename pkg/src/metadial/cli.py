"""Command-line entry point: ``metadial <command>``.

Commands: ``gen-data``, ``train``, ``adapt``, ``eval``, ``experiment``,
``decode``.  Configuration comes from built-in defaults, then
``--config FILE`` (YAML), then ``--set section.key=value`` and the
dedicated flags.  Every output records the configuration hash.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
diverged, 5 output exists (use ``--force``).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import yaml

from .checkpoint import load_params, save_params
from .config import ConfigError, RunConfig, builtin_config, dialog_seed_base, load_config
from .corpus_io import ContextExample, Vocab
from .evaluation import domain_table, evaluate_model, format_table
from .experiment import (
    adapt_to_target, extend_for_target, generate_seed_data, initial_params, read_seed_data,
    run_experiment, source_vocab, train_source, write_seed_data,
)
from .model import greedy_decode
from .schema import EOS_B, BeliefState, MatchIndicator, SchemaError
from .simdial import GenerationError, corpus_stats, generate_corpus, load_corpus, save_corpus
from .text import tokenize
from .training import TrainingDiverged

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_EXISTS = 0, 2, 3, 4, 5

log = logging.getLogger("metadial")


class DataError(RuntimeError):
    pass


class OutputExists(RuntimeError):
    pass


# flag -> (config path, type, help)
_FLAGS = {
    "alpha": ("meta.alpha", float, "inner (temporary-model) learning rate alpha; default 0.003"),
    "beta": ("meta.beta", float, "outer meta-update learning rate beta (Adam); default 0.003, the published rate"),
    "lr": ("train.lr", float, "Adam learning rate for transfer training (for adapt: the adaptation rate); "
                              "default 0.003, the published rate"),
    "adapt_lr": ("adapt.lr", float, "Adam learning rate for target adaptation; default 0.003"),
    "hidden": ("model.hidden", int, "GRU hidden size; default 50, the published size"),
    "emb_dim": ("model.emb_dim", int, "word embedding size; default 50, matching 50-d pretrained vectors"),
    "batch_size": ("train.batch_size", int, "examples per batch (and per domain per meta-iteration); default 32"),
    "dropout": ("model.dropout", float, "dropout rate on input embeddings; default 0.5, the published rate"),
    "patience": ("train.patience", int, "epochs without validation improvement before stopping; default 3"),
    "max_epochs": ("train.max_epochs", int, "epoch cap for source training; default 50"),
    "embeddings": ("paths.embeddings", str, "GloVe-format 50-d vector file; default none (random init)"),
    "data_dir": ("paths.data_dir", str, "corpus directory; default ./data"),
    "checkpoint_dir": ("paths.checkpoint_dir", str, "checkpoint directory; default ./checkpoints"),
    "report_dir": ("paths.report_dir", str, "report directory; default ./reports"),
}


def _set_path(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def _overrides(args) -> dict:
    out: dict = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"--set {key}: {exc}") from None
        _set_path(out, key, value)
    for flag, (path, _, _) in _FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            if flag == "lr" and args.command == "adapt":
                path = "adapt.lr"  # for the adapt command --lr means the adaptation rate
            _set_path(out, path, val)
    return out


def _config(args) -> RunConfig:
    path = args.config
    if path is not None and not Path(path).exists() and not path.endswith((".yaml", ".yml")):
        path = builtin_config(path)
    return load_config(path, _overrides(args))


def _check_out(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise OutputExists(f"{path} exists; pass --force to overwrite")


def _load_or_fail(fn, *a):
    try:
        return fn(*a)
    except FileNotFoundError as exc:
        raise DataError(f"missing data file {exc.filename}; run gen-data first") from None


# ---------------------------------------------------------------- commands

def cmd_gen_data(cfg: RunConfig, args) -> int:
    out = Path(args.out or cfg.paths.data_dir)
    seed = args.seed if args.seed is not None else cfg.experiment.seeds[0]
    if args.dialogs is not None:
        spec, kb = domain_table([cfg.domains.target], cfg.domains.kb_size, cfg.domains.kb_seed)[cfg.domains.target]
        path = out / cfg.domains.target / f"adapt_{args.dialogs}.jsonl"
        _check_out(path, args.force)
        corpus = generate_corpus(spec, kb, cfg.complexity, args.dialogs, dialog_seed_base(seed, "adapt"))
        save_corpus(path, corpus)
        print(f"wrote {path} ({len(corpus)} dialogs)")
        return EXIT_OK
    marker = out / "manifest.json"
    _check_out(marker, args.force)
    data = generate_seed_data(cfg, seed)
    paths = write_seed_data(data, out, cfg)
    stats = {d: corpus_stats(c) for d, c in data.source_train.items()}
    stats[cfg.domains.target] = corpus_stats(data.target_test)
    marker.write_text(json.dumps({"config_hash": cfg.hash(), "seed": seed, "stats": stats,
                                  "files": [str(p) for p in paths]}, indent=1))
    for d, s in stats.items():
        print(f"{d:<12} dialogs {s['dialogs']:>4}  mean turns {s['mean_turns']:.2f}  "
              f"mean utterance tokens {s['mean_utterance_tokens']:.2f}")
    print(f"wrote {len(paths)} corpus files under {out}")
    return EXIT_OK


def _manifest(cfg: RunConfig, vocab: Vocab, **extra) -> dict:
    return {"config_hash": cfg.hash(), "config": cfg.to_json(), "vocab": list(vocab.tokens), **extra}


def cmd_train(cfg: RunConfig, args) -> int:
    seed = args.seed if args.seed is not None else cfg.experiment.seeds[0]
    out = Path(args.out or Path(cfg.paths.checkpoint_dir) / f"{args.mode}_seed{seed}.npz")
    _check_out(out, args.force)
    if args.epochs is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, max_epochs=args.epochs))
    data = _load_or_fail(read_seed_data, cfg.paths.data_dir, cfg)
    vocab = source_vocab(data)
    params, tlog = train_source(cfg, data, vocab, initial_params(cfg, vocab, seed), args.mode, seed)
    save_params(out, params, _manifest(cfg, vocab, mode=args.mode, seed=seed, train_log=tlog.to_json()))
    print(f"best epoch {tlog.best_epoch}, val loss {min(tlog.val_losses):.4f}; wrote {out}")
    return EXIT_OK


def _load_checkpoint(path):
    try:
        params, manifest = load_params(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint {path} not found") from None
    if "vocab" not in manifest:
        raise DataError(f"checkpoint {path} has no vocabulary in its manifest")
    return params, manifest, Vocab(manifest["vocab"])


def cmd_adapt(cfg: RunConfig, args) -> int:
    params, manifest, vocab = _load_checkpoint(args.checkpoint)
    seed = args.seed if args.seed is not None else manifest.get("seed", 0)
    data = _load_or_fail(read_seed_data, cfg.paths.data_dir, cfg)
    if args.corpus:
        data.target_adapt = _load_or_fail(load_corpus, args.corpus)
        size = len(data.target_adapt)
    else:
        size = args.size
        if not 1 <= size <= len(data.target_adapt):
            raise DataError(f"--size {size}: the adaptation pool in {cfg.paths.data_dir} has "
                            f"{len(data.target_adapt)} dialogs")
    out = Path(args.out or Path(args.checkpoint).with_name(Path(args.checkpoint).stem + f"_adapt{size}.npz"))
    _check_out(out, args.force)
    best, new_vocab, epochs, tlog = adapt_to_target(params, vocab, cfg, data, size, seed)
    save_params(out, best, _manifest(cfg, new_vocab, mode="adapt", seed=seed, source=str(args.checkpoint),
                                     adapt_size=size, epochs_used=epochs, train_log=tlog.to_json()))
    report = {"config_hash": cfg.hash(), "adapt_size": size, "epochs_used": epochs, "train_log": tlog.to_json()}
    out.with_suffix(".json").write_text(json.dumps(report, indent=1))
    print(f"adapted on {size} dialogs: epochs used {epochs:g}; wrote {out}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    params, manifest, vocab = _load_checkpoint(args.checkpoint)
    corpora = args.corpus or [str(Path(cfg.paths.data_dir) / cfg.domains.target / "test.jsonl")]
    dialogs = [d for path in corpora for d in _load_or_fail(load_corpus, path)]
    doms = domain_table(sorted({d.domain for d in dialogs}), cfg.domains.kb_size, cfg.domains.kb_seed)
    rep = evaluate_model(params, dialogs, vocab, cfg.model, doms, cfg.experiment.eval_batch,
                         rollout=args.rollout or cfg.experiment.rollout)
    rep.epochs = manifest.get("epochs_used")
    print(format_table({Path(args.checkpoint).stem: rep}))
    out = Path(args.out or Path(cfg.paths.report_dir) / f"eval_{Path(args.checkpoint).stem}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"config_hash": cfg.hash(), "corpora": corpora, "report": rep.to_json()}, indent=1))
    return EXIT_OK


def cmd_experiment(cfg: RunConfig, args) -> int:
    seeds = list(cfg.experiment.seeds)
    if args.seeds is not None:
        seeds = list(range(args.seeds))
    report = run_experiment(cfg, seeds, cfg.paths.report_dir, cfg.paths.checkpoint_dir, args.jobs,
                            resume=not args.force)
    print(report.table())
    print(f"config {report.config_hash}; seeds completed {len(report.per_seed)}/{len(seeds)}")
    if report.failures:
        print(f"failed seeds: {sorted(report.failures)}", file=sys.stderr)
    return EXIT_OK if report.per_seed else EXIT_DATA


def cmd_decode(cfg: RunConfig, args) -> int:
    params, manifest, vocab = _load_checkpoint(args.checkpoint)
    try:
        rec = json.loads(Path(args.context).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read context record {args.context}: {exc}") from None
    if "domain" not in rec or "user" not in rec:
        raise DataError("context record needs 'domain' and 'user'")
    prev_b = [t for t in tokenize(rec.get("prev_belief", "")) if t != EOS_B]
    ex = ContextExample(tuple(prev_b), tuple(tokenize(rec.get("prev_response", ""))), tuple(tokenize(rec["user"])),
                        (EOS_B,), ("<eos_r>",), MatchIndicator.NO_MATCH, rec["domain"], BeliefState())
    doms = domain_table([rec["domain"]], cfg.domains.kb_size, cfg.domains.kb_seed)
    pred = greedy_decode(params, [ex], vocab, cfg.model, doms)[0]
    print("belief span:", " ".join(pred.belief_tokens))
    print("match:      ", pred.match.value)
    print("response:   ", " ".join(pred.response))
    print("lexicalized:", " ".join(pred.response_lex))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metadial", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="exit codes: 0 ok, 2 config error, 3 data error, 4 diverged, 5 output exists")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config, or the name of a built-in one (desk, paper)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override any config field, e.g. --set sizes.source_train=300")
    for flag, (_, tp, text) in _FLAGS.items():
        common.add_argument("--" + flag.replace("_", "-"), dest=flag, type=tp, help=text)
    common.add_argument("--seed", type=int, help="root seed (default: first of experiment.seeds, 0)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs / ignore cached reports")
    common.add_argument("--log-level", default="INFO", help="logging level (default INFO)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate train/val/test corpora for every domain")
    g.add_argument("--dialogs", type=int, help="only write a target adaptation corpus of this many dialogs")
    g.add_argument("--out", help="output directory (default paths.data_dir)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train a source model")
    t.add_argument("--mode", choices=("maml", "transfer"), default="maml",
                   help="maml: first-order meta-learning; transfer: pooled baseline (default maml)")
    t.add_argument("--epochs", type=int, help="cap on training epochs (overrides train.max_epochs)")
    t.add_argument("--out", help="checkpoint path")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("adapt", parents=[common], help="fine-tune a source checkpoint on target dialogs")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--size", type=int, default=9, help="number of target dialogs (default 9, about 1%% of source data)")
    a.add_argument("--corpus", help="explicit adaptation corpus (JSONL) instead of --size")
    a.add_argument("--out", help="checkpoint path")
    a.set_defaults(func=cmd_adapt)

    e = sub.add_parser("eval", parents=[common], help="turn-level BLEU and Entity F1 of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", action="append", help="test corpus JSONL (repeatable; default target test set)")
    e.add_argument("--rollout", action="store_true", help="use the model's own previous turns as context")
    e.add_argument("--out", help="report path")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", parents=[common], help="full multi-seed comparison")
    x.add_argument("--seeds", type=int, help="run seeds 0..N-1 (default experiment.seeds)")
    x.add_argument("--jobs", type=int, default=1, help="parallel worker processes across seeds (default 1)")
    x.set_defaults(func=cmd_experiment)

    d = sub.add_parser("decode", parents=[common], help="decode one context record (JSON)")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--context", required=True,
                   help='JSON file: {"domain", "user", optional "prev_belief", "prev_response"}')
    d.set_defaults(func=cmd_decode)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SchemaError, GenerationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OutputExists as exc:
        print(f"refusing to overwrite: {exc}", file=sys.stderr)
        return EXIT_EXISTS


if __name__ == "__main__":
    sys.exit(main())
