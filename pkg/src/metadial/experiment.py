"""End-to-end experiment: data, source training (meta-learned and transfer), adaptation, evaluation.

For every root seed the pipeline generates fresh corpora, trains a
meta-learned and a pooled-transfer source model from the same
initialization, adapts both to the target domain and evaluates them.  Systems
reported per seed (metrics on the target test set unless noted):

- ``daml/in_domain``, ``transfer/in_domain``: source models on the source test sets
- ``daml/unadapted``, ``transfer/unadapted``: source models on the target, no adaptation
- ``daml/adapt_<n>``: meta-learned model adapted on ``n`` target dialogs
- ``transfer/adapt_<n>``: transfer model adapted on ``n`` target dialogs

Adaptation sets are nested: the ``n``-dialog set is the first ``n`` dialogs
of one adaptation pool.  Before adaptation (and before the unadapted target
evaluation) the vocabulary is extended with the adaptation set's tokens and
the target ontology, and the vocabulary-sized tensors grow to match.
"""

from __future__ import annotations

import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_params, save_params
from .config import RunConfig, dialog_seed_base
from .corpus_io import Vocab, build_vocab, corpus_tokens, dialogs_to_examples, load_embeddings, ontology_tokens
from .evaluation import EvalReport, aggregate, domain_table, evaluate_model, format_table
from .model import init_params, resize_vocab
from .seeding import stream_rng
from .simdial import generate_corpus, load_corpus, save_corpus
from .training import MetaConfig, adapt, maml_train, transfer_train

log = logging.getLogger(__name__)


@dataclass
class SeedData:
    source_train: dict[str, list]
    source_val: dict[str, list]
    source_test: dict[str, list]
    target_adapt: list
    target_val: list
    target_test: list

    def adapt_set(self, n: int) -> list:
        if n > len(self.target_adapt):
            raise ValueError(f"adaptation size {n} exceeds the pool of {len(self.target_adapt)} dialogs")
        return self.target_adapt[:n]


def generate_seed_data(cfg: RunConfig, seed: int) -> SeedData:
    """Corpora for one root seed; split seed ranges never overlap."""
    doms = domain_table([*cfg.domains.source, cfg.domains.target], cfg.domains.kb_size, cfg.domains.kb_seed)
    s, cx = cfg.sizes, cfg.complexity

    def gen(domain, split, n):
        spec, kb = doms[domain]
        return generate_corpus(spec, kb, cx, n, dialog_seed_base(seed, split))

    src = cfg.domains.source
    tgt = cfg.domains.target
    return SeedData(
        source_train={d: gen(d, "train", s.source_train) for d in src},
        source_val={d: gen(d, "val", s.source_val) for d in src},
        source_test={d: gen(d, "test", s.source_test) for d in src},
        target_adapt=gen(tgt, "adapt", max(s.target_adapt)),
        target_val=gen(tgt, "val", s.target_val),
        target_test=gen(tgt, "test", s.target_test),
    )


def write_seed_data(data: SeedData, root, cfg: RunConfig) -> list[Path]:
    """Layout: ``<root>/<domain>/{train,val,test}.jsonl`` and ``<root>/<target>/adapt_<n>.jsonl``."""
    root = Path(root)
    out = []
    for d in data.source_train:
        for split, corpus in (("train", data.source_train[d]), ("val", data.source_val[d]), ("test", data.source_test[d])):
            out.append(save_corpus(root / d / f"{split}.jsonl", corpus))
    tgt = cfg.domains.target
    for n in cfg.sizes.target_adapt:
        out.append(save_corpus(root / tgt / f"adapt_{n}.jsonl", data.adapt_set(n)))
    out.append(save_corpus(root / tgt / "val.jsonl", data.target_val))
    out.append(save_corpus(root / tgt / "test.jsonl", data.target_test))
    return out


def read_seed_data(root, cfg: RunConfig) -> SeedData:
    root = Path(root)
    tgt = cfg.domains.target
    src = cfg.domains.source
    largest = max(cfg.sizes.target_adapt)
    return SeedData(
        source_train={d: load_corpus(root / d / "train.jsonl") for d in src},
        source_val={d: load_corpus(root / d / "val.jsonl") for d in src},
        source_test={d: load_corpus(root / d / "test.jsonl") for d in src},
        target_adapt=load_corpus(root / tgt / f"adapt_{largest}.jsonl"),
        target_val=load_corpus(root / tgt / "val.jsonl"),
        target_test=load_corpus(root / tgt / "test.jsonl"),
    )


# ---------------------------------------------------------------- building blocks

def source_vocab(data: SeedData) -> Vocab:
    return build_vocab(list(data.source_train.values()))


def initial_params(cfg: RunConfig, vocab: Vocab, seed: int):
    rng = stream_rng(seed, "init")
    emb = None
    if cfg.paths.embeddings:
        emb, _ = load_embeddings(cfg.paths.embeddings, vocab, cfg.model.emb_dim, rng)
    return init_params(len(vocab), cfg.model, rng, embeddings=emb)


def train_source(cfg: RunConfig, data: SeedData, vocab: Vocab, init: dict, mode: str, seed: int):
    """Train a source model; ``mode`` is ``maml`` or ``transfer``.  Returns (params, TrainLog)."""
    train_sets = {d: dialogs_to_examples(c) for d, c in data.source_train.items()}
    val = [ex for c in data.source_val.values() for ex in dialogs_to_examples(c)]
    if mode == "maml":
        meta = MetaConfig(cfg.meta.alpha, cfg.meta.beta, cfg.meta.inner_steps, cfg.train.batch_size,
                          tuple(cfg.domains.source), seed, cfg.meta.second_order)
        return maml_train(init, train_sets, val, vocab, cfg.model, meta, cfg.train)
    if mode == "transfer":
        return transfer_train(init, train_sets, val, vocab, cfg.model, cfg.train, seed)
    raise ValueError(f"unknown training mode {mode!r}")


def extend_for_target(params: dict, vocab: Vocab, cfg: RunConfig, adapt_dialogs, seed: int):
    """Grow vocabulary and parameters with target adaptation tokens and the target ontology."""
    spec = domain_table([cfg.domains.target], cfg.domains.kb_size, cfg.domains.kb_seed)[cfg.domains.target][0]
    new_vocab = vocab.extend([*corpus_tokens(adapt_dialogs), *ontology_tokens(spec)])
    rows = None
    rng = stream_rng(seed, "init", len(new_vocab))
    if cfg.paths.embeddings and len(new_vocab) > len(vocab):
        table, _ = load_embeddings(cfg.paths.embeddings, new_vocab, cfg.model.emb_dim, rng)
        rows = table[len(vocab):]
    return resize_vocab(params, len(new_vocab), cfg.model, rng, rows), new_vocab


def adapt_to_target(params, vocab, cfg: RunConfig, data: SeedData, n: int, seed: int):
    """Extend the vocabulary, then fine-tune on the first ``n`` adaptation dialogs."""
    dialogs = data.adapt_set(n)
    p, v = extend_for_target(params, vocab, cfg, dialogs, seed)
    best, epochs, tlog = adapt(p, dialogs_to_examples(dialogs), dialogs_to_examples(data.target_val),
                               v, cfg.model, cfg.adapt, seed)
    return best, v, epochs, tlog


# ---------------------------------------------------------------- one seed

@dataclass
class SeedResult:
    seed: int
    systems: dict[str, EvalReport]
    logs: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def to_json(self, cfg_hash: str) -> dict:
        return {
            "config_hash": cfg_hash,
            "seed": self.seed,
            "wall_time": self.wall_time,
            "systems": {k: v.to_json() for k, v in self.systems.items()},
            "logs": self.logs,
        }

    @classmethod
    def from_json(cls, rec: dict) -> "SeedResult":
        return cls(rec["seed"], {k: EvalReport.from_json(v) for k, v in rec["systems"].items()},
                   rec.get("logs", {}), rec.get("wall_time", 0.0))


def run_seed(cfg: RunConfig, seed: int, checkpoint_dir=None) -> SeedResult:
    start = time.perf_counter()
    data = generate_seed_data(cfg, seed)
    vocab = source_vocab(data)
    init = initial_params(cfg, vocab, seed)
    doms = domain_table([*cfg.domains.source, cfg.domains.target], cfg.domains.kb_size, cfg.domains.kb_seed)
    ev = dict(batch_size=cfg.experiment.eval_batch, rollout=cfg.experiment.rollout)
    src_test = [d for c in data.source_test.values() for d in c]
    systems: dict[str, EvalReport] = {}
    logs: dict = {}
    adapt_sizes = {"daml": list(cfg.sizes.target_adapt), "transfer": list(cfg.experiment.transfer_adapt_sizes)}
    for mode, name in (("maml", "daml"), ("transfer", "transfer")):
        params, tlog = _cached_source(cfg, data, vocab, init, mode, seed, checkpoint_dir)
        logs[f"{name}/source"] = tlog
        systems[f"{name}/in_domain"] = evaluate_model(params, src_test, vocab, cfg.model, doms, **ev)
        p0, v0 = extend_for_target(params, vocab, cfg, [], seed)
        systems[f"{name}/unadapted"] = evaluate_model(p0, data.target_test, v0, cfg.model, doms, **ev)
        for n in adapt_sizes[name]:
            p, v, epochs, alog = adapt_to_target(params, vocab, cfg, data, n, seed)
            rep = evaluate_model(p, data.target_test, v, cfg.model, doms, **ev)
            rep.epochs = epochs
            systems[f"{name}/adapt_{n}"] = rep
            logs[f"{name}/adapt_{n}"] = alog.to_json()
            log.info("seed %d %s adapt %d: f1 %.3f bleu %.3f epochs %g", seed, name, n,
                     rep.entity_f1, rep.bleu, epochs)
    return SeedResult(seed, systems, logs, time.perf_counter() - start)


def _cached_source(cfg, data, vocab, init, mode, seed, checkpoint_dir):
    path = None
    if checkpoint_dir is not None:
        path = Path(checkpoint_dir) / f"seed{seed}_{mode}_{cfg.hash()}.npz"
        if path.exists():
            params, manifest = load_params(path)
            return params, manifest.get("train_log", {})
    params, tlog = train_source(cfg, data, vocab, init, mode, seed)
    if path is not None:
        save_params(path, params, {"mode": mode, "seed": seed, "config_hash": cfg.hash(),
                                   "vocab": list(vocab.tokens), "train_log": tlog.to_json()})
    return params, tlog.to_json()


# ---------------------------------------------------------------- many seeds

@dataclass
class ExperimentReport:
    config_hash: str
    seeds: list[int]
    systems: dict[str, EvalReport]
    per_seed: list[SeedResult]
    failures: dict[int, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "completed": len(self.per_seed),
            "failures": {str(k): v for k, v in self.failures.items()},
            "systems": {k: v.to_json() for k, v in self.systems.items()},
            "table": self.table(),
        }

    def table(self) -> str:
        return format_table(self.systems)


def _seed_job(args):
    cfg, seed, ckpt = args
    try:
        return seed, run_seed(cfg, seed, ckpt), None
    except Exception:  # recorded and disclosed in the aggregate report
        return seed, None, traceback.format_exc()


def run_experiment(cfg: RunConfig, seeds=None, report_dir=None, checkpoint_dir=None, jobs: int = 1,
                   resume: bool = True) -> ExperimentReport:
    """Run every seed (reusing per-seed reports with a matching config hash) and aggregate.

    A failing seed is recorded in ``failures``; aggregation covers the
    seeds that completed.
    """
    seeds = list(cfg.experiment.seeds if seeds is None else seeds)
    cfg_hash = cfg.hash()
    report_dir = Path(report_dir) if report_dir is not None else None
    done: dict[int, SeedResult] = {}
    todo = []
    for s in seeds:
        path = report_dir / f"seed_{s}.json" if report_dir else None
        if resume and path is not None and path.exists():
            rec = json.loads(path.read_text())
            if rec.get("config_hash") == cfg_hash:
                done[s] = SeedResult.from_json(rec)
                continue
        todo.append(s)

    failures: dict[int, str] = {}

    def record(seed, res, err):
        if err is not None:
            failures[seed] = err
            log.error("seed %d failed:\n%s", seed, err)
            return
        done[seed] = res
        if report_dir is not None:
            report_dir.mkdir(parents=True, exist_ok=True)
            (report_dir / f"seed_{seed}.json").write_text(json.dumps(res.to_json(cfg_hash), indent=1))

    jobs_args = [(cfg, s, checkpoint_dir) for s in todo]
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for seed, res, err in pool.map(_seed_job, jobs_args):
                record(seed, res, err)
    else:
        for a in jobs_args:
            record(*_seed_job(a))

    results = [done[s] for s in seeds if s in done]
    names = list(results[0].systems) if results else []
    systems = {n: aggregate([r.systems[n] for r in results if n in r.systems]) for n in names}
    report = ExperimentReport(cfg_hash, seeds, systems, results, failures)
    if report_dir is not None:
        report_dir.mkdir(parents=True, exist_ok=True)
        (report_dir / "aggregate.json").write_text(json.dumps(report.to_json(), indent=1))
    return report


def pooled_std(reports, metric: str = "entity_f1") -> float:
    """Pooled standard deviation of ``metric`` across several aggregated reports."""
    stds = [r.std.get(metric) or 0.0 for r in reports]
    return float(np.sqrt(np.mean(np.square(stds)))) if stds else 0.0
