"""Corpus BLEU, belief-state Entity F1, model evaluation and multi-run aggregation.

BLEU is corpus-level BLEU-4 on the 0-1 scale with a brevity penalty; the
unigram precision is unsmoothed and the 2- to 4-gram precisions use add-one
smoothing.  Entity F1 is micro-averaged over belief items: an item is an
``(inform, slot, value)`` triple or a ``(request, slot)`` pair.
"""

from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus_io import ContextExample, Vocab, dialogs_to_examples
from .model import ModelConfig, greedy_decode
from .schema import generate_kb, load_domain, serialize_belief

MAX_N = 4


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hypotheses, references):
    """Clipped n-gram matches and totals for n = 1..4, plus hypothesis and reference lengths."""
    matches = [0] * MAX_N
    totals = [0] * MAX_N
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_N + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def bleu(hypotheses, references) -> float:
    hypotheses, references = list(hypotheses), list(references)
    if not hypotheses:
        raise ValueError("bleu of an empty corpus is undefined")
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    matches, totals, c, r = bleu_stats(hypotheses, references)
    if c == 0 or matches[0] == 0:
        return 0.0
    log_p = math.log(matches[0] / totals[0])
    for n in range(1, MAX_N):
        log_p += math.log((matches[n] + 1) / (totals[n] + 1))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return min(1.0, bp * math.exp(log_p / MAX_N))


@dataclass(frozen=True)
class F1Counts:
    correct: int = 0
    predicted: int = 0
    oracle: int = 0

    def __add__(self, other: "F1Counts") -> "F1Counts":
        return F1Counts(self.correct + other.correct, self.predicted + other.predicted, self.oracle + other.oracle)

    @property
    def f1(self) -> float:
        if self.predicted == 0 and self.oracle == 0:
            return 1.0
        if self.correct == 0:
            return 0.0
        p = self.correct / self.predicted
        r = self.correct / self.oracle
        return 2 * p * r / (p + r)


def f1_counts(predicted, oracle) -> F1Counts:
    predicted, oracle = list(predicted), list(oracle)
    if len(predicted) != len(oracle):
        raise ValueError(f"{len(predicted)} predicted states vs {len(oracle)} oracle states")
    total = F1Counts()
    for p, o in zip(predicted, oracle):
        pi, oi = p.items(), o.items()
        total = total + F1Counts(len(pi & oi), len(pi), len(oi))
    return total


def entity_f1(predicted, oracle) -> float:
    return f1_counts(predicted, oracle).f1


# ---------------------------------------------------------------- reports

@dataclass
class EvalReport:
    bleu: float
    entity_f1: float
    epochs: float | None = None
    per_domain: dict = field(default_factory=dict)
    n_seeds: int = 1
    std: dict = field(default_factory=dict)
    n_turns: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, rec: dict) -> "EvalReport":
        return cls(**rec)


def evaluate_model(params, test_corpus, vocab: Vocab, cfg: ModelConfig, domains: dict,
                   batch_size: int = 64, oracle_belief: bool = False, rollout: bool = False) -> EvalReport:
    """Decode every turn of ``test_corpus`` and score spans (Entity F1) and delexicalized responses (BLEU).

    By default each turn is decoded from the oracle previous span and
    response.  With ``rollout`` the model's own previous predictions form the
    context instead.
    """
    test_corpus = list(test_corpus)
    if rollout:
        examples, preds = _rollout(params, test_corpus, vocab, cfg, domains, batch_size)
    else:
        examples = dialogs_to_examples(test_corpus)
        preds = []
        for i in range(0, len(examples), batch_size):
            preds += greedy_decode(params, examples[i: i + batch_size], vocab, cfg, domains, oracle_belief)
    return _score(examples, preds)


def _score(examples, preds) -> EvalReport:
    by_domain: dict[str, list[int]] = {}
    for i, ex in enumerate(examples):
        by_domain.setdefault(ex.domain, []).append(i)

    def refs(idx):
        return [list(examples[i].target_response[:-1]) for i in idx]

    per_domain = {}
    for d, idx in sorted(by_domain.items()):
        counts = f1_counts([preds[i].belief for i in idx], [examples[i].belief for i in idx])
        per_domain[d] = {
            "bleu": bleu([preds[i].response for i in idx], refs(idx)),
            "entity_f1": counts.f1,
            "f1_counts": asdict(counts),
            "n_turns": len(idx),
        }
    allidx = list(range(len(examples)))
    return EvalReport(
        bleu=bleu([p.response for p in preds], refs(allidx)),
        entity_f1=entity_f1([p.belief for p in preds], [e.belief for e in examples]),
        per_domain=per_domain,
        n_turns=len(examples),
    )


def _rollout(params, corpus, vocab, cfg, domains, batch_size):
    """Turn-synchronous rollout across dialogs using the model's own context."""
    examples_by_dialog = [dialogs_to_examples([d]) for d in corpus]
    out_ex, out_pred = [], []
    state = [((), ()) for _ in corpus]
    longest = max(len(e) for e in examples_by_dialog)
    for t in range(longest):
        live = [i for i, e in enumerate(examples_by_dialog) if t < len(e)]
        ctx = []
        for i in live:
            ex = examples_by_dialog[i][t]
            pb, pr = state[i]
            ctx.append(ContextExample(pb, pr, ex.user, ex.target_belief, ex.target_response, ex.match,
                                      ex.domain, ex.belief, ex.dialog_seed, ex.turn_index))
        preds = []
        for k in range(0, len(ctx), batch_size):
            preds += greedy_decode(params, ctx[k: k + batch_size], vocab, cfg, domains)
        for i, ex, p in zip(live, ctx, preds):
            spec = domains[ex.domain][0]
            state[i] = (tuple(serialize_belief(p.belief, spec)[:-1]), tuple(p.response))
        out_ex += ctx
        out_pred += preds
    return out_ex, out_pred


def aggregate(reports) -> EvalReport:
    """Mean of every metric over runs, with population standard deviations in ``std``."""
    reports = list(reports)
    if not reports:
        raise ValueError("aggregate needs at least one report")

    def mean_std(vals):
        vals = [v for v in vals if v is not None]
        if not vals:
            return None, None
        return float(np.mean(vals)), float(statistics.pstdev(vals)) if len(vals) > 1 else 0.0

    bleu_m, bleu_s = mean_std([r.bleu for r in reports])
    f1_m, f1_s = mean_std([r.entity_f1 for r in reports])
    ep_m, ep_s = mean_std([r.epochs for r in reports])
    per_domain = {}
    for d in sorted({d for r in reports for d in r.per_domain}):
        rows = [r.per_domain[d] for r in reports if d in r.per_domain]
        per_domain[d] = {
            "bleu": mean_std([x["bleu"] for x in rows])[0],
            "entity_f1": mean_std([x["entity_f1"] for x in rows])[0],
            "n_turns": sum(x["n_turns"] for x in rows),
        }
    return EvalReport(bleu_m, f1_m, ep_m, per_domain, len(reports),
                      {"bleu": bleu_s, "entity_f1": f1_s, "epochs": ep_s},
                      sum(r.n_turns for r in reports))


def format_table(rows: dict) -> str:
    """Terminal table with one line per system: BLEU, Entity F1 and adaptation epochs (mean +/- std)."""

    def cell(mean, std, scale=1.0, digits=1):
        if mean is None:
            return "-"
        s = f"{mean * scale:.{digits}f}"
        if std:
            s += f" +/- {std * scale:.{digits}f}"
        return s

    lines = [f"{'system':<28}{'BLEU':>16}{'Entity F1':>16}{'Epochs':>16}{'runs':>6}"]
    for name, r in rows.items():
        lines.append(
            f"{name:<28}{cell(r.bleu, r.std.get('bleu'), 100):>16}"
            f"{cell(r.entity_f1, r.std.get('entity_f1'), 100):>16}"
            f"{cell(r.epochs, r.std.get('epochs'), 1, 2):>16}{r.n_seeds:>6}")
    lines.append("(BLEU and Entity F1 shown x100; stored on the 0-1 scale)")
    return "\n".join(lines)


def domain_table(domain_names, kb_size: int = 100, kb_seed: int = 0) -> dict:
    """``{name: (DomainSpec, KnowledgeBase)}`` for the given domains."""
    out = {}
    for name in domain_names:
        spec = load_domain(name)
        out[spec.name] = (spec, generate_kb(spec, kb_size, kb_seed))
    return out


__all__ = [
    "bleu", "bleu_stats", "entity_f1", "f1_counts", "F1Counts", "EvalReport",
    "evaluate_model", "aggregate", "format_table", "domain_table",
]
