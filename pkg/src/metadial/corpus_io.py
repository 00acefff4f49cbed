"""Vocabulary, pretrained embeddings, per-turn context examples and padded batches.

A turn ``t`` becomes one :class:`ContextExample` holding the previous belief
span ``B_{t-1}``, the previous delexicalized response ``R_{t-1}`` and the user
utterance ``U_t``; the first turn of a dialog has empty ``B_0`` and ``R_0``.
The encoder reads ``B_{t-1} <eos_b> R_{t-1} <eos_r> U_t <eos_u>``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .schema import EOS_B, BeliefState, DomainSpec, MatchIndicator, load_domain, serialize_belief

log = logging.getLogger(__name__)

PAD, UNK, GO = "<pad>", "<unk>", "<go>"
EOS_U, EOS_R = "<eos_u>", "<eos_r>"
RESERVED = (
    PAD, UNK, GO, EOS_U, EOS_B, EOS_R, "<inf>", "<req>",
    *(m.token for m in MatchIndicator),
)


class EmbeddingError(ValueError):
    pass


class Vocab:
    """Append-only token/id bijection with the reserved tokens first (``<pad>`` is 0)."""

    def __init__(self, tokens=()):
        self._itos: list[str] = []
        self._stoi: dict[str, int] = {}
        for tok in (*RESERVED, *tokens):
            if tok not in self._stoi:
                self._stoi[tok] = len(self._itos)
                self._itos.append(tok)

    def __len__(self):
        return len(self._itos)

    def __contains__(self, tok):
        return tok in self._stoi

    def id(self, tok: str) -> int:
        return self._stoi.get(tok, self._stoi[UNK])

    def token(self, i: int) -> str:
        return self._itos[i]

    def encode(self, tokens) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self._itos[i] for i in ids]

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self._itos)

    def extend(self, tokens) -> "Vocab":
        """New vocab with unseen ``tokens`` appended; existing ids are unchanged."""
        return Vocab([*self._itos[len(RESERVED):], *tokens])

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self._itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        toks = Path(path).read_text(encoding="utf-8").split("\n")
        toks = [t for t in toks if t]
        if tuple(toks[: len(RESERVED)]) != RESERVED:
            raise ValueError(f"{path}: reserved tokens missing or out of order")
        return cls(toks[len(RESERVED):])


def corpus_tokens(corpus, spec: DomainSpec | None = None) -> list[str]:
    """Every token a model sees or emits for ``corpus``, in first-seen order."""
    seen: dict[str, None] = {}
    for d in corpus:
        sp = spec or load_domain(d.domain)
        for t in d.turns:
            for tok in (*t.user, *t.sys_delex, *serialize_belief(t.belief, sp)):
                seen.setdefault(tok, None)
    return list(seen)


def ontology_tokens(spec: DomainSpec) -> list[str]:
    """Slot values, requestable slot names and response placeholders of a domain."""
    out = [v for vals in spec.informable.values() for v in vals]
    out += list(spec.requestable)
    out += [f"<{s}>" for s in spec.requestable] + ["<name>"]
    return out


def build_vocab(corpora, extra_tokens=()) -> Vocab:
    """Vocab over all tokens of one or more corpora (frequency cutoff 1)."""
    corpora = list(corpora)
    if not corpora or not any(len(c) for c in corpora):
        raise ValueError("build_vocab needs at least one non-empty corpus")
    toks: list[str] = []
    for c in corpora:
        toks += corpus_tokens(c)
    return Vocab([*toks, *extra_tokens])


@dataclass(frozen=True)
class EmbeddingStats:
    coverage: float
    found: int
    malformed: int


def load_embeddings(path, vocab: Vocab, dim: int = 50, rng=None, scale: float = 0.08):
    """Embedding matrix for ``vocab`` from a GloVe-format text file.

    Rows of tokens present in the file are copied verbatim; every other row
    is drawn uniformly from ``[-scale, scale]``.  Lines that do not parse are
    skipped and counted; a well-formed line of the wrong width is an error.
    Coverage is over non-reserved tokens.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    mat = rng.uniform(-scale, scale, size=(len(vocab), dim))
    found: set[str] = set()
    malformed = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                if line.strip():
                    malformed += 1
                continue
            try:
                vec = np.array([float(x) for x in parts[1:]])
            except ValueError:
                malformed += 1
                continue
            if vec.size != dim:
                raise EmbeddingError(f"{path}: vectors have dimension {vec.size}, expected {dim}")
            if parts[0] in vocab and parts[0] not in found:
                mat[vocab.id(parts[0])] = vec
                found.add(parts[0])
    if malformed:
        log.warning("%s: skipped %d malformed lines", path, malformed)
    n_open = len(vocab) - len(RESERVED)
    coverage = len(found - set(RESERVED)) / n_open if n_open else 0.0
    log.info("embedding coverage %.3f (%d of %d tokens)", coverage, len(found), n_open)
    return mat, EmbeddingStats(coverage, len(found), malformed)


# ---------------------------------------------------------------- examples

@dataclass(frozen=True)
class ContextExample:
    prev_belief: tuple[str, ...]
    prev_response: tuple[str, ...]
    user: tuple[str, ...]
    target_belief: tuple[str, ...]
    target_response: tuple[str, ...]
    match: MatchIndicator
    domain: str
    belief: BeliefState
    dialog_seed: int = 0
    turn_index: int = 0

    def encoder_tokens(self) -> list[str]:
        return [*self.prev_belief, EOS_B, *self.prev_response, EOS_R, *self.user, EOS_U]

    def user_span(self) -> tuple[int, int]:
        start = len(self.prev_belief) + len(self.prev_response) + 2
        return start, start + len(self.user)


def dialogs_to_examples(corpus, spec: DomainSpec | None = None) -> list[ContextExample]:
    """One example per turn with the previous turn's oracle span and response as context.

    Previous spans drop their trailing ``<eos_b>`` (the encoder adds it);
    target spans and responses keep their end markers.
    """
    out = []
    for d in corpus:
        sp = spec or load_domain(d.domain)
        prev_b: tuple[str, ...] = ()
        prev_r: tuple[str, ...] = ()
        for i, t in enumerate(d.turns):
            target_b = tuple(serialize_belief(t.belief, sp))
            out.append(ContextExample(
                prev_belief=prev_b,
                prev_response=prev_r,
                user=tuple(t.user),
                target_belief=target_b,
                target_response=(*t.sys_delex, EOS_R),
                match=t.match,
                domain=d.domain,
                belief=t.belief,
                dialog_seed=d.seed,
                turn_index=i,
            ))
            prev_b = target_b[:-1]
            prev_r = tuple(t.sys_delex)
    return out


# ---------------------------------------------------------------- batches

@dataclass
class Batch:
    """Right-padded id matrices (pad id 0) and float masks, batch-major.

    ``enc_ids`` encoder input; ``user_mask`` marks user-utterance positions in
    it (the belief copy source).  ``bspan_in``/``bspan_out`` are the belief
    decoder's teacher-forced inputs (``<go>`` shifted) and targets;
    ``resp_in`` holds response tokens fed after the leading match token, so
    ``resp_in[:, t]`` is the input at response step ``t + 1``.
    """

    enc_ids: np.ndarray
    enc_mask: np.ndarray
    user_mask: np.ndarray
    bspan_in: np.ndarray
    bspan_out: np.ndarray
    bspan_mask: np.ndarray
    resp_in: np.ndarray
    resp_out: np.ndarray
    resp_mask: np.ndarray
    match: np.ndarray
    examples: list

    def __len__(self):
        return len(self.examples)

    @property
    def n_target_tokens(self) -> int:
        return int(self.bspan_mask.sum() + self.resp_mask.sum())


def _pad(rows, width=None):
    width = max((len(r) for r in rows), default=0) if width is None else width
    width = max(width, 1)
    ids = np.zeros((len(rows), width), dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=np.float64)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
        mask[i, : len(r)] = 1.0
    return ids, mask


def collate(examples, vocab: Vocab) -> Batch:
    examples = list(examples)
    enc_ids, enc_mask = _pad([vocab.encode(e.encoder_tokens()) for e in examples])
    user_mask = np.zeros_like(enc_mask)
    for i, e in enumerate(examples):
        a, b = e.user_span()
        user_mask[i, a:b] = 1.0
    b_out = [vocab.encode(e.target_belief) for e in examples]
    bspan_out, bspan_mask = _pad(b_out)
    bspan_in, _ = _pad([[vocab.id(GO), *r[:-1]] for r in b_out], bspan_out.shape[1])
    r_out = [vocab.encode(e.target_response) for e in examples]
    resp_out, resp_mask = _pad(r_out)
    resp_in, _ = _pad([r[:-1] for r in r_out], max(resp_out.shape[1] - 1, 1))
    match = np.array([e.match.index for e in examples], dtype=np.int64)
    return Batch(enc_ids, enc_mask, user_mask, bspan_in, bspan_out, bspan_mask,
                 resp_in, resp_out, resp_mask, match, examples)


def make_batches(examples, vocab: Vocab, size: int = 32, seed: int | None = 0, bucket: int = 8) -> list[Batch]:
    """Shuffle by ``seed`` (``None`` keeps the order) and cut into padded batches.

    With ``bucket > 1`` the shuffled stream is split into chunks of
    ``bucket * size`` examples and each chunk is sorted by encoder length
    before cutting, which reduces padding.  The final partial batch is kept
    and comes last.
    """
    examples = list(examples)
    if not examples:
        raise ValueError("make_batches needs at least one example")
    if size < 1:
        raise ValueError(f"batch size must be positive, got {size}")
    order = np.arange(len(examples)) if seed is None else np.random.default_rng(seed).permutation(len(examples))
    if bucket > 1 and seed is not None:
        chunk = bucket * size
        lengths = np.array([len(e.encoder_tokens()) for e in examples])
        order = np.concatenate([
            c[np.argsort(lengths[c], kind="stable")] for c in np.split(order, range(chunk, len(order), chunk))
        ])
    return [collate([examples[j] for j in order[i: i + size]], vocab) for i in range(0, len(order), size)]
