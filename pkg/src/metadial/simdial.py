"""Agenda-driven slot-filling dialog generator with oracle belief annotations.

A simulated user holds an agenda (one value per informable slot, one to three
requests, an optional mid-dialog goal change).  A rule-based system asks for
missing slots, queries the KB once all constraints are known and answers the
requests about the offered entity.  User utterances can carry hesitations,
self-corrections and "don't care" false starts.

Every turn records the oracle belief state after the user utterance.  The
annotations obey the same rules as :func:`track`, the reference tracker used
by :func:`oracle_check`: an informable value mentioned by the user overwrites
its slot (last mention wins), and a requestable slot is requested in a turn
iff one of its keywords appears.
"""

from __future__ import annotations

import json
import random
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from .schema import BeliefState, DomainSpec, KnowledgeBase, MatchIndicator, kb_query
from .text import detokenize, tokenize

HESITATIONS = ("uhm", "hmm", "uh", "er", "well")
SELF_CORRECTIONS = (
    "sorry , i mean {value} .",
    "no wait , {value} .",
    "oops , i meant {value} .",
    "correction , {value} .",
    "make that {value} instead .",
)
DONT_CARE_STARTS = (
    "i uhm yeah i don't care . oh sorry ,",
    "i don't care . oh sorry ,",
    "anything is fine . actually no ,",
    "whatever works . hmm , no ,",
    "i don't mind . wait ,",
)
MAX_RETRIES = 20


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ComplexityConfig:
    p_self_correct: float = 0.1
    p_hesitation: float = 0.2
    p_dont_care: float = 0.1
    p_new_goal: float = 0.3

    def __post_init__(self):
        for name in ("p_self_correct", "p_hesitation", "p_dont_care", "p_new_goal"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")


@dataclass(frozen=True)
class Turn:
    user: tuple[str, ...]
    sys_delex: tuple[str, ...]
    sys_lex: tuple[str, ...]
    belief: BeliefState
    match: MatchIndicator
    kb_entity: str | None = None

    def to_json(self) -> dict:
        return {
            "user": detokenize(self.user),
            "sys_delex": detokenize(self.sys_delex),
            "sys_lex": detokenize(self.sys_lex),
            "inform": dict(self.belief.inform),
            "request": sorted(self.belief.request),
            "match": self.match.value,
            "kb_entity": self.kb_entity,
        }

    @classmethod
    def from_json(cls, rec: dict) -> "Turn":
        return cls(
            user=tuple(tokenize(rec["user"])),
            sys_delex=tuple(tokenize(rec["sys_delex"])),
            sys_lex=tuple(tokenize(rec["sys_lex"])),
            belief=BeliefState(rec["inform"], frozenset(rec["request"])),
            match=MatchIndicator(rec["match"]),
            kb_entity=rec.get("kb_entity"),
        )


@dataclass(frozen=True)
class Dialog:
    domain: str
    seed: int
    turns: tuple[Turn, ...] = field(default_factory=tuple)

    def to_json(self) -> dict:
        return {"domain": self.domain, "seed": self.seed, "turns": [t.to_json() for t in self.turns]}

    @classmethod
    def from_json(cls, rec: dict) -> "Dialog":
        return cls(rec["domain"], int(rec["seed"]), tuple(Turn.from_json(t) for t in rec["turns"]))


# ---------------------------------------------------------------- reference tracker

def track(spec: DomainSpec, prev: BeliefState, user_tokens) -> BeliefState:
    """Rule-based belief update from one user utterance."""
    inform = dict(prev.inform)
    for tok in user_tokens:
        slot = spec.slot_of_value(tok)
        if slot is not None:
            inform[slot] = tok
    toks = set(user_tokens)
    request = {s for s, kws in spec.request_keywords.items() if toks.intersection(kws)}
    return BeliefState(inform, frozenset(request))


def oracle_check(d: Dialog, spec: DomainSpec) -> bool:
    """True iff replaying the user side through :func:`track` reproduces every annotation."""
    belief = BeliefState()
    for turn in d.turns:
        belief = track(spec, belief, turn.user)
        if belief != turn.belief:
            return False
    return True


# ---------------------------------------------------------------- generation

class _Builder:
    def __init__(self, spec: DomainSpec, kb: KnowledgeBase, cfg: ComplexityConfig, rng: random.Random):
        self.spec, self.kb, self.cfg, self.rng = spec, kb, cfg, rng
        self.turns: list[Turn] = []
        self.belief = BeliefState()
        self.entity = None

    # -- surface realisation
    def pick(self, options) -> str:
        return self.rng.choice(list(options))

    def user_inform(self, slot: str, value: str) -> tuple[str, str | None]:
        """Inform utterance with optional noise; returns (text, noise kind)."""
        cfg, rng = self.cfg, self.rng
        base = self.pick(self.spec.user_templates["inform"][slot])
        noise = None
        if rng.random() < cfg.p_dont_care:
            text = f"{self.pick(DONT_CARE_STARTS)} {base.format(value=value)}"
            noise = "correction"
        elif rng.random() < cfg.p_self_correct and len(self.spec.informable[slot]) > 1:
            wrong = self.pick([v for v in self.spec.informable[slot] if v != value])
            text = f"{base.format(value=wrong)} {self.pick(SELF_CORRECTIONS).format(value=value)}"
            noise = "correction"
        else:
            text = base.format(value=value)
        if rng.random() < cfg.p_hesitation:
            toks = tokenize(text)
            toks.insert(rng.randrange(len(toks)), self.pick(HESITATIONS))
            text = detokenize(toks)
            noise = noise or "hesitation"
        return text, noise

    def lexicalize(self, delex: list[str]) -> tuple[list[str], str | None]:
        out, used = [], None
        for tok in delex:
            if tok.startswith("<") and tok.endswith(">") and self.entity is not None:
                slot = tok[1:-1]
                used = self.entity.name
                out += tokenize(self.entity.name) if slot == "name" else tokenize(self.entity.values[slot])
            else:
                out.append(tok)
        return out, used

    def emit(self, user_text: str, system) -> None:
        """Record one exchange; ``system`` may be a callable run after the belief update."""
        user = tokenize(user_text)
        self.belief = track(self.spec, self.belief, user)
        match, _ = kb_query(self.kb, self.belief.inform, self.spec)
        delex = tokenize(system() if callable(system) else system)
        lex, used = self.lexicalize(delex)
        self.turns.append(Turn(tuple(user), tuple(delex), tuple(lex), self.belief, match, used))

    # -- system policy pieces
    def missing(self) -> list[str]:
        return [s for s in self.spec.informable if s not in self.belief.inform]

    def next_system_move(self, prefix: str = "") -> str:
        """Ask for the next missing slot, or query the KB and offer."""
        nlg = self.spec.nlg_templates
        missing = self.missing()
        if missing:
            text = self.pick(nlg["ask"][missing[0]])
        else:
            match, hits = kb_query(self.kb, self.belief.inform, self.spec)
            if match is MatchIndicator.NO_MATCH:
                self.entity = None
                text = self.pick(nlg["no_match"])
            else:
                self.entity = hits[0]
                act = "offer_exact" if match is MatchIndicator.EXACT_MATCH else "offer_multiple"
                text = f"{self.pick(nlg[act])} {self.pick(nlg['anything_else'])}"
        return f"{prefix} {text}".strip()

    def satisfiable_changes(self, inform: dict[str, str]) -> list[tuple[str, str]]:
        out = []
        for slot, values in self.spec.informable.items():
            for v in values:
                if v == inform.get(slot):
                    continue
                trial = dict(inform, **{slot: v})
                if kb_query(self.kb, trial, self.spec)[0] is not MatchIndicator.NO_MATCH:
                    out.append((slot, v))
        return out

    def inform_turn(self, slot: str, value: str) -> None:
        """User informs; the system confirms noisy values, then moves on.

        False starts and corrections get an explicit yes/no confirmation turn;
        plain hesitations only an implicit confirmation prefix.
        """
        nlg = self.spec.nlg_templates
        text, noise = self.user_inform(slot, value)
        noisy = noise is not None
        if noise == "correction":
            self.emit(text, self.pick(nlg["explicit_confirm"]).format(value=value))
            self.emit(self.pick(self.spec.user_templates["confirm_yes"]), self.next_system_move)
        else:
            prefix = self.pick(nlg["implicit_confirm"]).format(value=value) if noisy else ""
            self.emit(text, lambda: self.next_system_move(prefix))

    def goal_change_turn(self) -> bool:
        """User switches one constraint; the system double-checks another, then re-offers."""
        options = self.satisfiable_changes(self.belief.inform)
        if not options:
            return False
        slot, value = self.pick(options)
        nlg, ut = self.spec.nlg_templates, self.spec.user_templates
        other = self.pick([s for s in self.spec.informable if s != slot])
        text, _ = self.user_inform(slot, value)
        self.emit(f"{self.pick(ut['new_goal'])} {text}", self.pick(nlg["explicit_confirm"]).format(value=self.belief.inform[other]))
        self.emit(self.pick(ut["confirm_yes"]), self.next_system_move)
        return True

    def request_turn(self, slot: str) -> None:
        nlg, ut = self.spec.nlg_templates, self.spec.user_templates
        lead = f"{self.pick(ut['more'])} " if self.rng.random() < 0.5 else ""
        answer = f"{self.pick(nlg['answer'][slot])} {self.pick(nlg['anything_else'])}"
        self.emit(lead + self.pick(ut["request"][slot]), answer)


def _sample_goal(spec: DomainSpec, kb: KnowledgeBase, rng: random.Random) -> dict[str, str]:
    if kb.entities and rng.random() < 0.75:
        ent = rng.choice(kb.entities)
        return {s: ent.values[s] for s in spec.informable}
    return {s: rng.choice(vals) for s, vals in spec.informable.items()}


def _attempt(spec, kb, cfg, rng) -> list[Turn]:
    b = _Builder(spec, kb, cfg, rng)
    ut = spec.user_templates
    goal = _sample_goal(spec, kb, rng)
    n_req = min(rng.choices((1, 2, 3), weights=(0.15, 0.35, 0.5))[0], len(spec.requestable))
    requests = rng.sample(list(spec.requestable), n_req)
    change_after = rng.randint(1, n_req) if rng.random() < cfg.p_new_goal else None

    b.emit(b.pick(ut["greet"]), b.next_system_move)
    while b.missing():
        slot = b.missing()[0]
        b.inform_turn(slot, goal[slot])

    if b.entity is None:
        # no match: the user relaxes one constraint to something the KB has
        options = b.satisfiable_changes(b.belief.inform)
        if not options:
            raise GenerationError("no satisfiable recovery")
        slot, value = b.pick(options)
        b.inform_turn(slot, value)
        if b.entity is None:
            raise GenerationError("recovery did not produce a match")

    asked = []
    for i, slot in enumerate(requests, start=1):
        b.request_turn(slot)
        asked.append(slot)
        if change_after == i:
            if not b.goal_change_turn():
                continue
            # the offered entity changed, so one earlier question is asked again
            b.request_turn(b.pick(asked))
    if rng.random() < 0.5:
        b.emit(b.pick(ut["thanks"]), b.pick(spec.nlg_templates["welcome"]))
    b.emit(b.pick(ut["goodbye"]), b.pick(spec.nlg_templates["goodbye"]))
    return b.turns


def generate_dialog(spec: DomainSpec, kb: KnowledgeBase, cfg: ComplexityConfig | None = None, seed: int = 0) -> Dialog:
    cfg = cfg or ComplexityConfig()
    if not kb.entities:
        raise GenerationError(f"{spec.name}: empty knowledge base")
    rng = random.Random(f"dialog:{spec.name}:{seed}")
    for _ in range(MAX_RETRIES):
        try:
            turns = _attempt(spec, kb, cfg, rng)
        except GenerationError:
            continue
        return Dialog(spec.name, seed, tuple(turns))
    raise GenerationError(f"{spec.name}: could not build a satisfiable agenda for seed {seed}")


def generate_corpus(spec, kb, cfg=None, n: int = 1, seed: int = 0) -> list[Dialog]:
    if n < 1:
        raise ValueError("corpus size must be >= 1")
    out = []
    for s in range(seed, seed + n):
        try:
            out.append(generate_dialog(spec, kb, cfg, s))
        except GenerationError as exc:
            raise GenerationError(f"seed {s}: {exc}") from exc
    return out


def corpus_stats(corpus) -> dict:
    turns = [len(d.turns) for d in corpus]
    lengths = [len(u) for d in corpus for t in d.turns for u in (t.user, t.sys_lex)]
    return {
        "dialogs": len(corpus),
        "mean_turns": statistics.fmean(turns),
        "mean_utterance_tokens": statistics.fmean(lengths),
    }


def save_corpus(path, corpus) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for d in corpus:
            fh.write(json.dumps(d.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
    return path


def load_corpus(path) -> list[Dialog]:
    with open(path, encoding="utf-8") as fh:
        return [Dialog.from_json(json.loads(line)) for line in fh if line.strip()]


__all__ = [
    "ComplexityConfig", "Dialog", "Turn", "GenerationError", "generate_dialog", "generate_corpus",
    "oracle_check", "track", "corpus_stats", "save_corpus", "load_corpus",
]
