"""Domain schemas, knowledge bases, belief states and KB match indicators."""

from __future__ import annotations

import enum
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .text import tokenize

INF, REQ, EOS_B = "<inf>", "<req>", "<eos_b>"
NAME_SLOT = "name"
BUILTIN_DOMAINS = ("restaurant", "weather", "bus", "movie")

_VALUE_REF = re.compile(r"\{([a-z_]+)\}")
_PLACEHOLDER = re.compile(r"<([a-z_]+)>")


class SchemaError(ValueError):
    pass


class MatchIndicator(enum.Enum):
    NO_MATCH = "no_match"
    EXACT_MATCH = "exact_match"
    MULTIPLE_MATCH = "multiple_match"

    @property
    def token(self) -> str:
        return {"no_match": "<nomatch>", "exact_match": "<exactmatch>", "multiple_match": "<multimatch>"}[self.value]

    @property
    def index(self) -> int:
        return _MATCH_ORDER.index(self)

    @classmethod
    def from_count(cls, n: int) -> "MatchIndicator":
        if n == 0:
            return cls.NO_MATCH
        return cls.EXACT_MATCH if n == 1 else cls.MULTIPLE_MATCH


_MATCH_ORDER = [MatchIndicator.NO_MATCH, MatchIndicator.EXACT_MATCH, MatchIndicator.MULTIPLE_MATCH]


@dataclass(frozen=True)
class DomainSpec:
    name: str
    noun: str
    informable: dict[str, tuple[str, ...]]
    requestable: dict[str, tuple[str, ...]]
    request_keywords: dict[str, tuple[str, ...]]
    entity_name_pattern: str
    user_templates: dict
    nlg_templates: dict

    def __post_init__(self):
        self.validate()
        index = {v: s for s, vals in self.informable.items() for v in vals}
        object.__setattr__(self, "_value_index", index)

    @property
    def informable_slots(self) -> list[str]:
        return list(self.informable)

    @property
    def requestable_slots(self) -> list[str]:
        return list(self.requestable)

    def slot_of_value(self, token: str) -> str | None:
        return self._value_index.get(token)

    def validate(self) -> None:
        inf, req = set(self.informable), set(self.requestable)
        if len(inf) != len(self.informable) or len(req) != len(self.requestable):
            raise SchemaError(f"{self.name}: duplicate slot names")
        if inf & req:
            raise SchemaError(f"{self.name}: slots both informable and requestable: {sorted(inf & req)}")
        if NAME_SLOT in inf | req:
            raise SchemaError(f"{self.name}: slot name {NAME_SLOT!r} is reserved for entity names")
        seen: dict[str, str] = {}
        for slot, values in self.informable.items():
            if not values:
                raise SchemaError(f"{self.name}.{slot}: empty value vocabulary")
            for v in values:
                if tokenize(v) != [v]:
                    raise SchemaError(f"{self.name}.{slot}: value {v!r} is not a single lowercase token")
                if v in seen:
                    raise SchemaError(f"{self.name}: value {v!r} shared by slots {seen[v]} and {slot}")
                seen[v] = slot
        if set(self.request_keywords) != req:
            raise SchemaError(f"{self.name}: request keywords must cover exactly the requestable slots")
        for slot, vals in self.requestable.items():
            if not vals:
                raise SchemaError(f"{self.name}.{slot}: empty value vocabulary")
        templates = _iter_templates(self.user_templates, "user") + _iter_templates(self.nlg_templates, "system")
        for where, template in templates:
            for ref in _VALUE_REF.findall(template):
                if ref != "value" and ref not in inf:
                    raise SchemaError(f"{self.name} {where}: {{{ref}}} is not an informable slot")
            for ref in _PLACEHOLDER.findall(template):
                if ref != NAME_SLOT and ref not in req:
                    raise SchemaError(f"{self.name} {where}: <{ref}> is not a requestable slot")


def _iter_templates(tree, prefix):
    if isinstance(tree, dict):
        return [item for key, sub in tree.items() for item in _iter_templates(sub, f"{prefix}.{key}")]
    if isinstance(tree, list) and all(isinstance(t, str) for t in tree):
        return [(f"{prefix}[{i}]", t) for i, t in enumerate(tree)]
    raise SchemaError(f"{prefix}: templates must be lists of strings")


def load_domain(source) -> DomainSpec:
    """Load a domain from a YAML file path or a builtin domain name."""
    if isinstance(source, str) and source in BUILTIN_DOMAINS:
        text = resources.files("metadial.domains").joinpath(f"{source}.yaml").read_text(encoding="utf-8")
    else:
        text = Path(source).read_text(encoding="utf-8")
    raw = yaml.safe_load(text)
    try:
        informable = {s: tuple(str(v) for v in d["values"]) for s, d in raw["informable"].items()}
        requestable = {s: tuple(str(v) for v in d["values"]) for s, d in raw["requestable"].items()}
        keywords = {s: tuple(d["keywords"]) for s, d in raw["requestable"].items()}
        return DomainSpec(
            name=raw["name"],
            noun=raw.get("noun", raw["name"]),
            informable=informable,
            requestable=requestable,
            request_keywords=keywords,
            entity_name_pattern=raw["entity_name_pattern"],
            user_templates=raw["user_templates"],
            nlg_templates=raw["nlg_templates"],
        )
    except KeyError as exc:
        raise SchemaError(f"domain config missing key {exc}") from None


# ---------------------------------------------------------------- knowledge base

@dataclass(frozen=True)
class Entity:
    name: str
    values: dict[str, str]


@dataclass(frozen=True)
class KnowledgeBase:
    domain: str
    entities: tuple[Entity, ...]
    informable_slots: tuple[str, ...] = ()


def generate_kb(spec: DomainSpec, n: int = 100, seed: int = 0) -> KnowledgeBase:
    rng = random.Random(f"kb:{spec.name}:{seed}")
    ids = rng.sample(range(1, 10 * n + 1), n)
    entities = []
    for i in ids:
        values = {s: rng.choice(v) for s, v in spec.informable.items()}
        values.update({s: rng.choice(v) for s, v in spec.requestable.items()})
        entities.append(Entity(spec.entity_name_pattern.format(id=i), values))
    return KnowledgeBase(spec.name, tuple(entities), tuple(spec.informable))


def kb_query(kb: KnowledgeBase, constraints: dict[str, str], spec: DomainSpec | None = None):
    """Return ``(MatchIndicator, matching entities in KB order)``."""
    declared = set(spec.informable) if spec is not None else set(kb.informable_slots)
    unknown = set(constraints) - declared
    if (spec is not None or kb.informable_slots) and unknown:
        raise SchemaError(f"unknown informable slots for {kb.domain}: {sorted(unknown)}")
    hits = [e for e in kb.entities if all(e.values.get(s) == v for s, v in constraints.items())]
    return MatchIndicator.from_count(len(hits)), hits


# ---------------------------------------------------------------- belief state

@dataclass(frozen=True)
class BeliefState:
    inform: dict[str, str] = field(default_factory=dict)
    request: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "request", frozenset(self.request))
        object.__setattr__(self, "inform", dict(self.inform))

    def check(self, spec: DomainSpec) -> None:
        for s, v in self.inform.items():
            if s not in spec.informable or v not in spec.informable[s]:
                raise SchemaError(f"invalid inform {s}={v} for {spec.name}")
        bad = self.request - set(spec.requestable)
        if bad:
            raise SchemaError(f"invalid requests {sorted(bad)} for {spec.name}")

    def items(self) -> set[tuple]:
        """Slot items for Entity F1: inform pairs and requested slot names."""
        out = {("inform", s, v.lower()) for s, v in self.inform.items()}
        out |= {("request", r) for r in self.request}
        return out

    def to_json(self) -> dict:
        return {"inform": dict(self.inform), "request": sorted(self.request)}


def serialize_belief(b: BeliefState, spec: DomainSpec) -> list[str]:
    tokens = [INF]
    tokens += [b.inform[s].lower() for s in spec.informable if s in b.inform]
    tokens.append(REQ)
    tokens += sorted(b.request)
    tokens.append(EOS_B)
    return tokens


def parse_belief(tokens, spec: DomainSpec) -> tuple[BeliefState, int]:
    """Best-effort inverse of :func:`serialize_belief`; never raises on model output.

    Returns the state and the number of dropped (unmatchable) tokens.
    """
    inform: dict[str, str] = {}
    request: set[str] = set()
    dropped = 0
    in_request = False
    for tok in tokens:
        if tok == EOS_B:
            break
        if tok == REQ:
            in_request = True
            continue
        if tok == INF or (tok.startswith("<") and tok.endswith(">")):
            continue
        if in_request:
            if tok in spec.requestable and tok not in request:
                request.add(tok)
            else:
                dropped += 1
        else:
            slot = spec.slot_of_value(tok)
            if slot is None or slot in inform:
                dropped += 1
            else:
                inform[slot] = tok
    return BeliefState(inform, frozenset(request)), dropped


def update_belief(prev: BeliefState, decoded: BeliefState) -> BeliefState:
    """The decoder re-emits the whole state each turn, so the decoded state wins."""
    return decoded
