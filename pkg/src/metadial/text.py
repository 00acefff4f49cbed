"""Tokenization for generated dialog text.

Text is lowercased and split into words and single punctuation marks.
Hyphenated values ("san-francisco"), contractions ("don't") and
placeholder tokens ("<price>") stay whole.  Generated corpus text is stored
pre-tokenized and space-joined, so ``detokenize(tokenize(x)) == x`` there.
"""

from __future__ import annotations

import re

_TOKEN = re.compile(r"<[a-z_]+>|[a-z0-9]+(?:['\-][a-z0-9]+)*|[^\sa-z0-9]")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def detokenize(tokens) -> str:
    return " ".join(tokens)


def normalize(text: str) -> str:
    return detokenize(tokenize(text))
