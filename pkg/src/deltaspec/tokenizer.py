"""Shared tokenizer: one rule, used by every stage that counts tokens.

A token is either a maximal run of word characters or a maximal run of
non-space punctuation. Whitespace never appears in a token. The same rule is
applied to RFC prose and to C source so that token budgets, chunk spans and
cost accounting all agree with each other.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator

_TOKEN_RE = re.compile(r"\w+|[^\w\s]+")


@dataclass(frozen=True)
class Token:
    """A token plus its [start, end) character span in the source text."""

    text: str
    start: int
    end: int


def iter_tokens(text: str) -> Iterator[Token]:
    for m in _TOKEN_RE.finditer(text):
        yield Token(m.group(0), m.start(), m.end())


def tokenize(text: str) -> list[Token]:
    """Tokens with spans; offsets index into ``text`` exactly."""
    return list(iter_tokens(text))


def token_texts(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def count_tokens(text: str) -> int:
    """Number of tokens in ``text``; empty input counts zero."""
    return sum(1 for _ in _TOKEN_RE.finditer(text))
