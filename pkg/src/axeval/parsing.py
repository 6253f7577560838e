"""Parsers that turn raw completion text into typed payloads.

Three payload shapes exist: a one-sentence commonsense axiom with an optional
knowledge type, an inference label with an optional explanation, and a 1-10
judge rating with an explanation. Parsers are pure and never raise on
arbitrary text beyond the declared error cases below.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .dataset import InferenceLabel


class ParseError(ValueError):
    """Base class for all declared parse failures."""


class EmptyResponse(ParseError):
    """Raw text was empty or whitespace-only."""


class UnparseableLabel(ParseError):
    """None of the three label words occurs in the text."""


class AmbiguousLabel(ParseError):
    """Two distinct label words appear before any ':' separator."""


class UnparseableRating(ParseError):
    """No standalone integer in 1..10 occurs in the text."""


@dataclass(frozen=True)
class ParsedAxiom:
    knowledge_type: str
    axiom: str
    sentence_count: int

    @property
    def multi_sentence(self) -> bool:
        return self.sentence_count > 1


@dataclass(frozen=True)
class ParsedLabel:
    label: InferenceLabel
    explanation: str


@dataclass(frozen=True)
class ParsedRating:
    rating: int
    explanation: str


_TYPE_SLOT = re.compile(r"type of commonsense knowledge\s*:\s*", re.IGNORECASE)
_AXIOM_SLOT = re.compile(r"(?<!type of )commonsense knowledge\s*:\s*", re.IGNORECASE)
_LABEL_WORD = re.compile(r"\b(entailment|contradiction|neutral)\b", re.IGNORECASE)
# standalone integer: not adjacent to other digits and not part of a decimal
_RATING = re.compile(r"(?<!\d)(?<!\d\.)(10|[1-9])(?!\d)(?!\.\d)")
_SENTENCE_END = re.compile(r"[.!?]+(?=\s|$)")
_LEAD_PUNCT = " \t\r\n.,;:!-–—/"


def _require_text(raw: str) -> str:
    if not raw or not raw.strip():
        raise EmptyResponse("response text is empty")
    return raw


def count_sentences(text: str) -> int:
    """Sentence count by terminal punctuation; unpunctuated text counts as one."""
    parts = [p for p in _SENTENCE_END.split(text) if re.search(r"\w", p)]
    return max(1, len(parts))


def parse_axiom(raw: str) -> ParsedAxiom:
    """Extract the knowledge-type and axiom slots, or fall back to the whole text.

    Multi-sentence axioms are kept whole and flagged via ``sentence_count``
    rather than truncated.
    """
    text = _require_text(raw).strip()
    axiom_match = _AXIOM_SLOT.search(text)
    knowledge_type = ""
    axiom = text
    if axiom_match:
        candidate = text[axiom_match.end():].strip()
        if candidate:
            axiom = candidate
            type_match = _TYPE_SLOT.search(text)
            if type_match and type_match.end() <= axiom_match.start():
                knowledge_type = text[type_match.end():axiom_match.start()].strip()
    return ParsedAxiom(
        knowledge_type=knowledge_type,
        axiom=axiom,
        sentence_count=count_sentences(axiom),
    )


def parse_label(raw: str) -> ParsedLabel:
    """Pick the earliest label word; the text after the following ':' explains it.

    When no colon follows the label, the remaining text (leading punctuation
    stripped) is kept as the explanation so post-prediction reasoning is not
    lost. Two distinct label words before the first ':' are ambiguous.
    """
    text = _require_text(raw)
    matches = list(_LABEL_WORD.finditer(text))
    if not matches:
        raise UnparseableLabel(f"no inference label found in {text[:120]!r}")

    first_colon = text.find(":")
    boundary = first_colon if first_colon != -1 else len(text)
    before = {m.group(1).lower() for m in matches if m.start() < boundary}
    if len(before) > 1:
        raise AmbiguousLabel(f"multiple labels before ':' in {text[:120]!r}")

    winner = matches[0]
    label = InferenceLabel.parse(winner.group(1))
    colon_after = text.find(":", winner.end())
    if colon_after != -1:
        explanation = text[colon_after + 1:].strip()
    else:
        explanation = text[winner.end():].lstrip(_LEAD_PUNCT).strip()
    return ParsedLabel(label=label, explanation=explanation)


def parse_rating(raw: str) -> ParsedRating:
    """First standalone integer in 1..10 is the rating ("10" wins over "1")."""
    text = _require_text(raw)
    match = _RATING.search(text)
    if not match:
        raise UnparseableRating(f"no 1-10 rating found in {text[:120]!r}")
    rating = int(match.group(1))
    explanation = text[match.end():].lstrip(_LEAD_PUNCT).strip()
    return ParsedRating(rating=rating, explanation=explanation)
