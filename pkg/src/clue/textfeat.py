"""Linguistic features of a lecture transcript.

Fourteen bag-of-words and readability statistics are computed from the
transcript, the title and the recording length. Closed-class word rates are
lexicon lookups (no tagger); lexicons ship as versioned text files in
``clue/lexicons``.
"""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import astuple, dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import SchemaError

FEATURE_NAMES = (
    "conjugate_rate",
    "pronoun_rate",
    "preposition_rate",
    "tobe_verb_rate",
    "auxiliary_rate",
    "normalization_rate",
    "fraction_stopword_coverage",
    "fraction_stopword_presence",
    "easiness",
    "document_entropy",
    "word_count",
    "title_word_count",
    "duration",
    "speaker_speed",
)

FRACTION_FIELDS = FEATURE_NAMES[:8]

_TOKEN_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)*")
_SENTENCE_END_RE = re.compile(r"[.!?]+")
_VOWEL_GROUP_RE = re.compile(r"[aeiouy]+")


@dataclass(frozen=True)
class TextFeatureVector:
    conjugate_rate: float
    pronoun_rate: float
    preposition_rate: float
    tobe_verb_rate: float
    auxiliary_rate: float
    normalization_rate: float
    fraction_stopword_coverage: float
    fraction_stopword_presence: float
    easiness: float
    document_entropy: float
    word_count: float
    title_word_count: float
    duration: float
    speaker_speed: float

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    def to_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_array(cls, values) -> "TextFeatureVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (len(FEATURE_NAMES),):
            raise SchemaError(f"expected {len(FEATURE_NAMES)} feature values, got shape {values.shape}")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class LexiconSet:
    conjunctions: frozenset[str]
    pronouns: frozenset[str]
    prepositions: frozenset[str]
    tobe_verbs: frozenset[str]
    auxiliaries: frozenset[str]
    stopwords: frozenset[str]
    normalization_suffixes: tuple[str, ...]
    version: str


_LEXICON_FILES = {
    "conjunctions": "conjunctions.txt",
    "pronouns": "pronouns.txt",
    "prepositions": "prepositions.txt",
    "tobe_verbs": "tobe_verbs.txt",
    "auxiliaries": "auxiliaries.txt",
    "stopwords": "stopwords.txt",
    "normalization_suffixes": "normalization_suffixes.txt",
}


def parse_lexicon(text: str) -> list[str]:
    """One entry per line; ``#`` starts a comment; blank lines ignored."""
    entries = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            entries.append(" ".join(line.split()))
    return entries


def load_lexicons(overrides: dict[str, str | Path] | None = None) -> LexiconSet:
    """Load the shipped lexicons, optionally replacing some with files on disk.

    The version string is a SHA-256 digest over all seven files so that two
    feature tables computed with different word lists never look comparable.
    """
    overrides = dict(overrides or {})
    unknown = set(overrides) - set(_LEXICON_FILES)
    if unknown:
        raise SchemaError(f"unknown lexicon name(s): {sorted(unknown)}")

    digest = hashlib.sha256()
    parsed = {}
    pkg = resources.files("clue") / "lexicons"
    for name, filename in _LEXICON_FILES.items():
        if name in overrides:
            raw = Path(overrides[name]).read_text(encoding="utf-8")
        else:
            raw = (pkg / filename).read_text(encoding="utf-8")
        entries = parse_lexicon(raw)
        if not entries:
            raise SchemaError(f"lexicon {name!r} is empty")
        digest.update(name.encode())
        digest.update(b"\0")
        digest.update(raw.encode("utf-8"))
        parsed[name] = entries

    return LexiconSet(
        conjunctions=frozenset(parsed["conjunctions"]),
        pronouns=frozenset(parsed["pronouns"]),
        prepositions=frozenset(parsed["prepositions"]),
        tobe_verbs=frozenset(parsed["tobe_verbs"]),
        auxiliaries=frozenset(parsed["auxiliaries"]),
        stopwords=frozenset(parsed["stopwords"]),
        normalization_suffixes=tuple(parsed["normalization_suffixes"]),
        version=digest.hexdigest()[:16],
    )


_DEFAULT_LEXICONS: LexiconSet | None = None


def default_lexicons() -> LexiconSet:
    global _DEFAULT_LEXICONS
    if _DEFAULT_LEXICONS is None:
        _DEFAULT_LEXICONS = load_lexicons()
    return _DEFAULT_LEXICONS


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; apostrophes survive only between word characters."""
    text = text.replace("’", "'").lower()
    return _TOKEN_RE.findall(text)


def count_syllables(word: str) -> int:
    word = word.lower()
    count = len(_VOWEL_GROUP_RE.findall(word))
    if count > 1 and word.endswith("e"):
        count -= 1
    return max(1, count)


def count_sentences(text: str) -> int:
    return max(1, len(_SENTENCE_END_RE.findall(text)))


def flesch_easiness(text: str) -> float:
    """Flesch reading ease; 0.0 for text without words."""
    words = tokenize(text)
    if not words:
        return 0.0
    n_words = len(words)
    n_sents = count_sentences(text)
    n_syll = sum(count_syllables(w) for w in words)
    return 206.835 - 1.015 * (n_words / n_sents) - 84.6 * (n_syll / n_words)


def count_auxiliaries(tokens: list[str], auxiliaries: frozenset[str]) -> int:
    """Two-word entries are matched first and consume both tokens."""
    bigrams = {a for a in auxiliaries if " " in a}
    unigrams = {a for a in auxiliaries if " " not in a}
    consumed = [False] * len(tokens)
    count = 0
    i = 0
    while i < len(tokens) - 1:
        if f"{tokens[i]} {tokens[i + 1]}" in bigrams:
            consumed[i] = consumed[i + 1] = True
            count += 1
            i += 2
        else:
            i += 1
    count += sum(1 for tok, used in zip(tokens, consumed) if not used and tok in unigrams)
    return count


def _has_suffix(token: str, suffixes: tuple[str, ...]) -> bool:
    return any(len(token) > len(s) and token.endswith(s) for s in suffixes)


def shannon_entropy_bits(counts) -> float:
    counts = np.asarray(list(counts), dtype=float)
    total = counts.sum()
    if total <= 0:
        return 0.0
    p = counts / total
    return float(max(0.0, -np.sum(p * np.log2(p))))


def extract_text_features(
    transcript: str,
    title: str,
    duration: float,
    lexicons: LexiconSet | None = None,
) -> TextFeatureVector:
    if not duration > 0 or not math.isfinite(duration):
        raise SchemaError(f"duration must be a positive number of seconds, got {duration!r}")
    lex = lexicons or default_lexicons()

    tokens = tokenize(transcript)
    n = len(tokens)
    title_words = len(tokenize(title))
    speed = n / (duration / 60.0)

    if n == 0:
        return TextFeatureVector(
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            easiness=flesch_easiness(transcript),
            document_entropy=0.0,
            word_count=0.0,
            title_word_count=float(title_words),
            duration=float(duration),
            speaker_speed=0.0,
        )

    counts = Counter(tokens)

    def rate(lexicon) -> float:
        return sum(c for tok, c in counts.items() if tok in lexicon) / n

    stop_present = [tok for tok in counts if tok in lex.stopwords]
    stop_tokens = sum(counts[tok] for tok in stop_present)
    norm_tokens = sum(c for tok, c in counts.items() if _has_suffix(tok, lex.normalization_suffixes))

    return TextFeatureVector(
        conjugate_rate=rate(lex.conjunctions),
        pronoun_rate=rate(lex.pronouns),
        preposition_rate=rate(lex.prepositions),
        tobe_verb_rate=rate(lex.tobe_verbs),
        auxiliary_rate=count_auxiliaries(tokens, lex.auxiliaries) / n,
        normalization_rate=norm_tokens / n,
        fraction_stopword_coverage=len(stop_present) / len(lex.stopwords),
        fraction_stopword_presence=stop_tokens / n,
        easiness=flesch_easiness(transcript),
        document_entropy=shannon_entropy_bits(counts[t] for t in sorted(counts)),
        word_count=float(n),
        title_word_count=float(title_words),
        duration=float(duration),
        speaker_speed=speed,
    )
