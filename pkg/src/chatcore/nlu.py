"""Utterance analysis: tokenization, topic detection, intent ranking, entity linking.

Everything here is pure and operates on immutable bot assets, so a loaded bot
can analyze utterances from any number of conversations concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping, Optional, Sequence

if TYPE_CHECKING:
    from .store import BotDefinition

# Punctuation split off token edges; apostrophes and hyphens inside a word stay put.
SPLIT_PUNCT = frozenset(".,!?;:'\"()")

ENTITY_TYPES = ("PERSON", "ORG", "PLACE", "THING")

DEFAULT_INTENT_THRESHOLD = 0.75

GENERAL_TOPIC = "general"


@dataclass(frozen=True)
class Token:
    """One token with its [start, end) character span into the source text."""

    surface: str
    normalized: str
    start: int
    end: int


@dataclass(frozen=True)
class IntentDefinition:
    name: str
    examples: tuple[str, ...]
    threshold: Optional[float] = None


@dataclass(frozen=True)
class TopicDefinition:
    name: str
    keywords: Mapping[str, float]


@dataclass(frozen=True)
class EntityRecord:
    id: str
    canonical: str
    type_tag: str
    aliases: tuple[str, ...]  # includes the canonical form
    description: str = ""


@dataclass(frozen=True)
class EntityMention:
    """A linked gazetteer hit over the token range [start, end)."""

    start: int
    end: int
    candidates: tuple[str, ...]
    resolved: str
    score: int


@dataclass(frozen=True)
class SemanticFrame:
    """Structured reading of one utterance: topic, intent ranking, entity links."""

    raw: str
    resolved: str
    tokens: tuple[Token, ...]
    topic: tuple[str, float]
    intents: tuple[tuple[str, float], ...]
    mentions: tuple[EntityMention, ...]

    def top_intent(self) -> Optional[tuple[str, float]]:
        return self.intents[0] if self.intents else None

    def mention_ids(self) -> tuple[str, ...]:
        return tuple(m.resolved for m in self.mentions)


def tokenize(raw: str) -> list[Token]:
    """Split text into tokens whose spans reconstruct the input.

    Whitespace separates chunks; leading and trailing punctuation from
    SPLIT_PUNCT becomes standalone tokens; interior apostrophes and hyphens
    stay inside the word ("don't", "check-in").
    """
    tokens: list[Token] = []
    i, n = 0, len(raw)
    while i < n:
        if raw[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not raw[j].isspace():
            j += 1
        start, end = i, j
        while start < end and raw[start] in SPLIT_PUNCT:
            tokens.append(_token(raw, start, start + 1))
            start += 1
        trailing: list[tuple[int, int]] = []
        while end > start and raw[end - 1] in SPLIT_PUNCT:
            trailing.append((end - 1, end))
            end -= 1
        if start < end:
            tokens.append(_token(raw, start, end))
        tokens.extend(_token(raw, s, e) for s, e in reversed(trailing))
        i = j
    return tokens


def _token(raw: str, start: int, end: int) -> Token:
    surface = raw[start:end]
    return Token(surface=surface, normalized=surface.casefold(), start=start, end=end)


def join_tokens(words: Iterable[str]) -> str:
    """Rebuild text with a single space before each non-punctuation token."""
    out: list[str] = []
    for word in words:
        if out and not (word and word[0] in SPLIT_PUNCT):
            out.append(" ")
        out.append(word)
    return "".join(out)


def content_words(tokens: Sequence[Token], stopwords: frozenset[str]) -> list[str]:
    """Normalized non-stopword tokens that carry at least one alphanumeric char."""
    return [
        t.normalized
        for t in tokens
        if t.normalized not in stopwords and any(ch.isalnum() for ch in t.normalized)
    ]


class EmbeddingTable:
    """Immutable word-vector table; lookups are case-folded."""

    def __init__(self, dimension: int, entries: Mapping[str, Sequence[float]]):
        if dimension <= 0:
            raise ValueError("embedding dimension must be positive")
        table: dict[str, tuple[float, ...]] = {}
        for word, vector in entries.items():
            vec = tuple(float(v) for v in vector)
            if len(vec) != dimension:
                raise ValueError(
                    f"vector for {word!r} has length {len(vec)}, expected {dimension}"
                )
            table[word.casefold()] = vec
        self._dimension = dimension
        self._table = table

    @property
    def dimension(self) -> int:
        return self._dimension

    def get(self, word: str) -> Optional[tuple[float, ...]]:
        return self._table.get(word.casefold())

    def __contains__(self, word: str) -> bool:
        return word.casefold() in self._table

    def __len__(self) -> int:
        return len(self._table)

    def words(self) -> frozenset[str]:
        return frozenset(self._table)


def embed_utterance(
    tokens: Sequence[Token],
    table: EmbeddingTable,
    stopwords: frozenset[str],
) -> Optional[tuple[float, ...]]:
    """Mean vector over non-stopword tokens found in the table; None if none qualify."""
    vectors = [
        table.get(t.normalized)
        for t in tokens
        if t.normalized not in stopwords and t.normalized in table
    ]
    if not vectors:
        return None
    d = table.dimension
    return tuple(sum(vec[k] for vec in vectors) / len(vectors) for k in range(d))


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    # Rounding can push identical vectors a hair past 1; keep scores in [-1, 1].
    return max(-1.0, min(1.0, dot / (nu * nv)))


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


@dataclass(frozen=True)
class PreparedExample:
    """Intent example with its precomputed vector and content-token set."""

    text: str
    vector: Optional[tuple[float, ...]]
    tokens: frozenset[str]


def prepare_intent_examples(
    intents: Sequence[IntentDefinition],
    table: EmbeddingTable,
    stopwords: frozenset[str],
) -> dict[str, tuple[PreparedExample, ...]]:
    prepared: dict[str, tuple[PreparedExample, ...]] = {}
    for intent in intents:
        examples = []
        for text in intent.examples:
            toks = tokenize(text)
            examples.append(
                PreparedExample(
                    text=text,
                    vector=embed_utterance(toks, table, stopwords),
                    tokens=frozenset(content_words(toks, stopwords)),
                )
            )
        prepared[intent.name] = tuple(examples)
    return prepared


def classify_intent(
    tokens: Sequence[Token],
    intents: Sequence[IntentDefinition],
    table: EmbeddingTable,
    stopwords: frozenset[str],
    prepared: Optional[Mapping[str, tuple[PreparedExample, ...]]] = None,
) -> list[tuple[str, float]]:
    """Rank every intent by max-over-examples similarity to the utterance.

    Scores are cosine over mean word vectors; when the utterance (or an
    intent's whole example set) has no vector, the score falls back to the
    best Jaccard overlap of content-token sets. Sorted by score descending,
    ties by intent name ascending.
    """
    if prepared is None:
        prepared = prepare_intent_examples(intents, table, stopwords)
    uvec = embed_utterance(tokens, table, stopwords)
    uset = frozenset(content_words(tokens, stopwords))
    scored: list[tuple[str, float]] = []
    for intent in intents:
        examples = prepared[intent.name]
        vectors = [ex.vector for ex in examples if ex.vector is not None]
        if uvec is not None and vectors:
            score = max(cosine(uvec, vec) for vec in vectors)
        else:
            score = max((jaccard(uset, ex.tokens) for ex in examples), default=0.0)
        scored.append((intent.name, score))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored


def detect_topic(
    tokens: Sequence[Token],
    topics: Sequence[TopicDefinition],
) -> tuple[str, float]:
    """Weighted-keyword topic vote; ("general", 0) when nothing matches.

    raw(t) sums the weights of t's keywords present among the normalized
    tokens; confidence is raw / (1 + raw). Ties break on topic name.
    """
    present = {t.normalized for t in tokens}
    best_name, best_raw = GENERAL_TOPIC, 0.0
    for topic in sorted(topics, key=lambda t: t.name):
        raw = sum(w for kw, w in topic.keywords.items() if kw.casefold() in present)
        if raw > best_raw:
            best_name, best_raw = topic.name, raw
    if best_raw == 0.0:
        return (GENERAL_TOPIC, 0.0)
    return (best_name, best_raw / (1.0 + best_raw))


AliasIndex = dict[tuple[str, ...], tuple[str, ...]]


def build_alias_index(records: Sequence[EntityRecord]) -> AliasIndex:
    """Map normalized alias token tuples to the sorted ids sharing that alias."""
    index: dict[tuple[str, ...], set[str]] = {}
    for record in records:
        for alias in record.aliases:
            key = tuple(t.normalized for t in tokenize(alias))
            if key:
                index.setdefault(key, set()).add(record.id)
    return {key: tuple(sorted(ids)) for key, ids in index.items()}


def link_entities(
    tokens: Sequence[Token],
    records: Sequence[EntityRecord],
    index: Optional[AliasIndex] = None,
) -> list[EntityMention]:
    """Greedy longest-match gazetteer scan with description-overlap disambiguation."""
    if index is None:
        index = build_alias_index(records)
    if not index:
        return []
    by_id = {r.id: r for r in records}
    max_len = max(len(key) for key in index)
    normalized = [t.normalized for t in tokens]
    mentions: list[EntityMention] = []
    i = 0
    while i < len(normalized):
        match_len = 0
        candidates: tuple[str, ...] = ()
        for l in range(min(max_len, len(normalized) - i), 0, -1):
            ids = index.get(tuple(normalized[i : i + l]))
            if ids:
                match_len, candidates = l, ids
                break
        if not match_len:
            i += 1
            continue
        other = frozenset(normalized[:i] + normalized[i + match_len :])
        resolved, score = _disambiguate(candidates, by_id, other)
        mentions.append(
            EntityMention(
                start=i,
                end=i + match_len,
                candidates=candidates,
                resolved=resolved,
                score=score,
            )
        )
        i += match_len
    return mentions


def _disambiguate(
    candidates: tuple[str, ...],
    by_id: Mapping[str, EntityRecord],
    other_tokens: frozenset[str],
) -> tuple[str, int]:
    # Largest overlap between the candidate's description/alias tokens and the
    # rest of the utterance wins; ties fall to the ascending-id order of the index.
    best_id, best_score = candidates[0], -1
    for cid in candidates:
        record = by_id[cid]
        vocab = {t.normalized for t in tokenize(record.description)}
        for alias in record.aliases:
            vocab.update(t.normalized for t in tokenize(alias))
        score = len(vocab & other_tokens)
        if score > best_score:
            best_id, best_score = cid, score
    return best_id, max(best_score, 0)


def analyze(resolved: str, bot: "BotDefinition", raw: Optional[str] = None) -> SemanticFrame:
    """Run the full understanding pass over coreference-resolved text."""
    tokens = tuple(tokenize(resolved))
    topic = detect_topic(tokens, bot.topics)
    intents = tuple(
        classify_intent(
            tokens, bot.intents, bot.embeddings, bot.stopwords, bot.intent_examples
        )
    )
    mentions = tuple(link_entities(tokens, bot.entities, bot.alias_index))
    return SemanticFrame(
        raw=resolved if raw is None else raw,
        resolved=resolved,
        tokens=tokens,
        topic=topic,
        intents=intents,
        mentions=mentions,
    )
