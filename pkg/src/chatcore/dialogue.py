"""Dialogue management: rule templates, KB question answering, retrieval,
Markov generation, and the strategy cascade that orders them."""

from __future__ import annotations

import hashlib
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Optional, Protocol, Sequence

from .nlu import (
    EntityMention,
    EntityRecord,
    SemanticFrame,
    content_words,
    join_tokens,
    tokenize,
)

if TYPE_CHECKING:
    from .context import ConversationState
    from .store import BotDefinition

SOURCE_BACKSTORY = "rule:backstory"
SOURCE_INTENT = "rule:intent"
SOURCE_ENTITY = "rule:entity"
SOURCE_KB = "kb"
SOURCE_RETRIEVAL = "retrieval"
SOURCE_GENERATIVE = "generative"
SOURCE_FALLBACK = "fallback"

RULE_SOURCES = (SOURCE_BACKSTORY, SOURCE_INTENT, SOURCE_ENTITY)
ALL_SOURCES = RULE_SOURCES + (
    SOURCE_KB,
    SOURCE_RETRIEVAL,
    SOURCE_GENERATIVE,
    SOURCE_FALLBACK,
)

DEFAULT_PRIORITIES = {
    SOURCE_BACKSTORY: 300,
    SOURCE_INTENT: 200,
    SOURCE_ENTITY: 100,
    SOURCE_KB: 150,
    SOURCE_RETRIEVAL: 50,
    SOURCE_GENERATIVE: 40,
    SOURCE_FALLBACK: 0,
}

# Lower value = earlier cascade stage; used as a ranking tie-break.
STAGE_ORDER = {
    SOURCE_BACKSTORY: 0,
    SOURCE_INTENT: 0,
    SOURCE_ENTITY: 0,
    SOURCE_KB: 1,
    SOURCE_RETRIEVAL: 2,
    SOURCE_GENERATIVE: 3,
    SOURCE_FALLBACK: 4,
}

FALLBACK_TEXT = "I'm not sure I follow — tell me more."

QUESTION_CUES = frozenset({"who", "what", "where", "when", "how"})
DESCRIPTION_CUES = frozenset({"who", "what"})

MAX_GENERATED_TOKENS = 20

_SLOT_RE = re.compile(r"\{([A-Za-z_]+)\}")
_PLACEHOLDER_RE = re.compile(r"^<([A-Za-z_]+)>$")


@dataclass(frozen=True)
class RuleTemplate:
    kind: str  # "backstory" | "intent" | "entity"
    trigger: str
    response: str
    priority: int
    order: int = 0  # position in the template file, used to break priority ties


@dataclass(frozen=True)
class KnowledgeTriple:
    subject: str
    predicate: str
    object: str


@dataclass
class CandidateReply:
    text: str
    source: str
    priority: int
    engagement: float = 0.0
    filter_flags: set[str] = field(default_factory=set)


def fallback_candidate() -> CandidateReply:
    return CandidateReply(
        text=FALLBACK_TEXT,
        source=SOURCE_FALLBACK,
        priority=DEFAULT_PRIORITIES[SOURCE_FALLBACK],
    )


# --------------------------------------------------------------------------
# Rule templates
# --------------------------------------------------------------------------

def pattern_elements(pattern: str) -> list[str]:
    """Split a backstory pattern into literal / "*" / "<TYPE>" elements."""
    return pattern.split()


def placeholder_type(element: str) -> Optional[str]:
    match = _PLACEHOLDER_RE.match(element)
    return match.group(1) if match else None


def response_slots(response: str) -> list[str]:
    return _SLOT_RE.findall(response)


def match_templates(
    frame: SemanticFrame,
    templates: Sequence[RuleTemplate],
    thresholds: Mapping[str, float],
    entities_by_id: Mapping[str, EntityRecord],
) -> list[CandidateReply]:
    """One candidate per firing template, priority-descending, file order on ties."""
    intent_scores = dict(frame.intents)
    hits: list[tuple[RuleTemplate, Optional[str]]] = []
    for template in templates:
        text = _fire_template(template, frame, intent_scores, thresholds, entities_by_id)
        if text is not None:
            hits.append((template, text))
    hits.sort(key=lambda item: (-item[0].priority, item[0].order))
    return [
        CandidateReply(text=text, source=f"rule:{t.kind}", priority=t.priority)
        for t, text in hits
    ]


def _fire_template(
    template: RuleTemplate,
    frame: SemanticFrame,
    intent_scores: Mapping[str, float],
    thresholds: Mapping[str, float],
    entities_by_id: Mapping[str, EntityRecord],
) -> Optional[str]:
    bindings: dict[str, EntityMention] = {}
    if template.kind == "backstory":
        if not _match_pattern(
            pattern_elements(template.trigger), frame, entities_by_id, bindings
        ):
            return None
    elif template.kind == "intent":
        score = intent_scores.get(template.trigger)
        if score is None or score < thresholds.get(template.trigger, 1.0):
            return None
    elif template.kind == "entity":
        mention = _first_mention_of_type(frame, template.trigger, entities_by_id)
        if mention is None:
            return None
        bindings[template.trigger] = mention
    else:
        return None
    return _substitute(template.response, frame, bindings, entities_by_id)


def _first_mention_of_type(
    frame: SemanticFrame,
    type_tag: str,
    entities_by_id: Mapping[str, EntityRecord],
) -> Optional[EntityMention]:
    for mention in frame.mentions:
        record = entities_by_id.get(mention.resolved)
        if record is not None and record.type_tag == type_tag:
            return mention
    return None


def _match_pattern(
    elements: list[str],
    frame: SemanticFrame,
    entities_by_id: Mapping[str, EntityRecord],
    bindings: dict[str, EntityMention],
) -> bool:
    tokens = [t.normalized for t in frame.tokens]
    mentions_at = {m.start: m for m in frame.mentions}

    def step(e: int, t: int) -> bool:
        if e == len(elements):
            return t == len(tokens)
        element = elements[e]
        if element == "*":
            # Greedy: swallow as much as possible first.
            for skip in range(len(tokens) - t, -1, -1):
                if step(e + 1, t + skip):
                    return True
            return False
        placeholder = placeholder_type(element)
        if placeholder is not None:
            mention = mentions_at.get(t)
            if mention is None:
                return False
            record = entities_by_id.get(mention.resolved)
            if record is None or record.type_tag != placeholder:
                return False
            bindings[placeholder] = mention
            if step(e + 1, mention.end):
                return True
            bindings.pop(placeholder, None)
            return False
        if t < len(tokens) and tokens[t] == element.casefold():
            return step(e + 1, t + 1)
        return False

    return step(0, 0)


def _substitute(
    response: str,
    frame: SemanticFrame,
    bindings: Mapping[str, EntityMention],
    entities_by_id: Mapping[str, EntityRecord],
) -> Optional[str]:
    def fill(match: re.Match[str]) -> str:
        slot = match.group(1)
        if slot == "topic":
            return frame.topic[0]
        if slot == "entity":
            if not frame.mentions:
                raise _UnfillableSlot(slot)
            return entities_by_id[frame.mentions[0].resolved].canonical
        mention = bindings.get(slot)
        if mention is None:
            raise _UnfillableSlot(slot)
        return entities_by_id[mention.resolved].canonical

    try:
        return _SLOT_RE.sub(fill, response)
    except _UnfillableSlot:
        return None


class _UnfillableSlot(Exception):
    """Raised when a response slot has nothing to bind to at chat time."""


# --------------------------------------------------------------------------
# Knowledge-base question answering
# --------------------------------------------------------------------------

def answer_from_kb(
    frame: SemanticFrame,
    triples: Sequence[KnowledgeTriple],
    predicate_lexicon: Mapping[str, str],
    entities_by_id: Mapping[str, EntityRecord],
    stopwords: frozenset[str],
) -> Optional[CandidateReply]:
    """Answer a cue-word question about a linked entity, or signal fall-through."""
    if not frame.mentions:
        return None
    normalized = [t.normalized for t in frame.tokens]
    has_cue = bool(QUESTION_CUES.intersection(normalized)) or frame.resolved.rstrip().endswith("?")
    if not has_cue:
        return None
    predicates: list[str] = []
    for word in content_words(frame.tokens, stopwords):
        predicate = predicate_lexicon.get(word)
        if predicate is not None and predicate not in predicates:
            predicates.append(predicate)
    mention_ids = set(frame.mention_ids())
    if predicates:
        wanted = set(predicates)
        for triple in triples:  # file order decides among multiple facts
            if triple.subject in mention_ids and triple.predicate in wanted:
                return CandidateReply(
                    text=_format_object(triple.object, entities_by_id),
                    source=SOURCE_KB,
                    priority=DEFAULT_PRIORITIES[SOURCE_KB],
                )
        return None
    if DESCRIPTION_CUES.intersection(normalized):
        record = entities_by_id.get(frame.mentions[0].resolved)
        if record is not None and record.description:
            return CandidateReply(
                text=record.description,
                source=SOURCE_KB,
                priority=DEFAULT_PRIORITIES[SOURCE_KB],
            )
    return None


def _format_object(obj: str, entities_by_id: Mapping[str, EntityRecord]) -> str:
    record = entities_by_id.get(obj)
    return record.canonical if record is not None else obj


# --------------------------------------------------------------------------
# TF-IDF retrieval
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RetrievalDocument:
    id: int
    text: str
    timestamp_ms: int
    vector: Mapping[str, float]
    norm: float


@dataclass(frozen=True)
class RetrievalIndex:
    documents: tuple[RetrievalDocument, ...]
    doc_freq: Mapping[str, int]

    @property
    def size(self) -> int:
        return len(self.documents)

    def idf(self, word: str) -> float:
        return math.log(self.size / (1 + self.doc_freq.get(word, 0))) + 1.0


def score_documents(
    frame: SemanticFrame,
    index: RetrievalIndex,
    stopwords: frozenset[str],
) -> list[tuple[RetrievalDocument, float]]:
    """tf-idf cosine per document, positive scores only, best first.

    Ties prefer the newer timestamp, then the lower document id.
    """
    if index.size == 0:
        return []
    counts = Counter(content_words(frame.tokens, stopwords))
    if not counts:
        return []
    query = {word: count * index.idf(word) for word, count in counts.items()}
    qnorm = math.sqrt(sum(w * w for w in query.values()))
    if qnorm == 0.0:
        return []
    scored: list[tuple[float, RetrievalDocument]] = []
    for doc in index.documents:
        dot = sum(weight * doc.vector.get(word, 0.0) for word, weight in query.items())
        if dot <= 0.0 or doc.norm == 0.0:
            continue
        scored.append((dot / (qnorm * doc.norm), doc))
    scored.sort(key=lambda item: (-item[0], -item[1].timestamp_ms, item[1].id))
    return [(doc, score) for score, doc in scored]


def retrieve_candidates(
    frame: SemanticFrame,
    index: RetrievalIndex,
    stopwords: frozenset[str],
    k: int = 3,
) -> list[CandidateReply]:
    """Top-k corpus sentences by tf-idf cosine similarity to the utterance."""
    if k <= 0:
        return []
    return [
        CandidateReply(
            text=doc.text,
            source=SOURCE_RETRIEVAL,
            priority=DEFAULT_PRIORITIES[SOURCE_RETRIEVAL],
        )
        for doc, _ in score_documents(frame, index, stopwords)[:k]
    ]


# --------------------------------------------------------------------------
# Markov baseline generation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorModel:
    """Order-2 word-chain over the corpus; a stand-in behind the generation contract."""

    transitions: Mapping[tuple[str, str], tuple[str, ...]]
    starts: Mapping[str, tuple[tuple[str, str], ...]]
    vocabulary: frozenset[str]

    @property
    def empty(self) -> bool:
        return not self.transitions


def build_generator_model(texts: Sequence[str]) -> GeneratorModel:
    transitions: dict[tuple[str, str], list[str]] = {}
    starts: dict[str, set[tuple[str, str]]] = {}
    vocabulary: set[str] = set()
    for text in texts:
        words = [t.normalized for t in tokenize(text)]
        vocabulary.update(words)
        for i in range(len(words) - 2):
            pair = (words[i], words[i + 1])
            transitions.setdefault(pair, []).append(words[i + 2])
        for i in range(len(words) - 1):
            starts.setdefault(words[i], set()).add((words[i], words[i + 1]))
    return GeneratorModel(
        transitions={pair: tuple(succ) for pair, succ in transitions.items()},
        starts={word: tuple(sorted(pairs)) for word, pairs in starts.items()},
        vocabulary=frozenset(vocabulary),
    )


def _stable_seed(conversation_id: str, turn_index: int) -> int:
    digest = hashlib.sha256(f"{conversation_id}:{turn_index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def generate_candidate(
    frame: SemanticFrame,
    conversation_id: str,
    turn_index: int,
    model: GeneratorModel,
    index: RetrievalIndex,
    stopwords: frozenset[str],
    known_words: frozenset[str],
) -> Optional[CandidateReply]:
    """Deterministic chain walk from the utterance's strongest in-vocabulary word.

    Without a usable seed the reply degrades to an echo prompt about the last
    content word the bot knows; if the bot knows none, no candidate is produced
    and the cascade's canned fallback carries the turn.
    """
    contents = content_words(frame.tokens, stopwords)
    counts = Counter(contents)
    seeds = [w for w in counts if w in model.starts]
    if not model.empty and seeds:
        seeds.sort(key=lambda w: (-counts[w] * index.idf(w), w))
        text = _walk_chain(model, seeds[0], _stable_seed(conversation_id, turn_index))
    else:
        target = next((w for w in reversed(contents) if w in known_words), None)
        if target is None:
            return None
        text = f"Tell me more about {target}."
    return CandidateReply(
        text=text,
        source=SOURCE_GENERATIVE,
        priority=DEFAULT_PRIORITIES[SOURCE_GENERATIVE],
    )


def _walk_chain(model: GeneratorModel, seed_word: str, seed: int) -> str:
    rng = random.Random(seed)
    starts = model.starts[seed_word]
    pair = starts[rng.randrange(len(starts))]
    words = [pair[0], pair[1]]
    while len(words) < MAX_GENERATED_TOKENS:
        successors = model.transitions.get((words[-2], words[-1]))
        if not successors:
            break
        words.append(successors[rng.randrange(len(successors))])
    return join_tokens(words)


# --------------------------------------------------------------------------
# Fresh-text source (stand-in for a live short-text feed)
# --------------------------------------------------------------------------

class FreshTextSource(Protocol):
    def fetch(self, query: str, max_count: int) -> list[tuple[str, int]]:
        """Return up to max_count (text, timestamp_ms) items relevant to the query."""
        ...


class LocalFileSource:
    """Reads `timestamp_ms<TAB>text` lines from a local file, newest first."""

    def __init__(self, path: str):
        self.path = path

    def fetch(self, query: str, max_count: int) -> list[tuple[str, int]]:
        query_words = {t.normalized for t in tokenize(query) if t.normalized.isalnum()}
        items: list[tuple[str, int]] = []
        with open(self.path, encoding="utf-8") as handle:
            for line in handle:
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                timestamp, _, text = line.partition("\t")
                if not text:
                    continue
                words = {t.normalized for t in tokenize(text)}
                if query_words and not query_words.intersection(words):
                    continue
                items.append((text, int(timestamp)))
        items.sort(key=lambda item: -item[1])
        return items[:max_count]


# --------------------------------------------------------------------------
# The cascade
# --------------------------------------------------------------------------

def plan(
    frame: SemanticFrame,
    state: "ConversationState",
    bot: "BotDefinition",
) -> list[CandidateReply]:
    """Run the strategy cascade; always returns at least one candidate.

    Stage 1: rule templates (short-circuit). Stage 2: KB answer (short-circuit).
    Stage 3: union of retrieval, generation, and the canned fallback.
    """
    rules = match_templates(frame, bot.templates, bot.intent_thresholds, bot.entities_by_id)
    if rules:
        return rules
    kb = answer_from_kb(
        frame, bot.triples, bot.predicate_lexicon, bot.entities_by_id, bot.stopwords
    )
    if kb is not None:
        return [kb]
    candidates = retrieve_candidates(
        frame, bot.retrieval_index, bot.stopwords, k=bot.config.retrieval_k
    )
    generated = generate_candidate(
        frame,
        state.conversation_id,
        state.next_index(),
        bot.generator,
        bot.retrieval_index,
        bot.stopwords,
        bot.known_words,
    )
    if generated is not None:
        candidates.append(generated)
    candidates.append(fallback_candidate())
    return candidates
