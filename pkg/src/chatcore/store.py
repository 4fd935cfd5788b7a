"""Persistence and ingestion: append-only chat history logs, bot-definition
loading with full cross-reference validation, and corpus indexing."""

from __future__ import annotations

import logging
import math
import os
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

from . import dialogue, nlu
from .dialogue import (
    GeneratorModel,
    KnowledgeTriple,
    RetrievalDocument,
    RetrievalIndex,
    RuleTemplate,
)
from .nlu import (
    DEFAULT_INTENT_THRESHOLD,
    ENTITY_TYPES,
    AliasIndex,
    EmbeddingTable,
    EntityRecord,
    IntentDefinition,
    PreparedExample,
    TopicDefinition,
    tokenize,
)
from .replygen import FilterLexicon

logger = logging.getLogger(__name__)

BOT_FILES = (
    "intents.txt",
    "topics.txt",
    "entities.txt",
    "templates.txt",
    "triples.txt",
    "predicates.txt",
    "embeddings.txt",
    "stopwords.txt",
    "filter.txt",
    "corpus.txt",
)

SPEAKERS = ("user", "bot")


class StoreError(Exception):
    """History file problem (corruption, bad sequencing)."""


class SequencingError(StoreError):
    """Appended turn index does not extend the conversation densely."""


class BotLoadError(Exception):
    """Bot definition rejected; carries every located validation error."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# --------------------------------------------------------------------------
# History records and escaping
# --------------------------------------------------------------------------

def escape_field(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def unescape_field(text: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        if i + 1 >= len(text):
            raise StoreError("dangling escape at end of field")
        nxt = text[i + 1]
        if nxt == "\\":
            out.append("\\")
        elif nxt == "t":
            out.append("\t")
        elif nxt == "n":
            out.append("\n")
        else:
            raise StoreError(f"unknown escape sequence \\{nxt}")
        i += 2
    return "".join(out)


@dataclass(frozen=True)
class HistoryRecord:
    conversation_id: str
    index: int
    timestamp_ms: int
    speaker: str
    raw: str
    resolved: str
    source: Optional[str]  # None on user turns, stored as "-"

    def to_line(self) -> str:
        return "\t".join(
            (
                self.conversation_id,
                str(self.index),
                str(self.timestamp_ms),
                self.speaker,
                escape_field(self.raw),
                escape_field(self.resolved),
                self.source if self.source is not None else "-",
            )
        )


def parse_record(line: str, lineno: int) -> HistoryRecord:
    fields = line.split("\t")
    if len(fields) != 7:
        raise StoreError(f"history line {lineno}: expected 7 fields, found {len(fields)}")
    conversation_id, index, timestamp, speaker, raw, resolved, source = fields
    if speaker not in SPEAKERS:
        raise StoreError(f"history line {lineno}: unknown speaker {speaker!r}")
    try:
        return HistoryRecord(
            conversation_id=conversation_id,
            index=int(index),
            timestamp_ms=int(timestamp),
            speaker=speaker,
            raw=unescape_field(raw),
            resolved=unescape_field(resolved),
            source=None if source == "-" else source,
        )
    except ValueError as exc:
        raise StoreError(f"history line {lineno}: {exc}") from None


class HistoryStore:
    """Append-only per-conversation logs: `<data_dir>/<conversation_id>.log`."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._last_index: dict[str, int] = {}

    def _path(self, conversation_id: str) -> Path:
        return self.data_dir / f"{conversation_id}.log"

    def _current_last(self, conversation_id: str) -> int:
        if conversation_id in self._last_index:
            return self._last_index[conversation_id]
        records = self.load_history(conversation_id)
        last = records[-1].index if records else -1
        self._last_index[conversation_id] = last
        return last

    def append_turn(self, conversation_id: str, record: HistoryRecord) -> None:
        self.append_turns(conversation_id, [record])

    def append_turns(self, conversation_id: str, records: Sequence[HistoryRecord]) -> None:
        """Durably append records in one write; indices must extend the log densely."""
        if not records:
            return
        with self._lock:
            last = self._current_last(conversation_id)
            for record in records:
                if record.index != last + 1:
                    raise SequencingError(
                        f"conversation {conversation_id}: expected index {last + 1}, "
                        f"got {record.index}"
                    )
                last = record.index
            payload = "".join(record.to_line() + "\n" for record in records)
            with open(self._path(conversation_id), "a", encoding="utf-8", newline="") as out:
                out.write(payload)
                out.flush()
                os.fsync(out.fileno())
            self._last_index[conversation_id] = last

    def load_history(
        self, conversation_id: str, limit: Optional[int] = None
    ) -> list[HistoryRecord]:
        path = self._path(conversation_id)
        if not path.exists():
            return []
        with open(path, encoding="utf-8", newline="") as handle:
            content = handle.read()
        records = [
            parse_record(line, lineno)
            for lineno, line in enumerate(content.split("\n"), start=1)
            if line
        ]
        if limit is not None and limit >= 0:
            records = records[-limit:] if limit else []
        return records


class MemoryHistoryStore:
    """Same contract as HistoryStore, backed by in-process line buffers."""

    def __init__(self) -> None:
        self._lines: dict[str, list[str]] = {}
        self._last_index: dict[str, int] = {}
        self._lock = threading.Lock()

    def append_turn(self, conversation_id: str, record: HistoryRecord) -> None:
        self.append_turns(conversation_id, [record])

    def append_turns(self, conversation_id: str, records: Sequence[HistoryRecord]) -> None:
        if not records:
            return
        with self._lock:
            last = self._last_index.get(conversation_id, -1)
            for record in records:
                if record.index != last + 1:
                    raise SequencingError(
                        f"conversation {conversation_id}: expected index {last + 1}, "
                        f"got {record.index}"
                    )
                last = record.index
            self._lines.setdefault(conversation_id, []).extend(
                record.to_line() for record in records
            )
            self._last_index[conversation_id] = last

    def load_history(
        self, conversation_id: str, limit: Optional[int] = None
    ) -> list[HistoryRecord]:
        lines = self._lines.get(conversation_id, [])
        records = [parse_record(line, i) for i, line in enumerate(lines, start=1)]
        if limit is not None and limit >= 0:
            records = records[-limit:] if limit else []
        return records


# --------------------------------------------------------------------------
# Corpus index
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CorpusDocument:
    timestamp_ms: int
    text: str


def build_corpus_index(documents: Sequence[CorpusDocument]) -> RetrievalIndex:
    """tf-idf index with idf(w) = ln(N / (1 + df(w))) + 1 over raw term counts."""
    token_lists = [
        [t.normalized for t in tokenize(doc.text)] for doc in documents
    ]
    df: Counter[str] = Counter()
    for words in token_lists:
        df.update(set(words))
    n_docs = len(documents)

    def idf(word: str) -> float:
        return math.log(n_docs / (1 + df[word])) + 1.0

    built: list[RetrievalDocument] = []
    for doc_id, (doc, words) in enumerate(zip(documents, token_lists)):
        vector = {word: count * idf(word) for word, count in Counter(words).items()}
        norm = math.sqrt(sum(w * w for w in vector.values()))
        built.append(
            RetrievalDocument(
                id=doc_id,
                text=doc.text,
                timestamp_ms=doc.timestamp_ms,
                vector=vector,
                norm=norm,
            )
        )
    return RetrievalIndex(documents=tuple(built), doc_freq=dict(df))


# --------------------------------------------------------------------------
# Bot definition
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BotConfig:
    """Engine knobs a deployment may override; defaults match the shipped demo."""

    default_intent_threshold: float = DEFAULT_INTENT_THRESHOLD
    coref_window: int = 5
    retrieval_k: int = 3
    debug_default: bool = False


@dataclass(frozen=True)
class BotDefinition:
    name: str
    intents: tuple[IntentDefinition, ...]
    topics: tuple[TopicDefinition, ...]
    entities: tuple[EntityRecord, ...]
    templates: tuple[RuleTemplate, ...]
    triples: tuple[KnowledgeTriple, ...]
    predicate_lexicon: Mapping[str, str]
    embeddings: EmbeddingTable
    stopwords: frozenset[str]
    filter_lexicon: FilterLexicon
    corpus: tuple[CorpusDocument, ...]
    config: BotConfig
    # precomputed at load
    entities_by_id: Mapping[str, EntityRecord]
    alias_index: AliasIndex
    intent_examples: Mapping[str, tuple[PreparedExample, ...]]
    intent_thresholds: Mapping[str, float]
    retrieval_index: RetrievalIndex
    generator: GeneratorModel
    known_words: frozenset[str]


class _BotReader:
    """Accumulates located errors so validate can report all of them at once."""

    def __init__(self, directory: Path):
        self.directory = directory
        self.errors: list[str] = []

    def fail(self, filename: str, lineno: Optional[int], message: str) -> None:
        location = f"{filename}:{lineno}" if lineno is not None else filename
        self.errors.append(f"{location}: {message}")

    def lines(self, filename: str) -> list[tuple[int, str]]:
        path = self.directory / filename
        out: list[tuple[int, str]] = []
        with open(path, encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                out.append((lineno, line))
        return out

    def fields(self, filename: str, expected: int) -> list[tuple[int, list[str]]]:
        rows: list[tuple[int, list[str]]] = []
        for lineno, line in self.lines(filename):
            parts = line.split("\t")
            if len(parts) == expected:
                rows.append((lineno, parts))
            else:
                self.fail(
                    filename, lineno, f"expected {expected} tab-separated fields, got {len(parts)}"
                )
        return rows


def load_bot_definition(
    directory: str | Path, config: Optional[BotConfig] = None
) -> BotDefinition:
    """Load and validate a bot-definition directory.

    Either returns a definition whose cross-references all hold, or raises
    BotLoadError listing every problem as `file:line: message`.
    """
    directory = Path(directory)
    config = config or BotConfig()
    reader = _BotReader(directory)

    missing = [name for name in BOT_FILES if not (directory / name).exists()]
    if not directory.is_dir():
        raise BotLoadError([f"{directory}: not a directory"])
    if missing:
        raise BotLoadError([f"{name}: missing file" for name in missing])

    entities = _load_entities(reader)
    intents = _load_intents(reader, config)
    topics = _load_topics(reader)
    entities_by_id = {e.id: e for e in entities}
    templates = _load_templates(reader, {i.name for i in intents})
    triples = _load_triples(reader, entities_by_id)
    predicate_lexicon = _load_predicates(reader)
    embeddings = _load_embeddings(reader)
    stopwords = _load_terms(reader, "stopwords.txt")
    filter_lexicon = FilterLexicon.from_terms(sorted(_load_terms(reader, "filter.txt")))
    corpus = _load_corpus(reader)

    if reader.errors:
        raise BotLoadError(reader.errors)

    retrieval_index = build_corpus_index(corpus)
    generator = dialogue.build_generator_model([doc.text for doc in corpus])
    thresholds = {
        intent.name: (
            intent.threshold
            if intent.threshold is not None
            else config.default_intent_threshold
        )
        for intent in intents
    }
    bot = BotDefinition(
        name=directory.name,
        intents=tuple(intents),
        topics=tuple(topics),
        entities=tuple(entities),
        templates=tuple(templates),
        triples=tuple(triples),
        predicate_lexicon=predicate_lexicon,
        embeddings=embeddings,
        stopwords=stopwords,
        filter_lexicon=filter_lexicon,
        corpus=tuple(corpus),
        config=config,
        entities_by_id=entities_by_id,
        alias_index=nlu.build_alias_index(entities),
        intent_examples=nlu.prepare_intent_examples(intents, embeddings, stopwords),
        intent_thresholds=thresholds,
        retrieval_index=retrieval_index,
        generator=generator,
        known_words=embeddings.words() | generator.vocabulary,
    )
    logger.info(
        "loaded bot %s: %d intents, %d entities, %d templates, %d triples, %d documents",
        bot.name, len(intents), len(entities), len(templates), len(triples), len(corpus),
    )
    return bot


def _load_entities(reader: _BotReader) -> list[EntityRecord]:
    entities: list[EntityRecord] = []
    seen: set[str] = set()
    for lineno, parts in reader.fields("entities.txt", 5):
        entity_id, canonical, type_tag, aliases_raw, description = parts
        if entity_id in seen:
            reader.fail("entities.txt", lineno, f"duplicate entity id {entity_id!r}")
            continue
        seen.add(entity_id)
        if type_tag not in ENTITY_TYPES:
            reader.fail(
                "entities.txt",
                lineno,
                f"unknown type {type_tag!r}, expected one of {', '.join(ENTITY_TYPES)}",
            )
            continue
        aliases = [a.strip() for a in aliases_raw.split("|") if a.strip()]
        if canonical not in aliases:
            aliases.insert(0, canonical)
        if not any(tokenize(alias) for alias in aliases):
            reader.fail("entities.txt", lineno, "entity has no tokenizable alias")
            continue
        entities.append(
            EntityRecord(
                id=entity_id,
                canonical=canonical,
                type_tag=type_tag,
                aliases=tuple(aliases),
                description=description,
            )
        )
    return entities


def _load_intents(reader: _BotReader, config: BotConfig) -> list[IntentDefinition]:
    examples: dict[str, list[str]] = {}
    thresholds: dict[str, float] = {}
    order: list[str] = []
    for lineno, line in reader.lines("intents.txt"):
        parts = line.split("\t")
        if len(parts) == 3 and parts[1] == "@threshold":
            name = parts[0]
            try:
                value = float(parts[2])
            except ValueError:
                reader.fail("intents.txt", lineno, f"threshold {parts[2]!r} is not a number")
                continue
            if not 0.0 <= value <= 1.0:
                reader.fail("intents.txt", lineno, f"threshold {value} outside [0, 1]")
                continue
            thresholds[name] = value
            if name not in examples:
                order.append(name)
                examples[name] = []
            continue
        if len(parts) != 2:
            reader.fail(
                "intents.txt", lineno, f"expected 2 tab-separated fields, got {len(parts)}"
            )
            continue
        name, example = parts
        if not tokenize(example):
            reader.fail("intents.txt", lineno, "example has no tokens")
            continue
        if name not in examples:
            order.append(name)
            examples[name] = []
        examples[name].append(example)
    intents: list[IntentDefinition] = []
    for name in order:
        if not examples[name]:
            reader.fail("intents.txt", None, f"intent {name!r} has no examples")
            continue
        intents.append(
            IntentDefinition(
                name=name,
                examples=tuple(examples[name]),
                threshold=thresholds.get(name),
            )
        )
    return intents


def _load_topics(reader: _BotReader) -> list[TopicDefinition]:
    keywords: dict[str, dict[str, float]] = {}
    order: list[str] = []
    for lineno, parts in reader.fields("topics.txt", 3):
        name, keyword, weight_raw = parts
        try:
            weight = float(weight_raw)
        except ValueError:
            reader.fail("topics.txt", lineno, f"weight {weight_raw!r} is not a number")
            continue
        if weight <= 0:
            reader.fail("topics.txt", lineno, f"weight {weight} must be positive")
            continue
        if name not in keywords:
            order.append(name)
            keywords[name] = {}
        keywords[name][keyword.casefold()] = weight
    return [TopicDefinition(name=name, keywords=keywords[name]) for name in order]


def _load_templates(reader: _BotReader, intent_names: set[str]) -> list[RuleTemplate]:
    templates: list[RuleTemplate] = []
    for position, (lineno, parts) in enumerate(reader.fields("templates.txt", 4)):
        kind, priority_raw, trigger, response = parts
        if kind not in ("backstory", "intent", "entity"):
            reader.fail("templates.txt", lineno, f"unknown template kind {kind!r}")
            continue
        try:
            priority = int(priority_raw)
        except ValueError:
            reader.fail("templates.txt", lineno, f"priority {priority_raw!r} is not an integer")
            continue
        bindable = {"entity", "topic"}
        if kind == "backstory":
            placeholder_error = None
            for element in dialogue.pattern_elements(trigger):
                ptype = dialogue.placeholder_type(element)
                if element.startswith("<") and ptype is None:
                    placeholder_error = f"malformed placeholder {element!r}"
                    break
                if ptype is not None:
                    if ptype not in ENTITY_TYPES:
                        placeholder_error = f"unknown placeholder type {ptype!r}"
                        break
                    if ptype in bindable:
                        placeholder_error = f"duplicate placeholder <{ptype}>"
                        break
                    bindable.add(ptype)
            if not dialogue.pattern_elements(trigger):
                placeholder_error = "empty pattern"
            if placeholder_error:
                reader.fail("templates.txt", lineno, placeholder_error)
                continue
        elif kind == "intent":
            if trigger not in intent_names:
                reader.fail("templates.txt", lineno, f"unknown intent {trigger!r}")
                continue
        elif kind == "entity":
            if trigger not in ENTITY_TYPES:
                reader.fail("templates.txt", lineno, f"unknown entity type {trigger!r}")
                continue
            bindable.add(trigger)
        bad_slots = [s for s in dialogue.response_slots(response) if s not in bindable]
        if bad_slots:
            reader.fail(
                "templates.txt",
                lineno,
                f"response references unbound slot(s) {', '.join(sorted(set(bad_slots)))}",
            )
            continue
        templates.append(
            RuleTemplate(
                kind=kind, trigger=trigger, response=response, priority=priority, order=position
            )
        )
    return templates


def _load_triples(
    reader: _BotReader, entities_by_id: Mapping[str, EntityRecord]
) -> list[KnowledgeTriple]:
    triples: list[KnowledgeTriple] = []
    for lineno, parts in reader.fields("triples.txt", 3):
        subject, predicate, obj = parts
        if subject not in entities_by_id:
            reader.fail("triples.txt", lineno, f"unknown subject entity {subject!r}")
            continue
        triples.append(KnowledgeTriple(subject=subject, predicate=predicate, object=obj))
    return triples


def _load_predicates(reader: _BotReader) -> dict[str, str]:
    lexicon: dict[str, str] = {}
    for lineno, parts in reader.fields("predicates.txt", 2):
        word, predicate = parts
        lexicon[word.casefold()] = predicate
    return lexicon


def _load_embeddings(reader: _BotReader) -> EmbeddingTable:
    path = reader.directory / "embeddings.txt"
    entries: dict[str, list[float]] = {}
    dimension: Optional[int] = None
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n").strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line.split()
                if parts[0] == "#dim":
                    try:
                        dimension = int(parts[1])
                    except (IndexError, ValueError):
                        reader.fail("embeddings.txt", lineno, "malformed #dim header")
                continue
            parts = line.split()
            if len(parts) < 2:
                reader.fail("embeddings.txt", lineno, "expected `word v1 v2 ...`")
                continue
            word, values = parts[0], parts[1:]
            try:
                vector = [float(v) for v in values]
            except ValueError:
                reader.fail("embeddings.txt", lineno, "vector component is not a number")
                continue
            if dimension is None:
                dimension = len(vector)
            if len(vector) != dimension:
                reader.fail(
                    "embeddings.txt",
                    lineno,
                    f"vector length {len(vector)} does not match dimension {dimension}",
                )
                continue
            entries[word] = vector
    if dimension is None or dimension < 1:
        # An embeddings file with no rows still yields a usable (empty) table;
        # intent scoring then runs entirely on the Jaccard fallback.
        dimension = 1
        entries = {}
    return EmbeddingTable(dimension=dimension, entries=entries)


def _load_terms(reader: _BotReader, filename: str) -> frozenset[str]:
    terms = set()
    for _, line in reader.lines(filename):
        terms.add(line.strip().casefold())
    return frozenset(terms)


def _load_corpus(reader: _BotReader) -> list[CorpusDocument]:
    documents: list[CorpusDocument] = []
    for lineno, parts in reader.fields("corpus.txt", 2):
        timestamp_raw, text = parts
        try:
            timestamp = int(timestamp_raw)
        except ValueError:
            reader.fail("corpus.txt", lineno, f"timestamp {timestamp_raw!r} is not an integer")
            continue
        documents.append(CorpusDocument(timestamp_ms=timestamp, text=text))
    return documents
