"""Conversation state tracking and pronoun resolution against recent mentions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Optional, Sequence

from .nlu import EntityRecord, SemanticFrame, join_tokens, link_entities, tokenize

if TYPE_CHECKING:
    from .store import BotDefinition, HistoryRecord

DEFAULT_COREF_WINDOW = 5

# Pronoun tables: who each pronoun may refer to, and which forms are possessive.
_PERSON_PRONOUNS = frozenset({"he", "him", "his", "she", "her", "hers"})
_NONPERSON_PRONOUNS = frozenset({"it", "its"})
_ANY_PRONOUNS = frozenset({"they", "them", "their"})
_POSSESSIVE = frozenset({"his", "hers", "its", "their"})


@dataclass(frozen=True)
class Turn:
    index: int
    speaker: str  # "user" | "bot"
    raw: str
    resolved: str
    source: Optional[str]  # strategy tag on bot turns, None on user turns
    timestamp_ms: int


@dataclass
class SalienceEntry:
    entity_id: str
    type_tag: str
    last_turn: int


@dataclass
class ConversationState:
    """Ordered turns plus a most-recent-first list of mentioned entities."""

    conversation_id: str
    turns: list[Turn] = field(default_factory=list)
    salience: list[SalienceEntry] = field(default_factory=list)

    def next_index(self) -> int:
        return len(self.turns)


def recent_utterances(state: ConversationState, k: int) -> list[Turn]:
    """The last min(k, len(turns)) turns in chronological order."""
    if k <= 0:
        return []
    return list(state.turns[-k:])


def resolve_coreference(
    raw: str,
    state: ConversationState,
    entities_by_id: Mapping[str, EntityRecord],
    window: int = DEFAULT_COREF_WINDOW,
) -> str:
    """Replace pronouns with canonical names of recently mentioned entities.

    he/him/his/she/her/hers take the most recent PERSON, it/its the most
    recent non-PERSON, they/them/their the most recent entity of any type,
    all restricted to entities last mentioned within `window` turns.
    Possessive forms get "'s" appended. Anything unresolvable passes through.
    """
    tokens = tokenize(raw)
    if not tokens:
        return raw
    horizon = len(state.turns) - window
    words: list[str] = []
    for token in tokens:
        normalized = token.normalized
        entry: Optional[SalienceEntry] = None
        if normalized in _PERSON_PRONOUNS:
            entry = _most_recent(state, horizon, person=True)
        elif normalized in _NONPERSON_PRONOUNS:
            entry = _most_recent(state, horizon, person=False)
        elif normalized in _ANY_PRONOUNS:
            entry = _most_recent(state, horizon, person=None)
        record = entities_by_id.get(entry.entity_id) if entry else None
        if record is None:
            words.append(token.surface)
        elif normalized in _POSSESSIVE:
            words.append(record.canonical + "'s")
        else:
            words.append(record.canonical)
    return join_tokens(words)


def _most_recent(
    state: ConversationState, horizon: int, person: Optional[bool]
) -> Optional[SalienceEntry]:
    for entry in state.salience:
        if entry.last_turn < horizon:
            return None  # salience is recency-ordered; everything after is older
        if person is True and entry.type_tag != "PERSON":
            continue
        if person is False and entry.type_tag == "PERSON":
            continue
        return entry
    return None


def update_state(
    state: ConversationState,
    frame: SemanticFrame,
    user_turn: Turn,
    bot_turn: Turn,
    entities_by_id: Mapping[str, EntityRecord],
) -> ConversationState:
    """Append one user/bot exchange and refresh salience from the user frame."""
    if user_turn.index != len(state.turns) or bot_turn.index != user_turn.index + 1:
        raise ValueError(
            f"turn indices {user_turn.index},{bot_turn.index} do not extend "
            f"conversation of length {len(state.turns)}"
        )
    state.turns.append(user_turn)
    state.turns.append(bot_turn)
    _refresh_salience(state, frame, user_turn.index, entities_by_id)
    return state


def _refresh_salience(
    state: ConversationState,
    frame: SemanticFrame,
    turn_index: int,
    entities_by_id: Mapping[str, EntityRecord],
) -> None:
    for mention in frame.mentions:
        record = entities_by_id.get(mention.resolved)
        if record is None:
            continue
        state.salience = [e for e in state.salience if e.entity_id != record.id]
        state.salience.insert(
            0, SalienceEntry(entity_id=record.id, type_tag=record.type_tag, last_turn=turn_index)
        )


def rebuild_state(
    conversation_id: str,
    records: Sequence["HistoryRecord"],
    bot: "BotDefinition",
) -> ConversationState:
    """Reconstruct in-memory state from persisted history.

    Salience is rebuilt by re-linking entities over each user turn's resolved
    text, which reproduces what update_state recorded when the turns ran.
    """
    state = ConversationState(conversation_id=conversation_id)
    for record in records:
        state.turns.append(
            Turn(
                index=record.index,
                speaker=record.speaker,
                raw=record.raw,
                resolved=record.resolved,
                source=record.source,
                timestamp_ms=record.timestamp_ms,
            )
        )
        if record.speaker != "user":
            continue
        mentions = link_entities(
            tokenize(record.resolved), bot.entities, bot.alias_index
        )
        for mention in mentions:
            entity = bot.entities_by_id.get(mention.resolved)
            if entity is None:
                continue
            state.salience = [e for e in state.salience if e.entity_id != entity.id]
            state.salience.insert(
                0,
                SalienceEntry(
                    entity_id=entity.id, type_tag=entity.type_tag, last_turn=record.index
                ),
            )
    return state
