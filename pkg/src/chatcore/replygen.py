"""Reply generation: content filtering, engagement scoring, ranking, realization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

from .dialogue import STAGE_ORDER, CandidateReply, fallback_candidate
from .nlu import AliasIndex, EntityRecord, SemanticFrame, jaccard, link_entities, tokenize

if TYPE_CHECKING:
    from .context import ConversationState

FLAG_BLOCKED = "blocked"
FLAG_EMPTY = "empty"
FLAG_ECHO = "echo"
FLAG_OVERLONG = "overlong"
FLAG_DUPLICATE = "duplicate"

MAX_REPLY_TOKENS = 60
NOVELTY_HISTORY_BOT_TURNS = 5

SENTENCE_TERMINATORS = (".", "!", "?")


@dataclass(frozen=True)
class FilterLexicon:
    blocked: frozenset[str]

    @classmethod
    def from_terms(cls, terms: Sequence[str]) -> "FilterLexicon":
        return cls(blocked=frozenset(t.casefold() for t in terms if t.strip()))


@dataclass(frozen=True)
class RankedReply:
    candidate: CandidateReply
    rank: int  # 1-based


def filter_candidates(
    candidates: Sequence[CandidateReply],
    lexicon: FilterLexicon,
    frame: SemanticFrame,
    state: "ConversationState",
) -> list[CandidateReply]:
    """Drop incoherent or questionable candidates; rejected ones keep their flags.

    Rules: blocked term, empty text, echo of the user's utterance, more than
    60 tokens, or a duplicate of a surviving strictly-higher-priority
    candidate. If nothing survives, the canned fallback is injected.
    """
    user_text = frame.resolved.casefold()
    # Duplicate checks look at higher-priority keepers, so decide in priority order.
    ordered = sorted(enumerate(candidates), key=lambda item: (-item[1].priority, item[0]))
    kept: set[int] = set()
    for position, candidate in ordered:
        tokens = tokenize(candidate.text)
        flags = set()
        if any(t.normalized in lexicon.blocked for t in tokens):
            flags.add(FLAG_BLOCKED)
        if not tokens:
            flags.add(FLAG_EMPTY)
        if candidate.text.casefold() == user_text:
            flags.add(FLAG_ECHO)
        if len(tokens) > MAX_REPLY_TOKENS:
            flags.add(FLAG_OVERLONG)
        folded = candidate.text.casefold()
        for keeper_pos in kept:
            keeper = candidates[keeper_pos]
            if keeper.priority > candidate.priority and keeper.text.casefold() == folded:
                flags.add(FLAG_DUPLICATE)
                break
        if flags:
            candidate.filter_flags.update(flags)
        else:
            kept.add(position)
    survivors = [c for i, c in enumerate(candidates) if i in kept]
    if not survivors:
        survivors = [fallback_candidate()]
    return survivors


def engagement_score(
    candidate: CandidateReply,
    frame: SemanticFrame,
    state: "ConversationState",
    entity_records: Sequence[EntityRecord],
    alias_index: Optional[AliasIndex] = None,
) -> float:
    """Heuristic engagement in [0, 1].

    0.4 * length band + 0.3 * entity overlap with the frame
    + 0.2 * novelty vs the last five bot turns + 0.1 * question bonus.
    """
    tokens = tokenize(candidate.text)
    count = len(tokens)
    if 4 <= count <= 25:
        length = 1.0
    elif 1 <= count <= 3 or 26 <= count <= 40:
        length = 0.5
    else:
        length = 0.0

    frame_ids = set(frame.mention_ids())
    candidate_ids = {
        m.resolved for m in link_entities(tokens, entity_records, alias_index)
    }
    entity_overlap = len(candidate_ids & frame_ids) / max(1, len(frame_ids))

    candidate_set = frozenset(t.normalized for t in tokens)
    bot_turns = [t for t in state.turns if t.speaker == "bot"][-NOVELTY_HISTORY_BOT_TURNS:]
    if bot_turns:
        worst = max(
            jaccard(candidate_set, frozenset(t.normalized for t in tokenize(turn.raw)))
            for turn in bot_turns
        )
        novelty = 1.0 - worst
    else:
        novelty = 1.0

    question = 1.0 if candidate.text.endswith("?") else 0.0
    return 0.4 * length + 0.3 * entity_overlap + 0.2 * novelty + 0.1 * question


def rank_candidates(survivors: Sequence[CandidateReply]) -> list[RankedReply]:
    """Priority first, engagement second, cascade stage third, emission order last."""
    ordered = sorted(
        enumerate(survivors),
        key=lambda item: (
            -item[1].priority,
            -item[1].engagement,
            STAGE_ORDER.get(item[1].source, len(STAGE_ORDER)),
            item[0],
        ),
    )
    return [RankedReply(candidate=c, rank=i + 1) for i, (_, c) in enumerate(ordered)]


def realize(best: CandidateReply) -> str:
    """Uppercase the first letter and close with terminal punctuation."""
    text = best.text
    for i, ch in enumerate(text):
        if ch.isalpha():
            text = text[:i] + ch.upper() + text[i + 1 :]
            break
    if text and not text.endswith(SENTENCE_TERMINATORS):
        text += "."
    return text
