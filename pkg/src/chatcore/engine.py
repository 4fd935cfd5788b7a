"""Turn orchestration: coreference -> analysis -> cascade -> filter/rank -> persist."""

from __future__ import annotations

import logging
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

from . import context, dialogue, nlu, replygen
from .context import ConversationState, Turn
from .store import BotConfig, BotDefinition, HistoryRecord, load_bot_definition

logger = logging.getLogger(__name__)

CONVERSATION_ID_RE = re.compile(r"^[A-Za-z0-9_-]{1,128}$")


class ChatValidationError(ValueError):
    """Request rejected before entering the pipeline."""


@dataclass(frozen=True)
class ChatResponse:
    reply: str
    source: str
    rank_size: int
    frame_debug: Optional[dict] = None


@dataclass(frozen=True)
class EngineConfig:
    bot_dir: str
    data_dir: str
    bind_addr: str = "127.0.0.1:8808"
    default_intent_threshold: float = nlu.DEFAULT_INTENT_THRESHOLD
    coref_window: int = 5
    retrieval_k: int = 3
    debug_default: bool = False

    def bot_config(self) -> BotConfig:
        return BotConfig(
            default_intent_threshold=self.default_intent_threshold,
            coref_window=self.coref_window,
            retrieval_k=self.retrieval_k,
            debug_default=self.debug_default,
        )


_CONFIG_KEYS = {
    "bot_dir": str,
    "data_dir": str,
    "bind_addr": str,
    "default_intent_threshold": float,
    "coref_window": int,
    "retrieval_k": int,
    "debug_default": lambda v: v.strip().lower() in ("1", "true", "yes", "on"),
}


def parse_config_file(path: str | Path) -> EngineConfig:
    """Parse a key=value config file; unknown keys are rejected."""
    values: dict[str, object] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in _CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown or malformed config line {line!r}")
            values[key] = _CONFIG_KEYS[key](value.strip())
    for required in ("bot_dir", "data_dir"):
        if required not in values:
            raise ValueError(f"{path}: missing required key {required}")
    return EngineConfig(**values)  # type: ignore[arg-type]


class HistoryBackend(Protocol):
    def append_turns(self, conversation_id: str, records: Sequence[HistoryRecord]) -> None: ...
    def load_history(
        self, conversation_id: str, limit: Optional[int] = None
    ) -> list[HistoryRecord]: ...


def _now_ms() -> int:
    return time.time_ns() // 1_000_000


class Engine:
    """One loaded bot plus per-conversation state; safe for concurrent turns.

    Turns sharing a conversation_id are serialized by a per-conversation lock;
    bot assets are immutable and swapped atomically on reload, so in-flight
    turns finish on the definition they started with.
    """

    def __init__(
        self,
        bot: BotDefinition,
        history: HistoryBackend,
        bot_dir: Optional[str | Path] = None,
        clock: Callable[[], int] = _now_ms,
    ):
        self._bot = bot
        self._history = history
        self._bot_dir = Path(bot_dir) if bot_dir is not None else None
        self._clock = clock
        self._states: dict[str, ConversationState] = {}
        self._conversation_locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    @property
    def bot(self) -> BotDefinition:
        return self._bot

    def _lock_for(self, conversation_id: str) -> threading.Lock:
        with self._registry_lock:
            lock = self._conversation_locks.get(conversation_id)
            if lock is None:
                lock = threading.Lock()
                self._conversation_locks[conversation_id] = lock
            return lock

    def _state_for(self, conversation_id: str, bot: BotDefinition) -> ConversationState:
        state = self._states.get(conversation_id)
        if state is None:
            records = self._history.load_history(conversation_id)
            state = context.rebuild_state(conversation_id, records, bot)
            self._states[conversation_id] = state
        return state

    def respond(self, conversation_id: str, text: str, debug: bool = False) -> ChatResponse:
        """Run one full turn and persist both sides of the exchange."""
        if not CONVERSATION_ID_RE.match(conversation_id or ""):
            raise ChatValidationError(
                "conversation_id must be 1-128 characters of [A-Za-z0-9_-]"
            )
        if not text or not text.strip():
            raise ChatValidationError("text must be nonempty")
        bot = self._bot  # snapshot; reload swaps the attribute atomically
        with self._lock_for(conversation_id):
            state = self._state_for(conversation_id, bot)
            user_ts = self._clock()

            resolved = context.resolve_coreference(
                text, state, bot.entities_by_id, window=bot.config.coref_window
            )
            frame = nlu.analyze(resolved, bot, raw=text)
            candidates = dialogue.plan(frame, state, bot)
            survivors = replygen.filter_candidates(
                candidates, bot.filter_lexicon, frame, state
            )
            for candidate in survivors:
                candidate.engagement = replygen.engagement_score(
                    candidate, frame, state, bot.entities, bot.alias_index
                )
            ranked = replygen.rank_candidates(survivors)
            best = ranked[0].candidate
            reply = replygen.realize(best)

            user_turn = Turn(
                index=state.next_index(),
                speaker="user",
                raw=text,
                resolved=resolved,
                source=None,
                timestamp_ms=user_ts,
            )
            bot_turn = Turn(
                index=user_turn.index + 1,
                speaker="bot",
                raw=reply,
                resolved=reply,
                source=best.source,
                timestamp_ms=self._clock(),
            )
            # Persist first: a storage failure leaves no trace of the turn.
            self._history.append_turns(
                conversation_id, [_to_record(user_turn, conversation_id),
                                  _to_record(bot_turn, conversation_id)]
            )
            context.update_state(state, frame, user_turn, bot_turn, bot.entities_by_id)

            frame_debug = _frame_debug(frame, bot) if debug else None
            return ChatResponse(
                reply=reply,
                source=best.source,
                rank_size=len(ranked),
                frame_debug=frame_debug,
            )

    def history(self, conversation_id: str, limit: Optional[int] = None) -> list[HistoryRecord]:
        return self._history.load_history(conversation_id, limit)

    def reload(self, bot_dir: Optional[str | Path] = None) -> BotDefinition:
        """Atomically swap in a freshly loaded definition; failure keeps the old."""
        directory = Path(bot_dir) if bot_dir is not None else self._bot_dir
        if directory is None:
            raise ValueError("no bot directory configured for reload")
        new_bot = load_bot_definition(directory, self._bot.config)
        self._bot = new_bot
        self._bot_dir = directory
        logger.info("reloaded bot %s from %s", new_bot.name, directory)
        return new_bot


def _to_record(turn: Turn, conversation_id: str) -> HistoryRecord:
    return HistoryRecord(
        conversation_id=conversation_id,
        index=turn.index,
        timestamp_ms=turn.timestamp_ms,
        speaker=turn.speaker,
        raw=turn.raw,
        resolved=turn.resolved,
        source=turn.source,
    )


def _frame_debug(frame: nlu.SemanticFrame, bot: BotDefinition) -> dict:
    top = frame.top_intent()
    mentions = []
    for m in frame.mentions:
        record = bot.entities_by_id.get(m.resolved)
        mentions.append(
            {
                "id": m.resolved,
                "type": record.type_tag if record else None,
                "start": m.start,
                "end": m.end,
            }
        )
    return {
        "topic": {"name": frame.topic[0], "confidence": frame.topic[1]},
        "top_intent": {"name": top[0], "score": top[1]} if top else None,
        "resolved": frame.resolved,
        "mentions": mentions,
    }
