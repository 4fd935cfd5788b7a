"""chatcore: an embeddable conversational-agent engine and chat service.

The pipeline runs understanding (tokens, topic, intents, entity links),
pronoun resolution against conversation history, a priority cascade of reply
strategies (rule templates, KB lookup, retrieval, Markov generation,
fallback), then content filtering and engagement ranking, with every turn
persisted to an append-only history log.
"""

from .engine import ChatResponse, ChatValidationError, Engine, EngineConfig
from .store import (
    BotDefinition,
    BotLoadError,
    HistoryStore,
    MemoryHistoryStore,
    load_bot_definition,
)

__version__ = "0.1.0"

__all__ = [
    "BotDefinition",
    "BotLoadError",
    "ChatResponse",
    "ChatValidationError",
    "Engine",
    "EngineConfig",
    "HistoryStore",
    "MemoryHistoryStore",
    "load_bot_definition",
    "__version__",
]
