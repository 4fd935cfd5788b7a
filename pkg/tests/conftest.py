from __future__ import annotations

from pathlib import Path

import pytest

from chatcore.store import load_bot_definition

REPO_ROOT = Path(__file__).resolve().parent.parent
DEMO_BOT_DIR = REPO_ROOT / "bots" / "demo"

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


@pytest.fixture(scope="session")
def demo_bot_dir() -> Path:
    return DEMO_BOT_DIR


@pytest.fixture(scope="session")
def demo_bot():
    return load_bot_definition(DEMO_BOT_DIR)


@pytest.fixture
def write_bot(tmp_path):
    """Factory for throwaway bot directories; keyword args override file bodies.

    Keys are the file stems (intents, topics, entities, templates, triples,
    predicates, embeddings, stopwords, filter, corpus); omitted files are empty.
    """

    def _write(name: str = "bot", **overrides: str) -> Path:
        directory = tmp_path / name
        directory.mkdir(parents=True, exist_ok=True)
        for filename in BOT_FILES:
            stem = filename.removesuffix(".txt")
            content = overrides.pop(stem, "")
            if content and not content.endswith("\n"):
                content += "\n"
            (directory / filename).write_text(content, encoding="utf-8")
        if overrides:
            raise AssertionError(f"unknown bot files: {sorted(overrides)}")
        return directory

    return _write
