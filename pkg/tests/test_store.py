from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chatcore import nlu
from chatcore.store import (
    BotLoadError,
    CorpusDocument,
    HistoryRecord,
    HistoryStore,
    MemoryHistoryStore,
    SequencingError,
    StoreError,
    build_corpus_index,
    escape_field,
    load_bot_definition,
    parse_record,
    unescape_field,
)


class TestEscaping:
    def test_specials(self):
        assert escape_field("a\tb\nc\\d") == "a\\tb\\nc\\\\d"
        assert unescape_field("a\\tb\\nc\\\\d") == "a\tb\nc\\d"

    def test_escaped_field_has_no_raw_separators(self):
        assert "\t" not in escape_field("x\ty\nz")
        assert "\n" not in escape_field("x\ty\nz")

    @settings(max_examples=300, deadline=None)
    @given(st.text(max_size=120))
    def test_round_trip_identity(self, text):
        assert unescape_field(escape_field(text)) == text

    def test_unknown_escape_rejected(self):
        with pytest.raises(StoreError):
            unescape_field("bad \\x escape")

    def test_dangling_escape_rejected(self):
        with pytest.raises(StoreError):
            unescape_field("trailing \\")


def record(conversation_id, index, speaker="user", raw="hi", source=None):
    return HistoryRecord(
        conversation_id=conversation_id,
        index=index,
        timestamp_ms=1700000000000 + index,
        speaker=speaker,
        raw=raw,
        resolved=raw,
        source=source,
    )


class TestHistoryStore:
    def test_first_record_accepted(self, tmp_path):
        store = HistoryStore(tmp_path)
        store.append_turn("c1", record("c1", 0))
        assert [r.index for r in store.load_history("c1")] == [0]

    def test_sequencing(self, tmp_path):
        store = HistoryStore(tmp_path)
        for i in range(5):
            store.append_turn("c1", record("c1", i))
        store.append_turn("c1", record("c1", 5))
        with pytest.raises(SequencingError):
            store.append_turn("c1", record("c1", 4))
        with pytest.raises(SequencingError):
            store.append_turn("c1", record("c1", 8))

    def test_sequencing_survives_reopen(self, tmp_path):
        HistoryStore(tmp_path).append_turn("c1", record("c1", 0))
        reopened = HistoryStore(tmp_path)
        with pytest.raises(SequencingError):
            reopened.append_turn("c1", record("c1", 0))
        reopened.append_turn("c1", record("c1", 1))

    def test_tab_and_newline_round_trip(self, tmp_path):
        store = HistoryStore(tmp_path)
        nasty = "line one\nline\ttwo \\ backslash"
        store.append_turn("c1", record("c1", 0, raw=nasty))
        got = HistoryStore(tmp_path).load_history("c1")
        assert got[0].raw == nasty

    def test_unknown_conversation_empty(self, tmp_path):
        assert HistoryStore(tmp_path).load_history("nope") == []

    def test_limit_returns_suffix_in_order(self, tmp_path):
        store = HistoryStore(tmp_path)
        for i in range(7):
            store.append_turn("c1", record("c1", i))
        got = store.load_history("c1", limit=3)
        assert [r.index for r in got] == [4, 5, 6]

    def test_corrupt_line_names_line_number(self, tmp_path):
        store = HistoryStore(tmp_path)
        store.append_turn("c1", record("c1", 0))
        with open(tmp_path / "c1.log", "a", encoding="utf-8") as f:
            f.write("only\tthree\tfields\n")
        with pytest.raises(StoreError, match="line 2"):
            HistoryStore(tmp_path).load_history("c1")

    def test_append_turns_atomic_pair(self, tmp_path):
        store = HistoryStore(tmp_path)
        store.append_turns(
            "c1", [record("c1", 0), record("c1", 1, speaker="bot", source="kb")]
        )
        got = store.load_history("c1")
        assert [r.speaker for r in got] == ["user", "bot"]
        assert got[1].source == "kb"

    def test_bot_source_round_trip(self, tmp_path):
        store = HistoryStore(tmp_path)
        store.append_turn("c1", record("c1", 0, speaker="bot", source="rule:intent"))
        assert store.load_history("c1")[0].source == "rule:intent"
        assert HistoryStore(tmp_path).load_history("c1")[0].source == "rule:intent"


class TestMemoryHistoryStore:
    def test_same_contract(self):
        store = MemoryHistoryStore()
        store.append_turn("c1", record("c1", 0, raw="tab\there"))
        with pytest.raises(SequencingError):
            store.append_turn("c1", record("c1", 5))
        assert store.load_history("c1")[0].raw == "tab\there"
        assert store.load_history("other") == []


def test_parse_record_rejects_bad_speaker():
    line = "c1\t0\t1\tneither\tx\tx\t-"
    with pytest.raises(StoreError):
        parse_record(line, 1)


class TestCorpusIndex:
    def test_empty(self):
        index = build_corpus_index([])
        assert index.size == 0

    def test_idf_value(self):
        docs = [
            CorpusDocument(1, "rome wins"),
            CorpusDocument(2, "rome again"),
            CorpusDocument(3, "pasta time"),
        ]
        index = build_corpus_index(docs)
        assert index.idf("rome") == pytest.approx(math.log(3 / 3) + 1.0)  # == 1.0
        assert index.idf("pasta") == pytest.approx(math.log(3 / 2) + 1.0)

    def test_document_order_does_not_change_scores(self):
        docs = [
            CorpusDocument(1, "rome has pizza"),
            CorpusDocument(2, "pasta for dinner"),
            CorpusDocument(3, "flights to rome"),
        ]
        forward = build_corpus_index(docs)
        backward = build_corpus_index(list(reversed(docs)))
        for text in ("rome pizza", "pasta", "flights rome dinner"):
            from chatcore.dialogue import score_documents

            frame_tokens = tuple(nlu.tokenize(text))
            frame = nlu.SemanticFrame(
                raw=text, resolved=text, tokens=frame_tokens,
                topic=("general", 0.0), intents=(), mentions=(),
            )
            a = {d.text: s for d, s in score_documents(frame, forward, frozenset())}
            b = {d.text: s for d, s in score_documents(frame, backward, frozenset())}
            assert a.keys() == b.keys()
            for key in a:
                assert a[key] == pytest.approx(b[key], abs=1e-12)


VALID = dict(
    intents="greet\thello",
    topics="small\ttalk\t1",
    entities="klm\tKLM\tORG\tklm\tan airline",
    templates="intent\t200\tgreet\tHello!",
    triples="klm\tfounded_in\t1919",
    predicates="founded\tfounded_in",
    embeddings="hello 1 0",
    stopwords="the",
    filter="bad",
    corpus="100\thello world",
)


class TestLoadBotDefinition:
    def test_demo_bot_loads(self, demo_bot):
        assert demo_bot.name == "demo"
        assert any(i.name == "book_restaurant" for i in demo_bot.intents)
        assert "klm" in demo_bot.entities_by_id

    def test_minimal_valid(self, write_bot):
        bot = load_bot_definition(write_bot("ok", **VALID))
        assert bot.intent_thresholds == {"greet": 0.75}
        assert bot.retrieval_index.size == 1

    def test_missing_file(self, write_bot):
        directory = write_bot("missing", **VALID)
        (directory / "embeddings.txt").unlink()
        with pytest.raises(BotLoadError, match="embeddings.txt: missing file"):
            load_bot_definition(directory)

    def test_dangling_triple_cites_line(self, write_bot):
        files = dict(VALID)
        files["triples"] = "klm\tfounded_in\t1919\nghost\tx\ty"
        with pytest.raises(BotLoadError, match=r"triples.txt:2"):
            load_bot_definition(write_bot("dangle", **files))

    def test_embedding_dimension_mismatch_cites_line(self, write_bot):
        files = dict(VALID)
        files["embeddings"] = "hello 1 0\nworld 1 0 0"
        with pytest.raises(BotLoadError, match=r"embeddings.txt:2"):
            load_bot_definition(write_bot("dims", **files))

    def test_unknown_intent_in_template(self, write_bot):
        files = dict(VALID)
        files["templates"] = "intent\t200\tmissing_intent\tHi!"
        with pytest.raises(BotLoadError, match="unknown intent"):
            load_bot_definition(write_bot("badintent", **files))

    def test_unbound_slot_rejected(self, write_bot):
        files = dict(VALID)
        files["templates"] = "intent\t200\tgreet\tHello {PLACE}!"
        with pytest.raises(BotLoadError, match="unbound slot"):
            load_bot_definition(write_bot("badslot", **files))

    def test_bad_entity_type_rejected(self, write_bot):
        files = dict(VALID)
        files["entities"] = "x\tX\tROBOT\tx\twhat"
        with pytest.raises(BotLoadError, match="unknown type"):
            load_bot_definition(write_bot("badtype", **files))

    def test_duplicate_entity_id_rejected(self, write_bot):
        files = dict(VALID)
        files["entities"] = "klm\tKLM\tORG\tklm\tone\nklm\tKLM\tORG\tklm\ttwo"
        with pytest.raises(BotLoadError, match="duplicate entity id"):
            load_bot_definition(write_bot("dupid", **files))

    def test_threshold_override_parsed(self, write_bot):
        files = dict(VALID)
        files["intents"] = "greet\thello\ngreet\t@threshold\t0.9"
        bot = load_bot_definition(write_bot("thresh", **files))
        assert bot.intent_thresholds["greet"] == pytest.approx(0.9)

    def test_threshold_out_of_range_rejected(self, write_bot):
        files = dict(VALID)
        files["intents"] = "greet\thello\ngreet\t@threshold\t1.5"
        with pytest.raises(BotLoadError, match=r"outside \[0, 1\]"):
            load_bot_definition(write_bot("badthresh", **files))

    def test_errors_collected_across_files(self, write_bot):
        files = dict(VALID)
        files["triples"] = "ghost\tx\ty"
        files["topics"] = "small\ttalk\t-2"
        try:
            load_bot_definition(write_bot("multi", **files))
            raise AssertionError("expected BotLoadError")
        except BotLoadError as exc:
            joined = "\n".join(exc.errors)
            assert "triples.txt:1" in joined
            assert "topics.txt:1" in joined

    def test_comment_lines_ignored(self, write_bot):
        files = dict(VALID)
        files["intents"] = "# a comment\ngreet\thello"
        bot = load_bot_definition(write_bot("comments", **files))
        assert bot.intents[0].examples == ("hello",)

    def test_canonical_becomes_alias(self, write_bot):
        files = dict(VALID)
        files["entities"] = "ams\tAmsterdam\tPLACE\tmokum\tthe capital"
        files["triples"] = "ams\tlocated_in\tthe Netherlands"
        bot = load_bot_definition(write_bot("canon", **files))
        assert ("amsterdam",) in bot.alias_index
        assert ("mokum",) in bot.alias_index
