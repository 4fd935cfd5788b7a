from __future__ import annotations

import pytest

from chatcore import nlu
from chatcore.context import (
    ConversationState,
    SalienceEntry,
    Turn,
    recent_utterances,
    resolve_coreference,
    update_state,
)
from chatcore.nlu import EntityRecord

ENTITIES = {
    "alice": EntityRecord(
        id="alice", canonical="Alice", type_tag="PERSON", aliases=("Alice", "alice"),
        description="a traveller",
    ),
    "rome": EntityRecord(
        id="rome", canonical="Rome", type_tag="PLACE", aliases=("Rome", "rome"),
        description="the capital of Italy",
    ),
    "klm": EntityRecord(
        id="klm", canonical="KLM", type_tag="ORG", aliases=("KLM", "klm"),
        description="a Dutch airline",
    ),
}


def mk_turn(index, speaker="user", raw="x"):
    return Turn(
        index=index,
        speaker=speaker,
        raw=raw,
        resolved=raw,
        source=None if speaker == "user" else "fallback",
        timestamp_ms=1000 + index,
    )


def state_with(n_turns=0, salience=()):
    state = ConversationState(conversation_id="c1")
    for i in range(n_turns):
        state.turns.append(mk_turn(i, "user" if i % 2 == 0 else "bot"))
    state.salience = list(salience)
    return state


class TestRecentUtterances:
    def test_empty(self):
        assert recent_utterances(state_with(0), 5) == []

    def test_fewer_than_k(self):
        state = state_with(3)
        got = recent_utterances(state, 5)
        assert [t.index for t in got] == [0, 1, 2]

    def test_slice_of_ten(self):
        state = state_with(10)
        got = recent_utterances(state, 4)
        assert [t.index for t in got] == [6, 7, 8, 9]


class TestResolveCoreference:
    def test_no_pronouns_unchanged(self):
        assert resolve_coreference("hello there", state_with(0), ENTITIES) == "hello there"

    def test_it_resolves_to_recent_place(self):
        state = state_with(2, [SalienceEntry("rome", "PLACE", 0)])
        assert resolve_coreference("it is beautiful", state, ENTITIES) == "Rome is beautiful"

    def test_typed_lookup_she_and_it(self):
        state = state_with(
            2, [SalienceEntry("rome", "PLACE", 0), SalienceEntry("alice", "PERSON", 0)]
        )
        assert resolve_coreference("she likes it", state, ENTITIES) == "Alice likes Rome"

    def test_possessive_gets_apostrophe_s(self):
        state = state_with(2, [SalienceEntry("alice", "PERSON", 0)])
        assert (
            resolve_coreference("his seat was fine", state, ENTITIES)
            == "Alice's seat was fine"
        )

    def test_its_is_possessive_nonperson(self):
        state = state_with(2, [SalienceEntry("klm", "ORG", 0)])
        assert resolve_coreference("its fleet is big", state, ENTITIES) == "KLM's fleet is big"

    def test_they_takes_any_type(self):
        state = state_with(2, [SalienceEntry("klm", "ORG", 0)])
        assert resolve_coreference("they fly far", state, ENTITIES) == "KLM fly far"

    def test_person_pronoun_skips_places(self):
        state = state_with(2, [SalienceEntry("rome", "PLACE", 0)])
        assert resolve_coreference("she is lovely", state, ENTITIES) == "she is lovely"

    def test_window_expiry(self):
        state = state_with(6, [SalienceEntry("rome", "PLACE", 0)])
        # six turns since the mention: horizon is 1, entry at 0 is stale
        assert resolve_coreference("it is beautiful", state, ENTITIES) == "it is beautiful"

    def test_window_boundary_still_eligible(self):
        state = state_with(5, [SalienceEntry("rome", "PLACE", 0)])
        assert resolve_coreference("it is beautiful", state, ENTITIES) == "Rome is beautiful"

    def test_punctuation_spacing_preserved(self):
        state = state_with(2, [SalienceEntry("rome", "PLACE", 0)])
        assert resolve_coreference("is it big?", state, ENTITIES) == "is Rome big?"

    def test_empty_text(self):
        assert resolve_coreference("", state_with(0), ENTITIES) == ""

    def test_unknown_salience_id_left_alone(self):
        state = state_with(2, [SalienceEntry("ghost", "PLACE", 0)])
        assert resolve_coreference("it is odd", state, ENTITIES) == "it is odd"

    def test_idempotent_on_own_output(self):
        state = state_with(
            2, [SalienceEntry("alice", "PERSON", 0), SalienceEntry("rome", "PLACE", 0)]
        )
        once = resolve_coreference("she went, and it was great!", state, ENTITIES)
        assert resolve_coreference(once, state, ENTITIES) == once

    def test_non_pronoun_tokens_never_change(self):
        state = state_with(2, [SalienceEntry("rome", "PLACE", 0)])
        raw = "yesterday it rained on the old piazza, didn't it?"
        resolved = resolve_coreference(raw, state, ENTITIES)
        raw_tokens = nlu.tokenize(raw)
        out_tokens = nlu.tokenize(resolved)
        pronouns = {"it"}
        kept = [t.surface for t in raw_tokens if t.normalized not in pronouns]
        # Every non-pronoun token must appear unchanged, in order.
        remaining = [t.surface for t in out_tokens]
        for token in kept:
            assert token in remaining
            remaining = remaining[remaining.index(token) + 1 :]


def analyze_lite(text):
    """Frame with real mentions for the toy gazetteer, bypassing intents/topics."""
    tokens = tuple(nlu.tokenize(text))
    mentions = tuple(nlu.link_entities(tokens, list(ENTITIES.values())))
    return nlu.SemanticFrame(
        raw=text,
        resolved=text,
        tokens=tokens,
        topic=("general", 0.0),
        intents=(),
        mentions=mentions,
    )


class TestUpdateState:
    def exchange(self, state, text, reply="ok"):
        frame = analyze_lite(text)
        user = Turn(state.next_index(), "user", text, text, None, 1)
        bot = Turn(user.index + 1, "bot", reply, reply, "fallback", 2)
        update_state(state, frame, user, bot, ENTITIES)
        return state

    def test_first_exchange(self):
        state = self.exchange(ConversationState("c"), "alice flew to rome")
        assert len(state.turns) == 2
        assert [e.entity_id for e in state.salience] == ["rome", "alice"]
        assert all(e.last_turn == 0 for e in state.salience)

    def test_refresh_reorders(self):
        state = ConversationState("c")
        self.exchange(state, "alice flew to rome")
        self.exchange(state, "alice again")
        assert [e.entity_id for e in state.salience] == ["alice", "rome"]
        assert state.salience[0].last_turn == 2
        assert state.salience[1].last_turn == 0

    def test_no_mentions_leaves_salience(self):
        state = ConversationState("c")
        self.exchange(state, "alice flew to rome")
        before = [(e.entity_id, e.last_turn) for e in state.salience]
        self.exchange(state, "nothing notable happened")
        assert [(e.entity_id, e.last_turn) for e in state.salience] == before

    def test_alternation_and_monotonicity(self):
        state = ConversationState("c")
        for text in ["alice", "rome", "klm", "nothing"]:
            self.exchange(state, text)
        assert [t.index for t in state.turns] == list(range(8))
        assert [t.speaker for t in state.turns] == ["user", "bot"] * 4
        ordering = [e.last_turn for e in state.salience]
        assert ordering == sorted(ordering, reverse=True)

    def test_index_gap_rejected(self):
        state = ConversationState("c")
        frame = analyze_lite("hello")
        user = Turn(3, "user", "hello", "hello", None, 1)
        bot = Turn(4, "bot", "ok", "ok", "fallback", 2)
        with pytest.raises(ValueError):
            update_state(state, frame, user, bot, ENTITIES)
