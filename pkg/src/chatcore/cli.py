"""Operator command line: interactive chat, bot validation, batch eval, serving.

Exit codes: 0 success, 1 validation or eval failure, 2 usage error (argparse).
"""

from __future__ import annotations

import argparse
import sys
import time
from typing import Optional, Sequence

from .dialogue import ALL_SOURCES
from .engine import Engine, parse_config_file
from .store import (
    BotLoadError,
    HistoryStore,
    MemoryHistoryStore,
    load_bot_definition,
)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="chatcore")
    sub = parser.add_subparsers(dest="command", required=True)

    p_chat = sub.add_parser("chat", help="interactive REPL against a bot")
    p_chat.add_argument("--bot", required=True, help="bot definition directory")
    p_chat.add_argument("--data", required=True, help="history data directory")
    p_chat.add_argument(
        "--conversation", default=None, help="conversation id (default: time-based)"
    )

    p_validate = sub.add_parser("validate", help="check a bot definition")
    p_validate.add_argument("--bot", required=True)

    p_eval = sub.add_parser("eval", help="run scripted dialogues with expectations")
    p_eval.add_argument("--bot", required=True)
    p_eval.add_argument("--cases", required=True, help="tab-separated cases file")

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--config", required=True, help="key=value config file")

    args = parser.parse_args(argv)
    if args.command == "chat":
        return _cmd_chat(args.bot, args.data, args.conversation)
    if args.command == "validate":
        return _cmd_validate(args.bot)
    if args.command == "eval":
        return _cmd_eval(args.bot, args.cases)
    if args.command == "serve":
        return _cmd_serve(args.config)
    return 2


def _load_or_report(bot_dir: str) -> Optional[object]:
    try:
        return load_bot_definition(bot_dir)
    except BotLoadError as exc:
        for error in exc.errors:
            print(error, file=sys.stderr)
        return None


def _cmd_chat(bot_dir: str, data_dir: str, conversation: Optional[str]) -> int:
    bot = _load_or_report(bot_dir)
    if bot is None:
        return 1
    engine = Engine(bot, HistoryStore(data_dir), bot_dir=bot_dir)
    conversation_id = conversation or f"cli-{int(time.time())}"
    print(f"{bot.name} ready (conversation {conversation_id}); Ctrl-D to quit.")
    while True:
        try:
            line = input("you> ")
        except EOFError:
            print()
            return 0
        except KeyboardInterrupt:
            print()
            return 0
        if not line.strip():
            continue
        response = engine.respond(conversation_id, line)
        print(f"bot [{response.source}]> {response.reply}")


def _cmd_validate(bot_dir: str) -> int:
    bot = _load_or_report(bot_dir)
    if bot is None:
        return 1
    print(f"OK {bot.name}")
    return 0


def _cmd_serve(config_path: str) -> int:
    import uvicorn

    from .service import create_app

    try:
        config = parse_config_file(config_path)
    except (OSError, ValueError) as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        bot = load_bot_definition(config.bot_dir, config.bot_config())
    except BotLoadError as exc:
        for error in exc.errors:
            print(error, file=sys.stderr)
        return 1
    engine = Engine(bot, HistoryStore(config.data_dir), bot_dir=config.bot_dir)
    host, _, port = config.bind_addr.rpartition(":")
    uvicorn.run(create_app(engine), host=host or "127.0.0.1", port=int(port), log_level="info")
    return 0


def _cmd_eval(bot_dir: str, cases_path: str) -> int:
    bot = _load_or_report(bot_dir)
    if bot is None:
        return 1
    try:
        dialogues = _parse_cases(cases_path)
    except ValueError as exc:
        print(exc, file=sys.stderr)
        return 1

    total_turns = 0
    source_hits = 0
    substring_checks = 0
    substring_hits = 0
    failed_dialogues = 0
    for dialogue_id, turns in dialogues:
        engine = Engine(bot, MemoryHistoryStore(), bot_dir=bot_dir)
        dialogue_ok = True
        for text, expected_source, expected_substring in turns:
            response = engine.respond(dialogue_id, text)
            total_turns += 1
            source_ok = response.source == expected_source
            source_hits += source_ok
            substring_ok = True
            if expected_substring is not None:
                substring_checks += 1
                substring_ok = expected_substring in response.reply
                substring_hits += substring_ok
            if not (source_ok and substring_ok):
                dialogue_ok = False
                print(
                    f"FAIL {dialogue_id}: {text!r} -> source={response.source} "
                    f"(expected {expected_source})"
                    + (
                        f", reply={response.reply!r} missing {expected_substring!r}"
                        if not substring_ok
                        else ""
                    )
                )
        if dialogue_ok:
            print(f"PASS {dialogue_id} ({len(turns)} turns)")
        else:
            failed_dialogues += 1
    if total_turns:
        print(
            f"source-match {source_hits}/{total_turns}"
            + (
                f", substring-match {substring_hits}/{substring_checks}"
                if substring_checks
                else ""
            )
        )
    else:
        print("no cases")
    return 0 if failed_dialogues == 0 else 1


def _parse_cases(path: str) -> list[tuple[str, list[tuple[str, str, Optional[str]]]]]:
    """`dialogue_id<TAB>text<TAB>expected_source[<TAB>substring]`, blank-line separated."""
    order: list[str] = []
    grouped: dict[str, list[tuple[str, str, Optional[str]]]] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise ValueError(
                    f"{path}:{lineno}: expected 3 or 4 tab-separated fields, got {len(parts)}"
                )
            dialogue_id, text, expected_source = parts[0], parts[1], parts[2]
            if expected_source not in ALL_SOURCES:
                raise ValueError(
                    f"{path}:{lineno}: unknown source tag {expected_source!r}"
                )
            substring = parts[3] if len(parts) == 4 and parts[3] else None
            if dialogue_id not in grouped:
                order.append(dialogue_id)
                grouped[dialogue_id] = []
            grouped[dialogue_id].append((text, expected_source, substring))
    return [(dialogue_id, grouped[dialogue_id]) for dialogue_id in order]


if __name__ == "__main__":
    sys.exit(main())
