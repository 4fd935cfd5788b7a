"""HTTP surface for the engine: chat, history, health, and admin reload."""

from __future__ import annotations

import logging
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .engine import ChatValidationError, Engine
from .store import BotLoadError

logger = logging.getLogger(__name__)


class ChatBody(BaseModel):
    conversation_id: str
    text: str
    debug: Optional[bool] = None


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="chatcore", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc.errors()[:1])})

    @app.exception_handler(ChatValidationError)
    async def invalid_chat(request: Request, exc: ChatValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.post("/v1/chat")
    def chat(body: ChatBody):
        debug = body.debug if body.debug is not None else engine.bot.config.debug_default
        response = engine.respond(body.conversation_id, body.text, debug=debug)
        payload = {
            "reply": response.reply,
            "source": response.source,
            "rank_size": response.rank_size,
        }
        if response.frame_debug is not None:
            payload["frame_debug"] = response.frame_debug
        return payload

    @app.get("/v1/conversations/{conversation_id}/history")
    def history(conversation_id: str, limit: Optional[int] = None):
        records = engine.history(conversation_id, limit)
        return {
            "conversation_id": conversation_id,
            "turns": [
                {
                    "index": r.index,
                    "speaker": r.speaker,
                    "text": r.raw,
                    "resolved": r.resolved,
                    "source": r.source,
                    "timestamp_ms": r.timestamp_ms,
                }
                for r in records
            ],
        }

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "bot": engine.bot.name}

    @app.post("/v1/admin/reload")
    def reload_bot():
        try:
            bot = engine.reload()
        except BotLoadError as exc:
            logger.warning("reload rejected: %s", exc)
            return JSONResponse(
                status_code=409, content={"error": "; ".join(exc.errors)}
            )
        return {"status": "reloaded", "bot": bot.name}

    return app
