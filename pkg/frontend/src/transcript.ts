// Transcript state: server history plus one optimistic in-flight exchange.
// Pure data operations so the rendering layer stays trivial to test.

import type { FrameDebug, HistoryTurn } from "./api.js";

export type MessageStatus = "sent" | "pending" | "failed";

export interface UiMessage {
  author: "user" | "bot";
  text: string;
  source?: string; // bot messages only
  timestampMs: number;
  status: MessageStatus;
  debug?: FrameDebug;
}

export class Transcript {
  private messages: UiMessage[] = [];

  all(): readonly UiMessage[] {
    return this.messages;
  }

  /** Replace everything with server history; server order is transcript order. */
  loadFromHistory(turns: HistoryTurn[]): void {
    this.messages = turns.map((turn) => ({
      author: turn.speaker,
      text: turn.text,
      source: turn.source ?? undefined,
      timestampMs: turn.timestamp_ms,
      status: "sent" as MessageStatus,
    }));
  }

  /** Optimistically append the user's message; returns its index. */
  beginSend(text: string, now: number): number {
    this.messages.push({ author: "user", text, timestampMs: now, status: "pending" });
    return this.messages.length - 1;
  }

  /** The send succeeded: settle the user bubble and append the bot reply. */
  completeSend(
    index: number,
    reply: { reply: string; source: string; frame_debug?: FrameDebug },
    now: number,
  ): void {
    const message = this.messages[index];
    if (message) {
      message.status = "sent";
    }
    this.messages.push({
      author: "bot",
      text: reply.reply,
      source: reply.source,
      timestampMs: now,
      status: "sent",
      debug: reply.frame_debug,
    });
  }

  /** The send failed: keep the user bubble, flagged for retry. */
  failSend(index: number): void {
    const message = this.messages[index];
    if (message) {
      message.status = "failed";
    }
  }

  /** Drop a failed message (its text is resent as a fresh exchange). */
  takeFailed(index: number): string | null {
    const message = this.messages[index];
    if (!message || message.status !== "failed") {
      return null;
    }
    this.messages.splice(index, 1);
    return message.text;
  }

  hasPending(): boolean {
    return this.messages.some((m) => m.status === "pending");
  }
}

const SLUG_ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789";

export function randomSlug(length = 10): string {
  let slug = "conv-";
  for (let i = 0; i < length; i++) {
    slug += SLUG_ALPHABET[Math.floor(Math.random() * SLUG_ALPHABET.length)];
  }
  return slug;
}

/** Conversation id from the URL hash, minting and storing one if absent. */
export function conversationIdFromHash(win: { location: Location }): string {
  const current = win.location.hash.replace(/^#/, "");
  if (/^[A-Za-z0-9_-]{1,128}$/.test(current)) {
    return current;
  }
  const fresh = randomSlug();
  win.location.hash = fresh;
  return fresh;
}
