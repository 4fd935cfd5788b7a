// Thin typed client for the chat engine's HTTP API.

export interface FrameDebug {
  topic: { name: string; confidence: number };
  top_intent: { name: string; score: number } | null;
  resolved: string;
  mentions: { id: string; type: string | null; start: number; end: number }[];
}

export interface ChatReply {
  reply: string;
  source: string;
  rank_size: number;
  frame_debug?: FrameDebug;
}

export interface HistoryTurn {
  index: number;
  speaker: "user" | "bot";
  text: string;
  resolved: string;
  source: string | null;
  timestamp_ms: number;
}

export class ApiError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
    this.name = "ApiError";
  }
}

export class ChatApi {
  constructor(private readonly baseUrl: string = "") {}

  async sendMessage(conversationId: string, text: string, debug: boolean): Promise<ChatReply> {
    let response: Response;
    try {
      response = await fetch(`${this.baseUrl}/v1/chat`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ conversation_id: conversationId, text, debug }),
      });
    } catch (err) {
      throw new ApiError(`network error: ${String(err)}`);
    }
    if (!response.ok) {
      const detail = await response.text().catch(() => "");
      throw new ApiError(`chat failed (${response.status}) ${detail}`, response.status);
    }
    return (await response.json()) as ChatReply;
  }

  async loadHistory(conversationId: string, limit?: number): Promise<HistoryTurn[]> {
    const query = limit !== undefined ? `?limit=${limit}` : "";
    let response: Response;
    try {
      response = await fetch(
        `${this.baseUrl}/v1/conversations/${encodeURIComponent(conversationId)}/history${query}`,
      );
    } catch (err) {
      throw new ApiError(`network error: ${String(err)}`);
    }
    if (!response.ok) {
      throw new ApiError(`history failed (${response.status})`, response.status);
    }
    const body = (await response.json()) as { turns: HistoryTurn[] };
    return body.turns;
  }
}
