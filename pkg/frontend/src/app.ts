// DOM wiring: transcript view, composer, source badges, debug inspector.

import { ApiError, ChatApi } from "./api.js";
import { Transcript, type UiMessage } from "./transcript.js";

export interface AppOptions {
  conversationId: string;
  baseUrl?: string;
  now?: () => number;
}

export class ChatApp {
  readonly transcript = new Transcript();
  private readonly api: ChatApi;
  private readonly now: () => number;
  private debugVisible = false;
  private loadError = false;

  private listEl!: HTMLElement;
  private inputEl!: HTMLTextAreaElement;
  private sendEl!: HTMLButtonElement;
  private statusEl!: HTMLElement;
  private debugToggleEl!: HTMLButtonElement;

  constructor(
    private readonly root: HTMLElement,
    private readonly options: AppOptions,
  ) {
    this.api = new ChatApi(options.baseUrl ?? "");
    this.now = options.now ?? (() => Date.now());
    this.mount();
  }

  private mount(): void {
    this.root.innerHTML = `
      <div class="chat">
        <header class="chat-header">
          <span class="chat-title">chatcore</span>
          <span class="chat-conversation" data-role="conversation"></span>
          <button type="button" class="debug-toggle" data-role="debug-toggle">debug</button>
        </header>
        <div class="chat-status" data-role="status" hidden></div>
        <main class="chat-messages" data-role="messages"></main>
        <footer class="chat-composer">
          <textarea rows="1" placeholder="Say something..." data-role="input"></textarea>
          <button type="button" data-role="send" disabled>Send</button>
        </footer>
      </div>`;
    this.listEl = this.query("messages");
    this.inputEl = this.query("input") as HTMLTextAreaElement;
    this.sendEl = this.query("send") as HTMLButtonElement;
    this.statusEl = this.query("status");
    this.debugToggleEl = this.query("debug-toggle") as HTMLButtonElement;
    this.query("conversation").textContent = this.options.conversationId;

    this.sendEl.addEventListener("click", () => void this.send());
    this.inputEl.addEventListener("input", () => this.syncComposer());
    this.inputEl.addEventListener("keydown", (event) => {
      if (event.key === "Enter" && !event.shiftKey) {
        event.preventDefault();
        void this.send();
      }
    });
    this.debugToggleEl.addEventListener("click", () => {
      this.debugVisible = !this.debugVisible;
      this.render();
    });
    this.listEl.addEventListener("click", (event) => {
      const target = event.target as HTMLElement;
      const retry = target.closest("[data-retry-index]") as HTMLElement | null;
      if (retry) {
        void this.retry(Number(retry.dataset.retryIndex));
      }
    });
  }

  private query(role: string): HTMLElement {
    return this.root.querySelector(`[data-role="${role}"]`) as HTMLElement;
  }

  async loadTranscript(): Promise<void> {
    try {
      const turns = await this.api.loadHistory(this.options.conversationId);
      this.transcript.loadFromHistory(turns);
      this.loadError = false;
    } catch {
      this.loadError = true;
    }
    this.render();
  }

  async send(text?: string): Promise<void> {
    const body = (text ?? this.inputEl.value).trim();
    if (!body || this.transcript.hasPending()) {
      return;
    }
    this.inputEl.value = "";
    const index = this.transcript.beginSend(body, this.now());
    this.render();
    try {
      const reply = await this.api.sendMessage(this.options.conversationId, body, this.debugVisible);
      this.transcript.completeSend(index, reply, this.now());
    } catch (err) {
      void (err instanceof ApiError);
      this.transcript.failSend(index);
    }
    this.render();
  }

  async retry(index: number): Promise<void> {
    const text = this.transcript.takeFailed(index);
    if (text !== null) {
      this.render();
      await this.send(text);
    }
  }

  toggleDebug(): void {
    this.debugVisible = !this.debugVisible;
    this.render();
  }

  render(): void {
    this.statusEl.hidden = !this.loadError;
    if (this.loadError) {
      this.statusEl.textContent = "Could not load the transcript. Messages will appear once the engine is reachable.";
    }
    this.listEl.replaceChildren(
      ...this.transcript.all().map((message, index) => this.bubble(message, index)),
    );
    this.debugToggleEl.classList.toggle("active", this.debugVisible);
    this.syncComposer();
    this.listEl.scrollTop = this.listEl.scrollHeight;
  }

  private bubble(message: UiMessage, index: number): HTMLElement {
    const el = document.createElement("article");
    el.className = `msg ${message.author} ${message.status}`;
    const text = document.createElement("div");
    text.className = "msg-text";
    text.textContent = message.text;
    el.appendChild(text);
    if (message.author === "bot" && message.source) {
      const badge = document.createElement("span");
      badge.className = "msg-badge";
      badge.dataset.source = message.source;
      badge.textContent = message.source;
      el.appendChild(badge);
    }
    if (message.status === "failed") {
      const note = document.createElement("div");
      note.className = "msg-error";
      note.textContent = "Not delivered. ";
      const retry = document.createElement("button");
      retry.type = "button";
      retry.className = "msg-retry";
      retry.dataset.retryIndex = String(index);
      retry.textContent = "Retry";
      note.appendChild(retry);
      el.appendChild(note);
    }
    if (this.debugVisible && message.debug) {
      const pre = document.createElement("pre");
      pre.className = "msg-debug";
      pre.textContent = JSON.stringify(message.debug, null, 2);
      el.appendChild(pre);
    }
    return el;
  }

  private syncComposer(): void {
    const busy = this.transcript.hasPending();
    this.inputEl.disabled = busy;
    this.sendEl.disabled = busy || !this.inputEl.value.trim();
  }
}

export function createChatApp(root: HTMLElement, options: AppOptions): ChatApp {
  return new ChatApp(root, options);
}
