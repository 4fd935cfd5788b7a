// Browser bootstrap: conversation id lives in the URL hash so a session is
// shareable and survives reloads.

import { createChatApp } from "./app.js";
import { conversationIdFromHash } from "./transcript.js";

const root = document.getElementById("app");
if (root) {
  const params = new URLSearchParams(window.location.search);
  const app = createChatApp(root, {
    conversationId: conversationIdFromHash(window),
    baseUrl: params.get("engine") ?? "",
  });
  void app.loadTranscript();
}
