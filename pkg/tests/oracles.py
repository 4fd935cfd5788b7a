"""Independent reference implementations used to cross-check the engine."""

from __future__ import annotations

import math
from collections import Counter

from chatcore import nlu


def brute_force_tfidf(corpus, query_text, stopwords):
    """From-scratch tf-idf cosine ranking over (timestamp, text) pairs.

    Returns [(score, timestamp, doc_position)] sorted the way retrieval
    sorts: score desc, newer timestamp first, then document position.
    """
    texts = [text for _, text in corpus]
    doc_tokens = [[t.normalized for t in nlu.tokenize(text)] for text in texts]
    n = len(texts)
    df = Counter()
    for words in doc_tokens:
        for w in set(words):
            df[w] += 1

    def idf(w):
        return math.log(n / (1 + df[w])) + 1.0

    q_words = [
        t.normalized
        for t in nlu.tokenize(query_text)
        if t.normalized not in stopwords and any(c.isalnum() for c in t.normalized)
    ]
    q_vec = {w: c * idf(w) for w, c in Counter(q_words).items()}
    q_norm = math.sqrt(sum(v * v for v in q_vec.values()))
    results = []
    for doc_id, words in enumerate(doc_tokens):
        d_vec = {w: c * idf(w) for w, c in Counter(words).items()}
        d_norm = math.sqrt(sum(v * v for v in d_vec.values()))
        dot = sum(q_vec.get(w, 0.0) * v for w, v in d_vec.items())
        if q_norm == 0 or d_norm == 0 or dot <= 0:
            continue
        results.append((dot / (q_norm * d_norm), corpus[doc_id][0], doc_id))
    results.sort(key=lambda r: (-r[0], -r[1], r[2]))
    return results
