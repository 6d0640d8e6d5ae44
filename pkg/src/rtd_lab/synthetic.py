"""Synthetic English-like corpora with learnable context structure.

Sentences follow a few templates. Each sentence draws a topic, and the topic
constrains which nouns, verbs and adjectives may appear, so a masked word is
predictable from its neighbours to a degree that rewards deeper context.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl", "gr", "sh"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou", "ee"]
_CODAS = ["", "n", "r", "s", "t", "l", "m", "k"]

_FUNCTION = {
    "det": ["the", "a", "this", "that", "every", "some"],
    "prep": ["near", "under", "with", "behind", "over", "inside"],
    "conj": ["and", "but", "while", "because"],
    "aux": ["will", "can", "must", "should"],
}

_TEMPLATES = [
    "det adj noun verb det noun .",
    "det noun verb det adj noun prep det noun .",
    "det adj noun aux verb det noun conj det noun verb .",
    "det noun prep det noun verb det adj adj noun .",
    "det noun verb .",
    "det adj noun verb det noun prep det adj noun , conj det noun aux verb det noun .",
]


def _make_words(rng: np.random.Generator, n: int, taken: set) -> list[str]:
    out = []
    while len(out) < n:
        syl = rng.integers(1, 4)
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) + rng.choice(_CODAS) for _ in range(syl))
        if w not in taken and len(w) > 2:
            taken.add(w)
            out.append(w)
    return out


class Grammar:
    def __init__(self, n_topics: int = 16, nouns: int = 12, verbs: int = 8, adjs: int = 6, seed: int = 0):
        rng = np.random.default_rng(seed)
        taken = {w for ws in _FUNCTION.values() for w in ws}
        self.topics = []
        for _ in range(n_topics):
            self.topics.append(
                {
                    "noun": _make_words(rng, nouns, taken),
                    "verb": _make_words(rng, verbs, taken),
                    "adj": _make_words(rng, adjs, taken),
                }
            )

    def sentence(self, rng: np.random.Generator) -> str:
        topic = self.topics[rng.integers(len(self.topics))]
        template = _TEMPLATES[rng.integers(len(_TEMPLATES))]
        words = []
        for slot in template.split():
            if slot in topic:
                pool = topic[slot]
                # Zipf-ish preference inside each pool
                idx = min(int(rng.zipf(1.6)) - 1, len(pool) - 1)
                words.append(pool[idx])
            elif slot in _FUNCTION:
                words.append(_FUNCTION[slot][rng.integers(len(_FUNCTION[slot]))])
            else:
                words.append(slot)
        return " ".join(words)


def generate_lines(n_lines: int | None = None, n_bytes: int | None = None, seed: int = 0, grammar_seed: int = 0) -> list[str]:
    if (n_lines is None) == (n_bytes is None):
        raise ValueError("give exactly one of n_lines or n_bytes")
    grammar = Grammar(seed=grammar_seed)
    rng = np.random.default_rng(seed)
    lines: list[str] = []
    size = 0
    while (n_lines is not None and len(lines) < n_lines) or (n_bytes is not None and size < n_bytes):
        s = grammar.sentence(rng)
        lines.append(s)
        size += len(s) + 1
    return lines


def write_corpus(path, n_lines: int | None = None, n_bytes: int | None = None, seed: int = 0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(generate_lines(n_lines, n_bytes, seed)) + "\n", encoding="utf-8")
    return path
