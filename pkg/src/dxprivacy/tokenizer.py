"""Uncased wordpiece tokenization against an embedding table's vocabulary."""

from __future__ import annotations

import unicodedata

from .embeddings import EmbeddingTable

UNK = "[UNK]"
MAX_WORD_CHARS = 100


def _is_punctuation(ch: str) -> bool:
    cp = ord(ch)
    # ASCII symbols count as punctuation even where Unicode says otherwise ("$", "^", "`")
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def basic_split(text: str) -> list[str]:
    """Lowercase, split on whitespace, then split off every punctuation character."""
    words = []
    for chunk in text.lower().split():
        cur = []
        for ch in chunk:
            if _is_punctuation(ch):
                if cur:
                    words.append("".join(cur))
                    cur = []
                words.append(ch)
            else:
                cur.append(ch)
        if cur:
            words.append("".join(cur))
    return words


def wordpiece(word: str, vocab, unk: str = UNK, max_chars: int = MAX_WORD_CHARS) -> list[str]:
    """Greedy longest-match-first split of one word into vocabulary pieces."""
    if len(word) > max_chars:
        return [unk]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        match = None
        while start < end:
            sub = word[start:end]
            if start > 0:
                sub = "##" + sub
            if sub in vocab:
                match = sub
                break
            end -= 1
        if match is None:
            return [unk]
        pieces.append(match)
        start = end
    return pieces


def tokenize(text: str, table: EmbeddingTable, max_len: int = 128) -> list[int]:
    if max_len < 1:
        raise ValueError("max_len must be positive")
    vocab = table.vocab
    if UNK not in vocab:
        raise ValueError("vocabulary has no [UNK] token")
    ids: list[int] = []
    for word in basic_split(text):
        for piece in wordpiece(word, vocab):
            ids.append(vocab.id(piece))
            if len(ids) == max_len:
                return ids
    return ids


def detokenize(ids, table: EmbeddingTable) -> str:
    out: list[str] = []
    for i in ids:
        tok = table.token(int(i))
        if tok.startswith("##") and out:
            out[-1] += tok[2:]
        else:
            out.append(tok)
    return " ".join(out)
