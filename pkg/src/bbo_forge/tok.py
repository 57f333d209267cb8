"""Byte-pair encoding over encoded-trajectory text.

The base alphabet is all 256 bytes; training greedily merges the most frequent
adjacent pair, breaking count ties toward the lexicographically smallest pair
of byte expansions. Text is chunked at the `|` trial delimiter before counting
and encoding, so no token ever spans two trials (`|` may only terminate a
token). One end-of-sequence id sits just past the trained vocabulary; models
size their embeddings as vocab_size + 1.
"""
from __future__ import annotations

import json
from collections import Counter, defaultdict
from typing import Iterable, Sequence


def _chunks(text: str) -> list[bytes]:
    """Split at '|', keeping the delimiter at the end of each chunk."""
    data = text.encode("utf-8")
    out = []
    start = 0
    while True:
        cut = data.find(b"|", start)
        if cut < 0:
            if start < len(data):
                out.append(data[start:])
            return out
        out.append(data[start : cut + 1])
        start = cut + 1


class Tokenizer:
    def __init__(self, merges: Sequence[tuple[int, int]]):
        self.merges = [tuple(m) for m in merges]
        self.expansions: list[bytes] = [bytes([i]) for i in range(256)]
        for a, b in self.merges:
            if not (0 <= a < len(self.expansions) and 0 <= b < len(self.expansions)):
                raise ValueError(f"merge ({a}, {b}) references unknown tokens")
            self.expansions.append(self.expansions[a] + self.expansions[b])
        if len(set(self.expansions)) != len(self.expansions):
            raise ValueError("merge list produces duplicate token expansions")
        self.ranks = {pair: 256 + i for i, pair in enumerate(self.merges)}
        self._cache: dict[bytes, tuple[int, ...]] = {}

    @property
    def vocab_size(self) -> int:
        return len(self.expansions)

    @property
    def eos_id(self) -> int:
        return self.vocab_size

    def token_bytes(self, token_id: int) -> bytes:
        if token_id == self.eos_id:
            return b""
        if not 0 <= token_id < self.vocab_size:
            raise ValueError(f"unknown token id {token_id}")
        return self.expansions[token_id]

    def _encode_chunk(self, chunk: bytes) -> tuple[int, ...]:
        cached = self._cache.get(chunk)
        if cached is not None:
            return cached
        ids = list(chunk)
        while len(ids) >= 2:
            best_rank = None
            best_pos = -1
            for i in range(len(ids) - 1):
                rank = self.ranks.get((ids[i], ids[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_pos = rank, i
            if best_rank is None:
                break
            pair = (ids[best_pos], ids[best_pos + 1])
            ids = _merge_pair(ids, pair, best_rank)
        result = tuple(ids)
        if len(self._cache) > 1 << 17:
            self._cache.clear()
        self._cache[chunk] = result
        return result

    def tokenize(self, text: str) -> list[int]:
        out: list[int] = []
        for chunk in _chunks(text):
            out.extend(self._encode_chunk(chunk))
        return out

    def detokenize(self, ids: Iterable[int]) -> str:
        return b"".join(self.token_bytes(i) for i in ids).decode("utf-8")

    def save(self, path) -> None:
        doc = {"merges": [list(m) for m in self.merges], "vocab_size": self.vocab_size}
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f)

    @classmethod
    def load(cls, path) -> "Tokenizer":
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        tok = cls([tuple(m) for m in doc["merges"]])
        if tok.vocab_size != doc["vocab_size"]:
            raise ValueError(
                f"{path}: replayed vocab size {tok.vocab_size} != declared {doc['vocab_size']}"
            )
        return tok


def _merge_pair(ids: list[int], pair: tuple[int, int], new_id: int) -> list[int]:
    out = []
    i = 0
    while i < len(ids):
        if i < len(ids) - 1 and ids[i] == pair[0] and ids[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(ids[i])
            i += 1
    return out


def train_bpe(corpus: Iterable[str], vocab_size: int) -> Tokenizer:
    """Greedy BPE: merge the most frequent pair until the vocabulary is full or
    no pair occurs twice."""
    if vocab_size < 257:
        raise ValueError("vocab_size must be at least 257 (256 bytes + 1 merge)")
    words = Counter()
    for text in corpus:
        for chunk in _chunks(text):
            words[tuple(chunk)] += 1
    if not words:
        raise ValueError("empty corpus")

    expansions: list[bytes] = [bytes([i]) for i in range(256)]
    merges: list[tuple[int, int]] = []

    pair_counts: Counter = Counter()
    pair_words: defaultdict = defaultdict(set)
    for word, count in words.items():
        for a, b in zip(word, word[1:]):
            pair_counts[(a, b)] += count
            pair_words[(a, b)].add(word)

    while len(expansions) < vocab_size:
        best_count = 0
        best_pair = None
        for pair, count in pair_counts.items():
            if count < 2:
                continue
            key = (expansions[pair[0]], expansions[pair[1]])
            if count > best_count or (
                count == best_count
                and key < (expansions[best_pair[0]], expansions[best_pair[1]])
            ):
                best_count, best_pair = count, pair
        if best_pair is None:
            break

        new_id = len(expansions)
        expansions.append(expansions[best_pair[0]] + expansions[best_pair[1]])
        merges.append(best_pair)

        for word in list(pair_words[best_pair]):
            count = words.pop(word, 0)
            if count == 0:
                continue
            for a, b in zip(word, word[1:]):
                pair_counts[(a, b)] -= count
                if pair_counts[(a, b)] <= 0:
                    del pair_counts[(a, b)]
                pair_words[(a, b)].discard(word)
            merged = tuple(_merge_pair(list(word), best_pair, new_id))
            words[merged] += count
            for a, b in zip(merged, merged[1:]):
                pair_counts[(a, b)] += count
                pair_words[(a, b)].add(merged)

    return Tokenizer(merges)
