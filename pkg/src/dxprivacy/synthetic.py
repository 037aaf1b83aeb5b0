"""Synthetic embedding tables and SST-style sentiment data for desk-scale runs."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .embeddings import SPECIAL_TOKENS, EmbeddingTable


def line_table(positions, names=None) -> EmbeddingTable:
    """1-dimensional table with one regular token per position and no special tokens."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    names = names or [f"p{i}" for i in range(positions.shape[0])]
    return EmbeddingTable(names, positions)


def gaussian_table(num_tokens: int, dim: int, scale: float = 1.0, seed: int = 0, specials: bool = True) -> EmbeddingTable:
    """``num_tokens`` regular tokens ``t0, t1, ...`` with i.i.d. N(0, scale^2) components.

    With ``specials`` the five special tokens come first and sit at the origin.
    """
    rng = np.random.default_rng(seed)
    mat = rng.normal(0.0, scale, size=(num_tokens, dim))
    names = [f"t{i}" for i in range(num_tokens)]
    if specials:
        mat = np.vstack([np.zeros((len(SPECIAL_TOKENS), dim)), mat])
        names = list(SPECIAL_TOKENS) + names
    return EmbeddingTable(names, mat)


def separated_table(num_tokens: int, dim: int, gap: float = 1.0, seed: int = 0) -> EmbeddingTable:
    """Regular tokens on a jittered integer lattice with nearest-neighbour gap >= ``gap``."""
    rng = np.random.default_rng(seed)
    side = int(np.ceil(num_tokens ** (1.0 / dim))) + 1
    cells = rng.choice(side**dim, size=num_tokens, replace=False)
    coords = np.stack(np.unravel_index(cells, (side,) * dim), axis=1).astype(np.float64)
    coords = coords * (2.0 * gap) + rng.uniform(-0.25 * gap, 0.25 * gap, size=coords.shape)
    names = list(SPECIAL_TOKENS) + [f"t{i}" for i in range(num_tokens)]
    mat = np.vstack([np.full((len(SPECIAL_TOKENS), dim), -1e3), coords])
    return EmbeddingTable(names, mat)


@dataclass
class SentimentWorld:
    """Knobs for the synthetic sentiment task.

    Embedding coordinates have geometrically decaying scales from
    ``scale_max`` to ``scale_min`` (an anisotropic spectrum); sentiment words
    are shifted by ``+-offset`` along a fixed random unit direction.
    """

    dim: int = 32
    neutral_words: int = 400
    sentiment_words: int = 50
    scale_max: float = 0.09
    scale_min: float = 0.003
    offset: float = 0.06
    min_len: int = 6
    max_len: int = 12
    max_sentiment: int = 3
    contrary_rate: float = 0.3
    seed: int = 0

    def table(self) -> EmbeddingTable:
        rng = np.random.default_rng(self.seed)
        scales = np.geomspace(self.scale_max, self.scale_min, self.dim)
        n_total = self.neutral_words + 2 * self.sentiment_words
        mat = rng.normal(size=(n_total, self.dim)) * scales
        direction = rng.normal(size=self.dim)
        direction /= np.linalg.norm(direction)
        s = self.sentiment_words
        mat[self.neutral_words : self.neutral_words + s] += self.offset * direction
        mat[self.neutral_words + s :] -= self.offset * direction
        names = (
            [f"w{i}" for i in range(self.neutral_words)]
            + [f"good{i}" for i in range(s)]
            + [f"bad{i}" for i in range(s)]
        )
        specials = np.zeros((len(SPECIAL_TOKENS), self.dim))
        return EmbeddingTable(list(SPECIAL_TOKENS) + names, np.vstack([specials, mat]))

    def sentences(self, count: int, seed: int) -> list[tuple[int, str]]:
        """``count`` balanced ``(label, text)`` examples."""
        rng = np.random.default_rng(seed)
        out = []
        for i in range(count):
            label = i % 2
            length = int(rng.integers(self.min_len, self.max_len + 1))
            k = int(rng.integers(1, self.max_sentiment + 1))
            own, other = ("good", "bad") if label else ("bad", "good")
            words = [f"{own}{j}" for j in rng.integers(0, self.sentiment_words, size=k)]
            if rng.random() < self.contrary_rate:
                words.append(f"{other}{int(rng.integers(0, self.sentiment_words))}")
            words += [f"w{j}" for j in rng.integers(0, self.neutral_words, size=max(0, length - len(words)))]
            rng.shuffle(words)
            out.append((label, " ".join(words)))
        return out

    def write(self, directory, train_size: int = 2000, eval_size: int = 800, table_format: str = "text"):
        """Write ``table.<fmt>``, ``train.tsv`` and ``dev.tsv`` into ``directory``; return their paths."""
        from .embeddings import save_table

        os.makedirs(directory, exist_ok=True)
        table_path = os.path.join(directory, "table.txt" if table_format == "text" else "table.bin")
        save_table(self.table(), table_path, table_format)
        paths = {"table": table_path}
        for name, size, seed in (("train", train_size, self.seed + 1), ("dev", eval_size, self.seed + 2)):
            path = os.path.join(directory, f"{name}.tsv")
            with open(path, "w", encoding="utf-8") as f:
                for label, text in self.sentences(size, seed):
                    f.write(f"{label}\t{text}\n")
            paths[name] = path
        return paths
