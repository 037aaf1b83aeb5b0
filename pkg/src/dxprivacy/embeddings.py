"""Token embedding table: storage, file formats and exact nearest-neighbour queries.

Rows are stored as float32; every distance is accumulated in float64.

Two on-disk formats are supported:

* text: first line ``"<|V|> <n>"``, then one ``"token c1 ... cn"`` line per token.
* binary: magic ``b"DXPV1"``, little-endian u32 ``|V|`` and u32 ``n``, then
  ``|V|`` tokens each as a u32 byte length followed by UTF-8 bytes, then the
  ``|V| x n`` row-major float32 matrix.
"""

from __future__ import annotations

import os
import re
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Sequence

import numpy as np

Candidates = Literal["all", "regular"]

SPECIAL_TOKENS = ("[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]")
_UNUSED_RE = re.compile(r"\[unused\d+\]")
BINARY_MAGIC = b"DXPV1"

# rows per distance block in batched queries
DEFAULT_BLOCK = 2048
# identity-formula candidates within this relative slack of the row minimum
# are re-scored by direct subtraction
_REFINE_RTOL = 1e-9


class TableFormatError(ValueError):
    """Raised when an embedding file cannot be parsed."""


def is_special(token: str) -> bool:
    return token in SPECIAL_TOKENS or _UNUSED_RE.fullmatch(token) is not None


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    special_flags: np.ndarray = field(init=False, repr=False, compare=False)
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for i, tok in enumerate(self.tokens):
            if tok in index:
                raise ValueError(f"duplicate token {tok!r} at index {i}")
            index[tok] = i
        object.__setattr__(self, "index", index)
        flags = np.fromiter((is_special(t) for t in self.tokens), dtype=bool, count=len(self.tokens))
        flags.setflags(write=False)
        object.__setattr__(self, "special_flags", flags)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index[token]

    def get(self, token: str, default=None):
        return self.index.get(token, default)


class EmbeddingTable:
    """Immutable vocabulary plus ``|V| x n`` embedding matrix.

    All query methods are read-only and safe to call from several threads.
    """

    def __init__(self, tokens: Sequence[str], matrix):
        vocab = tokens if isinstance(tokens, Vocabulary) else Vocabulary(tuple(tokens))
        matrix = np.array(matrix, dtype=np.float32, copy=True)
        if matrix.ndim != 2:
            raise ValueError("embedding matrix must be 2-dimensional")
        if matrix.shape[0] != len(vocab):
            raise ValueError(f"matrix has {matrix.shape[0]} rows for {len(vocab)} tokens")
        if matrix.shape[1] == 0:
            raise ValueError("embedding dimension must be positive")
        if not np.all(np.isfinite(matrix)):
            bad = int(np.nonzero(~np.all(np.isfinite(matrix), axis=1))[0][0])
            raise ValueError(f"row {bad} contains a non-finite value")
        matrix.setflags(write=False)
        self.vocab = vocab
        self.matrix = matrix

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def __repr__(self) -> str:
        return f"EmbeddingTable(|V|={len(self)}, dim={self.dim})"

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @cached_property
    def matrix64(self) -> np.ndarray:
        m = self.matrix.astype(np.float64)
        m.setflags(write=False)
        return m

    @cached_property
    def norms(self) -> np.ndarray:
        """Squared Euclidean row norms (float64)."""
        m = self.matrix64
        out = np.einsum("ij,ij->i", m, m)
        out.setflags(write=False)
        return out

    @cached_property
    def regular_ids(self) -> np.ndarray:
        ids = np.nonzero(~self.vocab.special_flags)[0].astype(np.int64)
        ids.setflags(write=False)
        return ids

    def is_regular(self, token_id: int) -> bool:
        self._check_id(token_id)
        return not bool(self.vocab.special_flags[token_id])

    def token(self, token_id: int) -> str:
        self._check_id(token_id)
        return self.vocab.tokens[token_id]

    def candidate_ids(self, candidates: Candidates) -> np.ndarray:
        if candidates == "all":
            return np.arange(len(self), dtype=np.int64)
        if candidates == "regular":
            return self.regular_ids
        raise ValueError(f"unknown candidate set {candidates!r}")

    def _candidate_arrays(self, candidates: Candidates):
        if candidates == "all":
            return None, self.matrix64, self.norms
        return self._regular_arrays

    @cached_property
    def _regular_arrays(self):
        ids = self.regular_ids
        return ids, np.ascontiguousarray(self.matrix64[ids]), np.ascontiguousarray(self.norms[ids])

    def _check_id(self, token_id) -> None:
        if not 0 <= int(token_id) < len(self):
            raise IndexError(f"token id {token_id} out of range for |V|={len(self)}")


# ---------------------------------------------------------------------------
# file formats


def load_table(path: str | os.PathLike, format: str = "text") -> EmbeddingTable:
    if format == "text":
        return _load_text(path)
    if format == "binary":
        return _load_binary(path)
    raise ValueError(f"unknown table format {format!r}")


def save_table(table: EmbeddingTable, path: str | os.PathLike, format: str = "text") -> None:
    if format == "text":
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"{len(table)} {table.dim}\n")
            for tok, row in zip(table.vocab.tokens, table.matrix):
                f.write(tok + " " + " ".join(repr(float(x)) for x in row) + "\n")
    elif format == "binary":
        with open(path, "wb") as f:
            f.write(BINARY_MAGIC)
            f.write(struct.pack("<II", len(table), table.dim))
            for tok in table.vocab.tokens:
                raw = tok.encode("utf-8")
                f.write(struct.pack("<I", len(raw)))
                f.write(raw)
            f.write(np.ascontiguousarray(table.matrix, dtype="<f4").tobytes())
    else:
        raise ValueError(f"unknown table format {format!r}")


def _load_text(path) -> EmbeddingTable:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise TableFormatError(f"{path}: line 1: header must be '<vocab size> <dim>'")
        try:
            size, dim = int(header[0]), int(header[1])
        except ValueError:
            raise TableFormatError(f"{path}: line 1: header values must be integers") from None
        if size < 0 or dim <= 0:
            raise TableFormatError(f"{path}: line 1: invalid sizes {size} x {dim}")
        tokens: list[str] = []
        seen: dict[str, int] = {}
        matrix = np.empty((size, dim), dtype=np.float32)
        lineno = 1
        for line in f:
            lineno += 1
            parts = line.split()
            if not parts:
                continue
            if len(tokens) == size:
                raise TableFormatError(f"{path}: line {lineno}: more rows than the declared {size}")
            if len(parts) != dim + 1:
                raise TableFormatError(
                    f"{path}: line {lineno} (row {len(tokens) + 1}): expected {dim} components, found {len(parts) - 1}"
                )
            tok = parts[0]
            if tok in seen:
                raise TableFormatError(f"{path}: line {lineno}: duplicate token {tok!r}")
            try:
                row = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                raise TableFormatError(f"{path}: line {lineno}: non-numeric component") from None
            if not np.all(np.isfinite(row)):
                raise TableFormatError(f"{path}: line {lineno}: non-finite component")
            seen[tok] = len(tokens)
            matrix[len(tokens)] = row
            tokens.append(tok)
    if len(tokens) != size:
        raise TableFormatError(f"{path}: declared {size} rows, found {len(tokens)}")
    return EmbeddingTable(tokens, matrix)


def _load_binary(path) -> EmbeddingTable:
    with open(path, "rb") as f:
        data = f.read()
    if data[:5] != BINARY_MAGIC:
        raise TableFormatError(f"{path}: offset 0: bad magic bytes")
    if len(data) < 13:
        raise TableFormatError(f"{path}: offset 5: truncated header")
    size, dim = struct.unpack_from("<II", data, 5)
    if dim == 0:
        raise TableFormatError(f"{path}: offset 9: dimension must be positive")
    off = 13
    tokens = []
    seen = set()
    for i in range(size):
        if off + 4 > len(data):
            raise TableFormatError(f"{path}: offset {off}: truncated token table at token {i}")
        (length,) = struct.unpack_from("<I", data, off)
        off += 4
        if off + length > len(data):
            raise TableFormatError(f"{path}: offset {off}: truncated token {i}")
        try:
            tok = data[off : off + length].decode("utf-8")
        except UnicodeDecodeError:
            raise TableFormatError(f"{path}: offset {off}: token {i} is not valid UTF-8") from None
        if tok in seen:
            raise TableFormatError(f"{path}: offset {off}: duplicate token {tok!r}")
        seen.add(tok)
        tokens.append(tok)
        off += length
    expected = size * dim * 4
    if len(data) - off != expected:
        raise TableFormatError(
            f"{path}: offset {off}: expected {expected} bytes of float32 data, found {len(data) - off}"
        )
    matrix = np.frombuffer(data, dtype="<f4", count=size * dim, offset=off).reshape(size, dim)
    if not np.all(np.isfinite(matrix)):
        bad = int(np.nonzero(~np.all(np.isfinite(matrix), axis=1))[0][0])
        raise TableFormatError(f"{path}: row {bad}: non-finite component")
    return EmbeddingTable(tokens, matrix)


# ---------------------------------------------------------------------------
# queries


def lookup(table: EmbeddingTable, token_id: int) -> np.ndarray:
    table._check_id(token_id)
    return table.matrix[int(token_id)]


def _exact_sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # row-wise, by direct subtraction; identical per row for any batch shape
    diff = a - b
    return np.sum(diff * diff, axis=1)


def _as_query(table: EmbeddingTable, query) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (table.dim,):
        raise ValueError(f"query must have length {table.dim}, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("query must be finite")
    return q


def nearest_token(table: EmbeddingTable, query, candidates: Candidates = "all") -> int:
    """Index of the closest candidate row; ties go to the lowest token id."""
    q = _as_query(table, query)
    ids, mat, _ = table._candidate_arrays(candidates)
    if mat.shape[0] == 0:
        raise ValueError("candidate set is empty")
    d2 = _exact_sq_dist(mat, q)
    best = int(np.argmin(d2))  # first occurrence == lowest id
    return best if ids is None else int(ids[best])


def knn(table: EmbeddingTable, token_id: int, k: int) -> list[tuple[int, float]]:
    """Exact k nearest neighbours of a token over the whole vocabulary, self excluded."""
    table._check_id(token_id)
    if not 1 <= k <= len(table) - 1:
        raise ValueError(f"k must lie in [1, {len(table) - 1}], got {k}")
    d2 = _exact_sq_dist(table.matrix64, table.matrix64[int(token_id)])
    ids = np.arange(len(table))
    keep = ids != int(token_id)
    d2, ids = d2[keep], ids[keep]
    order = np.lexsort((ids, d2))[:k]
    return [(int(ids[i]), float(np.sqrt(d2[i]))) for i in order]


def _nearest_block(q: np.ndarray, mat: np.ndarray, norms: np.ndarray) -> np.ndarray:
    qn = np.einsum("ij,ij->i", q, q)
    d2 = norms[None, :] - 2.0 * (q @ mat.T)
    d2 += qn[:, None]
    row_min = d2.min(axis=1)
    tol = _REFINE_RTOL * (qn + norms.max()) + 1e-300
    rows, cols = np.nonzero(d2 <= (row_min + tol)[:, None])
    exact = _exact_sq_dist(q[rows], mat[cols])
    order = np.lexsort((cols, exact, rows))
    rows, cols = rows[order], cols[order]
    first = np.ones(rows.shape[0], dtype=bool)
    first[1:] = rows[1:] != rows[:-1]
    out = np.empty(q.shape[0], dtype=np.int64)
    out[rows[first]] = cols[first]
    return out


def batched_nearest(
    table: EmbeddingTable,
    queries,
    candidates: Candidates = "all",
    block_size: int = DEFAULT_BLOCK,
    workers: int = 1,
) -> np.ndarray:
    """Nearest candidate token for every query row.

    Squared distances are screened block-wise with
    ``||x||^2 - 2 x.y + ||y||^2`` over cached row norms; rows within a tiny
    slack of the block minimum are re-scored by direct subtraction, so the
    answer equals :func:`nearest_token` row by row regardless of
    ``block_size`` or ``workers``.
    """
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != table.dim:
        raise ValueError(f"queries must have shape (Q, {table.dim}), got {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("queries must be finite")
    ids, mat, norms = table._candidate_arrays(candidates)
    if mat.shape[0] == 0:
        raise ValueError("candidate set is empty")
    if block_size < 1:
        raise ValueError("block_size must be positive")
    starts = range(0, q.shape[0], block_size)
    out = np.empty(q.shape[0], dtype=np.int64)

    def run(s):
        out[s : s + block_size] = _nearest_block(q[s : s + block_size], mat, norms)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    return out if ids is None else ids[out]


def kth_neighbor_distances(
    table: EmbeddingTable,
    k_list: Sequence[int],
    rows=None,
    candidates: Candidates = "regular",
    block_size: int = 1024,
    workers: int = 1,
) -> np.ndarray:
    """Distance from each of ``rows`` to its k-th nearest candidate (self excluded).

    Returns an array of shape ``(len(rows), len(k_list))``.  Distances use the
    blocked identity formula, clipped at zero.
    """
    ids, mat, norms = table._candidate_arrays(candidates)
    cand_ids = np.arange(mat.shape[0]) if ids is None else ids
    rows = cand_ids if rows is None else np.asarray(rows, dtype=np.int64)
    ks = np.asarray(k_list, dtype=np.int64)
    if ks.size == 0:
        return np.empty((rows.shape[0], 0))
    if ks.min() < 1 or ks.max() > mat.shape[0] - 1:
        raise ValueError(f"k values must lie in [1, {mat.shape[0] - 1}]")
    pos = np.searchsorted(cand_ids, rows)
    in_set = (pos < cand_ids.shape[0]) & (cand_ids[np.minimum(pos, cand_ids.shape[0] - 1)] == rows)
    out = np.empty((rows.shape[0], ks.shape[0]))
    # partition index: column 0 after sorting is self (distance 0) when in the set
    kth = np.unique(ks)

    def run(s):
        blk = rows[s : s + block_size]
        q = table.matrix64[blk]
        qn = table.norms[blk]
        d2 = norms[None, :] - 2.0 * (q @ mat.T) + qn[:, None]
        np.maximum(d2, 0.0, out=d2)
        sel = np.nonzero(in_set[s : s + block_size])[0]
        d2[sel, pos[s : s + block_size][sel]] = np.inf
        part = np.partition(d2, kth - 1, axis=1)
        out[s : s + block_size] = np.sqrt(part[:, ks - 1])

    starts = range(0, rows.shape[0], block_size)
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    return out
