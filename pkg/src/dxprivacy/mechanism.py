"""d_chi-privacy randomizers for token embeddings and tokens.

Noise has density proportional to ``exp(-eta * ||N||)`` in R^n.  It is drawn as
``N = r * p`` with radius ``r ~ Gamma(shape=n, scale=1/eta)`` (by exact
inverse-CDF transform of a stream uniform) and ``p`` uniform on the unit
sphere.  The representation mechanism returns ``x + N``; the text mechanism
maps ``phi(x) + N`` back to its nearest vocabulary token.

Every noise draw is keyed by ``(master_seed, context, item, trial)``; see
:mod:`dxprivacy.rng`.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.special import gammaincinv

from . import rng
from .embeddings import Candidates, EmbeddingTable, batched_nearest, lookup, nearest_token
from .rng import RngStream

Mode = Literal["representation", "text"]

# float64 rows of noise materialised per chunk in batched paths
_CHUNK_VALUES = 4_000_000


class PrivacyParameterError(ValueError):
    pass


@dataclass(frozen=True)
class PrivacyParams:
    eta: float
    dim: int
    master_seed: int = 0

    def __post_init__(self):
        eta = float(self.eta)
        if not np.isfinite(eta) or eta <= 0:
            raise PrivacyParameterError(f"eta must be a positive finite number, got {self.eta!r}")
        if int(self.dim) <= 0:
            raise PrivacyParameterError(f"dim must be positive, got {self.dim!r}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise PrivacyParameterError("master_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "eta", eta)

    def stream(self, context: str, item: int = 0, trial: int = 0) -> RngStream:
        return RngStream(int(self.master_seed), context, item, trial)

    def expected_noise_norm(self) -> float:
        return self.dim / self.eta


@dataclass(frozen=True)
class NoiseSample:
    vector: np.ndarray
    radius: float


def _radii(master_seed, context, items, trials, dim, eta) -> np.ndarray:
    u = rng.uniforms(master_seed, context, items, trials, 1, lane=rng.LANE_RADIUS)[:, 0]
    return gammaincinv(float(dim), u) / eta


def noise_batch(params: PrivacyParams, context: str, items, trials) -> tuple[np.ndarray, np.ndarray]:
    """Noise vectors and their radii for every broadcast (item, trial) pair."""
    seed = int(params.master_seed)
    dirs = rng.unit_directions(seed, context, items, trials, params.dim)
    radii = _radii(seed, context, items, trials, params.dim, params.eta)
    dirs *= radii[:, None]
    return dirs, radii


def sample_noise(params: PrivacyParams, stream: RngStream) -> NoiseSample:
    seed = stream.master_seed
    direction = rng.unit_directions(seed, stream.context, stream.item, stream.trial, params.dim)[0]
    radius = float(_radii(seed, stream.context, stream.item, stream.trial, params.dim, params.eta)[0])
    return NoiseSample(direction * radius, radius)


def perturb_embedding(x, params: PrivacyParams, stream: RngStream) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.dim,):
        raise ValueError(f"embedding must have length {params.dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("embedding must be finite")
    return x + sample_noise(params, stream).vector


def _check_params(table: EmbeddingTable, params: PrivacyParams) -> None:
    if params.dim != table.dim:
        raise PrivacyParameterError(f"params.dim={params.dim} does not match table dim {table.dim}")


def _check_regular(table: EmbeddingTable, ids: np.ndarray) -> None:
    if ids.size == 0:
        return
    if ids.min() < 0 or ids.max() >= len(table):
        raise IndexError("token id out of range")
    special = table.vocab.special_flags[ids]
    if special.any():
        bad = int(ids[np.argmax(special)])
        raise ValueError(f"special token {table.token(bad)!r} cannot be privatized")


def privatize_token(
    token_id: int,
    table: EmbeddingTable,
    params: PrivacyParams,
    stream: RngStream,
    candidates: Candidates = "regular",
) -> int:
    """Text-to-text privatization of one regular token: one noise draw, one NN search."""
    _check_params(table, params)
    _check_regular(table, np.asarray([token_id], dtype=np.int64))
    y = perturb_embedding(lookup(table, token_id), params, stream)
    return nearest_token(table, y, candidates)


def _chunks(total: int, dim: int):
    step = max(1, _CHUNK_VALUES // dim)
    return [(s, min(total, s + step)) for s in range(0, total, step)]


def _broadcast_ids(ids, items, trials):
    ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
    items = np.atleast_1d(np.asarray(items, dtype=np.int64))
    trials = np.atleast_1d(np.asarray(trials, dtype=np.int64))
    if max(ids.ndim, items.ndim, trials.ndim) > 1:
        raise ValueError("ids, items and trials must be scalars or 1-D arrays")
    return np.broadcast_arrays(ids, items, trials)


def perturb_tokens(
    ids, table: EmbeddingTable, params: PrivacyParams, context: str, items, trials
) -> np.ndarray:
    """Representation privatization for many tokens; row i uses stream (context, items[i], trials[i])."""
    _check_params(table, params)
    ids, items, trials = _broadcast_ids(ids, items, trials)
    _check_regular(table, ids)
    noise, _ = noise_batch(params, context, items, trials)
    noise += table.matrix64[ids]
    return noise


def privatize_tokens(
    ids,
    table: EmbeddingTable,
    params: PrivacyParams,
    context: str,
    items,
    trials,
    candidates: Candidates = "regular",
    workers: int = 1,
) -> np.ndarray:
    """Batched text-to-text privatization; element-wise equal to :func:`privatize_token`."""
    _check_params(table, params)
    ids, items, trials = _broadcast_ids(ids, items, trials)
    _check_regular(table, ids)
    out = np.empty(ids.shape[0], dtype=np.int64)

    def run(span):
        s, e = span
        noise, _ = noise_batch(params, context, items[s:e], trials[s:e])
        noise += table.matrix64[ids[s:e]]
        out[s:e] = batched_nearest(table, noise, candidates)

    spans = _chunks(ids.shape[0], table.dim)
    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, spans))
    else:
        for span in spans:
            run(span)
    return out


def privatize_sequence(
    seq: Sequence[int],
    table: EmbeddingTable,
    params: PrivacyParams,
    mode: Mode = "text",
    context: str = "sequence",
    trial: int = 0,
    candidates: Candidates = "regular",
):
    """Privatize each token independently; special tokens pass through unchanged.

    Position ``i`` uses stream ``(master_seed, context, i, trial)``.  Returns a
    list of token ids for ``mode="text"`` and an ``(len(seq), n)`` float array
    for ``mode="representation"``.
    """
    _check_params(table, params)
    ids = np.asarray(seq, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= len(table)):
        raise IndexError("token id out of range")
    regular = ~table.vocab.special_flags[ids] if ids.size else np.zeros(0, dtype=bool)
    pos = np.nonzero(regular)[0]
    if mode == "text":
        out = ids.copy()
        if pos.size:
            out[pos] = privatize_tokens(ids[pos], table, params, context, pos, trial, candidates)
        return out.tolist()
    if mode == "representation":
        vecs = table.matrix64[ids].copy() if ids.size else np.empty((0, table.dim))
        if pos.size:
            vecs[pos] = perturb_tokens(ids[pos], table, params, context, pos, trial)
        return vecs
    raise ValueError(f"unknown privatization mode {mode!r}")


def sequence_distance(a: Sequence[int], b: Sequence[int], table: EmbeddingTable) -> float:
    """Sum over positions of the Euclidean distance between the two tokens' embeddings."""
    a = np.asarray(a, dtype=np.int64).reshape(-1)
    b = np.asarray(b, dtype=np.int64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"sequences differ in length ({a.size} vs {b.size})")
    if a.size == 0:
        return 0.0
    for i in (a.min(), a.max(), b.min(), b.max()):
        table._check_id(i)
    diff = table.matrix64[a] - table.matrix64[b]
    return float(np.sum(np.sqrt(np.sum(diff * diff, axis=1))))
