"""Privacy measurements: embedding geometry, plausible deniability, inversion attack.

The deniability, inversion and example streams are keyed independently of
eta (context names below), so a sweep over eta reuses the same noise
directions and Gamma quantiles and only rescales them.  Because a token's
nearest-neighbour cell is convex, this coupling makes per-token
preservation counts monotone in eta within one master seed.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingTable, batched_nearest, kth_neighbor_distances
from .mechanism import (
    PrivacyParams,
    _check_params,
    noise_batch,
    perturb_tokens,
    privatize_sequence,
    privatize_tokens,
)

CTX_GEOMETRY = "geometry"
CTX_DENIABILITY = "deniability"
CTX_INVERSION = "inversion"
CTX_EXAMPLE_SEQ = "examples/sequence"
CTX_EXAMPLE_HIST = "examples/histogram"

# rows of (token x trial) handled per work unit
_UNIT_ROWS = 65536


def _map(fn, units, workers):
    if workers > 1 and len(units) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, units))
    return [fn(u) for u in units]


def stride_sample(ids, size: int) -> np.ndarray:
    """Deterministic, evenly spaced subsample of ``ids`` (all of them if ``size >= len(ids)``)."""
    ids = np.asarray(ids, dtype=np.int64)
    if size >= ids.size:
        return ids.copy()
    if size < 1:
        raise ValueError("sample size must be positive")
    idx = (np.arange(size) * ids.size) // size
    return ids[idx]


def to_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def to_csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# geometry


@dataclass
class GeometryReport:
    dim: int
    eta_list: list[float]
    avg_noise_norm: list[float]
    k_list: list[int]
    avg_knn_distance: list[float]
    noise_method: str
    noise_samples: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["closed_form_noise_norm"] = [self.dim / e for e in self.eta_list]
        return d

    def csv_rows(self):
        for eta, v in zip(self.eta_list, self.avg_noise_norm):
            yield ("noise_norm", eta, "", v, self.dim / eta)
        for k, v in zip(self.k_list, self.avg_knn_distance):
            yield ("knn_distance", "", k, v, "")

    def to_csv(self) -> str:
        return to_csv(("quantity", "eta", "k", "value", "closed_form"), self.csv_rows())


def geometry_profile(
    table: EmbeddingTable,
    eta_list: Sequence[float],
    k_list: Sequence[int],
    noise_samples: int = 1000,
    master_seed: int = 0,
    closed_form: bool = False,
    workers: int = 1,
) -> GeometryReport:
    """Mean noise norm per eta next to the mean k-th NN distance over regular tokens.

    With ``closed_form=True`` the noise norm is reported as ``n / eta``
    instead of being estimated from ``noise_samples`` draws.
    """
    etas = [float(e) for e in eta_list]
    for e in etas:
        PrivacyParams(e, table.dim, master_seed)
    ks = [int(k) for k in k_list]
    n_reg = table.regular_ids.size
    for k in ks:
        if not 1 <= k <= n_reg - 1:
            raise ValueError(f"k={k} outside [1, {n_reg - 1}] for {n_reg} regular tokens")
    if closed_form:
        noise = [table.dim / e for e in etas]
    else:
        if noise_samples < 1:
            raise ValueError("noise_samples must be positive")
        noise = []
        for e in etas:
            vec, _ = noise_batch(PrivacyParams(e, table.dim, master_seed), CTX_GEOMETRY, 0, np.arange(noise_samples))
            noise.append(float(np.mean(np.sqrt(np.sum(vec * vec, axis=1)))))
    if ks:
        dist = kth_neighbor_distances(table, ks, candidates="regular", workers=workers)
        knn_avg = [float(x) for x in dist.mean(axis=0)]
    else:
        knn_avg = []
    return GeometryReport(
        dim=table.dim,
        eta_list=etas,
        avg_noise_norm=noise,
        k_list=ks,
        avg_knn_distance=knn_avg,
        noise_method="closed_form" if closed_form else "monte_carlo",
        noise_samples=0 if closed_form else int(noise_samples),
    )


# ---------------------------------------------------------------------------
# plausible deniability


@dataclass
class DeniabilityReport:
    eta: float
    trials: int
    token_ids: np.ndarray
    n_w: np.ndarray
    s_w: np.ndarray

    def preservation(self) -> np.ndarray:
        return self.n_w / self.trials

    def n_w_histogram(self) -> np.ndarray:
        return np.bincount(self.n_w, minlength=self.trials + 1)

    def s_w_histogram(self) -> np.ndarray:
        return np.bincount(self.s_w, minlength=self.trials + 1)

    def to_dict(self, tokens: Sequence[str] | None = None) -> dict:
        d = {
            "eta": self.eta,
            "trials": self.trials,
            "token_ids": self.token_ids.tolist(),
            "n_w": self.n_w.tolist(),
            "s_w": self.s_w.tolist(),
            "summary": {
                "mean_n_w": float(self.n_w.mean()),
                "max_n_w": int(self.n_w.max()),
                "mean_s_w": float(self.s_w.mean()),
                "min_s_w": int(self.s_w.min()),
            },
            "n_w_histogram": self.n_w_histogram().tolist(),
            "s_w_histogram": self.s_w_histogram().tolist(),
        }
        if tokens is not None:
            d["tokens"] = [tokens[i] for i in self.token_ids]
        return d

    def csv_rows(self, tokens=None):
        for i, tid in enumerate(self.token_ids):
            tok = tokens[tid] if tokens is not None else ""
            yield (self.eta, int(tid), tok, int(self.n_w[i]), int(self.s_w[i]))

    def to_csv(self, tokens=None) -> str:
        return to_csv(("eta", "token_id", "token", "n_w", "s_w"), self.csv_rows(tokens))


def deniability_stats(
    table: EmbeddingTable,
    params: PrivacyParams,
    trials: int = 100,
    token_subset=None,
    workers: int = 1,
) -> DeniabilityReport:
    """Monte Carlo estimate of N_w (times unchanged) and S_w (distinct outputs) per token.

    Trial ``t`` of token ``w`` uses stream ``(seed, "deniability", w, t)``,
    so results do not depend on subset order or worker count.
    """
    _check_params(table, params)
    if trials < 1:
        raise ValueError("trials must be at least 1")
    ids = table.regular_ids if token_subset is None else np.asarray(token_subset, dtype=np.int64).reshape(-1)
    if ids.size == 0:
        raise ValueError("token subset is empty")
    if ids.min() < 0 or ids.max() >= len(table):
        raise IndexError("token id out of range")
    if table.vocab.special_flags[ids].any():
        raise ValueError("token subset contains special tokens")
    per_unit = max(1, min(_UNIT_ROWS, 4_000_000 // table.dim) // trials)
    units = [ids[s : s + per_unit] for s in range(0, ids.size, per_unit)]
    t_idx = np.arange(trials)

    def run(chunk):
        rep = np.repeat(chunk, trials)
        out = privatize_tokens(rep, table, params, CTX_DENIABILITY, rep, np.tile(t_idx, chunk.size))
        out = out.reshape(chunk.size, trials)
        n_w = np.sum(out == chunk[:, None], axis=1)
        srt = np.sort(out, axis=1)
        s_w = 1 + np.sum(srt[:, 1:] != srt[:, :-1], axis=1)
        return n_w, s_w

    parts = _map(run, units, workers)
    return DeniabilityReport(
        eta=params.eta,
        trials=int(trials),
        token_ids=ids.copy(),
        n_w=np.concatenate([p[0] for p in parts]).astype(np.int64),
        s_w=np.concatenate([p[1] for p in parts]).astype(np.int64),
    )


# ---------------------------------------------------------------------------
# token embedding inversion


@dataclass
class InversionReport:
    eta: float
    total: int
    correct: int
    per_token: dict = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.correct / self.total

    @property
    def standard_error(self) -> float:
        p = self.accuracy
        return float(np.sqrt(p * (1 - p) / self.total))

    def to_dict(self, tokens=None) -> dict:
        per = {}
        for tid, (cnt, ok) in sorted(self.per_token.items()):
            key = tokens[tid] if tokens is not None else str(tid)
            per[key] = {"id": tid, "count": cnt, "correct": ok}
        return {
            "eta": self.eta,
            "total": self.total,
            "correct": self.correct,
            "accuracy": self.accuracy,
            "standard_error": self.standard_error,
            "per_token": per,
        }


def inversion_attack(
    corpus: Sequence[Sequence[int]],
    table: EmbeddingTable,
    params: PrivacyParams,
    trial: int = 0,
    workers: int = 1,
) -> InversionReport:
    """Nearest-neighbour recovery of every regular token occurrence from its perturbed embedding.

    The occurrence at flat corpus position ``i`` uses stream
    ``(seed, "inversion", i, trial)``.  Occurrences are counted, not types.
    """
    _check_params(table, params)
    lengths = [len(s) for s in corpus]
    flat = np.fromiter((t for s in corpus for t in s), dtype=np.int64, count=sum(lengths))
    if flat.size and (flat.min() < 0 or flat.max() >= len(table)):
        raise IndexError("corpus contains an out-of-range token id")
    pos = np.nonzero(~table.vocab.special_flags[flat])[0] if flat.size else np.zeros(0, dtype=np.int64)
    if pos.size == 0:
        raise ValueError("corpus contains no regular tokens")
    ids = flat[pos]
    step = max(1, min(_UNIT_ROWS, 4_000_000 // table.dim))
    spans = [(s, min(pos.size, s + step)) for s in range(0, pos.size, step)]

    def run(span):
        s, e = span
        vec = perturb_tokens(ids[s:e], table, params, CTX_INVERSION, pos[s:e], trial)
        return batched_nearest(table, vec, "regular")

    recovered = np.concatenate(_map(run, spans, workers))
    hit = recovered == ids
    uniq, inv = np.unique(ids, return_inverse=True)
    counts = np.bincount(inv)
    oks = np.bincount(inv, weights=hit).astype(np.int64)
    per = {int(t): (int(c), int(o)) for t, c, o in zip(uniq, counts, oks)}
    return InversionReport(eta=params.eta, total=int(ids.size), correct=int(hit.sum()), per_token=per)


# ---------------------------------------------------------------------------
# perturbed text examples


@dataclass
class ExampleRow:
    eta: float
    privatized_ids: list[int]
    histograms: list[list[tuple[int, int]]]
    distinct: list[int]


def perturbation_examples(
    seq: Sequence[int],
    table: EmbeddingTable,
    eta_list: Sequence[float],
    trials_per_token: int = 1000,
    master_seed: int = 0,
    top_k: int = 10,
) -> list[ExampleRow]:
    """One privatized copy of ``seq`` per eta, plus per-position output histograms.

    Histograms list ``(token_id, count)`` pairs by decreasing count (ties by
    id), truncated to ``top_k``; special positions get ``[(id, trials)]``.
    """
    if trials_per_token < 1:
        raise ValueError("trials_per_token must be at least 1")
    ids = np.asarray(seq, dtype=np.int64).reshape(-1)
    rows = []
    for eta in eta_list:
        params = PrivacyParams(eta, table.dim, master_seed)
        priv = privatize_sequence(ids, table, params, "text", CTX_EXAMPLE_SEQ, 0)
        hists, distinct = [], []
        for i, tid in enumerate(ids):
            if table.vocab.special_flags[tid]:
                hists.append([(int(tid), trials_per_token)])
                distinct.append(1)
                continue
            out = privatize_tokens(tid, table, params, CTX_EXAMPLE_HIST, i, np.arange(trials_per_token))
            cnt = Counter(out.tolist())
            ranked = sorted(cnt.items(), key=lambda kv: (-kv[1], kv[0]))
            hists.append([(int(t), int(c)) for t, c in ranked[:top_k]])
            distinct.append(len(cnt))
        rows.append(ExampleRow(float(eta), [int(x) for x in priv], hists, distinct))
    return rows
