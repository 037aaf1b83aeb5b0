"""Privacy-adaptive masked-LM losses and privatized pretraining examples.

Three per-position losses share one cross-entropy kernel:

* vanilla: target is one privatized draw of the masked token,
* prob: targets are several privatized draws, weighted by empirical frequency,
* denoising: target is the original token.

Stopping gradients at the user-side embedding layer is the training loop's
job; nothing here touches parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import rng
from .embeddings import EmbeddingTable
from .mechanism import Mode, PrivacyParams, _check_params, perturb_tokens, privatize_tokens

MASK = "[MASK]"


def _validate_logits(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("logits must be a non-empty vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    return z


def log_softmax(logits) -> np.ndarray:
    z = _validate_logits(logits)
    m = z.max()
    return z - (m + np.log(np.sum(np.exp(z - m))))


def _cross_entropy(z: np.ndarray, target: int) -> float:
    if not 0 <= int(target) < z.size:
        raise IndexError(f"target {target} outside vocabulary of size {z.size}")
    m = z.max()
    lse = m + np.log(np.sum(np.exp(z - m)))
    return max(0.0, float(lse - z[int(target)]))


def vanilla_mlm_loss(logits, target: int) -> float:
    """Cross-entropy against the privatized token observed at the masked position."""
    return _cross_entropy(_validate_logits(logits), target)


def denoising_mlm_loss(logits, original: int) -> float:
    """Cross-entropy against the original (unprivatized) token."""
    return _cross_entropy(_validate_logits(logits), original)


@dataclass(frozen=True)
class PerturbationSet:
    """Multiset of privatized tokens for one masked position, stored as counts."""

    entries: Mapping[int, int]

    def __post_init__(self):
        entries = {int(k): int(v) for k, v in sorted(dict(self.entries).items())}
        if not entries:
            raise ValueError("perturbation set is empty")
        if min(entries.values()) < 1:
            raise ValueError("perturbation counts must be >= 1")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_draws(cls, draws: Iterable[int]) -> "PerturbationSet":
        ids, counts = np.unique(np.asarray(list(draws), dtype=np.int64), return_counts=True)
        return cls(dict(zip(ids.tolist(), counts.tolist())))

    @property
    def total(self) -> int:
        return sum(self.entries.values())

    def __contains__(self, token_id) -> bool:
        return int(token_id) in self.entries

    def to_list(self) -> list[dict]:
        return [{"id": k, "count": v} for k, v in self.entries.items()]


def prob_mlm_loss(logits, pset: PerturbationSet) -> float:
    """Frequency-weighted cross-entropy over a multiset of privatized targets."""
    if not isinstance(pset, PerturbationSet):
        pset = PerturbationSet(pset)
    logp = log_softmax(logits)
    ids = np.fromiter(pset.entries.keys(), dtype=np.int64)
    if ids.min() < 0 or ids.max() >= logp.size:
        raise IndexError("perturbation set contains a target outside the vocabulary")
    w = np.fromiter(pset.entries.values(), dtype=np.float64) / pset.total
    return max(0.0, float(-np.dot(w, logp[ids])))


# ---------------------------------------------------------------------------
# example generation


@dataclass
class MaskedExample:
    input_ids: list[int]
    masked_positions: list[int]
    original_targets: list[int]
    vanilla_targets: list[int]
    prob_targets: list[PerturbationSet]
    # perturbed embeddings of every position in representation mode
    input_vectors: np.ndarray | None = None

    def to_record(self) -> dict:
        return {
            "input_ids": self.input_ids,
            "masked_positions": self.masked_positions,
            "original_targets": self.original_targets,
            "vanilla_targets": self.vanilla_targets,
            "prob_targets": [p.to_list() for p in self.prob_targets],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"))

    @classmethod
    def from_record(cls, rec: Mapping) -> "MaskedExample":
        return cls(
            input_ids=list(rec["input_ids"]),
            masked_positions=list(rec["masked_positions"]),
            original_targets=list(rec["original_targets"]),
            vanilla_targets=list(rec["vanilla_targets"]),
            prob_targets=[PerturbationSet({e["id"]: e["count"] for e in p}) for p in rec["prob_targets"]],
        )


def select_masked_positions(
    seq_ids: np.ndarray,
    regular: np.ndarray,
    master_seed: int,
    seq_index: int,
    mask_rate: float,
    max_predictions: int | None,
) -> np.ndarray:
    """Bernoulli(mask_rate) selection over regular positions, capped at ``max_predictions``.

    Position ``i`` of sequence ``s`` draws one uniform from stream
    ``(seed, "pretrain/mask", s, i)``; when the cap binds, the positions
    with the smallest uniforms are kept.
    """
    if seq_ids.size == 0 or mask_rate == 0.0:
        return np.zeros(0, dtype=np.int64)
    u = rng.uniforms(master_seed, "pretrain/mask", seq_index, np.arange(seq_ids.size), 1)[:, 0]
    chosen = np.nonzero(regular & (u < mask_rate))[0]
    if max_predictions is not None and chosen.size > max_predictions:
        keep = np.sort(chosen[np.argsort(u[chosen], kind="stable")[:max_predictions]])
        chosen = keep
    return chosen


def generate_pretraining_examples(
    corpus: Sequence[Sequence[int]],
    table: EmbeddingTable,
    params: PrivacyParams,
    mask_rate: float = 0.15,
    max_predictions: int | None = 20,
    prob_draws: int = 10,
    mode: Mode = "text",
    trial: int = 0,
) -> Iterator[MaskedExample]:
    """Yield one privatized masked example per corpus sequence.

    Streams, for sequence ``s`` at position ``i``:

    * mask choice: ``(seed, "pretrain/mask", s, i)``, independent of ``trial``;
    * context privatization: ``(seed, "pretrain/context/<s>", i, trial)``;
    * target draw ``d``: ``(seed, "pretrain/target/<s>", i, trial * D + d)``
      with ``D = max(prob_draws, 1)``.  Draw 0 is the vanilla target and is
      also the first member of the prob multiset.

    The unmasked context is privatized once; only the masked position is
    redrawn for the prob targets.
    """
    _check_params(table, params)
    if not 0.0 <= mask_rate <= 1.0:
        raise ValueError("mask_rate must lie in [0, 1]")
    if max_predictions is not None and max_predictions < 0:
        raise ValueError("max_predictions must be non-negative")
    if prob_draws < 0:
        raise ValueError("prob_draws must be non-negative")
    if mode not in ("text", "representation"):
        raise ValueError(f"unknown privatization mode {mode!r}")
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    if MASK not in table.vocab:
        raise ValueError("vocabulary has no [MASK] token")
    mask_id = table.vocab.id(MASK)
    n_draws = max(prob_draws, 1)
    seed = int(params.master_seed)
    return _generate(corpus, table, params, mask_rate, max_predictions, prob_draws, n_draws, mode, trial, mask_id, seed)


def _generate(corpus, table, params, mask_rate, max_predictions, prob_draws, n_draws, mode, trial, mask_id, seed):
    for s, seq in enumerate(corpus):
        ids = np.asarray(seq, dtype=np.int64).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= len(table)):
            raise IndexError(f"sequence {s} contains an out-of-range token id")
        regular = ~table.vocab.special_flags[ids] if ids.size else np.zeros(0, dtype=bool)
        masked = select_masked_positions(ids, regular, seed, s, mask_rate, max_predictions)
        context = np.nonzero(regular)[0]
        context = context[~np.isin(context, masked)]

        inputs = ids.copy()
        vectors = None
        ctx_name = f"pretrain/context/{s}"
        if mode == "text":
            if context.size:
                inputs[context] = privatize_tokens(ids[context], table, params, ctx_name, context, trial)
        else:
            vectors = table.matrix64[ids].copy() if ids.size else np.empty((0, table.dim))
            if context.size:
                vectors[context] = perturb_tokens(ids[context], table, params, ctx_name, context, trial)
            if masked.size:
                vectors[masked] = table.matrix64[mask_id]
        inputs[masked] = mask_id

        vanilla, prob = [], []
        if masked.size:
            rep_pos = np.repeat(masked, n_draws)
            rep_trial = np.tile(trial * n_draws + np.arange(n_draws), masked.size)
            draws = privatize_tokens(
                ids[rep_pos], table, params, f"pretrain/target/{s}", rep_pos, rep_trial
            ).reshape(masked.size, n_draws)
            vanilla = draws[:, 0].tolist()
            if prob_draws > 0:
                prob = [PerturbationSet.from_draws(row) for row in draws]
        yield MaskedExample(
            input_ids=inputs.tolist(),
            masked_positions=masked.tolist(),
            original_targets=ids[masked].tolist(),
            vanilla_targets=vanilla,
            prob_targets=prob,
            input_vectors=vectors,
        )
