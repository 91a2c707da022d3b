"""Pooled-key cosine index, generated-query retrieval, and metrics.

Keys are pooled item latents normalized to unit length; search is exact
brute-force cosine with deterministic tie-breaking (ascending id), which
keeps every ranked list reproducible. The full pipeline samples latent
queries from the diffusion model, averages them over time and over the
query set, optionally applies a distribution-alignment transform, and
ranks the corpus against the resulting vector.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import diffusion as df
from .denoiser import DenoiserModel
from .errors import BuildError, DegenerateKey, EvalError, InvalidSpec, ShapeError, ZeroVector
from .latentdata import Corpus, aggregate, pool
from .numerics import as_vector

__all__ = [
    "CorpusIndex",
    "RankedResult",
    "RetrievalMetrics",
    "build_index",
    "topk",
    "full_ranking",
    "ghost_query",
    "eval_retrieval",
    "text_interp",
    "audio_interp",
]


@dataclass(frozen=True)
class CorpusIndex:
    """Immutable matrix of unit-normalized pooled audio keys."""

    ids: tuple
    keys: np.ndarray  # (n, d_a), unit rows
    labels: tuple  # per-item label dicts
    default_T: int
    frozen: bool = True

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def d_a(self) -> int:
        return self.keys.shape[1]


def build_index(corpus: Corpus, split: str | None = None) -> CorpusIndex:
    """Pool, normalize and freeze the keys of one corpus split."""
    items = corpus.split_items(split)
    if not items:
        raise BuildError(f"split {split!r} selects no items")
    seen = set()
    ids, keys, labels = [], [], []
    for it in items:
        if it.id in seen:
            raise BuildError(f"duplicate item id {it.id!r}")
        seen.add(it.id)
        vec = pool(it.audio)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise DegenerateKey(it.id)
        ids.append(it.id)
        keys.append(vec / norm)
        labels.append(dict(it.labels))
    return CorpusIndex(
        ids=tuple(ids),
        keys=np.vstack(keys),
        labels=tuple(labels),
        default_T=corpus.default_T,
    )


@dataclass(frozen=True)
class RankedResult:
    """Descending-score ranking with the provenance needed to replay it."""

    entries: list  # {id, score, rank, labels}
    provenance: dict = field(default_factory=dict)

    @property
    def ids(self) -> list:
        return [e["id"] for e in self.entries]

    def to_json(self) -> str:
        return json.dumps(
            {"query": self.provenance, "results": self.entries},
            sort_keys=True,
            separators=(",", ":"),
        )


def _ranked_order(index: CorpusIndex, query: np.ndarray) -> tuple[list, np.ndarray]:
    q = as_vector(query, "query")
    if q.size != index.d_a:
        raise ShapeError(f"query dim {q.size} != index dim {index.d_a}")
    norm = float(np.linalg.norm(q))
    if norm == 0.0:
        raise ZeroVector("cannot rank against a zero query")
    scores = index.keys @ (q / norm)
    order = sorted(range(index.size), key=lambda i: (-scores[i], index.ids[i]))
    return order, scores


def topk(index: CorpusIndex, query, k: int, provenance: dict | None = None) -> RankedResult:
    """Exact top-k cosine ranking; ties break by ascending id, k clamps to n."""
    if k < 1:
        raise InvalidSpec(f"k must be >= 1, got {k}")
    order, scores = _ranked_order(index, query)
    k = min(k, index.size)
    entries = [
        {
            "id": index.ids[i],
            "score": float(scores[i]),
            "rank": rank,
            "labels": index.labels[i],
        }
        for rank, i in enumerate(order[:k], start=1)
    ]
    return RankedResult(entries=entries, provenance=provenance or {})


def full_ranking(index: CorpusIndex, query) -> list:
    """All item ids in ranked order (used by rank-based metrics)."""
    order, _ = _ranked_order(index, query)
    return [index.ids[i] for i in order]


def _cond_digest(cond) -> str:
    return hashlib.sha1(np.asarray(cond.tokens, dtype="<f8").tobytes()).hexdigest()[:12]


def ghost_query(
    model: DenoiserModel,
    g: df.GuidanceSpec,
    n_q: int,
    sched: df.NoiseSchedule,
    seed: int,
    index: CorpusIndex,
    k: int,
    alignment=None,
) -> RankedResult:
    """Sample latent queries, aggregate, optionally align, then rank.

    Returns both the ranking and the aggregated query vector (under key
    ``"query_vector"`` in the provenance) so callers can reuse it.
    """
    if not index.frozen:
        raise BuildError("index must be frozen before querying")
    samples = df.sample(model, g, n_q, sched, seed, frames=index.default_T)
    vec = aggregate(samples)
    if alignment is not None:
        vec = alignment.apply_vector(vec)
    prov = {
        "cond_digest": _cond_digest(g.positive),
        "negative_digest": None if g.negative is None else _cond_digest(g.negative),
        "w": g.w,
        "n_q": n_q,
        "seed": seed,
        "aligned": alignment is not None,
    }
    result = topk(index, vec, k, provenance=prov)
    result.provenance["query_vector"] = [float(x) for x in vec]
    return result


@dataclass(frozen=True)
class RetrievalMetrics:
    """Recall@K plus median-rank percentage of the ground-truth target."""

    recall_at: dict
    median_rank_pct: float

    def validate(self) -> None:
        ks = sorted(self.recall_at)
        vals = [self.recall_at[k] for k in ks]
        if any(not 0 <= v <= 1 for v in vals):
            raise EvalError("recall values outside [0, 1]")
        if any(b < a - 1e-12 for a, b in zip(vals, vals[1:])):
            raise EvalError("recall must be non-decreasing in K")


def eval_retrieval(index: CorpusIndex, queries, ks=(1, 5, 10)) -> RetrievalMetrics:
    """Recall@K and MedR% over (query vector, target id) pairs.

    MedR% is the median over queries of (rank of the paired target / n) * 100.
    """
    queries = list(queries)
    if not queries:
        raise EvalError("no queries to evaluate")
    known = set(index.ids)
    ranks = []
    for vec, target in queries:
        if target not in known:
            raise EvalError(f"target id {target!r} not present in the index")
        ranking = full_ranking(index, vec)
        ranks.append(ranking.index(target) + 1)
    ranks = np.asarray(ranks, dtype=np.float64)
    recall = {int(k): float(np.mean(ranks <= k)) for k in ks}
    metrics = RetrievalMetrics(
        recall_at=recall,
        median_rank_pct=float(np.median(ranks) / index.size * 100.0),
    )
    metrics.validate()
    return metrics


def text_interp(z_a, z_t_pos, z_t_neg, w: float) -> np.ndarray:
    """Shift a query along the (lifted) text direction: Z + w (pos - neg)."""
    z_a = as_vector(z_a, "z_a")
    z_t_pos = as_vector(z_t_pos, "z_t_pos")
    z_t_neg = as_vector(z_t_neg, "z_t_neg")
    if not (z_a.size == z_t_pos.size == z_t_neg.size):
        raise ShapeError("text interpolation requires matching dimensions")
    return z_a + w * (z_t_pos - z_t_neg)


def audio_interp(z_gen, z_gen_neg, w: float) -> np.ndarray:
    """Push a generated query away from its negative twin: Z + w (Z - Z_neg)."""
    z_gen = as_vector(z_gen, "z_gen")
    z_gen_neg = as_vector(z_gen_neg, "z_gen_neg")
    if z_gen.size != z_gen_neg.size:
        raise ShapeError("audio interpolation requires matching dimensions")
    return z_gen + w * (z_gen - z_gen_neg)
