"""Distribution distance, moment alignment, and diversity metrics.

The Fréchet distance between Gaussian fits diagnoses domain shift between
generated queries and a corpus; the alignment transform is the matching
whitening-coloring map (match source mean/covariance to a target's). The
diversity suite covers mean intra-cluster cosine similarity, the Vendi
score (effective sample count from the eigen-entropy of the cosine
kernel), its /n normalization, and the mean intra-cluster Vendi.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSamples, NumericalFailure, ShapeError, ZeroVector
from .numerics import GaussianMoments, as_matrix, as_vector, cosine, fit_moments, psd_sqrt, sym_eig

__all__ = [
    "AlignmentTransform",
    "DiversityReport",
    "frechet",
    "fit_alignment",
    "apply_alignment",
    "clap_score",
    "mics",
    "vendi",
    "minvs",
    "diversity_report",
]

DEFAULT_RIDGE = 1e-6


def frechet(a: GaussianMoments, b: GaussianMoments) -> float:
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2).

    The trace term uses the symmetric product so the inner square root
    always sees a symmetric argument; eigenvalues that sampling noise
    pushes slightly negative are clipped.
    """
    if a.dim != b.dim:
        raise ShapeError(f"moment dims differ: {a.dim} vs {b.dim}")
    diff = a.mean - b.mean
    root_a = psd_sqrt(a.cov)
    inner = root_a @ b.cov @ root_a
    inner = (inner + inner.T) / 2.0
    cross = float(np.trace(psd_sqrt(inner)))
    val = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * cross)
    return max(val, 0.0)


@dataclass(frozen=True)
class AlignmentTransform:
    """Affine map x -> mu_tgt + A (x - mu_src) matching first two moments."""

    mu_src: np.ndarray
    mu_tgt: np.ndarray
    A: np.ndarray
    ridge: float

    def apply_vector(self, x) -> np.ndarray:
        x = as_vector(x, "x")
        if x.size != self.mu_src.size:
            raise ShapeError(f"vector dim {x.size} != transform dim {self.mu_src.size}")
        return self.mu_tgt + self.A @ (x - self.mu_src)

    def to_dict(self) -> dict:
        return {
            "mu_src": self.mu_src.tolist(),
            "mu_tgt": self.mu_tgt.tolist(),
            "A": self.A.tolist(),
            "ridge": self.ridge,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AlignmentTransform":
        return cls(
            mu_src=np.asarray(d["mu_src"], dtype=np.float64),
            mu_tgt=np.asarray(d["mu_tgt"], dtype=np.float64),
            A=np.asarray(d["A"], dtype=np.float64),
            ridge=float(d["ridge"]),
        )


def _inv_sqrt(cov: np.ndarray, ridge: float) -> np.ndarray:
    vals, vecs = sym_eig(cov)
    shifted = np.maximum(vals, 0.0) + ridge
    if np.any(shifted <= 0.0):
        raise NumericalFailure("covariance not invertible without a positive ridge")
    out = (vecs / np.sqrt(shifted)) @ vecs.T
    return (out + out.T) / 2.0


def fit_alignment(src, tgt, ridge: float = DEFAULT_RIDGE) -> AlignmentTransform:
    """Whitening-coloring moment match from source samples onto target samples."""
    src = as_matrix(src, "src")
    tgt = as_matrix(tgt, "tgt")
    d = src.shape[1]
    if tgt.shape[1] != d:
        raise ShapeError(f"source dim {d} != target dim {tgt.shape[1]}")
    if ridge == 0.0 and (src.shape[0] < d + 1 or tgt.shape[0] < d + 1):
        raise InsufficientSamples(
            f"need at least d+1 = {d + 1} rows per side when ridge = 0"
        )
    m_src = fit_moments(src)
    m_tgt = fit_moments(tgt)
    a = psd_sqrt(m_tgt.cov) @ _inv_sqrt(m_src.cov, ridge)
    return AlignmentTransform(mu_src=m_src.mean, mu_tgt=m_tgt.mean, A=a, ridge=ridge)


def apply_alignment(t: AlignmentTransform, x) -> np.ndarray:
    """Map sample rows through the alignment transform."""
    x = as_matrix(x, "X")
    if x.shape[1] != t.mu_src.size:
        raise ShapeError(f"column count {x.shape[1]} != transform dim {t.mu_src.size}")
    return t.mu_tgt + (x - t.mu_src) @ t.A.T


def clap_score(a, b) -> float:
    """Prompt-adherence proxy: cosine similarity of two pooled vectors."""
    return cosine(a, b)


def mics(cluster) -> float:
    """Mean pairwise cosine over all unordered row pairs of one cluster."""
    cluster = as_matrix(cluster, "cluster")
    n = cluster.shape[0]
    if n < 2:
        raise InsufficientSamples(f"intra-cluster similarity needs >= 2 rows, got {n}")
    vals = [
        cosine(cluster[i], cluster[j]) for i in range(n) for j in range(i + 1, n)
    ]
    return float(np.mean(vals))


def vendi(x) -> tuple[float, float]:
    """(vendi, vendi / n): effective distinct-sample count of a row set.

    Kernel is the cosine Gram matrix of the rows; the score is
    exp(-sum lambda ln lambda) over the eigenvalues of K/n (0 ln 0 = 0).
    """
    x = as_matrix(x, "X")
    n = x.shape[0]
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        raise ZeroVector("vendi kernel undefined for zero rows")
    unit = x / norms[:, None]
    k = unit @ unit.T
    vals, _ = sym_eig(k / n)
    vals = np.clip(vals, 0.0, None)
    pos = vals[vals > 0.0]
    entropy = float(-(pos * np.log(pos)).sum())
    score = float(np.exp(entropy))
    return score, score / n


def minvs(clusters) -> float:
    """Mean intra-cluster Vendi score (un-normalized) over a cluster list."""
    clusters = list(clusters)
    if not clusters:
        raise InsufficientSamples("no clusters given")
    scores = []
    for c in clusters:
        c = as_matrix(c, "cluster")
        if c.shape[0] < 2:
            raise InsufficientSamples("each cluster needs >= 2 rows")
        scores.append(vendi(c)[0])
    return float(np.mean(scores))


@dataclass(frozen=True)
class DiversityReport:
    mics: float
    vendi: float
    nvendi: float
    minvs: float
    cluster_count: int
    cluster_size: int

    def to_dict(self) -> dict:
        return {
            "mics": self.mics,
            "vendi": self.vendi,
            "nvendi": self.nvendi,
            "minvs": self.minvs,
            "cluster_count": self.cluster_count,
            "cluster_size": self.cluster_size,
        }


def diversity_report(clusters) -> DiversityReport:
    """Full diversity suite over per-prompt clusters of pooled queries.

    MICS averages the intra-cluster mean pairwise cosine; Vendi/NVendi are
    computed on all rows pooled together; MINVS is the mean intra-cluster
    Vendi. Raw and /n Vendi values are always reported side by side.
    """
    clusters = [as_matrix(c, "cluster") for c in clusters]
    if not clusters:
        raise InsufficientSamples("no clusters given")
    stacked = np.vstack(clusters)
    v, nv = vendi(stacked)
    sizes = {c.shape[0] for c in clusters}
    return DiversityReport(
        mics=float(np.mean([mics(c) for c in clusters])),
        vendi=v,
        nvendi=nv,
        minvs=minvs(clusters),
        cluster_count=len(clusters),
        cluster_size=sizes.pop() if len(sizes) == 1 else 0,
    )
