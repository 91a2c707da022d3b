"""Dense linear algebra and randomness primitives shared by all modules.

Matrices are plain 2-D float64 ``numpy`` arrays throughout; every public
routine validates finiteness and shape at the boundary. Randomness goes
through :class:`SeededRng`, a thin wrapper over the counter-based Philox
generator so that (seed, stream) pairs give independent reproducible
streams — workers never share generator state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSamples, InvalidMatrix, NumericalFailure, ZeroVector

__all__ = [
    "SeededRng",
    "GaussianMoments",
    "as_matrix",
    "as_vector",
    "sym_eig",
    "psd_sqrt",
    "gaussian_mat",
    "cosine",
    "fit_moments",
]


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array, raising InvalidMatrix otherwise."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidMatrix(f"{name} must be 2-D, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise InvalidMatrix(f"{name} contains non-finite entries")
    return a


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float64 array."""
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(a)):
        raise InvalidMatrix(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class SeededRng:
    """Reproducible random source identified by a (seed, stream) pair.

    Identical pairs always yield identical sample sequences; distinct
    stream ids yield statistically independent streams (Philox is
    counter-based, so streams never collide).
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed % 2**64, self.stream % 2**64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, stream: int) -> "SeededRng":
        """Derive a sibling stream under the same seed."""
        return SeededRng(self.seed, stream)


@dataclass(frozen=True)
class GaussianMoments:
    """First two moments (mean vector, symmetric covariance) of a sample set."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = as_vector(self.mean, "mean")
        cov = as_matrix(self.cov, "cov")
        if cov.shape != (mean.size, mean.size):
            raise InvalidMatrix(
                f"cov shape {cov.shape} inconsistent with mean dimension {mean.size}"
            )
        _check_symmetric(cov, tol=1e-12)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def _check_symmetric(s: np.ndarray, tol: float) -> None:
    scale = max(1.0, float(np.linalg.norm(s)))
    if float(np.linalg.norm(s - s.T)) > tol * scale:
        raise InvalidMatrix("matrix is not symmetric within tolerance")


def sym_eig(s) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns (eigenvalues descending, orthonormal eigenvectors as columns)
    with reconstruction residual ``||S - V diag(l) V^T||_F / ||S||_F <= 1e-8``.
    """
    s = as_matrix(s, "S")
    if s.shape[0] != s.shape[1]:
        raise InvalidMatrix(f"S must be square, got {s.shape}")
    _check_symmetric(s, tol=1e-9)
    try:
        vals, vecs = np.linalg.eigh((s + s.T) / 2.0)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - eigh rarely fails
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(vecs))):
        raise NumericalFailure("eigendecomposition produced non-finite output")
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


def psd_sqrt(s, ridge: float = 0.0) -> np.ndarray:
    """Symmetric PSD square root ``V diag(sqrt(max(l + ridge, 0))) V^T``.

    Negative eigenvalues from sampling noise are clipped to zero, the
    standard practice when the input is an estimated covariance.
    """
    if ridge < 0:
        raise InvalidMatrix("ridge must be non-negative")
    vals, vecs = sym_eig(s)
    root = np.sqrt(np.maximum(vals + ridge, 0.0))
    out = (vecs * root) @ vecs.T
    return (out + out.T) / 2.0


def gaussian_mat(rng: SeededRng, rows: int, cols: int) -> np.ndarray:
    """Matrix of i.i.d. standard normal entries, bit-reproducible per (seed, stream)."""
    if rows < 1 or cols < 1:
        raise InvalidMatrix(f"rows/cols must be >= 1, got {rows}x{cols}")
    return rng.generator().standard_normal((rows, cols))


def cosine(u, v) -> float:
    """Cosine similarity clamped to [-1, 1].

    Bitwise-identical inputs return exactly 1.0 (the self-similarity of a
    deterministic generator's outputs must not pick up rounding dust).
    """
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine of a zero-norm vector is undefined")
    if u.shape == v.shape and np.array_equal(u, v):
        return 1.0
    val = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, val))


def fit_moments(x) -> GaussianMoments:
    """Column means and unbiased (n-1) sample covariance, symmetrized."""
    x = as_matrix(x, "X")
    n = x.shape[0]
    if n < 2:
        raise InsufficientSamples(f"need at least 2 rows to fit moments, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2.0
    return GaussianMoments(mean=mean, cov=cov)
