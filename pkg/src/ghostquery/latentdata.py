"""Corpus representation, synthetic generation, pooling, and the GDRL container.

A latent sequence is a plain ``(T, d_a)`` float64 array (one row per
timestep frame). Conditioning sequences carry an explicit null flag used
by classifier-free guidance, so they get a small wrapper type.

Synthetic corpora are built on a compositional attribute grid
(genre x instrument). Every attribute value owns a fixed audio direction
``u_v`` (orthonormalized across all values, so cells are separable with a
known margin) and a fixed conditioning token ``t_v``. Items of cell (g, i)
are noisy copies of the cell centroid, which makes a nearest-centroid
ground-truth oracle available for every generated item.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyInput,
    FormatError,
    InvalidSpec,
    NoOracle,
    NumericalFailure,
    ShapeError,
)
from .numerics import SeededRng, as_matrix

__all__ = [
    "CondSeq",
    "CorpusItem",
    "Corpus",
    "SynthSpec",
    "as_latent",
    "gen_corpus",
    "oracle_label",
    "pool",
    "aggregate",
    "save_corpus",
    "load_corpus",
    "cond_for",
    "lift_to_audio",
]

MAGIC = b"GDRL"
FORMAT_VERSION = 1

ATTRIBUTES = ("genre", "instrument")


def as_latent(x, name: str = "latent") -> np.ndarray:
    """Validate a (T, d) latent sequence with at least one frame."""
    a = as_matrix(x, name)
    if a.shape[0] < 1:
        raise ShapeError(f"{name} needs at least one frame")
    return a


def _f32(x: np.ndarray) -> np.ndarray:
    """Quantize to the 32-bit stored representation (kept as float64)."""
    return np.asarray(x, dtype=np.float32).astype(np.float64)


@dataclass(frozen=True)
class CondSeq:
    """Conditioning token sequence (L, d_t) with a distinguished null.

    ``is_null`` short-circuits conditioning in the denoiser regardless of
    token contents; the canonical null is a single all-zero token.
    """

    tokens: np.ndarray
    is_null: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tokens", as_latent(self.tokens, "cond tokens"))

    @classmethod
    def null(cls, d_t: int) -> "CondSeq":
        return cls(tokens=np.zeros((1, d_t)), is_null=True)

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


@dataclass(frozen=True)
class CorpusItem:
    id: str
    audio: np.ndarray  # (T, d_a)
    cond: CondSeq
    labels: dict
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "audio", as_latent(self.audio, f"audio[{self.id}]"))


@dataclass
class Corpus:
    d_a: int
    d_t: int
    default_T: int
    items: list
    provenance: dict = field(default_factory=dict)
    _directions: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        seen = set()
        for it in self.items:
            if it.id in seen:
                raise InvalidSpec(f"duplicate item id {it.id!r}")
            seen.add(it.id)
            if it.audio.shape[1] != self.d_a:
                raise ShapeError(f"item {it.id}: audio dim {it.audio.shape[1]} != d_a {self.d_a}")
            if it.cond.dim != self.d_t:
                raise ShapeError(f"item {it.id}: cond dim {it.cond.dim} != d_t {self.d_t}")

    def split_items(self, split: str | None) -> list:
        if split is None:
            return list(self.items)
        return [it for it in self.items if it.split == split]

    def by_id(self, item_id: str) -> CorpusItem:
        for it in self.items:
            if it.id == item_id:
                return it
        raise KeyError(item_id)

    @property
    def synth_spec(self) -> "SynthSpec | None":
        prov = self.provenance
        if prov.get("kind") == "synthetic":
            return SynthSpec(**prov["spec"])
        return None

    def attribute_directions(self) -> dict:
        """value name -> audio direction u_v (synthetic corpora only)."""
        if not self._directions:
            spec = self.synth_spec
            if spec is None:
                raise NoOracle("corpus has no synthetic provenance; centroids unknown")
            u, t = _attribute_basis(spec)
            self._directions.update({"u": u, "t": t})
        return self._directions["u"]

    def cond_tokens(self) -> dict:
        """value name -> conditioning token t_v (synthetic corpora only)."""
        self.attribute_directions()
        return self._directions["t"]


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a compositional synthetic corpus."""

    n_genres: int = 4
    n_instruments: int = 4
    d_a: int = 32
    d_t: int = 16
    T: int = 16
    L: int = 2
    items_per_cell: int = 16
    centroid_scale: float = 1.0
    noise_scale: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.n_genres * self.n_instruments < 2:
            raise InvalidSpec("attribute grid must have at least 2 cells")
        if self.n_genres < 1 or self.n_instruments < 1:
            raise InvalidSpec("grid sides must be >= 1")
        if min(self.d_a, self.d_t, self.T, self.items_per_cell) < 1:
            raise InvalidSpec("dims, frames and items_per_cell must be >= 1")
        if self.L != len(ATTRIBUTES):
            raise InvalidSpec(f"cond length L must be {len(ATTRIBUTES)} (one token per attribute)")
        if not (0 <= self.noise_scale < self.centroid_scale):
            raise InvalidSpec("need 0 <= noise_scale < centroid_scale for separable classes")
        if self.n_genres + self.n_instruments > self.d_a:
            raise InvalidSpec("d_a too small to orthonormalize all attribute directions")

    @property
    def value_names(self) -> list:
        return [f"g{k}" for k in range(self.n_genres)] + [
            f"i{k}" for k in range(self.n_instruments)
        ]

    def to_dict(self) -> dict:
        return {
            "n_genres": self.n_genres,
            "n_instruments": self.n_instruments,
            "d_a": self.d_a,
            "d_t": self.d_t,
            "T": self.T,
            "L": self.L,
            "items_per_cell": self.items_per_cell,
            "centroid_scale": self.centroid_scale,
            "noise_scale": self.noise_scale,
            "seed": self.seed,
        }


def _gram_schmidt(rows: np.ndarray) -> np.ndarray:
    basis = []
    for row in rows:
        v = row.copy()
        for b in basis:
            v -= np.dot(v, b) * b
        norm = np.linalg.norm(v)
        if norm < 1e-8:
            raise NumericalFailure("attribute directions nearly dependent; re-seed")
        basis.append(v / norm)
    return np.vstack(basis)


def _attribute_basis(spec: SynthSpec) -> tuple[dict, dict]:
    """Deterministic per-value audio directions and conditioning tokens."""
    names = spec.value_names
    n = len(names)
    raw_u = SeededRng(spec.seed, 0).generator().standard_normal((n, spec.d_a))
    u = _f32(_gram_schmidt(raw_u))
    raw_t = SeededRng(spec.seed, 1).generator().standard_normal((n, spec.d_t))
    # unit-norm tokens keep conditioning scale independent of d_t
    t = _f32(raw_t / np.linalg.norm(raw_t, axis=1, keepdims=True))
    return (
        {name: u[k] for k, name in enumerate(names)},
        {name: t[k] for k, name in enumerate(names)},
    )


def _cell_split_sizes(m: int) -> tuple[int, int, int]:
    if m < 4:
        return m, 0, 0
    held = max(1, m // 8)
    return m - 2 * held, held, held


def gen_corpus(spec: SynthSpec) -> Corpus:
    """Generate a synthetic corpus. Deterministic: same spec, same bytes."""
    spec.validate()
    u, t = _attribute_basis(spec)
    items = []
    n_train, n_val, n_test = _cell_split_sizes(spec.items_per_cell)
    index = 0
    for g in range(spec.n_genres):
        for i in range(spec.n_instruments):
            gname, iname = f"g{g}", f"i{i}"
            centroid = spec.centroid_scale * (u[gname] + u[iname])
            base_tokens = np.vstack([t[gname], t[iname]])
            for j in range(spec.items_per_cell):
                rng = SeededRng(spec.seed, 2 + index).generator()
                frames = centroid + spec.noise_scale * rng.standard_normal(
                    (spec.T, spec.d_a)
                )
                tokens = base_tokens + spec.noise_scale * rng.standard_normal(
                    (spec.L, spec.d_t)
                )
                if j < n_train:
                    split = "train"
                elif j < n_train + n_val:
                    split = "val"
                else:
                    split = "test"
                items.append(
                    CorpusItem(
                        id=f"{gname}{iname}-{j:03d}",
                        audio=_f32(frames),
                        cond=CondSeq(_f32(tokens)),
                        labels={"genre": gname, "instrument": iname},
                        split=split,
                    )
                )
                index += 1
    return Corpus(
        d_a=spec.d_a,
        d_t=spec.d_t,
        default_T=spec.T,
        items=items,
        provenance={"kind": "synthetic", "spec": spec.to_dict()},
    )


def oracle_label(corpus: Corpus, pooled) -> dict:
    """Nearest-centroid ground truth for a pooled audio vector.

    Ties break toward the lowest (genre, instrument) index pair.
    """
    spec = corpus.synth_spec
    if spec is None:
        raise NoOracle("oracle labels require a synthetic corpus")
    pooled = np.asarray(pooled, dtype=np.float64).reshape(-1)
    if pooled.size != corpus.d_a:
        raise ShapeError(f"pooled vector has dim {pooled.size}, expected {corpus.d_a}")
    u = corpus.attribute_directions()
    best = None
    best_d = np.inf
    for g in range(spec.n_genres):
        for i in range(spec.n_instruments):
            centroid = spec.centroid_scale * (u[f"g{g}"] + u[f"i{i}"])
            d = float(np.linalg.norm(pooled - centroid))
            if d < best_d:
                best_d = d
                best = {"genre": f"g{g}", "instrument": f"i{i}"}
    return best


def pool(seq) -> np.ndarray:
    """Arithmetic mean over the frame axis of a latent sequence."""
    return as_latent(seq).mean(axis=0)


def aggregate(queries) -> np.ndarray:
    """Mean of pooled vectors over a non-empty list of latent sequences."""
    queries = list(queries)
    if not queries:
        raise EmptyInput("aggregate over an empty query list")
    pools = [pool(q) for q in queries]
    dims = {p.size for p in pools}
    if len(dims) != 1:
        raise ShapeError(f"queries have mixed dims {sorted(dims)}")
    return np.mean(pools, axis=0)


def cond_for(corpus: Corpus, genre: str | None = None, instrument: str | None = None) -> CondSeq:
    """Clean conditioning sequence for attribute values of a synthetic corpus."""
    t = corpus.cond_tokens()
    tokens = []
    for value in (genre, instrument):
        if value is None:
            continue
        if value not in t:
            raise InvalidSpec(f"unknown attribute value {value!r}")
        tokens.append(t[value])
    if not tokens:
        raise InvalidSpec("at least one attribute value required")
    return CondSeq(np.vstack(tokens))


def lift_to_audio(corpus: Corpus, genre: str | None = None, instrument: str | None = None) -> np.ndarray:
    """Map attribute values into audio space via the generator's directions.

    Stands in for a shared text/audio embedding space: the lifted vector is
    the (partial) cell centroid those attributes describe.
    """
    u = corpus.attribute_directions()
    spec = corpus.synth_spec
    out = np.zeros(corpus.d_a)
    any_attr = False
    for value in (genre, instrument):
        if value is None:
            continue
        if value not in u:
            raise InvalidSpec(f"unknown attribute value {value!r}")
        out = out + spec.centroid_scale * u[value]
        any_attr = True
    if not any_attr:
        raise InvalidSpec("at least one attribute value required")
    return out


# ---------------------------------------------------------------------------
# GDRL container format (little-endian):
#   "GDRL" | u32 version | u32 header_len | header JSON | payload | u32 crc32
# payload = per item in header order: T*d_a f32 audio rows, then L*d_t f32
# cond tokens. crc32 covers the payload bytes only.
# ---------------------------------------------------------------------------


def _header_dict(corpus: Corpus) -> dict:
    return {
        "d_a": corpus.d_a,
        "d_t": corpus.d_t,
        "n_items": len(corpus.items),
        "items": [
            {
                "id": it.id,
                "T": int(it.audio.shape[0]),
                "L": int(it.cond.length),
                "labels": it.labels,
                "split": it.split,
            }
            for it in corpus.items
        ],
        "provenance": {**corpus.provenance, "default_T": corpus.default_T},
    }


def save_corpus(corpus: Corpus, path) -> None:
    header = json.dumps(_header_dict(corpus), sort_keys=True, separators=(",", ":")).encode()
    payload = bytearray()
    for it in corpus.items:
        payload += np.asarray(it.audio, dtype="<f4").tobytes()
        payload += np.asarray(it.cond.tokens, dtype="<f4").tobytes()
    payload = bytes(payload)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load_corpus(path) -> Corpus:
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise FormatError("file shorter than fixed header", offset=len(blob))
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", offset=0)
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", offset=4)
    (hlen,) = struct.unpack_from("<I", blob, 8)
    if len(blob) < 12 + hlen:
        raise FormatError("truncated header", offset=len(blob))
    try:
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}", offset=12) from exc
    d_a, d_t = header["d_a"], header["d_t"]
    payload_start = 12 + hlen
    expected = sum(4 * (it["T"] * d_a + it["L"] * d_t) for it in header["items"])
    if len(blob) != payload_start + expected + 4:
        raise FormatError(
            f"payload length {len(blob) - payload_start - 4} inconsistent with "
            f"header dims (expected {expected})",
            offset=payload_start,
        )
    payload = blob[payload_start : payload_start + expected]
    (crc_stored,) = struct.unpack_from("<I", blob, payload_start + expected)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    if crc != crc_stored:
        raise FormatError(
            f"payload checksum mismatch (stored {crc_stored:#010x}, computed {crc:#010x})",
            offset=payload_start + expected,
        )
    items = []
    off = 0
    for meta in header["items"]:
        na = meta["T"] * d_a * 4
        audio = np.frombuffer(payload, dtype="<f4", count=meta["T"] * d_a, offset=off)
        off += na
        nc = meta["L"] * d_t * 4
        tokens = np.frombuffer(payload, dtype="<f4", count=meta["L"] * d_t, offset=off)
        off += nc
        items.append(
            CorpusItem(
                id=meta["id"],
                audio=audio.astype(np.float64).reshape(meta["T"], d_a),
                cond=CondSeq(tokens.astype(np.float64).reshape(meta["L"], d_t)),
                labels=meta.get("labels") or {},
                split=meta.get("split", "train"),
            )
        )
    provenance = dict(header.get("provenance") or {})
    default_T = provenance.pop("default_T", None)
    if default_T is None:
        default_T = max((it.audio.shape[0] for it in items), default=1)
    return Corpus(d_a=d_a, d_t=d_t, default_T=default_T, items=items, provenance=provenance)


def corpora_equal(a: Corpus, b: Corpus) -> bool:
    """Equality on the 32-bit stored representation."""
    if (a.d_a, a.d_t, a.default_T, len(a.items)) != (b.d_a, b.d_t, b.default_T, len(b.items)):
        return False
    if a.provenance != b.provenance:
        return False
    for x, y in zip(a.items, b.items):
        if (x.id, x.labels, x.split) != (y.id, y.labels, y.split):
            return False
        if not np.array_equal(_f32(x.audio), _f32(y.audio)):
            return False
        if not np.array_equal(_f32(x.cond.tokens), _f32(y.cond.tokens)):
            return False
    return True
