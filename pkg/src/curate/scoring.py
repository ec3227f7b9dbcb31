"""Selection score matrices and the on-disk reference-embedding cache.

A score matrix is built from the learner and reference per-pair loss
matrices under one of three criteria:

* ``learnability``: gain * (learner - reference) -- high for pairs that are
  unlearned by the learner but easy for the reference.
* ``easy_ref``: gain * (-reference) -- high for pairs the reference finds easy.
* ``hard_learner``: gain * learner -- high for pairs the learner finds hard.

Because the reference model is fixed, its embeddings can be computed once
and cached on disk; the per-pair reference loss matrix is then recomputed at
selection time for whatever batch composition the run draws.  Embeddings
(not scalar scores) are cached because batch composition is unknown ahead of
training.

Cache file layout (little-endian):

    bytes  0..7    magic "JESTREF1"
    bytes  8..15   n as unsigned 64-bit
    bytes 16..23   d as unsigned 64-bit
    then   n*d float32 image embeddings, row-major
    then   n*d float32 text embeddings, row-major
    then   3 float64: alpha, beta, t
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .contrastive import ContrastiveParams, EmbeddingBatch, LossMatrix

LEARNABILITY = "learnability"
EASY_REF = "easy_ref"
HARD_LEARNER = "hard_learner"
SCORE_METHODS = (LEARNABILITY, EASY_REF, HARD_LEARNER)

DEFAULT_GAIN = 100.0

REFERENCE_MAGIC = b"JESTREF1"
CHECKPOINT_MAGIC = b"JESTCKPT"

_HEADER = struct.Struct("<QQ")
_PARAMS = struct.Struct("<ddd")


@dataclass(frozen=True)
class ScoreMatrix:
    """Per-pair selection scores; sub-matrix sums define joint batch scores."""

    values: np.ndarray
    method: str = LEARNABILITY
    gain: float = 1.0

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"score matrix must be square, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("score matrix entries must be finite")
        if self.method not in SCORE_METHODS:
            raise ValueError(f"unknown scoring method {self.method!r}")
        if not (np.isfinite(self.gain) and self.gain > 0.0):
            raise ValueError(f"gain must be positive, got {self.gain}")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def build_scores(
    learner_nll: LossMatrix,
    reference_nll: LossMatrix,
    method: str = LEARNABILITY,
    gain: float = DEFAULT_GAIN,
) -> ScoreMatrix:
    """Combine learner and reference loss matrices into selection scores.

    The gain is applied uniformly to all three methods.
    """
    if method not in SCORE_METHODS:
        raise ValueError(f"unknown scoring method {method!r}")
    if learner_nll.values.shape != reference_nll.values.shape:
        raise ValueError(
            "loss matrix shape mismatch: "
            f"{learner_nll.values.shape} vs {reference_nll.values.shape}"
        )
    if learner_nll.loss_kind != reference_nll.loss_kind:
        raise ValueError(
            "loss kind mismatch: "
            f"{learner_nll.loss_kind!r} vs {reference_nll.loss_kind!r}"
        )
    if method == LEARNABILITY:
        values = learner_nll.values - reference_nll.values
    elif method == EASY_REF:
        values = -reference_nll.values
    else:
        values = learner_nll.values.copy()
    return ScoreMatrix(gain * values, method=method, gain=gain)


class CacheFormatError(ValueError):
    """Malformed cache/checkpoint file; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ReferenceCache:
    """Cached reference-model embeddings plus the reference head parameters.

    Embeddings are stored as float32 (the on-disk precision), so a cache
    round-trips through the file format bit-exactly.
    """

    image_embeds: np.ndarray
    text_embeds: np.ndarray
    params: ContrastiveParams

    def __post_init__(self) -> None:
        img = np.ascontiguousarray(self.image_embeds, dtype=np.float32)
        txt = np.ascontiguousarray(self.text_embeds, dtype=np.float32)
        if img.ndim != 2 or txt.ndim != 2 or img.shape != txt.shape:
            raise ValueError(
                f"image/text embedding shape mismatch: {img.shape} vs {txt.shape}"
            )
        n, d = img.shape
        if n < 1 or d < 1:
            raise ValueError(f"cache requires n >= 1 and d >= 1, got n={n}, d={d}")
        if not (np.isfinite(img).all() and np.isfinite(txt).all()):
            raise ValueError("cached embeddings must be finite")
        object.__setattr__(self, "image_embeds", img)
        object.__setattr__(self, "text_embeds", txt)

    @property
    def n(self) -> int:
        return self.image_embeds.shape[0]

    @property
    def d(self) -> int:
        return self.image_embeds.shape[1]

    def to_batch(self) -> EmbeddingBatch:
        """View the cached embeddings as an EmbeddingBatch for loss code."""
        return EmbeddingBatch(self.image_embeds, self.text_embeds)

    def take(self, indices: np.ndarray) -> "ReferenceCache":
        """Cache restricted to ``indices`` (rows kept in the given order)."""
        idx = np.asarray(indices, dtype=np.int64)
        return ReferenceCache(
            self.image_embeds[idx], self.text_embeds[idx], self.params
        )


def write_envelope(
    path: str | Path,
    magic: bytes,
    matrix_a: np.ndarray,
    matrix_b: np.ndarray,
    triple: tuple[float, float, float],
) -> None:
    """Write two equal-shape float32 matrices plus three float64 scalars."""
    a = np.ascontiguousarray(matrix_a, dtype="<f4")
    b = np.ascontiguousarray(matrix_b, dtype="<f4")
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"matrix shape mismatch: {a.shape} vs {b.shape}")
    n, d = a.shape
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(_HEADER.pack(n, d))
        fh.write(a.tobytes(order="C"))
        fh.write(b.tobytes(order="C"))
        fh.write(_PARAMS.pack(*triple))


def read_envelope(
    path: str | Path, magic: bytes
) -> tuple[np.ndarray, np.ndarray, tuple[float, float, float]]:
    """Read a file written by :func:`write_envelope`, validating layout."""
    data = Path(path).read_bytes()
    if len(data) < len(magic):
        raise CacheFormatError("file truncated before magic", len(data))
    if data[: len(magic)] != magic:
        raise CacheFormatError(
            f"bad magic {data[:len(magic)]!r}, expected {magic!r}", 0
        )
    header_end = len(magic) + _HEADER.size
    if len(data) < header_end:
        raise CacheFormatError("file truncated inside header", len(data))
    n, d = _HEADER.unpack_from(data, len(magic))
    if n < 1 or d < 1:
        raise CacheFormatError(f"invalid dimensions n={n}, d={d}", len(magic))
    matrix_bytes = 4 * n * d  # exact in Python ints, no overflow
    expected = header_end + 2 * matrix_bytes + _PARAMS.size
    if len(data) != expected:
        raise CacheFormatError(
            f"size mismatch: expected {expected} bytes, found {len(data)}",
            min(len(data), expected),
        )
    a = np.frombuffer(data, dtype="<f4", count=n * d, offset=header_end)
    b = np.frombuffer(data, dtype="<f4", count=n * d, offset=header_end + matrix_bytes)
    triple = _PARAMS.unpack_from(data, header_end + 2 * matrix_bytes)
    return (
        a.reshape(n, d).copy(),
        b.reshape(n, d).copy(),
        (float(triple[0]), float(triple[1]), float(triple[2])),
    )


def write_reference_cache(cache: ReferenceCache, path: str | Path) -> None:
    """Write a reference cache to ``path`` in the binary cache format."""
    write_envelope(
        path,
        REFERENCE_MAGIC,
        cache.image_embeds,
        cache.text_embeds,
        (cache.params.alpha, cache.params.beta, cache.params.t),
    )


def read_reference_cache(path: str | Path) -> ReferenceCache:
    """Read a reference cache; raises CacheFormatError on malformed files."""
    img, txt, (alpha, beta, t) = read_envelope(path, REFERENCE_MAGIC)
    try:
        params = ContrastiveParams(alpha=alpha, beta=beta, t=t)
    except ValueError as exc:
        raise CacheFormatError(
            f"invalid head parameters: {exc}",
            len(REFERENCE_MAGIC) + _HEADER.size + 2 * img.nbytes,
        ) from exc
    return ReferenceCache(img, txt, params)
