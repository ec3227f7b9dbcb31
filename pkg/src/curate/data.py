"""Synthetic paired image/text data with a controllable misalignment rate.

Each example carries a latent concept vector plus an item-specific latent
wobble shared by both modalities, so matched pairs are retrievable even
among items of the same concept.  Modalities observe the latent through
different fixed random projections plus modality-specific noise.  A
"misaligned" item pairs an image and a text drawn from independently chosen
concepts, modeling uncurated web pairs; a curated set contains aligned items
only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ITEM_NOISE = 0.5
MODALITY_NOISE = 0.25


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    """Shape and noise knobs for one generated dataset family."""

    latent_dim: int = 8
    input_dim: int = 32
    n_concepts: int = 16
    noise_rate: float = 0.5
    curated_size: int = 1024
    uncurated_size: int = 4096
    holdout_size: int = 512
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("latent_dim", "input_dim", "n_concepts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("curated_size", "uncurated_size", "holdout_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not (0.0 <= self.noise_rate <= 1.0):
            raise ValueError(f"noise_rate must lie in [0, 1], got {self.noise_rate}")
        if self.input_dim % 2 != 0:
            raise ValueError(
                f"input_dim must be even (approximate encoding halves it), "
                f"got {self.input_dim}"
            )


@dataclass(frozen=True)
class PairedDataset:
    """Generated image/text pairs plus the ground truth behind them."""

    image_inputs: np.ndarray
    text_inputs: np.ndarray
    image_concepts: np.ndarray
    text_concepts: np.ndarray
    aligned: np.ndarray

    @property
    def size(self) -> int:
        return self.image_inputs.shape[0]

    def take(self, indices: np.ndarray) -> "PairedDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return PairedDataset(
            self.image_inputs[idx],
            self.text_inputs[idx],
            self.image_concepts[idx],
            self.text_concepts[idx],
            self.aligned[idx],
        )

    def aligned_subset(self) -> "PairedDataset":
        """Items whose modalities share a concept (an oracle pre-filter)."""
        return self.take(np.flatnonzero(self.aligned))


@dataclass(frozen=True)
class DatasetBundle:
    """Curated pool, uncurated pool, and a clean disjoint holdout."""

    curated: PairedDataset
    uncurated: PairedDataset
    holdout: PairedDataset


class _World:
    """Fixed concept table and modality projections for one dataset draw."""

    def __init__(self, spec: SyntheticDatasetSpec, rng: np.random.Generator):
        self.spec = spec
        self.concepts = rng.normal(size=(spec.n_concepts, spec.latent_dim))
        scale = 1.0 / np.sqrt(spec.latent_dim)
        self.image_proj = rng.normal(0.0, scale, size=(spec.latent_dim, spec.input_dim))
        self.text_proj = rng.normal(0.0, scale, size=(spec.latent_dim, spec.input_dim))

    def _latents(self, concept_ids: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        wobble = rng.normal(0.0, ITEM_NOISE, size=(concept_ids.size, self.spec.latent_dim))
        return self.concepts[concept_ids] + wobble

    def draw(
        self, size: int, noise_rate: float, rng: np.random.Generator
    ) -> PairedDataset:
        spec = self.spec
        image_concepts = rng.integers(0, spec.n_concepts, size=size)
        misaligned = rng.random(size) < noise_rate
        text_concepts = image_concepts.copy()
        if np.any(misaligned):
            text_concepts[misaligned] = rng.integers(
                0, spec.n_concepts, size=int(misaligned.sum())
            )
        latents = self._latents(image_concepts, rng)
        text_latents = latents.copy()
        if np.any(misaligned):
            text_latents[misaligned] = self._latents(
                text_concepts[misaligned], rng
            )
        image_noise = rng.normal(0.0, MODALITY_NOISE, size=latents.shape)
        text_noise = rng.normal(0.0, MODALITY_NOISE, size=latents.shape)
        image_inputs = (latents + image_noise) @ self.image_proj
        text_inputs = (text_latents + text_noise) @ self.text_proj
        aligned = image_concepts == text_concepts
        return PairedDataset(
            image_inputs, text_inputs, image_concepts, text_concepts, aligned
        )


def generate_dataset(
    spec: SyntheticDatasetSpec, rng: np.random.Generator
) -> DatasetBundle:
    """Draw the curated pool, the uncurated pool, and the holdout.

    The curated pool and the holdout are always fully aligned; the
    uncurated pool re-pairs a ``noise_rate`` fraction of items across
    independently drawn concepts.  All three draws share one concept table
    and one pair of modality projections.
    """
    world = _World(spec, rng)
    curated = world.draw(spec.curated_size, 0.0, rng)
    uncurated = world.draw(spec.uncurated_size, spec.noise_rate, rng)
    holdout = world.draw(spec.holdout_size, 0.0, rng)
    return DatasetBundle(curated=curated, uncurated=uncurated, holdout=holdout)
