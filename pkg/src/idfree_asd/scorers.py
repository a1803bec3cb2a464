"""Reference-based anomaly scorers and score normalizers.

Each machine's notion of normality is a set of normal feature vectors. A
scorer turns distance to that set into a nonnegative anomaly score (higher
means more anomalous); normalizers rescale raw scores using reference
vectors only, so they remain applicable when test identities are unknown.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist

from .protocol import MergedTestSet, ScoreMatrix

__all__ = [
    "ScorerError",
    "SCORER_KINDS",
    "NORMALIZER_KINDS",
    "ReferenceSet",
    "ScorerSpec",
    "NormalizerSpec",
    "score",
    "normalize",
    "scoring_function",
    "build_score_matrix",
]

SCORER_KINDS = ("nearest_reference", "mahalanobis")
NORMALIZER_KINDS = ("none", "zscore_reference", "local_density")

# relative diagonal loading keeps small-sample covariances invertible; the
# absolute floor covers the all-identical-vectors case where trace is zero
EPSILON_RELATIVE = 1e-6
EPSILON_FLOOR = 1e-12


class ScorerError(ValueError):
    """Raised on invalid scorer configuration or incompatible vectors."""


@dataclass
class ReferenceSet:
    """Normal-only training vectors defining one machine's normality."""

    machine: str
    vectors: np.ndarray
    mean: np.ndarray = field(init=False, repr=False)
    covariance: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        vecs = np.asarray(self.vectors, dtype=float)
        if vecs.ndim != 2 or vecs.shape[0] == 0 or vecs.shape[1] == 0:
            raise ScorerError(
                f"reference set for {self.machine!r} must be a nonempty "
                f"2-D array, got shape {vecs.shape}"
            )
        if not np.isfinite(vecs).all():
            raise ScorerError(f"reference set for {self.machine!r} has non-finite values")
        self.vectors = vecs
        self.mean = vecs.mean(axis=0)
        if vecs.shape[0] == 1:
            self.covariance = np.zeros((vecs.shape[1], vecs.shape[1]))
        else:
            self.covariance = np.cov(vecs, rowvar=False, ddof=0).reshape(
                vecs.shape[1], vecs.shape[1]
            )

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def drop(self, index: int) -> "ReferenceSet":
        """Copy of the set without one vector (for leave-one-out scoring)."""
        if self.n < 2:
            raise ScorerError(
                f"cannot hold out from a single-vector reference set ({self.machine!r})"
            )
        kept = np.delete(self.vectors, index, axis=0)
        return ReferenceSet(self.machine, kept)


@dataclass(frozen=True)
class NormalizerSpec:
    """Choice of score normalization backed by the reference set."""

    kind: str = "none"
    k_norm: int = 1

    def __post_init__(self) -> None:
        if self.kind not in NORMALIZER_KINDS:
            raise ScorerError(
                f"unknown normalizer {self.kind!r}; use one of {NORMALIZER_KINDS}"
            )
        if int(self.k_norm) != self.k_norm or self.k_norm < 1:
            raise ScorerError(f"k_norm must be a positive integer, got {self.k_norm}")


@dataclass(frozen=True)
class ScorerSpec:
    """Choice of raw scorer plus optional normalization.

    epsilon=None selects the relative default at scoring time; an explicit
    value must be positive.
    """

    kind: str = "nearest_reference"
    k: int = 1
    epsilon: float | None = None
    normalizer: NormalizerSpec = NormalizerSpec()

    def __post_init__(self) -> None:
        if self.kind not in SCORER_KINDS:
            raise ScorerError(f"unknown scorer {self.kind!r}; use one of {SCORER_KINDS}")
        if int(self.k) != self.k or self.k < 1:
            raise ScorerError(f"neighbor count k must be a positive integer, got {self.k}")
        if self.epsilon is not None and not self.epsilon > 0.0:
            raise ScorerError(f"epsilon must be positive, got {self.epsilon}")


def _as_batch(x, d: int, machine: str) -> np.ndarray:
    batch = np.asarray(x, dtype=float)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[1] != d:
        raise ScorerError(
            f"vectors of dimension {batch.shape[-1] if batch.ndim else 0} "
            f"cannot be scored against {machine!r} references of dimension {d}"
        )
    if not np.isfinite(batch).all():
        raise ScorerError(f"non-finite feature values scored against {machine!r}")
    return batch


def _raw_batch(spec: ScorerSpec, ref: ReferenceSet, batch: np.ndarray) -> np.ndarray:
    if spec.kind == "nearest_reference":
        if spec.k > ref.n:
            raise ScorerError(
                f"k={spec.k} exceeds reference size {ref.n} for {ref.machine!r}"
            )
        distances = cdist(batch, ref.vectors)
        if spec.k == ref.n:
            nearest = distances
        else:
            nearest = np.partition(distances, spec.k - 1, axis=1)[:, : spec.k]
        return nearest.mean(axis=1)
    epsilon = spec.epsilon
    if epsilon is None:
        epsilon = max(
            EPSILON_RELATIVE * float(np.trace(ref.covariance)) / ref.d, EPSILON_FLOOR
        )
    regularized = ref.covariance + epsilon * np.eye(ref.d)
    factor = cho_factor(regularized)
    delta = batch - ref.mean
    squared = np.einsum("ij,ji->i", delta, cho_solve(factor, delta.T))
    return np.sqrt(np.maximum(squared, 0.0))


def score(spec: ScorerSpec, ref: ReferenceSet, x) -> float:
    """Raw anomaly score of one vector against one machine's references.

    nearest_reference: mean Euclidean distance to the k nearest reference
    vectors. mahalanobis: distance to the reference mean under the
    epsilon-regularized reference covariance. Both are nonnegative and any
    configured normalizer is not applied here.
    """
    batch = _as_batch(x, ref.d, ref.machine)
    if batch.shape[0] != 1:
        raise ScorerError("score() takes a single vector; use scoring_function for batches")
    return float(_raw_batch(spec, ref, batch)[0])


RawFn = Callable[[ReferenceSet, np.ndarray], float]


def _loo_stats(ref: ReferenceSet, raw_fn: RawFn) -> tuple[float, float]:
    held_out = np.array(
        [raw_fn(ref.drop(i), ref.vectors[i]) for i in range(ref.n)], dtype=float
    )
    return float(held_out.mean()), float(held_out.std())


def _local_spacings(ref: ReferenceSet, k_norm: int) -> np.ndarray:
    # each reference vector's mean distance to its k_norm nearest peers
    if ref.n < k_norm + 1:
        raise ScorerError(
            f"local_density needs at least k_norm+1={k_norm + 1} reference "
            f"vectors, {ref.machine!r} has {ref.n}"
        )
    pairwise = cdist(ref.vectors, ref.vectors)
    np.fill_diagonal(pairwise, np.inf)
    nearest = np.sort(pairwise, axis=1)[:, :k_norm]
    spacings = nearest.mean(axis=1)
    if np.any(spacings == 0.0):
        raise ScorerError(
            f"duplicate reference vectors give {ref.machine!r} zero local spacing"
        )
    return spacings


def normalize(
    spec: NormalizerSpec, ref: ReferenceSet, raw_fn: RawFn
) -> Callable[[np.ndarray], float]:
    """Wrap a raw scoring function with reference-based normalization.

    zscore_reference standardizes by the mean and population stddev of
    leave-one-out raw scores of the reference vectors themselves (holding
    each vector out avoids zero self-distances deflating the mean).
    local_density divides the raw score by the mean local spacing of the
    k_norm reference vectors nearest to the query. none is the identity.
    """
    if spec.kind == "none":
        return lambda x: raw_fn(ref, x)
    if spec.kind == "zscore_reference":
        mu, sigma = _loo_stats(ref, raw_fn)
        if sigma == 0.0:
            raise ScorerError(
                f"constant held-out reference scores for {ref.machine!r}; "
                f"zscore_reference is undefined"
            )
        return lambda x: (raw_fn(ref, x) - mu) / sigma
    spacings = _local_spacings(ref, spec.k_norm)

    def _local(x: np.ndarray) -> float:
        batch = _as_batch(x, ref.d, ref.machine)
        distances = cdist(batch, ref.vectors)[0]
        nearest = np.argpartition(distances, spec.k_norm - 1)[: spec.k_norm]
        return raw_fn(ref, x) / float(spacings[nearest].mean())

    return _local


def scoring_function(
    spec: ScorerSpec, ref: ReferenceSet
) -> Callable[[np.ndarray], np.ndarray]:
    """Batch scorer for one machine: (n, d) features to n normalized scores."""
    norm = spec.normalizer
    if norm.kind == "zscore_reference":
        mu, sigma = _loo_stats(ref, lambda r, x: score(spec, r, x))
        if sigma == 0.0:
            raise ScorerError(
                f"constant held-out reference scores for {ref.machine!r}; "
                f"zscore_reference is undefined"
            )
    spacings = _local_spacings(ref, norm.k_norm) if norm.kind == "local_density" else None

    def _batch(x: np.ndarray) -> np.ndarray:
        batch = _as_batch(x, ref.d, ref.machine)
        raw = _raw_batch(spec, ref, batch)
        if norm.kind == "zscore_reference":
            return (raw - mu) / sigma
        if norm.kind == "local_density":
            distances = cdist(batch, ref.vectors)
            order = np.argpartition(distances, norm.k_norm - 1, axis=1)[:, : norm.k_norm]
            return raw / spacings[order].mean(axis=1)
        return raw

    return _batch


def build_score_matrix(
    specs: Mapping[str, tuple[ScorerSpec, ReferenceSet]], merged: MergedTestSet
) -> ScoreMatrix:
    """Score every merged recording against every machine.

    Reads only recording ids and features; true machine labels stay hidden
    from the scoring stage. Column order is sorted machine name.
    """
    if not specs:
        raise ScorerError("no machine scorers configured")
    machines = sorted(specs)
    missing = [rec.id for rec in merged.recordings if rec.features is None]
    if missing:
        raise ScorerError(f"recordings without features: {missing}")
    ids = [rec.id for rec in merged.recordings]
    dims = {np.asarray(rec.features).shape for rec in merged.recordings}
    if len(dims) > 1 or any(len(shape) != 1 for shape in dims):
        raise ScorerError(f"inconsistent feature shapes across recordings: {sorted(dims)}")
    features = np.stack([np.asarray(rec.features, dtype=float) for rec in merged.recordings])
    columns = [scoring_function(spec, ref)(features) for spec, ref in
               (specs[machine] for machine in machines)]
    matrix = np.column_stack(columns)
    rows = {rec_id: matrix[i] for i, rec_id in enumerate(ids)}
    return ScoreMatrix(machines, rows)
