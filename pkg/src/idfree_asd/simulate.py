"""Synthetic machine-sound stand-in data with a separability dial.

Machines are Gaussian clusters placed at the vertices of a regular simplex,
so a single separation scalar controls how confusable every machine pair is.
Anomalies sit at a radial offset from their own cluster center. Sweeping the
separation trades implicit identification accuracy against the degradation
of identity-free detection, which is the relationship the sweep reports.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .protocol import EvalConfig, MergedTestSet, Recording, full_report, merge_test_sets
from .scorers import ReferenceSet, ScorerSpec, build_score_matrix

__all__ = [
    "SimError",
    "SimConfig",
    "SweepPoint",
    "SweepResult",
    "DEFAULT_SCORER",
    "DEFAULT_SEPARATIONS",
    "DEFAULT_REPEATS",
    "simplex_centers",
    "generate",
    "derive_seed",
    "run_point",
    "sweep",
]

DEFAULT_SCORER = ScorerSpec(kind="nearest_reference", k=1)
# spans the claimed-anomaly regime (low end) through clean separation where
# misidentification vanishes (high end); values are multiples of spread
DEFAULT_SEPARATIONS = (4.5, 5.0, 5.5, 6.0, 6.5, 7.0, 8.0, 9.0, 11.0, 13.0)
DEFAULT_REPEATS = 5

_SEED_LIMIT = 2**64


class SimError(ValueError):
    """Raised on invalid simulation configs or impossible geometry."""


@dataclass(frozen=True)
class SimConfig:
    """Generator knobs; the seed fully determines every sample."""

    k: int = 5
    d: int = 8
    n_ref: int = 64
    n_norm: int = 96
    n_anom: int = 32
    separation: float = 8.0
    spread: float = 1.0
    anomaly_offset: float = 4.0
    seed: int = 0

    def __post_init__(self) -> None:
        if int(self.k) != self.k or self.k < 1:
            raise SimError(f"machine count k must be a positive integer, got {self.k}")
        if int(self.d) != self.d or self.d < 1:
            raise SimError(f"dimension d must be a positive integer, got {self.d}")
        if int(self.n_ref) != self.n_ref or self.n_ref < 2:
            raise SimError(f"need n_ref >= 2 reference vectors, got {self.n_ref}")
        if int(self.n_norm) != self.n_norm or self.n_norm < 1:
            raise SimError(f"need n_norm >= 1 normal test vectors, got {self.n_norm}")
        if int(self.n_anom) != self.n_anom or self.n_anom < 1:
            raise SimError(f"need n_anom >= 1 anomalous test vectors, got {self.n_anom}")
        for name in ("separation", "spread", "anomaly_offset"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise SimError(f"{name} must be finite, got {value}")
        if self.separation < 0.0:
            raise SimError(f"separation must be >= 0, got {self.separation}")
        if self.spread <= 0.0:
            raise SimError(f"spread must be > 0, got {self.spread}")
        if self.anomaly_offset <= 0.0:
            raise SimError(f"anomaly_offset must be > 0, got {self.anomaly_offset}")
        if int(self.seed) != self.seed or not 0 <= self.seed < _SEED_LIMIT:
            raise SimError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


def simplex_centers(k: int, d: int, separation: float) -> np.ndarray:
    """k mutually equidistant centers in d dimensions, centroid at origin.

    Every pair of centers is exactly `separation` apart; requires d >= k-1.
    """
    if d < k - 1:
        raise SimError(
            f"cannot place {k} equidistant centers in {d} dimensions; need d >= {k - 1}"
        )
    centers = np.zeros((k, d))
    if k == 1 or separation == 0.0:
        return centers
    # rows of the Cholesky factor realize unit vectors with pairwise dot
    # -1/(k-1); the last vertex is minus their sum, and pairwise distances
    # come out at sqrt(2k/(k-1)) before rescaling
    gram = np.full((k - 1, k - 1), -1.0 / (k - 1))
    np.fill_diagonal(gram, 1.0)
    vertices = np.linalg.cholesky(gram)
    scale = separation / np.sqrt(2.0 * k / (k - 1.0))
    centers[: k - 1, : k - 1] = vertices * scale
    centers[k - 1, : k - 1] = -vertices.sum(axis=0) * scale
    return centers


def _machine_name(index: int) -> str:
    return f"machine{index + 1:02d}"


def generate(config: SimConfig) -> tuple[dict[str, ReferenceSet], MergedTestSet]:
    """Draw per-machine reference sets and a merged, featured test set.

    Each machine consumes its own child random stream, so adding machines
    never perturbs the samples of existing ones. Anomalies are placed at
    anomaly_offset along a uniform random direction before cluster noise.
    """
    centers = simplex_centers(config.k, config.d, config.separation)
    children = np.random.SeedSequence(config.seed).spawn(config.k)
    references: dict[str, ReferenceSet] = {}
    test_sets: dict[str, list[Recording]] = {}
    for index in range(config.k):
        machine = _machine_name(index)
        rng = np.random.default_rng(children[index])
        center = centers[index]
        refs = center + config.spread * rng.standard_normal((config.n_ref, config.d))
        normals = center + config.spread * rng.standard_normal((config.n_norm, config.d))
        directions = rng.standard_normal((config.n_anom, config.d))
        norms = np.linalg.norm(directions, axis=1, keepdims=True)
        directions /= np.where(norms == 0.0, 1.0, norms)
        anomalies = (
            center
            + config.anomaly_offset * directions
            + config.spread * rng.standard_normal((config.n_anom, config.d))
        )
        references[machine] = ReferenceSet(machine, refs)
        recordings = [
            Recording(f"{machine}-n{j:04d}", machine, False, features=normals[j])
            for j in range(config.n_norm)
        ]
        recordings += [
            Recording(f"{machine}-a{j:04d}", machine, True, features=anomalies[j])
            for j in range(config.n_anom)
        ]
        test_sets[machine] = recordings
    return references, merge_test_sets(test_sets)


@dataclass(frozen=True)
class SweepPoint:
    """Metrics of one simulated evaluation at one separation value.

    Metric fields are None when undefined (single machine, chance-level
    known performance) or when the point failed; error then carries the
    cause.
    """

    separation: float
    repeat: int
    seed: int
    id_accuracy_normalized: float | None
    delta_norm: float | None
    a_known: float | None
    a_unknown: float | None
    misid_probability: float | None
    error: str | None = None


@dataclass
class SweepResult:
    """All sweep points plus the configuration that produced them."""

    base: SimConfig
    separations: tuple[float, ...]
    repeats: int
    points: list[SweepPoint]


def run_point(
    config: SimConfig,
    scorer: ScorerSpec = DEFAULT_SCORER,
    eval_config: EvalConfig = EvalConfig(),
    repeat: int = 0,
) -> SweepPoint:
    """Generate one dataset, score it, and condense the report to a point."""
    references, merged = generate(config)
    specs = {machine: (scorer, ref) for machine, ref in references.items()}
    matrix = build_score_matrix(specs, merged)
    report = full_report(matrix, merged, eval_config)
    return SweepPoint(
        separation=config.separation,
        repeat=repeat,
        seed=config.seed,
        id_accuracy_normalized=report.identification.accuracy().normalized,
        delta_norm=report.delta_norm,
        a_known=report.known.aggregate,
        a_unknown=report.unknown.aggregate,
        misid_probability=report.identification.misid_probability,
    )


def derive_seed(base_seed: int, separation_index: int, repeat: int) -> int:
    """Stable per-point seed; extending the sweep keeps existing points."""
    sequence = np.random.SeedSequence([base_seed, separation_index, repeat])
    return int(sequence.generate_state(1, np.uint64)[0])


def sweep(
    base: SimConfig,
    separations: Sequence[float] = DEFAULT_SEPARATIONS,
    repeats: int = DEFAULT_REPEATS,
    scorer: ScorerSpec = DEFAULT_SCORER,
    eval_config: EvalConfig = EvalConfig(),
) -> SweepResult:
    """Run repeats at every separation, tolerating per-point failures."""
    if not separations:
        raise SimError("sweep needs at least one separation value")
    if int(repeats) != repeats or repeats < 1:
        raise SimError(f"repeats must be a positive integer, got {repeats}")
    points: list[SweepPoint] = []
    for sep_index, separation in enumerate(separations):
        for repeat in range(repeats):
            seed = derive_seed(base.seed, sep_index, repeat)
            config = dataclasses.replace(base, separation=separation, seed=seed)
            try:
                points.append(run_point(config, scorer, eval_config, repeat))
            except Exception as exc:
                points.append(
                    SweepPoint(
                        separation=separation,
                        repeat=repeat,
                        seed=seed,
                        id_accuracy_normalized=None,
                        delta_norm=None,
                        a_known=None,
                        a_unknown=None,
                        misid_probability=None,
                        error=f"{type(exc).__name__}: {exc}",
                    )
                )
    return SweepResult(base, tuple(separations), repeats, points)
