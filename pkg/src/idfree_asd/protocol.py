"""Machine-wise ASD data model and the two evaluation paths.

Known-ID evaluation scores each test recording with its true machine's
scorer column; identity-free evaluation takes the minimum across all machine
columns and only uses the hidden true machine post hoc, to partition results
per machine and to grade the implicit identification.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .metrics import IdAccuracy, MetricPair, aggregate, auc, delta_norm, pauc

__all__ = [
    "ProtocolError",
    "SPLITS",
    "DOMAINS",
    "Recording",
    "ScoreMatrix",
    "MergedTestSet",
    "AggregatedScore",
    "MachineMetrics",
    "ModeResult",
    "IdentificationStats",
    "EvalConfig",
    "EvalReport",
    "merge_test_sets",
    "aggregate_score",
    "identify",
    "misid_probability",
    "evaluate_known",
    "evaluate_unknown",
    "full_report",
]

SPLITS = ("dev", "eval")
DOMAINS = ("source", "target")


class ProtocolError(ValueError):
    """Raised on malformed datasets, matrices, or mismatched inputs."""


@dataclass(frozen=True, eq=False)
class Recording:
    """One test recording: identity, label, split, and optional features.

    Training/reference material never appears as a Recording; reference
    vectors live in scorers.ReferenceSet and are normal by construction.
    """

    id: str
    true_machine: str
    is_anomaly: bool
    split: str = "dev"
    domain: str | None = None
    features: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ProtocolError(f"recording {self.id!r}: unknown split {self.split!r}")
        if self.domain is not None and self.domain not in DOMAINS:
            raise ProtocolError(f"recording {self.id!r}: unknown domain {self.domain!r}")


@dataclass
class ScoreMatrix:
    """Per-recording vectors of machine-specific anomaly scores.

    Column order in `machines` is the fixed machine ordering used for argmin
    tie-breaking; every row holds exactly one finite score per machine.
    """

    machines: list[str]
    rows: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        if not self.machines:
            raise ProtocolError("score matrix needs at least one machine")
        if len(set(self.machines)) != len(self.machines):
            raise ProtocolError("duplicate machine names in score matrix")
        k = len(self.machines)
        converted = {}
        for rec_id, row in self.rows.items():
            vec = np.asarray(row, dtype=float)
            if vec.shape != (k,):
                raise ProtocolError(
                    f"row {rec_id!r} has {vec.size} entries, expected {k}"
                )
            if not np.isfinite(vec).all():
                raise ProtocolError(f"row {rec_id!r} contains non-finite scores")
            converted[rec_id] = vec
        self.rows = converted

    @property
    def k(self) -> int:
        return len(self.machines)

    def column_index(self, machine: str) -> int:
        try:
            return self.machines.index(machine)
        except ValueError:
            raise ProtocolError(f"machine {machine!r} not in score matrix") from None

    def row(self, recording_id: str) -> np.ndarray:
        try:
            return self.rows[recording_id]
        except KeyError:
            raise ProtocolError(
                f"score matrix has no row for recording {recording_id!r}"
            ) from None


@dataclass
class MergedTestSet:
    """Test recordings of several machines pooled within one split.

    The per-machine grouping survives only as the hidden true_machine labels;
    scoring code consumes ids and features, evaluation code the labels.
    """

    recordings: list[Recording]

    def __post_init__(self) -> None:
        if not self.recordings:
            raise ProtocolError("merged test set is empty")
        splits = {r.split for r in self.recordings}
        if len(splits) > 1:
            raise ProtocolError(
                f"merged test set mixes splits {sorted(splits)}; merge per split"
            )

    @property
    def split(self) -> str:
        return self.recordings[0].split

    def machines(self) -> list[str]:
        return sorted({r.true_machine for r in self.recordings})

    def by_machine(self) -> dict[str, list[Recording]]:
        groups: dict[str, list[Recording]] = {}
        for rec in self.recordings:
            groups.setdefault(rec.true_machine, []).append(rec)
        return groups

    def true_labels(self) -> dict[str, str]:
        return {r.id: r.true_machine for r in self.recordings}


def merge_test_sets(per_machine_sets: Mapping[str, Sequence[Recording]]) -> MergedTestSet:
    """Pool per-machine test sets into one identity-free set.

    Keeps every recording and its labels; ordering is deterministic (sorted
    by recording id) so downstream runs are reproducible.
    """
    if not per_machine_sets:
        raise ProtocolError("no machines to merge")
    pooled: list[Recording] = []
    for machine, recordings in per_machine_sets.items():
        if not recordings:
            raise ProtocolError(f"machine {machine!r} has an empty test set")
        for rec in recordings:
            if rec.true_machine != machine:
                raise ProtocolError(
                    f"recording {rec.id!r} labeled {rec.true_machine!r} "
                    f"filed under machine {machine!r}"
                )
            pooled.append(rec)
    counts = Counter(r.id for r in pooled)
    duplicates = sorted(rec_id for rec_id, n in counts.items() if n > 1)
    if duplicates:
        raise ProtocolError(f"duplicate recording ids across machines: {duplicates}")
    pooled.sort(key=lambda r: r.id)
    return MergedTestSet(pooled)


@dataclass(frozen=True)
class AggregatedScore:
    """Minimum of one score row with the selected machine index.

    `tie` flags rows where several machines attain the minimum; the lowest
    index wins deterministically.
    """

    score: float
    index: int
    tie: bool


def aggregate_score(row: Sequence[float]) -> AggregatedScore:
    """Collapse one machine-score row to its minimum and argmin machine."""
    vec = np.asarray(row, dtype=float)
    if vec.ndim != 1 or vec.size == 0:
        raise ProtocolError("score row must be a nonempty vector")
    if not np.isfinite(vec).all():
        raise ProtocolError("score row contains non-finite entries")
    index = int(np.argmin(vec))
    minimum = float(vec[index])
    tie = int((vec == minimum).sum()) > 1
    return AggregatedScore(minimum, index, tie)


def identify(matrix: ScoreMatrix, merged: MergedTestSet) -> dict[str, str]:
    """Implicitly identify each recording as its argmin machine."""
    assignments: dict[str, str] = {}
    for rec in merged.recordings:
        best = aggregate_score(matrix.row(rec.id))
        assignments[rec.id] = matrix.machines[best.index]
    return assignments


def misid_probability(identified: Mapping[str, str], truth: Mapping[str, str]) -> float:
    """Empirical fraction of recordings assigned to the wrong machine."""
    if set(identified) != set(truth):
        only_identified = sorted(set(identified) - set(truth))
        only_truth = sorted(set(truth) - set(identified))
        raise ProtocolError(
            f"identification/truth coverage mismatch: "
            f"only identified {only_identified}, only truth {only_truth}"
        )
    if not truth:
        raise ProtocolError("empty identification map")
    wrong = sum(1 for rec_id, machine in identified.items() if machine != truth[rec_id])
    return wrong / len(truth)


@dataclass(frozen=True)
class MachineMetrics:
    """Detection metrics for one machine's slice of the test set.

    auc/pauc are None when the slice is single-class; such machines are
    excluded from aggregation.
    """

    machine: str
    n_normal: int
    n_anomalous: int
    auc: float | None
    pauc: float | None

    @property
    def defined(self) -> bool:
        return self.auc is not None


@dataclass
class ModeResult:
    """Per-machine metrics plus their pooled aggregate for one mode."""

    per_machine: dict[str, MachineMetrics]
    aggregate: float
    average: str
    pauc_p: float
    excluded_machines: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class IdentificationStats:
    """Implicit identification quality of an identity-free evaluation."""

    k: int
    n_recordings: int
    n_correct: int
    tie_count: int

    @property
    def raw_accuracy(self) -> float:
        return self.n_correct / self.n_recordings

    @property
    def misid_probability(self) -> float:
        return (self.n_recordings - self.n_correct) / self.n_recordings

    def accuracy(self) -> IdAccuracy:
        return IdAccuracy.compute(self.raw_accuracy, self.k)


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation knobs echoed into every report."""

    pauc_p: float = 0.1
    average: str = "harmonic"
    seed: int | None = None


@dataclass
class EvalReport:
    """Complete known-vs-unknown evaluation of one merged test set."""

    machines: list[str]
    n_recordings: int
    known: ModeResult
    unknown: ModeResult
    identification: IdentificationStats
    delta_norm: float | None
    config: EvalConfig


def _slice_metrics(
    machine: str, scores: list[float], labels: list[bool], pauc_p: float
) -> MachineMetrics:
    n_anomalous = sum(labels)
    n_normal = len(labels) - n_anomalous
    if n_normal == 0 or n_anomalous == 0:
        warnings.warn(
            f"machine {machine!r} has single-class test labels; "
            f"its metrics are undefined and excluded from aggregation",
            stacklevel=3,
        )
        return MachineMetrics(machine, n_normal, n_anomalous, None, None)
    return MachineMetrics(
        machine,
        n_normal,
        n_anomalous,
        auc(scores, labels),
        pauc(scores, labels, pauc_p),
    )


def _mode_result(
    per_machine_scores: dict[str, tuple[list[float], list[bool]]],
    pauc_p: float,
    average: str,
) -> ModeResult:
    per_machine: dict[str, MachineMetrics] = {}
    for machine, (scores, labels) in per_machine_scores.items():
        per_machine[machine] = _slice_metrics(machine, scores, labels, pauc_p)
    defined = [m for m in per_machine.values() if m.defined]
    if not defined:
        raise ProtocolError("no machine has both normal and anomalous recordings")
    pooled = aggregate([MetricPair(m.auc, m.pauc, pauc_p) for m in defined], average)
    excluded = [m.machine for m in per_machine.values() if not m.defined]
    return ModeResult(per_machine, pooled, average, pauc_p, excluded)


def _check_coverage(matrix: ScoreMatrix, merged: MergedTestSet) -> None:
    missing = [m for m in merged.machines() if m not in matrix.machines]
    if missing:
        raise ProtocolError(f"score matrix is missing machine columns {missing}")


def evaluate_known(
    matrix: ScoreMatrix,
    merged: MergedTestSet,
    pauc_p: float = 0.1,
    average: str = "harmonic",
) -> ModeResult:
    """Standard protocol: score each recording with its true machine's column."""
    _check_coverage(matrix, merged)
    slices: dict[str, tuple[list[float], list[bool]]] = {}
    for machine, recordings in merged.by_machine().items():
        col = matrix.column_index(machine)
        scores = [float(matrix.row(r.id)[col]) for r in recordings]
        labels = [r.is_anomaly for r in recordings]
        slices[machine] = (scores, labels)
    return _mode_result(slices, pauc_p, average)


def evaluate_unknown(
    matrix: ScoreMatrix,
    merged: MergedTestSet,
    pauc_p: float = 0.1,
    average: str = "harmonic",
) -> tuple[ModeResult, IdentificationStats]:
    """Identity-free protocol: min-aggregate rows, partition post hoc.

    Per-machine partitioning uses the hidden true machine; the argmin machine
    enters only the identification statistics returned alongside.
    """
    _check_coverage(matrix, merged)
    slices: dict[str, tuple[list[float], list[bool]]] = {
        machine: ([], []) for machine in merged.by_machine()
    }
    n_correct = 0
    tie_count = 0
    for rec in merged.recordings:
        best = aggregate_score(matrix.row(rec.id))
        if matrix.machines[best.index] == rec.true_machine:
            n_correct += 1
        tie_count += best.tie
        scores, labels = slices[rec.true_machine]
        scores.append(best.score)
        labels.append(rec.is_anomaly)
    stats = IdentificationStats(matrix.k, len(merged.recordings), n_correct, tie_count)
    return _mode_result(slices, pauc_p, average), stats


def full_report(
    matrix: ScoreMatrix,
    merged: MergedTestSet,
    config: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Run both protocols and combine them into one report."""
    known = evaluate_known(matrix, merged, config.pauc_p, config.average)
    unknown, identification = evaluate_unknown(
        matrix, merged, config.pauc_p, config.average
    )
    return EvalReport(
        machines=list(matrix.machines),
        n_recordings=len(merged.recordings),
        known=known,
        unknown=unknown,
        identification=identification,
        delta_norm=delta_norm(known.aggregate, unknown.aggregate),
        config=config,
    )
