"""Command-line interface: evaluate, simulate, sweep, check-table.

Exit codes: 0 success, 1 usage error (bad flags or unreadable paths),
2 data error (malformed inputs, failed checks), 3 unexpected internal
failure. Errors print one JSON object to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import io as formats
from .metrics import AVERAGING_MODES, MetricError, delta_norm
from .protocol import (
    EvalConfig,
    MergedTestSet,
    ProtocolError,
    ScoreMatrix,
    full_report,
    merge_test_sets,
)
from .scorers import ReferenceSet, ScorerError, build_score_matrix
from .simulate import (
    DEFAULT_REPEATS,
    DEFAULT_SCORER,
    DEFAULT_SEPARATIONS,
    SimConfig,
    SimError,
    SweepResult,
    run_point,
    sweep,
)

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

# one-unit tolerance in the last printed digit of a two-decimal percentage
CHECK_TOLERANCE_PERCENT = 0.005

_DATA_ERRORS = (
    formats.FormatError,
    MetricError,
    ProtocolError,
    ScorerError,
    SimError,
)


class UsageError(Exception):
    """Bad flag combinations or values; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise UsageError(message)


def _emit(doc: dict, out: str | None) -> None:
    text = formats.document_text(doc)
    if out is None:
        sys.stdout.write(text)
    else:
        formats.atomic_write_text(out, text)


def _resolve_orientation(flag: str | None, header: str | None) -> bool:
    """True when higher scores mean more anomalous; the flag wins."""
    if flag is not None:
        return flag == "true"
    if header is not None:
        return header == "higher"
    return True


def _check_pauc_p(p: float) -> None:
    if not 0.0 < p <= 1.0:
        raise UsageError(f"--pauc-p must lie in (0, 1], got {p}")


def _group_by_split(recordings) -> dict[str, list]:
    splits: dict[str, list] = {}
    for rec in recordings:
        splits.setdefault(rec.split, []).append(rec)
    return splits


def _merge_split(split_recordings) -> MergedTestSet:
    per_machine: dict[str, list] = {}
    for rec in split_recordings:
        per_machine.setdefault(rec.true_machine, []).append(rec)
    return merge_test_sets(per_machine)


def _cmd_evaluate(args) -> int:
    if (args.scores is None) == (args.manifest is None):
        raise UsageError("provide exactly one of --scores and --manifest")
    _check_pauc_p(args.pauc_p)
    recordings = formats.read_labels(args.labels)
    label_ids = {rec.id for rec in recordings}
    config = EvalConfig(pauc_p=args.pauc_p, average=args.avg)

    if args.scores is not None:
        machines, rows, header_orientation = formats.read_scores(args.scores)
        higher = _resolve_orientation(args.higher_is_anomalous, header_orientation)
        if not higher:
            rows = {rec_id: -vec for rec_id, vec in rows.items()}
        unlabeled = sorted(set(rows) - label_ids)
        unscored = sorted(label_ids - set(rows))
        if unlabeled or unscored:
            raise ProtocolError(
                f"scores/labels cross-reference mismatch: score rows without "
                f"labels {unlabeled}, labeled recordings without scores {unscored}"
            )
        inputs = [
            formats.file_digest(args.scores, "scores"),
            formats.file_digest(args.labels, "labels"),
        ]
        specs = None
    else:
        if args.higher_is_anomalous is not None:
            raise UsageError("--higher-is-anomalous applies to --scores files only")
        higher = True
        manifest = formats.read_manifest(args.manifest)
        ids, vectors = formats.read_features(manifest.features)
        by_id = dict(zip(ids, vectors))
        missing = sorted(label_ids - set(ids))
        unlabeled = sorted(set(ids) - label_ids)
        if missing or unlabeled:
            raise ProtocolError(
                f"features/labels cross-reference mismatch: labeled recordings "
                f"without features {missing}, feature rows without labels {unlabeled}"
            )
        recordings = [
            dataclasses.replace(rec, features=by_id[rec.id]) for rec in recordings
        ]
        specs = {}
        for machine in sorted(manifest.references):
            _, ref_vectors = formats.read_features(manifest.references[machine])
            specs[machine] = (manifest.scorer, ReferenceSet(machine, ref_vectors))
        inputs = [
            formats.file_digest(args.manifest, "manifest"),
            formats.file_digest(manifest.features, "features"),
            formats.file_digest(args.labels, "labels"),
        ] + [
            formats.file_digest(manifest.references[m], f"reference:{m}")
            for m in sorted(manifest.references)
        ]

    reports = {}
    for split, split_recordings in sorted(_group_by_split(recordings).items()):
        merged = _merge_split(split_recordings)
        if specs is None:
            matrix = ScoreMatrix(
                list(machines), {rec.id: rows[rec.id] for rec in split_recordings}
            )
        else:
            matrix = build_score_matrix(specs, merged)
        reports[split] = full_report(matrix, merged, config)
    _emit(formats.evaluation_document(reports, inputs, config, higher), args.out)
    return EXIT_OK


def _cmd_check_table(args) -> int:
    rows = formats.read_check_table(args.table)
    doc_rows = []
    for row in rows:
        computed = delta_norm(row.a_known, row.a_unknown)
        if computed is None:
            ok = row.expected_percent is None
        elif row.expected_percent is None:
            ok = False
        else:
            ok = abs(100.0 * computed - row.expected_percent) <= (
                CHECK_TOLERANCE_PERCENT + 1e-12
            )
        doc_rows.append(
            {
                "label": row.label,
                "a_known": row.a_known,
                "a_unknown": row.a_unknown,
                "expected_percent": (
                    "undefined"
                    if row.expected_percent is None
                    else f"{row.expected_percent:.2f}"
                ),
                "computed_fraction": computed,
                "computed_percent": (
                    "undefined" if computed is None else formats.percent_text(computed)
                ),
                "pass": ok,
            }
        )
    doc = formats.check_table_document(
        doc_rows, [formats.file_digest(args.table, "table")], CHECK_TOLERANCE_PERCENT
    )
    _emit(doc, args.out)
    return EXIT_OK if doc["all_pass"] else EXIT_DATA


def _sim_config(args, separation: float) -> SimConfig:
    return SimConfig(
        k=args.k,
        d=args.d,
        n_ref=args.n_ref,
        n_norm=args.n_norm,
        n_anom=args.n_anom,
        separation=separation,
        spread=args.spread,
        anomaly_offset=args.anomaly_offset,
        seed=args.seed,
    )


def _scatter_paths(out: str) -> Path:
    csv_path = Path(out).with_suffix(".csv")
    if csv_path == Path(out):
        raise UsageError("--out must not end in .csv; the scatter table takes that name")
    return csv_path


def _write_svg(path: str, points) -> None:
    pairs = [
        (p.id_accuracy_normalized, p.delta_norm)
        for p in points
        if p.id_accuracy_normalized is not None and p.delta_norm is not None
    ]
    formats.atomic_write_text(path, formats.scatter_svg_text(pairs))


def _cmd_simulate(args) -> int:
    _check_pauc_p(args.pauc_p)
    csv_path = _scatter_paths(args.out)
    config = _sim_config(args, args.separation)
    eval_config = EvalConfig(pauc_p=args.pauc_p, average=args.avg)
    point = run_point(config, DEFAULT_SCORER, eval_config)
    doc = formats.simulate_document(point, config, DEFAULT_SCORER, eval_config)
    formats.atomic_write_text(args.out, formats.document_text(doc))
    result = SweepResult(config, (config.separation,), 1, [point])
    formats.atomic_write_text(csv_path, formats.sweep_csv_text(result))
    if args.svg:
        _write_svg(args.svg, [point])
    return EXIT_OK


def _cmd_sweep(args) -> int:
    _check_pauc_p(args.pauc_p)
    csv_path = _scatter_paths(args.out)
    base = _sim_config(args, 0.0)
    eval_config = EvalConfig(pauc_p=args.pauc_p, average=args.avg)
    result = sweep(base, args.separations, args.repeats, DEFAULT_SCORER, eval_config)
    doc = formats.sweep_document(result, DEFAULT_SCORER, eval_config)
    formats.atomic_write_text(args.out, formats.document_text(doc))
    formats.atomic_write_text(csv_path, formats.sweep_csv_text(result))
    if args.svg:
        _write_svg(args.svg, result.points)
    return EXIT_OK


def _separation_list(text: str) -> tuple[float, ...]:
    values = tuple(float(part) for part in text.split(",") if part.strip())
    if not values:
        raise ValueError("empty separation list")
    return values


def _add_eval_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--pauc-p", type=float, default=0.1,
                        help="FPR cap for partial AUC (default 0.1)")
    parser.add_argument("--avg", choices=AVERAGING_MODES, default="harmonic",
                        help="aggregation over per-machine AUC and pAUC values")


def _add_sim_flags(parser: argparse.ArgumentParser) -> None:
    defaults = SimConfig()
    parser.add_argument("--k", type=int, default=defaults.k, help="machine count")
    parser.add_argument("--d", type=int, default=defaults.d, help="feature dimension")
    parser.add_argument("--n-ref", type=int, default=defaults.n_ref,
                        help="reference vectors per machine")
    parser.add_argument("--n-norm", type=int, default=defaults.n_norm,
                        help="normal test recordings per machine")
    parser.add_argument("--n-anom", type=int, default=defaults.n_anom,
                        help="anomalous test recordings per machine")
    parser.add_argument("--spread", type=float, default=defaults.spread,
                        help="within-machine standard deviation")
    parser.add_argument("--anomaly-offset", type=float, default=defaults.anomaly_offset,
                        help="radial shift of anomalies from their machine center")
    parser.add_argument("--seed", type=int, default=defaults.seed,
                        help="unsigned 64-bit generator seed")
    parser.add_argument("--svg", metavar="PATH",
                        help="also write a static scatter SVG")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="idfree-asd",
        description="Evaluate anomalous sound detection without machine identity.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    evaluate = sub.add_parser(
        "evaluate", help="score a labeled test set with and without identity"
    )
    evaluate.add_argument("--scores", metavar="CSV",
                          help="wide per-machine score table")
    evaluate.add_argument("--manifest", metavar="JSON",
                          help="scorer manifest for feature-driven runs")
    evaluate.add_argument("--labels", required=True, metavar="CSV",
                          help="recording labels")
    evaluate.add_argument("--higher-is-anomalous", choices=("true", "false"),
                          help="override the score file's orientation header")
    _add_eval_flags(evaluate)
    evaluate.add_argument("--out", metavar="JSON",
                          help="report path (default: stdout)")
    evaluate.set_defaults(handler=_cmd_evaluate)

    check = sub.add_parser(
        "check-table", help="recompute expected degradation percentages"
    )
    check.add_argument("--table", required=True, metavar="CSV",
                       help="label,a_known,a_unknown,expected rows")
    check.add_argument("--out", metavar="JSON",
                       help="report path (default: stdout)")
    check.set_defaults(handler=_cmd_check_table)

    simulate = sub.add_parser(
        "simulate", help="run one synthetic evaluation point"
    )
    simulate.add_argument("--separation", type=float,
                          default=SimConfig().separation,
                          help="distance between machine cluster centers")
    _add_sim_flags(simulate)
    _add_eval_flags(simulate)
    simulate.add_argument("--out", required=True, metavar="JSON",
                          help="report path; scatter CSV lands next to it")
    simulate.set_defaults(handler=_cmd_simulate)

    sweep_parser = sub.add_parser(
        "sweep", help="sweep separations and tabulate the degradation scatter"
    )
    sweep_parser.add_argument("--separations", type=_separation_list,
                              default=DEFAULT_SEPARATIONS, metavar="S1,S2,...",
                              help="comma-separated separation values")
    sweep_parser.add_argument("--repeats", type=int, default=DEFAULT_REPEATS,
                              help="independent repeats per separation")
    _add_sim_flags(sweep_parser)
    _add_eval_flags(sweep_parser)
    sweep_parser.add_argument("--out", required=True, metavar="JSON",
                              help="report path; scatter CSV lands next to it")
    sweep_parser.set_defaults(handler=_cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except OSError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except _DATA_ERRORS as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except Exception as exc:
        return _fail(EXIT_INTERNAL, "internal", f"{type(exc).__name__}: {exc}")


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
