import hashlib
import json

import numpy as np
import pytest

from idfree_asd.io import (
    FORMAT_LINE,
    FORMAT_VERSION,
    CheckRow,
    FormatError,
    atomic_write_text,
    check_table_document,
    document_text,
    evaluation_document,
    file_digest,
    percent_text,
    read_check_table,
    read_features,
    read_labels,
    read_manifest,
    read_scores,
    scatter_svg_text,
    simulate_document,
    sweep_csv_text,
    sweep_document,
    write_features,
    write_labels,
    write_scores,
)
from idfree_asd.protocol import EvalConfig, Recording, full_report
from idfree_asd.scorers import ScorerSpec
from idfree_asd.simulate import SimConfig, SweepPoint, SweepResult, run_point, sweep

# ---------------------------------------------------------------------------
# score tables


def test_scores_roundtrip(tmp_path):
    path = tmp_path / "scores.csv"
    rows = {"r1": [0.1, 2.5], "r2": [1.0 / 3.0, -4.25]}
    write_scores(path, ["fan", "pump"], rows, orientation="higher")
    machines, table, orientation = read_scores(path)
    assert machines == ["fan", "pump"]
    assert orientation == "higher"
    for rec_id, values in rows.items():
        assert np.array_equal(table[rec_id], values)  # repr round-trips exactly


def test_scores_orientation_optional(tmp_path):
    path = tmp_path / "scores.csv"
    write_scores(path, ["fan"], {"r1": [1.0]})
    _, _, orientation = read_scores(path)
    assert orientation is None


def test_scores_rejects_unversioned_file(tmp_path):
    path = tmp_path / "scores.csv"
    path.write_text("recording_id,fan\nr1,1.0\n")
    with pytest.raises(FormatError, match="first line"):
        read_scores(path)


def test_scores_rejects_wrong_version(tmp_path):
    path = tmp_path / "scores.csv"
    path.write_text("# format: idfree-asd/2\nrecording_id,fan\nr1,1.0\n")
    with pytest.raises(FormatError, match="first line"):
        read_scores(path)


def test_scores_rejects_bad_orientation(tmp_path):
    path = tmp_path / "scores.csv"
    path.write_text(f"{FORMAT_LINE}\n# orientation: sideways\nrecording_id,fan\nr1,1.0\n")
    with pytest.raises(FormatError, match="orientation"):
        read_scores(path)
    with pytest.raises(FormatError, match="orientation"):
        write_scores(path, ["fan"], {"r1": [1.0]}, orientation="sideways")


@pytest.mark.parametrize(
    "body, message",
    [
        ("recording_id,fan\nr1,abc\n", "not a number"),
        ("recording_id,fan\nr1,inf\n", "not finite"),
        ("recording_id,fan\nr1,1.0,2.0\n", "expected 2 fields"),
        ("recording_id,fan\nr1,1.0\nr1,2.0\n", "duplicate"),
        ("recording_id,fan,fan\nr1,1.0,2.0\n", "unique"),
        ("id,fan\nr1,1.0\n", "header"),
        ("recording_id,fan\n", "no score rows"),
        ("", "first line"),
    ],
)
def test_scores_parse_errors(tmp_path, body, message):
    path = tmp_path / "scores.csv"
    path.write_text(f"{FORMAT_LINE}\n{body}" if body else "")
    with pytest.raises(FormatError, match=message):
        read_scores(path)


def test_scores_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "scores.csv"
    path.write_text(f"{FORMAT_LINE}\nrecording_id,fan\nr1,1.0\nr2,oops\n")
    with pytest.raises(FormatError, match=r"scores\.csv:4"):
        read_scores(path)


# ---------------------------------------------------------------------------
# labels


def test_labels_roundtrip_with_domain(tmp_path):
    path = tmp_path / "labels.csv"
    recordings = [
        Recording("r1", "fan", False, "dev", "source"),
        Recording("r2", "fan", True, "dev", "target"),
    ]
    write_labels(path, recordings)
    back = read_labels(path)
    assert [(r.id, r.true_machine, r.is_anomaly, r.split, r.domain) for r in back] == [
        ("r1", "fan", False, "dev", "source"),
        ("r2", "fan", True, "dev", "target"),
    ]


def test_labels_roundtrip_without_domain(tmp_path):
    path = tmp_path / "labels.csv"
    write_labels(path, [Recording("r1", "fan", True, "eval")])
    back = read_labels(path)
    assert back[0].domain is None and back[0].split == "eval"


def test_labels_accepts_wordy_booleans(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text(
        f"{FORMAT_LINE}\nrecording_id,true_machine,is_anomaly,split\n"
        f"r1,fan,true,dev\nr2,fan,false,dev\n"
    )
    back = read_labels(path)
    assert [r.is_anomaly for r in back] == [True, False]


def test_labels_rejects_bad_is_anomaly(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text(
        f"{FORMAT_LINE}\nrecording_id,true_machine,is_anomaly,split\nr1,fan,yes,dev\n"
    )
    with pytest.raises(FormatError, match=r"labels\.csv:3.*is_anomaly"):
        read_labels(path)


def test_labels_rejects_bad_split_with_line_number(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text(
        f"{FORMAT_LINE}\nrecording_id,true_machine,is_anomaly,split\nr1,fan,0,test\n"
    )
    with pytest.raises(FormatError, match=r"labels\.csv:3.*split"):
        read_labels(path)


def test_labels_warns_on_unknown_columns(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text(
        f"{FORMAT_LINE}\nrecording_id,true_machine,is_anomaly,split,domain,notes\n"
        f"r1,fan,0,dev,source,hello\n"
    )
    with pytest.warns(UserWarning, match="notes"):
        back = read_labels(path)
    assert back[0].domain == "source"


def test_labels_rejects_duplicates_and_empties(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text(
        f"{FORMAT_LINE}\nrecording_id,true_machine,is_anomaly,split\n"
        f"r1,fan,0,dev\nr1,fan,1,dev\n"
    )
    with pytest.raises(FormatError, match="duplicate"):
        read_labels(path)
    path.write_text(
        f"{FORMAT_LINE}\nrecording_id,true_machine,is_anomaly,split\n,fan,0,dev\n"
    )
    with pytest.raises(FormatError, match="empty"):
        read_labels(path)


# ---------------------------------------------------------------------------
# features


def test_features_roundtrip(tmp_path):
    path = tmp_path / "features.csv"
    ids = ["a", "b", "c"]
    vectors = np.array([[0.1, 0.2], [1.0 / 7.0, -3.5], [100.0, 0.0]])
    write_features(path, ids, vectors)
    back_ids, back_vectors = read_features(path)
    assert back_ids == ids
    assert np.array_equal(back_vectors, vectors)


def test_features_header_is_strict(tmp_path):
    path = tmp_path / "features.csv"
    path.write_text(f"{FORMAT_LINE}\nrecording_id,x0,x1\na,1.0,2.0\n")
    with pytest.raises(FormatError, match="header"):
        read_features(path)


def test_features_rejects_duplicates(tmp_path):
    path = tmp_path / "features.csv"
    path.write_text(f"{FORMAT_LINE}\nrecording_id,f_0\na,1.0\na,2.0\n")
    with pytest.raises(FormatError, match="duplicate"):
        read_features(path)


def test_write_features_validates_shape(tmp_path):
    with pytest.raises(FormatError):
        write_features(tmp_path / "f.csv", ["a", "b"], np.zeros((3, 2)))


# ---------------------------------------------------------------------------
# manifests


def good_manifest(tmp_path, **overrides):
    doc = {
        "format": FORMAT_VERSION,
        "scorer": {"kind": "nearest_reference", "k": 2,
                   "normalizer": {"kind": "none"}},
        "features": "features.csv",
        "machines": [
            {"name": "fan", "reference": "ref_fan.csv"},
            {"name": "pump", "reference": "refs/pump.csv"},
        ],
    }
    doc.update(overrides)
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


def test_manifest_parses_and_resolves_paths(tmp_path):
    manifest = read_manifest(good_manifest(tmp_path))
    assert manifest.scorer == ScorerSpec("nearest_reference", k=2)
    assert manifest.features == tmp_path / "features.csv"
    assert manifest.references["pump"] == tmp_path / "refs" / "pump.csv"


def test_manifest_rejects_bad_json(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("{not json")
    with pytest.raises(FormatError, match="JSON"):
        read_manifest(path)


@pytest.mark.parametrize(
    "overrides, message",
    [
        ({"format": "idfree-asd/9"}, "format"),
        ({"scorer": {}}, "kind"),
        ({"scorer": {"kind": "kmeans"}}, "unknown scorer"),
        ({"scorer": {"kind": "nearest_reference", "k": 0}}, "positive integer"),
        ({"features": ""}, "features"),
        ({"machines": []}, "machines"),
        ({"machines": [{"name": "fan"}]}, "reference"),
        (
            {"machines": [{"name": "fan", "reference": "a.csv"},
                          {"name": "fan", "reference": "b.csv"}]},
            "duplicate",
        ),
    ],
)
def test_manifest_validation(tmp_path, overrides, message):
    with pytest.raises(FormatError, match=message):
        read_manifest(good_manifest(tmp_path, **overrides))


# ---------------------------------------------------------------------------
# check tables


def test_check_table_parses_percent_and_undefined(tmp_path):
    path = tmp_path / "table.csv"
    path.write_text(
        f"{FORMAT_LINE}\nlabel,a_known,a_unknown,expected\n"
        f"row-1,0.7031,0.6966,3.20%\n"
        f"row-2,0.7,0.69,1.5\n"
        f"row-3,0.5,0.6,undefined\n"
    )
    rows = read_check_table(path)
    assert rows[0] == CheckRow("row-1", 0.7031, 0.6966, 3.20, 3)
    assert rows[1].expected_percent == 1.5
    assert rows[2].expected_percent is None


def test_check_table_errors(tmp_path):
    path = tmp_path / "table.csv"
    path.write_text(f"{FORMAT_LINE}\nlabel,known,unknown,expected\nr,0.7,0.6,1\n")
    with pytest.raises(FormatError, match="header"):
        read_check_table(path)
    path.write_text(
        f"{FORMAT_LINE}\nlabel,a_known,a_unknown,expected\nr,0.7,abc,1\n"
    )
    with pytest.raises(FormatError, match="a_unknown"):
        read_check_table(path)


# ---------------------------------------------------------------------------
# documents and digests


def test_percent_text():
    assert percent_text(0.0320) == "3.20"
    assert percent_text(1.0) == "100.00"
    assert percent_text(None) is None


def test_file_digest_matches_hashlib(tmp_path):
    path = tmp_path / "some" / "file.txt"
    path.parent.mkdir()
    path.write_bytes(b"hello")
    digest = file_digest(path, "scores")
    assert digest == {
        "role": "scores",
        "path": "file.txt",  # basename only, no absolute paths in reports
        "sha256": hashlib.sha256(b"hello").hexdigest(),
    }


def make_report():
    recordings = [
        Recording("n1", "fan", False), Recording("n2", "fan", False),
        Recording("a1", "fan", True), Recording("a2", "fan", True),
    ]
    from idfree_asd.protocol import MergedTestSet, ScoreMatrix

    matrix = ScoreMatrix(
        ["fan"], {"n1": [0.0], "n2": [0.5], "a1": [2.0], "a2": [3.0]}
    )
    return full_report(matrix, MergedTestSet(recordings))


def test_evaluation_document_shape():
    report = make_report()
    doc = evaluation_document(
        {"dev": report}, [{"role": "scores", "path": "s.csv", "sha256": "00"}],
        EvalConfig(), higher_is_anomalous=True,
    )
    assert doc["format"] == FORMAT_VERSION
    assert doc["kind"] == "evaluation"
    assert doc["config"]["higher_is_anomalous"] is True
    dev = doc["splits"]["dev"]
    assert dev["known"]["aggregate"] == 1.0
    assert dev["identification"]["raw_accuracy_percent"] == "100.00"
    assert dev["delta_norm"]["fraction"] == 0.0
    text = document_text(doc)
    assert json.loads(text) == doc
    assert text.endswith("\n")


def test_document_text_is_stable_and_rejects_nan():
    doc = {"a": 1.5, "b": [1, 2]}
    assert document_text(doc) == document_text(doc)
    with pytest.raises(ValueError):
        document_text({"x": float("nan")})


def test_simulate_and_sweep_documents():
    config = SimConfig(k=2, d=3, n_ref=4, n_norm=4, n_anom=2, seed=8)
    point = run_point(config)
    doc = simulate_document(point, config, ScorerSpec(), EvalConfig())
    assert doc["kind"] == "simulate"
    assert doc["config"]["seed"] == 8
    assert doc["point"]["separation"] == config.separation

    result = sweep(config, separations=[4.0, 8.0], repeats=1)
    sweep_doc = sweep_document(result, ScorerSpec(), EvalConfig())
    assert sweep_doc["kind"] == "sweep"
    assert sweep_doc["separations"] == [4.0, 8.0]
    assert len(sweep_doc["points"]) == 2
    json.loads(document_text(sweep_doc))


def test_check_table_document_all_pass_flag():
    rows = [{"label": "a", "pass": True}, {"label": "b", "pass": False}]
    doc = check_table_document(rows, [], 0.005)
    assert doc["all_pass"] is False
    assert doc["tolerance_percent"] == 0.005


# ---------------------------------------------------------------------------
# sweep CSV


def test_sweep_csv_cells():
    points = [
        SweepPoint(4.5, 0, 7, 0.5, 0.125, 0.9, 0.85, 0.1),
        SweepPoint(5.0, 1, 8, None, None, None, None, None, error="SimError: x, y"),
    ]
    result = SweepResult(SimConfig(), (4.5, 5.0), 2, points)
    text = sweep_csv_text(result)
    lines = text.splitlines()
    assert lines[0] == FORMAT_LINE
    assert lines[1].startswith("separation,repeat,seed,")
    first = lines[2].split(",")
    assert first[0] == "4.5" and first[3] == "0.5" and first[4] == "0.125"
    # None becomes an empty cell; the error message is quoted (embedded comma)
    assert ",,,,," in lines[3]
    assert '"SimError: x, y"' in lines[3]
    # repr floats round-trip exactly
    assert float(first[6]) == 0.85


def test_sweep_csv_values_are_plain_reprs():
    result = sweep(SimConfig(k=2, d=3, n_ref=6, n_norm=8, n_anom=4, seed=3),
                   separations=[5.0], repeats=1)
    text = sweep_csv_text(result)
    assert "np.float64" not in text
    assert "None" not in text


# ---------------------------------------------------------------------------
# SVG scatter


def test_scatter_svg_contains_points():
    text = scatter_svg_text([(0.1, 0.2), (0.5, 0.4), (0.9, 0.0)])
    assert text.startswith("<svg ")
    assert text.count("<circle") == 3
    assert "identification accuracy" in text
    assert scatter_svg_text([(0.1, 0.2), (0.5, 0.4), (0.9, 0.0)]) == text


def test_scatter_svg_handles_degenerate_ranges():
    text = scatter_svg_text([(0.5, 0.5)])
    assert text.count("<circle") == 1
    empty = scatter_svg_text([])
    assert empty.count("<circle") == 0 and "</svg>" in empty


# ---------------------------------------------------------------------------
# atomic writes


def test_atomic_write_replaces_content(tmp_path):
    path = tmp_path / "out.json"
    path.write_text("old")
    atomic_write_text(path, "new contents")
    assert path.read_text() == "new contents"
    leftovers = [p for p in tmp_path.iterdir() if p.name != "out.json"]
    assert leftovers == []


def test_atomic_write_cleans_up_on_failure(tmp_path):
    target = tmp_path / "dir-in-the-way"
    target.mkdir()
    with pytest.raises(OSError):
        atomic_write_text(target, "text")
    assert [p.name for p in tmp_path.iterdir()] == ["dir-in-the-way"]
