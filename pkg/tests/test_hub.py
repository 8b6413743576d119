import hashlib
import itertools
import json
import os
import subprocess
import sys
import textwrap
import threading
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bikit.errors import BikitError, IntegrityError, NotFound, PredictionFileError, SubmissionError
from bikit.hub import EventLedger, Hub, Submission, SubmissionMeta, open_hub, rank_submissions
from bikit.metrics import LabelMatrix, MetricsReport, ScoreMatrix, full_report
from bikit.predictions import format_predictions, load_predictions

from conftest import PREDICTIONS

CLASSES = ("a", "b", "c")
IDS = tuple(f"img{i:02d}" for i in range(12))


def truth():
    rng = np.random.default_rng(5)
    return LabelMatrix(IDS, CLASSES, rng.integers(0, 2, (len(IDS), len(CLASSES))))


def payload(seed=0, ids=IDS, dataset="toy"):
    rng = np.random.default_rng(seed)
    return format_predictions(ScoreMatrix(ids, CLASSES, rng.random((len(ids), len(CLASSES))).round(3)), dataset)


class Clock:
    def __init__(self):
        self.n = itertools.count()

    def __call__(self):
        return f"2026-01-01T00:00:{next(self.n):02d}.000000Z"


@pytest.fixture
def hub(tmp_path):
    h = Hub(tmp_path / "hub", clock=Clock())
    h.register_dataset("toy", truth())
    return h


META = SubmissionMeta("net", "resnet50", "HO", "me")


def test_submit_scores_like_library(hub):
    sub, created = hub.submit("toy", payload(1), META)
    assert created and sub.dataset == "toy"
    from bikit.predictions import parse_predictions
    _, scores = parse_predictions(payload(1))
    assert sub.report.to_json() == full_report(scores, truth()).to_json()


def test_row_order_does_not_change_identity(hub):
    text = payload(2)
    head, *rows = text.splitlines(keepends=True)
    shuffled = head + "".join(reversed(rows))
    a, _ = hub.submit("toy", text, META)
    b, created = hub.submit("toy", shuffled, SubmissionMeta("other-name"))
    assert not created and b == a


def test_idempotent_resubmission(hub):
    results = [hub.submit("toy", payload(3), META) for _ in range(5)]
    assert [c for _, c in results] == [True, False, False, False, False]
    assert len(hub.submissions("toy")) == 1
    assert len(hub.ledger.events) == 1


def test_concurrent_identical_submissions(hub):
    out = []
    threads = [threading.Thread(target=lambda: out.append(hub.submit("toy", payload(4), META))) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sum(c for _, c in out) == 1 and len(hub.submissions()) == 1


def test_submission_id_is_digest_of_canonical_payload(hub):
    sub, _ = hub.submit("toy", payload(5), META)
    stored = hub.blobs.read(sub.submission_id)
    assert hashlib.sha256(stored).hexdigest() == sub.submission_id
    assert hub.submission_scores(sub.submission_id).row_ids == tuple(sorted(IDS))


@pytest.mark.parametrize("mutate, code", [
    (lambda t: t.replace("img03", "imgXX"), "missing-id"),
    (lambda t: t + "img99,0.1,0.2,0.3\n", "unknown-id"),
    (lambda t: t.replace('"toy"', '"other"'), "dataset-mismatch"),
    (lambda t: t.replace('"a", "b", "c"', '"b", "a", "c"'), "class-mismatch"),
    (lambda t: t.rstrip("\n") + ",0.5\n", "malformed-row"),
])
def test_rejections(hub, mutate, code):
    text = payload(6)
    assert json.dumps(list(CLASSES)) in text
    with pytest.raises(BikitError) as e:
        hub.submit("toy", mutate(text), META)
    assert e.value.code == code
    assert hub.submissions() == []


def test_missing_id_details_are_capped(hub):
    with pytest.raises(SubmissionError) as e:
        hub.submit("toy", payload(7, ids=IDS[:1]), META)
    assert e.value.details == sorted(IDS[1:])[:10]


def test_unknown_dataset_and_metadata(hub):
    with pytest.raises(NotFound) as e:
        hub.submit("nope", payload(), META)
    assert e.value.code == "unknown-dataset"
    with pytest.raises(SubmissionError):
        SubmissionMeta("")
    with pytest.raises(SubmissionError):
        SubmissionMeta("x", strategy="magic")


def test_out_of_range_score(hub):
    text = payload(8).replace("img00,", "img00,1.5,0,0\nimgzz,", 1)
    with pytest.raises(PredictionFileError) as e:
        hub.submit("toy", text, META)
    assert e.value.code == "out-of-range-score"


def test_leaderboard_orders_by_emr_then_time(hub):
    subs = [hub.submit("toy", payload(s), SubmissionMeta(f"m{s}"))[0] for s in range(10)]
    view = hub.leaderboard("toy")
    assert [r.rank for r in view.rows] == list(range(1, 11))
    keys = [(-r.emr, r.timestamp) for r in view.rows]
    assert keys == sorted(keys)
    assert {r.submission_id for r in view.rows} == {s.submission_id for s in subs}


def test_empty_leaderboard(hub):
    view = hub.leaderboard("toy")
    assert view.rows == [] and view.classes == list(CLASSES)


def fake_sub(i, emr, ts):
    rep = full_report(ScoreMatrix(("x",), ("a",), [[0.9]]), LabelMatrix(("x",), ("a",), [[1]]))
    rep = MetricsReport.from_dict({**rep.to_dict(), "emr": emr})
    return Submission(f"{i:064x}", "toy", SubmissionMeta(f"m{i}"), ts, rep)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0.1, 0.5, 0.9]), st.integers(0, 3)), min_size=0, max_size=15))
def test_ranking_is_a_total_order(items):
    subs = [fake_sub(i, emr, f"t{t}") for i, (emr, t) in enumerate(items)]
    rows = rank_submissions(subs)
    again = rank_submissions(list(reversed(subs)))
    assert [r.submission_id for r in rows] == [r.submission_id for r in again]
    for a, b in zip(rows, rows[1:]):
        assert (a.emr > b.emr) or (a.emr == b.emr and (a.timestamp, a.submission_id) < (b.timestamp, b.submission_id))


def test_recall_never_breaks_ties():
    a, b = fake_sub(1, 0.5, "t1"), fake_sub(2, 0.5, "t0")
    b = Submission(b.submission_id, b.dataset, b.metadata, b.timestamp,
                   MetricsReport.from_dict({**b.report.to_dict(), "recall_per_class": {"a": 0.0}}))
    assert [r.submission_id for r in rank_submissions([a, b])] == [b.submission_id, a.submission_id]


def test_state_survives_reopen(hub, tmp_path):
    sub, _ = hub.submit("toy", payload(9), META)
    model = hub.register_model(b"weights", "resnet50", "w", sub.submission_id)
    again = Hub(tmp_path / "hub")
    again.register_dataset("toy", truth())
    assert again.get_submission(sub.submission_id) == sub
    assert again.get_model(model.model_id) == model
    assert again.submit("toy", payload(9), META) == (sub, False)


# -- model registry ------------------------------------------------------------------------


def test_model_round_trip(hub):
    blob = os.urandom(3000)
    m = hub.register_model(blob, "efficientnet-v1-b0", "eff")
    assert m.weights_sha256 == hashlib.sha256(blob).hexdigest() and m.byte_size == 3000
    assert hub.fetch_model(m.model_id) == blob
    assert hub.model_path(m.model_id).read_bytes() == blob
    assert hub.models() == [m]


def test_model_errors(hub):
    with pytest.raises(NotFound) as e:
        hub.get_model("missing")
    assert e.value.code == "unknown-model"
    with pytest.raises(NotFound):
        hub.register_model(b"x", "rn", submission_id="0" * 64)


def test_corrupt_blob_detected(hub):
    m = hub.register_model(b"good weights", "rn")
    path = hub.blobs.path(m.weights_sha256)
    path.write_bytes(b"bad weights!")
    with pytest.raises(IntegrityError):
        hub.fetch_model(m.model_id)
    with pytest.raises(IntegrityError):
        hub.model_path(m.model_id)


# -- crash safety -------------------------------------------------------------------------------

CRASHER = textwrap.dedent("""
    import os, sys
    from bikit.hub import EventLedger
    led = EventLedger(sys.argv[1])
    led.append({"n": 1})
    real = os.replace
    def dying_replace(src, dst):
        if sys.argv[2] == "before":
            os._exit(9)
        real(src, dst)
        os._exit(9)
    os.replace = dying_replace
    led.append({"n": 2, "pad": "x" * 100000})
""")


@pytest.mark.parametrize("when, expected", [("before", [{"n": 1}]), ("after", [{"n": 1}, {"n": 2}])])
def test_kill_during_append_is_all_or_nothing(tmp_path, when, expected):
    path = tmp_path / "ledger.jsonl"
    proc = subprocess.run([sys.executable, "-c", CRASHER, str(path), when], capture_output=True)
    assert proc.returncode == 9
    events = [{k: v for k, v in e.items() if k != "pad"} for e in EventLedger(path).events]
    assert events == expected


def test_torn_last_line_ignored(tmp_path):
    path = tmp_path / "ledger.jsonl"
    led = EventLedger(path)
    led.append({"n": 1})
    with open(path, "ab") as fh:
        fh.write(b'{"n": 2, "half')
    again = EventLedger(path)
    assert again.events == ({"n": 1},)
    again.append({"n": 3})
    assert EventLedger(path).events == ({"n": 1}, {"n": 3})


def test_corrupt_middle_line_is_an_error(tmp_path):
    path = tmp_path / "ledger.jsonl"
    path.write_bytes(b'{"n": 1}\nnot json\n{"n": 3}\n')
    with pytest.raises(IntegrityError):
        EventLedger(path)


# -- fixture data -------------------------------------------------------------------------------


def test_open_hub_registers_fixture_datasets(data_root):
    hub = open_hub(data_root)
    assert hub.datasets == ["codebrim-balanced", "mcds"]
    assert hub.dataset_info("mcds")["n_test"] == 270
    assert hub.dataset_info("codebrim-balanced")["n_test"] == 632


def test_fixture_submission_report(data_root):
    hub = open_hub(data_root)
    path = PREDICTIONS / "mcds-ho-rn.pred"
    sub, _ = hub.submit("mcds", path.read_text(), META)
    _, scores = load_predictions(path)
    assert sub.report.to_json() == full_report(scores, hub._get_truth("mcds")).to_json()
