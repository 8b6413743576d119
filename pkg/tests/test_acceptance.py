"""Acceptance suite: one check per numbered criterion, each at its stated tolerance.

A PASS/FAIL line per criterion is printed in the terminal summary (see
conftest.py). Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import functools
import hashlib
import itertools
import math
import os
import subprocess
import sys
import textwrap
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

import oracles
from bikit.api import create_app
from bikit.catalog import find_manifest, load_dataset_index
from bikit.cli import main
from bikit.errors import BikitError
from bikit.hpo import Budget, SyntheticObjective, load_space, run_search, space_cardinality
from bikit.hpo.space import grid_distance
from bikit.hub import EventLedger, Hub, SubmissionMeta, open_hub, rank_submissions
from bikit.metrics import LabelMatrix, ScoreMatrix, auroc, binarize, exact_match_ratio, full_report, recall_by_class
from bikit.pipeline import LrSchedule, PreprocessSpec, lr_at, parse_plan, preprocess, serialize_plan
from bikit.pipeline.plan import check_plan
from bikit.pipeline.preprocess import IMAGENET_MEAN, IMAGENET_STD
from bikit.pipeline.presets import HO_BEST, LR_BEST, preset_plan
from bikit.predictions import format_predictions, load_predictions
from bikit.splits import load_split

from conftest import PREDICTIONS

# criterion number -> list of (check name, passed, message)
RESULTS: dict[int, list[tuple[str, bool, str]]] = {}

TITLES = {
    1: "metrics match brute-force oracle (500 instances, 1e-12, <10 s)",
    2: "EMR <= min per-class accuracy (1000 instances)",
    3: "best fixture submissions score 0.7373 / 0.5444 and rank first",
    4: "split make reproduces sizes, +-2 stratification, byte-identical rerun (<5 s)",
    5: "scheduler warmup end, cosine endpoint and midpoint (100 schedules)",
    6: "30-trial search near grid optimum, >=30% pruned before epoch 27, <3000 epochs (<60 s)",
    7: "space cardinalities 4200 / 6300",
    8: "preprocess determinism (50 images) and gray closed form (1e-6)",
    9: "hub durability, idempotency and error codes",
    10: "train plan invariants and round-trip",
}


def criterion(number: int, check: str = ""):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException as exc:
                msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
                RESULTS.setdefault(number, []).append((check or fn.__name__, False, msg[:160]))
                raise
            RESULTS.setdefault(number, []).append((check or fn.__name__, True, ""))
        return wrapper
    return deco


def summary_lines() -> list[str]:
    lines = []
    for n in sorted(RESULTS):
        checks = RESULTS[n]
        ok = all(passed for _, passed, _ in checks)
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {TITLES[n]}"
        failed = [f"{name}: {msg}" for name, passed, msg in checks if not passed]
        if failed:
            line += "  [" + "; ".join(failed) + "]"
        lines.append(line)
    return lines


def random_instance(rng, n_max=50, c_max=8):
    n = int(rng.integers(1, n_max + 1))
    c = int(rng.integers(1, c_max + 1))
    ids = tuple(f"r{i}" for i in range(n))
    classes = tuple(f"c{j}" for j in range(c))
    truth = rng.integers(0, 2, (n, c))
    # coarse grid so tied scores and exact-threshold scores are common
    scores = rng.integers(0, 11, (n, c)) / 10
    return LabelMatrix(ids, classes, truth), ScoreMatrix(ids, classes, scores)


# -- 1 --------------------------------------------------------------------------------------------


@criterion(1)
def test_criterion_01_metrics_oracle():
    rng = np.random.default_rng(20260101)
    start = time.perf_counter()
    for _ in range(500):
        truth, scores = random_instance(rng)
        t = truth.data.tolist()
        s = scores.data.tolist()
        p = oracles.threshold(s, 0.5)
        pred = binarize(scores, 0.5)
        assert abs(exact_match_ratio(pred, truth) - oracles.emr(p, t)) <= 1e-12
        rec = recall_by_class(pred, truth)
        au = auroc(scores, truth).per_class
        for j, c in enumerate(truth.classes):
            want_r = oracles.recall(p, t, j)
            assert (rec[c] is None) == (want_r is None) and (want_r is None or abs(rec[c] - want_r) <= 1e-12)
            want_a = oracles.auroc_pairs([row[j] for row in s], [row[j] for row in t])
            assert (au[c] is None) == (want_a is None) and (want_a is None or abs(au[c] - want_a) <= 1e-12)
    elapsed = time.perf_counter() - start
    assert elapsed < 10, f"took {elapsed:.1f} s"


# -- 2 --------------------------------------------------------------------------------------------


@criterion(2)
def test_criterion_02_emr_bound():
    rng = np.random.default_rng(7)
    violations = 0
    for _ in range(1000):
        truth, scores = random_instance(rng)
        pred = binarize(scores)
        emr = exact_match_ratio(pred, truth)
        p, t = pred.data.tolist(), truth.data.tolist()
        acc = [oracles.per_class_accuracy(p, t, j) for j in range(len(truth.classes))]
        violations += emr > min(acc)
    assert violations == 0, f"{violations} violations"


# -- 3 --------------------------------------------------------------------------------------------

BEST = {"codebrim-balanced": ("codebrim-balanced-hta-rn.pred", 0.7373, 632),
        "mcds": ("mcds-hta-mn.pred", 0.5444, 270)}


@pytest.fixture(scope="module")
def fixture_hub(tmp_path_factory):
    root = tmp_path_factory.mktemp("c3")
    import shutil

    from conftest import FIXTURE_DATA

    shutil.copytree(FIXTURE_DATA, root / "data")
    hub = open_hub(root / "data")
    for path in sorted(PREDICTIONS.glob("*.pred")):
        dataset = path.name.rsplit("-", 2)[0]
        strategy, model = path.stem.rsplit("-", 2)[1:]
        hub.submit(dataset, path.read_text(), SubmissionMeta(model.upper(), strategy=strategy.upper()))
    return hub


def library_emr(hub, dataset):
    name, _, n = BEST[dataset]
    _, scores = load_predictions(PREDICTIONS / name)
    truth = hub._get_truth(dataset)
    assert len(truth.row_ids) == n
    return full_report(scores, truth).emr


@criterion(3, "exact value +-1e-9")
def test_criterion_03_exact_value(fixture_hub):
    # EMR is k/N, so 0.7373 over 632 rows and 0.5444 over 270 rows cannot be hit to 1e-9;
    # this literal check is kept and fails (see the decisions ledger).
    misses = []
    for dataset, (_, target, _) in BEST.items():
        got = library_emr(fixture_hub, dataset)
        if abs(got - target) > 1e-9:
            misses.append(f"{dataset} EMR {got:.9f} vs {target} (|diff| {abs(got - target):.1e})")
    assert not misses, ", ".join(misses)


@criterion(3, "two-decimal percentages")
def test_criterion_03_percentages(fixture_hub):
    assert round(100 * library_emr(fixture_hub, "codebrim-balanced"), 2) == 73.73
    assert round(100 * library_emr(fixture_hub, "mcds"), 2) == 54.44


@criterion(3, "library == HTTP")
def test_criterion_03_http_path(fixture_hub, data_root):
    with TestClient(create_app(data_root=data_root)) as client:
        for dataset, (name, _, _) in BEST.items():
            body = {"predictions": (PREDICTIONS / name).read_text(),
                    "metadata": {"model_name": name, "strategy": "HTA"}}
            r = client.post(f"/v1/datasets/{dataset}/submissions", json=body)
            assert r.status_code == 201
            assert abs(r.json()["report"]["emr"] - library_emr(fixture_hub, dataset)) <= 1e-9


@criterion(3, "ranking")
def test_criterion_03_ranking(fixture_hub):
    best = {}
    for dataset, (name, _, _) in BEST.items():
        rows = fixture_hub.leaderboard(dataset).rows
        assert len(rows) == 9
        assert rows[0].model_name == name.split("-")[-1].removesuffix(".pred").upper() and rows[0].strategy == "HTA"
        best[dataset] = fixture_hub.get_submission(rows[0].submission_id)
    combined = rank_submissions(best.values())
    assert [(r.rank, r.dataset) for r in combined] == [(1, "codebrim-balanced"), (2, "mcds")]


# -- 4 --------------------------------------------------------------------------------------------


@criterion(4)
def test_criterion_04_split(tmp_path, capsys):
    start = time.perf_counter()
    root = str(tmp_path)
    assert main(["--data-root", root, "datasets", "synth", "--name", "mcds", "--no-split"]) == 0
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert main(["--data-root", root, "split", "make", "--name", "mcds", "--sizes", "2057,270,270",
                     "--seed", "0", "--out", str(out)]) == 0
    elapsed = time.perf_counter() - start
    capsys.readouterr()
    index = load_dataset_index("mcds", tmp_path)
    assert len(index) == 2597
    split = load_split(a)
    sizes = {"train": 2057, "val": 270, "test": 270}
    assert split.cardinalities() == sizes
    labels = {r.image_id: r.labels for r in index.records}
    classes = index.manifest.classes
    for bucket, size in sizes.items():
        got = np.sum([labels[i] for i in split.ids(bucket)], axis=0)
        total = np.sum([r.labels for r in index.records], axis=0)
        dev = np.abs(got - size * total / 2597)
        assert dev.max() <= 2, f"{bucket}/{classes[int(dev.argmax())]} off by {dev.max():.2f}"
    assert a.read_bytes() == b.read_bytes()
    assert elapsed < 5, f"took {elapsed:.1f} s"


# -- 5 --------------------------------------------------------------------------------------------


@criterion(5)
def test_criterion_05_scheduler():
    rng = np.random.default_rng(5)
    for _ in range(100):
        base = float(10 ** rng.uniform(-6, 0))
        total = int(rng.integers(1, 100_000))
        cos = LrSchedule("cosine-with-warmup", base, total)
        const = LrSchedule("constant-with-warmup", base, total)
        w = cos.warmup_steps
        assert lr_at(cos, w) == base and lr_at(const, w) == base
        assert abs(lr_at(cos, total)) < 1e-12 * base
        mid = w + (total - w) / 2
        assert abs(lr_at(cos, mid) - base / 2) <= 1e-12


# -- 6 --------------------------------------------------------------------------------------------


@criterion(6)
def test_criterion_06_hpo():
    space = load_space("mcds")
    obj = SyntheticObjective()
    # exhaustive oracle first: the noiseless long-run loss over every config
    optima, low = oracles.grid_argmin_all({d.name: list(d.values) for d in space.dimensions}, obj.floor)
    start = time.perf_counter()
    best, ledger = run_search(space, obj, Budget(30), rng_seed=0)
    elapsed = time.perf_counter() - start
    dist = min(grid_distance(space, best, o) for o in optima)
    assert dist <= 1, f"best config is {dist} grid steps from the nearest optimum"
    early = sum(1 for t in ledger.trials if t.status == "pruned" and t.last_epoch < 27)
    assert early >= 0.3 * len(ledger.trials), f"only {early}/{len(ledger.trials)} pruned before epoch 27"
    assert ledger.epochs_consumed < 30 * 100
    assert elapsed < 60, f"took {elapsed:.1f} s"


# -- 7 --------------------------------------------------------------------------------------------


@criterion(7)
def test_criterion_07_cardinalities():
    for name, expected in (("codebrim", 4200), ("mcds", 6300)):
        space = load_space(name)
        enumerated = sum(1 for _ in itertools.product(*(d.values for d in space.dimensions)))
        assert enumerated == space_cardinality(space) == expected


# -- 8 --------------------------------------------------------------------------------------------


@criterion(8)
def test_criterion_08_preprocess():
    rng = np.random.default_rng(8)
    train, ev = PreprocessSpec(mode="train"), PreprocessSpec(mode="eval")
    for k in range(50):
        h, w = (int(x) for x in rng.integers(1, 400, 2))
        img = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
        seed = int(rng.integers(2**63))
        assert preprocess(img, train, seed).tobytes() == preprocess(img.copy(), train, seed).tobytes()
        assert preprocess(img, ev).tobytes() == preprocess(img.copy(), ev).tobytes()
    gray = preprocess(np.full((300, 500, 3), 128, np.uint8), ev)
    for c in range(3):
        assert np.abs(gray[c] - (128 / 255 - IMAGENET_MEAN[c]) / IMAGENET_STD[c]).max() <= 1e-6


# -- 9 --------------------------------------------------------------------------------------------

TOY_CLASSES = ("a", "b")
TOY_IDS = tuple(f"t{i}" for i in range(6))

CRASH_SUBMIT = textwrap.dedent("""
    import os, sys
    import numpy as np
    from bikit.hub import Hub, SubmissionMeta
    from bikit.metrics import LabelMatrix
    hub = Hub(sys.argv[1])
    hub.register_dataset("toy", LabelMatrix(tuple(f"t{i}" for i in range(6)), ("a", "b"), np.eye(6, 2)))
    payloads = sys.stdin.read().split("\\x00")
    hub.submit("toy", payloads[0], SubmissionMeta("first"))
    real = os.replace
    def dying(src, dst):
        if str(dst).endswith("ledger.jsonl"):
            if sys.argv[2] == "after":
                real(src, dst)
            os._exit(9)
        real(src, dst)
    os.replace = dying
    hub.submit("toy", payloads[1], SubmissionMeta("second"))
""")


def toy_payload(seed):
    rng = np.random.default_rng(seed)
    return format_predictions(ScoreMatrix(TOY_IDS, TOY_CLASSES, rng.random((6, 2)).round(2)), "toy")


def toy_hub(path):
    hub = Hub(path)
    hub.register_dataset("toy", LabelMatrix(TOY_IDS, TOY_CLASSES, np.eye(6, 2)))
    return hub


@criterion(9, "kill between append")
def test_criterion_09_crash(tmp_path):
    for when, expected in (("before", ["first"]), ("after", ["first", "second"])):
        root = tmp_path / when
        proc = subprocess.run([sys.executable, "-c", CRASH_SUBMIT, str(root), when],
                              input=toy_payload(1) + "\x00" + toy_payload(2), text=True, capture_output=True)
        assert proc.returncode == 9, proc.stderr
        hub = toy_hub(root)
        subs = hub.submissions("toy")
        assert [s.metadata.model_name for s in subs] == expected
        for s in subs:  # every surviving record is complete and its payload blob is intact
            assert hub.submission_scores(s.submission_id).row_ids == TOY_IDS


@criterion(9, "idempotent submits")
def test_criterion_09_idempotent(tmp_path):
    hub = toy_hub(tmp_path)
    created = [hub.submit("toy", toy_payload(3), SubmissionMeta("m"))[1] for _ in range(5)]
    assert created == [True, False, False, False, False]
    assert len(EventLedger(tmp_path / "ledger.jsonl").events) == 1


@criterion(9, "error codes")
def test_criterion_09_error_codes(tmp_path, data_root):
    good = toy_payload(4)
    cases = {
        "malformed-row": good.replace("t0,", "t0,0.5,", 1),
        "out-of-range-score": good.replace("t0,", "t0,2.0,0.1\nt9,", 1),
        "missing-id": "\n".join(good.splitlines()[:-1]) + "\n",
        "unknown-id": good + "zz,0.1,0.1\n",
        "class-mismatch": good.replace('"a", "b"', '"b", "a"'),
        "dataset-mismatch": good.replace('"toy"', '"other"'),
        "duplicate-id": good + good.splitlines()[1] + "\n",
    }
    hub = toy_hub(tmp_path / "hub")
    with TestClient(create_app(hub=hub, max_payload=4096)) as client:
        for code, text in cases.items():
            with pytest.raises(BikitError) as e:
                hub.submit("toy", text, SubmissionMeta("m"))
            assert e.value.code == code
            r = client.post("/v1/datasets/toy/submissions", json={"predictions": text, "metadata": {"model_name": "m"}})
            assert r.status_code == 422 and r.json()["error"]["code"] == code
        r = client.post("/v1/datasets/toy/submissions", json={"predictions": good + "#" * 5000,
                                                              "metadata": {"model_name": "m"}})
        assert r.status_code == 413 and r.json()["error"]["code"] == "payload-too-large"
        r = client.post("/v1/datasets/none/submissions", json={"predictions": good, "metadata": {"model_name": "m"}})
        assert r.status_code == 404 and r.json()["error"]["code"] == "unknown-dataset"
    assert hub.submissions() == []


# -- 10 -------------------------------------------------------------------------------------------


@criterion(10)
def test_criterion_10_plans():
    for (dataset, model), (hidden, batch, lr, sched, dropout, wd) in HO_BEST.items():
        for strategy in ("HO", "HTA", "DHB"):
            plan = preset_plan(strategy, dataset, model)
            check_plan(plan)
            assert parse_plan(serialize_plan(plan)) == plan
            hp = plan.hyperparams
            assert (hp.hidden_layer, hp.batch_size, hp.dropout, hp.weight_decay) == (hidden, batch, dropout, wd)
            first = plan.stages[0]
            if strategy == "HO":
                assert len(plan.stages) == 1 and not first.base.trainable and first.head.lr == lr
            elif strategy == "HTA":
                assert len(plan.stages) == 2 and not first.base.trainable and first.head.lr == lr
                assert plan.stages[1].base.lr == plan.stages[1].head.lr == LR_BEST[(dataset, model)][0]
            else:
                head, base = LR_BEST[(dataset, model)][1], LR_BEST[(dataset, model)][2]
                assert len(plan.stages) == 1 and (first.head.lr, first.base.lr) == (head, base)
            assert all(s.early_stop.monitor == "val_loss" and s.max_epochs == 100 for s in plan.stages)
