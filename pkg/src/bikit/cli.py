"""``bikit`` command line.

Local subcommands call the library directly; ``submit`` talks to a running
``bikit serve`` over HTTP. Exit codes: 0 success, 1 domain or validation
error, 2 usage error. With ``--format machine`` results and errors are
single-line JSON records.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from bikit import __version__
from bikit.catalog import (
    annotations_path,
    class_histogram,
    count_discrepancies,
    find_manifest,
    list_manifests,
    load_dataset_index,
    save_index,
    verify_sources,
)
from bikit.errors import BikitError
from bikit.splits import STRATEGIES, SplitSpec, load_split, save_split, split_path, stratified_split, verify_split

log = logging.getLogger("bikit")

ENV_DATA = "BIKIT_DATA"
ENV_SERVER = "BIKIT_SERVER"


class Config:
    def __init__(self, data_root: str, fmt: str, verbose: int):
        self.data_root = Path(data_root)
        self.format = fmt
        self.verbose = verbose

    @property
    def machine(self) -> bool:
        return self.format == "machine"

    def require_data_root(self) -> Path:
        if not self.data_root.is_dir():
            raise BikitError(f"data root {self.data_root} does not exist", code="no-data-root")
        return self.data_root

    def emit(self, record: dict, human: str | None = None) -> None:
        if self.machine or human is None:
            click.echo(json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False))
        else:
            click.echo(human)


pass_config = click.make_pass_decorator(Config)


def _sizes(ctx, param, value):
    try:
        parts = tuple(int(x) for x in value.split(","))
    except ValueError:
        raise click.BadParameter("expected three comma-separated integers, e.g. 2057,270,270") from None
    if len(parts) != 3:
        raise click.BadParameter("expected exactly three sizes (train,val,test)")
    return parts


@click.group(context_settings={"show_default": True, "help_option_names": ["-h", "--help"]})
@click.option("--data-root", envvar=ENV_DATA, default=".", type=click.Path(file_okay=False),
              help=f"Directory holding <dataset>/annotations.csv and split.csv (env {ENV_DATA}).")
@click.option("--format", "fmt", type=click.Choice(["human", "machine"]), default="human",
              help="Output style; machine prints one JSON record per result or error.")
@click.option("-v", "--verbose", count=True, help="Increase log verbosity (repeatable).")
@click.version_option(__version__, prog_name="bikit")
@click.pass_context
def cli(ctx, data_root, fmt, verbose):
    """Benchmark toolkit for multi-label damage recognition datasets."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    ctx.obj = Config(data_root, fmt, verbose)


# -- datasets ---------------------------------------------------------------------


@cli.group()
def datasets():
    """Dataset manifests, source checks and label statistics."""


@datasets.command("list")
@pass_config
def datasets_list(cfg: Config):
    """List known dataset manifests."""
    ms = list_manifests(cfg.data_root if cfg.data_root.is_dir() else None)
    rows = [{"name": m.name, "version": m.version, "task_type": m.task_type, "classes": list(m.classes),
             "num_images": m.num_images} for m in ms]
    human = "\n".join(f"{r['name']:<20} {r['task_type']:<14} {len(r['classes'])} classes  "
                      f"{r['num_images'] if r['num_images'] is not None else '?'} images" for r in rows)
    cfg.emit({"datasets": rows}, human)


@datasets.command("verify")
@click.option("--name", required=True, help="Dataset name.")
@click.option("--root", type=click.Path(file_okay=False), default=None,
              help="Directory with the downloaded source files [default: <data-root>/<name>].")
@pass_config
def datasets_verify(cfg: Config, name, root):
    """Check downloaded source files against the manifest's sizes and sha256 digests."""
    manifest = find_manifest(name, cfg.data_root)
    root = Path(root) if root else cfg.data_root / name
    statuses = verify_sources(manifest, root)
    bad = [s for s in statuses if s.status != "ok"]
    record = {"dataset": name, "ok": not bad,
              "sources": [{"uri": s.uri, "path": s.path, "status": s.status, "detail": s.detail} for s in statuses]}
    lines = [f"{s.status:<16} {s.uri} {s.detail}".rstrip() for s in statuses] or ["(manifest lists no sources)"]
    cfg.emit(record, "\n".join(lines))
    if bad:
        raise BikitError(f"{len(bad)} of {len(statuses)} source(s) failed verification", code="verify-failed")


@datasets.command("stats")
@click.option("--name", required=True, help="Dataset name.")
@pass_config
def datasets_stats(cfg: Config, name):
    """Per-class label counts of <data-root>/<name>/annotations.csv."""
    index = load_dataset_index(name, cfg.require_data_root())
    hist = class_histogram(index)
    problems = count_discrepancies(index)
    record = {"dataset": name, "n_images": hist.n_images, "counts": hist.counts,
              "total_labels": hist.total_labels, "avg_labels_per_image": hist.avg_labels_per_image,
              "discrepancies": problems}
    width = max(len(c) for c in hist.counts)
    lines = [f"{c:<{width}}  {n:>6}" for c, n in hist.counts.items()]
    lines.append(f"{'images':<{width}}  {hist.n_images:>6}")
    lines.append(f"{'avg labels/image':<{width}}  {hist.avg_labels_per_image:>9.3f}")
    lines += [f"warning: {p}" for p in problems]
    cfg.emit(record, "\n".join(lines))


@datasets.command("synth")
@click.option("--name", required=True, help="Dataset name with expected class counts in its manifest.")
@click.option("--seed", default=0, type=int, help="Seed for row order.")
@click.option("--with-split/--no-split", default=True,
              help="Also write a pinned split.csv with a fixed test layout (mcds, codebrim-balanced).")
@pass_config
def datasets_synth(cfg: Config, name, seed, with_split):
    """Write a synthetic annotations.csv matching the manifest's class counts."""
    from bikit.synth import TEST_LAYOUTS, fixture_dataset, synth_index

    manifest = find_manifest(name, cfg.data_root)
    out = {"dataset": name, "annotations": str(annotations_path(cfg.data_root, name))}
    if with_split and name in TEST_LAYOUTS:
        fx = fixture_dataset(manifest, seed)
        save_index(fx.index, annotations_path(cfg.data_root, name))
        save_split(fx.split, split_path(cfg.data_root, name))
        out["split"] = str(split_path(cfg.data_root, name))
        out["n_images"] = len(fx.index)
    else:
        index = synth_index(manifest, seed)
        save_index(index, annotations_path(cfg.data_root, name))
        out["n_images"] = len(index)
    cfg.emit(out, f"wrote {out['n_images']} synthetic records to {out['annotations']}"
             + (f" and {out['split']}" if "split" in out else ""))


# -- split ------------------------------------------------------------------------


@cli.group()
def split():
    """Create and check train/val/test splits."""


@split.command("make")
@click.option("--name", required=True, help="Dataset name.")
@click.option("--sizes", required=True, callback=_sizes, help="train,val,test sizes, e.g. 2057,270,270.")
@click.option("--seed", default=0, type=click.IntRange(0, 2**64 - 1), help="PCG64 seed.")
@click.option("--strategy", type=click.Choice(STRATEGIES), default="iterative-stratified", help="Split algorithm.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Output file [default: <data-root>/<name>/split.csv].")
@pass_config
def split_make(cfg: Config, name, sizes, seed, strategy, out):
    """Split a dataset deterministically and write the split file."""
    index = load_dataset_index(name, cfg.require_data_root())
    assignment = stratified_split(index, SplitSpec(sizes, seed, strategy))
    out = Path(out) if out else split_path(cfg.data_root, name)
    save_split(assignment, out)
    report = verify_split(assignment, index)
    cfg.emit({"dataset": name, "out": str(out), "cardinalities": report.cardinalities,
              "max_deviation": report.max_deviation},
             f"wrote {out}: " + ", ".join(f"{b}={n}" for b, n in report.cardinalities.items())
             + f"; max per-class deviation {report.max_deviation:.3f}")


@split.command("verify")
@click.option("--name", required=True, help="Dataset name.")
@click.option("--split", "split_file", type=click.Path(dir_okay=False, exists=True), default=None,
              help="Split file [default: <data-root>/<name>/split.csv].")
@pass_config
def split_verify(cfg: Config, name, split_file):
    """Check a split is total and disjoint and matches its declared sizes."""
    index = load_dataset_index(name, cfg.require_data_root())
    assignment = load_split(split_file or split_path(cfg.data_root, name))
    report = verify_split(assignment, index)
    doc = report.to_dict()
    lines = [f"{'ok' if report.ok else 'FAILED'}: " + ", ".join(f"{b}={n}" for b, n in report.cardinalities.items()),
             f"max per-class deviation {report.max_deviation:.3f}"]
    if report.missing:
        lines.append(f"{len(report.missing)} image(s) unassigned, e.g. {report.missing[:3]}")
    if report.unknown:
        lines.append(f"{len(report.unknown)} unknown id(s), e.g. {report.unknown[:3]}")
    if not report.sizes_match:
        lines.append(f"declared sizes {assignment.spec.sizes} differ from actual cardinalities")
    cfg.emit(doc, "\n".join(lines))
    if not report.ok:
        raise BikitError("split verification failed", code="split-invalid")


# -- eval / plan / preprocess ----------------------------------------------------------


@cli.command("eval")
@click.option("--name", required=True, help="Dataset name.")
@click.option("--pred", required=True, type=click.Path(dir_okay=False, exists=True), help="Prediction file.")
@click.option("--split", "bucket", type=click.Choice(["train", "val", "test"]), default="test",
              help="Bucket the predictions cover.")
@click.option("--split-file", type=click.Path(dir_okay=False, exists=True), default=None,
              help="Split file [default: <data-root>/<name>/split.csv].")
@click.option("--threshold", default=0.5, type=click.FloatRange(0, 1, min_open=True, max_open=True),
              help="Score threshold for a positive label.")
@pass_config
def eval_cmd(cfg: Config, name, pred, bucket, split_file, threshold):
    """Score a prediction file: EMR, recall by class, AUROC and F1."""
    from bikit.metrics import LabelMatrix, format_report, full_report
    from bikit.predictions import load_predictions

    index = load_dataset_index(name, cfg.require_data_root())
    assignment = load_split(split_file or split_path(cfg.data_root, name))
    truth = LabelMatrix.from_index(index, assignment.ids(bucket))
    _, scores = load_predictions(pred, index.manifest.classes)
    missing = sorted(set(truth.row_ids) - set(scores.row_ids))
    extra = sorted(set(scores.row_ids) - set(truth.row_ids))
    if missing:
        raise BikitError(f"{len(missing)} {bucket} image(s) missing from predictions", code="missing-id",
                         details=missing[:10])
    if extra:
        raise BikitError(f"{len(extra)} id(s) not in the {bucket} split", code="unknown-id", details=extra[:10])
    report = full_report(scores, truth, threshold)
    if cfg.machine:
        click.echo(report.to_json())
    else:
        click.echo(format_report(report))


@cli.command("plan")
@click.option("--strategy", required=True, type=click.Choice(["ho", "hta", "dhb"], case_sensitive=False),
              help="Transfer-learning strategy.")
@click.option("--dataset", required=True, type=click.Choice(["codebrim", "mcds"], case_sensitive=False),
              help="Preset dataset.")
@click.option("--model", required=True, type=click.Choice(["rn", "en", "mn"], case_sensitive=False),
              help="Backbone: rn=ResNet50, en=EfficientNetV1-B0, mn=MobileNetV3-Large.")
@click.option("--patience", default=10, type=click.IntRange(1), help="Early-stopping patience (epochs).")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the plan here instead of stdout.")
@pass_config
def plan_cmd(cfg: Config, strategy, dataset, model, patience, out):
    """Emit the training plan for a strategy with the preset hyperparameters."""
    from bikit._io import atomic_write_text
    from bikit.pipeline.plan import serialize_plan
    from bikit.pipeline.presets import preset_plan

    text = serialize_plan(preset_plan(strategy, dataset, model, patience))
    if out:
        atomic_write_text(out, text + "\n")
        cfg.emit({"out": out}, f"wrote {out}")
    else:
        click.echo(text)


@cli.command("preprocess")
@click.option("--in", "src", required=True, type=click.Path(dir_okay=False, exists=True), help="Input image.")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Output tensor (.npy).")
@click.option("--mode", type=click.Choice(["train", "eval"]), default="eval", help="Augment (train) or not (eval).")
@click.option("--seed", default=0, type=click.IntRange(0), help="Seed for train-mode augmentation.")
@pass_config
def preprocess_cmd(cfg: Config, src, out, mode, seed):
    """Turn an image into a normalized 3x224x224 float32 tensor."""
    import hashlib

    from bikit.pipeline.preprocess import PreprocessSpec, load_image, preprocess

    tensor = preprocess(load_image(src), PreprocessSpec(mode=mode), seed)
    with open(out, "wb") as fh:
        np.save(fh, tensor)
    digest = hashlib.sha256(tensor.tobytes()).hexdigest()
    cfg.emit({"out": out, "shape": list(tensor.shape), "dtype": str(tensor.dtype), "sha256": digest},
             f"wrote {out} {tuple(tensor.shape)} {tensor.dtype} sha256={digest[:16]}")


# -- hpo ------------------------------------------------------------------------------


@cli.group()
def hpo():
    """Bayesian hyperparameter search with Hyperband pruning."""


def _search_record(best, ledger) -> dict:
    from bikit.hpo.search import best_trial

    bt = best_trial(ledger)
    statuses = {}
    for t in ledger.trials:
        statuses[t.status] = statuses.get(t.status, 0) + 1
    return {
        "best_config": best,
        "best_trial": bt.trial_id if bt else None,
        "best_val_loss": bt.best_val_loss() if bt else None,
        "trials": len(ledger.trials),
        "statuses": statuses,
        "epochs_consumed": ledger.epochs_consumed,
    }


def _search_human(rec: dict) -> str:
    return (f"best config (trial {rec['best_trial']}, val_loss {rec['best_val_loss']}): "
            f"{json.dumps(rec['best_config'], sort_keys=True)}\n"
            f"{rec['trials']} trials {rec['statuses']}, {rec['epochs_consumed']} epochs consumed")


@hpo.command("run")
@click.option("--space", default="mcds", help="Space file or bundled space name (mcds, codebrim).")
@click.option("--objective", type=click.Choice(["synthetic"]), default="synthetic", help="Objective to optimize.")
@click.option("--trials", default=30, type=click.IntRange(1), help="Trial budget.")
@click.option("--seed", default=0, type=click.IntRange(0), help="Search seed.")
@click.option("--max-epochs", default=100, type=click.IntRange(1), help="Epoch budget per trial.")
@click.option("--n-init", default=10, type=click.IntRange(1), help="Random trials before the GP takes over.")
@click.option("--ledger", "ledger_path", type=click.Path(dir_okay=False), default="hpo-ledger.jsonl",
              help="Event ledger file (overwritten).")
@pass_config
def hpo_run(cfg: Config, space, objective, trials, seed, max_epochs, n_init, ledger_path):
    """Run a search and record every event in the ledger."""
    from bikit.hpo import Budget, load_space, run_search
    from bikit.hpo.objective import OBJECTIVES

    best, ledger = run_search(load_space(space), OBJECTIVES[objective](),
                              Budget(trials, max_epochs=max_epochs, n_init=n_init), seed, ledger_path)
    rec = _search_record(best, ledger)
    cfg.emit(rec, _search_human(rec) + f"\nledger: {ledger_path}")


@hpo.command("resume")
@click.option("--ledger", "ledger_path", required=True, type=click.Path(dir_okay=False, exists=True),
              help="Ledger of an interrupted or finished search.")
@click.option("--trials", default=None, type=click.IntRange(1), help="New trial budget [default: unchanged].")
@pass_config
def hpo_resume(cfg: Config, ledger_path, trials):
    """Continue a search from its ledger."""
    from bikit.hpo import resume_search

    best, ledger = resume_search(ledger_path, max_trials=trials)
    rec = _search_record(best, ledger)
    cfg.emit(rec, _search_human(rec))


@hpo.command("best")
@click.option("--ledger", "ledger_path", required=True, type=click.Path(dir_okay=False, exists=True),
              help="Search ledger.")
@click.option("--metric", type=click.Choice(["val_loss", "emr"]), default="val_loss", help="Selection metric.")
@click.option("--rerun", default=0, type=click.IntRange(0),
              help="Re-train the winner with this many seeds and report final-epoch metrics.")
@pass_config
def hpo_best(cfg: Config, ledger_path, metric, rerun):
    """Report the best trial recorded in a ledger."""
    from bikit.hpo import load_ledger, rerun_best
    from bikit.hpo.objective import objective_from_params
    from bikit.hpo.search import best_trial

    ledger = load_ledger(ledger_path)
    bt = best_trial(ledger, metric)
    if bt is None:
        raise BikitError("ledger has no finished trials", code="no-trials")
    rec = {"trial_id": bt.trial_id, "config": bt.config, "status": bt.status,
           "best_val_loss": bt.best_val_loss(), "best_emr": bt.best_emr(), "last_epoch": bt.last_epoch}
    human = f"trial {bt.trial_id} ({bt.status}, {bt.last_epoch} epochs): {json.dumps(bt.config, sort_keys=True)}\n" \
            f"best val_loss {bt.best_val_loss():.6f}, best emr {bt.best_emr():.6f}"
    if rerun:
        runs = rerun_best(bt.config, objective_from_params(ledger.objective), rerun, ledger.budget.max_epochs)
        rec["reruns"] = runs
        human += "".join(f"\nseed {r['seed']}: val_loss {r['val_loss']:.6f} emr {r['emr']:.6f}" for r in runs)
    cfg.emit(rec, human)


# -- hub ------------------------------------------------------------------------------


@cli.command("serve")
@click.option("--data", type=click.Path(file_okay=False), envvar=ENV_DATA, default=None,
              help=f"Data directory with datasets and the hub store (env {ENV_DATA}) [default: --data-root].")
@click.option("--port", type=click.IntRange(0, 65535), envvar="BIKIT_PORT", default=8000,
              help="TCP port (env BIKIT_PORT).")
@click.option("--host", default="127.0.0.1", help="Bind address.")
@click.option("--max-payload", type=click.IntRange(1), envvar="BIKIT_MAX_PAYLOAD", default=256 * 1024 * 1024,
              help="Largest accepted request body in bytes (env BIKIT_MAX_PAYLOAD).")
@pass_config
def serve(cfg: Config, data, port, host, max_payload):
    """Run the leaderboard and model hub HTTP service."""
    import uvicorn

    from bikit.api import create_app

    root = Path(data) if data else cfg.require_data_root()
    if not root.is_dir():
        raise BikitError(f"data directory {root} does not exist", code="no-data-root")
    app = create_app(data_root=root, max_payload=max_payload)
    log.info("serving %s on %s:%d", ", ".join(app.state.hub.datasets) or "no datasets", host, port)
    uvicorn.run(app, host=host, port=port, log_level="info" if cfg.verbose else "warning")


@cli.command("submit")
@click.option("--name", required=True, help="Dataset name.")
@click.option("--pred", required=True, type=click.Path(dir_okay=False, exists=True), help="Prediction file.")
@click.option("--model-name", required=True, help="Name shown on the leaderboard.")
@click.option("--architecture", default="", help="Architecture tag, e.g. ResNet50.")
@click.option("--strategy", type=click.Choice(["HO", "HTA", "DHB", "other"]), default="other",
              help="Training strategy.")
@click.option("--submitter", default="", help="Free-text submitter name.")
@click.option("--server", envvar=ENV_SERVER, default="http://127.0.0.1:8000",
              help=f"Hub base URL (env {ENV_SERVER}).")
@click.option("--timeout", default=60.0, type=click.FloatRange(0, min_open=True), help="Request timeout (s).")
@pass_config
def submit(cfg: Config, name, pred, model_name, architecture, strategy, submitter, server, timeout):
    """Upload a prediction file to a hub and print the scored result."""
    import httpx

    body = {"predictions": Path(pred).read_text(encoding="utf-8"),
            "metadata": {"model_name": model_name, "architecture": architecture, "strategy": strategy,
                         "submitter": submitter}}
    url = f"{server.rstrip('/')}/v1/datasets/{name}/submissions"
    try:
        resp = httpx.post(url, json=body, timeout=timeout)
    except httpx.HTTPError as exc:
        raise BikitError(f"cannot reach {server}: {exc}", code="server-unreachable") from None
    try:
        doc = resp.json()
    except ValueError:
        raise BikitError(f"server answered {resp.status_code} with a non-JSON body", code="bad-response") from None
    if resp.status_code >= 400:
        err = doc.get("error", {}) if isinstance(doc, dict) else {}
        raise BikitError(err.get("message", f"HTTP {resp.status_code}"), code=err.get("code", "http-error"),
                         details=err.get("details"))
    rep = doc["report"]
    human = (f"{'accepted' if doc.get('created') else 'already submitted'}: {doc['submission_id']}\n"
             f"EMR {100 * rep['emr']:.2f}%  " + "  ".join(
                 f"{c} {'n/a' if v is None else f'{100 * v:.2f}'}" for c, v in rep["recall_per_class"].items()))
    cfg.emit(doc, human)


# -- entry point ------------------------------------------------------------------------


def _machine_requested(argv: list[str]) -> bool:
    for i, a in enumerate(argv):
        if a == "--format=machine" or (a == "--format" and i + 1 < len(argv) and argv[i + 1] == "machine"):
            return True
    return False


def _report_error(machine: bool, code: str, message: str, details: list | None = None) -> None:
    if machine:
        rec = {"error": {"code": code, "message": message}}
        if details:
            rec["error"]["details"] = details
        click.echo(json.dumps(rec, sort_keys=True, separators=(",", ":")), err=True)
    else:
        click.echo(f"error [{code}]: {message}", err=True)
        for d in details or []:
            click.echo(f"  {d}", err=True)


def main(argv: list[str] | None = None, prog_name: str = "bikit") -> int:
    """Run the CLI and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    machine = _machine_requested(argv)
    try:
        cli.main(args=argv, prog_name=prog_name, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        _report_error(machine, "aborted", "aborted")
        return 1
    except click.UsageError as exc:
        if machine:
            _report_error(True, "usage", exc.format_message())
        else:
            exc.show()
        return 2
    except click.ClickException as exc:
        _report_error(machine, "error", exc.format_message())
        return exc.exit_code
    except BikitError as exc:
        _report_error(machine, exc.code, str(exc), exc.details)
        return 1
    except OSError as exc:
        _report_error(machine, "io-error", str(exc))
        return 1
    return 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
