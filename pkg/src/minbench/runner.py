"""Grid execution: (model x plan x budget x seed x metric) cells to CSV reports."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .analysis import compatibility, cross_user_impact, disparity_under_minimisation
from .config import OUTPUT_DIR_ENV, ExperimentConfig, PlanGrid
from .dataset import Split, split
from .errors import DataError, HarnessError
from .metrics import REPORT_HEADER, EvalReport, MetricKind, evaluate
from .minimisation import LearningCurve, MinimisationPlan, apply, decide_stop
from .models import ModelConfig, fit_model

log = logging.getLogger(__name__)

CELLS_HEADER = [
    "model", "kind", "plan", "strategy", "budget", "seed",
    "metric", "aggregation", "value", "status",
]
CURVES_HEADER = [
    "model", "plan", "metric", "aggregation", "a", "b", "c", "residual", "fit", "decision",
]
MANAGED = (
    "cells.csv", "cells_detail.csv", "curves.csv", "compatibility.csv",
    "disparity.csv", "cross_user.csv", "manifest.txt", "config.ini",
)


@dataclass(frozen=True)
class Cell:
    order: tuple[int, int, int, int]
    model: str
    config: ModelConfig
    plan: str
    strategy: str
    budget: str
    steps: tuple[MinimisationPlan, ...]
    seed: int


@dataclass
class CellResult:
    cell: Cell
    metric: MetricKind
    aggregation: str
    value: float
    status: str
    report: EvalReport | None = None

    def row(self) -> list[str]:
        c = self.cell
        return [
            c.model, c.config.kind, c.plan, c.strategy, c.budget, str(c.seed),
            str(self.metric), self.aggregation, repr(float(self.value)), self.status,
        ]


@dataclass
class RunResult:
    output_dir: Path
    n_cells: int
    n_failed: int


def expand_cells(cfg: ExperimentConfig) -> list[Cell]:
    cells = []
    for mi, (mname, mcfg) in enumerate(cfg.models.items()):
        for pi, (pname, grid) in enumerate(cfg.plans.items()):
            for vi, (value, plan) in enumerate(grid.expand()):
                for si, seed in enumerate(cfg.seeds):
                    cells.append(
                        Cell(
                            (mi, pi, vi, si), mname, mcfg, pname, plan.strategy, str(value),
                            (plan, *grid.then), seed,
                        )
                    )
    return cells


def run_cell(
    cell: Cell, data: Split, metrics: list[tuple[MetricKind, str]], n_negatives: int
) -> list[CellResult]:
    """Minimise, refit and evaluate one cell; failures become rows, not exceptions."""
    try:
        train = data.train
        for step in cell.steps:
            train = apply(step.at(seed=cell.seed), train)
        model = fit_model(cell.config, train, cell.seed)
    except HarnessError as exc:
        log.warning("cell %s/%s/%s seed %d failed: %s", cell.model, cell.plan, cell.budget, cell.seed, exc)
        status = f"failed: {type(exc).__name__}: {exc}"
        return [CellResult(cell, m, a, math.nan, status) for m, a in metrics]

    out = []
    for metric, agg in metrics:
        try:
            report = evaluate(model, data, metric, agg, n_negatives=n_negatives)
            out.append(CellResult(cell, metric, agg, report.scalar(), "ok", report))
        except HarnessError as exc:
            out.append(CellResult(cell, metric, agg, math.nan, f"failed: {exc}"))
    return out


_WORKER: dict = {}


def _init_worker(data: Split, metrics, n_negatives: int) -> None:
    _WORKER.update(split=data, metrics=metrics, n_negatives=n_negatives)


def _worker_cell(cell: Cell) -> list[CellResult]:
    return run_cell(cell, _WORKER["split"], _WORKER["metrics"], _WORKER["n_negatives"])


def run_cells(cfg: ExperimentConfig, data: Split, cells: list[Cell]) -> list[CellResult]:
    if cfg.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(
            max_workers=cfg.workers,
            initializer=_init_worker,
            initargs=(data, cfg.metrics, cfg.n_negatives),
        ) as pool:
            batches = list(pool.map(_worker_cell, cells, chunksize=1))
    else:
        batches = [run_cell(c, data, cfg.metrics, cfg.n_negatives) for c in cells]
    # completion order never leaks into the output
    order = sorted(range(len(cells)), key=lambda j: cells[j].order)
    return [r for j in order for r in batches[j]]


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _curves(cfg: ExperimentConfig, results: list[CellResult]) -> tuple[list[list[str]], dict[str, str]]:
    summary, files = [], {}
    for mname in cfg.models:
        for pname, grid in cfg.plans.items():
            if not grid.is_curve:
                continue
            for metric, agg in cfg.metrics:
                points = [
                    (int(r.cell.budget), r.value, r.cell.seed)
                    for r in results
                    if r.cell.model == mname and r.cell.plan == pname
                    and r.metric == metric and r.aggregation == agg
                ]
                curve = LearningCurve(metric, points, label=f"{mname}/{pname}").refit()
                stem = f"curves/{mname}__{pname}__{metric}__{agg}"
                files[f"{stem}.csv"] = curve.points_csv()
                files[f"{stem}.fit.csv"] = curve.fit_csv()
                decision = ""
                if curve.fit is not None and cfg.stopping is not None:
                    decision = str(decide_stop(curve, cfg.stopping))
                f = curve.fit
                summary.append(
                    [mname, pname, str(metric), agg]
                    + ([repr(f.a), repr(f.b), repr(f.c), repr(f.residual)] if f else ["", "", "", ""])
                    + [("converged" if f.converged else "max_iter") if f else "absent", decision]
                )
    return summary, files


def _analyses(cfg: ExperimentConfig, data: Split) -> dict[str, str]:
    files = {}
    if cfg.compatibility:
        c = cfg.compatibility
        report = compatibility(
            data, c.task_a, c.task_b, c.schedule, c.seeds,
            r_min=c.r_min, p_max=c.p_max, n_permutations=c.permutations,
            permutation_seed=c.permutation_seed,
        )
        files["compatibility.csv"] = report.to_csv()
    if cfg.disparity:
        d = cfg.disparity
        report = disparity_under_minimisation(data, cfg.models[d.model], d.metric, d.plan, d.seeds)
        files["disparity.csv"] = report.to_csv()
    if cfg.cross_user:
        x = cfg.cross_user
        report = cross_user_impact(data, cfg.models[x.model], x.metric, x.users, x.seed)
        files["cross_user.csv"] = report.to_csv()
    return files


def _manifest(cfg: ExperimentConfig, files: dict[str, str], n_cells: int, n_failed: int) -> str:
    lines = [
        "harness = minbench",
        f"harness_version = {__version__}",
        f"config_file = config.ini",
        f"config_sha256 = {cfg.sha256}",
    ]
    for purpose, seeds in cfg.all_seeds().items():
        lines.append(f"seeds.{purpose} = {','.join(map(str, seeds))}")
    lines.append(f"cells = {n_cells}")
    lines.append(f"failed_cells = {n_failed}")
    for name in sorted(files):
        digest = hashlib.sha256(files[name].encode("utf-8")).hexdigest()
        lines.append(f"sha256.{name} = {digest}")
    return "\n".join(lines) + "\n"


def prepare(cfg: ExperimentConfig) -> Split:
    """Load and split the dataset, checking what the analyses need."""
    dataset = cfg.load_dataset()
    data = split(dataset, cfg.split_scheme, cfg.split_seed)
    if cfg.disparity and not dataset.has_groups:
        raise DataError("[analysis.disparity] needs a dataset with group labels")
    if any(agg == "per_group" for _, agg in cfg.metrics) and not dataset.has_groups:
        raise DataError("per_group aggregation needs a dataset with group labels")
    return data


def run(cfg: ExperimentConfig, output_dir: str | Path | None = None) -> RunResult:
    """Execute the full grid and write the result directory."""
    if output_dir is None:
        output_dir = os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir
    out = Path(output_dir)
    data = prepare(cfg)

    cells = expand_cells(cfg)
    results = run_cells(cfg, data, cells)
    n_failed = sum(1 for r in results if r.status != "ok")

    files: dict[str, str] = {}
    files["cells.csv"] = _csv_text(CELLS_HEADER, [r.row() for r in results])
    detail = []
    for r in results:
        if r.report is not None and r.aggregation != "global_mean":
            c = r.cell
            for row in r.report.rows():
                detail.append([c.model, c.plan, c.budget, str(c.seed), *row])
    if detail:
        files["cells_detail.csv"] = _csv_text(["model", "plan", "budget", "seed", *REPORT_HEADER], detail)
    summary, curve_files = _curves(cfg, results)
    if summary:
        files["curves.csv"] = _csv_text(CURVES_HEADER, summary)
    files.update(curve_files)
    files.update(_analyses(cfg, data))
    files["config.ini"] = cfg.source_text

    out.mkdir(parents=True, exist_ok=True)
    shutil.rmtree(out / "curves", ignore_errors=True)
    for name in MANAGED:
        (out / name).unlink(missing_ok=True)
    for name, text in files.items():
        _write(out / name, text)
    _write(out / "manifest.txt", _manifest(cfg, files, len(cells), n_failed))
    log.info("wrote %d cells (%d failed rows) to %s", len(cells), n_failed, out)
    return RunResult(out, len(cells), n_failed)
