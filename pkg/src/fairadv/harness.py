"""Experiment sweeps: repeated seeded runs over a lambda grid, CSV tables and
SVG plots of the aggregated metrics.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import data as data_mod
from . import model as model_mod
from .data import AdvDataSpec, Dataset
from .metrics import METRIC_NAMES, AggregateReport, FairnessReport, aggregate, fairness_report
from .model import TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (0.1, 0.5, 1.0, 2.0, 4.0)
FULL_RUNS = 10
FULL_STEPS = 100_000
FAST_RUNS = 3
FAST_STEPS = 5000
SIZE_SWEEP = (500, 1000, 2000, 4000)
PLOTTED_METRICS = ("accuracy", "parity_gap", "equality_gap_low", "equality_gap_high")

CSV_HEADER = ("variant", "lambda", "run", "seed") + METRIC_NAMES

# child index of the run seed used to draw the adversarial dataset;
# 0-2 belong to model.stream_seeds
_ADV_DATA_STREAM = 3


@dataclass(frozen=True)
class ExperimentVariant:
    adv_spec: Optional[AdvDataSpec]
    lambda_grid: Tuple[float, ...] = DEFAULT_LAMBDAS
    runs: int = FULL_RUNS
    train_config: TrainConfig = field(default_factory=TrainConfig)
    base_seed: int = 0

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.adv_spec is not None and not self.lambda_grid:
            raise ValueError("an adversarial variant needs a nonempty lambda grid")

    @property
    def name(self) -> str:
        return "baseline" if self.adv_spec is None else self.adv_spec.name

    @property
    def grid(self) -> Tuple[Optional[float], ...]:
        # the baseline has no lambda axis
        return (None,) if self.adv_spec is None else tuple(self.lambda_grid)


@dataclass(frozen=True)
class RunRecord:
    variant: str
    lam: Optional[float]
    run: int
    seed: int
    report: FairnessReport


@dataclass
class VariantResult:
    variant: ExperimentVariant
    records: List[RunRecord]
    aggregates: Dict[Optional[float], AggregateReport]


def run_seed(base_seed: int, lam_index: int, run_index: int) -> int:
    """63-bit seed for one (lambda, run) cell; independent of the variant."""
    ss = np.random.SeedSequence(base_seed, spawn_key=(lam_index, run_index))
    return int(ss.generate_state(1, dtype=np.uint64)[0] & np.uint64(2**63 - 1))


def _one_run(
    spec: Optional[AdvDataSpec],
    config: TrainConfig,
    train: Dataset,
    test: Dataset,
    calibration: Dataset,
    target_rate: float,
) -> FairnessReport:
    adv = None
    if spec is not None:
        adv_seed = np.random.SeedSequence(config.seed, spawn_key=(_ADV_DATA_STREAM,))
        adv = data_mod.build_adv_dataset(train, spec, adv_seed)
    model = model_mod.train(train, adv, config)
    threshold = model_mod.calibrate_threshold(model_mod.predict_prob(model, calibration.X), target_rate)
    return fairness_report(model_mod.classify(model, threshold, test.X), test.y, test.z)


_WORKER_DATA = {}


def _init_worker(train, test, calibration):
    _WORKER_DATA.update(train=train, test=test, calibration=calibration)


def _worker_run(spec, config, target_rate):
    d = _WORKER_DATA
    return _one_run(spec, config, d["train"], d["test"], d["calibration"], target_rate)


def run_variant(
    variant: ExperimentVariant,
    train: Dataset,
    test: Dataset,
    threshold_source: Optional[Dataset] = None,
    jobs: int = 1,
) -> VariantResult:
    """Train ``variant.runs`` models per lambda and score each on ``test``.

    Thresholds are calibrated on ``threshold_source`` (default: ``train``)
    so the predicted-positive rate matches the training positive rate.
    """
    calibration = train if threshold_source is None else threshold_source
    target_rate = float(np.mean(train.y))
    cells = []
    for li, lam in enumerate(variant.grid):
        for r in range(variant.runs):
            seed = run_seed(variant.base_seed, li, r)
            config = replace(variant.train_config, lam=0.0 if lam is None else lam, seed=seed)
            cells.append((lam, r, seed, config))

    if jobs > 1:
        with ProcessPoolExecutor(
            max_workers=jobs, initializer=_init_worker, initargs=(train, test, calibration)
        ) as pool:
            futures = [
                pool.submit(_worker_run, variant.adv_spec, cfg, target_rate)
                for _, _, _, cfg in cells
            ]
            reports = []
            for (lam, r, seed, _), fut in zip(cells, futures):
                try:
                    reports.append(fut.result())
                except Exception as exc:
                    raise RuntimeError(f"{variant.name} lambda={lam} run={r} seed={seed} failed") from exc
    else:
        reports = []
        for lam, r, seed, cfg in cells:
            logger.info("%s lambda=%s run=%d seed=%d", variant.name, lam, r, seed)
            try:
                reports.append(_one_run(variant.adv_spec, cfg, train, test, calibration, target_rate))
            except Exception as exc:
                raise RuntimeError(f"{variant.name} lambda={lam} run={r} seed={seed} failed") from exc

    records = [
        RunRecord(variant.name, lam, r, seed, rep)
        for (lam, r, seed, _), rep in zip(cells, reports)
    ]
    aggregates = {
        lam: aggregate([rec.report for rec in records if rec.lam == lam]) for lam in variant.grid
    }
    return VariantResult(variant, records, aggregates)


def _sort_key(rec: RunRecord):
    return (rec.variant, -math.inf if rec.lam is None else rec.lam, rec.run)


def emit_csv(records: Sequence[RunRecord], path) -> None:
    """One row per run, six decimals per real, rows sorted by (variant, lambda, run)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for rec in sorted(records, key=_sort_key):
            lam = "" if rec.lam is None else f"{rec.lam:.6f}"
            metrics = [f"{getattr(rec.report, m):.6f}" for m in METRIC_NAMES]
            w.writerow([rec.variant, lam, rec.run, rec.seed, *metrics])


def read_csv(path) -> List[RunRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected header in {path}")
        out = []
        for row in reader:
            lam = None if row[1] == "" else float(row[1])
            report = FairnessReport(*(float(v) for v in row[4:]))
            out.append(RunRecord(row[0], lam, int(row[2]), int(row[3]), report))
    return out


def emit_summary_csv(results: Sequence[VariantResult], path) -> None:
    """Mean and sample std per (variant, lambda)."""
    header = ["variant", "lambda", "runs"]
    header += [f"mean_{m}" for m in METRIC_NAMES] + [f"std_{m}" for m in METRIC_NAMES]
    rows = []
    for res in results:
        for lam, agg in res.aggregates.items():
            rows.append((res.variant.name, lam, agg))
    rows.sort(key=lambda t: (t[0], -math.inf if t[1] is None else t[1]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for name, lam, agg in rows:
            w.writerow(
                [name, "" if lam is None else f"{lam:.6f}", agg.runs]
                + [f"{agg.mean[m]:.6f}" for m in METRIC_NAMES]
                + [f"{agg.std[m]:.6f}" for m in METRIC_NAMES]
            )


def band_geometry(points: Mapping[float, AggregateReport], metric: str):
    """Sorted lambdas with mean, mean - std and mean + std of ``metric``."""
    lams = sorted(points)
    xs = np.array(lams, dtype=float)
    mu = np.array([points[l].mean[metric] for l in lams])
    sd = np.array([points[l].std[metric] for l in lams])
    return xs, mu, mu - sd, mu + sd


def emit_svg(
    series: Mapping,
    metric: str,
    path,
    reference: Optional[AggregateReport] = None,
    title: Optional[str] = None,
) -> None:
    """Plot mean +/- 1 sample std of ``metric`` against lambda.

    ``series`` maps a label to ``{lambda: AggregateReport}``; a bare
    ``{lambda: AggregateReport}`` mapping is accepted as a single series.
    ``reference`` (typically the no-adversary baseline) is drawn as a dashed
    horizontal line.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if series and all(isinstance(v, AggregateReport) for v in series.values()):
        series = {metric: series}
    if not series or not any(series.values()):
        raise ValueError("nothing to plot")

    with matplotlib.rc_context({"svg.hashsalt": "fairadv", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        for i, (label, points) in enumerate(series.items()):
            xs, mu, lo, hi = band_geometry(points, metric)
            if len(xs) == 1:
                (line,) = ax.plot(xs, mu, marker="o", linestyle="none", label=label, gid=f"marker-{i}")
                ax.errorbar(xs, mu, yerr=hi - mu, fmt="none", ecolor=line.get_color(), capsize=3)
            else:
                (line,) = ax.plot(xs, mu, marker="o", markersize=3, label=label, gid=f"mean-line-{i}")
                ax.fill_between(
                    xs, lo, hi, color=line.get_color(), alpha=0.2, linewidth=0, gid=f"band-{i}"
                )
        if reference is not None:
            ax.axhline(reference.mean[metric], color="0.4", linestyle="--", linewidth=1, label="no adversary")
        ax.set_xlabel("adversarial weight lambda")
        ax.set_ylabel(f"{metric} (mean +/- 1 std)")
        if title:
            ax.set_title(title)
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def _variant_config(steps: int) -> TrainConfig:
    return TrainConfig(steps=steps)


def paper_suite_variants(
    base_seed: int = 0,
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    runs: int = FULL_RUNS,
    steps: int = FULL_STEPS,
) -> Dict[str, List[ExperimentVariant]]:
    """Experiment families keyed by output file stem."""
    cfg = _variant_config(steps)

    def v(spec):
        return ExperimentVariant(spec, tuple(lambdas), runs, cfg, base_seed)

    return {
        "baseline": [v(None)],
        "composition_balanced_z": [
            v(AdvDataSpec(2000, "balanced", y)) for y in ("low_only", "high_only", "balanced")
        ],
        "composition_unbalanced_z": [
            v(AdvDataSpec(2000, "unbalanced", y)) for y in ("low_only", "high_only", "balanced")
        ],
        "dataset_size": [v(AdvDataSpec(n, "balanced", "low_only")) for n in SIZE_SWEEP],
    }


def write_family(
    family: str,
    results: Sequence[VariantResult],
    out_dir,
    baseline: Optional[AggregateReport] = None,
) -> List[str]:
    """CSV for the family plus one SVG per plotted metric (skipped for the baseline)."""
    written = []
    csv_path = os.path.join(out_dir, f"{family}.csv")
    emit_csv([rec for res in results for rec in res.records], csv_path)
    written.append(csv_path)
    adversarial = [r for r in results if r.variant.adv_spec is not None]
    if adversarial:
        series = {r.variant.name: r.aggregates for r in adversarial}
        for metric in PLOTTED_METRICS:
            svg_path = os.path.join(out_dir, f"{family}_{metric}.svg")
            emit_svg(series, metric, svg_path, reference=baseline, title=family)
            written.append(svg_path)
    return written


def paper_suite(
    data_path,
    out_dir,
    fast: bool = False,
    base_seed: int = 0,
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    runs: Optional[int] = None,
    steps: Optional[int] = None,
    jobs: int = 1,
) -> List[str]:
    """Run the baseline, the six composition cells and the four size cells.

    ``fast`` drops to a CI-sized schedule that is not the full schedule.
    """
    if not os.path.exists(data_path):
        raise FileNotFoundError(f"data file not found: {data_path}")
    runs = runs if runs is not None else (FAST_RUNS if fast else FULL_RUNS)
    steps = steps if steps is not None else (FAST_STEPS if fast else FULL_STEPS)
    os.makedirs(out_dir, exist_ok=True)
    train, test, _ = data_mod.prepare_adult(data_path, base_seed)
    families = paper_suite_variants(base_seed, lambdas, runs, steps)

    # identical variants (balanced-Z low-only at 2000 sits in two families) run once
    cache: Dict[ExperimentVariant, VariantResult] = {}
    family_results: Dict[str, List[VariantResult]] = {}
    for family, variants in families.items():
        family_results[family] = []
        for variant in variants:
            if variant not in cache:
                cache[variant] = run_variant(variant, train, test, jobs=jobs)
            family_results[family].append(cache[variant])

    baseline = family_results["baseline"][0].aggregates[None]
    written = []
    for family, results in family_results.items():
        written += write_family(family, results, out_dir, baseline)
    summary = os.path.join(out_dir, "summary.csv")
    emit_summary_csv(list(cache.values()), summary)
    written.append(summary)
    return written
