"""The end-to-end experiment engine.

One grid run produces: a per-fold baseline, a random-undersampling sweep over
the USR grid, and one record per (method, sampling, usr, osr, fold) cell.

Ordering follows the generative-oversampling protocol: a fold's generator is
trained on the fold's full training part BEFORE undersampling, then reused
across every (usr, osr) cell of that fold. Classic oversamplers operate on
the already-undersampled training part. Test folds are never resampled and
never seen by generators.

Records are sorted canonically before persistence, so the output files do not
depend on scheduling order; rejection timeouts become status="timeout" rows.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import boosting, resampling, samplers
from .data import Dataset, FoldSplit, compute_ir, make_folds
from .errors import ConfigError, DrawLimitExceeded, EmptyGenerationRegion, RatioError
from .models import ModelSpec, TrainedGenerator, spec_from_method_name
from .samplers import DEFAULT_DRAW_LIMIT, training_view
from .training import train

BASELINE_METHOD = "baseline"
UNDERSAMPLE_METHOD = "random_under"

RESULTS_COLUMNS = (
    "dataset,method,sampling,usr,osr,fold,train_f1,test_f1,wall_time_ms,status"
)


@dataclass(frozen=True)
class MethodPlan:
    """One benchmarked method: a classic resampler or a generative model."""

    name: str
    sampling: str | None = None  # minority | conditional | rejection (generative only)

    def __post_init__(self):
        if self.is_generative:
            if self.sampling not in samplers.STRATEGIES:
                raise ConfigError(
                    f"generative method {self.name!r} needs a sampling strategy, "
                    f"got {self.sampling!r}"
                )
        else:
            if self.name not in resampling.CLASSIC_OVERSAMPLERS:
                raise ConfigError(f"unknown method {self.name!r}")
            if self.sampling is not None:
                raise ConfigError(f"classic method {self.name!r} takes no sampling strategy")

    @property
    def is_generative(self) -> bool:
        return self.name not in resampling.CLASSIC_OVERSAMPLERS

    @property
    def sampling_label(self) -> str:
        return self.sampling or ""


@dataclass(frozen=True)
class GridConfig:
    usr_grid: tuple[float, ...]
    osr_grid: tuple[float, ...]
    methods: tuple[MethodPlan, ...] = ()
    folds: int = 10
    master_seed: int = 0
    draw_limit: int = DEFAULT_DRAW_LIMIT
    validation_fraction: float = 0.1
    jobs: int = 1
    timing: bool = False
    classifier: boosting.BoostConfig = field(default_factory=boosting.BoostConfig)
    model: ModelSpec | None = None  # training configuration template for DGMs

    def __post_init__(self):
        if not self.usr_grid:
            raise ConfigError("usr grid is empty")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")

    def validate_against(self, dataset: Dataset) -> None:
        ir = compute_ir(dataset.labels)
        for usr in self.usr_grid:
            if usr < ir - resampling.RATIO_TOL:
                raise RatioError(f"usr={usr} is below the dataset imbalance ratio {ir:.6g}")
        for usr in self.usr_grid:
            for osr in self.osr_grid:
                if osr >= usr - resampling.RATIO_TOL:
                    return
        if self.methods:
            raise RatioError("no osr grid value is >= any usr grid value")


@dataclass
class ExperimentRecord:
    dataset: str
    method: str
    sampling: str
    usr: float
    osr: float
    fold: int
    train_f1: float | None
    test_f1: float | None
    wall_time_ms: int = 0
    status: str = "ok"

    def sort_key(self):
        return (self.dataset, self.method, self.sampling, self.usr, self.osr, self.fold)

    def to_csv_row(self) -> list[str]:
        return [
            self.dataset,
            self.method,
            self.sampling,
            format_ratio(self.usr),
            format_ratio(self.osr),
            str(self.fold),
            "" if self.train_f1 is None else f"{self.train_f1:.6f}",
            "" if self.test_f1 is None else f"{self.test_f1:.6f}",
            str(self.wall_time_ms),
            self.status,
        ]


def format_ratio(x: float) -> str:
    return f"{x:.6g}"


def cell_seed(master_seed: int, dataset: str, method: str, sampling: str, fold: int) -> int:
    """Stable per-cell seed: hash of (master seed, dataset, method, strategy, fold)."""
    text = f"{master_seed}|{dataset}|{method}|{sampling}|{fold}"
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _ratio_key(x: float) -> int:
    return int(round(x * 1e9))


def _undersample_rng(grid: GridConfig, dataset: str, fold: int,
                     usr: float) -> np.random.Generator:
    """Undersampling stream shared by the sweep and every oversampling cell,
    so a cell with osr == usr reproduces the undersampling-only record."""
    seed = cell_seed(grid.master_seed, dataset, UNDERSAMPLE_METHOD, "", fold)
    return np.random.default_rng([seed % (2**31), _ratio_key(usr)])


def default_usr_grid(ir: float) -> tuple[float, ...]:
    """Coarse 0.1 steps; extreme imbalance gets a geometric grid instead."""
    if ir >= 0.05:
        start = np.ceil(ir * 10.0) / 10.0
        return tuple(round(x, 10) for x in np.arange(start, 1.0 + 1e-9, 0.1))
    grid = []
    factor = 2.0
    while ir * factor <= min(64.0 * ir, 1.0):
        grid.append(round(ir * factor, 12))
        factor *= 2.0
    return tuple(grid) or (min(1.0, ir * 2.0),)


def _fit_and_score(train_ds: Dataset, test_ds: Dataset,
                   config: boosting.BoostConfig) -> tuple[float, float]:
    model = boosting.fit(train_ds, config)
    train_f1 = boosting.f1(boosting.predict_labels(model, train_ds.features), train_ds.labels)
    test_f1 = boosting.f1(boosting.predict_labels(model, test_ds.features), test_ds.labels)
    return train_f1, test_f1


def _elapsed_ms(start: float, timing: bool) -> int:
    return int(round((time.perf_counter() - start) * 1000.0)) if timing else 0


def run_baseline(dataset: Dataset, folds: FoldSplit, grid: GridConfig) -> list[ExperimentRecord]:
    """Per-fold train/test f1 with no resampling; usr = osr = dataset IR."""
    ir = compute_ir(dataset.labels)
    records = []
    for fold in range(folds.fold_count):
        start = time.perf_counter()
        train_ds = dataset.subset(folds.train_indices(fold))
        test_ds = dataset.subset(folds.test_indices(fold))
        train_f1, test_f1 = _fit_and_score(train_ds, test_ds, grid.classifier)
        records.append(ExperimentRecord(
            dataset=dataset.name, method=BASELINE_METHOD, sampling="",
            usr=ir, osr=ir, fold=fold, train_f1=train_f1, test_f1=test_f1,
            wall_time_ms=_elapsed_ms(start, grid.timing),
        ))
    return records


def run_undersampling_sweep(dataset: Dataset, folds: FoldSplit,
                            grid: GridConfig) -> list[ExperimentRecord]:
    records = []
    for usr in grid.usr_grid:
        for fold in range(folds.fold_count):
            start = time.perf_counter()
            rng = _undersample_rng(grid, dataset.name, fold, usr)
            train_ds = dataset.subset(folds.train_indices(fold))
            test_ds = dataset.subset(folds.test_indices(fold))
            reduced = resampling.random_undersample(train_ds, usr, rng)
            train_f1, test_f1 = _fit_and_score(reduced, test_ds, grid.classifier)
            records.append(ExperimentRecord(
                dataset=dataset.name, method=UNDERSAMPLE_METHOD, sampling="",
                usr=usr, osr=usr, fold=fold, train_f1=train_f1, test_f1=test_f1,
                wall_time_ms=_elapsed_ms(start, grid.timing),
            ))
    return records


def train_fold_generator(dataset: Dataset, folds: FoldSplit, fold: int,
                         plan: MethodPlan, grid: GridConfig) -> TrainedGenerator:
    """Train one generator on the fold's full training part (before any
    undersampling), reused across every (usr, osr) cell of the fold."""
    seed = cell_seed(grid.master_seed, dataset.name, plan.name, plan.sampling_label, fold)
    template = grid.model or ModelSpec(architecture="vae")
    spec = spec_from_method_name(plan.name, **{
        **{k: getattr(template, k) for k in (
            "hidden", "latent", "embedding", "tau", "epochs", "batch_size",
            "lr_autoencoder", "lr_adversarial", "n_critic", "clamp",
            "penalty_weight", "instance_noise", "patience",
        )},
        **samplers.spec_flags_for_strategy(plan.sampling),
        "seed": seed % (2**31),
    })
    train_main = folds.train_main_indices(fold)
    val = folds.validation_indices(fold)
    view = training_view(dataset, plan.sampling, indices=train_main)
    val_view = training_view(dataset, plan.sampling, indices=val) if len(val) else None
    if val_view is not None and len(val_view.rows) == 0:
        val_view = None
    return train(spec, view, val_view, seed=seed % (2**31), strategy=plan.sampling)


def _synthesize_minority(plan: MethodPlan, reduced: Dataset, need: int,
                         generator: TrainedGenerator | None, draw_limit: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Rows to append (features only, all labeled minority)."""
    minority_rows = reduced.features[reduced.labels == 1]
    majority_rows = reduced.features[reduced.labels == 0]
    if plan.is_generative:
        return samplers.draw(generator, plan.sampling, need, class_label=1,
                             rng=rng, draw_limit=draw_limit)
    try:
        return resampling.smote_variants(
            plan.name, minority_rows, majority_rows, need, rng, meta=reduced.meta
        )
    except EmptyGenerationRegion:
        # documented fallback: degenerate variant regions fall back to SMOTE
        return resampling.smote(minority_rows, need,
                                k=min(5, len(minority_rows) - 1), rng=rng)


def run_oversampling_cell(dataset: Dataset, folds: FoldSplit, fold: int, usr: float,
                          osr: float, plan: MethodPlan, grid: GridConfig,
                          generator: TrainedGenerator | None = None) -> ExperimentRecord:
    start = time.perf_counter()
    seed = cell_seed(grid.master_seed, dataset.name, plan.name, plan.sampling_label, fold)
    rng = np.random.default_rng([seed % (2**31), _ratio_key(usr), _ratio_key(osr)])
    train_ds = dataset.subset(folds.train_indices(fold))
    test_ds = dataset.subset(folds.test_indices(fold))
    reduced = resampling.random_undersample(
        train_ds, usr, _undersample_rng(grid, dataset.name, fold, usr)
    )
    neg, pos = reduced.class_counts()
    need = resampling.required_synthetic((neg, pos), osr)
    base = ExperimentRecord(
        dataset=dataset.name, method=plan.name, sampling=plan.sampling_label,
        usr=usr, osr=osr, fold=fold, train_f1=None, test_f1=None,
    )
    if need > 0:
        try:
            synthetic = _synthesize_minority(plan, reduced, need, generator,
                                             grid.draw_limit, rng)
        except DrawLimitExceeded:
            base.status = "timeout"
            base.wall_time_ms = _elapsed_ms(start, grid.timing)
            return base
        features = np.concatenate([reduced.features, synthetic], axis=0)
        labels = np.concatenate([reduced.labels, np.ones(len(synthetic), dtype=np.int64)])
        augmented = Dataset(name=reduced.name, features=features, labels=labels,
                            meta=reduced.meta, label_name=reduced.label_name,
                            positive_class=reduced.positive_class)
    else:
        augmented = reduced
    train_f1, test_f1 = _fit_and_score(augmented, test_ds, grid.classifier)
    base.train_f1, base.test_f1 = train_f1, test_f1
    base.wall_time_ms = _elapsed_ms(start, grid.timing)
    return base


def _cells(grid: GridConfig) -> list[tuple[float, float]]:
    return [
        (usr, osr)
        for usr in grid.usr_grid
        for osr in grid.osr_grid
        if osr >= usr - resampling.RATIO_TOL
    ]


def _run_fold_task(dataset: Dataset, folds: FoldSplit, plan: MethodPlan,
                   fold: int, grid: GridConfig) -> list[ExperimentRecord]:
    generator = None
    if plan.is_generative:
        generator = train_fold_generator(dataset, folds, fold, plan, grid)
    return [
        run_oversampling_cell(dataset, folds, fold, usr, osr, plan, grid, generator)
        for usr, osr in _cells(grid)
    ]


def run_grid(dataset: Dataset, grid: GridConfig,
             folds: FoldSplit | None = None) -> list[ExperimentRecord]:
    """Baseline + undersampling sweep + all oversampling cells, sorted."""
    grid.validate_against(dataset)
    if folds is None:
        folds = make_folds(dataset, grid.folds, grid.validation_fraction,
                           seed=grid.master_seed)
    records = run_baseline(dataset, folds, grid)
    records += run_undersampling_sweep(dataset, folds, grid)
    tasks = [(plan, fold) for plan in grid.methods for fold in range(folds.fold_count)]
    if grid.jobs > 1 and tasks:
        with concurrent.futures.ProcessPoolExecutor(max_workers=grid.jobs) as pool:
            futures = [
                pool.submit(_run_fold_task, dataset, folds, plan, fold, grid)
                for plan, fold in tasks
            ]
            for future in futures:
                records += future.result()
    else:
        for plan, fold in tasks:
            records += _run_fold_task(dataset, folds, plan, fold, grid)
    records.sort(key=ExperimentRecord.sort_key)
    return records


# -- persistence -------------------------------------------------------------------


def records_to_csv(records: list[ExperimentRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULTS_COLUMNS.split(","))
    for record in sorted(records, key=ExperimentRecord.sort_key):
        writer.writerow(record.to_csv_row())
    return buf.getvalue()


def records_from_csv(text: str) -> list[ExperimentRecord]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != RESULTS_COLUMNS.split(","):
        raise ConfigError(f"unexpected results.csv header: {header}")
    out = []
    for row in reader:
        out.append(ExperimentRecord(
            dataset=row[0], method=row[1], sampling=row[2],
            usr=float(row[3]), osr=float(row[4]), fold=int(row[5]),
            train_f1=float(row[6]) if row[6] else None,
            test_f1=float(row[7]) if row[7] else None,
            wall_time_ms=int(row[8]), status=row[9],
        ))
    return out


# -- summaries ---------------------------------------------------------------------


@dataclass
class SummaryRow:
    dataset: str
    method: str
    sampling: str
    usr: float | None
    osr: float | None
    train_mean: float | None
    train_std: float | None
    test_mean: float | None
    test_std: float | None
    status: str = "ok"


def _sample_std(values: list[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def summarize(records: list[ExperimentRecord]) -> list[SummaryRow]:
    """Best (usr, osr) cell per (dataset, method, sampling) by mean test f1.

    Ties break to the smallest (usr, osr); a cell is eligible only when every
    fold finished (no timeout); methods with no eligible cell report Timeout.
    """
    if not records:
        raise ConfigError("no records to summarize")
    groups: dict[tuple[str, str, str], dict[tuple[float, float], list[ExperimentRecord]]] = {}
    for r in records:
        key = (r.dataset, r.method, r.sampling)
        groups.setdefault(key, {}).setdefault((r.usr, r.osr), []).append(r)
    out = []
    for (ds, method, sampling), cells in sorted(groups.items()):
        best: tuple[float, tuple[float, float]] | None = None
        for (usr, osr), cell_records in sorted(cells.items()):
            if any(r.status != "ok" for r in cell_records):
                continue
            mean_test = float(np.mean([r.test_f1 for r in cell_records]))
            if best is None or mean_test > best[0] + 1e-15:
                best = (mean_test, (usr, osr))
        if best is None:
            out.append(SummaryRow(ds, method, sampling, None, None,
                                  None, None, None, None, status="timeout"))
            continue
        usr, osr = best[1]
        cell_records = cells[(usr, osr)]
        trains = [r.train_f1 for r in cell_records]
        tests = [r.test_f1 for r in cell_records]
        out.append(SummaryRow(
            ds, method, sampling, usr, osr,
            float(np.mean(trains)), _sample_std(trains),
            float(np.mean(tests)), _sample_std(tests),
        ))
    return out


def heatmap_cells(records: list[ExperimentRecord], method: str,
                  sampling: str = "") -> dict[tuple[float, float], float]:
    """Mean test f1 per (usr, osr) cell for one method (complete cells only)."""
    cells: dict[tuple[float, float], list[float]] = {}
    for r in records:
        if r.method != method or r.sampling != sampling or r.status != "ok":
            continue
        cells.setdefault((r.usr, r.osr), []).append(r.test_f1)
    return {k: float(np.mean(v)) for k, v in cells.items()}


def audit_fingerprints(generators: list[TrainedGenerator], folds: FoldSplit) -> bool:
    """Check that no generator saw a test-fold row (fingerprint audit)."""
    for fold, gen in enumerate(generators):
        test = set(folds.test_indices(fold).tolist())
        rows = set(gen.fingerprint.get("row_indices", []))
        if rows & test:
            return False
    return True
