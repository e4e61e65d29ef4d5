"""The three strategies for class-targeted synthetic samples.

minority: train on minority rows only, every draw is minority by construction.
conditional: the one-hot label conditions the generator and discriminator.
rejection: the label is one extra binary variable; draws of the wrong class
are discarded, bounded by a draw limit (exhaustion is the protocol's
"Timeout").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, discretize, with_label_variable
from .errors import ConfigError, DrawLimitExceeded, StrategyMismatch
from .models import TrainedGenerator, TrainingView, generate, onehot_condition

STRATEGIES = ("minority", "conditional", "rejection")
DEFAULT_DRAW_LIMIT = 10_000


@dataclass(frozen=True)
class SamplingStrategy:
    kind: str
    draw_limit: int = DEFAULT_DRAW_LIMIT
    batch_size: int = 256

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigError(f"unknown sampling strategy {self.kind!r}")
        if self.kind == "rejection" and self.draw_limit < 1:
            raise ConfigError(f"draw_limit must be >= 1, got {self.draw_limit}")


def spec_flags_for_strategy(kind: str) -> dict[str, bool]:
    """ModelSpec flags a strategy requires."""
    if kind == "conditional":
        return {"conditional": True, "label_as_variable": False}
    if kind == "rejection":
        return {"conditional": False, "label_as_variable": True}
    return {"conditional": False, "label_as_variable": False}


def check_strategy(trained: TrainedGenerator, kind: str) -> None:
    expected = spec_flags_for_strategy(kind)
    actual = {
        "conditional": trained.spec.conditional,
        "label_as_variable": trained.spec.label_as_variable,
    }
    if actual != expected:
        raise StrategyMismatch(
            f"model was trained for strategy {trained.strategy!r}; "
            f"{kind!r} sampling needs flags {expected}, model has {actual}"
        )


def training_view(dataset: Dataset, kind: str,
                  indices: np.ndarray | None = None) -> TrainingView:
    """Rows a generator should train on under the given strategy.

    ``indices`` restricts the view to a subset (a fold's training part);
    row provenance is kept for the training-set fingerprint.
    """
    if kind not in STRATEGIES:
        raise ConfigError(f"unknown sampling strategy {kind!r}")
    if indices is None:
        indices = np.arange(dataset.n_rows)
    indices = np.asarray(indices, dtype=np.int64)
    rows = dataset.features[indices]
    labels = dataset.labels[indices]
    if kind == "minority":
        keep = labels == 1
        return TrainingView(rows=rows[keep], meta=dataset.meta,
                            row_indices=indices[keep])
    if kind == "conditional":
        return TrainingView(rows=rows, meta=dataset.meta,
                            conditions=onehot_condition(labels),
                            row_indices=indices)
    rows_with_label = np.concatenate([rows, labels[:, None].astype(np.float64)], axis=1)
    return TrainingView(rows=rows_with_label, meta=with_label_variable(dataset.meta),
                        row_indices=indices)


def draw_minority(trained: TrainedGenerator, n: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly n discretized rows; all are minority by construction."""
    check_strategy(trained, "minority")
    raw = generate(trained, n, rng)
    return discretize(raw, trained.meta)


def draw_conditional(trained: TrainedGenerator, n: int, class_label: int,
                     rng: np.random.Generator) -> np.ndarray:
    """n discretized rows generated under a fixed one-hot class condition."""
    check_strategy(trained, "conditional")
    raw = generate(trained, n, rng, condition=int(class_label))
    return discretize(raw, trained.meta)


def draw_rejection(trained: TrainedGenerator, n: int, class_label: int,
                   draw_limit: int = DEFAULT_DRAW_LIMIT,
                   rng: np.random.Generator | None = None,
                   batch_size: int = 256) -> np.ndarray:
    """Generate, discretize, and keep rows whose label variable matches.

    Counts individual row draws against ``draw_limit``; raises
    DrawLimitExceeded after exactly ``draw_limit`` draws if n rows of the
    desired class have not been found. Returned rows have the label variable
    stripped.
    """
    check_strategy(trained, "rejection")
    if draw_limit < 1:
        raise ConfigError(f"draw_limit must be >= 1, got {draw_limit}")
    if rng is None:
        rng = np.random.default_rng()
    target = float(int(class_label))
    kept: list[np.ndarray] = []
    kept_count = 0
    draws = 0
    while kept_count < n:
        if draws >= draw_limit:
            raise DrawLimitExceeded(
                f"rejection sampling obtained {kept_count}/{n} rows of class "
                f"{class_label} after {draws} draws",
                kept=kept_count,
                draws=draws,
            )
        batch = min(batch_size, draw_limit - draws)
        rows = discretize(generate(trained, batch, rng), trained.meta)
        draws += batch
        matched = rows[rows[:, -1] == target]
        if len(matched):
            kept.append(matched[:, :-1])
            kept_count += len(matched)
    return np.concatenate(kept, axis=0)[:n]


def draw(trained: TrainedGenerator, strategy: str, n: int, class_label: int,
         rng: np.random.Generator, draw_limit: int = DEFAULT_DRAW_LIMIT,
         batch_size: int = 256) -> np.ndarray:
    """Strategy dispatch; every row of the result belongs to ``class_label``."""
    if strategy == "minority":
        if class_label != 1:
            raise ConfigError("minority sampling can only produce minority rows")
        return draw_minority(trained, n, rng)
    if strategy == "conditional":
        return draw_conditional(trained, n, class_label, rng)
    if strategy == "rejection":
        return draw_rejection(trained, n, class_label, draw_limit, rng, batch_size)
    raise ConfigError(f"unknown sampling strategy {strategy!r}")
