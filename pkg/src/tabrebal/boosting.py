"""Gradient-boosted decision trees on logistic loss, plus f1 and grid search.

Second-order boosting with exact greedy splits: each round fits a
depth-limited regression tree to the per-row gradients/hessians of the
logistic loss, maximizing the regularized gain

    gain = 1/2 * (GL^2/(HL+l2) + GR^2/(HR+l2) - G^2/(H+l2))

over every feature threshold, then shrinks leaf weights by the learning rate.
Fits are deterministic: ties in gain resolve to the lowest feature index and
threshold, neighbor sorts are stable.
"""

from __future__ import annotations

import json
from dataclasses import astuple, dataclass
from typing import Iterable

import numpy as np

from .data import Dataset, FoldSplit
from .errors import ConfigError, DegenerateLabels, ShapeError

PROB_EPS = 1e-12


@dataclass(frozen=True, order=True)
class BoostConfig:
    n_estimators: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_child_weight: float = 1.0
    l2_regularization: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ConfigError(f"n_estimators must be >= 1, got {self.n_estimators}")
        if self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1, got {self.max_depth}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError(f"learning_rate must lie in (0, 1], got {self.learning_rate}")


DEFAULT_GRID: tuple[BoostConfig, ...] = tuple(
    BoostConfig(n_estimators=n, max_depth=d, learning_rate=lr)
    for d in (2, 3, 4, 6)
    for n in (50, 100, 200)
    for lr in (0.1, 0.3)
)


@dataclass
class TreeNodes:
    """One regression tree in flat-array form.

    Internal nodes carry (feature, threshold, left, right); leaves carry the
    lr-scaled logit weight and have left == -1.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.left[node] != -1
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] < self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.left[node] != -1
        return self.leaf_value[node]

    def to_obj(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf_value": self.leaf_value.tolist(),
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "TreeNodes":
        return cls(
            feature=np.asarray(obj["feature"], dtype=np.int64),
            threshold=np.asarray(obj["threshold"], dtype=np.float64),
            left=np.asarray(obj["left"], dtype=np.int64),
            right=np.asarray(obj["right"], dtype=np.int64),
            leaf_value=np.asarray(obj["leaf_value"], dtype=np.float64),
        )


@dataclass
class BoostModel:
    config: BoostConfig
    base_score: float
    trees: list[TreeNodes]
    n_features: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "config": {
                    "n_estimators": self.config.n_estimators,
                    "max_depth": self.config.max_depth,
                    "learning_rate": self.config.learning_rate,
                    "min_child_weight": self.config.min_child_weight,
                    "l2_regularization": self.config.l2_regularization,
                    "seed": self.config.seed,
                },
                "base_score": self.base_score,
                "n_features": self.n_features,
                "trees": [t.to_obj() for t in self.trees],
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, raw: str) -> "BoostModel":
        obj = json.loads(raw)
        return cls(
            config=BoostConfig(**obj["config"]),
            base_score=float(obj["base_score"]),
            trees=[TreeNodes.from_obj(t) for t in obj["trees"]],
            n_features=int(obj["n_features"]),
        )


class _TreeBuilder:
    """Greedy exact-split construction for one boosting round."""

    def __init__(self, X: np.ndarray, g: np.ndarray, h: np.ndarray, config: BoostConfig):
        self.X = X
        self.g = g
        self.h = h
        self.cfg = config
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.leaf_value: list[float] = []

    def _best_split(self, idx: np.ndarray) -> tuple[float, int, float] | None:
        cfg = self.cfg
        G, H = self.g[idx].sum(), self.h[idx].sum()
        parent = G * G / (H + cfg.l2_regularization)
        best: tuple[float, int, float] | None = None
        for j in range(self.X.shape[1]):
            xs = self.X[idx, j]
            order = np.argsort(xs, kind="stable")
            xs_sorted = xs[order]
            gl = np.cumsum(self.g[idx][order])[:-1]
            hl = np.cumsum(self.h[idx][order])[:-1]
            boundary = xs_sorted[:-1] < xs_sorted[1:]
            if not boundary.any():
                continue
            gr, hr = G - gl, H - hl
            valid = boundary & (hl >= cfg.min_child_weight) & (hr >= cfg.min_child_weight)
            if not valid.any():
                continue
            gains = 0.5 * (
                gl**2 / (hl + cfg.l2_regularization)
                + gr**2 / (hr + cfg.l2_regularization)
                - parent
            )
            gains[~valid] = -np.inf
            pos = int(np.argmax(gains))
            gain = float(gains[pos])
            if gain <= 1e-12:
                continue
            thr = 0.5 * (xs_sorted[pos] + xs_sorted[pos + 1])
            if best is None or gain > best[0] + 1e-15:
                best = (gain, j, float(thr))
        return best

    def build(self, idx: np.ndarray, depth: int) -> int:
        cfg = self.cfg
        node = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.leaf_value.append(0.0)
        split = self._best_split(idx) if depth < cfg.max_depth and len(idx) > 1 else None
        if split is None:
            G, H = self.g[idx].sum(), self.h[idx].sum()
            self.leaf_value[node] = -cfg.learning_rate * G / (H + cfg.l2_regularization)
            return node
        _, j, thr = split
        self.feature[node] = j
        self.threshold[node] = thr
        mask = self.X[idx, j] < thr
        self.left[node] = self.build(idx[mask], depth + 1)
        self.right[node] = self.build(idx[~mask], depth + 1)
        return node

    def finish(self) -> TreeNodes:
        return TreeNodes(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            leaf_value=np.asarray(self.leaf_value, dtype=np.float64),
        )


def fit(train: Dataset | tuple[np.ndarray, np.ndarray], config: BoostConfig) -> BoostModel:
    """Boost ``config.n_estimators`` rounds of second-order logistic trees."""
    if isinstance(train, Dataset):
        X, y = train.features, train.labels
    else:
        X, y = train
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise DegenerateLabels("training labels contain a single class")
    prior = float(np.clip(y.mean(), PROB_EPS, 1.0 - PROB_EPS))
    base_score = float(np.log(prior / (1.0 - prior)))
    margin = np.full(len(y), base_score)
    trees: list[TreeNodes] = []
    for _round in range(config.n_estimators):
        p = 1.0 / (1.0 + np.exp(-margin))
        g = p - y
        h = p * (1.0 - p)
        builder = _TreeBuilder(X, g, h, config)
        builder.build(np.arange(len(y)), 0)
        tree = builder.finish()
        trees.append(tree)
        margin += tree.predict(X)
    return BoostModel(config=config, base_score=base_score, trees=trees, n_features=X.shape[1])


def predict_margin(model: BoostModel, rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != model.n_features:
        raise ShapeError(
            f"prediction rows have width {rows.shape[-1]}, model expects {model.n_features}"
        )
    margin = np.full(len(rows), model.base_score)
    for tree in model.trees:
        margin += tree.predict(rows)
    return margin


def predict_proba(model: BoostModel, rows: np.ndarray) -> np.ndarray:
    """Sigmoid of summed leaf logits plus base score."""
    m = predict_margin(model, rows)
    return 1.0 / (1.0 + np.exp(-m))


def predict_labels(model: BoostModel, rows: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (predict_proba(model, rows) >= threshold).astype(np.int64)


def f1(predictions: np.ndarray, labels: np.ndarray) -> float:
    """f1 of the positive (minority) class; 0.0 when there are no true positives."""
    predictions = np.asarray(predictions).astype(np.int64)
    labels = np.asarray(labels).astype(np.int64)
    if predictions.shape != labels.shape:
        raise ShapeError(f"predictions {predictions.shape} vs labels {labels.shape}")
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    if tp == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def train_loss(model: BoostModel, X: np.ndarray, y: np.ndarray,
               n_trees: int | None = None) -> float:
    """Mean logistic loss using the first ``n_trees`` rounds (all by default)."""
    margin = np.full(len(y), model.base_score)
    for tree in model.trees[: len(model.trees) if n_trees is None else n_trees]:
        margin += tree.predict(np.asarray(X, dtype=np.float64))
    p = np.clip(1.0 / (1.0 + np.exp(-margin)), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def grid_search(dataset: Dataset, folds: FoldSplit,
                config_grid: Iterable[BoostConfig] = DEFAULT_GRID) -> BoostConfig:
    """The config maximizing mean test f1 over folds; ties break to the
    lexicographically smallest config (field order of BoostConfig)."""
    grid = list(config_grid)
    if not grid:
        raise ConfigError("hyperparameter grid is empty")
    best_config: BoostConfig | None = None
    best_score = -np.inf
    for config in grid:
        scores = []
        for fold in range(folds.fold_count):
            tr = folds.train_indices(fold)
            te = folds.test_indices(fold)
            model = fit((dataset.features[tr], dataset.labels[tr]), config)
            scores.append(f1(predict_labels(model, dataset.features[te]), dataset.labels[te]))
        mean_score = float(np.mean(scores))
        if (
            best_config is None
            or mean_score > best_score + 1e-15
            or (abs(mean_score - best_score) <= 1e-15 and astuple(config) < astuple(best_config))
        ):
            best_config, best_score = config, mean_score
    return best_config
