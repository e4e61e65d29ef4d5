"""Random under/oversampling and the SMOTE family of interpolating oversamplers.

All neighbor searches are exact brute force (desk-scale data); distance ties
break by row index, target counts round half-up, and per-row quotas use
largest-remainder rounding so they always sum exactly to the request.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset, VariableMeta, variable_slices
from .errors import EmptyGenerationRegion, InsufficientClassRows, RatioError

RATIO_TOL = 1e-12

METHOD_LABELS = {
    "random_under": "RandomUnderSampler",
    "random_over": "RandomOverSampler",
    "smote": "SMOTE",
    "smote_nc": "SMOTENC",
    "borderline_smote": "BorderlineSMOTE",
    "adasyn": "ADASYN",
    "kmeans_smote": "KMeansSMOTE",
}

CLASSIC_OVERSAMPLERS = (
    "random_over",
    "smote",
    "smote_nc",
    "borderline_smote",
    "adasyn",
    "kmeans_smote",
)


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def random_undersample(dataset: Dataset, usr: float, rng: np.random.Generator) -> Dataset:
    """Drop majority rows uniformly until |minority| / |majority| reaches usr.

    Row order of the survivors matches the input, so usr == IR is an exact
    identity.
    """
    minority = np.flatnonzero(dataset.labels == 1)
    majority = np.flatnonzero(dataset.labels == 0)
    if len(minority) == 0 or len(majority) == 0:
        raise RatioError("undersampling needs both classes present")
    current_ir = len(minority) / len(majority)
    if usr < current_ir - RATIO_TOL:
        raise RatioError(f"usr={usr} is below the current imbalance ratio {current_ir:.6g}")
    keep_majority = min(len(majority), round_half_up(len(minority) / usr))
    if keep_majority == len(majority):
        return dataset
    kept = rng.choice(majority, size=keep_majority, replace=False)
    keep_idx = np.sort(np.concatenate([minority, kept]))
    return dataset.subset(keep_idx)


def required_synthetic(counts: tuple[int, int], osr: float) -> int:
    """Synthetic minority rows needed to move (majority, minority) counts to osr."""
    majority, minority = counts
    return max(0, round_half_up(osr * majority) - minority)


def random_oversample(minority_rows: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """n exact duplicates drawn uniformly with replacement."""
    minority_rows = np.asarray(minority_rows, dtype=np.float64)
    if len(minority_rows) == 0:
        raise InsufficientClassRows("random oversampling needs at least one minority row")
    if n == 0:
        return minority_rows[:0].copy()
    picks = rng.integers(0, len(minority_rows), size=n)
    return minority_rows[picks].copy()


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)


def _knn_indices(query: np.ndarray, pool: np.ndarray, k: int,
                 exclude_self: bool = False) -> np.ndarray:
    """Indices into ``pool`` of the k nearest neighbors of each query row.

    ``exclude_self`` skips the zero-distance self match when query is pool.
    Ties break by row index (stable sort on distance).
    """
    d = _pairwise_sq_dists(query, pool)
    if exclude_self:
        np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    return order[:, :k]


def smote(minority_rows: np.ndarray, n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Linear interpolation between minority rows and their k-NN.

    Each synthetic row is x + lam * (x_nn - x) with lam ~ uniform(0, 1).
    """
    minority_rows = np.asarray(minority_rows, dtype=np.float64)
    if len(minority_rows) <= k:
        raise InsufficientClassRows(
            f"SMOTE needs more than k={k} minority rows, got {len(minority_rows)}"
        )
    if n == 0:
        return minority_rows[:0].copy()
    neighbors = _knn_indices(minority_rows, minority_rows, k, exclude_self=True)
    base = rng.integers(0, len(minority_rows), size=n)
    picked = neighbors[base, rng.integers(0, k, size=n)]
    lam = rng.random((n, 1))
    x = minority_rows[base]
    return x + lam * (minority_rows[picked] - x)


def _interpolate_from(base_rows: np.ndarray, quotas: np.ndarray, neighbors: np.ndarray,
                      neighbor_pool: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """SMOTE-style interpolation with a fixed per-base-row quota."""
    pieces = []
    for i, count in enumerate(quotas):
        if count == 0:
            continue
        nn = neighbors[i]
        picked = neighbor_pool[nn[rng.integers(0, len(nn), size=count)]]
        lam = rng.random((count, 1))
        pieces.append(base_rows[i] + lam * (picked - base_rows[i]))
    if not pieces:
        return base_rows[:0].copy()
    return np.concatenate(pieces, axis=0)


def largest_remainder(weights: np.ndarray, n: int) -> np.ndarray:
    """Integer quotas proportional to ``weights`` that sum exactly to n."""
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise EmptyGenerationRegion("all quota weights are zero")
    exact = n * weights / total
    quotas = np.floor(exact).astype(np.int64)
    remainder = n - int(quotas.sum())
    if remainder > 0:
        # ties in fractional part break by row index
        order = np.lexsort((np.arange(len(weights)), -(exact - quotas)))
        quotas[order[:remainder]] += 1
    return quotas


def borderline_smote(minority_rows: np.ndarray, majority_rows: np.ndarray, n: int,
                     k: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Interpolate only from "danger" minority rows.

    A minority row is in danger when its m-neighborhood among all rows holds
    at least m/2 but fewer than m majority rows; rows whose neighborhood is
    all-majority count as noise and are skipped.
    """
    minority_rows = np.asarray(minority_rows, dtype=np.float64)
    majority_rows = np.asarray(majority_rows, dtype=np.float64)
    if len(minority_rows) <= k:
        raise InsufficientClassRows(
            f"borderline SMOTE needs more than k={k} minority rows, got {len(minority_rows)}"
        )
    all_rows = np.concatenate([minority_rows, majority_rows], axis=0)
    is_majority = np.concatenate(
        [np.zeros(len(minority_rows), dtype=bool), np.ones(len(majority_rows), dtype=bool)]
    )
    m_eff = min(m, len(all_rows) - 1)
    # minority rows come first in all_rows, so row i's self match is column i
    d = _pairwise_sq_dists(minority_rows, all_rows)
    d[np.arange(len(minority_rows)), np.arange(len(minority_rows))] = np.inf
    hood = np.argsort(d, axis=1, kind="stable")[:, :m_eff]
    counts = is_majority[hood].sum(axis=1)
    danger = np.flatnonzero((counts >= m_eff / 2.0) & (counts < m_eff))
    if len(danger) == 0:
        raise EmptyGenerationRegion("borderline SMOTE found no danger rows")
    d_min = _pairwise_sq_dists(minority_rows[danger], minority_rows)
    d_min[np.arange(len(danger)), danger] = np.inf
    neighbors = np.argsort(d_min, axis=1, kind="stable")[:, :k]
    quotas = largest_remainder(np.ones(len(danger)), n)
    return _interpolate_from(minority_rows[danger], quotas, neighbors, minority_rows, rng)


def adasyn(minority_rows: np.ndarray, majority_rows: np.ndarray, n: int, k: int,
           rng: np.random.Generator) -> np.ndarray:
    """Quota per minority row proportional to the majority fraction among its
    k nearest neighbors in the full data, largest-remainder normalized to n."""
    minority_rows = np.asarray(minority_rows, dtype=np.float64)
    majority_rows = np.asarray(majority_rows, dtype=np.float64)
    if len(minority_rows) <= k:
        raise InsufficientClassRows(
            f"ADASYN needs more than k={k} minority rows, got {len(minority_rows)}"
        )
    all_rows = np.concatenate([minority_rows, majority_rows], axis=0)
    is_majority = np.concatenate(
        [np.zeros(len(minority_rows), dtype=bool), np.ones(len(majority_rows), dtype=bool)]
    )
    d = _pairwise_sq_dists(minority_rows, all_rows)
    d[np.arange(len(minority_rows)), np.arange(len(minority_rows))] = np.inf
    hood = np.argsort(d, axis=1, kind="stable")[:, :k]
    ratios = is_majority[hood].mean(axis=1)
    if ratios.sum() <= 0:
        raise EmptyGenerationRegion("ADASYN found no majority neighbors to adapt to")
    quotas = largest_remainder(ratios, n)
    neighbors = _knn_indices(minority_rows, minority_rows, k, exclude_self=True)
    return _interpolate_from(minority_rows, quotas, neighbors, minority_rows, rng)


def _kmeans(rows: np.ndarray, n_clusters: int, rng: np.random.Generator,
            n_iter: int = 50) -> np.ndarray:
    """Plain Lloyd's algorithm, seeded; returns the cluster label per row."""
    n = len(rows)
    n_clusters = min(n_clusters, n)
    centers = rows[rng.choice(n, size=n_clusters, replace=False)].copy()
    labels = np.full(n, -1, dtype=np.int64)
    for _step in range(n_iter):
        new_labels = np.argmin(_pairwise_sq_dists(rows, centers), axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(n_clusters):
            members = rows[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return labels


def kmeans_smote(minority_rows: np.ndarray, majority_rows: np.ndarray, n: int, k: int,
                 rng: np.random.Generator, n_clusters: int = 8,
                 minority_threshold: float = 0.5, density_exponent: float = 2.0) -> np.ndarray:
    """SMOTE inside clusters dominated by the minority class.

    Clusters whose minority fraction exceeds the threshold are eligible; the
    per-cluster quota is weighted by sparsity (mean pairwise minority distance
    raised to ``density_exponent``, per minority row).
    """
    minority_rows = np.asarray(minority_rows, dtype=np.float64)
    majority_rows = np.asarray(majority_rows, dtype=np.float64)
    if len(minority_rows) <= 1:
        raise InsufficientClassRows("k-means SMOTE needs at least 2 minority rows")
    all_rows = np.concatenate([minority_rows, majority_rows], axis=0)
    is_minority = np.concatenate(
        [np.ones(len(minority_rows), dtype=bool), np.zeros(len(majority_rows), dtype=bool)]
    )
    labels = _kmeans(all_rows, n_clusters, rng)
    eligible: list[np.ndarray] = []
    sparsity: list[float] = []
    for c in np.unique(labels):
        in_cluster = labels == c
        members = np.flatnonzero(in_cluster & is_minority)
        if len(members) < 2:
            continue
        frac = len(members) / int(in_cluster.sum())
        if frac <= minority_threshold:
            continue
        pts = all_rows[members]
        d = np.sqrt(_pairwise_sq_dists(pts, pts))
        mean_dist = d[np.triu_indices(len(pts), k=1)].mean()
        eligible.append(members)
        sparsity.append((max(mean_dist, 1e-12) ** density_exponent) / len(members))
    if not eligible:
        raise EmptyGenerationRegion("k-means SMOTE found no eligible minority cluster")
    cluster_quotas = largest_remainder(np.asarray(sparsity), n)
    pieces = []
    for members, quota in zip(eligible, cluster_quotas):
        if quota == 0:
            continue
        pts = all_rows[members]
        k_eff = min(k, len(pts) - 1)
        neighbors = _knn_indices(pts, pts, k_eff, exclude_self=True)
        base_quotas = largest_remainder(np.ones(len(pts)), int(quota))
        pieces.append(_interpolate_from(pts, base_quotas, neighbors, pts, rng))
    if not pieces:
        return minority_rows[:0].copy()
    return np.concatenate(pieces, axis=0)


def _split_kinds(meta: list[VariableMeta]) -> tuple[list[int], list[slice]]:
    """Numerical column indices and the categorical/binary block slices."""
    numeric_cols: list[int] = []
    cat_blocks: list[slice] = []
    for v, sl in zip(meta, variable_slices(meta)):
        if v.kind == "numerical":
            numeric_cols.append(sl.start)
        else:
            cat_blocks.append(sl)
    return numeric_cols, cat_blocks


def smote_nc(minority_rows: np.ndarray, n: int, k: int, meta: list[VariableMeta],
             rng: np.random.Generator) -> np.ndarray:
    """SMOTE for mixed data: numericals interpolate, categoricals take the
    neighborhood mode, and mismatching categories add a constant distance
    penalty (the median of the numerical standard deviations)."""
    minority_rows = np.asarray(minority_rows, dtype=np.float64)
    if len(minority_rows) <= k:
        raise InsufficientClassRows(
            f"SMOTE-NC needs more than k={k} minority rows, got {len(minority_rows)}"
        )
    numeric_cols, cat_blocks = _split_kinds(meta)
    if numeric_cols:
        stds = minority_rows[:, numeric_cols].std(axis=0)
        penalty = float(np.median(stds))
    else:
        penalty = 1.0
    if penalty <= 0:
        penalty = 1e-6

    num = minority_rows[:, numeric_cols] if numeric_cols else minority_rows[:, :0]
    d2 = _pairwise_sq_dists(num, num) if numeric_cols else np.zeros((len(minority_rows),) * 2)
    for sl in cat_blocks:
        block = minority_rows[:, sl]
        codes = np.argmax(block, axis=1) if sl.stop - sl.start > 1 else block[:, 0]
        mismatch = codes[:, None] != codes[None, :]
        d2 = d2 + mismatch * penalty**2
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    neighbors = order[:, :k]

    if n == 0:
        return minority_rows[:0].copy()
    base = rng.integers(0, len(minority_rows), size=n)
    picked = neighbors[base, rng.integers(0, k, size=n)]
    lam = rng.random(n)

    out = np.empty((n, minority_rows.shape[1]))
    if numeric_cols:
        x = minority_rows[np.ix_(base, numeric_cols)]
        y = minority_rows[np.ix_(picked, numeric_cols)]
        out[:, numeric_cols] = x + lam[:, None] * (y - x)
    for sl in cat_blocks:
        width = sl.stop - sl.start
        block = minority_rows[:, sl]
        if width > 1:
            codes = np.argmax(block, axis=1)
        else:
            codes = (block[:, 0] >= 0.5).astype(np.int64)
        hood_codes = codes[neighbors[base]]  # (n, k) categories among the k neighbors
        filled = np.zeros((n, width))
        for i in range(n):
            counts = np.bincount(hood_codes[i], minlength=max(2, width))
            mode = int(np.argmax(counts))  # argmax: lowest index wins ties
            if width > 1:
                filled[i, mode] = 1.0
            else:
                filled[i, 0] = float(mode)
        out[:, sl] = filled
    return out


def smote_variants(method: str, minority_rows: np.ndarray, majority_rows: np.ndarray,
                   n: int, rng: np.random.Generator, *, k: int = 5, m: int = 10,
                   meta: list[VariableMeta] | None = None, n_clusters: int = 8) -> np.ndarray:
    """Dispatch to one of the SMOTE variants by method identifier."""
    if method == "smote":
        return smote(minority_rows, n, k, rng)
    if method == "borderline_smote":
        return borderline_smote(minority_rows, majority_rows, n, k, m, rng)
    if method == "adasyn":
        return adasyn(minority_rows, majority_rows, n, k, rng)
    if method == "kmeans_smote":
        return kmeans_smote(minority_rows, majority_rows, n, k, rng, n_clusters=n_clusters)
    if method == "smote_nc":
        if meta is None:
            raise EmptyGenerationRegion("SMOTE-NC requires variable metadata")
        return smote_nc(minority_rows, n, k, meta, rng)
    if method == "random_over":
        return random_oversample(minority_rows, n, rng)
    raise EmptyGenerationRegion(f"unknown oversampling method {method!r}")
