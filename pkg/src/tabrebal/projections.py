"""Two-dimensional diagnostics: PCA, exact t-SNE, and a self-organizing map.

All three are desk-scale implementations: dense PCA via SVD, O(n^2) t-SNE
with per-point bandwidth bisection, and a classic online SOM with a Gaussian
neighborhood. Inputs are the encoded feature rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateData


def pca2(rows: np.ndarray) -> np.ndarray:
    """Projection onto the top-2 principal components of mean-centered data.

    Component signs are fixed by making each component's largest-magnitude
    loading positive, so the output is deterministic.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or len(rows) < 3:
        raise DegenerateData(f"pca2 needs at least 3 rows, got {rows.shape}")
    centered = rows - rows.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    if singular[0] <= 1e-12:
        raise DegenerateData("pca2: data has rank 0 (all rows identical)")
    components = vt[:2]
    if len(singular) < 2 or singular[1] <= 1e-12:
        # rank-1 data still projects onto its single direction; axis 2 is zero
        components = np.vstack([vt[0], np.zeros_like(vt[0])])
    for i in range(2):
        anchor = np.argmax(np.abs(components[i]))
        if components[i][anchor] < 0:
            components[i] = -components[i]
    return centered @ components.T


# -- exact t-SNE --------------------------------------------------------------------


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    s = np.sum(x * x, axis=1)
    d = s[:, None] + s[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_affinities(dists_sq: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """Conditional p_j|i for one row and its Shannon entropy (natural log)."""
    p = np.exp(-dists_sq * beta)
    total = p.sum()
    if total <= 0:
        return np.zeros_like(p), 0.0
    p = p / total
    nz = p > 0
    entropy = -np.sum(p[nz] * np.log(p[nz]))
    return p, entropy


def bandwidth_search(dists_sq_row: np.ndarray, perplexity: float,
                     tol: float = 1e-5, max_iter: int = 100) -> tuple[np.ndarray, float]:
    """Bisection on the precision beta so the row's perplexity matches.

    Returns (conditional distribution over the other points, beta).
    """
    target_entropy = np.log(perplexity)
    beta, beta_lo, beta_hi = 1.0, 0.0, np.inf
    p, entropy = _row_affinities(dists_sq_row, beta)
    for _ in range(max_iter):
        if abs(entropy - target_entropy) < tol:
            break
        if entropy > target_entropy:
            beta_lo = beta
            beta = beta * 2.0 if beta_hi == np.inf else 0.5 * (beta + beta_hi)
        else:
            beta_hi = beta
            beta = beta / 2.0 if beta_lo == 0.0 else 0.5 * (beta + beta_lo)
        p, entropy = _row_affinities(dists_sq_row, beta)
    return p, beta


def joint_affinities(rows: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized affinity matrix P with per-point bandwidths."""
    n = len(rows)
    d = _pairwise_sq_dists(rows)
    p_cond = np.zeros((n, n))
    for i in range(n):
        row = np.delete(d[i], i)
        p, _ = bandwidth_search(row, perplexity)
        p_cond[i, np.arange(n) != i] = p
    p_joint = (p_cond + p_cond.T) / (2.0 * n)
    return np.maximum(p_joint, 1e-12)


def _kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 1e-12
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _low_dim_affinities(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    num = 1.0 / (1.0 + _pairwise_sq_dists(y))
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    return np.maximum(q, 1e-12), num


@dataclass
class TsneResult:
    coordinates: np.ndarray
    initial_kl: float
    final_kl: float
    betas: np.ndarray | None = None


def tsne2(rows: np.ndarray, perplexity: float = 30.0, iterations: int = 500,
          seed: int = 0, learning_rate: float = 200.0, momentum: float = 0.8,
          early_exaggeration: float = 12.0, exaggeration_iters: int = 100) -> TsneResult:
    """Exact t-SNE into two dimensions.

    Pairwise affinities use a per-point bandwidth bisection to hit the target
    perplexity; the embedding minimizes KL(P||Q) by gradient descent with
    momentum and early exaggeration.
    """
    rows = np.asarray(rows, dtype=np.float64)
    n = len(rows)
    if n > 2000:
        raise ConfigError(f"exact t-SNE is limited to 2000 rows, got {n}")
    if perplexity >= n / 3:
        raise ConfigError(f"perplexity {perplexity} must be < rows/3 = {n / 3:.1f}")
    p = joint_affinities(rows, perplexity)
    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    q0, _ = _low_dim_affinities(y)
    initial_kl = _kl_divergence(p, q0)
    momentum_switch = min(250, iterations // 2)
    for it in range(iterations):
        exaggeration = early_exaggeration if it < exaggeration_iters else 1.0
        q, num = _low_dim_affinities(y)
        # gradient: 4 * sum_j (p_ij - q_ij) * (y_i - y_j) / (1 + ||y_i - y_j||^2)
        w = (exaggeration * p - q) * num
        grad = 4.0 * ((np.diag(w.sum(axis=1)) - w) @ y)
        # per-coordinate gains, as in the reference descent
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        mom = 0.5 if it < momentum_switch else momentum
        velocity = mom * velocity - learning_rate * (gains * grad)
        y = y + velocity
        y = y - y.mean(axis=0)
    q_final, _ = _low_dim_affinities(y)
    return TsneResult(coordinates=y, initial_kl=initial_kl,
                      final_kl=_kl_divergence(p, q_final))


def perplexity_of(p_row: np.ndarray) -> float:
    """exp of the Shannon entropy of one conditional distribution."""
    nz = p_row[p_row > 0]
    return float(np.exp(-np.sum(nz * np.log(nz))))


# -- self-organizing map --------------------------------------------------------------


@dataclass
class SomGrid:
    """10x10 (by default) map with per-cell counts of tagged assignments."""

    weights: np.ndarray  # (rows, cols, dim)
    counts: dict[str, np.ndarray] = field(default_factory=dict)
    quantization_errors: list[float] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape[:2]

    def bmu(self, row: np.ndarray) -> tuple[int, int]:
        d = np.sum((self.weights - row) ** 2, axis=2)
        flat = int(np.argmin(d))
        return flat // self.weights.shape[1], flat % self.weights.shape[1]


def som_fit(rows: np.ndarray, grid_shape: tuple[int, int] = (10, 10),
            epochs: int = 50, seed: int = 0, initial_radius: float = 5.0,
            lr_start: float = 0.5, lr_end: float = 0.01) -> SomGrid:
    """Classic online SOM: per-sample best-matching unit, Gaussian
    neighborhood update, exponentially decaying radius and learning rate.

    The quantization error over all rows is recorded after every epoch.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if len(rows) == 0:
        raise DegenerateData("SOM needs at least one row")
    rng = np.random.default_rng(seed)
    g_rows, g_cols = grid_shape
    weights = rng.random((g_rows, g_cols, rows.shape[1]))
    ii, jj = np.meshgrid(np.arange(g_rows), np.arange(g_cols), indexing="ij")
    grid_coords = np.stack([ii, jj], axis=2).astype(np.float64)
    total_steps = max(1, epochs)
    som = SomGrid(weights=weights)
    for epoch in range(epochs):
        t = epoch / total_steps
        radius = max(initial_radius * np.exp(-3.0 * t), 0.5)
        lr = lr_start * (lr_end / lr_start) ** t
        for idx in rng.permutation(len(rows)):
            x = rows[idx]
            bi, bj = som.bmu(x)
            dist_sq = (grid_coords[:, :, 0] - bi) ** 2 + (grid_coords[:, :, 1] - bj) ** 2
            influence = np.exp(-dist_sq / (2.0 * radius * radius))
            weights += (lr * influence)[:, :, None] * (x - weights)
        d = np.sqrt(((rows[:, None, None, :] - weights[None]) ** 2).sum(axis=3))
        som.quantization_errors.append(float(d.min(axis=(1, 2)).mean()))
    return som


def som_assign(som: SomGrid, rows: np.ndarray, tags: list[str]) -> SomGrid:
    """Count each tagged row at its best-matching unit."""
    rows = np.asarray(rows, dtype=np.float64)
    if len(rows) != len(tags):
        raise ConfigError(f"{len(rows)} rows vs {len(tags)} tags")
    for tag in sorted(set(tags)):
        som.counts.setdefault(tag, np.zeros(som.shape, dtype=np.int64))
    for row, tag in zip(rows, tags):
        i, j = som.bmu(row)
        som.counts[tag][i, j] += 1
    return som
