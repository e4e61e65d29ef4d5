"""Loss functions, the Gumbel-softmax relaxation, and the critic gradient penalty.

Conventions: every loss returns a batch-mean scalar. Row losses sum over
columns first, so a mixed-type reconstruction loss decomposes exactly into the
sum of its per-variable pieces. Probabilities entering a log are clamped to
[PROB_EPS, 1 - PROB_EPS] for bounded loss and stable gradients.
"""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

PROB_EPS = 1e-7
NORM_EPS = 1e-12


def _check_same_shape(prediction: Tensor, target: Tensor, kind: str) -> None:
    if prediction.value.shape != target.value.shape:
        raise ShapeError(
            f"{kind}: prediction shape {prediction.value.shape} != target shape {target.value.shape}"
        )


def _row_sum(t: Tensor) -> Tensor:
    return t.sum(axis=1) if t.value.ndim == 2 else t


def cross_entropy(prediction: Tensor, target) -> Tensor:
    """-mean over rows of sum(target * log(prediction))."""
    prediction, target = ad.as_tensor(prediction), ad.as_tensor(target)
    _check_same_shape(prediction, target, "cross_entropy")
    p = ad.clip(prediction, PROB_EPS, 1.0 - PROB_EPS)
    return ad.neg(_row_sum(target * ad.log(p)).mean())


def binary_cross_entropy(prediction: Tensor, target) -> Tensor:
    prediction, target = ad.as_tensor(prediction), ad.as_tensor(target)
    _check_same_shape(prediction, target, "binary_cross_entropy")
    p = ad.clip(prediction, PROB_EPS, 1.0 - PROB_EPS)
    per_element = target * ad.log(p) + (1.0 - target) * ad.log(1.0 - p)
    return ad.neg(_row_sum(per_element).mean())


def mean_squared_error(prediction: Tensor, target) -> Tensor:
    prediction, target = ad.as_tensor(prediction), ad.as_tensor(target)
    _check_same_shape(prediction, target, "mean_squared_error")
    d = prediction - target
    return _row_sum(d * d).mean()


def kl_standard_normal(mu: Tensor, log_var: Tensor) -> Tensor:
    """KL(N(mu, diag(exp(log_var))) || N(0, I)), batch-averaged."""
    mu, log_var = ad.as_tensor(mu), ad.as_tensor(log_var)
    _check_same_shape(mu, log_var, "kl_standard_normal")
    per_dim = ad.exp(log_var) + mu * mu - 1.0 - log_var
    return ad.mul(ad.constant(0.5), _row_sum(per_dim).mean())


LOSS_KINDS = {
    "cross_entropy": cross_entropy,
    "binary_cross_entropy": binary_cross_entropy,
    "mean_squared_error": mean_squared_error,
    "kl_standard_normal": kl_standard_normal,
}


def loss(kind: str, prediction, target) -> Tensor:
    """Dispatch by kind. For ``kl_standard_normal`` the arguments are
    (mu, log_var) rather than (prediction, target)."""
    if kind not in LOSS_KINDS:
        raise ShapeError(f"unknown loss kind {kind!r}")
    return LOSS_KINDS[kind](prediction, target)


# -- Gumbel-softmax -----------------------------------------------------------


def gumbel_noise(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Standard Gumbel draws g = -log(-log u), u ~ uniform(0, 1)."""
    u = np.clip(rng.random(shape), 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(u))


def gumbel_softmax(logits: Tensor, tau: float, rng: np.random.Generator | None = None,
                   noise: np.ndarray | float | None = None) -> Tensor:
    """softmax((logits + g)/tau) with Gumbel noise g.

    ``noise`` overrides the draw (tests force it to zero); otherwise ``rng``
    supplies it. Output rows lie strictly inside the probability simplex and
    are differentiable w.r.t. the logits for fixed noise.
    """
    if tau <= 0:
        raise ShapeError(f"gumbel_softmax temperature must be positive, got {tau}")
    logits = ad.as_tensor(logits)
    if noise is None:
        if rng is None:
            raise ShapeError("gumbel_softmax needs an rng when noise is not supplied")
        noise = gumbel_noise(rng, logits.value.shape)
    perturbed = (logits + ad.constant(noise)) * ad.constant(1.0 / tau)
    return ad.softmax(perturbed, axis=-1)


# -- WGAN-GP gradient penalty ---------------------------------------------------


def interpolate_rows(real: np.ndarray, fake: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Per-row convex combination eps*real + (1-eps)*fake."""
    if real.shape != fake.shape:
        raise ShapeError(f"interpolation shapes differ: {real.shape} vs {fake.shape}")
    eps = rng.random((real.shape[0], 1))
    return eps * real + (1.0 - eps) * fake


def gradient_penalty(critic: Callable[[Tensor], Tensor], x_hat) -> Tensor:
    """mean over rows of (||d critic / d x_hat||_2 - 1)^2.

    The row norm is stabilized as sqrt(sum g^2 + 1e-12) so the penalty stays
    differentiable at zero gradient. The result remains a graph node in the
    critic parameters, so it can be differentiated a second time.
    """
    x = x_hat if isinstance(x_hat, Tensor) else Tensor(x_hat, requires_grad=True)
    score = critic(x)
    if score.value.ndim == 2 and score.value.shape[1] != 1:
        raise ShapeError(f"critic must be scalar per row, got {score.value.shape}")
    (g,) = ad.grad(score.sum(), [x])
    norm = ad.sqrt((g * g).sum(axis=1) + NORM_EPS)
    return ((norm - 1.0) ** 2).mean()
