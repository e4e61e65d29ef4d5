"""Per-architecture training loops.

Every loop is deterministic in its seed: one generator drives shuffling,
latent draws, and Gumbel noise. Autoencoder-bearing models monitor the
reconstruction loss on the validation view each epoch and stop early after
``patience`` epochs without improvement (the VAE and the MedGAN pre-training
phase restore their best snapshot; ARAE only halts, because rolling back the
encoder would desynchronize it from the adversarially trained generator).
Pure adversarial models run their configured epoch count.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import losses
from .autodiff import Tensor
from .data import VariableMeta, variable_slices
from .errors import InsufficientData
from .models import (
    ModelSpec,
    TrainedGenerator,
    TrainingView,
    code_critic_score,
    critic_score,
    decode,
    discriminator_score,
    draw_head_noise,
    encoder_code,
    fingerprint_rows,
    generator_code,
    generator_data,
    init_networks,
    minibatch_augment,
    vae_encode,
)
from .nn import ParamGroup, ParamSet
from .optim import adam_init, adam_step, clamp_params


def reconstruction_loss(output: Tensor, target, meta: list[VariableMeta]) -> Tensor:
    """Sum over variables of the kind-matched loss, batch-averaged.

    Cross-entropy on categorical blocks, binary cross-entropy on binary
    columns, mean squared error on numerical columns.
    """
    target = ad.as_tensor(target)
    total: Tensor | None = None
    for v, sl in zip(meta, variable_slices(meta)):
        out_block, tgt_block = output[:, sl], target[:, sl]
        if v.kind == "categorical":
            piece = losses.cross_entropy(out_block, tgt_block)
        elif v.kind == "binary":
            piece = losses.binary_cross_entropy(out_block, tgt_block)
        else:
            piece = losses.mean_squared_error(out_block, tgt_block)
        total = piece if total is None else total + piece
    if total is None:
        raise InsufficientData("metadata declares no variables")
    return total


class _BatchCycler:
    """Endless stream of minibatch index arrays, reshuffled each pass."""

    def __init__(self, n_rows: int, batch_size: int, rng: np.random.Generator):
        self.n = n_rows
        self.batch = min(batch_size, n_rows)
        self.rng = rng
        self._queue: list[np.ndarray] = []

    def _refill(self) -> None:
        perm = self.rng.permutation(self.n)
        self._queue = [
            perm[i:i + self.batch] for i in range(0, self.n, self.batch)
        ][::-1]

    def next(self) -> np.ndarray:
        if not self._queue:
            self._refill()
        return self._queue.pop()


def _epoch_batches(n_rows: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n_rows)
    step = min(batch_size, n_rows)
    return [perm[i:i + step] for i in range(0, n_rows, step)]


class _EarlyStopper:
    """Patience-based stopping on a to-be-minimized validation score."""

    def __init__(self, patience: int, nets: dict[str, ParamSet], watched: tuple[str, ...]):
        self.patience = patience
        self.nets = nets
        self.watched = watched
        self.best = np.inf
        self.stale = 0
        self.snapshot: dict[str, dict[str, np.ndarray]] = {}

    def update(self, score: float) -> bool:
        """Record a validation score; True means stop now."""
        if score < self.best - 1e-12:
            self.best = score
            self.stale = 0
            self.snapshot = {k: self.nets[k].copy_values() for k in self.watched}
            return False
        self.stale += 1
        return self.stale >= self.patience

    def restore(self) -> None:
        for k, values in self.snapshot.items():
            self.nets[k].load_values(values)


def _cond_rows(view: TrainingView, idx: np.ndarray) -> np.ndarray | None:
    return None if view.conditions is None else view.conditions[idx]


# -- architecture losses (shared by loops and by the descent tests) -------------------


def vae_batch_loss(nets, x, spec: ModelSpec, meta, cond, eps: np.ndarray,
                   gumbel) -> tuple[Tensor, Tensor, Tensor]:
    """(total, reconstruction, kl) on one minibatch with fixed noise."""
    mu, logvar = vae_encode(nets, x, spec, meta, cond)
    z = mu + ad.exp(logvar * 0.5) * ad.constant(eps)
    xhat = decode(nets, z, spec, meta, cond, gumbel)
    recon = reconstruction_loss(xhat, x, meta)
    kl = losses.kl_standard_normal(mu, logvar)
    return recon + kl, recon, kl


def discrete_column_mask(meta: list[VariableMeta]) -> np.ndarray:
    """1.0 on categorical/binary columns, 0.0 on numerical ones."""
    mask = []
    for v in meta:
        mask.extend([0.0 if v.kind == "numerical" else 1.0] * v.width)
    return np.asarray(mask)


def _instance_noise(shape, sigma: float, mask: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
    return sigma * mask * rng.standard_normal(shape)


def gan_disc_loss(nets, x_real, x_fake, spec, meta, cond_real, cond_fake,
                  noise_sigma: float = 0.0, noise_rng: np.random.Generator | None = None) -> Tensor:
    """Non-saturating discriminator loss.

    Instance noise (annealed by the caller) blurs the discrete one-hot
    vertices so they stop being a trivial tell and the space between them
    stops being a gradient barrier; numerical columns are left sharp.
    """
    if noise_sigma > 0.0 and noise_rng is not None:
        mask = discrete_column_mask(meta)
        x_real = x_real + _instance_noise(np.shape(x_real), noise_sigma, mask, noise_rng)
        x_fake = x_fake + _instance_noise(np.shape(x_fake), noise_sigma, mask, noise_rng)
    d_real = discriminator_score(nets, x_real, spec, meta, cond_real)
    d_fake = discriminator_score(nets, x_fake, spec, meta, cond_fake)
    ones = np.ones_like(d_real.value)
    zeros = np.zeros_like(d_fake.value)
    return losses.binary_cross_entropy(d_real, ones) + losses.binary_cross_entropy(d_fake, zeros)


def gan_gen_loss(nets, z, spec, meta, cond, gumbel,
                 noise_sigma: float = 0.0, noise_rng: np.random.Generator | None = None) -> Tensor:
    fake = generator_data(nets, z, spec, meta, cond, gumbel)
    if noise_sigma > 0.0 and noise_rng is not None:
        mask = discrete_column_mask(meta)
        fake = fake + ad.constant(_instance_noise(fake.value.shape, noise_sigma, mask, noise_rng))
    d_fake = discriminator_score(nets, fake, spec, meta, cond)
    return losses.binary_cross_entropy(d_fake, np.ones_like(d_fake.value))


def wgan_critic_loss(nets, x_real, x_fake, spec, meta, cond_real, cond_fake,
                     penalty_rng: np.random.Generator | None = None) -> Tensor:
    """mean C(fake) - mean C(real); adds the gradient penalty when wgan_gp."""
    loss = critic_score(nets, x_fake, spec, meta, cond_fake).mean() \
        - critic_score(nets, x_real, spec, meta, cond_real).mean()
    if spec.architecture == "wgan_gp":
        x_hat = losses.interpolate_rows(np.asarray(x_real), np.asarray(x_fake), penalty_rng)
        cond_hat = cond_real
        penalty = losses.gradient_penalty(
            lambda t: critic_score(nets, t, spec, meta, cond_hat), x_hat
        )
        loss = loss + spec.penalty_weight * penalty
    return loss


def wgan_gen_loss(nets, z, spec, meta, cond, gumbel) -> Tensor:
    fake = generator_data(nets, z, spec, meta, cond, gumbel)
    return ad.neg(critic_score(nets, fake, spec, meta, cond).mean())


def medgan_disc_loss(nets, x_real, x_fake, spec, meta, cond_real, cond_fake) -> Tensor:
    d_real = discriminator_score(nets, minibatch_augment(x_real), spec, meta, cond_real, repeats=2)
    d_fake = discriminator_score(nets, minibatch_augment(x_fake), spec, meta, cond_fake, repeats=2)
    return losses.binary_cross_entropy(d_real, np.ones_like(d_real.value)) + \
        losses.binary_cross_entropy(d_fake, np.zeros_like(d_fake.value))


def medgan_gen_loss(nets, z, spec, meta, cond, gumbel) -> Tensor:
    code = generator_code(nets, z, spec, cond)
    fake = decode(nets, code, spec, meta, None, gumbel)
    # minibatch averaging built from traced rows so the generator sees its gradient
    means = fake.mean(axis=0, keepdims=True)
    aug = ad.concat([fake, ad.broadcast_to(means, fake.value.shape)], axis=1)
    d_fake = discriminator_score(nets, aug, spec, meta, cond, repeats=2)
    return losses.binary_cross_entropy(d_fake, np.ones_like(d_fake.value))


def arae_critic_loss(nets, code_real, code_fake, spec, cond_real, cond_fake) -> Tensor:
    return code_critic_score(nets, code_fake, spec, cond_fake).mean() \
        - code_critic_score(nets, code_real, spec, cond_real).mean()


def arae_gen_loss(nets, z, spec, cond) -> Tensor:
    code = generator_code(nets, z, spec, cond)
    return ad.neg(code_critic_score(nets, code, spec, cond).mean())


def _validation_reconstruction(nets, view: TrainingView, spec: ModelSpec) -> float:
    """Deterministic reconstruction loss on the validation view."""
    if view is None or len(view.rows) == 0:
        return np.nan
    x = view.rows
    cond = view.conditions
    if spec.architecture == "vae":
        mu, logvar = vae_encode(nets, x, spec, view.meta, cond)
        xhat = decode(nets, mu, spec, view.meta, cond, None)
    else:
        code = encoder_code(nets, x, spec, view.meta)
        xhat = decode(nets, code, spec, view.meta, None, None)
    return reconstruction_loss(xhat, x, view.meta).item()


# -- loops ----------------------------------------------------------------------------


def _grads(loss: Tensor, group) -> list[Tensor]:
    return ad.grad(loss, group.tensors())


def _train_vae(nets, view, val_view, spec, rng, history) -> None:
    group = ParamGroup({"encoder": nets["encoder"], "decoder": nets["decoder"]})
    state = adam_init(group)
    stopper = _EarlyStopper(spec.patience, nets, ("encoder", "decoder"))
    mv = spec.variant == "multi_variable"
    for epoch in range(spec.epochs):
        epoch_loss = 0.0
        for step, idx in enumerate(_epoch_batches(len(view.rows), spec.batch_size, rng)):
            x = view.rows[idx]
            eps = rng.standard_normal((len(idx), spec.latent))
            gumbel = draw_head_noise(rng, len(idx), view.meta) if mv else None
            total, _, _ = vae_batch_loss(nets, x, spec, view.meta, _cond_rows(view, idx), eps, gumbel)
            adam_step(group, _grads(total, group), state, spec.lr_autoencoder,
                      context=f"vae epoch {epoch} step {step}")
            epoch_loss += total.item() * len(idx)
        history.setdefault("train", []).append(epoch_loss / len(view.rows))
        val = _validation_reconstruction(nets, val_view, spec)
        history.setdefault("validation", []).append(val)
        if not np.isnan(val) and stopper.update(val):
            break
    if stopper.snapshot:
        stopper.restore()


GENERATOR_EMA_DECAY = 0.999


def _train_gan(nets, view, spec, rng, history) -> None:
    gen_group = ParamGroup({"generator": nets["generator"]})
    disc_group = ParamGroup({"discriminator": nets["discriminator"]})
    gen_state, disc_state = adam_init(gen_group), adam_init(disc_group)
    cycler = _BatchCycler(len(view.rows), spec.batch_size, rng)
    steps_per_epoch = max(1, int(np.ceil(len(view.rows) / spec.batch_size)))
    # Polyak-averaged generator weights damp the endpoint of the usual
    # adversarial oscillation; the averaged weights are what we keep
    ema = nets["generator"].copy_values()
    for epoch in range(spec.epochs):
        d_sum = g_sum = 0.0
        # instance noise anneals over the first 80% of training down to a 20%
        # floor that keeps the discriminator's restoring force alive
        sigma = spec.instance_noise * max(0.2, 1.0 - epoch / max(1, int(0.8 * spec.epochs)))
        for step in range(steps_per_epoch):
            for _ in range(spec.n_critic):
                idx = cycler.next()
                x = view.rows[idx]
                cond = _cond_rows(view, idx)
                z = rng.standard_normal((len(idx), spec.latent))
                fake = generator_data(nets, z, spec, view.meta, cond, None).value
                d_loss = gan_disc_loss(nets, x, fake, spec, view.meta, cond, cond,
                                       noise_sigma=sigma, noise_rng=rng)
                adam_step(disc_group, _grads(d_loss, disc_group), disc_state,
                          spec.lr_adversarial, context=f"gan disc epoch {epoch} step {step}")
                d_sum += d_loss.item()
            idx = cycler.next()
            cond = _cond_rows(view, idx)
            z = rng.standard_normal((len(idx), spec.latent))
            g_loss = gan_gen_loss(nets, z, spec, view.meta, cond, None,
                                  noise_sigma=sigma, noise_rng=rng)
            adam_step(gen_group, _grads(g_loss, gen_group), gen_state,
                      spec.lr_adversarial, context=f"gan gen epoch {epoch} step {step}")
            g_sum += g_loss.item()
            for name, t in zip(nets["generator"].names(), nets["generator"].tensors()):
                ema[name] = GENERATOR_EMA_DECAY * ema[name] + (1.0 - GENERATOR_EMA_DECAY) * t.value
        history.setdefault("discriminator", []).append(d_sum / (steps_per_epoch * spec.n_critic))
        history.setdefault("generator", []).append(g_sum / steps_per_epoch)
    nets["generator"].load_values(ema)


def _train_wgan(nets, view, spec, rng, history) -> None:
    gen_group = ParamGroup({"generator": nets["generator"]})
    critic_group = ParamGroup({"critic": nets["critic"]})
    gen_state, critic_state = adam_init(gen_group), adam_init(critic_group)
    cycler = _BatchCycler(len(view.rows), spec.batch_size, rng)
    mv = spec.variant == "multi_variable"
    steps_per_epoch = max(1, int(np.ceil(len(view.rows) / spec.batch_size)))
    for epoch in range(spec.epochs):
        c_sum = g_sum = 0.0
        for step in range(steps_per_epoch):
            for _ in range(spec.n_critic):
                idx = cycler.next()
                x = view.rows[idx]
                cond = _cond_rows(view, idx)
                z = rng.standard_normal((len(idx), spec.latent))
                gumbel = draw_head_noise(rng, len(idx), view.meta) if mv else None
                fake = generator_data(nets, z, spec, view.meta, cond, gumbel).value
                c_loss = wgan_critic_loss(nets, x, fake, spec, view.meta, cond, cond,
                                          penalty_rng=rng)
                adam_step(critic_group, _grads(c_loss, critic_group), critic_state,
                          spec.lr_adversarial, context=f"{spec.architecture} critic epoch {epoch}")
                if spec.architecture == "wgan":
                    clamp_params(nets["critic"], spec.clamp)
                c_sum += c_loss.item()
            idx = cycler.next()
            cond = _cond_rows(view, idx)
            z = rng.standard_normal((len(idx), spec.latent))
            gumbel = draw_head_noise(rng, len(idx), view.meta) if mv else None
            g_loss = wgan_gen_loss(nets, z, spec, view.meta, cond, gumbel)
            adam_step(gen_group, _grads(g_loss, gen_group), gen_state,
                      spec.lr_adversarial, context=f"{spec.architecture} gen epoch {epoch}")
            g_sum += g_loss.item()
        history.setdefault("critic", []).append(c_sum / (steps_per_epoch * spec.n_critic))
        history.setdefault("generator", []).append(g_sum / steps_per_epoch)


def _train_medgan(nets, view, val_view, spec, rng, history) -> None:
    mv = spec.variant == "multi_variable"
    # phase 1: autoencoder pre-training with early stopping
    ae_group = ParamGroup({"encoder": nets["encoder"], "decoder": nets["decoder"]})
    ae_state = adam_init(ae_group)
    stopper = _EarlyStopper(spec.patience, nets, ("encoder", "decoder"))
    for epoch in range(spec.epochs):
        epoch_loss = 0.0
        for step, idx in enumerate(_epoch_batches(len(view.rows), spec.batch_size, rng)):
            x = view.rows[idx]
            gumbel = draw_head_noise(rng, len(idx), view.meta) if mv else None
            code = encoder_code(nets, x, spec, view.meta)
            recon = reconstruction_loss(decode(nets, code, spec, view.meta, None, gumbel),
                                        x, view.meta)
            adam_step(ae_group, _grads(recon, ae_group), ae_state, spec.lr_autoencoder,
                      context=f"medgan ae epoch {epoch} step {step}")
            epoch_loss += recon.item() * len(idx)
        history.setdefault("autoencoder", []).append(epoch_loss / len(view.rows))
        val = _validation_reconstruction(nets, val_view, spec)
        history.setdefault("validation", []).append(val)
        if not np.isnan(val) and stopper.update(val):
            break
    if stopper.snapshot:
        stopper.restore()
    # phase 2: adversarial training; the generator step fine-tunes the decoder
    gen_group = ParamGroup({"generator": nets["generator"], "decoder": nets["decoder"]})
    disc_group = ParamGroup({"discriminator": nets["discriminator"]})
    gen_state, disc_state = adam_init(gen_group), adam_init(disc_group)
    cycler = _BatchCycler(len(view.rows), spec.batch_size, rng)
    steps_per_epoch = max(1, int(np.ceil(len(view.rows) / spec.batch_size)))
    for epoch in range(spec.epochs):
        d_sum = g_sum = 0.0
        for step in range(steps_per_epoch):
            for _ in range(spec.n_critic):
                idx = cycler.next()
                x = view.rows[idx]
                cond = _cond_rows(view, idx)
                z = rng.standard_normal((len(idx), spec.latent))
                gumbel = draw_head_noise(rng, len(idx), view.meta) if mv else None
                fake = decode(nets, generator_code(nets, z, spec, cond), spec, view.meta,
                              None, gumbel).value
                d_loss = medgan_disc_loss(nets, x, fake, spec, view.meta, cond, cond)
                adam_step(disc_group, _grads(d_loss, disc_group), disc_state,
                          spec.lr_adversarial, context=f"medgan disc epoch {epoch} step {step}")
                d_sum += d_loss.item()
            idx = cycler.next()
            cond = _cond_rows(view, idx)
            z = rng.standard_normal((len(idx), spec.latent))
            gumbel = draw_head_noise(rng, len(idx), view.meta) if mv else None
            g_loss = medgan_gen_loss(nets, z, spec, view.meta, cond, gumbel)
            adam_step(gen_group, _grads(g_loss, gen_group), gen_state,
                      spec.lr_adversarial, context=f"medgan gen epoch {epoch} step {step}")
            g_sum += g_loss.item()
        history.setdefault("discriminator", []).append(d_sum / (steps_per_epoch * spec.n_critic))
        history.setdefault("generator", []).append(g_sum / steps_per_epoch)


def _train_arae(nets, view, val_view, spec, rng, history) -> None:
    mv = spec.variant == "multi_variable"
    ae_group = ParamGroup({"encoder": nets["encoder"], "decoder": nets["decoder"]})
    gen_group = ParamGroup({"generator": nets["generator"]})
    critic_group = ParamGroup({"critic": nets["critic"]})
    ae_state, gen_state = adam_init(ae_group), adam_init(gen_group)
    critic_state = adam_init(critic_group)
    cycler = _BatchCycler(len(view.rows), spec.batch_size, rng)
    # patience only halts training here: restoring an earlier encoder would
    # desynchronize it from the adversarially trained generator and critic
    stopper = _EarlyStopper(spec.patience, nets, ())
    for epoch in range(spec.epochs):
        recon_sum = 0.0
        batches = _epoch_batches(len(view.rows), spec.batch_size, rng)
        for step, idx in enumerate(batches):
            x = view.rows[idx]
            gumbel = draw_head_noise(rng, len(idx), view.meta) if mv else None
            recon = reconstruction_loss(
                decode(nets, encoder_code(nets, x, spec, view.meta), spec, view.meta,
                       None, gumbel),
                x, view.meta)
            adam_step(ae_group, _grads(recon, ae_group), ae_state, spec.lr_autoencoder,
                      context=f"arae ae epoch {epoch} step {step}")
            recon_sum += recon.item()
            for _ in range(spec.n_critic):
                cidx = cycler.next()
                cond_c = _cond_rows(view, cidx)
                code_real = encoder_code(nets, view.rows[cidx], spec, view.meta).value
                z = rng.standard_normal((len(cidx), spec.latent))
                code_fake = generator_code(nets, z, spec, cond_c).value
                c_loss = arae_critic_loss(nets, code_real, code_fake, spec, cond_c, cond_c)
                adam_step(critic_group, _grads(c_loss, critic_group), critic_state,
                          spec.lr_adversarial, context=f"arae critic epoch {epoch}")
                clamp_params(nets["critic"], spec.clamp)
            cond = _cond_rows(view, idx)
            z = rng.standard_normal((len(idx), spec.latent))
            g_loss = arae_gen_loss(nets, z, spec, cond)
            adam_step(gen_group, _grads(g_loss, gen_group), gen_state,
                      spec.lr_adversarial, context=f"arae gen epoch {epoch} step {step}")
        history.setdefault("autoencoder", []).append(recon_sum / len(batches))
        val = _validation_reconstruction(nets, val_view, spec)
        history.setdefault("validation", []).append(val)
        if not np.isnan(val) and stopper.update(val):
            break
    if stopper.snapshot:
        stopper.restore()


def train(spec: ModelSpec, train_view: TrainingView, validation_view: TrainingView | None,
          seed: int, strategy: str | None = None) -> TrainedGenerator:
    """Run the architecture-specific loop, deterministic in ``seed``."""
    if len(train_view.rows) == 0:
        raise InsufficientData("training view is empty")
    if spec.conditional and train_view.conditions is None:
        raise InsufficientData("a conditional model needs a view with class conditions")
    rng = np.random.default_rng([int(seed), 0x7E41])
    init_rng = np.random.default_rng([int(seed), 0x141])
    nets = init_networks(spec, train_view.meta, init_rng)
    history: dict[str, list[float]] = {}
    if spec.architecture == "vae":
        _train_vae(nets, train_view, validation_view, spec, rng, history)
    elif spec.architecture == "gan":
        _train_gan(nets, train_view, spec, rng, history)
    elif spec.architecture in ("wgan", "wgan_gp"):
        _train_wgan(nets, train_view, spec, rng, history)
    elif spec.architecture == "medgan":
        _train_medgan(nets, train_view, validation_view, spec, rng, history)
    else:
        _train_arae(nets, train_view, validation_view, spec, rng, history)
    return TrainedGenerator(
        spec=spec,
        meta=train_view.meta,
        networks=nets,
        strategy=strategy,
        fingerprint=fingerprint_rows(train_view.row_indices, train_view.rows),
        loss_history=history,
    )
