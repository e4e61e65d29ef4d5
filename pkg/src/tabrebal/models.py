"""The six generative architectures and their multi-variable variants.

Network construction, forward passes, sampling, and model persistence live
here; the per-architecture optimization loops live in ``training``. A
multi-variable network separates inputs per variable through independent
linear embeddings and emits per-variable output heads: Gumbel-softmax over
each categorical block, a sigmoid scalar for binary and numerical variables.
Plain variants use one sigmoid output over all columns.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses, nn
from .autodiff import Tensor
from .data import VariableMeta, total_width, variable_slices
from .errors import ConfigError, ShapeError
from .nn import ParamSet

ARCHITECTURES = ("vae", "gan", "wgan", "wgan_gp", "medgan", "arae")
VARIANTS = ("plain", "multi_variable")
AUTOENCODER_ARCHS = ("vae", "medgan", "arae")
COND_WIDTH = 2  # one-hot of the binary class label

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture choice plus the full training configuration."""

    architecture: str
    variant: str = "plain"
    hidden: tuple[int, ...] = (128, 128)
    latent: int = 32
    embedding: int = 16
    tau: float = 0.66
    conditional: bool = False
    label_as_variable: bool = False
    epochs: int = 300
    batch_size: int = 64
    lr_autoencoder: float = 1e-3
    lr_adversarial: float = 2e-4
    n_critic: int = 5
    clamp: float = 0.01
    penalty_weight: float = 10.0
    instance_noise: float = 0.5
    patience: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.architecture in ("wgan", "wgan_gp") and self.variant != "multi_variable":
            raise ConfigError(f"{self.architecture} exists only as a multi-variable model")
        if self.architecture == "gan" and self.variant == "multi_variable":
            raise ConfigError("the multi-variable GAN is the wgan architecture")
        if self.conditional and self.label_as_variable:
            raise ConfigError("conditioning and label-as-variable are mutually exclusive")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")

    @property
    def name(self) -> str:
        prefix = "mv-" if self.variant == "multi_variable" else ""
        return prefix + self.architecture.replace("_", "-")

    def to_obj(self) -> dict:
        obj = asdict(self)
        obj["hidden"] = list(self.hidden)
        return obj

    @classmethod
    def from_obj(cls, obj: dict) -> "ModelSpec":
        obj = dict(obj)
        obj["hidden"] = tuple(obj["hidden"])
        return cls(**obj)


def spec_from_method_name(method: str, **overrides) -> ModelSpec:
    """Map a CLI/report method name like ``mv-wgan-gp`` to a ModelSpec."""
    name = method.strip().lower()
    variant = "plain"
    if name.startswith("mv-"):
        variant = "multi_variable"
        name = name[3:]
    arch = name.replace("-", "_")
    if arch not in ARCHITECTURES:
        raise ConfigError(f"unknown generative method {method!r}")
    return ModelSpec(architecture=arch, variant=variant, **overrides)


@dataclass
class TrainingView:
    """Rows (and optional conditions) a generator trains on."""

    rows: np.ndarray
    meta: list[VariableMeta]
    conditions: np.ndarray | None = None  # (n, 2) one-hot labels
    row_indices: np.ndarray | None = None  # provenance in the source dataset

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.shape[1] != total_width(self.meta):
            raise ShapeError(
                f"view width {self.rows.shape[1]} != metadata width {total_width(self.meta)}"
            )

    def subset(self, indices: np.ndarray) -> "TrainingView":
        return TrainingView(
            rows=self.rows[indices],
            meta=self.meta,
            conditions=None if self.conditions is None else self.conditions[indices],
            row_indices=None if self.row_indices is None else self.row_indices[indices],
        )


def onehot_condition(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), COND_WIDTH))
    out[np.arange(len(labels)), labels] = 1.0
    return out


# -- network construction ----------------------------------------------------------


def _embedded_width(spec: ModelSpec, n_blocks: int) -> int:
    return n_blocks * spec.embedding


def _init_embeddings(ps: ParamSet, blocks: list[VariableMeta] | list[int],
                     spec: ModelSpec, rng: np.random.Generator) -> None:
    for i, block in enumerate(blocks):
        width = block if isinstance(block, int) else block.width
        ps.add_dense(f"emb.{i}", width, spec.embedding, rng)


def _init_heads(ps: ParamSet, in_dim: int, spec: ModelSpec,
                meta: list[VariableMeta], rng: np.random.Generator) -> None:
    if spec.variant == "plain":
        ps.add_dense("out", in_dim, total_width(meta), rng)
    else:
        for i, v in enumerate(meta):
            ps.add_dense(f"head.{i}", in_dim, v.width, rng)


def _init_body(ps: ParamSet, in_dim: int, spec: ModelSpec, rng: np.random.Generator) -> None:
    nn.init_mlp(ps, "body", [in_dim, *spec.hidden], rng)


def init_networks(spec: ModelSpec, meta: list[VariableMeta],
                  rng: np.random.Generator) -> dict[str, ParamSet]:
    """Build every ParamSet the architecture needs, seeded by ``rng``."""
    width = total_width(meta)
    cond = COND_WIDTH if spec.conditional else 0
    mv = spec.variant == "multi_variable"
    data_in = _embedded_width(spec, len(meta)) if mv else width
    nets: dict[str, ParamSet] = {}

    def new_ps() -> ParamSet:
        return ParamSet(seed=spec.seed)

    if spec.architecture == "vae":
        enc = new_ps()
        if mv:
            _init_embeddings(enc, meta, spec, rng)
        _init_body(enc, data_in + cond, spec, rng)
        enc.add_dense("mu", spec.hidden[-1], spec.latent, rng)
        enc.add_dense("logvar", spec.hidden[-1], spec.latent, rng)
        dec = new_ps()
        _init_body(dec, spec.latent + cond, spec, rng)
        _init_heads(dec, spec.hidden[-1], spec, meta, rng)
        nets = {"encoder": enc, "decoder": dec}

    elif spec.architecture == "gan":
        gen = new_ps()
        _init_body(gen, spec.latent + cond, spec, rng)
        _init_heads(gen, spec.hidden[-1], spec, meta, rng)
        disc = new_ps()
        _init_body(disc, width + cond, spec, rng)
        disc.add_dense("out", spec.hidden[-1], 1, rng)
        nets = {"generator": gen, "discriminator": disc}

    elif spec.architecture in ("wgan", "wgan_gp"):
        gen = new_ps()
        _init_body(gen, spec.latent + cond, spec, rng)
        _init_heads(gen, spec.hidden[-1], spec, meta, rng)
        critic = new_ps()
        _init_embeddings(critic, meta, spec, rng)
        _init_body(critic, _embedded_width(spec, len(meta)) + cond, spec, rng)
        critic.add_dense("out", spec.hidden[-1], 1, rng)
        nets = {"generator": gen, "critic": critic}

    elif spec.architecture == "medgan":
        enc = new_ps()
        if mv:
            _init_embeddings(enc, meta, spec, rng)
        _init_body(enc, data_in, spec, rng)
        enc.add_dense("code", spec.hidden[-1], spec.latent, rng)
        dec = new_ps()
        _init_body(dec, spec.latent, spec, rng)
        _init_heads(dec, spec.hidden[-1], spec, meta, rng)
        gen = new_ps()
        gen.add_dense("proj", spec.latent + cond, spec.latent, rng)
        gen.add_dense("s0", spec.latent, spec.latent, rng)
        gen.add_dense("s1", spec.latent, spec.latent, rng)
        disc = new_ps()
        if mv:
            # sample block plus batch-mean block, each with its own embedding
            _init_embeddings(disc, [v.width for v in meta] * 2, spec, rng)
            disc_in = _embedded_width(spec, 2 * len(meta)) + cond
        else:
            disc_in = 2 * width + cond
        _init_body(disc, disc_in, spec, rng)
        disc.add_dense("out", spec.hidden[-1], 1, rng)
        nets = {"encoder": enc, "decoder": dec, "generator": gen, "discriminator": disc}

    elif spec.architecture == "arae":
        enc = new_ps()
        if mv:
            _init_embeddings(enc, meta, spec, rng)
        _init_body(enc, data_in, spec, rng)
        enc.add_dense("code", spec.hidden[-1], spec.latent, rng)
        dec = new_ps()
        _init_body(dec, spec.latent, spec, rng)
        _init_heads(dec, spec.hidden[-1], spec, meta, rng)
        gen = new_ps()
        _init_body(gen, spec.latent + cond, spec, rng)
        gen.add_dense("code", spec.hidden[-1], spec.latent, rng)
        critic = new_ps()
        _init_body(critic, spec.latent + cond, spec, rng)
        critic.add_dense("out", spec.hidden[-1], 1, rng)
        nets = {"encoder": enc, "decoder": dec, "generator": gen, "critic": critic}

    return nets


# -- forward passes ------------------------------------------------------------------


def apply_embeddings(ps: ParamSet, x, meta: list[VariableMeta],
                     repeats: int = 1) -> Tensor:
    """Per-variable linear embeddings, concatenated in metadata order.

    ``repeats`` > 1 handles inputs made of several stacked copies of the
    variable layout (the minibatch-averaged discriminator input).
    """
    xt = ad.as_tensor(x)
    slices = variable_slices(meta)
    width = total_width(meta)
    parts = []
    for r in range(repeats):
        for i, sl in enumerate(slices):
            shifted = slice(sl.start + r * width, sl.stop + r * width)
            parts.append(nn.apply_dense(ps, f"emb.{r * len(meta) + i}", xt[:, shifted]))
    return ad.concat(parts, axis=1)


def _with_condition(h: Tensor, cond: np.ndarray | None) -> Tensor:
    if cond is None:
        return h
    return ad.concat([h, ad.constant(cond)], axis=1)


def data_input(ps: ParamSet, x, spec: ModelSpec, meta: list[VariableMeta],
               cond: np.ndarray | None, repeats: int = 1) -> Tensor:
    if spec.variant == "multi_variable":
        h = apply_embeddings(ps, x, meta, repeats=repeats)
    else:
        h = ad.as_tensor(x)
    return _with_condition(h, cond)


def apply_body(ps: ParamSet, h: Tensor, spec: ModelSpec) -> Tensor:
    return nn.apply_mlp(ps, "body", h, len(spec.hidden), hidden_activation="relu")


def apply_heads(ps: ParamSet, h: Tensor, spec: ModelSpec, meta: list[VariableMeta],
                gumbel: list[np.ndarray] | None) -> Tensor:
    """Output layer mapping the shared hidden state to sample space.

    ``gumbel`` carries one noise array per categorical variable (in metadata
    order); None means zero noise, the deterministic evaluation path.
    """
    if spec.variant == "plain":
        return nn.apply_dense(ps, "out", h, "sigmoid")
    parts: list[Tensor] = []
    cat_seen = 0
    for i, v in enumerate(meta):
        out = nn.apply_dense(ps, f"head.{i}", h)
        if v.kind == "categorical":
            noise = 0.0 if gumbel is None else gumbel[cat_seen]
            cat_seen += 1
            parts.append(losses.gumbel_softmax(out, spec.tau, noise=noise))
        else:
            parts.append(ad.sigmoid(out))
    return ad.concat(parts, axis=1)


def draw_head_noise(rng: np.random.Generator, batch: int,
                    meta: list[VariableMeta]) -> list[np.ndarray]:
    """Gumbel noise for every categorical head, in metadata order."""
    return [
        losses.gumbel_noise(rng, (batch, v.width))
        for v in meta
        if v.kind == "categorical"
    ]


def encoder_code(nets: dict[str, ParamSet], x, spec: ModelSpec,
                 meta: list[VariableMeta]) -> Tensor:
    """medgan/arae encoder: data to latent code (never conditioned).

    Codes live in (-1, 1) via tanh so the code-space adversary faces a
    bounded, stationary target.
    """
    ps = nets["encoder"]
    h = apply_body(ps, data_input(ps, x, spec, meta, None), spec)
    return nn.apply_dense(ps, "code", h, "tanh")


def vae_encode(nets: dict[str, ParamSet], x, spec: ModelSpec, meta: list[VariableMeta],
               cond: np.ndarray | None) -> tuple[Tensor, Tensor]:
    ps = nets["encoder"]
    h = apply_body(ps, data_input(ps, x, spec, meta, cond), spec)
    return nn.apply_dense(ps, "mu", h), nn.apply_dense(ps, "logvar", h)


def decode(nets: dict[str, ParamSet], z: Tensor, spec: ModelSpec, meta: list[VariableMeta],
           cond: np.ndarray | None, gumbel: list[np.ndarray] | None) -> Tensor:
    """Decoder for vae (conditioned) and medgan/arae (never conditioned)."""
    ps = nets["decoder"]
    zin = _with_condition(z, cond) if spec.architecture == "vae" else z
    return apply_heads(ps, apply_body(ps, zin, spec), spec, meta, gumbel)


def generator_data(nets: dict[str, ParamSet], z, spec: ModelSpec, meta: list[VariableMeta],
                   cond: np.ndarray | None, gumbel: list[np.ndarray] | None) -> Tensor:
    """gan/wgan/wgan_gp generator: noise straight to sample space."""
    ps = nets["generator"]
    h = apply_body(ps, _with_condition(ad.as_tensor(z), cond), spec)
    return apply_heads(ps, h, spec, meta, gumbel)


def generator_code(nets: dict[str, ParamSet], z, spec: ModelSpec,
                   cond: np.ndarray | None) -> Tensor:
    """medgan (additive shortcut blocks) and arae (mlp) code generators.

    Outputs pass through tanh to land in the encoder's code space.
    """
    ps = nets["generator"]
    zin = _with_condition(ad.as_tensor(z), cond)
    if spec.architecture == "medgan":
        h = nn.apply_dense(ps, "proj", zin)
        h = nn.apply_dense(ps, "s0", h, "relu") + h
        h = nn.apply_dense(ps, "s1", h, "relu") + h
        return ad.tanh(h)
    h = apply_body(ps, zin, spec)
    return nn.apply_dense(ps, "code", h, "tanh")


def discriminator_score(nets: dict[str, ParamSet], x, spec: ModelSpec,
                        meta: list[VariableMeta], cond: np.ndarray | None,
                        repeats: int = 1) -> Tensor:
    """gan/medgan discriminator probability in (0, 1)."""
    ps = nets["discriminator"]
    h = apply_body(ps, data_input(ps, x, spec, meta, cond, repeats=repeats), spec)
    return nn.apply_dense(ps, "out", h, "sigmoid")


def critic_score(nets: dict[str, ParamSet], x, spec: ModelSpec, meta: list[VariableMeta],
                 cond: np.ndarray | None) -> Tensor:
    """wgan/wgan_gp critic: unbounded scalar score per row."""
    ps = nets["critic"]
    h = apply_body(ps, data_input(ps, x, spec, meta, cond), spec)
    return nn.apply_dense(ps, "out", h)


def code_critic_score(nets: dict[str, ParamSet], code, spec: ModelSpec,
                      cond: np.ndarray | None) -> Tensor:
    """arae critic over latent codes."""
    ps = nets["critic"]
    h = apply_body(ps, _with_condition(ad.as_tensor(code), cond), spec)
    return nn.apply_dense(ps, "out", h)


def minibatch_augment(x: np.ndarray) -> np.ndarray:
    """Append the per-dimension batch mean to every row (minibatch averaging)."""
    means = np.broadcast_to(x.mean(axis=0, keepdims=True), x.shape)
    return np.concatenate([x, means], axis=1)


# -- trained model container ----------------------------------------------------------


@dataclass
class TrainedGenerator:
    """Immutable result of training: spec, learned parameters, provenance."""

    spec: ModelSpec
    meta: list[VariableMeta]
    networks: dict[str, ParamSet]
    strategy: str | None = None
    fingerprint: dict = field(default_factory=dict)
    loss_history: dict[str, list[float]] = field(default_factory=dict)

    @property
    def width(self) -> int:
        return total_width(self.meta)

    def to_json(self) -> str:
        return json.dumps(
            {
                "format_version": MODEL_FORMAT_VERSION,
                "spec": self.spec.to_obj(),
                "meta": [v.to_obj() for v in self.meta],
                "strategy": self.strategy,
                "fingerprint": self.fingerprint,
                "loss_history": self.loss_history,
                "networks": {k: ps.to_obj() for k, ps in self.networks.items()},
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def from_json(cls, raw: str) -> "TrainedGenerator":
        obj = json.loads(raw)
        if obj.get("format_version") != MODEL_FORMAT_VERSION:
            raise ConfigError(f"unsupported model file version {obj.get('format_version')!r}")
        return cls(
            spec=ModelSpec.from_obj(obj["spec"]),
            meta=[VariableMeta.from_obj(v) for v in obj["meta"]],
            networks={k: ParamSet.from_obj(v) for k, v in obj["networks"].items()},
            strategy=obj.get("strategy"),
            fingerprint=obj.get("fingerprint", {}),
            loss_history=obj.get("loss_history", {}),
        )

    @classmethod
    def load(cls, path) -> "TrainedGenerator":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def fingerprint_rows(row_indices: np.ndarray | None, rows: np.ndarray) -> dict:
    """Provenance of a training set: row indices plus a content hash."""
    digest = hashlib.sha256(np.ascontiguousarray(rows, dtype=np.float64).tobytes()).hexdigest()
    return {
        "sha256": digest,
        "n_rows": int(len(rows)),
        "row_indices": [] if row_indices is None else [int(i) for i in row_indices],
    }


def _sample_vae_outputs(raw: np.ndarray, spec: ModelSpec, meta: list[VariableMeta],
                        rng: np.random.Generator) -> np.ndarray:
    """Draw from the VAE's per-variable output distributions.

    The decoder parameterizes p(x|z): binary columns are Bernoulli rates and
    plain-variant categorical blocks are (unnormalized) category weights, so
    generation samples them; multi-variable categorical heads already sample
    through their Gumbel noise, and numerical heads are point predictions.
    """
    out = raw.copy()
    for v, sl in zip(meta, variable_slices(meta)):
        if v.kind == "binary":
            out[:, sl] = (rng.random((len(out), 1)) < raw[:, sl]).astype(np.float64)
        elif v.kind == "categorical" and spec.variant == "plain":
            block = np.clip(raw[:, sl], 1e-12, None)
            probs = block / block.sum(axis=1, keepdims=True)
            cum = np.cumsum(probs, axis=1)
            picks = (rng.random((len(out), 1)) > cum).sum(axis=1)
            hot = np.zeros_like(block)
            hot[np.arange(len(out)), picks] = 1.0
            out[:, sl] = hot
    return out


def generate(trained: TrainedGenerator, n: int, rng: np.random.Generator,
             condition: int | None = None) -> np.ndarray:
    """n raw (pre-discretization) rows from latent noise."""
    if n < 1:
        raise ConfigError(f"generate needs n >= 1, got {n}")
    spec = trained.spec
    if spec.conditional and condition is None:
        raise ConfigError("this model is conditional: a class condition is required")
    if not spec.conditional and condition is not None:
        raise ConfigError("this model is unconditional: no class condition is accepted")
    cond = None
    if spec.conditional:
        cond = onehot_condition(np.full(n, int(condition)))
    z = rng.standard_normal((n, spec.latent))
    gumbel = draw_head_noise(rng, n, trained.meta) if spec.variant == "multi_variable" else None
    nets = trained.networks
    if spec.architecture == "vae":
        out = decode(nets, ad.constant(z), spec, trained.meta, cond, gumbel)
        return _sample_vae_outputs(out.value, spec, trained.meta, rng)
    if spec.architecture in ("gan", "wgan", "wgan_gp"):
        out = generator_data(nets, z, spec, trained.meta, cond, gumbel)
    else:  # medgan, arae
        code = generator_code(nets, z, spec, cond)
        out = decode(nets, code, spec, trained.meta, None, gumbel)
    return out.value.copy()
