"""Parameter containers, dense layers, and deterministic serialization."""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

ACTIVATIONS = {
    "identity": lambda t: t,
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "softmax": lambda t: ad.softmax(t, axis=-1),
}

PARAMSET_FORMAT_VERSION = 1


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class ParamSet:
    """Named, ordered collection of trainable arrays.

    Entries are autodiff leaves; insertion order is the canonical parameter
    order used by the optimizer and by serialization.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ShapeError(f"parameter {name!r} already registered")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def add_dense(self, name: str, fan_in: int, fan_out: int, rng: np.random.Generator,
                  scale: float | None = None) -> None:
        """Register a weight matrix and zero bias for one dense layer.

        ``scale`` overrides the Glorot limit (used for weight-clamped critics,
        whose parameters must start inside the clamp box).
        """
        if scale is None:
            w = glorot_uniform(rng, fan_in, fan_out)
        else:
            w = rng.uniform(-scale, scale, size=(fan_in, fan_out))
        self.add(f"{name}.w", w)
        self.add(f"{name}.b", np.zeros(fan_out))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def all_finite(self) -> bool:
        return all(np.isfinite(t.value).all() for t in self._params.values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, t in self._params.items():
            t.value = np.asarray(values[k], dtype=np.float64).reshape(t.value.shape)

    # -- serialization --------------------------------------------------------

    def to_obj(self) -> dict:
        """JSON-serializable container; round-trips float64 exactly."""
        return {
            "version": PARAMSET_FORMAT_VERSION,
            "seed": self.seed,
            "entries": [
                {"name": k, "shape": list(t.value.shape), "data": t.value.ravel().tolist()}
                for k, t in self._params.items()
            ],
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "ParamSet":
        if obj.get("version") != PARAMSET_FORMAT_VERSION:
            raise ShapeError(f"unsupported parameter container version: {obj.get('version')!r}")
        ps = cls(seed=obj.get("seed", 0))
        for entry in obj["entries"]:
            ps.add(entry["name"], np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"]))
        return ps

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_obj(), sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ParamSet":
        return cls.from_obj(json.loads(raw.decode()))


class ParamGroup:
    """View over several ParamSets, optimized as one unit."""

    def __init__(self, parts: dict[str, ParamSet]):
        self._parts = dict(parts)

    def tensors(self) -> list[Tensor]:
        return [t for ps in self._parts.values() for t in ps.tensors()]

    def names(self) -> list[str]:
        return [f"{key}/{n}" for key, ps in self._parts.items() for n in ps.names()]

    def all_finite(self) -> bool:
        return all(ps.all_finite() for ps in self._parts.values())


def dense(x: Tensor, weights: Tensor, bias: Tensor, activation: str = "identity") -> Tensor:
    """Affine map plus activation. Raises ShapeError on incompatible shapes."""
    if activation not in ACTIVATIONS:
        raise ShapeError(f"unknown activation {activation!r}")
    x = ad.as_tensor(x)
    if x.value.ndim != 2 or weights.value.ndim != 2:
        raise ShapeError(
            f"dense expects 2-D input/weights, got {x.value.shape} and {weights.value.shape}"
        )
    if x.value.shape[1] != weights.value.shape[0]:
        raise ShapeError(
            f"dense input width {x.value.shape[1]} != weight fan-in {weights.value.shape[0]}"
        )
    if bias.value.shape != (weights.value.shape[1],):
        raise ShapeError(
            f"dense bias shape {bias.value.shape} != ({weights.value.shape[1]},)"
        )
    return ACTIVATIONS[activation](ad.add(ad.matmul(x, weights), bias))


def apply_dense(ps: ParamSet, name: str, x: Tensor, activation: str = "identity") -> Tensor:
    return dense(x, ps[f"{name}.w"], ps[f"{name}.b"], activation)


def init_mlp(ps: ParamSet, name: str, dims: list[int], rng: np.random.Generator,
             scale: float | None = None) -> None:
    """Register parameters for a stack of dense layers with widths ``dims``."""
    for i in range(len(dims) - 1):
        ps.add_dense(f"{name}.{i}", dims[i], dims[i + 1], rng, scale=scale)


def apply_mlp(ps: ParamSet, name: str, x: Tensor, n_layers: int,
              hidden_activation: str = "relu", final_activation: str | None = None) -> Tensor:
    """Run a registered dense stack; the last layer takes ``final_activation``."""
    h = x
    for i in range(n_layers):
        last = i == n_layers - 1
        act = final_activation if last and final_activation is not None else hidden_activation
        h = apply_dense(ps, f"{name}.{i}", h, act)
    return h
