"""The forward pair (G1 with text encoder, D1) and the inverse pair (G2, D2)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import ndmath as nd
from .ndmath import Tensor


@dataclass(frozen=True)
class NetSpec:
    d_s: int
    d_v: int
    num_classes: int
    d_embed: int | None = None
    d_noise: int = 100
    d_hidden: int = 4096
    d_hidden_disc: int = 1024
    attribute_mode: bool = False
    cycle_target: str = "text_feature"
    slope: float = 0.2

    def __post_init__(self):
        if self.d_embed is None:
            object.__setattr__(self, "d_embed", self.d_s if self.attribute_mode else min(1000, self.d_s))
        dims = (self.d_s, self.d_v, self.num_classes, self.d_embed, self.d_noise, self.d_hidden, self.d_hidden_disc)
        if min(dims) < 1:
            raise ValueError("all network dimensions must be >= 1")
        if self.attribute_mode and self.d_embed != self.d_s:
            raise ValueError("attribute_mode requires d_embed == d_s")
        if self.cycle_target not in ("text_feature", "tfidf"):
            raise ValueError(f"unknown cycle_target {self.cycle_target!r}")

    @property
    def d_text_out(self) -> int:
        """Width of G2's output and D2's input."""
        return self.d_embed if self.cycle_target == "text_feature" else self.d_s

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class Params:
    """Ordered named parameter tensors."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def values(self) -> list[Tensor]:
        return list(self.tensors.values())

    def copy(self) -> "Params":
        return Params({k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.tensors.items()})

    def astype(self, dtype) -> "Params":
        return Params({k: Tensor(v.data.astype(dtype), requires_grad=True) for k, v in self.tensors.items()})


class GeneratorParams(Params):
    pass


class DiscriminatorParams(Params):
    pass


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def _dense(rng, prefix: str, d_in: int, d_out: int, dtype) -> dict[str, Tensor]:
    return {
        f"{prefix}.weight": Tensor(_trunc_normal(rng, (d_in, d_out)).astype(dtype), requires_grad=True),
        f"{prefix}.bias": Tensor(np.zeros((1, d_out), dtype=dtype), requires_grad=True),
    }


def _disc(rng, d_in: int, spec: NetSpec, dtype) -> DiscriminatorParams:
    p = {}
    p.update(_dense(rng, "trunk", d_in, spec.d_hidden_disc, dtype))
    p.update(_dense(rng, "critic", spec.d_hidden_disc, 1, dtype))
    p.update(_dense(rng, "classifier", spec.d_hidden_disc, spec.num_classes, dtype))
    return DiscriminatorParams(p)


def init_networks(spec: NetSpec, seed: int, dtype=np.float64):
    """Return (theta, w, delta, zeta) for G1, D1, G2, D2."""
    rng = np.random.default_rng(seed)
    g1 = {}
    if not spec.attribute_mode:
        g1.update(_dense(rng, "encoder", spec.d_s, spec.d_embed, dtype))
    g1.update(_dense(rng, "layer1", spec.d_embed + spec.d_noise, spec.d_hidden, dtype))
    g1.update(_dense(rng, "layer2", spec.d_hidden, spec.d_v, dtype))
    theta = GeneratorParams(g1)
    w = _disc(rng, spec.d_v, spec, dtype)
    g2 = {}
    g2.update(_dense(rng, "layer1", spec.d_v + spec.d_noise, spec.d_hidden, dtype))
    g2.update(_dense(rng, "layer2", spec.d_hidden, spec.d_text_out, dtype))
    delta = GeneratorParams(g2)
    zeta = _disc(rng, spec.d_text_out, spec, dtype)
    return theta, w, delta, zeta


def linear(x: Tensor, p: Params, prefix: str) -> Tensor:
    return nd.matmul(x, p[f"{prefix}.weight"]) + p[f"{prefix}.bias"]


def encode_text(theta: Params, alpha: Tensor, slope: float = 0.2) -> Tensor:
    """Text encoder psi followed by LeakyReLU; identity in attribute mode."""
    if "encoder.weight" not in theta:
        return alpha
    return nd.leaky_relu(linear(alpha, theta, "encoder"), slope)


def g1_forward(theta: Params, alpha: Tensor, z: Tensor, slope: float = 0.2) -> tuple[Tensor, Tensor]:
    s = encode_text(theta, alpha, slope)
    h = nd.leaky_relu(linear(nd.concat([s, z], axis=1), theta, "layer1"), slope)
    return nd.tanh(linear(h, theta, "layer2")), s


def _disc_forward(p: Params, x: Tensor) -> tuple[Tensor, Tensor]:
    h = nd.relu(linear(x, p, "trunk"))
    critic = nd.reshape(linear(h, p, "critic"), (-1,))
    return critic, linear(h, p, "classifier")


def critic_forward(p: Params, x: Tensor) -> Tensor:
    """Critic head only, for gradient-penalty interpolates."""
    return nd.reshape(linear(nd.relu(linear(x, p, "trunk")), p, "critic"), (-1,))


def d1_forward(w: Params, x: Tensor) -> tuple[Tensor, Tensor]:
    return _disc_forward(w, x)


def g2_forward(delta: Params, x: Tensor, z: Tensor, slope: float = 0.2) -> Tensor:
    h = nd.leaky_relu(linear(nd.concat([x, z], axis=1), delta, "layer1"), slope)
    return nd.tanh(linear(h, delta, "layer2"))


def d2_forward(zeta: Params, t: Tensor) -> tuple[Tensor, Tensor]:
    return _disc_forward(zeta, t)
