"""Losses, the alternating update schedule and checkpoints.

Random draws inside one iteration happen in a fixed order, which is what
makes training reproducible and lets a plain single-GAN loop be compared
against it draw for draw:

    for each critic step:
        batch indices
        D1: noise z, interpolation eps
        D2: noise z (G1), noise z (G2), interpolation eps
    batch indices
    G1: noise z
    G2: noise z (G1), noise z (G2)
    cycle: noise z (G1), noise z' (G2, skipped when shared)

Draws for disabled terms are skipped.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import ndmath as nd
from .datamodel import ClassStats, Dataset, MinMaxScaler, Split, class_means, partition
from .ndmath import Tensor
from .networks import NetSpec, Params, critic_forward, d1_forward, d2_forward, encode_text, g1_forward, g2_forward, init_networks

log = logging.getLogger(__name__)

ABLATIONS = ("full", "cyc_only", "adv_cyc", "cla_cyc")
HISTORY_COLUMNS = ("iteration", "loss_d1", "loss_g1", "loss_d2", "loss_g2", "loss_cyc", "pivot")
CHECKPOINT_VERSION = 1


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, history: list[dict]):
        super().__init__(message)
        self.history = history


class CheckpointError(ValueError):
    """Checkpoint payload is missing or corrupt."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written for another format or network layout."""


@dataclass
class TrainConfig:
    cyc_coeff: float = 10.0
    cls_inverse_coeff: float = 12.0
    gp_coeff: float = 10.0
    pivot_coeff: float = 1.0
    critic_steps: int = 5
    batch_size: int = 1000
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    iterations: int = 3000
    seed: int = 0
    cycle_target: str = "text_feature"
    ablation: str = "full"
    lipschitz_mode: str = "gradient_penalty"
    clip_value: float = 0.01
    inverse_enabled: bool = True
    half_on_fake_only: bool = False
    shared_cycle_noise: bool = False
    dtype: str = "float32"
    d_embed: int | None = None
    d_noise: int = 100
    d_hidden: int = 4096
    d_hidden_disc: int = 1024
    attribute_mode: bool = False
    slope: float = 0.2

    def __post_init__(self):
        for name in ("cyc_coeff", "cls_inverse_coeff", "gp_coeff", "pivot_coeff", "clip_value"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.critic_steps < 1:
            raise ValueError("critic_steps must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.lipschitz_mode not in ("gradient_penalty", "weight_clip"):
            raise ValueError("lipschitz_mode must be gradient_penalty or weight_clip")
        if self.cycle_target not in ("text_feature", "tfidf"):
            raise ValueError("cycle_target must be text_feature or tfidf")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def net_spec(self, d_s: int, d_v: int, num_classes: int) -> NetSpec:
        return NetSpec(
            d_s=d_s,
            d_v=d_v,
            num_classes=num_classes,
            d_embed=self.d_embed,
            d_noise=self.d_noise,
            d_hidden=self.d_hidden,
            d_hidden_disc=self.d_hidden_disc,
            attribute_mode=self.attribute_mode,
            cycle_target=self.cycle_target,
            slope=self.slope,
        )


def load_config(path: str | Path) -> TrainConfig:
    return TrainConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class Batch:
    x: Tensor  # scaled real visual features
    alpha: Tensor  # semantic row of each sample's class
    labels: np.ndarray


@dataclass
class TrainData:
    """Scaled seen-class training samples plus their class centres."""

    x: np.ndarray
    alpha: np.ndarray
    labels: np.ndarray
    semantic: np.ndarray
    stats: ClassStats
    scaler: MinMaxScaler

    def batch(self, idx: np.ndarray) -> Batch:
        return Batch(Tensor(self.x[idx]), Tensor(self.alpha[idx]), self.labels[idx])


def prepare_data(ds: Dataset, split: Split, dtype="float64") -> TrainData:
    split.check(ds)
    part = partition(ds, split)
    raw = ds.visual[part.train].astype(np.float64)
    scaler = MinMaxScaler.fit(raw)
    x = scaler.transform(raw)
    labels = ds.labels[part.train]
    stats = class_means(x, labels, split.seen_classes)
    semantic = ds.semantic.astype(dtype)
    return TrainData(x.astype(dtype), semantic[labels], labels, semantic, stats, scaler)


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------


def frozen(p: Params) -> Params:
    """View of ``p`` that receives no gradient."""
    return Params({k: Tensor(v.data) for k, v in p.tensors.items()})


def _noise(rng, b: int, spec: NetSpec, dtype) -> Tensor:
    return nd.gaussian_sample(rng, (b, spec.d_noise), dtype)


def gradient_penalty(critic, real, fake, rng) -> Tensor:
    """Mean of (||d critic / d x~|| - 1)^2 over per-row interpolates x~."""
    x_t = nd.interpolate(real, fake, rng)
    (g,) = nd.grad(nd.sum_(critic(x_t)), [x_t], create_graph=True)
    gap = nd.grad_norm(g) - 1.0
    return nd.mean(gap * gap)


def visual_pivot(x_fake: Tensor, labels, stats: ClassStats) -> Tensor:
    """Mean over batch classes of the squared distance between the synthetic
    class mean and the real class centre."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    avg = (labels[None, :] == classes[:, None]).astype(x_fake.dtype)
    avg /= avg.sum(axis=1, keepdims=True)
    centres = Tensor(stats.rows(classes.tolist()).astype(x_fake.dtype))
    diff = nd.matmul(Tensor(avg), x_fake) - centres
    return nd.mean(nd.sum_(diff * diff, axis=1))


def _cls_pair(ce_fake: Tensor, ce_real: Tensor, half_on_fake_only: bool) -> Tensor:
    if half_on_fake_only:
        return ce_fake * 0.5 + ce_real
    return (ce_fake + ce_real) * 0.5


def loss_d1(w: Params, theta: Params, batch: Batch, cfg: TrainConfig, spec: NetSpec, rng) -> tuple[Tensor, dict]:
    b = len(batch.labels)
    z = _noise(rng, b, spec, cfg.np_dtype)
    with nd.no_grad():
        x_fake, _ = g1_forward(theta, batch.alpha, z, spec.slope)
    c_fake, l_fake = d1_forward(w, x_fake)
    c_real, l_real = d1_forward(w, batch.x)
    cls = _cls_pair(
        nd.softmax_cross_entropy(l_fake, batch.labels),
        nd.softmax_cross_entropy(l_real, batch.labels),
        cfg.half_on_fake_only,
    )
    wass = nd.mean(c_fake) - nd.mean(c_real)
    total = cls + wass
    terms = {"cls": cls.item(), "wass": wass.item(), "gp": 0.0}
    if cfg.lipschitz_mode == "gradient_penalty" and cfg.gp_coeff > 0:
        gp = gradient_penalty(lambda t: critic_forward(w, t), batch.x, x_fake, rng)
        total = total + gp * cfg.gp_coeff
        terms["gp"] = gp.item()
    return total, terms


def loss_g1(theta: Params, w: Params, batch: Batch, cfg: TrainConfig, spec: NetSpec, rng,
            stats: ClassStats | None = None) -> tuple[Tensor, dict]:
    b = len(batch.labels)
    z = _noise(rng, b, spec, cfg.np_dtype)
    x_fake, _ = g1_forward(theta, batch.alpha, z, spec.slope)
    critic, logits = d1_forward(frozen(w), x_fake)
    adv = -nd.mean(critic)
    cls = nd.softmax_cross_entropy(logits, batch.labels)
    total = adv + cls
    terms = {"adv": adv.item(), "cls": cls.item(), "pivot": 0.0}
    if stats is not None and cfg.pivot_coeff > 0:
        piv = visual_pivot(x_fake, batch.labels, stats)
        total = total + piv * cfg.pivot_coeff
        terms["pivot"] = piv.item()
    return total, terms


def _inverse_terms(ablation: str) -> tuple[bool, bool]:
    """(adversarial, classification) switches for the inverse pair."""
    return {
        "full": (True, True),
        "adv_cyc": (True, False),
        "cla_cyc": (False, True),
        "cyc_only": (False, False),
    }[ablation]


def _text_target(theta: Params, batch: Batch, cfg: TrainConfig, spec: NetSpec) -> Tensor:
    if cfg.cycle_target == "text_feature":
        return encode_text(theta, batch.alpha, spec.slope)
    return batch.alpha


def loss_d2(zeta: Params, delta: Params, theta: Params, batch: Batch, cfg: TrainConfig, spec: NetSpec,
            rng) -> tuple[Tensor, dict]:
    use_adv, use_cls = _inverse_terms(cfg.ablation)
    b = len(batch.labels)
    z1 = _noise(rng, b, spec, cfg.np_dtype)
    z2 = _noise(rng, b, spec, cfg.np_dtype)
    with nd.no_grad():
        x_fake, _ = g1_forward(theta, batch.alpha, z1, spec.slope)
        t_fake = g2_forward(delta, x_fake, z2, spec.slope)
        t_real = _text_target(theta, batch, cfg, spec)
    c_fake, l_fake = d2_forward(zeta, t_fake)
    c_real, l_real = d2_forward(zeta, t_real)
    mu = cfg.cls_inverse_coeff
    total = Tensor(np.zeros((), dtype=cfg.np_dtype))
    terms = {"cls": 0.0, "wass": 0.0, "gp": 0.0}
    if use_cls:
        cls = _cls_pair(
            nd.softmax_cross_entropy(l_fake, batch.labels) * mu,
            nd.softmax_cross_entropy(l_real, batch.labels) * mu,
            cfg.half_on_fake_only,
        )
        total = total + cls
        terms["cls"] = cls.item()
    if use_adv:
        wass = nd.mean(c_fake) - nd.mean(c_real)
        total = total + wass
        terms["wass"] = wass.item()
        if cfg.lipschitz_mode == "gradient_penalty" and cfg.gp_coeff > 0:
            gp = gradient_penalty(lambda t: critic_forward(zeta, t), t_real, t_fake, rng)
            total = total + gp * cfg.gp_coeff
            terms["gp"] = gp.item()
    return total, terms


def loss_g2(delta: Params, zeta: Params, theta: Params, batch: Batch, cfg: TrainConfig, spec: NetSpec,
            rng) -> tuple[Tensor, dict]:
    use_adv, use_cls = _inverse_terms(cfg.ablation)
    b = len(batch.labels)
    z1 = _noise(rng, b, spec, cfg.np_dtype)
    z2 = _noise(rng, b, spec, cfg.np_dtype)
    with nd.no_grad():
        x_fake, _ = g1_forward(theta, batch.alpha, z1, spec.slope)
    t_fake = g2_forward(delta, x_fake, z2, spec.slope)
    critic, logits = d2_forward(frozen(zeta), t_fake)
    total = Tensor(np.zeros((), dtype=cfg.np_dtype))
    terms = {"adv": 0.0, "cls": 0.0}
    if use_adv:
        adv = -nd.mean(critic)
        total = total + adv
        terms["adv"] = adv.item()
    if use_cls:
        cls = nd.softmax_cross_entropy(logits, batch.labels) * cfg.cls_inverse_coeff
        total = total + cls
        terms["cls"] = cls.item()
    return total, terms


def cycle_loss(theta: Params, delta: Params, batch: Batch, cfg: TrainConfig, spec: NetSpec, rng) -> Tensor:
    """coeff * mean over the batch of ||G2(G1(alpha, z), z') - target||^2."""
    b = len(batch.labels)
    z = _noise(rng, b, spec, cfg.np_dtype)
    z2 = z if cfg.shared_cycle_noise else _noise(rng, b, spec, cfg.np_dtype)
    x_fake, s = g1_forward(theta, batch.alpha, z, spec.slope)
    recon = g2_forward(delta, x_fake, z2, spec.slope)
    target = s if cfg.cycle_target == "text_feature" else batch.alpha
    diff = recon - target
    return nd.mean(nd.sum_(diff * diff, axis=1)) * cfg.cyc_coeff


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    config: TrainConfig
    spec: NetSpec
    theta: Params
    w: Params
    delta: Params
    zeta: Params
    opt: dict[str, nd.AdamState]
    rng: np.random.Generator
    iteration: int = 0
    history: list[dict] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=lambda: {k: 0 for k in ("d1", "d2", "g1", "g2", "cyc")})
    scaler: MinMaxScaler | None = None

    def params(self) -> dict[str, Params]:
        return {"theta": self.theta, "w": self.w, "delta": self.delta, "zeta": self.zeta}


def init_state(cfg: TrainConfig, spec: NetSpec, scaler: MinMaxScaler | None = None) -> TrainState:
    theta, w, delta, zeta = init_networks(spec, cfg.seed, cfg.np_dtype)
    opt = {
        name: nd.adam_init(p.values(), cfg.lr, cfg.beta1, cfg.beta2)
        for name, p in (("theta", theta), ("w", w), ("delta", delta), ("zeta", zeta))
    }
    return TrainState(cfg, spec, theta, w, delta, zeta, opt, np.random.default_rng(cfg.seed), scaler=scaler)


def _update(state: TrainState, name: str, loss: Tensor) -> None:
    p = state.params()[name]
    grads = nd.grad(loss, p.values())
    nd.adam_step(p.values(), grads, state.opt[name])


def _clip(p: Params, c: float) -> None:
    for t in p.values():
        np.clip(t.data, -c, c, out=t.data)


def _sample(state: TrainState, data: TrainData) -> Batch:
    n = data.labels.size
    b = min(state.config.batch_size, n)
    return data.batch(state.rng.choice(n, size=b, replace=False))


def _iteration(state: TrainState, data: TrainData) -> dict:
    cfg, spec = state.config, state.spec
    inverse = cfg.inverse_enabled
    use_adv, use_cls = _inverse_terms(cfg.ablation)
    train_d2 = inverse and (use_adv or use_cls)
    clip = cfg.lipschitz_mode == "weight_clip"
    nan = float("nan")
    row = {"iteration": state.iteration + 1, "loss_d1": nan, "loss_g1": nan, "loss_d2": nan,
           "loss_g2": nan, "loss_cyc": nan, "pivot": nan}

    d1_vals, d2_vals = [], []
    for _ in range(cfg.critic_steps):
        batch = _sample(state, data)
        loss, _ = loss_d1(state.w, state.theta, batch, cfg, spec, state.rng)
        _update(state, "w", loss)
        if clip:
            _clip(state.w, cfg.clip_value)
        state.counters["d1"] += 1
        d1_vals.append(loss.item())
        if train_d2:
            loss, _ = loss_d2(state.zeta, state.delta, state.theta, batch, cfg, spec, state.rng)
            _update(state, "zeta", loss)
            if clip:
                _clip(state.zeta, cfg.clip_value)
            state.counters["d2"] += 1
            d2_vals.append(loss.item())
    row["loss_d1"] = float(np.mean(d1_vals))
    if d2_vals:
        row["loss_d2"] = float(np.mean(d2_vals))

    batch = _sample(state, data)
    loss, terms = loss_g1(state.theta, state.w, batch, cfg, spec, state.rng, data.stats)
    _update(state, "theta", loss)
    state.counters["g1"] += 1
    row["loss_g1"] = loss.item()
    row["pivot"] = terms["pivot"]

    if inverse:
        if train_d2:
            loss, _ = loss_g2(state.delta, state.zeta, state.theta, batch, cfg, spec, state.rng)
            _update(state, "delta", loss)
            state.counters["g2"] += 1
            row["loss_g2"] = loss.item()
        loss = cycle_loss(state.theta, state.delta, batch, cfg, spec, state.rng)
        n_theta = len(state.theta.values())
        grads = nd.grad(loss, state.theta.values() + state.delta.values())
        nd.adam_step(state.theta.values(), grads[:n_theta], state.opt["theta"])
        nd.adam_step(state.delta.values(), grads[n_theta:], state.opt["delta"])
        state.counters["cyc"] += 1
        row["loss_cyc"] = loss.item()
    return row


def train_step(state: TrainState, data: TrainData) -> TrainState:
    """Run one iteration: critic updates, generator updates, one cycle update."""
    try:
        row = _iteration(state, data)
    except nd.NonFiniteError as exc:
        log.error("non-finite value at iteration %d; history:\n%s", state.iteration + 1,
                  history_csv(state.history))
        raise TrainingAborted(f"iteration {state.iteration + 1}: {exc}", list(state.history)) from exc
    state.iteration += 1
    state.history.append(row)
    return state


def train(data: TrainData, cfg: TrainConfig, iterations: int | None = None, state: TrainState | None = None,
          progress=None) -> TrainState:
    if state is None:
        spec = cfg.net_spec(data.semantic.shape[1], data.x.shape[1], data.semantic.shape[0])
        state = init_state(cfg, spec, data.scaler)
    total = cfg.iterations if iterations is None else iterations
    for _ in range(total):
        train_step(state, data)
        if progress is not None:
            progress(state)
    return state


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_COLUMNS)
    for row in history:
        writer.writerow([row["iteration"]] + [repr(float(row[k])) for k in HISTORY_COLUMNS[1:]])
    return buf.getvalue()


def write_history(history: list[dict], path: str | Path) -> None:
    Path(path).write_text(history_csv(history), encoding="utf-8")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _arrays(state: TrainState):
    for group, p in state.params().items():
        for name in p.names():
            yield f"{group}/{name}", p[name].data
    for group, opt in state.opt.items():
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            yield f"adam.{group}/m{i}", m
            yield f"adam.{group}/v{i}", v


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    dtype = np.dtype(state.config.dtype).newbyteorder("<")
    manifest, chunks, offset = [], [], 0
    for name, arr in _arrays(state):
        blob = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(blob)
        offset += len(blob)
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "net_spec": state.spec.to_dict(),
        "net_spec_digest": state.spec.digest(),
        "config": state.config.to_dict(),
        "config_digest": state.config.digest(),
        "dtype": dtype.str,
        "scaler": None if state.scaler is None else state.scaler.to_dict(),
        "iteration": state.iteration,
        "counters": state.counters,
        "rng_state": state.rng.bit_generator.state,
        "adam": {g: {"step": o.step, "lr": o.lr, "beta1": o.beta1, "beta2": o.beta2, "eps": o.eps}
                 for g, o in state.opt.items()},
        "payload_bytes": offset,
        "manifest": manifest,
        "history": state.history,
    }
    (root / "params.bin").write_bytes(b"".join(chunks))
    (root / "checkpoint.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")


def load_checkpoint(path: str | Path, expected_spec: NetSpec | None = None) -> TrainState:
    root = Path(path)
    meta_path, payload_path = root / "checkpoint.json", root / "params.bin"
    if not meta_path.exists() or not payload_path.exists():
        raise CheckpointError(f"incomplete checkpoint at {root}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from exc
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {meta.get('format_version')}")
    spec = NetSpec(**meta["net_spec"])
    if spec.digest() != meta["net_spec_digest"]:
        raise CheckpointError("network spec does not match its recorded digest")
    if expected_spec is not None and expected_spec.digest() != meta["net_spec_digest"]:
        raise CheckpointVersionError("checkpoint was written for a different network spec")
    cfg = TrainConfig.from_dict(meta["config"])
    raw = payload_path.read_bytes()
    if len(raw) != meta["payload_bytes"]:
        raise CheckpointError(f"payload has {len(raw)} bytes, expected {meta['payload_bytes']}")
    dtype = np.dtype(meta["dtype"])
    arrays = {}
    for entry in meta["manifest"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(cfg.np_dtype)

    state = init_state(cfg, spec)
    for group, p in state.params().items():
        for name in p.names():
            p[name].data = arrays[f"{group}/{name}"]
    for group, opt in state.opt.items():
        info = meta["adam"][group]
        opt.step, opt.lr, opt.beta1, opt.beta2, opt.eps = (
            info["step"], info["lr"], info["beta1"], info["beta2"], info["eps"])
        opt.m = [arrays[f"adam.{group}/m{i}"] for i in range(len(opt.m))]
        opt.v = [arrays[f"adam.{group}/v{i}"] for i in range(len(opt.v))]
    state.rng.bit_generator.state = meta["rng_state"]
    state.iteration = meta["iteration"]
    state.counters = dict(meta["counters"])
    state.history = [dict(r) for r in meta["history"]]
    state.scaler = None if meta["scaler"] is None else MinMaxScaler.from_dict(meta["scaler"])
    return state
