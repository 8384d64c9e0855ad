"""Datasets of (visual, semantic, label) triplets, splits and persistence."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.cluster.vq import kmeans2

FORMAT_VERSION = 1


class DatasetError(ValueError):
    """Dataset files or contents violate the expected format."""


@dataclass
class Dataset:
    visual: np.ndarray  # N x d_v
    semantic: np.ndarray  # C x d_s, one row per class
    labels: np.ndarray  # N
    class_names: list[str]
    super_class: np.ndarray | None = None  # C parent ids

    def __post_init__(self):
        self.visual = np.asarray(self.visual)
        self.semantic = np.asarray(self.semantic)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.super_class is not None:
            self.super_class = np.asarray(self.super_class, dtype=np.int64)
        self.validate()

    @property
    def num_classes(self) -> int:
        return self.semantic.shape[0]

    @property
    def d_v(self) -> int:
        return self.visual.shape[1]

    @property
    def d_s(self) -> int:
        return self.semantic.shape[1]

    def validate(self) -> None:
        if self.visual.ndim != 2 or self.semantic.ndim != 2:
            raise DatasetError("visual and semantic must be 2-D")
        if self.labels.shape != (self.visual.shape[0],):
            raise DatasetError("one label per visual row is required")
        c = self.semantic.shape[0]
        if len(self.class_names) != c:
            raise DatasetError(f"{len(self.class_names)} class names for {c} classes")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= c):
            raise DatasetError(f"label out of range [0, {c})")
        if self.super_class is not None and self.super_class.shape != (c,):
            raise DatasetError("super_class needs one entry per class")

    def indices_of(self, classes) -> np.ndarray:
        return np.flatnonzero(np.isin(self.labels, np.asarray(list(classes), dtype=np.int64)))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _read_bin(path: Path, dtype: str, count: int) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(path)
    raw = path.read_bytes()
    width = np.dtype(dtype).itemsize
    if len(raw) != count * width:
        raise DatasetError(
            f"{path.name}: expected {count * width} bytes for {count} values, found {len(raw)}"
        )
    return np.frombuffer(raw, dtype=dtype).copy()


def save_dataset(ds: Dataset, path: str | Path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    n, d_v = ds.visual.shape
    c, d_s = ds.semantic.shape
    meta = {
        "format_version": FORMAT_VERSION,
        "N": n,
        "C": c,
        "d_v": d_v,
        "d_s": d_s,
        "class_names": list(ds.class_names),
        "super_class": None if ds.super_class is None else ds.super_class.tolist(),
        "endianness": "little",
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    (root / "visual.bin").write_bytes(np.ascontiguousarray(ds.visual, dtype="<f4").tobytes())
    (root / "semantic.bin").write_bytes(np.ascontiguousarray(ds.semantic, dtype="<f4").tobytes())
    (root / "labels.bin").write_bytes(np.ascontiguousarray(ds.labels, dtype="<u4").tobytes())


def load_dataset(path: str | Path) -> Dataset:
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(meta_path)
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("endianness", "little") != "little":
        raise DatasetError("only little-endian payloads are supported")
    n, c, d_v, d_s = (int(meta[k]) for k in ("N", "C", "d_v", "d_s"))
    visual = _read_bin(root / "visual.bin", "<f4", n * d_v).reshape(n, d_v)
    semantic = _read_bin(root / "semantic.bin", "<f4", c * d_s).reshape(c, d_s)
    labels = _read_bin(root / "labels.bin", "<u4", n).astype(np.int64)
    sup = meta.get("super_class")
    return Dataset(
        visual=visual,
        semantic=semantic,
        labels=labels,
        class_names=list(meta["class_names"]),
        super_class=None if sup is None else np.asarray(sup),
    )


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Split:
    seen_classes: tuple[int, ...]
    unseen_classes: tuple[int, ...]
    style: str = "SCS"
    seed: int = 0
    seen_test_fraction: float = 0.2

    def __post_init__(self):
        if set(self.seen_classes) & set(self.unseen_classes):
            raise ValueError("seen and unseen classes overlap")
        if self.style not in ("SCS", "SCE"):
            raise ValueError(f"unknown split style {self.style!r}")

    def check(self, ds: Dataset) -> None:
        if sorted(self.seen_classes + self.unseen_classes) != list(range(ds.num_classes)):
            raise ValueError("seen and unseen classes must cover every class exactly once")
        if self.style == "SCE" and ds.super_class is not None:
            sup_seen = {int(ds.super_class[c]) for c in self.seen_classes}
            sup_unseen = {int(ds.super_class[c]) for c in self.unseen_classes}
            if sup_seen & sup_unseen:
                raise ValueError("SCE split shares a super-class between seen and unseen")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seen_classes"] = list(self.seen_classes)
        d["unseen_classes"] = list(self.unseen_classes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Split":
        return cls(
            seen_classes=tuple(sorted(int(c) for c in d["seen_classes"])),
            unseen_classes=tuple(sorted(int(c) for c in d["unseen_classes"])),
            style=d.get("style", "SCS"),
            seed=int(d.get("seed", 0)),
            seen_test_fraction=float(d.get("seen_test_fraction", 0.2)),
        )


def save_split(split: Split, path: str | Path) -> None:
    Path(path).write_text(json.dumps(split.to_dict(), indent=2), encoding="utf-8")


def load_split(path: str | Path) -> Split:
    return Split.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _groups(ds: Dataset) -> dict[int, list[int]]:
    sup = ds.super_class if ds.super_class is not None else np.zeros(ds.num_classes, dtype=np.int64)
    groups: dict[int, list[int]] = {}
    for c, g in enumerate(sup.tolist()):
        groups.setdefault(g, []).append(c)
    return groups


def make_split(ds: Dataset, style: str = "SCS", unseen_fraction: float = 0.3, seed: int = 0,
               seen_test_fraction: float = 0.2) -> Split:
    """Choose unseen classes by rule.

    SCS spreads unseen classes across super-classes while every super-class
    keeps a seen member when it has two or more classes. SCE holds out whole
    super-classes.
    """
    if not 0.0 < unseen_fraction < 1.0:
        raise ValueError("unseen_fraction must lie in (0, 1)")
    c = ds.num_classes
    target = min(max(1, int(round(unseen_fraction * c))), c - 1)
    rng = np.random.default_rng(seed)
    groups = _groups(ds)
    order = [int(g) for g in rng.permutation(sorted(groups))]

    unseen: set[int] = set()
    if style == "SCE":
        if ds.super_class is None:
            raise ValueError("SCE split needs super-class metadata")
        if len(groups) < 2:
            raise ValueError("SCE split needs at least two super-classes")
        for g in order[:-1]:
            if len(unseen) >= target:
                break
            unseen.update(groups[g])
    elif style == "SCS":
        pools = {g: [int(x) for x in rng.permutation(groups[g])] for g in order}
        while len(unseen) < target:
            progressed = False
            for g in order:
                if len(unseen) >= target:
                    break
                if len(pools[g]) >= 2:
                    unseen.add(pools[g].pop())
                    progressed = True
            if not progressed:
                # every super-class is down to one seen member
                rest = [x for g in order for x in pools[g]]
                unseen.update(rest[: target - len(unseen)])
                break
    else:
        raise ValueError(f"unknown split style {style!r}")

    seen = tuple(x for x in range(c) if x not in unseen)
    return Split(seen, tuple(sorted(unseen)), style, seed, seen_test_fraction)


@dataclass(frozen=True)
class Partition:
    """Sample indices for training and the two test pools."""

    train: np.ndarray
    seen_test: np.ndarray
    unseen_test: np.ndarray


def partition(ds: Dataset, split: Split) -> Partition:
    """Hold out a per-class fraction of seen samples for generalized ZSL testing."""
    rng = np.random.default_rng([split.seed, 1])
    train, seen_test = [], []
    for c in split.seen_classes:
        idx = np.flatnonzero(ds.labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_test = int(np.floor(split.seen_test_fraction * idx.size))
        if idx.size - n_test < 1:
            n_test = idx.size - 1
        seen_test.append(idx[:n_test])
        train.append(idx[n_test:])
    cat = lambda parts: np.sort(np.concatenate(parts)) if parts else np.zeros(0, np.int64)  # noqa: E731
    return Partition(cat(train), cat(seen_test), ds.indices_of(split.unseen_classes))


# ---------------------------------------------------------------------------
# statistics and scaling
# ---------------------------------------------------------------------------


@dataclass
class ClassStats:
    classes: tuple[int, ...]
    means: np.ndarray  # len(classes) x d_v

    def mean(self, c: int) -> np.ndarray:
        try:
            return self.means[self.classes.index(int(c))]
        except ValueError:
            raise KeyError(f"no statistics for class {c}") from None

    def rows(self, classes) -> np.ndarray:
        return np.stack([self.mean(c) for c in classes])


def class_means(features: np.ndarray, labels: np.ndarray, classes: Sequence[int]) -> ClassStats:
    features = np.asarray(features)
    labels = np.asarray(labels)
    out = np.zeros((len(classes), features.shape[1]), dtype=np.float64)
    for i, c in enumerate(classes):
        rows = features[labels == c]
        if rows.shape[0] == 0:
            raise ValueError(f"class {c} has no samples")
        out[i] = rows.mean(axis=0, dtype=np.float64)
    return ClassStats(tuple(int(c) for c in classes), out)


@dataclass
class MinMaxScaler:
    """Per-dimension affine map of the fitted range onto [-1, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "MinMaxScaler":
        x = np.asarray(x, dtype=np.float64)
        return cls(x.min(axis=0), x.max(axis=0))

    @property
    def _span(self) -> np.ndarray:
        span = self.hi - self.lo
        return np.where(span > 0, span, 1.0)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * (np.asarray(x, dtype=np.float64) - self.lo) / self._span - 1.0

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) + 1.0) * 0.5 * self._span + self.lo

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(np.asarray(d["lo"], dtype=np.float64), np.asarray(d["hi"], dtype=np.float64))


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    num_classes: int = 10
    num_seen: int = 7
    samples_per_class: int = 100
    d_s: int = 32
    d_v: int = 64
    noise_scale: float = 0.1
    seed: int = 0
    num_superclasses: int = 4
    # scale noise by the median distance between class means
    noise_relative: bool = True
    active_per_superclass: int = 8
    active_per_class: int = 4

    def __post_init__(self):
        if not 0 < self.num_seen < self.num_classes:
            raise ValueError("need 0 < num_seen < num_classes")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if not 1 <= self.num_superclasses <= self.num_classes:
            raise ValueError("num_superclasses must lie in [1, num_classes]")


@dataclass
class SyntheticTruth:
    """Generator ground truth kept alongside a synthetic dataset."""

    mapping: np.ndarray  # d_s x d_v
    means: np.ndarray  # C x d_v
    noise_std: float
    extra: dict = field(default_factory=dict)


def _sparse_nonneg(rng: np.random.Generator, d: int, k: int) -> np.ndarray:
    v = np.zeros(d)
    idx = rng.choice(d, size=min(k, d), replace=False)
    v[idx] = rng.uniform(0.5, 1.5, size=idx.size)
    return v


def _superclasses(alpha: np.ndarray, k: int, seed: int) -> np.ndarray:
    if k == 1:
        return np.zeros(alpha.shape[0], dtype=np.int64)
    _, raw = kmeans2(alpha, k, minit="++", seed=np.random.default_rng(seed))
    # relabel by first appearance so ids are stable
    relabel: dict[int, int] = {}
    for r in raw.tolist():
        relabel.setdefault(r, len(relabel))
    return np.asarray([relabel[r] for r in raw.tolist()], dtype=np.int64)


def synthetic_truth(cfg: SynthConfig) -> SyntheticTruth:
    rng = np.random.default_rng(cfg.seed)
    protos = [_sparse_nonneg(rng, cfg.d_s, cfg.active_per_superclass) for _ in range(cfg.num_superclasses)]
    family = rng.integers(0, cfg.num_superclasses, size=cfg.num_classes)
    family[: cfg.num_superclasses] = np.arange(cfg.num_superclasses)
    alpha = np.stack([
        protos[f] * rng.uniform(0.5, 1.5, size=cfg.d_s) + _sparse_nonneg(rng, cfg.d_s, cfg.active_per_class)
        for f in family
    ])
    alpha /= np.linalg.norm(alpha, axis=1, keepdims=True)
    mapping = rng.standard_normal((cfg.d_s, cfg.d_v))
    means = alpha @ mapping
    std = cfg.noise_scale
    if cfg.noise_relative:
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))[np.triu_indices(cfg.num_classes, 1)]
        std = cfg.noise_scale * float(np.median(dist))
    return SyntheticTruth(mapping, means, std, {"alpha": alpha, "family": family})


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Linear ground truth: class means are ``alpha_c @ M``, samples add Gaussian noise."""
    truth = synthetic_truth(cfg)
    rng = np.random.default_rng([cfg.seed, 7])
    n = cfg.samples_per_class
    labels = np.repeat(np.arange(cfg.num_classes), n)
    visual = truth.means[labels] + truth.noise_std * rng.standard_normal((labels.size, cfg.d_v))
    return Dataset(
        visual=visual.astype(np.float32),
        semantic=truth.extra["alpha"].astype(np.float32),
        labels=labels,
        class_names=[f"class_{c:03d}" for c in range(cfg.num_classes)],
        super_class=_superclasses(truth.extra["alpha"], cfg.num_superclasses, cfg.seed),
    )
