"""Zero-shot and generalized zero-shot evaluation with synthesized features."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ndmath as nd
from .datamodel import Dataset, MinMaxScaler, Split, partition
from .networks import NetSpec, Params, g1_forward


class MissingScalerError(ValueError):
    pass


@dataclass
class SynthesizedBank:
    features: np.ndarray  # (len(classes) * n) x d_v, original feature space
    labels: np.ndarray
    classes: tuple[int, ...]
    n: int


def synthesize(theta: Params, spec: NetSpec, scaler: MinMaxScaler | None, semantic: np.ndarray,
               classes: Sequence[int], n: int = 60, seed: int = 0) -> SynthesizedBank:
    """Draw ``n`` generator outputs per class with independent noise."""
    if scaler is None:
        raise MissingScalerError("a feature scaler is required to map synthesized features back")
    classes = tuple(int(c) for c in classes)
    dtype = theta.values()[0].dtype
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.asarray(classes, dtype=np.int64), n)
    alpha = nd.Tensor(np.asarray(semantic, dtype=dtype)[labels])
    z = nd.gaussian_sample(rng, (labels.size, spec.d_noise), dtype)
    with nd.no_grad():
        x_hat, _ = g1_forward(theta, alpha, z, spec.slope)
    return SynthesizedBank(scaler.inverse(x_hat.data), labels, classes, n)


def _sq_distances(queries: np.ndarray, refs: np.ndarray, chunk: int = 256) -> np.ndarray:
    queries = np.asarray(queries, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    out = np.empty((queries.shape[0], refs.shape[0]))
    for lo in range(0, queries.shape[0], chunk):
        diff = queries[lo:lo + chunk, None, :] - refs[None, :, :]
        out[lo:lo + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def knn_classify(ref_x: np.ndarray, ref_y: np.ndarray, queries: np.ndarray, k: int = 1) -> np.ndarray:
    """Majority vote of the k nearest references (Euclidean).

    Vote ties go to the smallest summed distance, then the lowest class id.
    """
    ref_y = np.asarray(ref_y, dtype=np.int64)
    if ref_y.size == 0:
        raise ValueError("empty reference set")
    if not 1 <= k <= ref_y.size:
        raise ValueError(f"k must lie in [1, {ref_y.size}]")
    dist = np.sqrt(_sq_distances(queries, ref_x))
    preds = np.empty(dist.shape[0], dtype=np.int64)
    for i, row in enumerate(dist):
        near = np.lexsort((ref_y, row))[:k]
        votes: dict[int, list[float]] = {}
        for j in near:
            entry = votes.setdefault(int(ref_y[j]), [0, 0.0])
            entry[0] += 1
            entry[1] += row[j]
        preds[i] = min(votes, key=lambda c: (-votes[c][0], votes[c][1], c))
    return preds


def top1(predictions, truth) -> float:
    predictions, truth = np.asarray(predictions), np.asarray(truth)
    if predictions.shape != truth.shape:
        raise ValueError("predictions and truth differ in length")
    if truth.size == 0:
        raise ValueError("no predictions to score")
    return float(np.mean(predictions == truth))


def per_class_accuracy(predictions, truth) -> float:
    predictions, truth = np.asarray(predictions), np.asarray(truth)
    classes = np.unique(truth)
    return float(np.mean([np.mean(predictions[truth == c] == c) for c in classes]))


# ---------------------------------------------------------------------------
# generalized zero-shot
# ---------------------------------------------------------------------------


def class_scores(queries: np.ndarray, ref_x: np.ndarray, ref_y: np.ndarray, num_classes: int) -> np.ndarray:
    """Negative distance to the nearest reference of each class; -inf for absent classes."""
    dist = np.sqrt(_sq_distances(queries, ref_x))
    ref_y = np.asarray(ref_y, dtype=np.int64)
    scores = np.full((dist.shape[0], num_classes), -np.inf)
    for c in np.unique(ref_y):
        scores[:, c] = -dist[:, ref_y == c].min(axis=1)
    return scores


@dataclass
class SUCurve:
    gammas: np.ndarray
    unseen_acc: np.ndarray
    seen_acc: np.ndarray

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.unseen_acc.tolist(), self.seen_acc.tolist()))


def default_gamma_grid(scores: np.ndarray, seen: Sequence[int], unseen: Sequence[int], size: int = 199) -> np.ndarray:
    gap = scores[:, list(seen)].max(axis=1) - scores[:, list(unseen)].max(axis=1)
    gap = gap[np.isfinite(gap)]
    span = float(np.percentile(np.abs(gap), 99.9)) if gap.size else 1.0
    span = span if span > 0 else 1.0
    return np.concatenate([[-np.inf], np.linspace(-span, span, size), [np.inf]])


def su_curve(scores: np.ndarray, truth, seen: Sequence[int], unseen: Sequence[int],
             gammas: Sequence[float] | None = None) -> SUCurve:
    """Sweep a calibration offset subtracted from seen-class scores.

    Accuracies are per-class averages over the seen-truth and unseen-truth
    test samples respectively; prediction always ranges over all classes.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    seen, unseen = list(seen), list(unseen)
    if gammas is None:
        gammas = default_gamma_grid(scores, seen, unseen)
    gammas = np.asarray(list(gammas), dtype=np.float64)
    if gammas.size == 0:
        raise ValueError("gamma grid is empty")
    seen_mask = np.zeros(scores.shape[1], dtype=bool)
    seen_mask[seen] = True
    on_seen = np.isin(truth, seen)
    on_unseen = np.isin(truth, unseen)
    ua, sa = [], []
    for g in gammas:
        adj = scores.copy()
        if g == np.inf:
            adj[:, seen_mask] = -np.inf
        elif g == -np.inf:
            adj[:, ~seen_mask] = -np.inf
        else:
            adj[:, seen_mask] -= g
        pred = np.argmax(adj, axis=1)
        ua.append(per_class_accuracy(pred[on_unseen], truth[on_unseen]) if on_unseen.any() else 0.0)
        sa.append(per_class_accuracy(pred[on_seen], truth[on_seen]) if on_seen.any() else 0.0)
    return SUCurve(gammas, np.asarray(ua), np.asarray(sa))


def ausuc(curve: SUCurve | Sequence[tuple[float, float]]) -> float:
    """Trapezoidal area under the (unseen, seen) accuracy polyline.

    Points are ordered by unseen accuracy (seen accuracy descending on ties)
    and the polyline is extended to both axes.
    """
    pts = curve.points() if isinstance(curve, SUCurve) else [tuple(map(float, p)) for p in curve]
    if len(pts) < 2:
        raise ValueError("AUSUC needs at least two curve points")
    pts = sorted(set(pts), key=lambda p: (p[0], -p[1]))
    if pts[0][0] > 0:
        pts.insert(0, (0.0, pts[0][1]))
    if pts[-1][1] > 0:
        pts.append((pts[-1][0], 0.0))
    u = np.array([p[0] for p in pts])
    s = np.array([p[1] for p in pts])
    return float(np.sum(np.diff(u) * (s[1:] + s[:-1]) * 0.5))


# ---------------------------------------------------------------------------
# baselines and reports
# ---------------------------------------------------------------------------


def ridge_baseline(ds: Dataset, split: Split, grid=(1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)) -> float:
    """Unseen Top-1 of a ridge map from semantics to visual features.

    Each unseen test sample goes to the nearest predicted class prototype.
    The ridge strength is picked by leave-one-seen-class-out error.
    """
    part = partition(ds, split)
    x = ds.visual[part.train].astype(np.float64)
    a = ds.semantic.astype(np.float64)
    seen = list(split.seen_classes)
    means = np.stack([x[ds.labels[part.train] == c].mean(axis=0) for c in seen])

    def fit(rows, reg):
        s = a[rows]
        return np.linalg.solve(s.T @ s + reg * np.eye(s.shape[1]), s.T @ means[[seen.index(r) for r in rows]])

    def cv_error(reg):
        err = 0.0
        for c in seen:
            rest = [r for r in seen if r != c]
            err += float(np.sum((a[c] @ fit(rest, reg) - means[seen.index(c)]) ** 2))
        return err

    reg = min(grid, key=cv_error)
    proto = a[list(split.unseen_classes)] @ fit(seen, reg)
    q = ds.visual[part.unseen_test]
    pred = knn_classify(proto, np.asarray(split.unseen_classes), q, k=1)
    return top1(pred, ds.labels[part.unseen_test])


@dataclass
class EvalReport:
    top1_unseen: float
    ausuc: float
    curve: SUCurve
    config_hash: str
    seed: int
    timing: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "top1_unseen": self.top1_unseen,
            "ausuc": self.ausuc,
            "curve": {
                "gamma": [_json_float(g) for g in self.curve.gammas.tolist()],
                "unseen_acc": self.curve.unseen_acc.tolist(),
                "seen_acc": self.curve.seen_acc.tolist(),
            },
            "config_hash": self.config_hash,
            "seed": self.seed,
        }
        if include_timing:
            d["timing"] = self.timing
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"


def _json_float(x: float):
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def curve_csv(curve: SUCurve) -> str:
    lines = ["gamma,unseen_acc,seen_acc"]
    for g, u, s in zip(curve.gammas, curve.unseen_acc, curve.seen_acc):
        lines.append(f"{g!r},{u!r},{s!r}")
    return "\n".join(lines) + "\n"


def evaluate(theta: Params, spec: NetSpec, scaler: MinMaxScaler | None, ds: Dataset, split: Split,
             n: int = 60, k: int = 1, seed: int = 0, config_hash: str = "") -> EvalReport:
    """Unseen Top-1 against a synthesized bank plus the GZSL curve and its area.

    Seen classes are represented by their real training features.
    """
    t0 = time.perf_counter()
    part = partition(ds, split)
    bank = synthesize(theta, spec, scaler, ds.semantic, split.unseen_classes, n=n, seed=seed)
    q_unseen = ds.visual[part.unseen_test]
    y_unseen = ds.labels[part.unseen_test]
    acc = top1(knn_classify(bank.features, bank.labels, q_unseen, k=k), y_unseen)
    t1 = time.perf_counter()

    ref_x = np.concatenate([ds.visual[part.train].astype(np.float64), bank.features])
    ref_y = np.concatenate([ds.labels[part.train], bank.labels])
    test_idx = np.concatenate([part.seen_test, part.unseen_test])
    scores = class_scores(ds.visual[test_idx], ref_x, ref_y, ds.num_classes)
    curve = su_curve(scores, ds.labels[test_idx], split.seen_classes, split.unseen_classes)
    area = ausuc(curve)
    t2 = time.perf_counter()
    return EvalReport(acc, area, curve, config_hash, seed, {"zsl_s": t1 - t0, "gzsl_s": t2 - t1})
