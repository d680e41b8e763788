"""Verification and identification metrics plus the interpolation grid.

Every metric is defined through an explicit threshold sweep over the
distinct scores (predict genuine when score >= threshold), so results
are reproducible bit for bit and directly checkable against brute-force
enumeration.  AUC is the Mann-Whitney statistic with ties counted 0.5;
the equal error rate interpolates linearly between the two bracketing
sweep points; accuracy is the best achievable over all thresholds.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import UsageError
from .networks import NUM_PHASES, age_code, interpolate_codes

FAR_TARGETS = (1e-5, 1e-4, 1e-3, 1e-2)


@dataclass
class ScoredPair:
    similarity: float
    is_genuine: bool
    age_gap: float = 0.0


def cosine_similarity(f1, f2) -> float:
    f1 = np.asarray(f1, dtype=np.float64).ravel()
    f2 = np.asarray(f2, dtype=np.float64).ravel()
    if f1.shape != f2.shape:
        raise UsageError(f"feature lengths differ: {f1.shape} vs {f2.shape}")
    n1, n2 = np.linalg.norm(f1), np.linalg.norm(f2)
    if n1 == 0 or n2 == 0:
        raise UsageError("cosine similarity of a zero vector is undefined")
    return float(f1 @ f2 / (n1 * n2))


def negative_l2(f1, f2) -> float:
    """Distance-based alternative score (higher = more similar)."""
    f1 = np.asarray(f1, dtype=np.float64).ravel()
    f2 = np.asarray(f2, dtype=np.float64).ravel()
    return -float(np.linalg.norm(f1 - f2))


SCORERS = {"cosine": cosine_similarity, "l2": negative_l2}


def _split_scores(pairs):
    scores = np.array([p.similarity for p in pairs], dtype=np.float64)
    genuine = np.array([bool(p.is_genuine) for p in pairs])
    if not np.all(np.isfinite(scores)):
        raise UsageError("pair scores must be finite")
    if genuine.all() or not genuine.any():
        raise UsageError("need at least one genuine and one imposter pair")
    return scores[genuine], scores[~genuine]


def _sweep(gen: np.ndarray, imp: np.ndarray):
    """FAR/TAR at every distinct score threshold, descending.

    Returns (thresholds, far, tar) with a leading virtual threshold above
    all scores (far=0, tar=0); the final entry accepts everything.
    """
    thresholds = np.unique(np.concatenate([gen, imp]))[::-1]
    gen_sorted = np.sort(gen)
    imp_sorted = np.sort(imp)
    tar = 1.0 - np.searchsorted(gen_sorted, thresholds, side="left") / len(gen)
    far = 1.0 - np.searchsorted(imp_sorted, thresholds, side="left") / len(imp)
    thresholds = np.concatenate([[np.inf], thresholds])
    return thresholds, np.concatenate([[0.0], far]), np.concatenate([[0.0], tar])


def roc_curve(pairs):
    """(far, tar) points of the full threshold sweep, (0,0) to (1,1)."""
    gen, imp = _split_scores(pairs)
    _, far, tar = _sweep(gen, imp)
    return list(zip(far.tolist(), tar.tolist()))


def auc(pairs) -> float:
    """P(genuine score > imposter score), ties counted one half."""
    gen, imp = _split_scores(pairs)
    imp_sorted = np.sort(imp)
    below = np.searchsorted(imp_sorted, gen, side="left")
    ties = np.searchsorted(imp_sorted, gen, side="right") - below
    return float((below.sum() + 0.5 * ties.sum()) / (len(gen) * len(imp)))


def eer(pairs) -> float:
    """Operating point with FAR = FRR, linearly interpolated."""
    gen, imp = _split_scores(pairs)
    _, far, tar = _sweep(gen, imp)
    frr = 1.0 - tar
    diff = far - frr
    idx = int(np.argmax(diff >= 0))
    if diff[idx] == 0:
        return float(far[idx])
    f1, f2 = far[idx - 1], far[idx]
    r1, r2 = frr[idx - 1], frr[idx]
    alpha = (r1 - f1) / ((f2 - f1) - (r2 - r1))
    return float(f1 + alpha * (f2 - f1))


def accuracy(pairs) -> float:
    """Best verification accuracy over all thresholds."""
    gen, imp = _split_scores(pairs)
    _, far, tar = _sweep(gen, imp)
    correct = tar * len(gen) + (1.0 - far) * len(imp)
    return float(correct.max() / (len(gen) + len(imp)))


@dataclass
class TarAtFar:
    value: float
    warning: bool

    def __float__(self):
        return self.value


def tar_at_far(pairs, far_target: float) -> TarAtFar:
    """Highest TAR whose operating FAR does not exceed the target."""
    if not 0 < far_target < 1:
        raise UsageError(f"far_target must lie in (0, 1), got {far_target}")
    gen, imp = _split_scores(pairs)
    warning = far_target < 1.0 / len(imp)
    _, far, tar = _sweep(gen, imp)
    ok = far <= far_target
    value = float(tar[ok].max()) if ok.any() else 0.0
    if value == 0.0:
        warning = True
    return TarAtFar(value=value, warning=warning)


def rank1_identification(probe_features, gallery_features, probe_labels,
                         gallery_labels) -> float:
    """Fraction of probes whose most similar gallery entry shares their
    identity; score ties resolve to the lowest gallery index."""
    probes = np.asarray(probe_features, dtype=np.float64)
    gallery = np.asarray(gallery_features, dtype=np.float64)
    if gallery.size == 0:
        raise UsageError("gallery is empty")
    pn = np.linalg.norm(probes, axis=1, keepdims=True)
    gn = np.linalg.norm(gallery, axis=1, keepdims=True)
    if (pn == 0).any() or (gn == 0).any():
        raise UsageError("zero feature vector in rank-1 identification")
    sims = (probes / pn) @ (gallery / gn).T
    best = np.argmax(sims, axis=1)
    return float(np.mean(np.asarray(gallery_labels)[best] == np.asarray(probe_labels)))


# ---------------------------------------------------------------------------
# reports and aggregation

@dataclass
class EvalReport:
    accuracy: float = 0.0
    eer: float = 0.0
    auc: float = 0.0
    roc: list = field(default_factory=list)
    tar_at_far: dict = field(default_factory=dict)
    rank1: float | None = None
    fold_metrics: dict = field(default_factory=dict)   # metric -> per-fold list
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)

    def summary(self) -> str:
        lines = []
        if self.fold_metrics:
            for name in sorted(self.mean):
                lines.append(f"{name}: {self.mean[name]:.4f}±{self.std[name]:.4f} "
                             f"({len(self.fold_metrics[name])} folds)")
        else:
            lines.append(f"accuracy: {self.accuracy:.4f}")
            lines.append(f"eer: {self.eer:.4f}")
            lines.append(f"auc: {self.auc:.4f}")
            for target in sorted(self.tar_at_far):
                entry = self.tar_at_far[target]
                flag = " (resolution warning)" if entry.warning else ""
                lines.append(f"tar@far={target:g}: {entry.value:.4f}{flag}")
            if self.rank1 is not None:
                lines.append(f"rank1: {self.rank1:.4f}")
        return "\n".join(lines)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            if self.fold_metrics:
                writer.writerow(["metric", "mean", "std", "per_fold"])
                for name in sorted(self.mean):
                    writer.writerow([name, repr(self.mean[name]), repr(self.std[name]),
                                     ";".join(repr(v) for v in self.fold_metrics[name])])
            else:
                writer.writerow(["metric", "value"])
                writer.writerow(["accuracy", repr(self.accuracy)])
                writer.writerow(["eer", repr(self.eer)])
                writer.writerow(["auc", repr(self.auc)])
                for target in sorted(self.tar_at_far):
                    writer.writerow([f"tar@far={target:g}", repr(self.tar_at_far[target].value)])
                if self.rank1 is not None:
                    writer.writerow(["rank1", repr(self.rank1)])

    def write_roc_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["far", "tar"])
            for far, tar in self.roc:
                writer.writerow([repr(far), repr(tar)])


def evaluate_pairs(pairs, far_targets=FAR_TARGETS) -> EvalReport:
    return EvalReport(
        accuracy=accuracy(pairs), eer=eer(pairs), auc=auc(pairs),
        roc=roc_curve(pairs),
        tar_at_far={t: tar_at_far(pairs, t) for t in far_targets},
    )


def kfold_aggregate(per_fold_reports) -> EvalReport:
    """Mean and sample standard deviation of each scalar metric."""
    reports = list(per_fold_reports)
    if len(reports) < 2:
        raise UsageError("k-fold aggregation needs at least 2 folds")
    metrics = {"accuracy": [r.accuracy for r in reports],
               "eer": [r.eer for r in reports],
               "auc": [r.auc for r in reports]}
    if all(r.rank1 is not None for r in reports):
        metrics["rank1"] = [r.rank1 for r in reports]
    for target in reports[0].tar_at_far:
        if all(target in r.tar_at_far for r in reports):
            metrics[f"tar@far={target:g}"] = [r.tar_at_far[target].value for r in reports]
    agg = EvalReport(fold_metrics=metrics)
    for name, values in metrics.items():
        agg.mean[name] = float(np.mean(values))
        agg.std[name] = float(np.std(values, ddof=1))
    return agg


# ---------------------------------------------------------------------------
# model-level evaluation helpers

def extract_features(model, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Encoder features in inference mode (running statistics, no dropout)."""
    model.set_training(False)
    chunks = []
    for start in range(0, len(images), batch_size):
        block = images[start:start + batch_size].astype(model.cfg.np_dtype, copy=False)
        chunks.append(model.encode(ad.Tensor(block)).data)
    return np.concatenate(chunks, axis=0)


def score_pair_list(model, dataset, pair_list, metric: str = "cosine"):
    """ScoredPairs for one fold's pair list using encoder features."""
    scorer = SCORERS.get(metric)
    if scorer is None:
        raise UsageError(f"unknown similarity metric {metric!r}")
    wanted = sorted({p.index_a for p in pair_list.pairs} | {p.index_b for p in pair_list.pairs})
    images = np.stack([dataset.samples[i].image for i in wanted])
    feats = extract_features(model, images)
    position = {idx: k for k, idx in enumerate(wanted)}
    return [ScoredPair(similarity=scorer(feats[position[p.index_a]], feats[position[p.index_b]]),
                       is_genuine=p.is_genuine, age_gap=p.age_gap)
            for p in pair_list.pairs]


def evaluate_folds(model, dataset, fold_ids, pair_seed: int = 0,
                   metric: str = "cosine") -> EvalReport:
    """Per-fold verification reports aggregated as mean and std."""
    from .synthdata import make_pairs
    reports = []
    for fold_id in fold_ids:
        pairs = score_pair_list(model, dataset, make_pairs(dataset, fold_id, pair_seed),
                                metric=metric)
        reports.append(evaluate_pairs(pairs))
    if len(reports) == 1:
        return reports[0]
    return kfold_aggregate(reports)


# ---------------------------------------------------------------------------
# manifold interpolation grid

def manifold_grid(model, sample_a, sample_b, steps_identity: int, steps_age: int):
    """Decode a grid: rows interpolate the two identities' features, columns
    interpolate the age code across all seven phases."""
    if steps_identity < 2 or steps_age < 2:
        raise UsageError("interpolation grid needs at least 2 steps per axis")
    model.set_training(False)
    dtype = model.cfg.np_dtype
    xa = ad.Tensor(sample_a.image[None].astype(dtype))
    xb = ad.Tensor(sample_b.image[None].astype(dtype))
    fa = model.encode(xa).data[0]
    fb = model.encode(xb).data[0]

    positions = np.linspace(0.0, NUM_PHASES - 1, steps_age)
    codes = []
    for pos in positions:
        lo_phase = int(np.floor(pos))
        hi_phase = min(lo_phase + 1, NUM_PHASES - 1)
        if hi_phase == lo_phase:
            codes.append(age_code(lo_phase, dtype))
        else:
            codes.append(interpolate_codes(age_code(lo_phase, dtype),
                                           age_code(hi_phase, dtype),
                                           float(pos - lo_phase)))
    grid = np.empty((steps_identity, steps_age, 3,
                     model.cfg.image_size, model.cfg.image_size), dtype=np.float32)
    attention = np.empty((steps_identity, steps_age, 1,
                          model.cfg.image_size, model.cfg.image_size), dtype=np.float32) \
        if model.decoder.use_attention else None
    for i, u in enumerate(np.linspace(0.0, 1.0, steps_identity)):
        f = (1 - u) * fa + u * fb
        x_blend = (1 - u) * sample_a.image + u * sample_b.image
        xt = ad.Tensor(x_blend[None].astype(dtype))
        for j, code in enumerate(codes):
            att, _, xhat = model.decode(ad.Tensor(f[None]), code[None], xt)
            grid[i, j] = xhat.data[0]
            if attention is not None:
                attention[i, j] = att.data[0]
    return grid, attention


def grid_to_image(grid: np.ndarray) -> np.ndarray:
    """Tile a (rows, cols, C, H, W) grid into one (C, rows*H, cols*W) image."""
    rows, cols, c, h, w = grid.shape
    return grid.transpose(2, 0, 3, 1, 4).reshape(c, rows * h, cols * w)
