"""Pixel-exact and relaxed (correctness/completeness/quality) segmentation scores."""

from __future__ import annotations

import hashlib
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .annotations import Dataset
from .targets import as_values, binarize

METRICS = ("precision", "recall", "f1", "correctness", "completeness", "quality")

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    n_pred: int = 0
    n_gt: int = 0
    relaxed: bool = False

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if self.relaxed != other.relaxed:
            raise ValueError("cannot pool exact and relaxed counts")
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.n_pred + other.n_pred,
            self.n_gt + other.n_gt,
            self.relaxed,
        )


def _ratio(num, den, empty_other):
    # nothing to find and nothing found scores 1, missing everything scores 0
    if den == 0:
        return 1.0 if empty_other else 0.0
    return num / den


def prf_from_counts(c: ConfusionCounts):
    p = _ratio(c.tp, c.n_pred, c.n_gt == 0)
    r = _ratio(c.tp, c.n_gt, c.n_pred == 0)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def ccq_from_counts(c: ConfusionCounts):
    corr = _ratio(c.tp, c.n_pred, c.n_gt == 0)
    comp = _ratio(c.n_gt - c.fn, c.n_gt, c.n_pred == 0)
    if c.n_pred == 0 or c.n_gt == 0:
        return corr, comp, min(corr, comp)
    return corr, comp, quality_from(c.tp, c.n_pred, c.n_gt - c.fn, c.n_gt)


def quality_from(tp_pred: int, n_pred: int, tp_gt: int, n_gt: int) -> float:
    """Quality as ``corr * comp / (corr + comp - corr * comp)``.

    With ``corr = tp_pred / n_pred`` and ``comp = tp_gt / n_gt`` this equals
    ``TP / (TP + FP + FN)`` when both sides match the same amount, and stays
    below both ratios when they do not. Evaluated on integers so the single
    rounding step cannot break that ordering.
    """
    num = tp_pred * tp_gt
    if num == 0:
        return 0.0
    return num / (tp_pred * n_gt + tp_gt * n_pred - num)


@dataclass(frozen=True)
class MetricReport:
    precision: float
    recall: float
    f1: float
    correctness: float
    completeness: float
    quality: float
    exact: ConfusionCounts
    relaxed: ConfusionCounts

    @classmethod
    def from_counts(cls, exact: ConfusionCounts, relaxed: ConfusionCounts) -> "MetricReport":
        return cls(*prf_from_counts(exact), *ccq_from_counts(relaxed), exact, relaxed)

    def values(self) -> dict:
        return {k: getattr(self, k) for k in METRICS}

    def to_dict(self) -> dict:
        d = self.values()
        d["exact"] = asdict(self.exact)
        d["relaxed"] = asdict(self.relaxed)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricReport":
        return cls(**{k: d[k] for k in METRICS}, exact=ConfusionCounts(**d["exact"]), relaxed=ConfusionCounts(**d["relaxed"]))


def dilate8(mask) -> np.ndarray:
    """Chebyshev radius-1 dilation; no wraparound at the borders."""
    return ndimage.binary_dilation(np.asarray(mask, dtype=bool), structure=_EIGHT, border_value=0)


def _prepare(pred, gt, ignore):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    if ignore is not None:
        ignore = np.asarray(ignore, dtype=bool)
        if ignore.shape != pred.shape:
            raise ValueError(f"ignore mask shape {ignore.shape} != {pred.shape}")
        pred = pred & ~ignore
        gt = gt & ~ignore
    return pred, gt


def exact_counts(pred, gt, ignore=None) -> ConfusionCounts:
    pred, gt = _prepare(pred, gt, ignore)
    tp = int(np.count_nonzero(pred & gt))
    n_pred, n_gt = int(pred.sum()), int(gt.sum())
    return ConfusionCounts(tp, n_pred - tp, n_gt - tp, n_pred, n_gt, relaxed=False)


def relaxed_counts(pred, gt, ignore=None) -> ConfusionCounts:
    # excluded cells are removed before dilating, so tolerance never crosses an exclusion
    pred, gt = _prepare(pred, gt, ignore)
    tp = int(np.count_nonzero(pred & dilate8(gt)))
    fn = int(np.count_nonzero(gt & ~dilate8(pred)))
    n_pred, n_gt = int(pred.sum()), int(gt.sum())
    return ConfusionCounts(tp, n_pred - tp, fn, n_pred, n_gt, relaxed=True)


def pixel_prf(pred, gt, ignore=None):
    c = exact_counts(pred, gt, ignore)
    return (*prf_from_counts(c), c)


def ccq(pred, gt, ignore=None):
    c = relaxed_counts(pred, gt, ignore)
    return (*ccq_from_counts(c), c)


def downsample_any(mask, factor: int, shape=None) -> np.ndarray:
    """Coarse cell set iff any pixel of its block is set (padding counts as unset)."""
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    m = np.pad(m, ((0, -h % factor), (0, -w % factor)))
    out = m.reshape(m.shape[0] // factor, factor, m.shape[1] // factor, factor).any(axis=(1, 3))
    if shape is not None:
        out = out[: shape[0], : shape[1]]
    return out


def evaluate_image(pred_dm, gt_dm, threshold: float, exclusions=None, d_max: int | None = None) -> MetricReport:
    """Threshold both distance masks and score them.

    ``exclusions`` must already be at the metric resolution; callers pass it for
    pylons only.
    """
    pv, gv = as_values(pred_dm), as_values(gt_dm)
    if pv.shape != gv.shape:
        raise ValueError(f"prediction shape {pv.shape} != ground truth shape {gv.shape}")
    pred = binarize(pred_dm, threshold, d_max)
    gt = binarize(gt_dm, threshold, d_max)
    return MetricReport.from_counts(exact_counts(pred, gt, exclusions), relaxed_counts(pred, gt, exclusions))


# ---------------------------------------------------------------------------
# aggregation


def pooled_report(reports: Iterable[MetricReport]) -> MetricReport:
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to pool")
    exact = ConfusionCounts(relaxed=False)
    relaxed = ConfusionCounts(relaxed=True)
    for r in reports:
        exact = exact + r.exact
        relaxed = relaxed + r.relaxed
    return MetricReport.from_counts(exact, relaxed)


def fold_values(reports: Sequence[MetricReport], pooling: str = "micro") -> dict:
    """Per-fold metric values from the fold's per-image reports."""
    if pooling == "micro":
        return pooled_report(reports).values()
    if pooling == "macro":
        if not reports:
            raise ValueError("no reports to average")
        return {k: float(np.mean([getattr(r, k) for r in reports])) for k in METRICS}
    raise ValueError(f"unknown pooling mode {pooling!r}")


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values")
    return float(v.mean()), float(v.std())


def aggregate(fold_reports: Mapping[int, Sequence[MetricReport]] | Sequence[Sequence[MetricReport]], pooling: str = "micro"):
    """Mean and population std of each metric across folds.

    Returns ``(summary, per_fold)`` where ``summary[metric] = (mean, std)``.
    """
    if isinstance(fold_reports, Mapping):
        folds = [fold_reports[k] for k in sorted(fold_reports)]
    else:
        folds = list(fold_reports)
    folds = [f for f in folds if len(f)]
    if not folds:
        raise ValueError("aggregate needs at least one non-empty fold")
    per_fold = [fold_values(f, pooling) for f in folds]
    summary = {k: mean_std(v[k] for v in per_fold) for k in METRICS}
    return summary, per_fold


# ---------------------------------------------------------------------------
# recording-level folds


@dataclass(frozen=True)
class FoldAssignment:
    folds: dict
    k: int

    def members(self, fold: int) -> list:
        return sorted(i for i, f in self.folds.items() if f == fold)

    def sizes(self) -> list:
        out = [0] * self.k
        for f in self.folds.values():
            out[f] += 1
        return out


def _tiebreak(seed: int, key: str) -> int:
    h = hashlib.blake2b(f"{seed}:{key}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little")


def fold_split(ds: Dataset, k: int = 5, seed: int = 0) -> FoldAssignment:
    """Assign recordings to ``k`` folds, keeping location groups together.

    Location groups are placed largest first onto the currently smallest fold.
    When there are fewer groups than folds, the largest groups are broken up
    into their recordings until every fold can receive one unit; a recording
    is never split.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    recordings = defaultdict(list)
    location_of = {}
    for a in ds.items:
        recordings[a.meta.recording_id].append(a.image_id)
        location_of.setdefault(a.meta.recording_id, a.meta.location_group)
    if len(recordings) < k:
        raise ValueError(f"{len(recordings)} recordings cannot fill {k} folds")

    groups = defaultdict(list)
    for rec in sorted(recordings):
        groups[location_of[rec]].append(rec)
    units = [sorted(recs) for _, recs in sorted(groups.items())]

    def unit_size(u):
        return sum(len(recordings[r]) for r in u)

    while len(units) < k:
        splittable = [u for u in units if len(u) > 1]
        big = max(splittable, key=lambda u: (unit_size(u), u))
        units.remove(big)
        # peel off the largest recording
        rec = max(big, key=lambda r: (len(recordings[r]), r))
        units += [[rec], [r for r in big if r != rec]]

    units.sort(key=lambda u: (-unit_size(u), _tiebreak(seed, "|".join(u))))
    load = [0] * k
    folds = {}
    for u in units:
        f = min(range(k), key=lambda i: (load[i], i))
        load[f] += unit_size(u)
        for rec in u:
            for image_id in recordings[rec]:
                folds[image_id] = f
    return FoldAssignment(folds, k)
