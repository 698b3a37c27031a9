"""Composite training loss with exact subgradients.

The loss for a cable/pylon prediction pair is

    ldat(cables) + ldat(pylons) + lambda * malis(cables)

where ``ldat`` is a squared error weighted by log-scaled inverse frequencies of
the discretized ground-truth distances, and ``malis`` is a maximin-affinity
connectivity loss evaluated in small windows over ground-truth background
cells. Everything here is plain numpy so any training stack can check its own
implementation against it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .targets import D_MAX, as_values


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = 0.02
    lam: float = 0.2
    d_max: int = D_MAX
    malis_window: int = 16
    use_lif_weights: bool = True
    use_malis: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.malis_window < 2:
            raise ValueError(f"malis_window must be >= 2, got {self.malis_window}")
        if self.d_max < 1:
            raise ValueError(f"d_max must be >= 1, got {self.d_max}")


class Term(NamedTuple):
    value: float
    grad: np.ndarray


@dataclass
class LossValue:
    scalar: float
    grad_cables: np.ndarray
    grad_pylons: np.ndarray
    terms: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# data term


@dataclass(frozen=True)
class FrequencyTable:
    counts: np.ndarray
    total: int

    @property
    def d_max(self) -> int:
        return len(self.counts) - 1

    def freq(self) -> np.ndarray:
        return self.counts / self.total if self.total else np.zeros(len(self.counts))


def distance_bins(gt, d_max: int = D_MAX) -> np.ndarray:
    # round half up on the pixel-distance scale
    b = np.floor(as_values(gt) * d_max + 0.5).astype(np.int64)
    return np.clip(b, 0, d_max)


def frequency(gt, d_max: int = D_MAX) -> FrequencyTable:
    bins = distance_bins(gt, d_max)
    return FrequencyTable(np.bincount(bins.ravel(), minlength=d_max + 1), int(bins.size))


def lif_weight(f, epsilon: float = 0.02):
    """Log-scaled inverse-frequency weight ``1 / ln(1 + epsilon + f)``."""
    return 1.0 / np.log1p(epsilon + np.asarray(f, dtype=np.float64))


def cell_weights(gt, cfg: LossConfig) -> np.ndarray:
    gt = as_values(gt)
    if not cfg.use_lif_weights:
        return np.ones_like(gt)
    table = frequency(gt, cfg.d_max)
    return lif_weight(table.freq()[distance_bins(gt, cfg.d_max)], cfg.epsilon)


def ldat(pred, gt, cfg: LossConfig = LossConfig()) -> Term:
    pred, gt = as_values(pred), as_values(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    w = cell_weights(gt, cfg)
    r = pred - gt
    return Term(float(np.sum(w * r * r)), 2.0 * w * r)


# ---------------------------------------------------------------------------
# connectivity term

_FOUR = ndimage.generate_binary_structure(2, 1)


def gt_background_components(gt_window) -> np.ndarray:
    """4-connected labels of background cells (gt > 0); cable cells get label 0."""
    labels, _ = ndimage.label(as_values(gt_window) > 0, structure=_FOUR)
    return labels


def _edges(bg: np.ndarray, pred: np.ndarray):
    h, w = bg.shape
    idx = np.arange(h * w).reshape(h, w)
    u = np.concatenate([idx[:, :-1][bg[:, :-1] & bg[:, 1:]], idx[:-1, :][bg[:-1, :] & bg[1:, :]]])
    v = np.concatenate([idx[:, 1:][bg[:, :-1] & bg[:, 1:]], idx[1:, :][bg[:-1, :] & bg[1:, :]]])
    flat = pred.ravel()
    aff = np.minimum(flat[u], flat[v])
    order = np.argsort(-aff, kind="stable")
    return u[order], v[order], aff[order]


class MalisWindow(NamedTuple):
    loss: float
    grad: np.ndarray
    pairs: int
    # (bottleneck nodes, affinity, n_same, n_diff) per merge, in merge order
    merges: list


def _kruskal(pred: np.ndarray, labels: np.ndarray, on_merge=None):
    flat_pred = pred.ravel()
    flat_lab = labels.ravel()
    bg = labels > 0
    parent = {}
    size = {}
    counts = {}
    for c in np.flatnonzero(flat_lab):
        c = int(c)
        parent[c] = c
        size[c] = 1
        counts[c] = {int(flat_lab[c]): 1}

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    merges = []
    u_arr, v_arr, a_arr = _edges(bg, pred)
    for u, v, a in zip(u_arr.tolist(), v_arr.tolist(), a_arr.tolist()):
        ru, rv = find(u), find(v)
        if ru == rv:
            continue
        cu, cv = counts[ru], counts[rv]
        if len(cu) > len(cv):
            cu, cv = cv, cu
        n_same = sum(n * cv.get(lab, 0) for lab, n in cu.items())
        n_diff = size[ru] * size[rv] - n_same
        pu, pv = flat_pred[u], flat_pred[v]
        nodes = (u,) if pu < pv else (v,) if pv < pu else (u, v)
        merges.append((nodes, a, n_same, n_diff))
        if on_merge is not None:
            on_merge(ru, rv, a)
        if size[ru] < size[rv]:
            ru, rv = rv, ru
        parent[rv] = ru
        size[ru] += size[rv]
        merged = counts.pop(rv)
        big = counts[ru]
        for lab, n in merged.items():
            big[lab] = big.get(lab, 0) + n
    return merges


def malis_window_loss(pred_window, gt_window) -> MalisWindow:
    """Maximin connectivity loss over one window.

    Pairs of ground-truth background cells in different background components
    are penalized by ``m**2`` and pairs in the same component by ``(1 - m)**2``,
    where ``m`` is their maximin path score in the prediction. The loss is the
    mean over all unordered background pairs.
    """
    pred = as_values(pred_window)
    labels = gt_background_components(gt_window)
    if pred.shape != labels.shape:
        raise ValueError(f"window shapes differ: {pred.shape} vs {labels.shape}")
    n_bg = int(np.count_nonzero(labels))
    pairs = n_bg * (n_bg - 1) // 2
    grad = np.zeros(pred.shape)
    if pairs == 0:
        return MalisWindow(0.0, grad, 0, [])
    merges = _kruskal(pred, labels)
    total = 0.0
    g = grad.ravel()
    for nodes, a, n_same, n_diff in merges:
        total += n_diff * a * a + n_same * (1.0 - a) ** 2
        d = 2.0 * a * n_diff - 2.0 * (1.0 - a) * n_same
        for node in nodes:
            g[node] += d / len(nodes)
    return MalisWindow(total / pairs, grad / pairs, pairs, merges)


def maximin_matrix(pred_window, gt_window) -> np.ndarray:
    """Pairwise maximin scores from the Kruskal pass, flattened cell indexing.

    Entries involving cable cells are NaN, unreachable pairs are 0 and the
    diagonal holds each cell's own prediction.
    """
    pred = as_values(pred_window)
    labels = gt_background_components(gt_window)
    n = pred.size
    out = np.full((n, n), np.nan)
    cells = np.flatnonzero(labels.ravel())
    out[np.ix_(cells, cells)] = 0.0
    out[cells, cells] = pred.ravel()[cells]
    members = {int(c): [int(c)] for c in cells}

    def record(ru, rv, a):
        # the surviving root is one of ru/rv, so keep the merged list under both
        mu, mv = members[ru], members[rv]
        out[np.ix_(mu, mv)] = a
        out[np.ix_(mv, mu)] = a
        merged = mu + mv
        members[ru] = members[rv] = merged

    _kruskal(pred, labels, record)
    return out


def _windows(shape, size):
    h, w = shape
    for i0 in range(0, h, size):
        for j0 in range(0, w, size):
            yield slice(i0, min(i0 + size, h)), slice(j0, min(j0 + size, w))


def malis_loss(pred, gt, cfg: LossConfig = LossConfig()) -> Term:
    """Mean of window losses over the windows that contain at least one pair."""
    pred, gt = as_values(pred), as_values(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    grad = np.zeros(pred.shape)
    total = 0.0
    used = 0
    for sl in _windows(pred.shape, cfg.malis_window):
        win = malis_window_loss(pred[sl], gt[sl])
        if win.pairs == 0:
            continue
        used += 1
        total += win.loss
        grad[sl] += win.grad
    if used == 0:
        return Term(0.0, grad)
    return Term(total / used, grad / used)


def composite_loss(pred_c, pred_p, gt_c, gt_p, cfg: LossConfig = LossConfig()) -> LossValue:
    shapes = {as_values(x).shape for x in (pred_c, pred_p, gt_c, gt_p)}
    if len(shapes) != 1:
        raise ValueError(f"all four masks must share a shape, got {sorted(shapes)}")
    dc = ldat(pred_c, gt_c, cfg)
    dp = ldat(pred_p, gt_p, cfg)
    terms = {"ldat_cables": dc.value, "ldat_pylons": dp.value}
    scalar = dc.value + dp.value
    grad_c = dc.grad.copy()
    if cfg.use_malis:
        m = malis_loss(pred_c, gt_c, cfg)
        terms["malis"] = m.value
        scalar += cfg.lam * m.value
        grad_c += cfg.lam * m.grad
    return LossValue(scalar, grad_c, dp.grad, terms)


# ---------------------------------------------------------------------------
# finite-difference verification


def malis_signature(pred, gt, cfg: LossConfig = LossConfig()) -> tuple:
    """Merge structure of every window: bottleneck nodes and pair counts, no values.

    Two predictions with the same signature lie on the same smooth piece of the
    connectivity loss.
    """
    pred, gt = as_values(pred), as_values(gt)
    sig = []
    for sl in _windows(pred.shape, cfg.malis_window):
        labels = gt_background_components(gt[sl])
        if np.count_nonzero(labels) < 2:
            continue
        sig.append(tuple((nodes, n_same, n_diff) for nodes, _, n_same, n_diff in _kruskal(pred[sl], labels)))
    return tuple(sig)


def finite_difference_check(pred_c, pred_p, gt_c, gt_p, cfg: LossConfig = LossConfig(), h: float = 1e-4, tie_tol: float = 1e-6):
    """Compare composite-loss gradients with central differences.

    A cable cell is skipped when another prediction value sits within
    ``tie_tol`` of it, or when a +-h step changes the bottleneck structure
    (the difference quotient would straddle a kink).
    """
    pred_c = as_values(pred_c).copy()
    pred_p = as_values(pred_p).copy()
    analytic = composite_loss(pred_c, pred_p, gt_c, gt_p, cfg)
    base_sig = malis_signature(pred_c, gt_c, cfg) if cfg.use_malis else None
    flat_c = pred_c.ravel()
    worst = 0.0
    checked = skipped = 0

    def rel(a, b):
        den = max(abs(a), abs(b))
        return 0.0 if den == 0 else abs(a - b) / den

    for which, arr, grad in (("cables", pred_c, analytic.grad_cables), ("pylons", pred_p, analytic.grad_pylons)):
        flat = arr.ravel()
        g = grad.ravel()
        for i in range(flat.size):
            if which == "cables" and cfg.use_malis:
                others = np.delete(flat_c, i)
                if np.any(np.abs(others - flat_c[i]) < tie_tol):
                    skipped += 1
                    continue
            x = flat[i]
            flat[i] = x + h
            if which == "cables" and cfg.use_malis and malis_signature(pred_c, gt_c, cfg) != base_sig:
                flat[i] = x
                skipped += 1
                continue
            up = composite_loss(pred_c, pred_p, gt_c, gt_p, cfg).scalar
            flat[i] = x - h
            if which == "cables" and cfg.use_malis and malis_signature(pred_c, gt_c, cfg) != base_sig:
                flat[i] = x
                skipped += 1
                continue
            down = composite_loss(pred_c, pred_p, gt_c, gt_p, cfg).scalar
            flat[i] = x
            fd = (up - down) / (2 * h)
            worst = max(worst, rel(g[i], fd))
            checked += 1
    return {"max_rel_error": worst, "checked": checked, "skipped": skipped, "h": h}
