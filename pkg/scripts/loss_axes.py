"""Composite loss along the ablation axes (LIF weights on/off, connectivity term on/off).

For a synthetic scene, compares a bright "bridge" over one cable with the same
squared errors placed far from any object. The weighted data term separates the
two strongly. The connectivity term moves little: cable cells are outside its
graph, so a window that a cable fully crosses has no path to bridge, and only
windows where a cable ends feel disconnection pressure.

    python scripts/loss_axes.py --seed 0
"""

import argparse
import itertools

import numpy as np

from cablekit.losses import LossConfig, composite_loss, finite_difference_check
from cablekit.synth import SynthOptions, synthesize
from cablekit.targets import gt_targets


def perturb(gt, where, amount):
    out = gt.copy()
    out[where] = np.clip(out[where] + amount, 0, 1)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--window", type=int, default=16)
    args = ap.parse_args()

    ds = synthesize(SynthOptions(n_images=8, width=512, height=384), args.seed)
    a = max(ds.items, key=lambda a: len(a.cables))
    gc, gp = (m.values for m in gt_targets(a, 128, 8))
    cable = np.argwhere(gc == 0)
    if len(cable) == 0:
        raise SystemExit("scene has no cables; try another seed")

    # bridge: push the cells around one cable cell to "far from any cable", which
    # joins the background on both sides; far: the same squared errors placed on
    # saturated cells away from everything
    ci, cj = cable[len(cable) // 2]
    block = (slice(max(ci - 2, 0), ci + 3), slice(max(cj - 2, 0), cj + 3))
    bridge = gc.copy()
    bridge[block] = 1.0
    err = (1.0 - gc[block]).ravel()
    sat = np.argwhere(gc == 1.0)[: err.size]
    far = gc.copy()
    far[tuple(sat.T)] = 1.0 - err[: len(sat)]
    print(f"image {a.image_id}: coarse grid {gc.shape}, {len(cable)} cable cells")
    print(f"{'lif':>5} {'malis':>6} {'bridge':>12} {'far error':>12} {'malis term b/f':>20}")
    for lif, malis in itertools.product((False, True), repeat=2):
        cfg = LossConfig(use_lif_weights=lif, use_malis=malis, malis_window=args.window)
        lb = composite_loss(bridge, gp, gc, gp, cfg)
        lf = composite_loss(far, gp, gc, gp, cfg)
        terms = f"{lb.terms['malis']:.5f}/{lf.terms['malis']:.5f}" if malis else "-"
        print(f"{lif!s:>5} {malis!s:>6} {lb.scalar:12.5f} {lf.scalar:12.5f} {terms:>20}")

    rng = np.random.default_rng(args.seed)
    sl = (slice(0, 8), slice(0, 8))
    res = finite_difference_check(
        np.clip(gc[sl] + rng.normal(0, 0.1, (8, 8)), 0, 1), gp[sl], gc[sl], gp[sl], LossConfig(malis_window=8)
    )
    print(f"gradient check on an 8x8 crop: max rel err {res['max_rel_error']:.2e}, {res['checked']} cells, {res['skipped']} skipped")


if __name__ == "__main__":
    main()
