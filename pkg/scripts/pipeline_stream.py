"""Simulate the onboard pipeline on a synthetic 4096x3000 stream with a drifting cable.

Each frame's coarse ground truth is shifted one cell to the right; the degraded
oracle stands in for the network. Reports per-frame relaxed quality of the
full-resolution masks with and without temporal fusion.

    python scripts/pipeline_stream.py --frames 6 --sigma 0.1 --dropout 0.3
"""

import argparse

import numpy as np

from cablekit.metrics import ccq
from cablekit.pipeline import FlowField, Frame, PipelineConfig, oracle_predictor, run_stream, threshold_upscale
from cablekit.targets import clamp_normalize, edt, minpool


def coarse_gt(t, cfg, w=4096, h=3000):
    # a slanted cable drawn at reduced size, then pooled to the output grid
    k = 8
    small = np.zeros((h // k, w // k), bool)
    x = np.arange(w // k)
    y = (0.35 * x + 40).astype(int)
    keep = y < h // k
    small[y[keep], np.clip(x[keep] + t * cfg.out_factor // k, 0, w // k - 1)] = True
    return minpool(clamp_normalize(edt(small) * k, cfg.d_max), cfg.out_factor // k, crop=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=6)
    ap.add_argument("--sigma", type=float, default=0.1)
    ap.add_argument("--dropout", type=float, default=0.3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = PipelineConfig()
    gts = [coarse_gt(t, cfg) for t in range(args.frames)]
    empty = np.ones(gts[0].shape)
    frames = [Frame(t, 4096, 3000, data={"cables": g, "pylons": empty}) for t, g in enumerate(gts)]
    # the content moves +1 coarse cell per frame; supply that flow directly
    shift = [None] + [FlowField(np.ones(gts[0].shape), np.zeros(gts[0].shape))] * (args.frames - 1)
    predictor = oracle_predictor(args.sigma, args.dropout, args.seed, cfg)
    fused = list(run_stream(frames, predictor, cfg, flows=shift))
    single = list(run_stream(frames, predictor, PipelineConfig(fuse_weight=0.0), flows="zero"))
    print(f"coarse map {fused[0].fused['cables'].shape[::-1]} -> full {fused[0].masks['cables'].shape[::-1]}")
    print(f"{'frame':>5} {'q fused':>9} {'q single':>9} {'predict s':>10}")
    for t, (rf, rs) in enumerate(zip(fused, single)):
        truth = threshold_upscale(gts[t], cfg.threshold, 4096, 3000, cfg.out_factor)
        qf = ccq(rf.masks["cables"], truth)[2]
        qs = ccq(rs.masks["cables"], truth)[2]
        print(f"{t:5d} {qf:9.4f} {qs:9.4f} {rf.timings['predict_s']:10.4f}")


if __name__ == "__main__":
    main()
