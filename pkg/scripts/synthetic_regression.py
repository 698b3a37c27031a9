"""Noise ladder: quality of degraded-oracle predictions on synthetic scenes.

    python scripts/synthetic_regression.py --seeds 20 --out runs/ladder
"""

import argparse
import json
import tempfile
from pathlib import Path

import numpy as np

from cablekit.cli import cmd_eval, cmd_gen_targets, cmd_synth, write_oracle_predictions
from cablekit.config import load_config

LADDER = [(0.0, 0.0), (0.02, 0.0), (0.05, 0.1), (0.1, 0.3), (0.2, 0.5)]


def run(root: Path, seeds: int, n_images: int, factor: int):
    rows = {lv: {"cables": [], "pylons": []} for lv in LADDER}
    for seed in range(seeds):
        base = root / f"seed{seed:03d}"
        cmd_synth(load_config(None, [f"run.seed={seed}", f"run.output={base}", f"synth.n_images={n_images}"]))
        cmd_gen_targets(
            load_config(None, [f"run.output={base / 'targets'}", f"paths.annotations={base / 'annotations.json'}", f"targets.factor={factor}"])
        )
        for sigma, drop in LADDER:
            preds = write_oracle_predictions(base / "targets", base / f"pred_{sigma}_{drop}", sigma, drop, seed)
            rep = cmd_eval(
                load_config(
                    None,
                    [
                        f"run.seed={seed}",
                        f"run.output={base / f'eval_{sigma}_{drop}'}",
                        f"paths.annotations={base / 'annotations.json'}",
                        f"paths.targets={base / 'targets'}",
                        f"paths.predictions={preds}",
                    ],
                )
            )
            for cls in rows[(sigma, drop)]:
                rows[(sigma, drop)][cls].append(rep["aggregate"][cls]["quality"]["mean"])
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--images", type=int, default=10)
    ap.add_argument("--factor", type=int, default=16)
    ap.add_argument("--out", type=Path, default=None, help="keep run artifacts here (default: temporary)")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        root = args.out or Path(tmp)
        rows = run(root, args.seeds, args.images, args.factor)
    print(f"{'sigma':>6} {'dropout':>8} {'cables q':>18} {'pylons q':>18}")
    summary = []
    for (sigma, drop), r in rows.items():
        c, p = np.array(r["cables"]), np.array(r["pylons"])
        print(f"{sigma:6.2f} {drop:8.2f} {c.mean():9.5f}+-{c.std():6.4f} {p.mean():9.5f}+-{p.std():6.4f}")
        summary.append({"sigma": sigma, "dropout": drop, "cables": c.tolist(), "pylons": p.tolist()})
    if args.out:
        (args.out / "ladder.json").write_text(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
