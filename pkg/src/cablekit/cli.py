"""Command-line entry point.

Subcommands: synth, gen-targets, fold-split, sample, eval, report, loss-check,
pipeline-sim. Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import io
from .annotations import AnnotationError, dataset_to_dict, load_annotations, rasterize_exclusions
from .config import ConfigError, RunConfig, load_config
from .losses import composite_loss, finite_difference_check
from .metrics import METRICS, FoldAssignment, aggregate, downsample_any, evaluate_image, fold_split
from .pipeline import CLASSES, Frame, degraded_oracle, oracle_predictor, run_stream
from .sampler import sample_patches
from .synth import synthesize
from .targets import DistanceMask, gt_targets

log = logging.getLogger("cablekit")


def _map(cfg: RunConfig, fn, items):
    items = list(items)
    if cfg.jobs == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(fn, items))


def _safe(image_id: str) -> str:
    return image_id.replace("/", "_").replace("\\", "_")


def mask_name(image_id: str, cls: str) -> str:
    return f"{_safe(image_id)}_{cls}.png"


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig) -> Path:
    ds = synthesize(cfg.synth, cfg.seed)
    return io.write_json(Path(cfg.output) / "annotations.json", dataset_to_dict(ds))


def cmd_gen_targets(cfg: RunConfig) -> Path:
    ds = load_annotations(_require(cfg.path("annotations")))
    out = Path(cfg.output)
    t = cfg.targets

    def one(a):
        cables, pylons = gt_targets(a, t.d_max, t.factor, t.thickness, t.crop)
        for cls, dm in (("cables", cables), ("pylons", pylons)):
            io.write_distance_mask(out / mask_name(a.image_id, cls), dm)
        return {
            "image_id": a.image_id,
            "width": a.meta.width,
            "height": a.meta.height,
            "shape": list(cables.shape),
            "cables": mask_name(a.image_id, "cables"),
            "pylons": mask_name(a.image_id, "pylons"),
        }

    entries = _map(cfg, one, ds.items)
    manifest = {"d_max": t.d_max, "factor": t.factor, "thickness": t.thickness, "images": entries}
    return io.write_json(out / "manifest.json", manifest)


def _folds(cfg: RunConfig, ds) -> FoldAssignment:
    path = cfg.path("folds", required=False)
    if path is not None:
        folds = io.read_json(_require(path))
        missing = [a.image_id for a in ds.items if a.image_id not in folds]
        if missing:
            raise ConfigError(f"fold file {path} lacks images: {missing[:5]}")
        return FoldAssignment({k: int(v) for k, v in folds.items()}, max(folds.values()) + 1)
    return fold_split(ds, cfg.eval.k, cfg.seed)


def cmd_fold_split(cfg: RunConfig) -> Path:
    ds = load_annotations(_require(cfg.path("annotations")))
    fa = fold_split(ds, cfg.eval.k, cfg.seed)
    return io.write_json(Path(cfg.output) / "folds.json", {a.image_id: fa.folds[a.image_id] for a in ds.items})


def cmd_sample(cfg: RunConfig) -> Path:
    ds = load_annotations(_require(cfg.path("annotations")))
    spec = replace(cfg.sampler, seed=cfg.seed)
    records = []
    for patches, a in zip(_map(cfg, lambda a: sample_patches(a, spec), ds.items), ds.items):
        records += [{"image_id": a.image_id, "x0": p.x0, "y0": p.y0, "size": p.size} for p in patches]
    return io.write_json(Path(cfg.output) / "patches.json", records)


def _load_manifest(cfg: RunConfig):
    mpath = cfg.path("targets")
    mpath = mpath / "manifest.json" if mpath.is_dir() else mpath
    return mpath.parent, io.read_json(_require(mpath))


def _csv_text(rows, header) -> bytes:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def cmd_eval(cfg: RunConfig) -> dict:
    """Score predictions against generated targets, per image, per fold and across folds."""
    ds = load_annotations(_require(cfg.path("annotations")))
    gt_dir, manifest = _load_manifest(cfg)
    pred_dir = _require(cfg.path("predictions"))
    entries = {e["image_id"]: e for e in manifest["images"]}
    folds = _folds(cfg, ds)
    thresholds = {"cables": cfg.eval.threshold_cables, "pylons": cfg.eval.threshold_pylons}
    factor = manifest["factor"]

    def one(a):
        e = entries.get(a.image_id)
        if e is None:
            raise ConfigError(f"no ground-truth targets for image {a.image_id!r} in {gt_dir}")
        result, missing = {}, []
        for cls in CLASSES:
            gt = io.read_distance_mask(gt_dir / e[cls])
            ppath = pred_dir / mask_name(a.image_id, cls)
            if ppath.exists():
                pred = io.read_distance_mask(ppath)
            elif cfg.eval.missing == "fail":
                raise FileNotFoundError(f"missing prediction {ppath}")
            else:
                missing.append(str(ppath))
                if cfg.eval.missing == "skip":
                    continue
                pred = DistanceMask(np.ones(gt.shape), gt.d_max, gt.factor)
            ignore = None
            if cls == "pylons" and a.exclusions:
                full = rasterize_exclusions(a.exclusions, a.meta.width, a.meta.height)
                ignore = downsample_any(full, factor, gt.shape)
            result[cls] = evaluate_image(pred, gt, thresholds[cls], ignore, gt.d_max)
        return result, missing

    results = _map(cfg, one, ds.items)
    per_image, missing = {}, []
    by_fold = {cls: {} for cls in CLASSES}
    for a, (res, miss) in zip(ds.items, results):
        f = folds.folds[a.image_id]
        missing += miss
        per_image[a.image_id] = {"fold": f, **{cls: r.to_dict() for cls, r in res.items()}}
        for cls, r in res.items():
            by_fold[cls].setdefault(f, []).append(r)

    report = {"pooling": cfg.eval.pooling, "thresholds": thresholds, "per_image": per_image, "per_fold": {}, "aggregate": {}, "missing": missing}
    fold_rows, image_rows = [], []
    for cls in CLASSES:
        if not by_fold[cls]:
            continue
        summary, per_fold = aggregate(by_fold[cls], cfg.eval.pooling)
        fold_ids = sorted(by_fold[cls])
        report["per_fold"][cls] = [{"fold": f, **v} for f, v in zip(fold_ids, per_fold)]
        report["aggregate"][cls] = {k: {"mean": m, "std": s} for k, (m, s) in summary.items()}
        for f, v in zip(fold_ids, per_fold):
            fold_rows.append([f, cls] + [v[k] for k in METRICS])
        fold_rows.append(["mean", cls] + [summary[k][0] for k in METRICS])
        fold_rows.append(["std", cls] + [summary[k][1] for k in METRICS])
    for image_id, rec in per_image.items():
        for cls in CLASSES:
            if cls in rec:
                image_rows.append([image_id, rec["fold"], cls] + [rec[cls][k] for k in METRICS])

    out = Path(cfg.output)
    io.write_json(out / "eval.json", report)
    io.atomic_write_bytes(out / "eval.csv", _csv_text(fold_rows, ["fold", "object_class", *METRICS]))
    io.atomic_write_bytes(out / "eval_per_image.csv", _csv_text(image_rows, ["image_id", "fold", "object_class", *METRICS]))
    if missing:
        log.warning("%d prediction file(s) missing (policy: %s)", len(missing), cfg.eval.missing)
    return report


def cmd_report(cfg: RunConfig) -> str:
    path = cfg.path("report", required=False) or Path(cfg.output) / "eval.json"
    rep = io.read_json(_require(path))
    lines = [f"{'class':8s} " + " ".join(f"{k:>17s}" for k in METRICS)]
    for cls, agg in rep["aggregate"].items():
        lines.append(f"{cls:8s} " + " ".join(f"{agg[k]['mean']:8.4f}+-{agg[k]['std']:7.4f}" for k in METRICS))
    return "\n".join(lines)


def _read_grid(path: Path) -> np.ndarray:
    _require(path)
    if path.suffix == ".npy":
        return np.load(path).astype(np.float64)
    return io.read_distance_mask(path).values


def cmd_loss_check(cfg: RunConfig, fd: bool = False) -> dict:
    grids = {k: _read_grid(cfg.path(k)) for k in ("pred_cables", "pred_pylons", "gt_cables", "gt_pylons")}
    shapes = {g.shape for g in grids.values()}
    if len(shapes) != 1:
        raise ConfigError(f"mask shapes differ: {sorted(shapes)}")
    lv = composite_loss(grids["pred_cables"], grids["pred_pylons"], grids["gt_cables"], grids["gt_pylons"], cfg.loss)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, g in (("grad_cables", lv.grad_cables), ("grad_pylons", lv.grad_pylons)):
        buf = _io.BytesIO()
        np.save(buf, g)
        paths[name] = str(io.atomic_write_bytes(out / f"{name}.npy", buf.getvalue()))
    record = {"scalar": lv.scalar, "terms": lv.terms, "lambda": cfg.loss.lam, "config": asdict(cfg.loss), "gradients": paths}
    if fd:
        record["finite_difference"] = finite_difference_check(
            grids["pred_cables"], grids["pred_pylons"], grids["gt_cables"], grids["gt_pylons"], cfg.loss
        )
    io.write_json(out / "loss.json", record)
    return record


def _frames_from_manifest(cfg: RunConfig):
    mpath = _require(cfg.path("frames"))
    doc = io.read_json(mpath)
    base = mpath.parent
    pc = cfg.pipeline
    frames, flows = [], []
    for t, rec in enumerate(doc["frames"]):
        data = {}
        for cls in CLASSES:
            dm = io.read_distance_mask(_require(base / rec[cls]))
            if dm.factor != pc.out_factor:
                raise ConfigError(f"frame {t}: {cls} mask factor {dm.factor} != pipeline out_factor {pc.out_factor}")
            data[cls] = dm
        image = io.read_image_gray(_require(base / rec["image"])) if rec.get("image") else None
        frames.append(Frame(t, int(doc["width"]), int(doc["height"]), image, data))
        flows.append(io.read_flow(_require(base / rec["flow"])) if rec.get("flow") else None)
    return frames, flows


def cmd_pipeline_sim(cfg: RunConfig) -> dict:
    frames, flow_files = _frames_from_manifest(cfg)
    sim = cfg.sim
    if sim.predictor == "oracle":
        predictor = oracle_predictor(sim.noise_sigma, sim.dropout, cfg.seed, cfg.pipeline)
    elif sim.predictor == "file":
        predictor = oracle_predictor(0.0, 0.0, cfg.seed, cfg.pipeline)
    else:
        raise ConfigError(f"sim.predictor must be oracle or file, got {sim.predictor!r}")
    if sim.flows == "file":
        flows = flow_files
    elif sim.flows in ("builtin", "zero"):
        flows = sim.flows
    else:
        raise ConfigError(f"sim.flows must be builtin, zero or file, got {sim.flows!r}")
    out = Path(cfg.output)
    per_frame = []
    coarse_shape = full_shape = None
    for res in run_stream(frames, predictor, cfg.pipeline, flows):
        files = {}
        for cls in CLASSES:
            fused_path = io.write_distance_mask(out / "frames" / f"{res.index:04d}_{cls}_fused.png", res.fused[cls])
            mask_path = io.write_binary_mask(out / "frames" / f"{res.index:04d}_{cls}_mask.png", res.masks[cls])
            files[cls] = {"fused": str(fused_path), "mask": str(mask_path)}
        coarse_shape = list(res.fused[CLASSES[0]].shape)
        full_shape = list(res.masks[CLASSES[0]].shape)
        per_frame.append({"index": res.index, "timings": res.timings, "files": files})
    summary = {
        "frames": len(per_frame),
        "coarse_shape": coarse_shape,
        "full_shape": full_shape,
        "config": {"pipeline": asdict(cfg.pipeline), "sim": asdict(sim), "seed": cfg.seed},
        "per_frame": per_frame,
    }
    io.write_json(out / "summary.json", summary)
    return summary


def write_oracle_predictions(targets_dir, out_dir, noise_sigma: float, dropout: float, seed: int) -> Path:
    """Degraded copies of every target in a gen-targets manifest, named for cmd_eval."""
    targets_dir, out_dir = Path(targets_dir), Path(out_dir)
    manifest = io.read_json(_require(targets_dir / "manifest.json"))
    for e in manifest["images"]:
        for cls in CLASSES:
            gt = io.read_distance_mask(targets_dir / e[cls])
            pred = degraded_oracle(gt, noise_sigma, dropout, seed, f"{e['image_id']}:{cls}")
            io.write_distance_mask(out_dir / mask_name(e["image_id"], cls), pred)
    return out_dir


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being reset by the subparser
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--output", help="output directory")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cablekit", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a seeded synthetic annotation set")
    s.add_argument("--n-images", type=int)

    s = sub.add_parser("gen-targets", parents=[common], help="annotations -> coarse distance masks")
    s.add_argument("--annotations")
    s.add_argument("--factor", type=int)

    s = sub.add_parser("fold-split", parents=[common], help="recording-level k-fold assignment")
    s.add_argument("--annotations")
    s.add_argument("-k", type=int)

    s = sub.add_parser("sample", parents=[common], help="object-centred patch positions")
    s.add_argument("--annotations")
    s.add_argument("--count", type=int)

    s = sub.add_parser("eval", parents=[common], help="score predictions per image, fold and overall")
    s.add_argument("--annotations")
    s.add_argument("--targets", help="gen-targets output directory or manifest")
    s.add_argument("--predictions")
    s.add_argument("--folds")
    s.add_argument("--pooling", choices=("micro", "macro"))
    s.add_argument("--missing", choices=("empty", "skip", "fail"))

    s = sub.add_parser("report", parents=[common], help="print aggregate metrics of an eval run")
    s.add_argument("report_path", nargs="?")

    s = sub.add_parser("loss-check", parents=[common], help="composite loss and gradients for one mask set")
    for k in ("pred-cables", "pred-pylons", "gt-cables", "gt-pylons"):
        s.add_argument(f"--{k}")
    s.add_argument("--fd", action="store_true", help="also verify gradients by central differences")

    s = sub.add_parser("pipeline-sim", parents=[common], help="simulate the onboard split/stitch/warp/fuse pipeline")
    s.add_argument("--frames", help="frame manifest JSON")
    return p


_FLAG_KEYS = {
    "annotations": "paths.annotations",
    "targets": "paths.targets",
    "predictions": "paths.predictions",
    "folds": "paths.folds",
    "frames": "paths.frames",
    "report_path": "paths.report",
    "pred_cables": "paths.pred_cables",
    "pred_pylons": "paths.pred_pylons",
    "gt_cables": "paths.gt_cables",
    "gt_pylons": "paths.gt_pylons",
    "n_images": "synth.n_images",
    "factor": "targets.factor",
    "k": "eval.k",
    "count": "sampler.count",
    "pooling": "eval.pooling",
    "missing": "eval.missing",
    "seed": "run.seed",
    "jobs": "run.jobs",
    "output": "run.output",
}


def config_from_args(args) -> RunConfig:
    overrides = list(getattr(args, "set", []))
    for attr, key in _FLAG_KEYS.items():
        val = getattr(args, attr, None)
        if val is not None:
            overrides.append(f"{key}={val}")
    return load_config(getattr(args, "config", None), overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        cmd = args.command
        if cmd == "synth":
            print(cmd_synth(cfg))
        elif cmd == "gen-targets":
            print(cmd_gen_targets(cfg))
        elif cmd == "fold-split":
            print(cmd_fold_split(cfg))
        elif cmd == "sample":
            print(cmd_sample(cfg))
        elif cmd == "eval":
            rep = cmd_eval(cfg)
            print(json.dumps(rep["aggregate"], indent=2))
        elif cmd == "report":
            print(cmd_report(cfg))
        elif cmd == "loss-check":
            print(json.dumps(cmd_loss_check(cfg, fd=args.fd), indent=2))
        elif cmd == "pipeline-sim":
            s = cmd_pipeline_sim(cfg)
            print(json.dumps({k: s[k] for k in ("frames", "coarse_shape", "full_shape")}))
    except (AnnotationError, ConfigError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
