"""catpan command line: synth, pretrain, adapt, eval, sweep, bench.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import metrics
from ..backbone import Backbone, pretrain
from ..core import RasterTensor, Rng, export_preview, tensor_read, tensor_write
from ..errors import CatpanError, ValidationError
from ..pipeline import run_pipeline
from ..resample import SceneBundle, crop_to_multiple, synth_scene, wald_reduce
from .config import RunConfig
from .report import config_sections, read_report, write_report

log = logging.getLogger("catpan")

MANIFEST = "manifest.txt"
BENCH_HEADER = ["size", "workers", "adapt_s", "infer_s", "total_s"]
SWEEP_HEADER = ["value", "hqnr", "adapt_seconds"]


def scene_seed(seed: int, k: int) -> int:
    return Rng(seed).spawn(f"scene-{k}").seed


def load_backbone(cfg: RunConfig, weights=None) -> Backbone:
    path = weights or cfg.run.get("weights") or ""
    bcfg = cfg.backbone_config()
    if path:
        return Backbone.load(path, bcfg)
    log.warning("no weights given; using the seeded random initialisation")
    return Backbone.init(bcfg, cfg.pretrain["seed"])


def quality_section(q: metrics.QualityReport) -> dict:
    out = {
        "d_lambda": q.d_lambda, "d_s": q.d_s, "hqnr": q.hqnr, "sam": q.sam, "ergas": q.ergas,
        "block_pan": q.block_pan, "block_ms": q.block_ms, "variant": q.variant, "blocks": q.blocks,
        "q_lambda": q.q_lambda, "q_s_high": q.q_s_high, "q_s_low": q.q_s_low,
    }
    if q.clamped:
        out["clamped"] = q.clamped
    return out


# ---------------------------------------------------------------- commands


def cmd_synth(seed: int, count: int, size: int, out_dir, sensor_config=None, force: bool = False) -> list[Path]:
    cfg = RunConfig.load_or_default(sensor_config)
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise ValidationError(f"output directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    entries = {}
    written = []
    for k in range(count):
        s = scene_seed(seed, k)
        bundle = synth_scene(s, cfg.sensor, size, size)
        d = out / f"scene_{k:03d}"
        d.mkdir(exist_ok=True)
        for name in ("gt", "lrms", "pan"):
            tensor_write(getattr(bundle, name), d / f"{name}.catt")
        entries[f"scene_{k:03d}"] = s
        written.append(d)
    sections = {"manifest": {"count": count, "size": size, "seed": seed}, "scenes": entries}
    sections.update(config_sections(cfg))
    write_report(out / MANIFEST, sections)
    return written


def load_scenes(data_dir, cfg: RunConfig) -> list[SceneBundle]:
    d = Path(data_dir)
    manifest = d / MANIFEST
    if not manifest.exists():
        raise ValidationError(f"no {MANIFEST} in {d}")
    scenes = read_report(manifest).get("scenes", {})
    if not scenes:
        raise ValidationError(f"data directory {d} lists no scenes")
    bundles = []
    for name, seed in scenes.items():
        parts = {k: tensor_read(d / name / f"{k}.catt") for k in ("gt", "lrms", "pan")}
        bundles.append(SceneBundle(sensor=cfg.sensor, seed=int(seed), **parts))
    return bundles


def cmd_pretrain(data_dir, out, config=None, report=None) -> dict:
    cfg = RunConfig.load_or_default(config)
    bundles = load_scenes(data_dir, cfg)
    reduced = [wald_reduce(b) for b in bundles]
    t0 = time.perf_counter()
    res = pretrain(reduced, cfg.backbone_config(), epochs=cfg.pretrain["epochs"],
                   lr=cfg.pretrain["lr"], seed=cfg.pretrain["seed"])
    elapsed = time.perf_counter() - t0
    res.backbone.save(out)
    sections = config_sections(cfg)
    sections["pretrain"] = {
        "scenes": len(reduced),
        "first_loss": res.epoch_loss[0] if res.epoch_loss else None,
        "final_loss": res.epoch_loss[-1] if res.epoch_loss else None,
        "seconds": elapsed,
    }
    sections["series"] = {"epoch_loss": res.epoch_loss}
    if report:
        write_report(report, sections)
    return sections


def _read_pair(lrms, pan, cfg: RunConfig, crop: bool | None = None):
    y, p = tensor_read(lrms), tensor_read(pan)
    r = cfg.sensor.ratio
    if cfg.run["crop_to_multiple"] if crop is None else crop:
        y64, p64 = crop_to_multiple(y.as_f64(), p.as_f64(), cfg.adapt.patch_size, r)
        y, p = RasterTensor(y64), RasterTensor(p64)
    if p.height != r * y.height or p.width != r * y.width:
        raise ValidationError(
            f"expected H_pan = {r} * H_lrms and W_pan = {r} * W_lrms, got PAN {p.height}x{p.width} "
            f"and LRMS {y.height}x{y.width}"
        )
    return y, p


def cmd_adapt(lrms, pan, out, weights=None, config=None, report=None, workers=None,
              no_cat: bool = False, preview=None, crop_to_multiple: bool | None = None) -> dict:
    cfg = RunConfig.load_or_default(config)
    workers = workers or cfg.run["workers"]
    y, p = _read_pair(lrms, pan, cfg, crop_to_multiple)
    backbone = load_backbone(cfg, weights)
    result = run_pipeline(y.as_f64(), p.as_f64(), backbone, cfg.adapt, cfg.sensor,
                          workers=workers, use_cat=not no_cat)
    tensor_write(result.fused, out)
    if preview:
        export_preview(result.fused, cfg.run["preview_bands"], preview)
    sections = config_sections(cfg)
    sections["run"] = {"mode": "backbone" if no_cat else "cat", "workers": workers,
                       "patches": result.grid.n_total, "selected": list(result.grid.selected) or None}
    sections["timing"] = dict(result.timings)
    if result.adaptation is not None:
        tr = result.adaptation.trace
        sections["series"] = {
            "loss_total": [t.total for t in tr], "loss_spe": [t.spe for t in tr],
            "loss_spa": [t.spa for t in tr], "loss_ori": [t.ori for t in tr],
        }
    if report:
        write_report(report, sections)
    return sections


def cmd_eval(fused, lrms, pan, gt=None, sensor_config=None, report=None) -> metrics.QualityReport:
    cfg = RunConfig.load_or_default(sensor_config)
    x, y, p = tensor_read(fused), tensor_read(lrms), tensor_read(pan)
    g = tensor_read(gt) if gt else None
    q = metrics.evaluate(x, y, p, cfg.sensor, gt=g)
    if report:
        sections = config_sections(cfg)
        sections["quality"] = quality_section(q)
        write_report(report, sections)
    return q


def _sweep_scenes(cfg: RunConfig, lrms=None, pan=None):
    if lrms and pan:
        y, p = _read_pair(lrms, pan, cfg)
        return [(y.as_f64(), p.as_f64())]
    size = cfg.run["scene_size"]
    out = []
    for k in range(cfg.run["scene_count"]):
        b = synth_scene(scene_seed(cfg.run["seed"], k), cfg.sensor, size, size)
        out.append((b.lrms.as_f64(), b.pan.as_f64()))
    return out


def cmd_sweep(param: str, values, out, config=None, weights=None, lrms=None, pan=None) -> list[list]:
    """One pipeline run per value; HQNR and adapt time averaged over the scenes."""
    if param not in ("n_patches", "patch_size"):
        raise ValidationError(f"sweep parameter must be n_patches or patch_size, got {param!r}")
    cfg = RunConfig.load_or_default(config)
    r = cfg.sensor.ratio
    vals = [int(v) for v in values]
    for v in vals:
        if v < 1 or (param == "patch_size" and v % r):
            raise ValidationError(f"invalid {param} value {v}")
    backbone = load_backbone(cfg, weights)
    scenes = _sweep_scenes(cfg, lrms, pan)
    rows = []
    for v in vals:
        acfg = replace(cfg.adapt, **{param: v})
        hq, secs = [], []
        for y, p in scenes:
            res = run_pipeline(y, p, backbone, acfg, cfg.sensor, workers=cfg.run["workers"])
            hq.append(metrics.evaluate(res.fused, y, p, cfg.sensor).hqnr)
            secs.append(res.timings["adapt_seconds"])
        rows.append([v, float(np.mean(hq)), float(np.mean(secs))])
    _write_csv(out, SWEEP_HEADER, rows)
    return rows


def cmd_bench(sizes, workers, out, config=None, weights=None) -> list[list]:
    cfg = RunConfig.load_or_default(config)
    backbone = load_backbone(cfg, weights)
    rows = []
    for size in (int(s) for s in sizes):
        try:
            scene = synth_scene(scene_seed(cfg.run["seed"], 0), cfg.sensor, size, size)
        except (MemoryError, CatpanError) as exc:
            log.error("size %d: %s", size, exc)
            rows.extend([size, int(w), "FAILED", "FAILED", "FAILED"] for w in workers)
            continue
        for w in (int(v) for v in workers):
            try:
                res = run_pipeline(scene.lrms.as_f64(), scene.pan.as_f64(), backbone, cfg.adapt,
                                   cfg.sensor, workers=w)
                t = res.timings
                rows.append([size, w, t["adapt_seconds"], t["infer_seconds"], t["total_seconds"]])
            except (MemoryError, CatpanError) as exc:
                log.error("size %d workers %d: %s", size, w, exc)
                rows.append([size, w, "FAILED", "FAILED", "FAILED"])
    _write_csv(out, BENCH_HEADER, rows)
    return rows


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ------------------------------------------------------------------ parser


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="catpan", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write synthetic scenes")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--size", type=int, default=256)
    s.add_argument("--sensor-config")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--force", action="store_true")

    s = sub.add_parser("pretrain", help="supervised backbone pretraining on Wald-reduced scenes")
    s.add_argument("--data-dir", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--report")

    s = sub.add_parser("adapt", help="test-time adaptation and patch-parallel inference")
    s.add_argument("--lrms", required=True)
    s.add_argument("--pan", required=True)
    s.add_argument("--weights")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.add_argument("--workers", type=int)
    s.add_argument("--no-cat", action="store_true")
    s.add_argument("--preview")
    s.add_argument("--crop-to-multiple", action="store_true", default=None,
                   help="crop the PAN (and LRMS) to a multiple of the patch size")

    s = sub.add_parser("eval", help="quality indices of a fused image")
    s.add_argument("--fused", required=True)
    s.add_argument("--lrms", required=True)
    s.add_argument("--pan", required=True)
    s.add_argument("--gt")
    s.add_argument("--sensor-config")
    s.add_argument("--report")

    s = sub.add_parser("sweep", help="vary n_patches or patch_size")
    s.add_argument("--param", required=True, choices=["n_patches", "patch_size"])
    s.add_argument("--values", required=True, type=_int_list)
    s.add_argument("--config")
    s.add_argument("--weights")
    s.add_argument("--lrms")
    s.add_argument("--pan")
    s.add_argument("--out", required=True)

    s = sub.add_parser("bench", help="timing table over sizes and worker counts")
    s.add_argument("--config")
    s.add_argument("--weights")
    s.add_argument("--sizes", required=True, type=_int_list)
    s.add_argument("--workers", required=True, type=_int_list)
    s.add_argument("--out", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            cmd_synth(args.seed, args.count, args.size, args.out_dir, args.sensor_config, args.force)
        elif args.command == "pretrain":
            cmd_pretrain(args.data_dir, args.out, args.config, args.report)
        elif args.command == "adapt":
            cmd_adapt(args.lrms, args.pan, args.out, args.weights, args.config, args.report,
                      args.workers, args.no_cat, args.preview, args.crop_to_multiple)
        elif args.command == "eval":
            q = cmd_eval(args.fused, args.lrms, args.pan, args.gt, args.sensor_config, args.report)
            print(f"D_lambda ({q.variant}) = {q.d_lambda:.4f}  D_s = {q.d_s:.4f}  HQNR = {q.hqnr:.4f}")
            if q.sam is not None:
                print(f"SAM = {q.sam:.4f} deg  ERGAS = {q.ergas:.4f}")
        elif args.command == "sweep":
            cmd_sweep(args.param, args.values, args.out, args.config, args.weights, args.lrms, args.pan)
        elif args.command == "bench":
            cmd_bench(args.sizes, args.workers, args.out, args.config, args.weights)
    except OSError as exc:
        print(f"catpan: I/O error: {exc}", file=sys.stderr)
        return 2
    except (CatpanError, ValueError) as exc:
        print(f"catpan: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
