"""Command-line entry point: ``segment``, ``synth``, ``eval`` and ``tune``.

Exit codes: 0 success, 1 usage or parse error, 2 some cells failed,
3 infeasible configuration (empty constraint set, scene that cannot be placed).
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import __version__
from .geometry import ROTATION_MODES, RodParams, rod_polyline
from .io import (ParseError, RunConfig, atomic_write, cell_record, dump_config, label_image, load_config,
                 quantize, read_boxes, read_cell_masks, read_image, read_jsonl, record_mask, theta_record,
                 to_float, write_boxes, write_image, write_jsonl, write_text, yolo_to_boxes)
from .metrics import InvalidPairingError, Mask, score
from .optimizer import ConstraintSet, InfeasibleError
from .pipeline import segment_image
from .synthgen import CapacityError, ColonyScene, SceneCell, canvas_for, render_scene
from .tuning import TuneConfig, tune_weights

log = logging.getLogger("cellspline")

EXIT_OK, EXIT_PARSE, EXIT_PARTIAL, EXIT_INFEASIBLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="flat 'key = value' file; missing keys keep defaults")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--workers", type=int, help="worker processes for per-cell segmentation")
    p.add_argument("--rotation-mode", choices=ROTATION_MODES, help="rotation matrix convention")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="cellspline", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", parents=[common], help="fit one rod per bounding box")
    seg.add_argument("image", type=Path)
    seg.add_argument("boxes", type=Path, help="'index x_min y_min x_max y_max' per line")
    seg.add_argument("--out", type=Path, required=True)
    seg.add_argument("--yolo", action="store_true", help="boxes file is 'class x_c y_c w h' (normalized)")
    seg.add_argument("--overlay", action="store_true", help="write per-cell contour overlays")

    syn = sub.add_parser("synth", parents=[common], help="render a synthetic colony with ground truth")
    syn.add_argument("--cells", type=int, required=True)
    syn.add_argument("--width", type=int)
    syn.add_argument("--height", type=int)
    syn.add_argument("--out", type=Path, required=True)

    ev = sub.add_parser("eval", parents=[common], help="FD/AMD of predictions against ground truth")
    ev.add_argument("--pred", type=Path, nargs="+", required=True, help="cells.jsonl or label images")
    ev.add_argument("--gt", type=Path, nargs="+", required=True, help="gt_cells.jsonl or label images")
    ev.add_argument("--names", nargs="+", help="row labels (default: pred file stems)")
    ev.add_argument("--out", type=Path, required=True)

    tu = sub.add_parser("tune", parents=[common], help="random search over (w_R, w_D)")
    tu.add_argument("scene", type=Path, help="directory written by 'synth'")
    tu.add_argument("--trials", type=int)
    tu.add_argument("--out", type=Path, required=True)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.rotation_mode is not None:
        overrides["rotation_mode"] = args.rotation_mode
    if getattr(args, "trials", None) is not None:
        overrides["trials"] = args.trials
    return replace(cfg, **overrides)


# --- segment -----------------------------------------------------------------

def _overlay(image: np.ndarray, rec: dict, path: Path, scale: int = 4):
    x0, y0, w, h = rec["window"]
    crop = image[y0 : y0 + h, x0 : x0 + w]
    lo, hi = float(crop.min()), float(crop.max())
    gray = np.zeros_like(crop) if hi <= lo else (crop - lo) / (hi - lo)
    im = Image.fromarray((gray * 255).astype(np.uint8)).convert("RGB")
    im = im.resize((w * scale, h * scale), Image.NEAREST)
    pts = [((x - x0 + 0.5) * scale, (y - y0 + 0.5) * scale) for x, y in rec["contour"]]
    ImageDraw.Draw(im).line(pts + pts[:1], fill=(255, 40, 40), width=2)
    with atomic_write(path, "wb") as fh:
        im.save(fh, format="PNG")


def cmd_segment(args, cfg: RunConfig) -> int:
    pipe = cfg.pipeline()
    pipe.check()
    raw = read_image(args.image)
    if raw.ndim != 2:
        raise ParseError(f"{args.image}: expected a single-channel image")
    image = to_float(raw)
    h, w = image.shape
    boxes = yolo_to_boxes(args.boxes, w, h) if args.yolo else read_boxes(args.boxes)
    boxes.sort(key=lambda b: b[0])
    outcomes = segment_image(image, boxes, pipe, workers=cfg.workers)
    records = [cell_record(o, cfg.pixel_size) for o in outcomes]
    out = args.out
    write_jsonl(out / "cells.jsonl", records)
    write_image(out / "labels.png", label_image([record_mask(r) for r in records], w, h))
    write_text(out / "run_config.txt", dump_config(cfg))
    if args.overlay:
        for r in records:
            if r["status"] == "ok":
                _overlay(image, r, out / "overlays" / f"cell_{r['index']:04d}.png")
    failed = [r for r in records if r["status"] != "ok"]
    for r in failed:
        print(f"cell {r['index']}: {r['error']}", file=sys.stderr)
    print(f"segmented {len(records) - len(failed)}/{len(records)} cells -> {out}")
    return EXIT_PARTIAL if failed else EXIT_OK


# --- synth -------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    if args.cells < 1:
        raise UsageError("--cells must be >= 1")
    side = canvas_for(args.cells)
    width, height = args.width or side, args.height or side
    pipe = cfg.pipeline()
    pipe.check()
    constraints = ConstraintSet.from_um(cfg.pixel_size, **pipe.limits())
    scene = render_scene(args.cells, width, height, constraints,
                         levels=(cfg.background_level, cfg.cell_level), rim_level=cfg.rim_level,
                         noise_sigma=cfg.noise_sigma, seed=cfg.seed, margin=cfg.pad,
                         rotation_mode=cfg.rotation_mode)
    out = args.out
    write_image(out / "image.png", quantize(scene.image, 16))
    write_image(out / "gt_labels.png", scene.label_image())
    write_boxes(out / "gt_boxes.txt", list(enumerate(scene.boxes)))
    recs = []
    for i, c in enumerate(scene.cells):
        px, um = theta_record(c.theta, (0, 0), cfg.pixel_size)
        contour = rod_polyline(c.theta, cfg.rotation_mode)
        x0, y0 = np.floor(contour.min(axis=0)).astype(int)
        x1, y1 = np.ceil(contour.max(axis=0)).astype(int)
        recs.append({
            "index": i, "status": "ok", "box": [c.box.x_min, c.box.y_min, c.box.x_max, c.box.y_max],
            "theta_px": px, "theta_um": um,
            "window": [int(x0), int(y0), int(x1 - x0 + 1), int(y1 - y0 + 1)],
            "contour": contour.tolist(),
        })
    write_jsonl(out / "gt_cells.jsonl", recs)
    meta = {"n_cells": args.cells, "width": width, "height": height, "seed": cfg.seed,
            "background_level": cfg.background_level, "cell_level": cfg.cell_level,
            "rim_level": cfg.rim_level, "noise_sigma": cfg.noise_sigma,
            "rotation_mode": cfg.rotation_mode, "rejections": scene.meta["rejections"]}
    write_text(out / "scene.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"rendered {args.cells} cells on {width}x{height} (seed {cfg.seed}) -> {out}")
    return EXIT_OK


# --- eval --------------------------------------------------------------------

def _canvas(masks) -> tuple[int, int]:
    w = h = 1
    for m in masks:
        if m.bits.size:
            w = max(w, m.origin[0] + m.shape[1])
            h = max(h, m.origin[1] + m.shape[0])
    return w, h


def evaluate_pair(pred_path: Path, gt_path: Path):
    pred, gt = read_cell_masks(pred_path), read_cell_masks(gt_path)
    if sorted(pred) != sorted(gt):
        missing, extra = sorted(set(gt) - set(pred)), sorted(set(pred) - set(gt))
        raise InvalidPairingError(
            f"{pred_path} vs {gt_path}: cell indices differ (missing {missing[:10]}, extra {extra[:10]})"
        )
    order = sorted(gt)
    p = [pred[i] if pred[i].bits.size else Mask(np.zeros((1, 1), dtype=bool)) for i in order]
    g = [gt[i] for i in order]
    w, h = _canvas(p + g)
    return order, score(p, g, w, h)


def format_table(rows) -> str:
    lines = [f"{'scene':<24}{'cells':>7}{'FD':>8}{'AMD':>8}"]
    for name, n, fd, amd in rows:
        lines.append(f"{name:<24}{n:>7d}{fd:>8.3f}{amd:>8.3f}")
    return "\n".join(lines) + "\n"


def cmd_eval(args, cfg: RunConfig) -> int:
    if len(args.pred) != len(args.gt):
        raise UsageError("--pred and --gt need the same number of files")
    names = args.names or [p.stem if p.stem not in ("cells", "labels") else p.parent.name for p in args.pred]
    if len(names) != len(args.pred):
        raise UsageError("--names must match the number of --pred files")
    rows, per_cell = [], []
    for name, pp, gp in zip(names, args.pred, args.gt):
        order, rep = evaluate_pair(pp, gp)
        rows.append((name, rep.n_cells, rep.fd, rep.amd))
        per_cell.extend((name, i, d) for i, d in zip(order, rep.per_cell_dice))

    def csv_text(header, body):
        buf = _io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(body)
        return buf.getvalue()

    write_text(args.out / "scores.csv",
               csv_text(["scene", "n_cells", "FD", "AMD"], [(n, c, repr(fd), repr(a)) for n, c, fd, a in rows]))
    write_text(args.out / "per_cell.csv",
               csv_text(["scene", "index", "dice"], [(n, i, repr(d)) for n, i, d in per_cell]))
    table = format_table(rows)
    write_text(args.out / "summary.txt", table)
    print(table, end="")
    return EXIT_OK


# --- tune --------------------------------------------------------------------

def load_scene(directory: Path, cfg: RunConfig) -> ColonyScene:
    image = to_float(read_image(directory / "image.png"))
    boxes = dict(read_boxes(directory / "gt_boxes.txt"))
    cells = []
    for rec in sorted(read_jsonl(directory / "gt_cells.jsonl"), key=lambda r: r["index"]):
        if rec["index"] not in boxes:
            raise ParseError(f"{directory}: gt cell {rec['index']} has no box in gt_boxes.txt")
        theta = RodParams(**rec["theta_px"])
        cells.append(SceneCell(theta, record_mask(rec), boxes[rec["index"]]))
    return ColonyScene(image, cells, cfg.background_level, cfg.cell_level, cfg.rim_level,
                       cfg.noise_sigma, cfg.seed, cfg.rotation_mode)


def cmd_tune(args, cfg: RunConfig) -> int:
    pipe = cfg.pipeline()
    pipe.check()
    scene = load_scene(args.scene, cfg)
    tcfg = TuneConfig(range_max=cfg.range_max, trials=cfg.trials, seed=cfg.seed)
    res = tune_weights(scene, tcfg, pipeline=pipe, workers=cfg.workers)
    write_text(args.out / "tuned.txt", f"w_r = {res.w_r!r}\nw_d = {res.w_d!r}\n# best_amd = {res.best_amd!r}\n")
    lines = ["trial,w_r,w_d,amd"] + [f"{t.index},{t.w_r!r},{t.w_d!r},{t.amd!r}" for t in res.trials]
    write_text(args.out / "trials.csv", "\n".join(lines) + "\n")
    print(f"best w_R={res.w_r:.3f} w_D={res.w_d:.3f} AMD={res.best_amd:.4f} over {len(res.trials)} trials")
    return EXIT_OK


COMMANDS = {"segment": cmd_segment, "synth": cmd_synth, "eval": cmd_eval, "tune": cmd_tune}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; we reserve 2 for partial failure
        return EXIT_OK if exc.code == 0 else EXIT_PARSE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (InfeasibleError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ParseError, UsageError, InvalidPairingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
