"""Command-line entry point.

Subcommands: synth, train, calibrate, detect, eval, bench, align. Plain-text
key=value configuration files; flags override file values. Supervision rules
are enforced at ingestion: the anomaly path sees only empty-room frames, the
weak path never sees boxes, the detector path requires boxes.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import statistics
import sys
from pathlib import Path

import numpy as np

from . import anomaly, cam, datakit, evalkit, imaging, ssd
from .boxes import BoundingBox, Detection
from .engine.training import TrainConfig
from .engine.weights import load_weights, save_weights
from .errors import IrdetectError
from .imaging import IRFrame, ThresholdConfig

METHODS = ("threshold", "otsu", "dae", "dvae", "cam", "gradcam", "layercam", "ssd")
TRAINABLE = ("dae", "dvae", "cam", "ssd")
CAM_VARIANTS = ("cam", "gradcam", "layercam")


def read_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise IrdetectError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _coerce(text: str, target_type):
    if target_type is bool:
        return text.lower() in ("1", "true", "yes")
    if target_type in (int, float, str):
        return target_type(text)
    return tuple(float(v) for v in text.split(","))


def scene_config_from(values: dict[str, str]) -> datakit.SceneConfig:
    fields = {f.name: f for f in dataclasses.fields(datakit.SceneConfig)}
    kwargs = {}
    for key, text in values.items():
        if key in ("split_train", "split_val"):
            continue
        if key not in fields:
            raise IrdetectError(f"unknown scene config key {key!r}")
        ftype = fields[key].type
        base = {"int": int, "float": float, "str": str}.get(
            str(ftype).split("[")[0].replace("int | None", "int"), None)
        if base is None:
            kwargs[key] = _coerce(text, tuple)
        else:
            kwargs[key] = _coerce(text, base)
    return datakit.SceneConfig(**kwargs)


def ordered_frames(bundle: datakit.DatasetBundle) -> list[IRFrame]:
    return sorted(bundle.frames, key=lambda f: (f.source_id, f.frame_index))


def write_detections_jsonl(path, per_frame: list[tuple[IRFrame, list[Detection]]]):
    with open(path, "w", encoding="utf-8") as fh:
        for i, (frame, dets) in enumerate(per_frame):
            record = {
                "frame": i,
                "room": frame.source_id,
                "index": frame.frame_index,
                "boxes": [[d.box.cx, d.box.cy, d.box.w, d.box.h] for d in dets],
                "scores": [d.score for d in dets],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_detections_jsonl(path, frame_count: int) -> list[list[Detection]]:
    out: list[list[Detection]] = [[] for _ in range(frame_count)]
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                index = record["frame"]
                boxes = record["boxes"]
                scores = record.get("scores") or [1.0] * len(boxes)
            except (json.JSONDecodeError, KeyError) as exc:
                raise IrdetectError(f"{path}:{lineno}: malformed detection line "
                                    f"({exc})") from exc
            if not isinstance(index, int) or not 0 <= index < frame_count:
                raise IrdetectError(f"{path}:{lineno}: frame index {index!r} "
                                    f"out of range [0, {frame_count})")
            out[index] = [Detection(BoundingBox(*map(float, b)), float(s))
                          for b, s in zip(boxes, scores)]
    return out


def write_pgm(path, grid: np.ndarray, boxes=()):
    """8-bit P5 grayscale of a 24x32 field with box outlines burned in."""
    g = np.asarray(grid, dtype=np.float64)
    lo, hi = g.min(), g.max()
    scale = (g - lo) / (hi - lo) if hi > lo else np.zeros_like(g)
    img = (scale * 235.0).astype(np.uint8)
    for box in boxes:
        x0, y0, x1, y1 = box.corners()
        c0, r0 = max(int(x0), 0), max(int(y0), 0)
        c1 = min(int(np.ceil(x1)) - 1, img.shape[1] - 1)
        r1 = min(int(np.ceil(y1)) - 1, img.shape[0] - 1)
        img[r0, c0:c1 + 1] = 255
        img[r1, c0:c1 + 1] = 255
        img[r0:r1 + 1, c0] = 255
        img[r0:r1 + 1, c1] = 255
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def build_detector(method: str, args):
    """Frame -> detections closure for one configured method."""
    min_area = args.min_blob_area
    if method == "threshold":
        if args.tau is None:
            raise IrdetectError("threshold method needs --tau (or run calibrate)")
        cfg = ThresholdConfig(tau=args.tau, min_blob_area=min_area)
        return lambda frame: imaging.detect_threshold(frame, cfg)
    if method == "otsu":
        cfg = ThresholdConfig(tau=None, min_blob_area=min_area)
        return lambda frame: imaging.detect_threshold(frame, cfg)
    if args.weights is None:
        raise IrdetectError(f"method {method} needs --weights")
    weights = load_weights(args.weights)
    if method in ("dae", "dvae"):
        if weights.model_tag != method:
            raise IrdetectError(f"weights are tagged {weights.model_tag}, "
                                f"not {method}")
        tau = args.tau if args.tau is not None else 2.0
        return anomaly.AnomalyDetector(weights, tau, min_area).detect
    if method in CAM_VARIANTS:
        localizer = cam.CamLocalizer(weights, args.map_tau, min_area)
        return lambda frame: localizer.detect(frame, method)
    detector = ssd.SsdDetector(weights, args.score_threshold)
    return detector.detect


# -- subcommands -----------------------------------------------------------

def cmd_synth(args) -> int:
    values = read_config_file(args.config) if args.config else {}
    if args.seed is not None:
        values["seed"] = str(args.seed)
    cfg = scene_config_from(values)
    ratios = (float(values.get("split_train", 0.75)),
              float(values.get("split_val", 0.25)))
    bundle = datakit.generate_scene(cfg)
    train, val, test = datakit.split_dataset(
        bundle, ratios, seed=cfg.seed, test_room_ids=cfg.heldout_room_ids)
    out = Path(args.out)
    for split, part in (("train", train), ("val", val), ("test", test)):
        datakit.save_bundle(out / split, part)
    print(json.dumps({"train": len(train), "val": len(val), "test": len(test),
                      "rooms": bundle.room_ids()}, sort_keys=True))
    return 0


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if args.lr is not None:
        cfg.learning_rate = args.lr
    if args.epochs is not None:
        cfg.max_epochs = args.epochs
    if args.batch_size is not None:
        cfg.batch_size = args.batch_size
    return cfg


def cmd_train(args) -> int:
    if args.method not in TRAINABLE:
        raise IrdetectError(f"method {args.method} is not trainable")
    root = Path(args.data)
    train_bundle = datakit.load_bundle(root / "train")
    val_bundle = datakit.load_bundle(root / "val")
    cfg = _train_config(args)
    if args.method in ("dae", "dvae"):
        train_set = anomaly.EmptyRoomSet(train_bundle.empty_room_frames())
        val_set = anomaly.EmptyRoomSet(val_bundle.empty_room_frames())
        weights, result = anomaly.train_background(
            anomaly.AEArchitecture(), train_set, val_set, cfg, args.seed,
            variational=args.method == "dvae", kl_weight=args.kl_weight)
    elif args.method == "cam":
        weights, result = cam.train_classifier(
            train_bundle.as_view("weak").frames,
            val_bundle.as_view("weak").frames, cfg, args.seed)
    else:
        weights, result = ssd.train_ssd(train_bundle.frames, val_bundle.frames,
                                        cfg, args.seed)
    save_weights(args.out, weights)
    print(json.dumps({"method": args.method, "seed": args.seed,
                      "epochs_run": len(result.history),
                      "best_epoch": result.best_epoch,
                      "best_val_loss": result.best_val_loss}, sort_keys=True))
    return 0


def _parse_grid(text: str) -> list[float]:
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        return list(np.arange(start, stop + step / 2, step))
    return [float(v) for v in text.split(",")]


DEFAULT_GRIDS = {"threshold": "24:34:0.5", "dae": "1:8:0.5", "dvae": "1:8:0.5",
                 "cam": "0.1:0.9:0.05", "gradcam": "0.1:0.9:0.05",
                 "layercam": "0.1:0.9:0.05"}


def cmd_calibrate(args) -> int:
    frames = datakit.load_bundle(args.val).frames
    grid = _parse_grid(args.grid or DEFAULT_GRIDS[args.method])
    if args.method == "threshold":
        tau = imaging.calibrate_tau(frames, grid, args.min_blob_area)
    elif args.method in ("dae", "dvae"):
        tau = anomaly.calibrate_residual_tau(load_weights(args.weights), frames,
                                             grid, args.min_blob_area)
    elif args.method in CAM_VARIANTS:
        tau = cam.calibrate_map_tau(load_weights(args.weights), args.method,
                                    frames, grid, args.min_blob_area)
    else:
        raise IrdetectError(f"no threshold to calibrate for {args.method}")
    print(json.dumps({"method": args.method, "tau": tau}, sort_keys=True))
    return 0


def cmd_detect(args) -> int:
    frames = ordered_frames(datakit.load_bundle(args.data, view="unlabeled"))
    detector = build_detector(args.method, args)
    per_frame = [(f, detector(f)) for f in frames]
    write_detections_jsonl(args.out, per_frame)
    if args.overlays:
        overlay_dir = Path(args.overlays)
        overlay_dir.mkdir(parents=True, exist_ok=True)
        for i, (frame, dets) in enumerate(per_frame):
            write_pgm(overlay_dir / f"frame_{i:05d}.pgm", frame.temperatures,
                      [d.box for d in dets])
    print(json.dumps({"frames": len(per_frame),
                      "detections": sum(len(d) for _, d in per_frame)},
                     sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    gt_frames = ordered_frames(datakit.load_bundle(args.gt))
    gt_boxes = [list(f.boxes or ()) for f in gt_frames]
    runs = []
    for path in args.detections:
        dets = read_detections_jsonl(path, len(gt_frames))
        runs.append(evalkit.olrp(list(zip(dets, gt_boxes)), args.iou))
    def agg(attr):
        vals = [getattr(r, attr) for r in runs]
        return (statistics.fmean(vals),
                statistics.stdev(vals) if len(vals) > 1 else 0.0)
    olrp_m, olrp_s = agg("olrp")
    loc_m, _ = agg("olrp_loc")
    fp_m, _ = agg("olrp_fp")
    fn_m, _ = agg("olrp_fn")
    time_cell = f"{args.time_ms:>9.1f}" if args.time_ms is not None else f"{'-':>9}"
    print(f"{'Model':<12}{'oLRP':>14}{'oLRP_loc':>10}{'oLRP_FP':>9}"
          f"{'oLRP_FN':>9}{'Time(ms)':>9}")
    print(f"{args.label:<12}{olrp_m:>8.1f} ± {olrp_s:<4.1f}"
          f"{loc_m:>9.1f}{fp_m:>9.1f}{fn_m:>9.1f}{time_cell}")
    payload = {
        "label": args.label, "iou": args.iou,
        "olrp_mean": olrp_m, "olrp_std": olrp_s,
        "olrp_loc_mean": loc_m, "olrp_fp_mean": fp_m, "olrp_fn_mean": fn_m,
        "time_ms": args.time_ms,
        "runs": [dataclasses.asdict(r) for r in runs],
    }
    if args.json:
        Path(args.json).write_text(json.dumps(payload, sort_keys=True, indent=2)
                                   + "\n", encoding="utf-8")
    return 0


def cmd_bench(args) -> int:
    frames = ordered_frames(datakit.load_bundle(args.data, view="unlabeled"))
    if args.limit:
        frames = frames[:args.limit]
    weight_paths = dict(item.split("=", 1) for item in args.weights or [])
    methods = {}
    for name in args.methods.split(","):
        name = name.strip()
        ns = argparse.Namespace(
            tau=args.tau, map_tau=args.map_tau,
            score_threshold=args.score_threshold,
            min_blob_area=args.min_blob_area,
            weights=weight_paths.get(name))
        methods[name] = build_detector(name, ns)
    report = evalkit.benchmark_latency(methods, frames, warmup=args.warmup,
                                       repeats=args.repeats,
                                       hardware_note=args.note)
    print(f"{'Method':<12}{'median ms':>12}{'mean ms':>12}   "
          f"({report.frame_count} frames)")
    for name, stats in report.entries.items():
        print(f"{name:<12}{stats.median_ms:>12.3f}{stats.mean_ms:>12.3f}")
    return 0


def cmd_align(args) -> int:
    rgb_lines = []
    with open(args.rgb_ann, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                rgb_lines.append((record["frame"],
                                  [BoundingBox(*map(float, b))
                                   for b in record["boxes"]]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise IrdetectError(f"{args.rgb_ann}:{lineno}: malformed line "
                                    f"({exc})") from exc
    rgb_ann = [(idx / args.rgb_fps, boxes) for idx, boxes in rgb_lines]
    stack = datakit.load_frames_irfr(args.ir_frames)
    ir_timestamps = [i / args.ir_fps for i in range(len(stack))]

    cfg = ThresholdConfig(tau=None, min_blob_area=args.min_blob_area)
    ir_events = []
    ir_boxes: dict[int, list] = {}
    for i, temps in enumerate(stack):
        dets = imaging.detect_threshold(IRFrame(temps), cfg)
        ir_boxes[i] = [d.box for d in dets]
        if len(dets) == 1:
            ir_events.append((ir_timestamps[i], dets[0].box.cx, dets[0].box.cy))
    rgb_events = [(t, boxes[0].cx, boxes[0].cy) for t, boxes in rgb_ann
                  if len(boxes) == 1]
    sync = datakit.estimate_time_shift(rgb_events, ir_events,
                                       search_window_s=args.window,
                                       source_fps=args.rgb_fps,
                                       target_fps=args.ir_fps)
    rgb_at = {round(t * args.rgb_fps): boxes for t, boxes in rgb_ann}
    pairs = []
    for t, cx, cy in ir_events:
        rgb_index = round((t + sync.shift_seconds) * args.rgb_fps)
        boxes = rgb_at.get(rgb_index)
        if boxes is not None and len(boxes) == 1:
            i = ir_timestamps.index(t)
            if len(ir_boxes[i]) == 1:
                pairs.append((boxes[0], ir_boxes[i][0]))
    cmap = datakit.fit_coordinate_map(pairs)
    transferred = datakit.transfer_annotations(rgb_ann, cmap, sync, ir_timestamps)
    with open(args.out, "w", encoding="utf-8") as fh:
        for index in sorted(transferred):
            boxes = transferred[index]
            fh.write(json.dumps({"frame": index,
                                 "boxes": [[b.cx, b.cy, b.w, b.h]
                                           for b in boxes]},
                                sort_keys=True) + "\n")
    print(json.dumps({"shift_seconds": sync.shift_seconds,
                      "scale_x": cmap.scale_x, "scale_y": cmap.scale_y,
                      "offset_x": cmap.offset_x, "offset_y": cmap.offset_y,
                      "residual_rms": cmap.residual_rms,
                      "annotated_frames": len(transferred)}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irdetect",
        description="Person detection on 32x24 thermal frames: synthesis, "
                    "training, detection, evaluation, and annotation transfer.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="key=value scene configuration file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a detector")
    p.add_argument("--method", required=True, choices=TRAINABLE)
    p.add_argument("--data", required=True,
                   help="dataset root containing train/ and val/")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output weights path (.irdw)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--kl-weight", type=float, default=1.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="grid-search a detection threshold")
    p.add_argument("--method", required=True,
                   choices=("threshold", "dae", "dvae") + CAM_VARIANTS)
    p.add_argument("--val", required=True)
    p.add_argument("--weights")
    p.add_argument("--grid",
                   help="comma list or start:stop:step (per-method default)")
    p.add_argument("--min-blob-area", type=int, default=2)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("detect", help="run detection over a dataset")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights")
    p.add_argument("--tau", type=float)
    p.add_argument("--map-tau", type=float, default=0.5)
    p.add_argument("--score-threshold", type=float, default=0.5)
    p.add_argument("--min-blob-area", type=int, default=2)
    p.add_argument("--overlays", help="directory for PGM overlays")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="oLRP report over detection files")
    p.add_argument("--detections", nargs="+", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--label", default="method")
    p.add_argument("--time-ms", type=float,
                   help="per-frame latency for the Time(ms) column")
    p.add_argument("--json", help="also write a JSON report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="per-frame latency comparison")
    p.add_argument("--methods", required=True, help="comma-separated names")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", action="append",
                   help="NAME=PATH weight assignment (repeatable)")
    p.add_argument("--tau", type=float)
    p.add_argument("--map-tau", type=float, default=0.5)
    p.add_argument("--score-threshold", type=float, default=0.5)
    p.add_argument("--min-blob-area", type=int, default=2)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--limit", type=int)
    p.add_argument("--note", default="")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("align", help="transfer RGB annotations to IR frames")
    p.add_argument("--rgb-ann", required=True)
    p.add_argument("--rgb-fps", type=float, default=24.0)
    p.add_argument("--ir-frames", required=True)
    p.add_argument("--ir-fps", type=float, default=8.0)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=float, default=5.0)
    p.add_argument("--min-blob-area", type=int, default=2)
    p.set_defaults(func=cmd_align)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except IrdetectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
