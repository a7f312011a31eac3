"""Command-line surface: generate / train / eval / nms-sweep / export-attention.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.  Every command persists its resolved configuration next to its
outputs, and nothing written contains wall-clock values, so a rerun with
the same seed is byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .autograd import no_grad
from .config import RunConfig, load_run_config, save_run_config
from .data import load_dataset, load_image_png
from .errors import ConfigError, DataError, NumericsError
from .evaluation import mean_ap
from .fileio import atomic_write_bytes, atomic_write_json, read_json
from .inference import (TridentNMSConfig, compose_predictions, load_predictions,
                        save_predictions, top_k, trident_nms)
from .losses import LossWeights
from .model import (HOIModel, export_attention, load_checkpoint,
                    model_from_checkpoint)
from .synthetic import SynthSceneSpec, generate_synthetic_dataset
from .training import fit

# Table-style sweep grid: five sum rows, five product rows.
PAPER_SWEEP_GRID = [
    {"mode": "sum", "w_h": 0.33, "w_o": 0.33, "w_rel": 0.33, "threshold": 0.5},
    {"mode": "sum", "w_h": 0.33, "w_o": 0.33, "w_rel": 0.33, "threshold": 0.7},
    {"mode": "sum", "w_h": 0.4, "w_o": 0.4, "w_rel": 0.2, "threshold": 0.7},
    {"mode": "sum", "w_h": 0.5, "w_o": 0.4, "w_rel": 0.1, "threshold": 0.7},
    {"mode": "sum", "w_h": 0.6, "w_o": 0.3, "w_rel": 0.1, "threshold": 0.7},
    {"mode": "product", "w_h": 1.0, "w_o": 1.0, "w_rel": 1.0, "threshold": 0.5},
    {"mode": "product", "w_h": 1.0, "w_o": 1.0, "w_rel": 0.5, "threshold": 0.5},
    {"mode": "product", "w_h": 0.5, "w_o": 0.5, "w_rel": 0.5, "threshold": 0.5},
    {"mode": "product", "w_h": 0.5, "w_o": 1.0, "w_rel": 0.5, "threshold": 0.5},
    {"mode": "product", "w_h": 1.0, "w_o": 0.5, "w_rel": 0.5, "threshold": 0.5},
]


def _spec_from_file(path: str | None, seed: int | None) -> SynthSceneSpec:
    if path is None:
        payload = {}
    else:
        try:
            payload = read_json(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read scene spec {path}: {exc}")
    fields = {f.name for f in dataclasses.fields(SynthSceneSpec)}
    unknown = set(payload) - fields
    if unknown:
        raise ConfigError(f"unknown scene-spec keys: {sorted(unknown)}")
    for key in ("object_classes", "relation_classes"):
        if key in payload:
            payload[key] = tuple(payload[key])
    spec = SynthSceneSpec(**payload)
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    spec.validate()
    return spec


def cmd_generate(args) -> int:
    spec = _spec_from_file(args.spec, args.seed)
    out_dir = Path(args.out)
    train_path, test_path = generate_synthetic_dataset(spec, out_dir)
    atomic_write_json(out_dir / "scene_spec.json", dataclasses.asdict(spec))
    print(f"wrote {train_path} ({spec.train_scenes} scenes) and "
          f"{test_path} ({spec.test_scenes} scenes)")
    return 0


def _apply_train_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.dataset:
        cfg.paths.dataset = args.dataset
    if args.out:
        cfg.paths.out_dir = args.out
    if args.seed is not None:
        cfg.schedule.seed = args.seed
    if args.epochs is not None:
        cfg.schedule.epochs = args.epochs
    if args.no_parallel_predictor:
        cfg.model.parallel_decoders = False
    if args.no_consistency_loss:
        cfg.loss.w_consistency = 0.0
    if args.aux_loss is not None:
        cfg.loss.aux_loss = args.aux_loss == "on"
    return cfg


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    cfg = _apply_train_overrides(cfg, args)
    cfg.validate()
    if not cfg.paths.dataset:
        raise ConfigError("no dataset path configured (paths.dataset or --dataset)")
    if not cfg.paths.out_dir:
        raise ConfigError("no output directory configured (paths.out_dir or --out)")
    samples, categories = load_dataset(cfg.paths.dataset)
    if cfg.model.num_object_classes != len(categories.objects) or \
            cfg.model.num_relation_classes != len(categories.relations):
        raise ConfigError(
            f"model class counts ({cfg.model.num_object_classes} objects, "
            f"{cfg.model.num_relation_classes} relations) do not match dataset "
            f"({len(categories.objects)} objects, {len(categories.relations)} relations)")
    out_dir = Path(cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_run_config(out_dir / "resolved_config.json", cfg)
    model = HOIModel(cfg.model, seed=cfg.schedule.seed)
    result = fit(model, samples, cfg.schedule, cfg.loss, out_dir,
                 resume_from=args.resume)
    print(f"trained {result.steps} steps; final checkpoint {result.final_checkpoint}")
    if result.last_breakdown is not None:
        print(f"final total loss {result.last_breakdown.total:.6f}")
    return 0


def evaluate_checkpoint(checkpoint_path: str, dataset_path: str, cfg: RunConfig,
                        use_nms: bool, out_dir: Path) -> dict:
    """Forward every test image, dump raw and post-NMS detections, score mAP."""
    ckpt = load_checkpoint(checkpoint_path)
    model = model_from_checkpoint(ckpt)
    samples, categories = load_dataset(dataset_path)
    model.eval()
    raw: dict[int, list] = {}
    for sample in sorted(samples, key=lambda s: s.image_id):
        with no_grad():
            outputs = model.forward(sample.image)
        preds = compose_predictions(outputs.instance, outputs.relation)
        raw[sample.image_id] = top_k(preds, k=100)
    final = {image_id: (trident_nms(dets, cfg.nms) if use_nms else list(dets))
             for image_id, dets in raw.items()}
    gts = {s.image_id: s.gts for s in samples}
    result = mean_ap(final, gts, categories.hoi_pairs,
                     categories.train_frequencies, cfg.eval)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_predictions(out_dir / "raw_predictions.json", raw)
    save_predictions(out_dir / "predictions.json", final)
    report = {
        "checkpoint": str(checkpoint_path),
        "dataset": str(dataset_path),
        "nms": dataclasses.asdict(cfg.nms) if use_nms else None,
        "eval": dataclasses.asdict(cfg.eval),
        "result": result.to_dict(),
    }
    atomic_write_json(out_dir / "report.json", report)
    return report


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    cfg.nms.validate()
    cfg.eval.validate()
    out_dir = Path(args.out)
    report = evaluate_checkpoint(args.checkpoint, args.dataset, cfg,
                                 use_nms=not args.no_nms, out_dir=out_dir)
    save_run_config(out_dir / "resolved_config.json", cfg)
    res = report["result"]
    print(f"mAP full {res['map_full']:.4f}  rare {res['map_rare']:.4f}  "
          f"non-rare {res['map_nonrare']:.4f}")
    return 0


def _load_grid(grid_arg: str) -> list[TridentNMSConfig]:
    if grid_arg == "paper":
        rows = PAPER_SWEEP_GRID
    else:
        try:
            payload = read_json(grid_arg)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read grid {grid_arg}: {exc}")
        rows = payload["grid"] if isinstance(payload, dict) else payload
    configs = []
    for row in rows:
        cfg = TridentNMSConfig(**row)
        cfg.validate()
        configs.append(cfg)
    if not configs:
        raise ConfigError("empty NMS grid")
    return configs


def _render_sweep_table(rows: list[dict]) -> str:
    header = f"{'mode':<8}{'w_h':>6}{'w_o':>6}{'w_rel':>7}{'thres':>7}" \
             f"{'full':>9}{'rare':>9}{'nonrare':>9}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(f"{row['mode']:<8}{row['w_h']:>6.2f}{row['w_o']:>6.2f}"
                     f"{row['w_rel']:>7.2f}{row['threshold']:>7.2f}"
                     f"{row['map_full']:>9.4f}{row['map_rare']:>9.4f}"
                     f"{row['map_nonrare']:>9.4f}")
    return "\n".join(lines)


def cmd_nms_sweep(args) -> int:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    grid = _load_grid(args.grid)
    raw = load_predictions(args.predictions)
    samples, categories = load_dataset(args.dataset)
    gts = {s.image_id: s.gts for s in samples}
    rows = []
    for nms_cfg in grid:
        filtered = {image_id: trident_nms(dets, nms_cfg)
                    for image_id, dets in raw.items()}
        result = mean_ap(filtered, gts, categories.hoi_pairs,
                         categories.train_frequencies, cfg.eval)
        row = dataclasses.asdict(nms_cfg)
        row.update({"map_full": result.map_full, "map_rare": result.map_rare,
                    "map_nonrare": result.map_nonrare})
        rows.append(row)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_json(out_dir / "sweep.json", {"rows": rows})
    table = _render_sweep_table(rows)
    atomic_write_bytes(out_dir / "sweep.txt", (table + "\n").encode("utf-8"))
    print(table)
    return 0


def cmd_export_attention(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    model.eval()
    try:
        image = load_image_png(args.image)
    except OSError as exc:
        raise DataError(f"cannot read image {args.image}: {exc}")
    with no_grad():
        outputs = model.forward(image)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    export_attention(outputs.attention, outputs.grid,
                     out_dir / "attention.json", image_id=args.image)
    if args.images:
        _write_attention_images(outputs, out_dir)
    print(f"wrote {out_dir / 'attention.json'}")
    return 0


def _write_attention_images(outputs, out_dir: Path) -> None:
    from PIL import Image

    gh, gw = outputs.grid
    for record in outputs.attention:
        for layer_idx, weights in enumerate(record.layer_weights):
            w = weights[0] if weights.ndim == 4 else weights
            heads, queries, _ = w.shape
            for query in range(queries):
                # heads tiled horizontally, one row per layer file
                tiles = [w[h, query].reshape(gh, gw) for h in range(heads)]
                strip = np.concatenate(tiles, axis=1)
                strip = strip / max(strip.max(), 1e-12)
                pixels = np.round(strip * 255.0).astype(np.uint8)
                name = f"{record.branch}_layer{layer_idx}_query{query:03d}.png"
                Image.fromarray(pixels, mode="L").save(out_dir / name)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hoidet",
                                     description="Desk-scale HOI detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    p.add_argument("--spec", default=None, help="scene-spec JSON (defaults used if omitted)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--no-parallel-predictor", action="store_true",
                   help="single shared decoder baseline")
    p.add_argument("--no-consistency-loss", action="store_true")
    p.add_argument("--aux-loss", choices=("on", "off"), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--no-nms", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("nms-sweep", help="re-score cached raw predictions over an NMS grid")
    p.add_argument("--predictions", required=True, help="raw (pre-NMS) prediction dump")
    p.add_argument("--dataset", required=True)
    p.add_argument("--grid", default="paper", help="'paper' or a grid JSON file")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_nms_sweep)

    p = sub.add_parser("export-attention", help="dump decoder cross-attention maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="path to a dataset PNG")
    p.add_argument("--out", required=True)
    p.add_argument("--images", action="store_true",
                   help="also write grayscale per-query attention strips")
    p.set_defaults(func=cmd_export_attention)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericsError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
