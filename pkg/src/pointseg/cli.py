"""Command-line entry point binding all modules into reproducible pipelines.

Subcommands: synth | s2i | i2s | train | eval | render | selftest. Every
output directory receives a manifest.json with the tool version, the full
configuration echo, FNV-1a digests of the inputs, and wall-clock seconds.
Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CliUsageError, PointsegError
from .grids import (
    ClassScoreMap,
    LabelGrid,
    decode_label_pgm,
    decode_points_csv,
    decode_tensor,
    encode_label_pgm,
    encode_label_ppm,
    encode_points_csv,
    encode_tensor,
)
from .i2s import I2SConfig, refresh_semantic
from .loop import MdmConfig, run_mdm
from .losses import LossWeights
from .metrics import ap_report, greedy_match
from .s2i import (
    GroupingConfig,
    assign_points,
    class_grid_from_instances,
    compute_offset_field,
    extract_regions,
)
from .synth import CorruptionConfig, Scene, corrupt_semantic, generate_scene

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    acc = FNV_OFFSET
    for byte in data:
        acc = ((acc ^ byte) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return acc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _write(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, bytes):
        path.write_bytes(payload)
    else:
        path.write_text(payload)


def _write_manifest(out_dir: Path, subcommand: str, config: dict, inputs: list[Path], t0: float) -> None:
    manifest = {
        "tool": "pointseg",
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
        "inputs": {
            str(p): f"fnv1a64:{fnv1a64(Path(p).read_bytes()):016x}" for p in inputs
        },
        "wall_seconds": round(time.time() - t0, 3),
    }
    _write(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    blob = json.loads(Path(path).read_text())
    if not isinstance(blob, dict):
        raise CliUsageError("config file must hold a JSON object")
    return blob


def _resolve(args: argparse.Namespace, file_cfg: dict, key: str, default):
    """Flags beat the config file, which beats the built-in default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in file_cfg:
        return file_cfg[key]
    return default


def _add_config_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with defaults for any flag")


# ---------------------------------------------------------------- synth


def _cmd_synth(argv: list[str]) -> int:
    parser = _Parser(prog="pointseg synth")
    _add_config_flag(parser)
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--count", type=int)
    parser.add_argument("--height", type=int)
    parser.add_argument("--width", type=int)
    parser.add_argument("--instances", type=int, help="fixed count; default draws 2-6 per scene")
    parser.add_argument("--classes", type=int)
    parser.add_argument("--shapes", choices=["rect", "ellipse", "mixed"])
    parser.add_argument("--dilation", type=int)
    parser.add_argument("--erosion", type=int)
    parser.add_argument("--merge-adjacent", action="store_const", const=True, dest="merge_adjacent")
    parser.add_argument("--flip-rate", type=float, dest="flip_rate")
    args = parser.parse_args(argv)
    cfg = _load_config_file(args.config)

    t0 = time.time()
    seed = int(_resolve(args, cfg, "seed", 0))
    count = int(_resolve(args, cfg, "count", 1))
    height = int(_resolve(args, cfg, "height", 64))
    width = int(_resolve(args, cfg, "width", 64))
    n_classes = int(_resolve(args, cfg, "classes", 3))
    shapes = _resolve(args, cfg, "shapes", "mixed")
    fixed_instances = _resolve(args, cfg, "instances", None)
    corruption = dict(
        dilation_px=int(_resolve(args, cfg, "dilation", 2)),
        erosion_px=int(_resolve(args, cfg, "erosion", 0)),
        merge_adjacent=bool(_resolve(args, cfg, "merge_adjacent", True)),
        flip_rate=float(_resolve(args, cfg, "flip_rate", 0.02)),
    )

    out_root = Path(_resolve(args, cfg, "out", None))
    for index in range(count):
        scene_seed = seed + index
        rng = np.random.default_rng(scene_seed)
        n_instances = (
            int(fixed_instances) if fixed_instances is not None else int(rng.integers(2, 7))
        )
        scene = generate_scene(scene_seed, height, width, n_instances, n_classes, shapes)
        corr_cfg = CorruptionConfig(rng_seed=scene_seed + 1, **corruption)
        corrupted = corrupt_semantic(scene, corr_cfg)
        scene_dir = out_root / f"scene_{scene_seed:08d}"
        _write(scene_dir / "gt_instances.pgm", encode_label_pgm(scene.gt_instances))
        _write(scene_dir / "gt_semantic.pgm", encode_label_pgm(scene.gt_semantic))
        _write(scene_dir / "semantic_in.pgm", encode_label_pgm(corrupted))
        _write(scene_dir / "points.csv", encode_points_csv(scene.points))
        _write(scene_dir / "features.mdmt", encode_tensor(scene.features))
        scene_json = {
            "seed": scene_seed,
            "height": height,
            "width": width,
            "n_instances": n_instances,
            "n_classes": n_classes,
            "shapes": shapes,
            "corruption": {**corruption, "rng_seed": scene_seed + 1},
        }
        _write(scene_dir / "scene.json", json.dumps(scene_json, indent=2) + "\n")
        _write_manifest(
            scene_dir, "synth",
            {**scene_json, "count_index": index},
            [], t0,
        )
        print(f"synth: wrote {scene_dir}")
    return 0


# ---------------------------------------------------------------- s2i


def _cmd_s2i(argv: list[str]) -> int:
    parser = _Parser(prog="pointseg s2i")
    _add_config_flag(parser)
    parser.add_argument("--semantic", required=True)
    parser.add_argument("--points", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--connectivity", type=int, choices=[4, 8])
    args = parser.parse_args(argv)
    cfg = _load_config_file(args.config)
    t0 = time.time()

    semantic = decode_label_pgm(Path(args.semantic).read_bytes())
    points = decode_points_csv(Path(args.points).read_text())
    connectivity = int(_resolve(args, cfg, "connectivity", 8))

    regions = extract_regions(semantic, connectivity)
    instances = assign_points(regions, points, semantic.shape)
    offsets = compute_offset_field(instances, points)
    classes = class_grid_from_instances(instances, points)

    out_dir = Path(args.out)
    _write(out_dir / "instances.pgm", encode_label_pgm(instances))
    _write(out_dir / "offsets.mdmt", encode_tensor(offsets.to_tensor()))
    class_rows = ["instance_id,class_id"] + [
        f"{i},{points.class_of()[i]}" for i in instances.ids()
    ]
    _write(out_dir / "classes.csv", "\n".join(class_rows) + "\n")
    _write(out_dir / "class_grid.pgm", encode_label_pgm(classes))
    _write_manifest(
        out_dir, "s2i", {"connectivity": connectivity},
        [Path(args.semantic), Path(args.points)], t0,
    )
    print(f"s2i: wrote {out_dir}")
    return 0


# ---------------------------------------------------------------- i2s


def _cmd_i2s(argv: list[str]) -> int:
    parser = _Parser(prog="pointseg i2s")
    _add_config_flag(parser)
    parser.add_argument("--instances", required=True)
    parser.add_argument("--classmap", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--beta", type=float)
    parser.add_argument("--pair-radius", type=int, dest="pair_radius")
    args = parser.parse_args(argv)
    cfg = _load_config_file(args.config)
    t0 = time.time()

    instances = decode_label_pgm(Path(args.instances).read_bytes())
    class_map = ClassScoreMap(decode_tensor(Path(args.classmap).read_bytes()))
    if class_map.data.shape[:2] != instances.shape:
        raise PointsegError("instances and classmap disagree on the grid")
    i2s_cfg = I2SConfig(
        beta=float(_resolve(args, cfg, "beta", 2.0)),
        pair_radius=int(_resolve(args, cfg, "pair_radius", 8)),
    )
    flat = instances.data.ravel()

    def binary_affinity(i_idx, j_idx):
        return ((flat[i_idx] == flat[j_idx]) & (flat[i_idx] > 0)).astype(np.float64)

    refreshed = refresh_semantic(binary_affinity, class_map, i2s_cfg)
    out_dir = Path(args.out)
    _write(out_dir / "classmap.mdmt", encode_tensor(refreshed.data))
    _write(out_dir / "semantic_out.pgm", encode_label_pgm(refreshed.argmax_grid()))
    _write_manifest(
        out_dir, "i2s",
        {"beta": i2s_cfg.beta, "pair_radius": i2s_cfg.pair_radius},
        [Path(args.instances), Path(args.classmap)], t0,
    )
    print(f"i2s: wrote {out_dir}")
    return 0


# ---------------------------------------------------------------- train


def _load_scene_dir(scene_dir: Path) -> tuple[Scene, LabelGrid]:
    meta = json.loads((scene_dir / "scene.json").read_text())
    gt_instances = decode_label_pgm((scene_dir / "gt_instances.pgm").read_bytes())
    gt_semantic = decode_label_pgm((scene_dir / "gt_semantic.pgm").read_bytes())
    semantic_in = decode_label_pgm((scene_dir / "semantic_in.pgm").read_bytes())
    points = decode_points_csv((scene_dir / "points.csv").read_text())
    features = decode_tensor((scene_dir / "features.mdmt").read_bytes())
    scene = Scene(gt_instances, gt_semantic, points, features)
    if meta.get("n_classes") is not None and scene.n_classes != int(meta["n_classes"]):
        raise PointsegError(f"{scene_dir}: feature channels disagree with scene.json")
    return scene, semantic_in


def _mdm_config_from(args, cfg) -> MdmConfig:
    return MdmConfig(
        n_stages=int(_resolve(args, cfg, "stages", 3)),
        warmup_iters=int(_resolve(args, cfg, "warmup", 200)),
        iters_per_stage=int(_resolve(args, cfg, "iters", 800)),
        learning_rate=float(_resolve(args, cfg, "lr", 0.05)),
        loss_weights=LossWeights(
            hard_pixel_ratio=float(_resolve(args, cfg, "hard_pixel_ratio", 0.2))
        ),
        grouping=GroupingConfig(
            vote_radius_tau=_resolve(args, cfg, "tau", None),
            pseudo_box_side=int(_resolve(args, cfg, "box_side", 16)),
        ),
        i2s=I2SConfig(
            beta=float(_resolve(args, cfg, "beta", 2.0)),
            pair_radius=int(_resolve(args, cfg, "pair_radius", 8)),
            max_pairs=int(_resolve(args, cfg, "max_pairs", 4096)),
        ),
        seed=int(_resolve(args, cfg, "seed", 0)),
    )


def _train_one(task: tuple[str, str, dict]) -> str:
    scene_path, out_path, cfg_echo = task
    scene_dir, out_dir = Path(scene_path), Path(out_path)
    t0 = time.time()
    scene, semantic_in = _load_scene_dir(scene_dir)
    cfg = MdmConfig(
        n_stages=cfg_echo["stages"],
        warmup_iters=cfg_echo["warmup"],
        iters_per_stage=cfg_echo["iters"],
        learning_rate=cfg_echo["lr"],
        loss_weights=LossWeights(hard_pixel_ratio=cfg_echo["hard_pixel_ratio"]),
        grouping=GroupingConfig(
            vote_radius_tau=cfg_echo["tau"], pseudo_box_side=cfg_echo["box_side"]
        ),
        i2s=I2SConfig(
            beta=cfg_echo["beta"],
            pair_radius=cfg_echo["pair_radius"],
            max_pairs=cfg_echo["max_pairs"],
        ),
        seed=cfg_echo["seed"],
    )
    result = run_mdm(scene, semantic_in, cfg)
    gt_classes = scene.points.class_of()
    for stage in result.stages:
        stage_dir = out_dir / f"stage_{stage.stage_idx:02d}"
        _write(stage_dir / "pseudo_instances.pgm", encode_label_pgm(stage.pseudo_instances))
        _write(stage_dir / "semantic_out.pgm", encode_label_pgm(stage.semantic_out))
        _write(stage_dir / "classmap.mdmt", encode_tensor(stage.refreshed_class_map.data))
        rows = ["instance_id,class_id"] + [
            f"{i},{c}" for i, c in sorted(stage.instance_classes.items())
        ]
        _write(stage_dir / "classes.csv", "\n".join(rows) + "\n")
        metrics = {
            "overall_iou": stage.metrics.overall_iou,
            "counts": {
                "iou50": stage.metrics.counts[0.5],
                "iou70": stage.metrics.counts[0.7],
                "iou90": stage.metrics.counts[0.9],
            },
            "per_instance_iou": {str(k): v for k, v in stage.metrics.ious.items()},
        }
        _write(stage_dir / "metrics.json", json.dumps(metrics, indent=2) + "\n")
        lines = [json.dumps(r.as_dict()) for r in stage.losses]
        _write(stage_dir / "losses.jsonl", "\n".join(lines) + "\n")
    warm = [json.dumps(r.as_dict()) for r in result.warmup_losses]
    _write(out_dir / "warmup_losses.jsonl", "\n".join(warm) + ("\n" if warm else ""))
    _write_manifest(
        out_dir, "train", cfg_echo,
        [scene_dir / name for name in (
            "gt_instances.pgm", "gt_semantic.pgm", "semantic_in.pgm",
            "points.csv", "features.mdmt",
        )],
        t0,
    )
    final = result.final.metrics.overall_iou
    return f"train: {scene_dir.name} final overall_iou {final:.2f} -> {out_dir}"


def _cmd_train(argv: list[str]) -> int:
    parser = _Parser(prog="pointseg train")
    _add_config_flag(parser)
    parser.add_argument("--scene", action="append", required=True,
                        help="scene directory (repeatable)")
    parser.add_argument("--out", required=True)
    parser.add_argument("--stages", type=int)
    parser.add_argument("--warmup", type=int)
    parser.add_argument("--iters", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--hard-pixel-ratio", type=float, dest="hard_pixel_ratio")
    parser.add_argument("--tau", type=float)
    parser.add_argument("--box-side", type=int, dest="box_side")
    parser.add_argument("--beta", type=float)
    parser.add_argument("--pair-radius", type=int, dest="pair_radius")
    parser.add_argument("--max-pairs", type=int, dest="max_pairs")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)
    cfg = _load_config_file(args.config)
    mdm_cfg = _mdm_config_from(args, cfg)
    cfg_echo = {
        "stages": mdm_cfg.n_stages,
        "warmup": mdm_cfg.warmup_iters,
        "iters": mdm_cfg.iters_per_stage,
        "lr": mdm_cfg.learning_rate,
        "hard_pixel_ratio": mdm_cfg.loss_weights.hard_pixel_ratio,
        "tau": mdm_cfg.grouping.vote_radius_tau,
        "box_side": mdm_cfg.grouping.pseudo_box_side,
        "beta": mdm_cfg.i2s.beta,
        "pair_radius": mdm_cfg.i2s.pair_radius,
        "max_pairs": mdm_cfg.i2s.max_pairs,
        "seed": mdm_cfg.seed,
    }

    out_root = Path(args.out)
    tasks = []
    for scene_path in args.scene:
        scene_dir = Path(scene_path)
        out_dir = out_root / scene_dir.name if len(args.scene) > 1 else out_root
        tasks.append((str(scene_dir), str(out_dir), cfg_echo))

    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for line in pool.map(_train_one, tasks):
                print(line)
    else:
        for task in tasks:
            print(_train_one(task))
    return 0


# ---------------------------------------------------------------- eval


def _read_classes_csv(path: Path) -> dict[int, int]:
    rows = [r.strip() for r in path.read_text().splitlines() if r.strip()]
    if not rows or rows[0].replace(" ", "") != "instance_id,class_id":
        raise PointsegError(f"{path}: expected header instance_id,class_id")
    return {int(a): int(b) for a, b in (row.split(",") for row in rows[1:])}


def _eval_one(task: tuple[str, str, str | None, str | None, str]) -> str:
    pred_path, gt_path, pred_cls_path, gt_cls_path, out_path = task
    t0 = time.time()
    pred = decode_label_pgm(Path(pred_path).read_bytes())
    gt = decode_label_pgm(Path(gt_path).read_bytes())
    pred_classes = _read_classes_csv(Path(pred_cls_path)) if pred_cls_path else None
    gt_classes = _read_classes_csv(Path(gt_cls_path)) if gt_cls_path else None
    class_aware = pred_classes is not None and gt_classes is not None
    match = greedy_match(
        pred, gt, pred_classes=pred_classes, gt_classes=gt_classes, class_aware=class_aware
    )
    ap = ap_report(pred, gt, pred_classes=pred_classes, gt_classes=gt_classes)
    metrics = {
        "counts": {
            "iou50": match.counts[0.5],
            "iou70": match.counts[0.7],
            "iou90": match.counts[0.9],
        },
        "overall_iou": match.overall_iou,
        "map50": ap.map50,
        "map70": ap.map70,
        "map75": ap.map75,
    }
    out_dir = Path(out_path)
    _write(out_dir / "metrics.json", json.dumps(metrics, indent=2) + "\n")
    inputs = [Path(pred_path), Path(gt_path)]
    if pred_cls_path:
        inputs.append(Path(pred_cls_path))
    if gt_cls_path:
        inputs.append(Path(gt_cls_path))
    _write_manifest(out_dir, "eval", {"class_aware": class_aware}, inputs, t0)
    return f"eval: overall_iou {match.overall_iou:.2f} -> {out_dir / 'metrics.json'}"


def _cmd_eval(argv: list[str]) -> int:
    parser = _Parser(prog="pointseg eval")
    _add_config_flag(parser)
    parser.add_argument("--pred", action="append", required=True)
    parser.add_argument("--gt", action="append", required=True)
    parser.add_argument("--pred-classes", action="append", dest="pred_classes")
    parser.add_argument("--gt-classes", action="append", dest="gt_classes")
    parser.add_argument("--out", required=True)
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)
    if len(args.pred) != len(args.gt):
        raise CliUsageError("--pred and --gt must be given the same number of times")
    n = len(args.pred)
    pred_cls = args.pred_classes or [None] * n
    gt_cls = args.gt_classes or [None] * n
    if len(pred_cls) != n or len(gt_cls) != n:
        raise CliUsageError("classes flags must match the number of pred/gt pairs")

    out_root = Path(args.out)
    tasks = []
    for i in range(n):
        out_dir = out_root / f"pair_{i:03d}" if n > 1 else out_root
        tasks.append((args.pred[i], args.gt[i], pred_cls[i], gt_cls[i], str(out_dir)))
    if args.jobs > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for line in pool.map(_eval_one, tasks):
                print(line)
    else:
        for task in tasks:
            print(_eval_one(task))
    return 0


# ---------------------------------------------------------------- render


def _cmd_render(argv: list[str]) -> int:
    parser = _Parser(prog="pointseg render")
    parser.add_argument("--input", required=True)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    grid = decode_label_pgm(Path(args.input).read_bytes())
    _write(Path(args.out), encode_label_ppm(grid))
    print(f"render: wrote {args.out}")
    return 0


# ---------------------------------------------------------------- selftest


def _cmd_selftest(argv: list[str]) -> int:
    parser = _Parser(prog="pointseg selftest")
    parser.parse_args(argv)
    from .selftest import run_selftest

    return run_selftest()


_COMMANDS = {
    "synth": _cmd_synth,
    "s2i": _cmd_s2i,
    "i2s": _cmd_i2s,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "render": _cmd_render,
    "selftest": _cmd_selftest,
}

_USAGE = (
    "usage: pointseg <subcommand> [options]\n"
    "subcommands: synth | s2i | i2s | train | eval | render | selftest\n"
    "run `pointseg <subcommand> --help` for details\n"
)


def dispatch(argv: list[str]) -> int:
    """Route to a subcommand; 0 success, 1 usage error, 2 data error."""
    if not argv or argv[0] in ("-h", "--help"):
        stream = sys.stderr if not argv else sys.stdout
        stream.write(_USAGE)
        return 1 if not argv else 0
    command = _COMMANDS.get(argv[0])
    if command is None:
        sys.stderr.write(f"unknown subcommand: {argv[0]}\n{_USAGE}")
        return 1
    try:
        return command(argv[1:])
    except CliUsageError as err:
        sys.stderr.write(f"{err}\n")
        return 1
    except SystemExit as err:  # argparse -h lands here
        return int(err.code or 0)
    except (PointsegError, OSError, json.JSONDecodeError) as err:
        sys.stderr.write(f"error: {err}\n")
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
