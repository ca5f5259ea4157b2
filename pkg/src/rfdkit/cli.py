"""Command-line surface: gen-data, train, infer, and eval.

Every command is deterministic for a fixed seed. Reports go to stdout as
JSON (eval also renders a text table when asked for one); progress and
diagnostics go to stderr. Failures map to stable exit codes:

    1  I/O or malformed artifact
    2  configuration error
    3  numerical failure during training
    4  checkpoint/model shape mismatch
    5  artifact mismatch (checksums, scene sets)
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import POINT_BUDGETS, RunConfig
from .errors import (ConfigError, DataError, DataMismatchError, FormatError,
                     GraphError, NumericsError, ShapeMismatchError)
from .evaluation import (CompletionRecord, DetectionRecord, MeshInstance,
                         ReconstructionRecord, average_precision, format_report,
                         instance_completion_map, reconstruction_iou, write_report)
from .geometry.mesh import TriangleMesh
from .inference import read_prediction_dir, run_inference
from .meshing import mesh_to_world, normalize_to_unit_aabb
from .synthetic.dataset import generate_corpus, read_manifest, verify_corpus
from .train import STAGES, Trainer, load_pipeline

EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NUMERICS = 3
EXIT_SHAPE = 4
EXIT_MISMATCH = 5

MESH_DEPTHS = (16, 32, 64)


def _diag(message: str) -> None:
    print(message, file=sys.stderr)


def _emit(report: dict) -> None:
    print(json.dumps(report, indent=1, sort_keys=True))


def resolve_workers(flag_value: int | None) -> int:
    """Worker count: the flag wins, then RFD_NUM_WORKERS, then 1."""
    if flag_value is None:
        raw = os.environ.get("RFD_NUM_WORKERS", "")
        if not raw:
            return 1
        try:
            flag_value = int(raw)
        except ValueError as exc:
            raise ConfigError(f"RFD_NUM_WORKERS must be an integer, got {raw!r}") from exc
    if flag_value < 1:
        raise ConfigError(f"worker count must be >= 1, got {flag_value}")
    return flag_value


def cmd_gen_data(args) -> int:
    if args.points not in POINT_BUDGETS and not args.allow_any:
        raise ConfigError(
            f"--points must be one of {list(POINT_BUDGETS)} unless --allow-any is set")
    if args.points < 1:
        raise ConfigError(f"--points must be positive, got {args.points}")
    if args.seed < 0:
        raise ConfigError(f"--seed must be non-negative, got {args.seed}")
    workers = resolve_workers(args.workers)
    _diag(f"generating {args.scenes} scenes with {args.points} points into {args.out}")
    manifest = generate_corpus(args.out, seed=args.seed, n_scenes=args.scenes,
                               n_points=args.points, n_workers=workers)
    _emit(manifest)
    return 0


def cmd_train(args) -> int:
    config = RunConfig.from_json(args.config)
    verify_corpus(args.data)
    trainer = Trainer(config, args.data, args.out)
    ckpt = trainer.run(stage=args.stage, no_joint=args.no_joint,
                       resume=args.resume, log=_diag)
    last = trainer.curves[-1] if trainer.curves else {}
    _emit({
        "checkpoint": str(ckpt),
        "curves": str(Path(args.out) / "loss_curves.json"),
        "global_step": trainer.global_step,
        "stages": trainer.completed,
        "final": {k: v for k, v in last.items() if k not in ("step", "stage", "epoch")},
    })
    return 0


def cmd_infer(args) -> int:
    pipeline = load_pipeline(args.ckpt)
    _diag(f"reconstructing {args.scan}")
    summary = run_inference(pipeline, args.scan, args.out_dir)
    _emit(summary)
    return 0


def _scene_stems(n_scenes: int) -> list[str]:
    return [f"scene_{i:04d}" for i in range(n_scenes)]


def _check_scene_sets(pred_root: Path, stems: list[str]) -> None:
    have = sorted(p.name for p in pred_root.iterdir()
                  if p.is_dir() and p.name.startswith("scene_"))
    if have != stems:
        missing = sorted(set(stems) - set(have))
        extra = sorted(set(have) - set(stems))
        raise DataMismatchError(
            f"prediction scenes do not match ground truth: missing {missing}, extra {extra}")


def _world_instance(box, canonical: TriangleMesh) -> MeshInstance:
    if canonical.n_faces:
        mesh = mesh_to_world(normalize_to_unit_aabb(canonical), box.center,
                             box.heading, box.scale)
    else:
        mesh = canonical
    return MeshInstance(mesh=mesh, label=box.label, score=box.score)


def load_eval_scene(pred_root, gt_root, index: int, metric: str):
    """One scene's metric record; module level so worker pools can import it."""
    from .synthetic.dataset import read_scene

    sample = read_scene(gt_root, index)
    preds = read_prediction_dir(Path(pred_root) / f"scene_{index:04d}")
    if metric == "detection":
        return DetectionRecord([b for b, _ in preds], sample.boxes)
    if metric == "mesh":
        gts = [(o.world_box(), o.mesh) for o in sample.objects]
        return ReconstructionRecord(list(preds), gts)
    gts = [MeshInstance(o.world_mesh(), o.label) for o in sample.objects]
    return CompletionRecord([_world_instance(b, m) for b, m in preds], gts)


def cmd_eval(args) -> int:
    pred_root = Path(args.pred)
    if args.res is not None and args.metric != "mesh":
        raise ConfigError("--res only applies to the mesh metric")
    if not pred_root.is_dir():
        raise FormatError(f"prediction root {pred_root} is not a directory")
    manifest = verify_corpus(args.gt)
    stems = _scene_stems(manifest["n_scenes"])
    _check_scene_sets(pred_root, stems)
    workers = resolve_workers(args.workers)
    jobs = [(args.pred, args.gt, i, args.metric) for i in range(len(stems))]
    if workers > 1:
        import multiprocessing

        with multiprocessing.Pool(workers) as pool:
            records = pool.starmap(load_eval_scene, jobs)
    else:
        records = [load_eval_scene(*job) for job in jobs]

    if args.metric == "detection":
        report = {"detection": average_precision(records)}
    elif args.metric == "mesh":
        depths = (args.res,) if args.res else MESH_DEPTHS
        report = {"reconstruction": reconstruction_iou(records, depths=depths)}
    else:
        report = {"completion": instance_completion_map(records)}
    report["metric"] = args.metric
    report["n_scenes"] = len(stems)

    if args.out:
        out = Path(args.out)
        write_report(report, out / "report.json", out / "report.txt")
        _diag(f"wrote {out / 'report.json'} and {out / 'report.txt'}")
    if args.text:
        print(format_report(report), end="")
    else:
        _emit(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfdkit",
        description="detect, align, and reconstruct object meshes from point scans")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic scene corpus")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--scenes", type=int, required=True)
    g.add_argument("--points", type=int, default=80000,
                   help=f"points per scan, one of {list(POINT_BUDGETS)}")
    g.add_argument("--out", required=True)
    g.add_argument("--allow-any", action="store_true",
                   help="accept a point budget outside the standard set")
    g.add_argument("--workers", type=int, default=None,
                   help="parallel scene workers (default RFD_NUM_WORKERS or 1)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a generated corpus")
    t.add_argument("--config", required=True, help="RunConfig JSON path")
    t.add_argument("--data", required=True, help="corpus root")
    t.add_argument("--out", required=True, help="run directory for checkpoints and curves")
    t.add_argument("--stage", choices=("pretrain", "joint"), default=None,
                   help="run only the named schedule slice")
    t.add_argument("--no-joint", action="store_true",
                   help="train the final stage with a frozen detector")
    t.add_argument("--resume", default=None, help="checkpoint directory to continue from")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="reconstruct objects in one point scan")
    i.add_argument("--ckpt", required=True, help="checkpoint directory")
    i.add_argument("--scan", required=True, help="point cloud PLY path")
    i.add_argument("--out-dir", required=True)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predictions against a corpus")
    e.add_argument("--pred", required=True, help="root of per-scene prediction directories")
    e.add_argument("--gt", required=True, help="corpus root")
    e.add_argument("--metric", choices=("detection", "mesh", "completion"), required=True)
    e.add_argument("--res", type=int, choices=MESH_DEPTHS, default=None,
                   help="single grid depth for the mesh metric")
    e.add_argument("--out", default=None, help="directory for report.json and report.txt")
    e.add_argument("--text", action="store_true",
                   help="print the text table instead of JSON")
    e.add_argument("--workers", type=int, default=None,
                   help="parallel scene workers (default RFD_NUM_WORKERS or 1)")
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _diag(f"config error: {exc}")
        return EXIT_CONFIG
    except NumericsError as exc:
        _diag(f"numerical failure: {exc}")
        return EXIT_NUMERICS
    except ShapeMismatchError as exc:
        _diag(f"shape mismatch: {exc}")
        return EXIT_SHAPE
    except DataMismatchError as exc:
        _diag(f"artifact mismatch: {exc}")
        return EXIT_MISMATCH
    except (FormatError, DataError, GraphError, OSError) as exc:
        _diag(f"error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
