"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 registration
failure, 4 I/O error or missing input.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .appearance import write_loss_csv
from .config import RunConfig, load_config
from .core import SplatCloud
from .correspond import RenderMatchProvider
from .errors import ConfigError, DegenerateGeometryError, PlyDataError, PlyFormatError, RegistrationError
from .io import load_cameras, load_ply, save_color_png, save_correspondences, save_mask_png, save_pfm, save_ply
from .pipeline import NotFoundError, align_object, check_object, evaluate_object, predicted_masks, refine_object
from .render import gradient_vote_segment, render
from .synthbench import canonical_json, gen_scene, load_bundle, save_bundle, sha256_file
from .viewsel import select_views

log = logging.getLogger("splatalign")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_REGISTRATION = 3
EXIT_IO = 4


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_manifest(out: Path, cfg: RunConfig, command, extra=None):
    files = sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "files": {f: sha256_file(out / f) for f in files},
    }
    if extra:
        manifest.update(extra)
    _write_json(out / "manifest.json", manifest)
    return manifest


def _out_dir(args):
    if not args.out:
        raise ConfigError("--out is required for this command")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _bundle_object(args):
    bundle = load_bundle(args.bundle)
    check_object(bundle, args.object)
    return bundle


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg: RunConfig):
    out = _out_dir(args)
    bundle = gen_scene(seed=cfg.seed, cfg=cfg.scene, degrade=cfg.degrade, identity=args.identity)
    manifest = save_bundle(bundle, out)
    print(json.dumps({"bundle": str(out), "n_objects": manifest["n_objects"],
                      "manifest_sha256": sha256_file(out / "manifest.json")}))
    return EXIT_OK


def cmd_select_views(args, cfg: RunConfig):
    bundle = _bundle_object(args)
    views = list(bundle.train) if not args.all_views else list(range(len(bundle.cams)))
    masks = [bundle.masks[v, args.object] for v in views]
    cams = [bundle.cams[v] for v in views]
    chosen, scores = select_views(masks, cams, cfg.viewsel.k, cfg.viewsel.lambda_s, cfg.viewsel.lambda_v,
                                  return_scores=True)
    result = {
        "views": [int(views[i]) for i in chosen],
        "scores": {str(views[i]): dataclasses.asdict(scores[i]) for i in chosen},
    }
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        _write_json(args.out, result)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_segment_vote(args, cfg: RunConfig):
    out = _out_dir(args)
    bundle = _bundle_object(args)
    k = args.object
    # the reconstructable scene: background plus what every object shows
    parts = [bundle.background] + list(bundle.partial_clouds)
    scene = SplatCloud.concatenate(parts)
    views = list(bundle.train)
    idx = gradient_vote_segment(scene, [bundle.cams[v] for v in views], [bundle.masks[v, k] for v in views])
    start = sum(len(p) for p in parts[:k + 1])
    truth = np.arange(start, start + len(parts[k + 1]))
    hit = np.intersect1d(idx, truth).size
    save_ply(scene.subset(idx), out / "segment.ply")
    summary = {
        "object": k,
        "n_selected": int(len(idx)),
        "precision": hit / len(idx) if len(idx) else 0.0,
        "recall": hit / len(truth) if len(truth) else 0.0,
        "indices": idx.tolist(),
    }
    _write_json(out / "segment.json", summary)
    _write_manifest(out, cfg, "segment-vote")
    print(json.dumps({k_: v for k_, v in summary.items() if k_ != "indices"}, sort_keys=True))
    return EXIT_OK


def cmd_match(args, cfg: RunConfig):
    if not args.out:
        raise ConfigError("--out is required for this command")
    bundle = _bundle_object(args)
    k = args.object
    gen = load_ply(args.ply) if args.ply else bundle.proxy_clouds[k]
    if len(gen) != len(bundle.proxy_clouds[k]):
        raise ConfigError("the matched cloud must keep the proxy's primitive order")
    p = cfg.provider
    provider = RenderMatchProvider(np.arange(len(gen)), bundle.partial_indices[k], p.descriptor_dim, p.top_k,
                                   p.max_views, p.min_alpha, seed=cfg.seed)
    views = list(bundle.train)
    pairs = provider(gen, bundle.partial_clouds[k], [bundle.cams[v] for v in views],
                     [bundle.masks[v, k] for v in views])
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_correspondences(args.out, pairs)
    print(json.dumps({"pairs": len(pairs), "dropped": provider.last_dropped}))
    return EXIT_OK


def cmd_align(args, cfg: RunConfig):
    out = _out_dir(args)
    bundle = _bundle_object(args)
    res = align_object(bundle, args.object, cfg.icp, cfg.align_config(), cfg.provider, cfg.seed, cfg.threads)
    save_ply(res.cloud, out / "aligned.ply", dtype="f8")
    with open(out / "report.jsonl", "w") as fh:
        fh.write(canonical_json({"iter": 0, "mode": "coarse", "fitness": res.coarse.fitness,
                                 "rmse": res.coarse.rmse, "start_index": res.coarse.start_index,
                                 "transform": res.coarse.transform.to_dict()}) + "\n")
        for rep in res.reports:
            fh.write(canonical_json(rep) + "\n")
    done = [r for r in res.reports if r["mode"] != "skipped"]
    summary = {
        "object": args.object,
        "final_residual": done[-1]["residual"] if done else None,
        "coarse_transform": res.coarse.transform.to_dict(),
        "refine_transform": res.transform.to_dict(),
    }
    _write_json(out / "result.json", summary)
    _write_manifest(out, cfg, "align", {"object": args.object})
    print(json.dumps({"object": args.object, "final_residual": summary["final_residual"]}))
    return EXIT_OK


def cmd_refine(args, cfg: RunConfig):
    out = _out_dir(args)
    bundle = _bundle_object(args)
    cloud = load_ply(args.ply)
    res = refine_object(cloud, bundle, args.object, cfg.appearance)
    save_ply(res.cloud, out / "refined.ply", dtype="f8")
    write_loss_csv(res.trace, out / "loss.csv")
    _write_manifest(out, cfg, "refine", {"object": args.object})
    print(json.dumps({"initial_loss": float(res.trace[0, 3]), "final_loss": float(res.trace[-1, 3])}))
    return EXIT_OK


def cmd_render(args, cfg: RunConfig):
    out = _out_dir(args)
    cloud = load_ply(args.ply)
    cams = load_cameras(args.cameras)
    views = args.views if args.views else range(len(cams))
    for v in views:
        if not 0 <= v < len(cams):
            raise ConfigError(f"view {v} out of range (0..{len(cams) - 1})")
        r = render(cloud, cams[v])
        save_color_png(out / f"view{v:03d}.png", r.color)
        save_pfm(out / f"view{v:03d}_depth.pfm", r.depth)
        save_mask_png(out / f"view{v:03d}_alpha.png", r.alpha > 0.5)
    _write_manifest(out, cfg, "render")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig):
    out = _out_dir(args)
    bundle = _bundle_object(args)
    if len(bundle.test) == 0:
        raise ConfigError("bundle has no test split")
    cloud = load_ply(args.ply)
    metrics = evaluate_object(cloud, bundle, args.object, cfg.eval.emd_cap, cfg.seed)
    renders = out / "renders"
    renders.mkdir(exist_ok=True)
    test = [int(v) for v in bundle.test]
    for v, m in zip(test, predicted_masks(cloud, bundle, args.object, test)):
        save_color_png(renders / f"view{v:03d}.png", render(cloud, bundle.cams[v]).color)
        save_mask_png(renders / f"view{v:03d}_mask.png", m)
    _write_json(out / "metrics.json", metrics)
    _write_manifest(out, cfg, "eval", {"object": args.object})
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--threads", type=int, help="worker cap for parallel stages")
    common.add_argument("--out", help="output directory (or file for select-views/match)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, e.g. shape.iterations=500 (repeatable)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    obj = argparse.ArgumentParser(add_help=False)
    obj.add_argument("--bundle", required=True, help="scene bundle directory")
    obj.add_argument("--object", type=int, default=0, help="object index inside the bundle")

    p = argparse.ArgumentParser(prog="splatalign", description="Align proxy splat objects to partial scans.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic scene bundle")
    s.add_argument("--identity", action="store_true", help="plant identity transforms (control bundle)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("select-views", parents=[common, obj], help="greedy input-view selection")
    s.add_argument("--all-views", action="store_true", help="score every view, not only the train split")
    s.set_defaults(func=cmd_select_views)

    s = sub.add_parser("segment-vote", parents=[common, obj], help="segment an object by gradient voting")
    s.set_defaults(func=cmd_segment_vote)

    s = sub.add_parser("match", parents=[common, obj], help="render-and-match 3D correspondences")
    s.add_argument("--ply", help="current proxy state (defaults to the bundle proxy)")
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("align", parents=[common, obj], help="coarse + iterative alignment of the proxy")
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("refine", parents=[common, obj], help="SH-only appearance refinement")
    s.add_argument("--ply", required=True, help="aligned proxy PLY")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("render", parents=[common], help="render a PLY through a camera file")
    s.add_argument("--ply", required=True)
    s.add_argument("--cameras", required=True)
    s.add_argument("--views", type=int, nargs="*")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", parents=[common, obj], help="CD / EMD / mIoU against ground truth")
    s.add_argument("--ply", required=True, help="cloud to evaluate")
    s.set_defaults(func=cmd_eval)
    return p


def _config_from_args(args) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    return load_config(args.config, overrides)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
        return args.func(args, cfg)
    except (RegistrationError, DegenerateGeometryError) as exc:
        stage = getattr(exc, "stage", None)
        print(f"error: registration failed{f' in {stage}' if stage else ''}: {exc}", file=sys.stderr)
        return EXIT_REGISTRATION
    except (NotFoundError, FileNotFoundError, PlyFormatError, PlyDataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
