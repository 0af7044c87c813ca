"""Command-line entry point: render, compare, bench, train, make-scene, serve.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 accuracy failure (compare).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .projection import ProjectionCache, RenderOptions
from .rasterize import render
from .scene import SceneError
from .slicing import render_slicing_first
from .losses import psnr
from . import imgio, ply

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ACCURACY = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_time_range(spec: str):
    try:
        a, b, n = spec.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError:
        raise ValueError(f"--time-range expects a:b:n, got {spec!r}") from None
    if n < 1:
        raise ValueError("--time-range count must be >= 1")
    return np.linspace(a, b, n)


def _options(args, dtype=np.float32) -> RenderOptions:
    return RenderOptions(mode=args.mode, dtype=dtype)


def cmd_render(args) -> int:
    scene = ply.load_scene(args.scene)
    cameras = ply.load_cameras(args.cameras)
    times = (_parse_time_range(args.time_range) if args.time_range
             else np.array([args.time]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    options = _options(args)
    cache = ProjectionCache()
    frame_ms = []
    i = 0
    for cam in cameras:
        for t0 in times:
            t_start = time.perf_counter()
            buf = render(scene, cam, float(t0), options=options, cache=cache)
            ms = (time.perf_counter() - t_start) * 1e3
            frame_ms.append(ms)
            imgio.save_png(buf.color, out / f"frame_{i:05d}.png")
            if args.flow:
                imgio.save_flo(buf.flow, out / f"frame_{i:05d}.flo")
            if args.depth:
                imgio.save_pfm(buf.depth, out / f"frame_{i:05d}.pfm")
            print(f"frame_{i:05d}.png t={t0:.4f} {ms:.2f} ms")
            i += 1
    mean_ms = float(np.mean(frame_ms))
    print(f"{i} frames, mean {mean_ms:.2f} ms/frame, {1e3 / mean_ms:.1f} FPS "
          f"(camera-stage builds: {cache.n_builds})")
    return EXIT_OK


def cmd_compare(args) -> int:
    scene = ply.load_scene(args.scene)
    cameras = ply.load_cameras(args.cameras)
    rng = np.random.default_rng(args.seed)
    # discretization thresholds off so the report reflects the math, not the
    # 1/255 alpha cutoffs straddled differently at float32 vs float64
    eng = RenderOptions(mode=args.mode, dtype=np.float32, temporal_cutoff=0.0,
                        alpha_skip=0.0, transmittance_floor=0.0)
    orc = RenderOptions(mode="exact", dtype=np.float64, temporal_cutoff=0.0,
                        alpha_skip=0.0, transmittance_floor=0.0)
    max_diff = 0.0
    worst_psnr = float("inf")
    for _ in range(args.samples):
        cam = cameras[int(rng.integers(len(cameras)))]
        t0 = float(rng.uniform(0, 1))
        ours = render(scene, cam, t0, options=eng).color.astype(np.float64)
        ref = render_slicing_first(scene, cam, t0, options=orc).color
        max_diff = max(max_diff, float(np.abs(ours - ref).max()))
        worst_psnr = min(worst_psnr, psnr(np.clip(ours, 0, 1), np.clip(ref, 0, 1)))
    print(f"samples: {args.samples}  max abs pixel diff: {max_diff:.3e}  "
          f"worst PSNR between pipelines: {worst_psnr:.2f} dB")
    if args.bench:
        _run_bench(scene, cameras[0], args.bench_frames, args.mode)
    if args.mode == "exact" and max_diff > 1e-4:
        print("FAIL: exact-mode difference exceeds 1e-4", file=sys.stderr)
        return EXIT_ACCURACY
    return EXIT_OK


def _run_bench(scene, cam, n_frames: int, mode: str):
    times = np.linspace(0.0, 1.0, n_frames)
    eng = RenderOptions(mode=mode, dtype=np.float32)
    orc = RenderOptions(mode="exact", dtype=np.float32)
    cache = ProjectionCache()
    render(scene, cam, float(times[0]), options=eng, cache=cache)  # warm cache+jit
    render_slicing_first(scene, cam, float(times[0]), options=orc)
    t0 = time.perf_counter()
    for t in times:
        render(scene, cam, float(t), options=eng, cache=cache)
    ours_ms = (time.perf_counter() - t0) * 1e3 / n_frames
    t0 = time.perf_counter()
    for t in times:
        render_slicing_first(scene, cam, float(t), options=orc)
    ref_ms = (time.perf_counter() - t0) * 1e3 / n_frames
    print(f"projection-first: {ours_ms:.3f} ms/frame")
    print(f"slicing-first:    {ref_ms:.3f} ms/frame")
    print(f"ratio: {ref_ms / ours_ms:.2f}x  "
          f"(savings {100 * (1 - ours_ms / ref_ms):.1f}%)")
    return ours_ms, ref_ms


def cmd_bench(args) -> int:
    scene = ply.load_scene(args.scene)
    cameras = ply.load_cameras(args.cameras)
    _run_bench(scene, cameras[0], args.frames, args.mode)
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import TrainConfig, fit, parse_config_file
    cfg = parse_config_file(args.config) if args.config else TrainConfig()
    if args.iterations:
        cfg.iterations = args.iterations
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene, history = fit(args.dataset, cfg, out_dir=out,
                         log_file=out / "metrics.ndjson")
    final = history[-1] if history else {}
    ps = final.get("psnr_holdout")
    print(f"final holdout PSNR: {ps if ps is not None else 'n/a'}")
    return EXIT_OK


def cmd_make_scene(args) -> int:
    from .synthetic import SceneRecipe, generate_scene, ring_cameras, write_dataset
    recipe = SceneRecipe(recipe=args.recipe, seed=args.seed,
                         n_cameras=args.cameras, n_timesteps=args.timesteps,
                         resolution=args.resolution)
    out = Path(args.out)
    if args.scene_only:
        out.mkdir(parents=True, exist_ok=True)
        scene = generate_scene(recipe)
        ply.save_scene(scene, out / "gt_scene.ply")
        cams = ring_cameras(recipe.n_cameras, recipe.resolution)
        (out / "cameras.json").write_text(
            json.dumps([ply.camera_to_dict(c) for c in cams], indent=1))
        print(f"wrote {out}/gt_scene.ply ({len(scene.gaussians)} Gaussians) "
              f"and {out}/cameras.json")
    else:
        write_dataset(recipe, out)
        print(f"wrote dataset {out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn
    from .service.app import create_app
    scene = ply.load_scene(args.scene)
    app = create_app(scene, workers=args.threads, frontend_dir=args.frontend)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> _Parser:
    p = _Parser(prog="dis4dgs", description=__doc__)
    p.add_argument("--threads", type=int, default=None,
                   help="cap worker threads used by the rasterizer")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="render frames from a scene")
    r.add_argument("scene")
    r.add_argument("cameras")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--time", type=float, default=0.0)
    g.add_argument("--time-range", help="a:b:n timestamps")
    r.add_argument("--mode", choices=("exact", "fast"), default="exact")
    r.add_argument("--out", default="out")
    r.add_argument("--flow", action="store_true", help="also write .flo flow")
    r.add_argument("--depth", action="store_true", help="also write .pfm depth")
    r.set_defaults(func=cmd_render)

    c = sub.add_parser("compare", help="check the deferred pipeline against "
                                       "the slicing-first reference")
    c.add_argument("scene")
    c.add_argument("cameras")
    c.add_argument("--samples", type=int, default=8)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--mode", choices=("exact", "fast"), default="exact")
    c.add_argument("--bench", action="store_true")
    c.add_argument("--bench-frames", type=int, default=50)
    c.set_defaults(func=cmd_compare)

    b = sub.add_parser("bench", help="fixed-camera timing of both pipelines")
    b.add_argument("scene")
    b.add_argument("cameras")
    b.add_argument("--frames", type=int, default=100)
    b.add_argument("--mode", choices=("exact", "fast"), default="exact")
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("train", help="fit a scene to a dataset directory")
    t.add_argument("dataset")
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--out", default="run")
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("make-scene", help="generate a synthetic scene/dataset")
    m.add_argument("--recipe", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.add_argument("--cameras", type=int, default=8)
    m.add_argument("--timesteps", type=int, default=20)
    m.add_argument("--resolution", type=int, default=64)
    m.add_argument("--scene-only", action="store_true",
                   help="write only the scene PLY and a camera ring")
    m.set_defaults(func=cmd_make_scene)

    s = sub.add_parser("serve", help="run the interactive render service")
    s.add_argument("scene")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--frontend", help="directory of viewer static files")
    s.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    if args.threads:
        import numba
        numba.set_num_threads(max(1, args.threads))
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: file not found: {e}", file=sys.stderr)
        return EXIT_DATA
    except (SceneError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
