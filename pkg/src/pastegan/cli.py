"""Command-line operator surface.

Subcommands: build-tank, train, evaluate, generate, serve. Every
subcommand accepts --config pointing at a JSON/TOML config file; flags
override file values where both exist. PASTEGAN_HOME sets the default
artifact root (runs/, tanks) and defaults to the working directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

logger = logging.getLogger(__name__)


def _load_config(args):
    from .config import TrainingConfig

    if getattr(args, "config", None):
        return TrainingConfig.from_file(args.config)
    return TrainingConfig()


def _home() -> Path:
    return Path(os.environ.get("PASTEGAN_HOME", "."))


def cmd_build_tank(args) -> int:
    import torch

    from .memory_tank import build_tank
    from .data import tank_sources
    from .pipeline import ModelBundle
    from .trainer import load_dataset, pretrain_selector

    config = _load_config(args)
    if args.dataset:
        config.dataset = args.dataset
    torch.manual_seed(config.seed)
    vocab, dataset = load_dataset(config)
    bundle = ModelBundle(config, vocab)
    pretrain_selector(bundle, dataset, vocab, config)
    tank = build_tank(tank_sources(dataset), bundle.selector(), vocab, config.crop_size)
    out = Path(args.out)
    tank.save(out)
    print(f"tank written to {out}: {len(tank)} crops in {len(tank.by_category)} categories")
    return 0


def cmd_train(args) -> int:
    from .trainer import fit

    config = _load_config(args)
    if args.name:
        config.name = args.name
    out_root = Path(args.out) if args.out else _home()
    final = fit(config, out_root=out_root, resume=args.resume)
    print(f"final checkpoint: {final}")
    return 0


def cmd_evaluate(args) -> int:
    from .trainer import evaluate_run

    run_dir = Path(args.run)
    report = evaluate_run(run_dir, n_images=args.n, seed=args.seed)
    print(json.dumps(report.to_dict(), indent=1))
    print(f"report written to {run_dir / 'eval'}")
    return 0


def cmd_generate(args) -> int:
    from .pipeline import generate_image, image_to_png_bytes
    from .scenegraph import parse_scene_graph
    from .trainer import load_run_artifacts

    art = load_run_artifacts(Path(args.run))
    graph = parse_scene_graph(Path(args.graph).read_text(), art.vocab)
    overrides = {}
    for item in args.override or []:
        idx, _, crop_id = item.partition("=")
        overrides[int(idx)] = crop_id
    result = generate_image(art, graph, seed=args.seed, k=args.k,
                            crop_overrides=overrides or None)
    out = Path(args.out)
    out.write_bytes(image_to_png_bytes(result.image))
    sidecar = out.with_suffix(".json")
    sidecar.write_text(json.dumps({
        "seed": args.seed,
        "boxes": [list(b.as_tuple()) for b in result.boxes],
        "crops": result.selected_crop_ids,
        "candidates": result.candidates,
    }, indent=1))
    print(f"wrote {out} and {sidecar}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    from .trainer import load_run_artifacts

    art = load_run_artifacts(Path(args.run))
    app = create_app(art)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pastegan",
                                     description="scene-graph-to-image toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-tank", help="build a crop memory tank")
    p.add_argument("--config", help="config file (json/toml)")
    p.add_argument("--dataset", choices=["synthetic", "coco"], default=None)
    p.add_argument("--out", required=True, help="output tank directory")
    p.set_defaults(func=cmd_build_tank)

    p = sub.add_parser("train", help="run the training pipeline")
    p.add_argument("--config", help="config file (json/toml)")
    p.add_argument("--name", help="override run name")
    p.add_argument("--out", help="artifact root (default: PASTEGAN_HOME or cwd)")
    p.add_argument("--resume", help="checkpoint file to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="compute IS/FID/diversity for a run")
    p.add_argument("--config", help="config file (json/toml)")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--seed", type=int, default=1234)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("generate", help="generate one image from a graph json")
    p.add_argument("--config", help="config file (json/toml)")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--graph", required=True, help="scene graph json file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=None, help="retrieval breadth")
    p.add_argument("--override", action="append",
                   help="pin object crop, e.g. --override 0=ex00003-obj1")
    p.add_argument("--out", required=True, help="output png path")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("serve", help="serve the HTTP inference API")
    p.add_argument("--config", help="config file (json/toml)")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports and exits
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
