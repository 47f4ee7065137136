"""Command-line entry point.

Subcommands: ``make-toy-data``, ``train-gen``, ``synth``, ``train-loc``,
``eval`` and ``visualize``. Artifacts of one category live in a run
directory (``--out``, default ``runs/<category>``)::

    generator.pt  generator_history.json
    localizer.pt  localizer_history.json
    report.json

Errors print one line ``E<code> <kind>: <message>`` on stderr and exit with
2 (configuration), 3 (missing artifact) or 4 (runtime failure).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .dataset_io import (DatasetError, DatasetSpec, load_checkpoint, load_dataset, save_checkpoint,
                         save_report)
from .edges import extract_edge_map
from .generator import GeneratorModel, train_generator
from .imaging import read_gray, read_image, write_gray, write_image
from .metrics import evaluate
from .network import predict_scores, reconstruct
from .toy import make_toy_dataset
from .trainer import CategoryMismatchError, TrainState, load_localizer, make_synthesizer, save_history, train_localizer
from .viz import overlay

DATA_ROOT_ENV = "LOGICALAD_DATA_ROOT"
EXIT_CONFIG, EXIT_MISSING, EXIT_RUNTIME = 2, 3, 4

log = logging.getLogger("logicalad")


class CLIError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _missing(message: str) -> CLIError:
    return CLIError(EXIT_MISSING, "missing-artifact", message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(EXIT_CONFIG, "config", message.replace("\n", " "))


# --- shared helpers ------------------------------------------------------------

def _experiment(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    for flag, key in (("disable_edge_head", "run.net.edge_head=false"),
                      ("plain_attention", 'run.net.attention_block="plain"'),
                      ("plain_neck", 'run.net.neck="plain_concat"'),
                      ("no_semantic", "run.toggles.semantic_regions=false"),
                      ("no_arbitrary", "run.toggles.arbitrary_regions=false"),
                      ("no_remove", "run.toggles.remove=false"),
                      ("no_replace", "run.toggles.replace=false"),
                      ("no_merge", "run.toggles.merge=false"),
                      ("tps_on_synthetic", "run.toggles.tps_on_synthetic=true")):
        if getattr(args, flag, False):
            overrides.append(key)
    cfg = load_config(args.config, args.profile, overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _data_root(args, cfg: ExperimentConfig) -> Path:
    root = args.data_root or os.environ.get(DATA_ROOT_ENV) or cfg.data_root
    if not root:
        raise CLIError(EXIT_CONFIG, "config",
                       f"no dataset root: pass --data-root, set {DATA_ROOT_ENV} or data_root in the config")
    return Path(root)


def _run_dir(args) -> Path:
    return Path(args.out) if args.out else Path("runs") / args.category


def _dataset(args, cfg: ExperimentConfig, split: str):
    spec = DatasetSpec(_data_root(args, cfg), args.category, cfg.run.image_size, split)
    try:
        data = load_dataset(spec)
    except DatasetError as exc:
        raise _missing(str(exc)) from exc
    if len(data) == 0:
        raise _missing(f"no images found in {spec.root / spec.category / split}")
    return data


def _load_generator(path: Path) -> GeneratorModel:
    if not path.is_file():
        raise _missing(f"generator checkpoint {path} not found; run `logicalad train-gen` first")
    data = load_checkpoint(path)
    if data["extra"].get("kind") != "generator":
        raise CLIError(EXIT_CONFIG, "config", f"{path} is not a generator checkpoint")
    return GeneratorModel.from_state(data["model"])


def _load_localizer(path: Path):
    if not path.is_file():
        raise _missing(f"localizer checkpoint {path} not found; run `logicalad train-loc` first")
    return load_localizer(path)


# --- commands --------------------------------------------------------------------

def cmd_make_toy_data(args) -> int:
    cfg = _experiment(args)
    root = Path(args.out) if args.out else _data_root(args, cfg)
    size = cfg.run.image_size[0]
    base = make_toy_dataset(root, args.category, n_train=args.n_train, n_test_good=args.n_test_good,
                            n_test_per_defect=args.n_test_per_defect, size=size, seed=cfg.seed)
    print(f"wrote toy category to {base}")
    return 0


def cmd_train_gen(args) -> int:
    cfg = _experiment(args)
    data = _dataset(args, cfg, "train")
    pairs = [(extract_edge_map(im), im) for im in data.images]
    model = train_generator(pairs, cfg.generator, seed=cfg.seed, category=args.category)
    run = _run_dir(args)
    save_checkpoint(run / "generator.pt", model.state(), epoch=cfg.generator.epochs,
                    extra={"kind": "generator", "config": cfg.to_dict()})
    save_history(model.history, run / "generator_history.json")
    print(f"wrote {run / 'generator.pt'}")
    return 0


def cmd_train_loc(args) -> int:
    cfg = _experiment(args)
    run = _run_dir(args)
    generator = _load_generator(Path(args.generator) if args.generator else run / "generator.pt")
    data = _dataset(args, cfg, "train")
    ckpt = run / "localizer.pt"
    resume = None
    if args.resume:
        if not ckpt.is_file():
            raise _missing(f"no checkpoint to resume at {ckpt}")
        resume = TrainState.load(ckpt)
    result = train_localizer(data.images, generator, cfg.run, seed=cfg.seed, category=args.category,
                             resume=resume, checkpoint_path=ckpt)
    result.state.save(ckpt)
    save_history(result.history, run / "localizer_history.json")
    if result.history:
        last = result.history[-1]
        print(" ".join(f"{k}={last[k]:.6g}" for k in last if k != "epoch"))
    print(f"wrote {ckpt}")
    return 0


def cmd_synth(args) -> int:
    if args.n < 0:
        raise CLIError(EXIT_CONFIG, "config", "--n must be non-negative")
    cfg = _experiment(args)
    run = _run_dir(args)
    generator = _load_generator(Path(args.generator) if args.generator else run / "generator.pt")
    if args.n == 0:
        return 0
    data = _dataset(args, cfg, "train")
    synth = make_synthesizer(data.images, generator, cfg.run)
    rng = np.random.default_rng([cfg.seed, 0x517])
    indices = rng.integers(0, len(synth), size=args.n)
    out = Path(args.samples) if args.samples else run / "synth"
    out.mkdir(parents=True, exist_ok=True)
    tags = []
    for k, sample in enumerate(synth.synthesize_batch(indices, rng)):
        stem = f"{k:04d}"
        write_image(out / f"{stem}_image.png", sample.image)
        write_gray(out / f"{stem}_edges.png", sample.anomaly_edges)
        write_gray(out / f"{stem}_gt.png", sample.gt_mask.astype(np.float32))
        write_gray(out / f"{stem}_region.png", sample.region_mask.astype(np.float32))
        tags.append({"sample": stem, "strategy": sample.strategy, "source": str(data[sample.source_index].path)})
    (out / "samples.json").write_text(json.dumps(tags, indent=2))
    print(f"wrote {args.n} samples to {out}")
    return 0


def format_report_rows(category: str, report) -> list[str]:
    """Table rows printed by ``eval``; numbers are the ``repr`` of the report values."""
    caps = sorted(report.au_spro_at_fpr)
    head = ["category", "image_auroc", "pixel_auroc", "pixel_ap"] + [f"au_spro@{c!r}" for c in caps]
    rows = ["\t".join(head)]
    vals = [report.image_auroc, report.pixel_auroc, report.pixel_ap] + [report.au_spro_at_fpr[c] for c in caps]
    rows.append("\t".join([category] + [repr(v) for v in vals]))
    for defect, d in sorted(report.per_defect.items()):
        spro = [d["au_spro_at_fpr"].get(repr(c)) for c in caps]
        rows.append("\t".join([f"{category}/{defect}", repr(d["image_auroc"]), "-", "-"] + [repr(v) for v in spro]))
    return rows


def cmd_eval(args) -> int:
    cfg = _experiment(args)
    run = _run_dir(args)
    model, _ = _load_localizer(Path(args.localizer) if args.localizer else run / "localizer.pt")
    data = _dataset(args, cfg, "test")
    scores = predict_scores(model, np.stack(data.images))
    gts = [s.ground_truth for s in data]
    report = evaluate(list(scores), gts, [s.defect_type for s in data], fpr_caps=args.fpr_cap or (0.05,))
    save_report(report, run / "report.json")
    for row in format_report_rows(args.category, report):
        print(row)
    return 0


def cmd_visualize(args) -> int:
    cfg = _experiment(args)
    run = _run_dir(args)
    model, _ = _load_localizer(Path(args.localizer) if args.localizer else run / "localizer.pt")
    image_path = Path(args.image)
    if not image_path.is_file():
        raise _missing(f"image {image_path} not found")
    img = read_image(image_path, cfg.run.image_size)
    gt = None
    if args.gt:
        if not Path(args.gt).is_file():
            raise _missing(f"ground-truth mask {args.gt} not found")
        gt = read_gray(args.gt, cfg.run.image_size, nearest=True) > 0.5
    score = predict_scores(model, img[None])[0]
    recon = reconstruct(model, img).image
    target = Path(args.png) if args.png else run / f"{image_path.stem}_overlay.png"
    write_image(target, overlay(img, score, gt, args.alpha, recon))
    print(f"wrote {target}")
    return 0


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="logicalad", description="Edge-manipulation anomaly synthesis and localization.")
    parser.add_argument("--version", action="version", version=f"logicalad {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    shared = _Parser(add_help=False)
    shared.add_argument("--config", help="JSON config file")
    shared.add_argument("--profile", choices=("desk", "paper"), help="named profile (default: desk)")
    shared.add_argument("--category", default="toy_box")
    shared.add_argument("--seed", type=int, help="overrides the config seed")
    shared.add_argument("--out", help="run directory (default runs/<category>)")
    shared.add_argument("--data-root", help=f"dataset root (else ${DATA_ROOT_ENV}, else config)")
    shared.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, e.g. run.epochs=5")
    ablation = _Parser(add_help=False)
    for flag in ("disable-edge-head", "plain-attention", "plain-neck", "no-semantic", "no-arbitrary",
                 "no-remove", "no-replace", "no-merge", "tps-on-synthetic"):
        ablation.add_argument(f"--{flag}", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("make-toy-data", parents=[shared], help="write the procedural toy category")
    p.add_argument("--n-train", type=int, default=20)
    p.add_argument("--n-test-good", type=int, default=10)
    p.add_argument("--n-test-per-defect", type=int, default=5)
    p.set_defaults(func=cmd_make_toy_data)

    p = sub.add_parser("train-gen", parents=[shared], help="train the edge-to-image generator")
    p.set_defaults(func=cmd_train_gen)

    p = sub.add_parser("synth", parents=[shared, ablation], help="write synthetic anomalies")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--generator", help="generator checkpoint (default <run>/generator.pt)")
    p.add_argument("--samples", help="output folder (default <run>/synth)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-loc", parents=[shared, ablation], help="train the localization network")
    p.add_argument("--generator", help="generator checkpoint (default <run>/generator.pt)")
    p.add_argument("--resume", action="store_true", help="continue from <run>/localizer.pt")
    p.set_defaults(func=cmd_train_loc)

    p = sub.add_parser("eval", parents=[shared], help="evaluate on the test split and write report.json")
    p.add_argument("--localizer", help="localizer checkpoint (default <run>/localizer.pt)")
    p.add_argument("--fpr-cap", type=float, action="append", help="AU-sPRO cap, repeatable (default 0.05)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("visualize", parents=[shared], help="write a score overlay PNG")
    p.add_argument("--image", required=True)
    p.add_argument("--gt", help="ground-truth mask PNG")
    p.add_argument("--localizer", help="localizer checkpoint (default <run>/localizer.pt)")
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--png", help="output PNG (default <run>/<image>_overlay.png)")
    p.set_defaults(func=cmd_visualize)
    return parser


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except CLIError as exc:
        err = exc
    except ConfigError as exc:
        err = CLIError(EXIT_CONFIG, "config", str(exc))
    except (FileNotFoundError, DatasetError) as exc:
        err = _missing(str(exc))
    except CategoryMismatchError as exc:
        err = CLIError(EXIT_CONFIG, "config", str(exc))
    except Exception as exc:  # noqa: BLE001 - every failure must map to an exit code
        err = CLIError(EXIT_RUNTIME, "runtime", f"{type(exc).__name__}: {exc}")
    message = " ".join(str(err).split())
    print(f"E{err.code} {err.kind}: {message}", file=sys.stderr)
    return err.code


if __name__ == "__main__":
    sys.exit(main())
