"""Train the full pipeline on the toy category and report held-out metrics.

Usage::

    python demos/toy_pipeline.py --out runs/demo            # desk profile, about 7 min on one CPU core
    python demos/toy_pipeline.py --out runs/demo --quick    # a few epochs, for a smoke run
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from logicalad.dataset_io import DatasetSpec, load_dataset, save_report
from logicalad.edges import extract_edge_map
from logicalad.generator import GeneratorConfig, train_generator
from logicalad.metrics import evaluate
from logicalad.network import predict_scores
from logicalad.toy import make_toy_dataset
from logicalad.trainer import RunConfig, evaluate_synthetic, save_history, train_localizer


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", default="runs/demo")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--quick", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    torch.manual_seed(args.seed)

    out = Path(args.out)
    make_toy_dataset(out / "data", "toy_box", seed=args.seed)
    train = load_dataset(DatasetSpec(out / "data", "toy_box", (64, 64), "train")).images
    test = load_dataset(DatasetSpec(out / "data", "toy_box", (64, 64), "test"))

    gen_cfg, run_cfg = GeneratorConfig.desk(), RunConfig.desk()
    if args.quick:
        gen_cfg, run_cfg = replace(gen_cfg, epochs=5), replace(run_cfg, epochs=2)

    generator = train_generator([(extract_edge_map(im), im) for im in train], gen_cfg, seed=args.seed,
                                category="toy_box")
    result = train_localizer(train, generator, run_cfg, seed=args.seed, category="toy_box")
    save_history(result.history, out / "localizer_history.json")

    good = [s.image for s in test if not s.is_anomalous]
    synthetic = evaluate_synthetic(result.model, good, generator, run_cfg, seed=args.seed + 1, per_image=5)
    print(f"held-out synthetic anomalies: pixel AUROC {synthetic.pixel_auroc:.3f}, "
          f"AU-sPRO@5% {synthetic.au_spro_at_fpr[0.05]:.3f}")

    scores = predict_scores(result.model, np.stack(test.images))
    real = evaluate(list(scores), [s.ground_truth for s in test], [s.defect_type for s in test])
    save_report(real, out / "report.json")
    print(f"toy test split: image AUROC {real.image_auroc:.3f}, pixel AUROC {real.pixel_auroc:.3f}, "
          f"AU-sPRO@5% {real.au_spro_at_fpr[0.05]:.3f}")


if __name__ == "__main__":
    main()
