"""Write a PNG grid of synthetic anomalies: input, edited edges, region and ground truth per row.

Usage::

    python demos/synthesis_gallery.py --out gallery.png --rows 6
"""

import argparse
import tempfile
from dataclasses import replace

import numpy as np

from logicalad.dataset_io import DatasetSpec, load_dataset
from logicalad.edges import extract_edge_map
from logicalad.generator import GeneratorConfig, train_generator
from logicalad.imaging import write_image
from logicalad.synthesis import AnomalySynthesizer
from logicalad.toy import make_toy_dataset


def gray3(x):
    return np.repeat(np.asarray(x, np.float32)[..., None], 3, axis=-1)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", default="gallery.png")
    parser.add_argument("--rows", type=int, default=6)
    parser.add_argument("--generator-epochs", type=int, default=40)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as root:
        make_toy_dataset(root, "toy_box", n_train=8, n_test_good=0, n_test_per_defect=0, seed=args.seed)
        images = load_dataset(DatasetSpec(root, "toy_box", (64, 64), "train")).images
    cfg = replace(GeneratorConfig.desk(), epochs=args.generator_epochs)
    generator = train_generator([(extract_edge_map(im), im) for im in images], cfg, seed=args.seed,
                                category="toy_box")
    synth = AnomalySynthesizer(images, generator)
    rng = np.random.default_rng(args.seed)
    rows = []
    for s in synth.synthesize_batch([int(i) for i in rng.integers(0, len(images), args.rows)], rng):
        rows.append(np.concatenate([images[s.source_index], s.image, gray3(s.anomaly_edges),
                                    gray3(s.region_mask), gray3(s.gt_mask)], axis=1))
        print(s.strategy)
    write_image(args.out, np.concatenate(rows, axis=0))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
