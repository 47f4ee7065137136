"""Acceptance criteria, one test per criterion.

Each test appends a ``PASS`` / ``FAIL`` line to the session summary (the
``acceptance criteria`` section at the end of the pytest output).
"""

import contextlib
import json
import logging
import time

import numpy as np
import pytest
import torch

from logicalad.cli import main
from logicalad.dataset_io import DatasetSpec, load_dataset
from logicalad.edges import extract_edge_map
from logicalad.generator import GeneratorConfig, generate_pair, train_generator
from logicalad.imaging import DEFAULT_SSIM, ssim_map
from logicalad.losses import loss_edge, loss_focal, loss_image, loss_jnd, total_loss
from logicalad.manipulation import merge_edges, remove_edges, replace_edges
from logicalad.metrics import au_spro, auroc, average_precision, spro_curve
from logicalad.synthesis import AnomalySynthesizer, build_ground_truth
from logicalad.toy import make_toy_dataset
from logicalad.tps import TPSWarp, tps_warp
from logicalad.trainer import RunConfig, _epoch_batches, evaluate_synthetic, loss_drop, make_synthesizer, \
    train_localizer
from oracles import auroc_pairs, average_precision_bruteforce, edge_op_pixelwise, pro_bruteforce

log = logging.getLogger("acceptance")


@contextlib.contextmanager
def criterion(acceptance_log, number, title, budget_s):
    """Time the block, enforce the runtime budget and record a verdict line."""
    notes = []
    start = time.perf_counter()
    try:
        yield notes
        elapsed = time.perf_counter() - start
        assert elapsed < budget_s, f"took {elapsed:.1f}s, budget {budget_s}s"
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        line = f"FAIL criterion {number} ({title}) in {elapsed:.1f}s: {exc}"
        acceptance_log.append(line)
        print(line)
        raise
    line = f"PASS criterion {number} ({title}) in {elapsed:.1f}s" + (f": {'; '.join(notes)}" if notes else "")
    acceptance_log.append(line)
    print(line)


def test_criterion_1_edge_algebra(acceptance_log):
    with criterion(acceptance_log, 1, "edge algebra oracle", 10.0) as notes:
        rng = np.random.default_rng(101)
        for _ in range(1000):
            e, c = rng.random((8, 8)).astype(np.float32), rng.random((8, 8)).astype(np.float32)
            m = (rng.random((8, 8)) > 0.5).astype(np.uint8)
            outs = {"remove": remove_edges(e, m), "replace": replace_edges(e, c, m), "merge": merge_edges(e, c, m)}
            for op, out in outs.items():
                np.testing.assert_array_equal(out, edge_op_pixelwise(op, e, m, c))
                assert out[m == 0].tobytes() == e[m == 0].tobytes()
        notes.append("1000 triples, 3 ops, exact")


def test_criterion_2_tps(acceptance_log):
    with criterion(acceptance_log, 2, "TPS identity and translation", 10.0) as notes:
        rng = np.random.default_rng(102)
        img = rng.random((32, 40, 3))
        np.testing.assert_allclose(tps_warp(img, TPSWarp.identity()), img, atol=1e-6)
        coords = TPSWarp.identity().sampling_coordinates(32, 40)
        ys, xs = np.mgrid[0:32, 0:40]
        np.testing.assert_allclose(coords[0], ys, atol=1e-6)
        np.testing.assert_allclose(coords[1], xs, atol=1e-6)
        margin = 6
        for dx, dy in [(5, 0), (0, 3), (-4, 2), (3, -5)]:
            card = rng.random((32, 32))
            out = tps_warp(card, TPSWarp.translation(dx, dy), fill=0.0)
            shifted = np.roll(card, (dy, dx), axis=(0, 1))
            np.testing.assert_allclose(out[margin:-margin, margin:-margin],
                                       shifted[margin:-margin, margin:-margin], atol=1e-6)
        notes.append(f"4 translations, border margin {margin}px")


def test_criterion_3_ssim(acceptance_log):
    with criterion(acceptance_log, 3, "SSIM suite", 5.0):
        rng = np.random.default_rng(103)
        for _ in range(5):
            x, y = rng.random((32, 32)), rng.random((32, 32))
            np.testing.assert_allclose(ssim_map(x, x), 1.0, atol=1e-6)
            np.testing.assert_allclose(ssim_map(x, y), ssim_map(y, x), atol=1e-6)
        c1, c2 = DEFAULT_SSIM.c1, DEFAULT_SSIM.c2
        for a, b in [(0.2, 0.8), (0.0, 1.0), (0.5, 0.5), (0.9, 0.1)]:
            expected = (2 * a * b + c1) * c2 / ((a * a + b * b + c1) * c2)
            np.testing.assert_allclose(ssim_map(np.full((24, 24), a), np.full((24, 24), b)), expected, atol=1e-6)


def _fd_rel_error(loss_fn, x, h=1e-6):
    t = torch.tensor(x, dtype=torch.float64, requires_grad=True)
    loss_fn(t).backward()
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += h
        down[idx] -= h
        num[idx] = (float(loss_fn(torch.tensor(up))) - float(loss_fn(torch.tensor(down)))) / (2 * h)
    return np.linalg.norm(t.grad.numpy() - num) / max(np.linalg.norm(num), 1e-12)


def test_criterion_4_losses(acceptance_log):
    with criterion(acceptance_log, 4, "loss suite", 30.0) as notes:
        rng = np.random.default_rng(104)
        for alpha in (0.5, 0.75, 0.25):
            m = (rng.random((4, 4)) > 0.5).astype(np.float64)
            p = rng.uniform(0.01, 0.99, (4, 4))
            weighted_bce = np.mean(-(alpha * m * np.log(p) + (1 - alpha) * (1 - m) * np.log(1 - p)))
            got = float(loss_focal(torch.tensor(m), torch.tensor(p), gamma=0.0, alpha=alpha))
            assert abs(got - weighted_bce) <= 1e-6
        assert float(loss_edge(torch.tensor([0.9, 0.1, 0.42]), torch.tensor([0.3, 0.3, 0.3]), eta=0.5)) == 0.0

        target3, target1 = rng.random((1, 3, 4, 4)), rng.random((1, 1, 4, 4))
        m = (rng.random((4, 4)) > 0.5).astype(np.float64)
        y = rng.choice([0.0, 0.1, 0.6, 1.0], size=(4, 4))
        checks = {
            "image": (lambda r: loss_image(torch.tensor(target3), r), rng.random((1, 3, 4, 4))),
            "jnd": (lambda r: loss_jnd(torch.tensor(target1), r), rng.random((1, 1, 4, 4))),
            "edge": (lambda p: loss_edge(p, torch.tensor(y)), rng.uniform(0.05, 0.95, (4, 4))),
            "focal": (lambda p: loss_focal(torch.tensor(m), p), rng.uniform(0.05, 0.95, (4, 4))),
        }
        for name, (fn, x) in checks.items():
            rel = _fd_rel_error(fn, x)
            assert rel < 1e-4, f"{name} gradient rel. error {rel:.2e}"
            notes.append(f"{name} {rel:.1e}")


def test_criterion_5_metrics(acceptance_log):
    with criterion(acceptance_log, 5, "metrics oracle", 60.0) as notes:
        rng = np.random.default_rng(105)
        cases = 0
        while cases < 10_000:
            n = int(rng.integers(2, 13))
            labels = rng.random(n) > rng.random()
            if labels.all() or not labels.any():
                continue
            scores = np.round(rng.random(n), int(rng.integers(1, 4)))  # coarse rounding forces ties
            assert abs(auroc(scores, labels) - auroc_pairs(scores, labels)) <= 1e-12
            assert abs(average_precision(scores, labels) - average_precision_bruteforce(scores, labels)) <= 1e-12
            cases += 1
        spro_cases = 0
        while spro_cases < 200:
            k = int(rng.integers(1, 4))
            maps = [np.round(rng.random((8, 8)), 2) for _ in range(k)]
            gts = [rng.random((8, 8)) > 0.75 for _ in range(k)]
            if not any(g.any() for g in gts) or all(g.all() for g in gts):
                continue
            got = np.array(list(spro_curve(maps, gts)))
            ref = np.array(pro_bruteforce(maps, gts))
            assert got.shape == ref.shape
            np.testing.assert_allclose(got, ref, atol=1e-9)
            spro_cases += 1
        assert au_spro([(0.0, 0.0), (0.05, 1.0)], 0.05) == 0.5
        notes.append(f"{cases} ranking cases, {spro_cases} sPRO cases")


TOY_SEED, TRAIN_SEED, EVAL_SEEDS = 0, 0, (1, 2)
PIXEL_AUROC_MIN, AU_SPRO_MIN = 0.90, 0.5
CPU_BUDGET_S = 3 * 3600


def test_criterion_6_toy_end_to_end(acceptance_log, tmp_path):
    with criterion(acceptance_log, 6, "toy end-to-end", CPU_BUDGET_S) as notes:
        make_toy_dataset(tmp_path, "toy_box", n_train=20, n_test_good=10, n_test_per_defect=5, size=64, seed=TOY_SEED)
        train = load_dataset(DatasetSpec(tmp_path, "toy_box", (64, 64), "train")).images
        held_out = [s.image for s in load_dataset(DatasetSpec(tmp_path, "toy_box", (64, 64), "test"))
                    if not s.is_anomalous]
        assert len(train) == 20

        generator = train_generator([(extract_edge_map(im), im) for im in train], GeneratorConfig.desk(),
                                    seed=TRAIN_SEED, category="toy_box")
        cfg = RunConfig.desk()
        result = train_localizer(train, generator, cfg, seed=TRAIN_SEED, category="toy_box")
        drop = loss_drop(result.history)
        notes.append(f"loss drop {drop:.0%}")
        assert drop >= 0.5

        for seed in EVAL_SEEDS:
            report = evaluate_synthetic(result.model, held_out, generator, cfg, seed=seed, per_image=5)
            notes.append(f"seed {seed}: pixel AUROC {report.pixel_auroc:.3f}, "
                         f"AU-sPRO@5% {report.au_spro_at_fpr[0.05]:.3f}")
            assert report.pixel_auroc >= PIXEL_AUROC_MIN, notes[-1]
            assert report.au_spro_at_fpr[0.05] >= AU_SPRO_MIN, notes[-1]

        # edge-head ablation: on one batch, the breakdown loses exactly the edge term
        synth = make_synthesizer(train, generator, cfg)
        batch = next(_epoch_batches(synth, cfg, np.random.default_rng([TRAIN_SEED, 0])))
        with torch.no_grad():
            outputs = result.model(batch["input"])
        full, parts = total_loss(outputs, batch)
        ablated, ablated_parts = total_loss({k: v for k, v in outputs.items() if k != "edge"}, batch)
        assert "edge" not in ablated_parts
        assert float(full) - float(ablated) == pytest.approx(parts["edge"], abs=1e-6)
        log.info("loss breakdown with edge head: %s", parts)
        log.info("loss breakdown without edge head: %s", ablated_parts)

        # and a run trained with the flag records no edge term at all
        ablated_cfg = RunConfig.from_dict({**cfg.to_dict(), "epochs": 1,
                                           "net": {**cfg.to_dict()["net"], "edge_head": False}})
        ablated_run = train_localizer(train, generator, ablated_cfg, seed=TRAIN_SEED, category="toy_box")
        rec = ablated_run.history[0]
        assert "edge" not in rec
        assert rec["total"] == pytest.approx(rec["image"] + rec["jnd"] + rec["focal"], rel=1e-6)
        log.info("ablated run epoch 0: %s", rec)
        notes.append(f"ablation removes edge term {parts['edge']:.4f} exactly")


TINY_CLI = ["--set", "generator.base_channels=4", "--set", "generator.num_residual_blocks=1",
            "--set", "generator.epochs=2", "--set", "run.epochs=2", "--set", "run.batch_size=4",
            "--set", "run.net.encoder_depth=2", "--set", "run.net.base_channels=4"]


def test_criterion_7_determinism(acceptance_log, tmp_path):
    with criterion(acceptance_log, 7, "determinism", 600.0) as notes:
        data = tmp_path / "data"
        assert main(["make-toy-data", "--out", str(data), "--n-train", "4", "--n-test-good", "1",
                     "--n-test-per-defect", "1"]) == 0
        runs = [tmp_path / "a", tmp_path / "b"]
        for run in runs:
            common = ["--data-root", str(data), "--out", str(run), "--seed", "3", *TINY_CLI]
            assert main(["train-gen", *common]) == 0
            assert main(["train-loc", *common]) == 0
            assert main(["synth", *common, "--n", "6"]) == 0
        for name in ("generator_history.json", "localizer_history.json"):
            assert json.loads((runs[0] / name).read_text()) == json.loads((runs[1] / name).read_text())
        files = sorted(p.name for p in (runs[0] / "synth").iterdir())
        assert files == sorted(p.name for p in (runs[1] / "synth").iterdir())
        for name in files:
            assert (runs[0] / "synth" / name).read_bytes() == (runs[1] / "synth" / name).read_bytes()
        notes.append(f"{len(files)} synthetic files byte-identical, histories identical")


def test_criterion_8_ground_truth(acceptance_log, toy_train, small_generator):
    with criterion(acceptance_log, 8, "ground-truth consistency", 600.0) as notes:
        synth = AnomalySynthesizer(toy_train, small_generator)
        rng = np.random.default_rng(108)
        n, nonempty = 0, 0
        while n < 1000:
            idx = [int(i) for i in rng.integers(0, len(toy_train), 50)]
            for s in synth.synthesize_batch(idx, rng):
                assert np.all(s.gt_mask <= s.region_mask)
                nonempty += bool(s.gt_mask.any())
                n += 1
        for i in range(len(toy_train)):
            e = synth.edge_maps[i]
            a, b = generate_pair(small_generator, e, e.copy())
            assert not build_ground_truth(a, b, np.ones(e.shape, np.uint8)).any()
        notes.append(f"{n} samples ({nonempty} with nonempty GT), identical pairs give empty GT")
