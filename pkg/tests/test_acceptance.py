"""Acceptance criteria, one test each, with their stated tolerances and time limits.

Each test prints a single PASS/FAIL line; the lines are repeated in the
"acceptance criteria" section of the pytest terminal summary.
"""

import time
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from detbench.annotations import BoundingBox, Detection, GroundTruth, ImageEntry, Origin
from detbench.augment import (
    KERNELS,
    AugmentationSpec,
    apply_spec,
    autocontrast,
    defocus,
    disk_kernel,
    iso_noise,
    motion_blur,
    motion_blur_kernel,
)
from detbench.compositor import CompositeParams, iter_dataset
from detbench.evaluator import EvalReport, aggregate, average_precision, match, select_model
from detbench.pipeline import CollectingSink, PipelineOptions, StageTimings, bench, run_pipeline, stub_backend, synthetic_images
from detbench.strategy import Inventory, SplitSpec, StrategyId, build_manifest, split, verify_manifest

from conftest import make_asset, make_background
from oracles import oracle_ap, random_instance

README = Path(__file__).resolve().parents[1] / "README.md"

# Published per-dataset test APs with their printed average and difference
# (None where a table has no difference column).
PUBLISHED_ROWS = [
    # training strategies, medium models
    ("YOLOv11m R-R", 0.934, 0.688, 0.811, 0.246),
    ("YOLOv11m R-G", 0.864, 0.331, 0.597, 0.533),
    ("YOLOv11m G-G", 0.495, 0.276, 0.385, 0.219),
    ("YOLOv11m G-R", 0.578, 0.372, 0.475, 0.206),
    ("YOLOv11m M-R", 0.924, 0.731, 0.827, 0.193),
    ("SSD-MobileNetV3 R-R", 0.835, 0.664, 0.749, 0.171),
    ("SSD-MobileNetV3 R-G", 0.857, 0.618, 0.737, 0.239),
    ("SSD-MobileNetV3 G-G", 0.435, 0.346, 0.390, 0.089),
    ("SSD-MobileNetV3 G-R", 0.463, 0.226, 0.344, 0.237),
    ("SSD-MobileNetV3 M-R", 0.860, 0.598, 0.729, 0.262),
    ("RT-DETRv2-M R-R", 0.886, 0.639, 0.762, 0.247),
    ("RT-DETRv2-M R-G", 0.751, 0.525, 0.638, 0.226),
    ("RT-DETRv2-M G-G", 0.434, 0.007, 0.220, 0.427),
    ("RT-DETRv2-M G-R", 0.643, 0.156, 0.399, 0.487),
    ("RT-DETRv2-M M-R", 0.911, 0.696, 0.803, 0.215),
    # model variants
    ("YOLOv11n", 0.940, 0.828, 0.884, 0.112),
    ("YOLOv11s", 0.934, 0.776, 0.855, 0.158),
    ("YOLOv11m", 0.924, 0.744, 0.834, 0.180),
    ("YOLOv11x", 0.933, 0.803, 0.868, 0.130),
    ("SSD-MobileNetV3-L", 0.835, 0.664, 0.749, 0.171),
    ("SSD-VGG16", 0.909, 0.843, 0.876, 0.066),
    ("RT-DETRv2-S", 0.847, 0.531, 0.689, 0.316),
    ("RT-DETRv2-M", 0.911, 0.696, 0.803, 0.215),
    ("RT-DETRv2-L", 0.897, 0.769, 0.833, 0.128),
    # augmentation comparison
    ("YOLOv11 default aug", 0.940, 0.828, 0.884, None),
    ("YOLOv11 extra aug", 0.936, 0.815, 0.875, None),
    ("SSD default aug", 0.909, 0.843, 0.876, None),
    ("SSD extra aug", 0.916, 0.671, 0.793, None),
    ("RT-DETRv2 default aug", 0.897, 0.769, 0.833, None),
    ("RT-DETRv2 extra aug", 0.879, 0.709, 0.794, None),
    ("YOLOv11 combined aug", 0.937, 0.712, 0.824, None),
]

# Printed values are rounded to 3 decimals; several true values sit exactly
# on a ...5 boundary, so the slack only absorbs binary representation error.
PRINT_TOL = 0.0005 + 1e-9


@contextmanager
def criterion(log, number, title, limit_s):
    t0 = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - t0
        assert elapsed < limit_s, f"runtime {elapsed:.2f} s exceeds {limit_s} s"
    except BaseException as exc:
        line = f"FAIL  criterion {number}: {title}: {exc}"
        log.append(line)
        print(line)
        raise
    line = f"PASS  criterion {number}: {title} ({elapsed:.2f} s, limit {limit_s} s)"
    log.append(line)
    print(line)


def placeholder_inventory(normal, difficult, gen_real, gen_render):
    entries = []
    for origin, n in ((Origin.REAL_NORMAL, normal), (Origin.REAL_DIFFICULT, difficult),
                      (Origin.GEN_REAL, gen_real), (Origin.GEN_RENDER, gen_render)):
        entries += [ImageEntry(f"{origin.value}/{i:05d}.png", 640, 480, (), origin) for i in range(n)]
    return Inventory(entries)


def test_criterion_1_split_counts(acceptance_log):
    inv = placeholder_inventory(1672, 127, 1920, 1920)
    seeds = [0, 1, 7, 20250101, 2**63 - 1]
    with criterion(acceptance_log, 1, f"split counts for seeds {seeds}, each under 1 s", 1.0 * len(seeds)):
        for seed in seeds:
            t0 = time.perf_counter()
            s = split(inv, SplitSpec(seed=seed))
            assert time.perf_counter() - t0 < 1.0, seed
            assert (len(s.real_train), len(s.real_val), len(s.real_test)) == (1004, 334, 334)
            assert (len(s.gen_real_train), len(s.gen_real_val)) == (1536, 384)
            assert (len(s.gen_render_train), len(s.gen_render_val)) == (1536, 384)
            assert len(s.real_difficult) == 127


def test_criterion_2_strategy_algebra(acceptance_log):
    inv = placeholder_inventory(1672, 127, 1920, 1920)
    with criterion(acceptance_log, 2, "strategy algebra, leak-freedom, verify", 5.0):
        s = split(inv, SplitSpec(seed=3))
        manifests = {sid: build_manifest(sid, s) for sid in StrategyId}
        assert len(manifests) == 5
        for m in manifests.values():
            tests = set(m.test_normal) | set(m.test_difficult)
            assert not set(m.train) & tests and not set(m.val) & tests
            assert not set(m.train) & set(m.val)
            report = verify_manifest(m)
            assert report.passed, report.to_dict()
        mr, rr, gg = manifests[StrategyId.MR], manifests[StrategyId.RR], manifests[StrategyId.GG]
        assert set(mr.train) == set(rr.train) | set(gg.train)
        assert len(mr.train) == len(rr.train) + len(gg.train)


def test_criterion_3_aggregation(acceptance_log):
    with criterion(acceptance_log, 3, f"aggregation over {len(PUBLISHED_ROWS)} published rows + selection", 1.0):
        bad = []
        for name, n, d, avg, diff in PUBLISHED_ROWS:
            a, g = aggregate(n, d)
            if abs(a - avg) > PRINT_TOL or (diff is not None and abs(g - diff) > PRINT_TOL):
                bad.append((name, a, g, avg, diff))
        assert not bad, bad
        variants = [EvalReport(name, n, d) for name, n, d, _, _ in PUBLISHED_ROWS[15:19]]
        assert [r.model_id for r in variants] == ["YOLOv11n", "YOLOv11s", "YOLOv11m", "YOLOv11x"]
        assert select_model(variants) == "YOLOv11n"


def test_criterion_4_ap_oracle(acceptance_log):
    g1, g2 = BoundingBox(0.5, 0.5, 0.2, 0.2), BoundingBox(0.2, 0.2, 0.1, 0.1)
    fixture = [([GroundTruth(0, g1), GroundTruth(0, g2)],
                [Detection(0, g1, 0.9), Detection(0, BoundingBox(0.8, 0.8, 0.1, 0.1), 0.8), Detection(0, g2, 0.7)])]
    with criterion(acceptance_log, 4, "AP oracle equivalence on 1000 instances, fixture 5/6", 30.0):
        assert average_precision([match(g, d) for g, d in fixture]) == 5 / 6
        assert oracle_ap(fixture) == Fraction(5, 6)
        rng = np.random.default_rng(20250101)
        done = 0
        while done < 1000:
            images = random_instance(rng, max_images=5, max_gts=4, max_dets=6)
            if not any(g for g, _ in images):
                continue
            got = average_precision([match(g, d) for g, d in images])
            want = oracle_ap(images)
            assert abs(got - float(want)) <= 1e-9, (images, got, want)
            done += 1


def test_criterion_5_compositor_geometry(acceptance_log):
    backgrounds = [make_background(f"bg{i}", seed=500 + i) for i in range(4)]
    assets = [make_asset(f"cut{i}", "real-cutout", seed=i) for i in range(3)] + [
        make_asset(f"ren{i}", "render", h=36, w=36, seed=10 + i) for i in range(3)
    ]
    bg_by_id = {b.id: b for b in backgrounds}
    params = CompositeParams()
    with criterion(acceptance_log, 5, "10000 composites: band, dual rate, 4-sigma purity", 300.0):
        n, duals, audited = 10_000, 0, 0
        for entry, result in iter_dataset(backgrounds, assets, n, params, master_seed=20250101):
            for gt in result.ground_truth:
                assert gt.box.cy + gt.box.h / 2 <= params.top_band_fraction + 1e-6
            duals += len(result.recipe.placements) == 2
            if audited < 100:
                bg = bg_by_id[result.recipe.background_id].image
                h, w = bg.shape[:2]
                yy, xx = np.mgrid[0:h, 0:w] + 0.5
                near = np.zeros((h, w), bool)
                for p in result.recipe.placements:
                    r = p.rect
                    dx = np.maximum(np.maximum(r.x0 - xx, xx - r.x1), 0)
                    dy = np.maximum(np.maximum(r.y0 - yy, yy - r.y1), 0)
                    near |= np.maximum(dx, dy) <= 4 * p.blur_sigma
                assert np.array_equal(result.image[~near], bg[~near]), entry["index"]
                audited += 1
        rate = duals / n
        assert 0.013 <= rate <= 0.028, rate


def test_criterion_6_augmentation_kernels(acceptance_log):
    with criterion(acceptance_log, 6, "kernel sums, fixed points, idempotence, ISO std, p=0.2 rate", 120.0):
        for length in (3, 5, 7, 9, 11, 21):
            for angle in np.linspace(0, 180, 13):
                k = motion_blur_kernel(length, angle)
                assert (k >= 0).all() and abs(k.sum() - 1) <= 1e-9
        for r in (1, 1.5, 2, 3, 4.2, 7):
            k = disk_kernel(r)
            assert (k >= 0).all() and abs(k.sum() - 1) <= 1e-9
        const = np.full((32, 32, 3), 173, np.uint8)
        assert np.array_equal(motion_blur(const, 9, 30), const)
        assert np.array_equal(defocus(const, 3), const)
        rng = np.random.default_rng(6)
        for _ in range(100):
            h, w = rng.integers(2, 40, 2)
            img = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
            once = autocontrast(img, 0.0)
            assert np.array_equal(autocontrast(once, 0.0), once)
        sigma_i = 0.05
        noisy = iso_noise(np.full((512, 512, 3), 128, np.uint8), color_shift=0.0, intensity=sigma_i, rng=1)
        std = noisy.astype(np.float64).std()
        assert abs(std - sigma_i * 255) <= 0.2 * sigma_i * 255, std
        spec = AugmentationSpec.default(0.2)
        counts = dict.fromkeys(KERNELS, 0)
        img = np.random.default_rng(0).integers(0, 256, (4, 4, 3), dtype=np.uint8)
        for seed in range(10_000):
            for kernel, _ in apply_spec(img, spec, seed)[1]:
                counts[kernel] += 1
        rates = {k: c / 10_000 for k, c in counts.items()}
        assert all(0.18 <= v <= 0.22 for v in rates.values()), rates


def test_criterion_7_latency_arithmetic(acceptance_log):
    images = synthetic_images(2, (320, 320))
    with criterion(acceptance_log, 7, "bench totals and FPS for both board rows", 5.0):
        r5 = bench(stub_backend(default=((), StageTimings(3.1, 153.5, 0.5))), images, 5, 50).to_dict()
        assert abs(r5["total_ms"] - 157.1) <= 1e-9 and r5["fps"] == 6.365
        r4 = bench(stub_backend(default=((), StageTimings(9.8, 597.5, 2.1))), images, 5, 50).to_dict()
        assert abs(r4["total_ms"] - 609.4) <= 1e-9
        assert abs(r4["fps_exact"] - 1.640) <= 0.001 and abs(r4["fps"] - 1.640) <= 0.001 + 1e-12


def test_criterion_8_pipeline_liveness(acceptance_log):
    images = synthetic_images(100, (32, 32))
    with criterion(acceptance_log, 8, "slow backend, 100 frames, conservation and ordering", 30.0):
        sink = CollectingSink()
        s = run_pipeline(images, stub_backend(delay_s=0.01, fail_on=[17, 60]), sink,
                         PipelineOptions(capacity=1, frame_interval_s=0.002))
        assert s.frames_in == 100
        assert s.processed + s.dropped + s.failed == 100, s.to_dict()
        assert s.dropped > 0
        seqs = [m.seq for _, m in sink.pairs]
        assert seqs == sorted(seqs) and all(f.seq == m.seq for f, m in sink.pairs)


def test_criterion_9_non_reproducibility_statement(acceptance_log):
    with criterion(acceptance_log, 9, "README states absolute detector mAP is not reproduced", 1.0):
        text = README.read_text(encoding="utf-8").lower()
        assert "not reproduced" in text
        assert "trained detector weights" in text
