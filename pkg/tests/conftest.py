import time
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from hcmseg.config import TrainConfig

# criterion number -> (title, passed); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, ok = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {title}")


def random_instances(n=200, shape=(8, 8), seed=0):
    """Score/mask pairs covering quantized scores (threshold ties), empty and full masks."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        s = rng.random(shape)
        if k % 2:
            s = np.round(s * 255) / 255
        if k % 7 == 3:
            s = (s > 0.5).astype(float)
        rate = rng.uniform(0.1, 0.9)
        y = rng.random(shape) < rate
        if k % 50 == 10:
            y[:] = False
        if k % 50 == 20:
            y[:] = True
        out.append((s, y))
    return out


def disc_sample(size=(160, 128), seed=0):
    """Noisy RGB image with a tinted disc and its mask."""
    rng = np.random.default_rng(seed)
    w, h = size
    yy, xx = np.mgrid[:h, :w]
    cx, cy = rng.uniform(0.35 * w, 0.65 * w), rng.uniform(0.35 * h, 0.65 * h)
    r = rng.uniform(0.15, 0.3) * min(w, h)
    mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
    img = rng.normal(110, 25, (h, w, 3))
    img[mask] += np.array([40, 10, -20])
    return np.clip(img, 0, 255).astype(np.uint8), mask


def make_dataset(root: Path, n=3, split="train", size=(160, 128), seed=0, mask_ext=".png"):
    (root / split / "images").mkdir(parents=True, exist_ok=True)
    (root / split / "masks").mkdir(parents=True, exist_ok=True)
    for i in range(n):
        img, mask = disc_sample(size, seed + i)
        Image.fromarray(img).save(root / split / "images" / f"s{i:02d}.jpg")
        Image.fromarray((mask * 255).astype(np.uint8)).save(root / split / "masks" / f"s{i:02d}{mask_ext}")
    return root


@pytest.fixture
def dataset(tmp_path):
    return make_dataset(tmp_path / "data")


def small_config(tmp_path, **kw):
    base = dict(batch_size=1, epochs=1, input_size=64, checkpoint_dir=str(tmp_path / "ck"),
                checkpoint_every=0, plot=False)
    base.update(kw)
    return TrainConfig(**base)


OVERFIT_STEPS = 200


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory):
    """One image + mask, 200 Adam steps at the default learning rate; shared by several tests."""
    from hcmseg.data import scan
    from hcmseg.engine import evaluate, train

    root = make_dataset(tmp_path_factory.mktemp("overfit"), n=1)
    manifest = scan(root, "train")
    cfg = TrainConfig(batch_size=1, epochs=OVERFIT_STEPS, lr_decay_period=OVERFIT_STEPS, input_size=256,
                      checkpoint_dir=str(root / "ck"), checkpoint_every=0, seed=0)
    t0 = time.perf_counter()
    ckpt = train(cfg, manifest)
    elapsed = time.perf_counter() - t0
    report = evaluate(ckpt, manifest)
    return {"checkpoint": ckpt, "manifest": manifest, "report": report, "seconds": elapsed, "root": root}

