"""Dataset scanning, preprocessing and batching.

Expected layout: ``<root>/<split>/images/<stem>.<ext>`` paired with
``<root>/<split>/masks/<stem>.png`` by stem.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

logger = logging.getLogger(__name__)

IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp"}
MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)
MASK_THRESHOLD = 127.5


class DataError(Exception):
    """Raised for unusable dataset layouts or files."""


@dataclass(frozen=True)
class SampleRecord:
    image: Path
    mask: Path
    split: str
    dataset: str

    @property
    def stem(self) -> str:
        return self.image.stem


@dataclass
class DatasetManifest:
    records: List[SampleRecord]
    warnings: List[str] = field(default_factory=list)
    resolutions: Counter = field(default_factory=Counter)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def count(self) -> int:
        return len(self.records)


def _files_by_stem(directory: Path) -> dict:
    if not directory.is_dir():
        return {}
    found = {}
    for p in sorted(directory.iterdir()):
        if p.is_file() and p.suffix.lower() in IMAGE_EXTS:
            found.setdefault(p.stem, p)
    return found


def scan(root: Union[str, Path], split: str = "", dataset: Optional[str] = None) -> DatasetManifest:
    """Pair images with masks by stem under ``root/split``. Ordering is lexicographic by stem."""
    base = Path(root) / split if split else Path(root)
    if not base.is_dir():
        raise DataError(f"dataset directory {base} does not exist")
    images = _files_by_stem(base / "images")
    masks = _files_by_stem(base / "masks")
    common = sorted(images.keys() & masks.keys())
    if not common:
        raise DataError(f"no image/mask pairs with matching stems under {base}")
    name = dataset or Path(root).name
    warnings = [f"image without mask: {images[s].name}" for s in sorted(images.keys() - masks.keys())]
    warnings += [f"mask without image: {masks[s].name}" for s in sorted(masks.keys() - images.keys())]
    for w in warnings:
        logger.warning(w)
    records = [SampleRecord(images[s], masks[s], split, name) for s in common]
    resolutions = Counter()
    for r in records:
        with Image.open(r.image) as im:
            resolutions[im.size] += 1
    return DatasetManifest(records, warnings, resolutions)


def load_mask(path: Union[str, Path]) -> np.ndarray:
    """Binary mask (bool) at native resolution."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32)
    return arr > MASK_THRESHOLD


def load_image(path: Union[str, Path], size: int = 352) -> torch.Tensor:
    """RGB image -> normalized 3 x size x size float tensor."""
    with Image.open(path) as im:
        rgb = im.convert("RGB").resize((size, size), Image.BILINEAR)
    arr = (np.asarray(rgb, dtype=np.float32) / 255.0 - MEAN) / STD
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def preprocess(record: SampleRecord, size: int = 352) -> Tuple[torch.Tensor, torch.Tensor]:
    """Image and mask at ``size`` x ``size``; mask nearest-resized and binarized."""
    try:
        image = load_image(record.image, size)
        with Image.open(record.mask) as im:
            m = im.convert("L").resize((size, size), Image.NEAREST)
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode {record.stem}: {exc}") from exc
    mask = torch.from_numpy((np.asarray(m, dtype=np.float32) > MASK_THRESHOLD).astype(np.float32))
    return image, mask.unsqueeze(0)


class Batch(NamedTuple):
    images: torch.Tensor
    masks: torch.Tensor
    records: List[SampleRecord]


def batch_order(n: int, batch_size: int, train: bool, seed: int = 0) -> List[List[int]]:
    """Index groups for one pass. Training shuffles with ``seed`` and drops the last partial batch."""
    idx = np.random.default_rng(seed).permutation(n) if train else np.arange(n)
    groups = [idx[i : i + batch_size].tolist() for i in range(0, n, batch_size)]
    if train and groups and len(groups[-1]) < batch_size:
        groups.pop()
    return groups


def make_batches(
    manifest: DatasetManifest,
    batch_size: int,
    seed: int = 0,
    train: bool = True,
    size: int = 352,
    flip: bool = False,
) -> Iterator[Batch]:
    """Deterministic batch iterator; undecodable samples are logged and skipped."""
    rng = np.random.default_rng([seed, 1])
    for group in batch_order(len(manifest), batch_size, train, seed):
        images, masks, recs = [], [], []
        for i in group:
            rec = manifest.records[i]
            try:
                image, mask = preprocess(rec, size)
            except DataError as exc:
                logger.warning("skipping sample: %s", exc)
                continue
            if train and flip and rng.random() < 0.5:
                image, mask = image.flip(-1), mask.flip(-1)
            images.append(image)
            masks.append(mask)
            recs.append(rec)
        if images:
            yield Batch(torch.stack(images), torch.stack(masks), recs)
