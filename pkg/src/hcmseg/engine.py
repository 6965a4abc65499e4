"""Training loop, learning-rate schedule, checkpoints and evaluation."""

import copy
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from . import metrics
from .config import ConfigError, TrainConfig
from .data import DatasetManifest, SampleRecord, load_image, load_mask, make_batches
from .losses import total_loss
from .model import HCM

logger = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1
LOG_FIELDS = ("epoch", "step", "lr", "total", "level1", "level2", "level3", "level4", "level5")


class TrainingAborted(RuntimeError):
    """The loss became non-finite; the offending batch has been dumped."""


def lr_at(epoch: int, lr0: float = 1e-4, period: int = 80, factor: float = 10.0) -> float:
    """Step schedule: ``lr0`` divided by ``factor`` every ``period`` epochs."""
    return lr0 / factor ** (epoch // period)


def build_model(config: TrainConfig) -> HCM:
    return HCM(
        width=config.width,
        use_isc=config.use_isc,
        use_csc=config.use_csc,
        use_rrd=config.use_rrd,
        backbone_weights=config.backbone_weights,
    )


@dataclass
class Checkpoint:
    model_state: Dict[str, torch.Tensor]
    optimizer_state: dict
    epoch: int  # completed epochs
    config: TrainConfig
    history: List[Dict[str, float]] = field(default_factory=list)
    rng_state: Optional[torch.Tensor] = None

    def model(self) -> HCM:
        """Rebuild the network in evaluation mode."""
        # pretrained weights are already part of model_state
        net = build_model(self.config.replace(backbone_weights=None))
        net.load_state_dict(self.model_state)
        return net.eval()


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": CHECKPOINT_SCHEMA,
        "model": ckpt.model_state,
        "optimizer": ckpt.optimizer_state,
        "epoch": ckpt.epoch,
        "config": ckpt.config.to_dict(),
        "history": ckpt.history,
        "rng_state": ckpt.rng_state,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint {path} does not exist")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("schema_version")
    if version != CHECKPOINT_SCHEMA:
        raise ConfigError(f"checkpoint {path} has schema version {version!r}, expected {CHECKPOINT_SCHEMA}")
    cfg = payload["config"]
    cfg["betas"] = tuple(cfg["betas"])
    return Checkpoint(
        model_state=payload["model"],
        optimizer_state=payload["optimizer"],
        epoch=payload["epoch"],
        config=TrainConfig(**cfg),
        history=payload["history"],
        rng_state=payload.get("rng_state"),
    )


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def _append_log(path: Path, rows: Sequence[Dict[str, float]]) -> None:
    new = not path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        if new:
            writer.writeheader()
        writer.writerows(rows)


def train(
    config: TrainConfig,
    manifest: DatasetManifest,
    resume: Optional[Checkpoint] = None,
    max_steps: Optional[int] = None,
) -> Checkpoint:
    """Adam training on ``manifest``; writes ``last.pt``, ``train_log.csv`` and ``loss_curve.png``
    to ``config.checkpoint_dir``.

    ``resume`` continues from a saved checkpoint (weights, optimizer state,
    epoch counter and history). ``max_steps`` stops early after that many
    optimizer steps in this call.
    """
    if len(manifest) == 0:
        raise ValueError("training manifest is empty")
    torch.manual_seed(config.seed)
    model = build_model(config)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.lr0, betas=config.betas, weight_decay=config.weight_decay
    )
    start_epoch, history = 0, []
    if resume is not None:
        model.load_state_dict(resume.model_state)
        optimizer.load_state_dict(resume.optimizer_state)
        start_epoch, history = resume.epoch, list(resume.history)
        if resume.rng_state is not None:
            torch.set_rng_state(resume.rng_state)

    out_dir = Path(config.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.csv"
    if resume is None and log_path.exists():
        log_path.unlink()

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint(
            model_state={k: v.detach().clone() for k, v in model.state_dict().items()},
            optimizer_state=copy.deepcopy(optimizer.state_dict()),
            epoch=epoch,
            config=config,
            history=list(history),
            rng_state=torch.get_rng_state(),
        )

    step = len(history)
    steps_this_call = 0
    epoch = start_epoch
    ckpt = snapshot(start_epoch)
    for epoch in range(start_epoch, config.epochs):
        lr = lr_at(epoch, config.lr0, config.lr_decay_period, config.lr_decay_factor)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        rows = []
        batches = make_batches(
            manifest, config.batch_size, seed=_epoch_seed(config.seed, epoch), train=True,
            size=config.input_size, flip=config.flip,
        )
        for index, batch in enumerate(batches):
            preds = model(batch.images)
            losses = total_loss(preds, batch.masks)
            if not torch.isfinite(losses.total):
                dump = out_dir / "nonfinite_batch.pt"
                torch.save({"epoch": epoch, "batch_index": index, "images": batch.images,
                            "masks": batch.masks, "stems": [r.stem for r in batch.records]}, dump)
                raise TrainingAborted(
                    f"non-finite loss at epoch {epoch}, batch index {index}; batch dumped to {dump}"
                )
            optimizer.zero_grad(set_to_none=True)
            losses.total.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()

            total, *levels = losses.as_floats()
            row = {"epoch": epoch, "step": step, "lr": lr, "total": total}
            row.update({f"level{i + 1}": v for i, v in enumerate(levels)})
            rows.append(row)
            history.append(row)
            logger.info("epoch %d step %d lr %.2e loss %.5f", epoch, step, lr, total)
            step += 1
            steps_this_call += 1
            if max_steps is not None and steps_this_call >= max_steps:
                break
        _append_log(log_path, rows)
        finished = epoch + 1
        stop = max_steps is not None and steps_this_call >= max_steps
        if (config.checkpoint_every and finished % config.checkpoint_every == 0) or stop or finished == config.epochs:
            ckpt = snapshot(finished)
            save_checkpoint(ckpt, out_dir / "last.pt")
        if stop:
            break

    if config.plot and history:
        from .plotting import plot_loss_curve

        plot_loss_curve(history, out_dir / "loss_curve.png")
    return ckpt


def _as_model(source: Union[HCM, Checkpoint]) -> HCM:
    if isinstance(source, Checkpoint):
        return source.model()
    return source.eval()


@torch.no_grad()
def predict_scores(model: HCM, image: torch.Tensor, size: Tuple[int, int]) -> np.ndarray:
    """``sigmoid(p1)`` for one preprocessed 3 x S x S image, bilinearly resized to ``size`` (h, w)."""
    p1 = model(image.unsqueeze(0)).p1
    s = torch.sigmoid(F.interpolate(p1, size=size, mode="bilinear", align_corners=False))
    return s[0, 0].clamp(0, 1).double().numpy()


def score_records(
    source: Union[HCM, Checkpoint], records: Sequence[SampleRecord], input_size: int = 352
) -> Iterator[Tuple[str, metrics.ImageScores]]:
    model = _as_model(source)
    for rec in records:
        gt = load_mask(rec.mask)
        s = predict_scores(model, load_image(rec.image, input_size), gt.shape)
        yield rec.stem, metrics.score_image(s, gt)


def evaluate_detailed(
    source: Union[HCM, Checkpoint], manifest: DatasetManifest, input_size: Optional[int] = None
) -> Tuple[metrics.MetricsReport, List[Tuple[str, metrics.ImageScores]]]:
    if input_size is None:
        input_size = source.config.input_size if isinstance(source, Checkpoint) else 352
    per_image = list(score_records(source, manifest.records, input_size))
    return metrics.aggregate(sc for _, sc in per_image), per_image


def evaluate(
    source: Union[HCM, Checkpoint], manifest: DatasetManifest, input_size: Optional[int] = None
) -> metrics.MetricsReport:
    """Score ``sigmoid(p1)`` at each mask's native resolution and average over the dataset."""
    return evaluate_detailed(source, manifest, input_size)[0]


def predict_to_png(
    source: Union[HCM, Checkpoint], images: Sequence[Path], out_dir: Union[str, Path], input_size: int = 352
) -> List[Path]:
    """Write ``round(255 * sigmoid(p1))`` as 8-bit grayscale PNGs at each image's native size."""
    from PIL import Image

    model = _as_model(source)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in images:
        with Image.open(path) as im:
            w, h = im.size
        s = predict_scores(model, load_image(path, input_size), (h, w))
        target = out / f"{Path(path).stem}.png"
        Image.fromarray(np.round(255 * s).astype(np.uint8), mode="L").save(target)
        written.append(target)
    return written
