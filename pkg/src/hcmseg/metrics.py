"""Evaluation metrics for binary concealed-object maps.

All per-image functions take a score map ``s`` with values in [0, 1] and a
ground-truth mask ``y`` (anything that casts to bool) of the same shape.

Conventions fixed here:

* beta^2 = 0.3 for every F-measure.
* Threshold sweeps use 256 levels ``k / 255`` and binarize with ``s > t``;
  fixed-threshold metrics (adaptive F, dice, IoU, BER) binarize with
  ``s >= t``.
* Empty ground truth: F-type scores are 1 when the binarized prediction is
  empty and 0 otherwise; BER counts an absent class's term as 1; dice and
  IoU of two empty sets are 1.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

BETA2 = 0.3
N_THRESHOLDS = 256
THRESHOLDS = np.arange(N_THRESHOLDS) / 255.0
EPS = np.spacing(1)


def _prepare(s, y) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y).astype(bool)
    if s.shape != y.shape:
        raise ValueError(f"score map {s.shape} and mask {y.shape} differ in size")
    return s, y


def mae(s, y) -> float:
    s, y = _prepare(s, y)
    return float(np.abs(s - y).mean())


def _f_from_counts(tp, n_pred, n_gt, beta2: float = BETA2):
    tp = np.asarray(tp, dtype=np.float64)
    n_pred = np.asarray(n_pred, dtype=np.float64)
    if n_gt == 0:
        return np.where(n_pred == 0, 1.0, 0.0)
    precision = np.divide(tp, n_pred, out=np.zeros_like(tp), where=n_pred > 0)
    recall = tp / n_gt
    denom = beta2 * precision + recall
    return np.divide((1 + beta2) * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)


def adaptive_threshold(s) -> float:
    return min(2.0 * float(np.mean(s)), 1.0)


def f_adaptive(s, y) -> float:
    s, y = _prepare(s, y)
    # an all-zero map has no foreground even though its threshold is 0
    binary = (s >= adaptive_threshold(s)) & (s > 0)
    return float(_f_from_counts(np.sum(binary & y), np.sum(binary), np.sum(y)))


def _counts_above(values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Number of entries of ``values`` strictly greater than each threshold."""
    ordered = np.sort(values)
    return ordered.size - np.searchsorted(ordered, thresholds, side="right")


def f_curve(s, y) -> np.ndarray:
    """F-measure at each of the 256 sweep thresholds."""
    s, y = _prepare(s, y)
    tp = _counts_above(s[y], THRESHOLDS)
    fp = _counts_above(s[~y], THRESHOLDS)
    return _f_from_counts(tp, tp + fp, int(y.sum()))


def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    r = (size - 1) / 2
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    k = np.exp(-(xx**2 + yy**2) / (2 * sigma**2))
    return k / k.sum()


def f_weighted(s, y, beta2: float = BETA2) -> float:
    """Weighted F-measure: errors spread to neighbours by a Gaussian (7x7, sigma 5)
    and background errors amplified with distance from the object."""
    s, y = _prepare(s, y)
    if not y.any():
        return 1.0 if not s.any() else 0.0
    error = np.abs(s - y)
    dist, (iy, ix) = ndimage.distance_transform_edt(~y, return_indices=True)
    # each background pixel inherits the error of its nearest foreground pixel
    error_t = error[iy, ix]
    error_t[y] = error[y]
    error_a = ndimage.convolve(error_t, _gaussian_kernel(), mode="constant", cval=0.0)
    min_e = np.where(y & (error_a < error), error_a, error)
    importance = np.where(y, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    ew = min_e * importance
    tpw = y.sum() - ew[y].sum()
    fpw = ew[~y].sum()
    recall = 1.0 - ew[y].mean()
    precision = tpw / (tpw + fpw + EPS)
    return float((1 + beta2) * recall * precision / (recall + beta2 * precision + EPS))


def f_measure(s, y, mode: str = "adaptive") -> float:
    if mode == "adaptive":
        return f_adaptive(s, y)
    if mode in ("max", "sweep-max"):
        return float(f_curve(s, y).max())
    if mode == "weighted":
        return f_weighted(s, y)
    raise ValueError(f"unknown F-measure mode {mode!r}")


def _alignment_from_counts(fg_fg, fg_bg, bg_fg, bg_bg, n_gt: int, n: int):
    """Enhanced alignment score of a binary map against a binary mask, from its
    confusion counts (prediction first, mask second)."""
    fg_fg, fg_bg, bg_fg, bg_bg = (np.asarray(c, dtype=np.float64) for c in (fg_fg, fg_bg, bg_fg, bg_bg))
    n_pred = fg_fg + fg_bg
    if n_gt == 0:
        return (n - n_pred) / n
    if n_gt == n:
        return n_pred / n
    mu_pred = n_pred / n
    mu_gt = n_gt / n
    total = np.zeros_like(fg_fg)
    for count, b, g in ((fg_fg, 1, 1), (fg_bg, 1, 0), (bg_fg, 0, 1), (bg_bg, 0, 0)):
        phi_b = b - mu_pred
        phi_g = g - mu_gt
        align = 2 * phi_b * phi_g / (phi_b**2 + phi_g**2 + EPS)
        total = total + count * (align + 1) ** 2 / 4
    return total / n


def enhanced_alignment(binary, y) -> float:
    binary, y = _prepare(binary, y)
    binary = binary.astype(bool)
    return float(
        _alignment_from_counts(
            np.sum(binary & y), np.sum(binary & ~y), np.sum(~binary & y), np.sum(~binary & ~y), int(y.sum()), y.size
        )
    )


def e_curve(s, y) -> np.ndarray:
    """E-measure at each of the 256 sweep thresholds."""
    s, y = _prepare(s, y)
    n_gt = int(y.sum())
    fg_fg = _counts_above(s[y], THRESHOLDS)
    fg_bg = _counts_above(s[~y], THRESHOLDS)
    bg_fg = n_gt - fg_fg
    bg_bg = (y.size - n_gt) - fg_bg
    return _alignment_from_counts(fg_fg, fg_bg, bg_fg, bg_bg, n_gt, y.size)


def e_measure(s, y, mode: str = "mean") -> float:
    curve = e_curve(s, y)
    if mode == "mean":
        return float(curve.mean())
    if mode == "max":
        return float(curve.max())
    raise ValueError(f"unknown E-measure mode {mode!r}")


def _std(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if x.size > 1 else 0.0


def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    mean = values.mean()
    return 2 * mean / (mean**2 + 1 + _std(values) + EPS)


def _ssim(s: np.ndarray, y: np.ndarray) -> float:
    n = s.size
    mx, my = s.mean(), y.mean()
    dof = max(n - 1, 1)
    var_x = ((s - mx) ** 2).sum() / dof
    var_y = ((y - my) ** 2).sum() / dof
    cov = ((s - mx) * (y - my)).sum() / dof
    alpha = 4 * mx * my * cov
    beta = (mx**2 + my**2) * (var_x + var_y)
    if alpha != 0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0 else 0.0


def _centroid(y: np.ndarray) -> Tuple[int, int]:
    h, w = y.shape
    if not y.any():
        return int(round(w / 2)), int(round(h / 2))
    rows, cols = np.nonzero(y)
    return int(np.round(cols.mean())) + 1, int(np.round(rows.mean())) + 1


def s_measure(s, y, alpha: float = 0.5) -> float:
    """Structure measure: ``alpha * object term + (1 - alpha) * region term``, clipped to [0, 1]."""
    s, y = _prepare(s, y)
    frac = y.mean()
    if frac == 0:
        return float(1 - s.mean())
    if frac == 1:
        return float(s.mean())

    obj = frac * _object_score(s[y]) + (1 - frac) * _object_score(1 - s[~y])

    h, w = y.shape
    cx, cy = _centroid(y)
    yf = y.astype(np.float64)
    region = 0.0
    for rows, cols in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                       (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        part_s, part_y = s[rows, cols], yf[rows, cols]
        if part_s.size == 0:
            continue
        region += part_s.size / (h * w) * _ssim(part_s, part_y)

    return float(np.clip(alpha * obj + (1 - alpha) * region, 0.0, 1.0))


def dice_iou(s, y, threshold: float = 0.5) -> Tuple[float, float]:
    s, y = _prepare(s, y)
    b = s >= threshold
    inter = np.sum(b & y)
    total = np.sum(b) + np.sum(y)
    union = np.sum(b | y)
    if total == 0:
        return 1.0, 1.0
    return float(2 * inter / total), float(inter / union)


def ber(s, y, threshold: float = 0.5) -> float:
    """Balanced error rate in percent."""
    s, y = _prepare(s, y)
    b = s >= threshold
    tp, fn = np.sum(b & y), np.sum(~b & y)
    tn, fp = np.sum(~b & ~y), np.sum(b & ~y)
    pos = tp / (tp + fn) if tp + fn else 1.0
    neg = tn / (tn + fp) if tn + fp else 1.0
    return float(100 * (1 - 0.5 * (pos + neg)))


@dataclass
class ImageScores:
    mae: float
    f_adp: float
    f_w: float
    s_alpha: float
    dice: float
    iou: float
    ber: float
    f_curve: np.ndarray = field(repr=False)
    e_curve: np.ndarray = field(repr=False)

    @property
    def f_max(self) -> float:
        return float(self.f_curve.max())

    @property
    def e_mean(self) -> float:
        return float(self.e_curve.mean())

    @property
    def e_max(self) -> float:
        return float(self.e_curve.max())


def score_image(s, y) -> ImageScores:
    s, y = _prepare(s, y)
    d, i = dice_iou(s, y)
    return ImageScores(
        mae=mae(s, y),
        f_adp=f_adaptive(s, y),
        f_w=f_weighted(s, y),
        s_alpha=s_measure(s, y),
        dice=d,
        iou=i,
        ber=ber(s, y),
        f_curve=f_curve(s, y),
        e_curve=e_curve(s, y),
    )


@dataclass
class MetricsReport:
    mae: float
    f_adp: float
    f_w: float
    f_max: float
    e_mean: float
    e_max: float
    s_alpha: float
    mdice: float
    miou: float
    ber: float
    n_images: int

    def to_dict(self) -> Dict[str, Union[float, int]]:
        return asdict(self)


# column header, field name, number format
COLUMNS = (
    ("M", "mae", "{:.4f}"),
    ("F_beta", "f_adp", "{:.4f}"),
    ("F_beta^w", "f_w", "{:.4f}"),
    ("F_beta^max", "f_max", "{:.4f}"),
    ("E_phi", "e_mean", "{:.4f}"),
    ("E_phi^max", "e_max", "{:.4f}"),
    ("S_alpha", "s_alpha", "{:.4f}"),
    ("mDice", "mdice", "{:.4f}"),
    ("mIoU", "miou", "{:.4f}"),
    ("BER", "ber", "{:.2f}"),
    ("n", "n_images", "{:d}"),
)


def aggregate(scores: Iterable[ImageScores]) -> MetricsReport:
    """Dataset means. Max-mode F and E take the maximum of the mean threshold curve."""
    scores = list(scores)
    if not scores:
        raise ValueError("cannot aggregate an empty set of image scores")

    def mean(name: str) -> float:
        return float(np.mean([getattr(sc, name) for sc in scores]))

    f_mean_curve = np.mean([sc.f_curve for sc in scores], axis=0)
    e_mean_curve = np.mean([sc.e_curve for sc in scores], axis=0)
    return MetricsReport(
        mae=mean("mae"),
        f_adp=mean("f_adp"),
        f_w=mean("f_w"),
        f_max=float(f_mean_curve.max()),
        e_mean=float(e_mean_curve.mean()),
        e_max=float(e_mean_curve.max()),
        s_alpha=mean("s_alpha"),
        mdice=mean("dice"),
        miou=mean("iou"),
        ber=mean("ber"),
        n_images=len(scores),
    )


def format_table(report: MetricsReport, name: str = "") -> str:
    headers = ["Dataset"] + [c[0] for c in COLUMNS]
    values = [name or "-"] + [fmt.format(getattr(report, key)) for _, key, fmt in COLUMNS]
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    line = lambda cells: "  ".join(c.rjust(wd) for c, wd in zip(cells, widths))
    return "\n".join([line(headers), line(values)])


def write_report(report: MetricsReport, out_dir: Union[str, Path], name: str = "",
                 per_image: Sequence[Tuple[str, ImageScores]] = ()) -> List[Path]:
    """Write ``metrics.txt`` (table), ``metrics.json`` and, if given, ``per_image.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "metrics.txt", out / "metrics.json"]
    written[0].write_text(format_table(report, name) + "\n")
    written[1].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    if per_image:
        cols = [f.name for f in fields(ImageScores) if not f.name.endswith("curve")]
        lines = [",".join(["stem"] + cols + ["f_max", "e_mean", "e_max"])]
        for stem, sc in per_image:
            vals = [getattr(sc, c) for c in cols] + [sc.f_max, sc.e_mean, sc.e_max]
            lines.append(",".join([stem] + [f"{v:.6f}" for v in vals]))
        path = out / "per_image.csv"
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written
