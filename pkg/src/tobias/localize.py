"""Object localization from the feature volume of a random network.

The pipeline sums the final feature maps over channels, keeps
cells above the map's mean, retains the largest 4-connected region and
reports its bounding box in image pixels.
"""
from __future__ import annotations

import json
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from threadpoolctl import threadpool_limits

from tobias.errors import EmptyForegroundError, TobiasError
from tobias.images.codecs import load_image, to_float
from tobias.images.manifest import ManifestRecord, resolve_image
from tobias.images.transforms import IMAGENET_MEAN, IMAGENET_STD, to_batch
from tobias.net.builder import Network, extract_features

IOU_THRESHOLD = 0.5


class BBox(NamedTuple):
    """Inclusive pixel box; x runs along columns, y along rows."""

    x1: int
    y1: int
    x2: int
    y2: int

    @property
    def area(self) -> int:
        return (self.x2 - self.x1 + 1) * (self.y2 - self.y1 + 1)


def whole_image_box(height: int, width: int) -> BBox:
    return BBox(0, 0, width - 1, height - 1)


def aggregate(q: np.ndarray) -> np.ndarray:
    """Channel sum of an ``(h, w, d)`` feature volume, accumulated in float64."""
    q = np.asarray(q)
    return q.sum(axis=-1, dtype=np.float64)


def cam_map(q: np.ndarray, fc_weights: np.ndarray, class_index: int) -> np.ndarray:
    """Class activation map: channel sum weighted by one classifier row."""
    fc_weights = np.asarray(fc_weights)
    if not 0 <= class_index < fc_weights.shape[0]:
        raise IndexError(f"class index {class_index} out of range for {fc_weights.shape[0]} classes")
    w = fc_weights[class_index].astype(np.float64)
    return np.asarray(q, dtype=np.float64) @ w


def mean_mask(a: np.ndarray) -> np.ndarray:
    """Cells strictly above the map's mean; a constant map gives an empty mask."""
    a = np.asarray(a, dtype=np.float64)
    # the rounded mean of a constant map can land just below its value
    return a > np.clip(a.mean(), a.min(), a.max())


def label_components(m: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected labelling by flood fill; labels follow row-major first-pixel order."""
    m = np.asarray(m, dtype=bool)
    h, w = m.shape
    labels = np.zeros((h, w), dtype=np.int32)
    count = 0
    for i in range(h):
        for j in range(w):
            if not m[i, j] or labels[i, j]:
                continue
            count += 1
            labels[i, j] = count
            queue = deque([(i, j)])
            while queue:
                y, x = queue.popleft()
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx < w and m[ny, nx] and not labels[ny, nx]:
                        labels[ny, nx] = count
                        queue.append((ny, nx))
    return labels, count


def largest_component(m: np.ndarray) -> np.ndarray:
    """Keep the largest 4-connected region; ties go to the earliest in row-major order."""
    labels, count = label_components(m)
    if count == 0:
        raise EmptyForegroundError("mask has no foreground cells")
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    keep = int(np.argmax(sizes)) + 1  # argmax returns the first (smallest label) maximum
    return labels == keep


def mask_to_bbox(m: np.ndarray, feat_hw=None, img_hw=None) -> BBox:
    """Tight box around set cells, scaled from the feature grid to image pixels.

    Cell ``(i, j)`` covers rows ``floor(i*H/h) .. ceil((i+1)*H/h) - 1``
    (and likewise for columns), clamped to the image.
    """
    m = np.asarray(m, dtype=bool)
    h, w = feat_hw if feat_hw is not None else m.shape
    H, W = img_hw if img_hw is not None else (h, w)
    rows, cols = np.nonzero(m)
    if rows.size == 0:
        raise EmptyForegroundError("mask has no foreground cells")
    sy, sx = H / h, W / w
    y1 = math.floor(rows.min() * sy)
    y2 = min(H, math.ceil((rows.max() + 1) * sy)) - 1
    x1 = math.floor(cols.min() * sx)
    x2 = min(W, math.ceil((cols.max() + 1) * sx)) - 1
    return BBox(int(x1), int(y1), int(x2), int(y2))


def iou(b1, b2) -> float:
    b1, b2 = BBox(*b1), BBox(*b2)
    iw = min(b1.x2, b2.x2) - max(b1.x1, b2.x1) + 1
    ih = min(b1.y2, b2.y2) - max(b1.y1, b2.y1) + 1
    inter = max(iw, 0) * max(ih, 0)
    return inter / (b1.area + b2.area - inter)


# ---------------------------------------------------------------- per image

@dataclass
class Localization:
    box: BBox | None
    heat: np.ndarray
    mask: np.ndarray
    fallback: bool = False


def localize_image(net: Network, image: np.ndarray, fallback_whole_image=True,
                   mean=IMAGENET_MEAN, std=IMAGENET_STD) -> Localization:
    """Predict one box for an HWC image in its original resolution.

    The image is resized to the network's input size; the mask grid is
    mapped straight back onto the original pixel grid.
    """
    img = to_float(image)
    H, W = img.shape[:2]
    batch = to_batch([img], size=net.spec.input_size, mean=mean, std=std)
    q = extract_features(net, batch)[0]
    a = aggregate(q)
    m = mean_mask(a)
    try:
        region = largest_component(m)
    except EmptyForegroundError:
        if not fallback_whole_image:
            return Localization(None, a, m)
        return Localization(whole_image_box(H, W), a, m, fallback=True)
    return Localization(mask_to_bbox(region, a.shape, (H, W)), a, region)


# ---------------------------------------------------------------- datasets

@dataclass
class ImageResult:
    index: int
    image: str
    pred: BBox | None = None
    gt: BBox | None = None
    iou: float = 0.0
    whole_iou: float = 0.0
    fallback: bool = False
    error: str | None = None

    def to_json(self) -> str:
        d = {"index": self.index, "image": self.image,
             "pred": None if self.pred is None else list(self.pred),
             "gt": None if self.gt is None else list(self.gt),
             "iou": round(self.iou, 6), "whole_iou": round(self.whole_iou, 6),
             "fallback": self.fallback}
        if self.error is not None:
            d["error"] = self.error
        return json.dumps(d)


@dataclass
class LocalizationReport:
    results: list[ImageResult] = field(default_factory=list)

    @property
    def evaluated(self) -> list[ImageResult]:
        return [r for r in self.results if r.error is None]

    @property
    def errors(self) -> list[ImageResult]:
        return [r for r in self.results if r.error is not None]

    @property
    def accuracy(self) -> float:
        ok = self.evaluated
        return sum(r.iou >= IOU_THRESHOLD for r in ok) / len(ok) if ok else 0.0

    @property
    def whole_image_accuracy(self) -> float:
        ok = self.evaluated
        return sum(r.whole_iou >= IOU_THRESHOLD for r in ok) / len(ok) if ok else 0.0

    @property
    def mean_iou(self) -> float:
        ok = self.evaluated
        return float(np.mean([r.iou for r in ok])) if ok else 0.0

    def summary(self) -> dict:
        return {"images": len(self.results), "evaluated": len(self.evaluated),
                "errors": len(self.errors), "accuracy": round(self.accuracy, 6),
                "mean_iou": round(self.mean_iou, 6),
                "whole_image_accuracy": round(self.whole_image_accuracy, 6)}

    def to_jsonl(self) -> str:
        lines = [r.to_json() for r in self.results]
        lines.append(json.dumps({"summary": self.summary()}))
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        rows = [f"{'index':>6}  {'pred box':<22} {'gt box':<22} {'iou':>7}"]
        for r in self.results:
            if r.error is not None:
                rows.append(f"{r.index:>6}  error: {r.error}")
                continue
            pred = "-" if r.pred is None else ",".join(map(str, r.pred))
            gt = ",".join(map(str, r.gt))
            rows.append(f"{r.index:>6}  {pred:<22} {gt:<22} {r.iou:7.4f}")
        s = self.summary()
        rows.append("")
        rows.append(f"accuracy (IoU>=0.5): {s['accuracy']:.4f}  mean IoU: {s['mean_iou']:.4f}  "
                    f"whole-image baseline: {s['whole_image_accuracy']:.4f}  "
                    f"evaluated {s['evaluated']}/{s['images']}")
        return "\n".join(rows) + "\n"


def _evaluate_one(net, index, record: ManifestRecord, image, root, fallback, mean, std):
    res = ImageResult(index, record.image)
    try:
        if record.box is None:
            raise TobiasError("record has no ground-truth box")
        if image is None:
            image = load_image(resolve_image(record, root))
        H, W = image.shape[:2]
        gt = BBox(*record.box)
        if gt.x2 >= W or gt.y2 >= H:
            raise TobiasError(f"ground-truth box {tuple(gt)} exceeds image size {W}x{H}")
        loc = localize_image(net, image, fallback, mean, std)
        res.gt = gt
        res.pred = loc.box
        res.fallback = loc.fallback
        res.iou = 0.0 if loc.box is None else iou(loc.box, gt)
        res.whole_iou = iou(whole_image_box(H, W), gt)
    except TobiasError as exc:
        res.error = str(exc)
    return res


def evaluate_localization(net: Network, records, fallback_whole_image=True, images=None,
                          root=None, workers=1, mean=IMAGENET_MEAN, std=IMAGENET_STD
                          ) -> LocalizationReport:
    """IoU@0.5 accuracy over a manifest.

    ``images`` optionally supplies pre-decoded images aligned with ``records``.
    Each image is its own batch, and BLAS runs single-threaded, so the report
    is identical for any number of ``workers``.
    """
    records = list(records)
    images = list(images) if images is not None else [None] * len(records)

    def job(i):
        return _evaluate_one(net, i, records[i], images[i], root, fallback_whole_image, mean, std)

    with threadpool_limits(limits=1):
        if workers <= 1:
            results = [job(i) for i in range(len(records))]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(job, range(len(records))))
    results.sort(key=lambda r: r.index)
    return LocalizationReport(results)
