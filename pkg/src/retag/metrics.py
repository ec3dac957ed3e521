"""Evaluation metrics for open-vocabulary classification and segmentation.

Classification: cluster accuracy (many-to-one group assignment), semantic
similarity (kernel on label strings), and word-set IoU. Segmentation: hard
and soft Jaccard and recall, plus two remapped Jaccard variants that first
project predicted labels onto the ground-truth label set, either by textual
similarity or by pixel co-occurrence.

Labels are standardized (lowercase, singular) on entry, so "Cats" and "cat"
count as one class. Ground-truth cells carrying the ignore label are
excluded from every numerator and denominator.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .candidates import standardize
from .embeddings import cosine_similarity
from .errors import DimensionMismatchError, ParseError
from .provider import ROLE_SENTENCE

IGNORE_LABEL = "__ignore__"

MODE_HARD = "hard"
MODE_SOFT = "soft"


class ExactMatchKernel:
    """1 iff the two labels match after standardization, else 0."""

    def __call__(self, a: str, b: str) -> float:
        return 1.0 if standardize(a) == standardize(b) else 0.0


class EmbeddingKernel:
    """Cosine similarity of sentence embeddings, cached per string."""

    def __init__(self, provider, role: str = ROLE_SENTENCE):
        self.provider = provider
        self.role = role
        self._cache: dict[str, np.ndarray] = {}

    def _embed(self, text: str) -> np.ndarray:
        vec = self._cache.get(text)
        if vec is None:
            vec = self.provider.embed_texts(self.role, [text])[0]
            self._cache[text] = vec
        return vec

    def __call__(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        return cosine_similarity(self._embed(a), self._embed(b))


def semantic_similarity(pred: str, gt: str, kernel) -> float:
    """Kernel similarity between a predicted and a ground-truth label."""
    if not pred or not gt:
        raise ParseError("labels must be non-empty")
    return float(kernel(pred, gt))


def semantic_iou(pred: str, gt: str) -> float:
    """Word-set intersection over union after standardization."""
    pred_words = {standardize(w) for w in pred.split()}
    gt_words = {standardize(w) for w in gt.split()}
    pred_words.discard("")
    gt_words.discard("")
    if not pred_words or not gt_words:
        raise ParseError("labels must contain at least one word")
    return len(pred_words & gt_words) / len(pred_words | gt_words)


def cluster_accuracy(pairs) -> float:
    """Many-to-one accuracy.

    Samples are grouped by exact predicted string; each group is assigned
    its most frequent ground-truth label (ties toward the lexicographically
    smaller one) and accuracy is the fraction of samples whose ground truth
    matches their group's assignment.
    """
    pairs = [(standardize(p), standardize(g)) for p, g in pairs]
    if not pairs:
        raise ParseError("empty batch")
    groups: dict[str, dict[str, int]] = {}
    for pred, gt in pairs:
        groups.setdefault(pred, {}).setdefault(gt, 0)
        groups[pred][gt] += 1
    assignment = {
        pred: min(counts, key=lambda g: (-counts[g], g)) for pred, counts in groups.items()
    }
    correct = sum(1 for pred, gt in pairs if assignment[pred] == gt)
    return correct / len(pairs)


def _as_label_map(obj) -> np.ndarray:
    arr = np.array(obj, dtype=object)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"label map must be 2-D, got shape {arr.shape}")
    out = np.empty(arr.shape, dtype=object)
    for idx, label in np.ndenumerate(arr):
        label = str(label)
        out[idx] = label if label == IGNORE_LABEL else standardize(label)
    return out


def _normalize_batch(batch) -> list[tuple[np.ndarray, np.ndarray]]:
    items = []
    for pred, gt in batch:
        p = _as_label_map(pred)
        g = _as_label_map(gt)
        if p.shape != g.shape:
            raise DimensionMismatchError(f"map shapes differ: {p.shape} vs {g.shape}")
        items.append((p, g))
    if not items:
        raise ParseError("empty batch")
    return items


def _valid_mask(gt: np.ndarray, ignore_label: str) -> np.ndarray:
    return gt != ignore_label


def segmentation_jaccard(batch, mode: str = MODE_HARD, kernel=None,
                         ignore_label: str = IGNORE_LABEL):
    """Mean Jaccard index over ground-truth classes, pooled across the batch.

    Hard mode counts exact matches. Soft mode credits each ground-truth
    pixel with kernel(pred, class) in the intersection, while the union adds
    only exact-match extra pixels; with the exact kernel the two modes
    coincide.
    """
    items = _normalize_batch(batch)
    if mode == MODE_SOFT and kernel is None:
        raise ParseError("soft mode requires a kernel")
    # Pool pixel counts across the batch: the union |pred=c or gt=c| also
    # includes false positives from items where c never appears in gt.
    hard_inter: dict[str, int] = {}
    soft_inter: dict[str, float] = {}
    gt_count: dict[str, int] = {}
    pred_count: dict[str, int] = {}
    for pred, gt in items:
        valid = _valid_mask(gt, ignore_label)
        for p in pred[valid].ravel():
            pred_count[str(p)] = pred_count.get(str(p), 0) + 1
        for c in sorted({str(c) for c in gt[valid].ravel()}):
            gt_mask = valid & (gt == c)
            gt_count[c] = gt_count.get(c, 0) + int(gt_mask.sum())
            hard_inter[c] = hard_inter.get(c, 0) + int((pred[gt_mask] == c).sum())
            if mode == MODE_SOFT:
                credit = sum(float(kernel(str(p), c)) for p in pred[gt_mask].ravel())
                soft_inter[c] = soft_inter.get(c, 0.0) + credit
    scores = {}
    for c in sorted(gt_count):
        extra = pred_count.get(c, 0) - hard_inter.get(c, 0)
        union = gt_count[c] + extra
        inter = soft_inter.get(c, 0.0) if mode == MODE_SOFT else float(hard_inter.get(c, 0))
        scores[c] = inter / union if union else 0.0
    mean = sum(scores.values()) / len(scores)
    return mean, scores


def segmentation_recall(batch, mode: str = MODE_HARD, kernel=None,
                        ignore_label: str = IGNORE_LABEL, per_image: bool = True):
    """Fraction of ground-truth classes recovered somewhere in their region.

    Hard mode needs one exactly matching pixel per class; soft mode scores
    each class with the best kernel similarity over its region. Averaged per
    image by default; ``per_image=False`` pools classes across the batch.
    """
    items = _normalize_batch(batch)
    if mode == MODE_SOFT and kernel is None:
        raise ParseError("soft mode requires a kernel")

    def class_score(pred, gt, valid, c) -> float:
        region = pred[valid & (gt == c)].ravel()
        if region.size == 0:
            return 0.0
        if mode == MODE_HARD:
            return 1.0 if np.any(region == c) else 0.0
        return max(float(kernel(str(p), c)) for p in region)

    if per_image:
        per_item = []
        for pred, gt in items:
            valid = _valid_mask(gt, ignore_label)
            classes = sorted({str(c) for c in gt[valid].ravel()})
            if not classes:
                continue
            per_item.append(
                sum(class_score(pred, gt, valid, c) for c in classes) / len(classes)
            )
        if not per_item:
            raise ParseError("no ground-truth classes in batch")
        return sum(per_item) / len(per_item)

    best: dict[str, float] = {}
    for pred, gt in items:
        valid = _valid_mask(gt, ignore_label)
        for c in sorted({str(c) for c in gt[valid].ravel()}):
            score = class_score(pred, gt, valid, c)
            best[c] = max(best.get(c, 0.0), score)
    if not best:
        raise ParseError("no ground-truth classes in batch")
    return sum(best.values()) / len(best)


def remap_nearest(pred_map, gt_label_list, kernel) -> np.ndarray:
    """Replace each predicted label by its most similar ground-truth label.

    Ties on equal similarity go to the lexicographically smaller target.
    """
    gt_labels = sorted({standardize(g) for g in gt_label_list})
    if not gt_labels:
        raise ParseError("ground-truth label list must be non-empty")
    pred = _as_label_map(pred_map)
    mapping = {}
    for label in sorted({str(p) for p in pred.ravel()}):
        mapping[label] = min(gt_labels, key=lambda g: (-float(kernel(label, g)), g))
    out = np.empty(pred.shape, dtype=object)
    for idx, label in np.ndenumerate(pred):
        out[idx] = mapping[str(label)]
    return out


def remap_overlap(pred_map, gt_map, ignore_label: str = IGNORE_LABEL) -> np.ndarray:
    """Replace each predicted label by its max pixel co-occurrence gt label.

    A predicted label that already names a ground-truth class stays put, so
    projection can only merge finer predictions toward the annotation. Ties
    go to the lexicographically smaller target; labels that only overlap
    ignore pixels are left unchanged.
    """
    pred = _as_label_map(pred_map)
    gt = _as_label_map(gt_map)
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"map shapes differ: {pred.shape} vs {gt.shape}")
    valid = _valid_mask(gt, ignore_label)
    gt_labels = {str(c) for c in gt[valid].ravel()}
    cooc: dict[str, dict[str, int]] = {}
    for p, g in zip(pred[valid].ravel(), gt[valid].ravel()):
        cooc.setdefault(str(p), {}).setdefault(str(g), 0)
        cooc[str(p)][str(g)] += 1
    mapping = {}
    for label in sorted({str(p) for p in pred.ravel()}):
        if label in gt_labels:
            mapping[label] = label
            continue
        counts = cooc.get(label)
        if not counts:
            mapping[label] = label
            continue
        mapping[label] = min(counts, key=lambda g: (-counts[g], g))
    out = np.empty(pred.shape, dtype=object)
    for idx, label in np.ndenumerate(pred):
        out[idx] = mapping[str(label)]
    return out


@dataclass
class MetricReport:
    metrics: dict[str, float]
    per_class: dict[str, dict[str, float]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"metrics": self.metrics, "per_class": self.per_class, "counts": self.counts}


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def evaluate_classification(pairs, kernel=None) -> MetricReport:
    """Cluster accuracy, mean semantic similarity, and mean word-set IoU."""
    pairs = [(str(p), str(g)) for p, g in pairs]
    if not pairs:
        raise ParseError("empty batch")
    kernel = kernel or ExactMatchKernel()
    acc = cluster_accuracy(pairs)
    sims = [semantic_similarity(p, g, kernel) for p, g in pairs]
    ious = [semantic_iou(p, g) for p, g in pairs]

    per_class: dict[str, dict[str, float]] = {}
    for (pred, gt), sim, iou in zip(pairs, sims, ious):
        c = standardize(gt)
        bucket = per_class.setdefault(
            c, {"count": 0, "semantic_similarity": 0.0, "semantic_iou": 0.0}
        )
        bucket["count"] += 1
        bucket["semantic_similarity"] += sim
        bucket["semantic_iou"] += iou
    for bucket in per_class.values():
        n = bucket.pop("count")
        bucket["semantic_similarity"] /= n
        bucket["semantic_iou"] /= n
        bucket["n"] = n

    return MetricReport(
        metrics={
            "cluster_accuracy": acc,
            "semantic_similarity": _clamp01(float(np.mean(sims))),
            "semantic_iou": float(np.mean(ious)),
        },
        per_class=per_class,
        counts={"samples": len(pairs)},
    )


def evaluate_segmentation(batch, kernel=None, ignore_label: str = IGNORE_LABEL) -> MetricReport:
    """The six segmentation metrics over aligned (pred, gt) map pairs."""
    items = _normalize_batch(batch)
    kernel = kernel or ExactMatchKernel()

    hji, per_class = segmentation_jaccard(items, MODE_HARD, ignore_label=ignore_label)
    sji, _ = segmentation_jaccard(items, MODE_SOFT, kernel=kernel, ignore_label=ignore_label)
    hr = segmentation_recall(items, MODE_HARD, ignore_label=ignore_label)
    sr = segmentation_recall(items, MODE_SOFT, kernel=kernel, ignore_label=ignore_label)

    nearest_items = []
    overlap_items = []
    for pred, gt in items:
        valid = _valid_mask(gt, ignore_label)
        gt_labels = sorted({str(c) for c in gt[valid].ravel()})
        if gt_labels:
            nearest_items.append((remap_nearest(pred, gt_labels, kernel), gt))
        else:
            nearest_items.append((pred, gt))
        overlap_items.append((remap_overlap(pred, gt, ignore_label), gt))
    nji, _ = segmentation_jaccard(nearest_items, MODE_HARD, ignore_label=ignore_label)
    oji, _ = segmentation_jaccard(overlap_items, MODE_HARD, ignore_label=ignore_label)

    pixels = sum(int(_valid_mask(gt, ignore_label).sum()) for _, gt in items)
    return MetricReport(
        metrics={"hji": hji, "sji": _clamp01(sji), "nji": nji, "oji": oji,
                 "hr": hr, "sr": _clamp01(sr)},
        per_class={"hji": per_class},
        counts={"images": len(items), "valid_pixels": pixels},
    )


def read_classification_csv(path) -> list[tuple[str, str, str]]:
    """Rows of (id, prediction, ground_truth) from the CSV interchange file."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            required = {"id", "prediction", "ground_truth"}
            if reader.fieldnames is None or not required.issubset(reader.fieldnames):
                raise ParseError(
                    f"{path}: header must contain id,prediction,ground_truth"
                )
            rows = [(row["id"], row["prediction"], row["ground_truth"]) for row in reader]
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return rows


def read_label_map(png_path, table_path, ignore_label: str = IGNORE_LABEL) -> np.ndarray:
    """Decode an indexed PNG plus its palette-index-to-label JSON table.

    Indices missing from the table become the ignore label.
    """
    from PIL import Image

    try:
        table = json.loads(Path(table_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read label table {table_path}: {exc}") from exc
    lookup = {int(k): str(v) for k, v in table.items()}
    try:
        with Image.open(png_path) as img:
            if img.mode == "P":
                indices = np.array(img)
            elif img.mode in ("L", "I", "I;16", "1"):
                # Grayscale index maps: the pixel value is the label index.
                indices = np.array(img.convert("I"))
            else:
                raise ParseError(
                    f"{png_path}: label maps must be palette or grayscale, got {img.mode}"
                )
    except OSError as exc:
        raise ParseError(f"cannot read label map {png_path}: {exc}") from exc
    out = np.empty(indices.shape, dtype=object)
    for idx, value in np.ndenumerate(indices):
        out[idx] = lookup.get(int(value), ignore_label)
    return out


def write_label_map(labels, png_path, table_path) -> None:
    """Encode a 2-D string label map as an indexed PNG plus a JSON table."""
    from PIL import Image

    arr = np.array(labels, dtype=object)
    names = sorted({str(v) for v in arr.ravel()})
    if len(names) > 256:
        raise ParseError("more than 256 distinct labels cannot be palette-encoded")
    index_of = {n: i for i, n in enumerate(names)}
    indices = np.empty(arr.shape, dtype=np.uint8)
    for idx, value in np.ndenumerate(arr):
        indices[idx] = index_of[str(value)]
    img = Image.fromarray(indices, mode="P")
    rng = np.random.Generator(np.random.PCG64(7))
    palette = rng.integers(0, 256, size=(256, 3), dtype=np.uint8)
    img.putpalette(palette.ravel().tolist())
    img.save(png_path)
    Path(table_path).write_text(
        json.dumps({str(i): n for i, n in enumerate(names)}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
