"""Dense labeling without a segmentation model.

The image is covered with sliding patches at several scales, shifted by half
a cell so neighboring patches overlap. Patch embeddings are averaged into
every cell of a fixed grid whose center they contain, giving each cell a
context-aware local embedding that goes through the same
retrieve-extract-score pipeline as whole images. Region labeling (for
external mask proposals) and vocabulary proposal (for external
open-vocabulary segmenters) reuse the classifier directly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import ClassifierConfig, Prediction, classify
from .candidates import FilterConfig, extract_candidates
from .embeddings import l2_normalize
from .errors import (
    EmptyRegionsError,
    ImageTooSmallError,
    LengthMismatchError,
    NoCandidatesError,
)
from .store import CaptionIndex, retrieve_topk

DEFAULT_SCALES = (2, 4, 8)


@dataclass(frozen=True)
class GridSpec:
    """Patch scales and the derived output grid size (2x the finest scale)."""

    scales: tuple[int, ...] = DEFAULT_SCALES

    def __post_init__(self):
        scales = tuple(sorted(set(int(s) for s in self.scales)))
        if not scales or scales[0] < 1:
            raise ValueError("scales must be positive integers")
        object.__setattr__(self, "scales", scales)

    @property
    def map_cells(self) -> int:
        return 2 * max(self.scales)


@dataclass(frozen=True)
class Patch:
    scale: int
    x0: int
    y0: int
    x1: int
    y1: int

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1


@dataclass
class PatchPlan:
    width: int
    height: int
    spec: GridSpec
    patches: list[Patch]

    def __len__(self) -> int:
        return len(self.patches)


def plan_patches(width: int, height: int, spec: GridSpec | None = None,
                 half_stride: bool = True) -> PatchPlan:
    """Sliding patches per scale, half-cell stride, all fully in bounds.

    Order is deterministic: scale-major, then row-major. For a square image
    a scale ``n`` contributes (2n-1)^2 patches; ``half_stride=False``
    degenerates to the plain non-overlapping n x n tiling.
    """
    spec = spec or GridSpec()
    if width < spec.map_cells or height < spec.map_cells:
        raise ImageTooSmallError(
            f"image {width}x{height} is smaller than the {spec.map_cells}-cell grid"
        )
    patches: list[Patch] = []
    for scale in spec.scales:
        cell_w = width / scale
        cell_h = height / scale
        steps = 2 * scale - 1 if half_stride else scale
        div = 2 * scale if half_stride else scale
        for row in range(steps):
            y0 = row * height / div
            for col in range(steps):
                x0 = col * width / div
                patches.append(
                    Patch(
                        scale=scale,
                        x0=int(round(x0)),
                        y0=int(round(y0)),
                        x1=min(width, int(round(x0 + cell_w))),
                        y1=min(height, int(round(y0 + cell_h))),
                    )
                )
    return PatchPlan(width=width, height=height, spec=spec, patches=patches)


def cell_centers(plan: PatchPlan) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates of cell centers: (xs per column, ys per row)."""
    m = plan.spec.map_cells
    xs = (np.arange(m) + 0.5) * plan.width / m
    ys = (np.arange(m) + 0.5) * plan.height / m
    return xs, ys


@dataclass
class DenseFeatureMap:
    cells: np.ndarray  # (m, m, dim) float32, unit rows
    counts: np.ndarray  # (m, m) int64, coverage per cell center

    @property
    def map_cells(self) -> int:
        return int(self.cells.shape[0])


def accumulate_features(plan: PatchPlan, patch_embeddings) -> DenseFeatureMap:
    """Average each patch embedding into the cells whose center it contains.

    The per-cell sum divides by the coverage count, then normalizes so the
    cell vector can query the caption index directly.
    """
    arr = np.asarray(patch_embeddings, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] != len(plan.patches):
        raise LengthMismatchError(
            f"expected {len(plan.patches)} patch embeddings, got shape {arr.shape}"
        )
    m = plan.spec.map_cells
    dim = arr.shape[1]
    xs, ys = cell_centers(plan)
    sums = np.zeros((m, m, dim), dtype=np.float64)
    counts = np.zeros((m, m), dtype=np.int64)
    for patch, emb in zip(plan.patches, arr):
        cols = np.nonzero((patch.x0 <= xs) & (xs < patch.x1))[0]
        rows = np.nonzero((patch.y0 <= ys) & (ys < patch.y1))[0]
        if cols.size == 0 or rows.size == 0:
            continue
        sums[np.ix_(rows, cols)] += emb.astype(np.float64)
        counts[np.ix_(rows, cols)] += 1
    if np.any(counts == 0):
        raise LengthMismatchError("a cell center is covered by no patch")
    means = sums / counts[:, :, None]
    cells = np.empty((m, m, dim), dtype=np.float32)
    for r in range(m):
        for c in range(m):
            cells[r, c] = l2_normalize(means[r, c].astype(np.float32))
    return DenseFeatureMap(cells=cells, counts=counts)


@dataclass
class SegmentationMap:
    labels: list[list[str]]  # map_cells x map_cells
    predictions: list[list[Prediction]] | None = None

    @property
    def map_cells(self) -> int:
        return len(self.labels)

    def to_grid(self) -> np.ndarray:
        return np.array(self.labels, dtype=object)

    def to_pixel_labels(self, width: int, height: int) -> np.ndarray:
        """Nearest-cell upsampling to pixel resolution."""
        m = self.map_cells
        rows = np.minimum((np.arange(height) * m) // height, m - 1)
        cols = np.minimum((np.arange(width) * m) // width, m - 1)
        grid = self.to_grid()
        return grid[np.ix_(rows, cols)]

    def to_dict(self) -> dict:
        return {"cells": [list(row) for row in self.labels]}


class ImagePatchSource:
    """Crops patches out of an image file and embeds them via a provider."""

    def __init__(self, path, provider):
        from PIL import Image

        self.path = Path(path)
        self.provider = provider
        with Image.open(self.path) as img:
            self.width, self.height = img.size
            self._image = img.convert("RGB")

    def embed_patches(self, patches) -> np.ndarray:
        out = []
        for p in patches:
            crop = self._image.crop((p.x0, p.y0, p.x1, p.y1))
            buf = io.BytesIO()
            crop.save(buf, format="PNG")
            out.append(self.provider.embed_image(buf.getvalue()))
        return np.stack(out)


class SyntheticPatchSource:
    """Patch source backed by a function, for fixtures and tests."""

    def __init__(self, width: int, height: int, fn):
        self.width = width
        self.height = height
        self._fn = fn

    def embed_patches(self, patches) -> np.ndarray:
        return np.stack([self._fn(p) for p in patches])


def segment_dense(
    patch_source,
    index: CaptionIndex,
    cfg: ClassifierConfig | None = None,
    spec: GridSpec | None = None,
    provider=None,
    keep_predictions: bool = False,
) -> SegmentationMap:
    """Per-cell classification over the accumulated dense feature map."""
    cfg = cfg or ClassifierConfig()
    spec = spec or GridSpec()
    plan = plan_patches(patch_source.width, patch_source.height, spec)
    embeddings = patch_source.embed_patches(plan.patches)
    fmap = accumulate_features(plan, embeddings)

    m = spec.map_cells
    cache: dict = {}
    labels = [["" for _ in range(m)] for _ in range(m)]
    preds: list[list[Prediction]] | None = (
        [[None for _ in range(m)] for _ in range(m)] if keep_predictions else None
    )
    for r in range(m):
        for c in range(m):
            pred = classify(fmap.cells[r, c], index, cfg, provider, cache=cache)
            labels[r][c] = pred.top
            if preds is not None:
                preds[r][c] = pred
    return SegmentationMap(labels=labels, predictions=preds)


@dataclass
class Region:
    id: int
    embedding: np.ndarray | None = None
    bbox: tuple[int, int, int, int] | None = None
    mask_path: str | None = None


@dataclass
class RegionSet:
    regions: list[Region] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.regions)


def label_regions(
    regions: RegionSet,
    index: CaptionIndex,
    cfg: ClassifierConfig | None = None,
    provider=None,
) -> list[tuple[int, Prediction]]:
    """Classify each region embedding independently, preserving order."""
    if len(regions) == 0:
        raise EmptyRegionsError("no regions to label")
    cfg = cfg or ClassifierConfig()
    cache: dict = {}
    out = []
    for region in regions.regions:
        if region.embedding is None:
            raise EmptyRegionsError(f"region {region.id} has no embedding")
        pred = classify(region.embedding, index, cfg, provider, cache=cache)
        out.append((region.id, pred))
    return out


def propose_vocabulary(
    image_emb,
    index: CaptionIndex,
    filter_cfg: FilterConfig | None = None,
    k: int = 10,
) -> list[str]:
    """Candidate names for hand-off to an external open-vocabulary model.

    No scoring happens here; names come back ordered by descending
    occurrence count, then alphabetically.
    """
    retrieval = retrieve_topk(index, image_emb, k)
    candidates = extract_candidates(retrieval.texts, filter_cfg or FilterConfig())
    if not candidates.entries:
        raise NoCandidatesError("no candidate names survive extraction")
    return candidates.names
