"""Command-line front end.

Subcommands: build-index, classify, segment, label-regions, propose-vocab,
evaluate, export-overlay. Every run writes one manifest (command, config
snapshot, input hashes, output paths, wall clock) next to the output file,
or to stderr when results go to stdout.

Exit codes: 0 success, 2 usage error, 3 data or format error, 4 provider
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .candidates import ALL_STAGES, FilterConfig, POS_ADJECTIVE, POS_NOUN, POS_VERB
from .classifier import ClassifierConfig, TemplateSet, classify
from .dense import (
    GridSpec,
    ImagePatchSource,
    Region,
    RegionSet,
    label_regions,
    propose_vocabulary,
    segment_dense,
)
from .errors import ProviderError, RetagError
from .metrics import (
    EmbeddingKernel,
    ExactMatchKernel,
    evaluate_classification,
    evaluate_segmentation,
    read_classification_csv,
    read_label_map,
    write_label_map,
)
from .provider import parse_provider_spec
from .store import (
    DEFAULT_TOPK,
    IvfParams,
    KIND_FLAT,
    KIND_IVF,
    build_index,
    load_caption_file,
    load_index,
    save_index,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_PROVIDER = 4

_POS_BY_NAME = {
    "noun": POS_NOUN,
    "adjective": POS_ADJECTIVE,
    "adj": POS_ADJECTIVE,
    "verb": POS_VERB,
}


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_inputs(paths) -> dict[str, str]:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_file():
            out[str(p)] = _sha256(p)
        elif p.is_dir():
            for child in sorted(p.rglob("*")):
                if child.is_file():
                    out[str(child)] = _sha256(child)
    return out


def _emit(result: dict, manifest: dict, output: str | None) -> None:
    payload = json.dumps(result, indent=2, sort_keys=True) + "\n"
    manifest_doc = json.dumps(manifest, sort_keys=True) + "\n"
    if output:
        Path(output).write_text(payload, encoding="utf-8")
        Path(str(output) + ".manifest.json").write_text(manifest_doc, encoding="utf-8")
    else:
        sys.stdout.write(payload)
        sys.stderr.write(manifest_doc)


def _filter_config(args) -> FilterConfig:
    kwargs = {}
    if getattr(args, "pos_keep", None):
        tags = frozenset(_POS_BY_NAME[t.strip().lower()] for t in args.pos_keep.split(","))
        kwargs["keep_pos_tags"] = tags
    if getattr(args, "min_occurrences", None) is not None:
        kwargs["min_occurrences"] = args.min_occurrences
    if getattr(args, "no_filtering", False):
        kwargs["stages"] = frozenset()
    else:
        kwargs["stages"] = ALL_STAGES
    return FilterConfig(**kwargs)


def _classifier_config(args) -> ClassifierConfig:
    templates = TemplateSet()
    if getattr(args, "templates", None):
        templates = TemplateSet.from_file(args.templates)
    return ClassifierConfig(
        alpha=args.alpha,
        k=args.topk,
        templates=templates,
        filter=_filter_config(args),
    )


def _grid_spec(args) -> GridSpec:
    scales = tuple(int(s) for s in args.scales.split(","))
    return GridSpec(scales=scales)


def _config_snapshot(args) -> dict:
    snap = {}
    for key in ("alpha", "topk", "scales", "templates", "pos_keep", "index", "provider", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            snap[key] = value
    return snap


def _manifest(args, command: str, inputs, outputs, started: float) -> dict:
    return {
        "command": command,
        "version": __version__,
        "config": _config_snapshot(args),
        "input_hashes": _hash_inputs(inputs),
        "outputs": [str(o) for o in outputs if o],
        "wall_clock_s": round(time.monotonic() - started, 6),
    }


def _add_common(parser: argparse.ArgumentParser, *, provider=True, index=True,
                scoring=True, output=True) -> None:
    if index:
        parser.add_argument("--index", required=True, help="index directory")
    if provider:
        parser.add_argument(
            "--provider",
            default="mock:0",
            help="CMD | tcp:HOST:PORT | mock:SEED (default mock:0)",
        )
    if scoring:
        parser.add_argument("--alpha", type=float, default=0.7)
        parser.add_argument("--topk", type=int, default=DEFAULT_TOPK)
        parser.add_argument("--templates", help="file with one prompt template per line")
        parser.add_argument("--pos-keep", help="comma list of noun,adjective,verb")
        parser.add_argument("--min-occurrences", type=int, default=None)
        parser.add_argument(
            "--no-filtering",
            action="store_true",
            help="disable all candidate-extraction stages (ablation)",
        )
    if output:
        parser.add_argument("--output", help="write the JSON result here instead of stdout")
        parser.add_argument("--json", action="store_true", help="JSON output (always on)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retag", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-index", help="build an index from a VFEB + captions pair")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--kind", choices=[KIND_FLAT, KIND_IVF], default=KIND_FLAT)
    p.add_argument("--n-lists", type=int, default=64)
    p.add_argument("--n-probe", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--index", required=True, help="output index directory")
    p.add_argument("--output", help="write the JSON summary here instead of stdout")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("classify", help="label one or more images")
    _add_common(p)
    p.add_argument("images", nargs="+", help="image files")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("segment", help="dense per-cell labeling of an image")
    _add_common(p)
    p.add_argument("image", help="image file")
    p.add_argument("--scales", default="2,4,8")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("label-regions", help="label mask/bbox proposals from a JSONL file")
    _add_common(p)
    p.add_argument("regions", help="JSON-lines region file")
    p.add_argument("--image", help="image file (needed when regions lack embeddings)")
    p.set_defaults(func=cmd_label_regions)

    p = sub.add_parser("propose-vocab", help="candidate names for an external segmenter")
    _add_common(p)
    p.add_argument("image", help="image file")
    p.set_defaults(func=cmd_propose_vocab)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--task", choices=["classification", "segmentation"], required=True)
    p.add_argument("--pred", required=True, help="CSV file or directory of PNG+JSON pairs")
    p.add_argument("--gt", help="ground-truth directory (segmentation only)")
    p.add_argument("--kernel", default="exact", help="exact | mock:SEED | CMD | tcp:HOST:PORT")
    p.add_argument("--output", help="write the JSON report here instead of stdout")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-overlay", help="render a segmentation JSON as an indexed PNG")
    p.add_argument("segmentation", help="segmentation JSON with a 'cells' grid")
    p.add_argument("--width", type=int, help="upsample to this width")
    p.add_argument("--height", type=int, help="upsample to this height")
    p.add_argument("--output", required=True, help="output PNG path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_export_overlay)

    return parser


def cmd_build_index(args) -> int:
    started = time.monotonic()
    store = load_caption_file(args.embeddings, args.captions)
    if args.kind == KIND_IVF:
        index = build_index(
            store, KIND_IVF, IvfParams(n_lists=args.n_lists, n_probe=args.n_probe),
            seed=args.seed,
        )
    else:
        index = build_index(store, KIND_FLAT)
    save_index(index, args.index)
    result = {
        "index": str(args.index),
        "kind": index.kind,
        "records": len(store),
        "dim": store.dim,
        "renormalized": store.renormalized,
    }
    manifest = _manifest(args, "build-index", [args.embeddings, args.captions],
                         [args.index, args.output], started)
    _emit(result, manifest, args.output)
    return EXIT_OK


def cmd_classify(args) -> int:
    started = time.monotonic()
    index = load_index(args.index)
    provider = parse_provider_spec(args.provider)
    cfg = _classifier_config(args)
    cache: dict = {}

    def one(path: str) -> dict:
        emb = provider.embed_image(path)
        pred = classify(emb, index, cfg, provider, cache=cache)
        return {
            "image": str(path),
            "label": pred.top,
            "ranked": pred.to_dict()["ranked"],
            "retrieved_caption_ids": pred.retrieved_caption_ids,
        }

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(one, args.images))
    else:
        rows = [one(p) for p in args.images]
    result = {"predictions": rows}
    manifest = _manifest(args, "classify", list(args.images) + [args.index],
                         [args.output], started)
    _emit(result, manifest, args.output)
    return EXIT_OK


def cmd_segment(args) -> int:
    started = time.monotonic()
    index = load_index(args.index)
    provider = parse_provider_spec(args.provider)
    cfg = _classifier_config(args)
    spec = _grid_spec(args)
    source = ImagePatchSource(args.image, provider)
    seg = segment_dense(source, index, cfg, spec, provider)
    result = {
        "image": str(args.image),
        "map_cells": spec.map_cells,
        "cells": seg.to_dict()["cells"],
    }
    manifest = _manifest(args, "segment", [args.image, args.index], [args.output], started)
    _emit(result, manifest, args.output)
    return EXIT_OK


def _mask_bbox(mask_path) -> tuple[int, int, int, int]:
    from PIL import Image

    with Image.open(mask_path) as mask:
        box = mask.convert("L").point(lambda v: 255 if v else 0).getbbox()
    if box is None:
        raise RetagError(f"mask {mask_path} selects no pixels")
    return box


def _load_regions(path, image, provider) -> RegionSet:
    regions = []
    source = None
    base = Path(path).parent
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        row = json.loads(line)
        emb = row.get("embedding")
        embedding = np.asarray(emb, dtype=np.float32) if emb is not None else None
        bbox = tuple(row["bbox"]) if "bbox" in row else None
        mask_path = row.get("mask_path")
        if mask_path is not None and not Path(mask_path).is_absolute():
            mask_path = str(base / mask_path)
        if embedding is None:
            if bbox is None and mask_path is not None:
                bbox = _mask_bbox(mask_path)
            if image is None or bbox is None:
                raise RetagError(
                    f"region {row.get('id')} has no embedding; provide --image "
                    "and a bbox or mask_path"
                )
            if source is None:
                from PIL import Image

                source = Image.open(image).convert("RGB")
            import io

            crop = source.crop(bbox)
            buf = io.BytesIO()
            crop.save(buf, format="PNG")
            embedding = provider.embed_image(buf.getvalue())
        regions.append(
            Region(id=int(row["id"]), embedding=embedding, bbox=bbox,
                   mask_path=row.get("mask_path"))
        )
    return RegionSet(regions=regions)


def cmd_label_regions(args) -> int:
    started = time.monotonic()
    index = load_index(args.index)
    provider = parse_provider_spec(args.provider)
    cfg = _classifier_config(args)
    regions = _load_regions(args.regions, args.image, provider)
    labeled = label_regions(regions, index, cfg, provider)
    result = {
        "regions": [
            {"id": rid, "label": pred.top, "ranked": pred.to_dict()["ranked"]}
            for rid, pred in labeled
        ]
    }
    inputs = [args.regions, args.index] + ([args.image] if args.image else [])
    manifest = _manifest(args, "label-regions", inputs, [args.output], started)
    _emit(result, manifest, args.output)
    return EXIT_OK


def cmd_propose_vocab(args) -> int:
    started = time.monotonic()
    index = load_index(args.index)
    provider = parse_provider_spec(args.provider)
    cfg = _filter_config(args)
    emb = provider.embed_image(args.image)
    names = propose_vocabulary(emb, index, cfg, k=args.topk)
    result = {"image": str(args.image), "vocabulary": names}
    manifest = _manifest(args, "propose-vocab", [args.image, args.index],
                         [args.output], started)
    _emit(result, manifest, args.output)
    return EXIT_OK


def _kernel_from_spec(spec: str):
    if spec == "exact":
        return ExactMatchKernel()
    return EmbeddingKernel(parse_provider_spec(spec))


def cmd_evaluate(args) -> int:
    started = time.monotonic()
    kernel = _kernel_from_spec(args.kernel)
    if args.task == "classification":
        rows = read_classification_csv(args.pred)
        report = evaluate_classification([(p, g) for _, p, g in rows], kernel)
        inputs = [args.pred]
    else:
        if not args.gt:
            raise RetagError("--gt is required for segmentation evaluation")
        pred_dir = Path(args.pred)
        gt_dir = Path(args.gt)
        batch = []
        stems = sorted(p.stem for p in pred_dir.glob("*.png"))
        if not stems:
            raise RetagError(f"no PNG maps found in {pred_dir}")
        for stem in stems:
            pred = read_label_map(pred_dir / f"{stem}.png", pred_dir / f"{stem}.json")
            gt = read_label_map(gt_dir / f"{stem}.png", gt_dir / f"{stem}.json")
            batch.append((pred, gt))
        report = evaluate_segmentation(batch, kernel)
        inputs = [args.pred, args.gt]
    result = report.to_dict()
    manifest = _manifest(args, "evaluate", inputs, [args.output], started)
    _emit(result, manifest, args.output)
    return EXIT_OK


def cmd_export_overlay(args) -> int:
    started = time.monotonic()
    doc = json.loads(Path(args.segmentation).read_text(encoding="utf-8"))
    cells = doc.get("cells")
    if not isinstance(cells, list) or not cells:
        raise RetagError(f"{args.segmentation}: missing 'cells' grid")
    labels = np.array(cells, dtype=object)
    if args.width and args.height:
        from .dense import SegmentationMap

        seg = SegmentationMap(labels=[list(r) for r in cells])
        labels = seg.to_pixel_labels(args.width, args.height)
    table_path = Path(args.output).with_suffix(".json")
    write_label_map(labels, args.output, table_path)
    result = {"png": str(args.output), "table": str(table_path)}
    manifest = _manifest(args, "export-overlay", [args.segmentation],
                         [args.output, table_path], started)
    sys.stdout.write(json.dumps(result, indent=2, sort_keys=True) + "\n")
    sys.stderr.write(json.dumps(manifest, sort_keys=True) + "\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except RetagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
