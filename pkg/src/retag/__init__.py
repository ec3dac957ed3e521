"""Training-free open-vocabulary image labeling via caption retrieval.

An image (or image region, or grid cell) is matched against a caption
database; candidate class names are parsed out of the retrieved captions
and scored by blending image-to-name and caption-centroid-to-name
similarities. The package also ships the evaluation-metric suite for the
open-vocabulary setting and a dense multi-scale segmenter built on the
same engine.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .candidates import CandidateSet, FilterConfig, clean_tokens, extract_candidates, filter_candidates, standardize
from .classifier import (
    ClassifierConfig,
    FixedVocabulary,
    Prediction,
    ScoredCandidate,
    TemplateSet,
    build_fixed_vocabulary,
    classify,
    classify_fixed_vocabulary,
    ensemble_text_embedding,
    score_candidates,
    softmax,
)
from .dense import (
    DenseFeatureMap,
    GridSpec,
    ImagePatchSource,
    Patch,
    PatchPlan,
    Region,
    RegionSet,
    SegmentationMap,
    SyntheticPatchSource,
    accumulate_features,
    label_regions,
    plan_patches,
    propose_vocabulary,
    segment_dense,
)
from .embeddings import cosine_similarity, l2_normalize, mean_embedding
from .metrics import (
    EmbeddingKernel,
    ExactMatchKernel,
    IGNORE_LABEL,
    MetricReport,
    cluster_accuracy,
    evaluate_classification,
    evaluate_segmentation,
    remap_nearest,
    remap_overlap,
    segmentation_jaccard,
    segmentation_recall,
    semantic_iou,
    semantic_similarity,
)
from .provider import MockProvider, ProviderClient, parse_provider_spec
from .store import (
    CaptionIndex,
    CaptionRecord,
    CaptionStore,
    IvfParams,
    RetrievalResult,
    build_index,
    load_caption_file,
    load_index,
    retrieve_topk,
    save_index,
    store_from_texts,
    write_embedding_file,
)

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "CandidateSet", "FilterConfig", "clean_tokens", "extract_candidates",
    "filter_candidates", "standardize",
    "ClassifierConfig", "FixedVocabulary", "Prediction", "ScoredCandidate",
    "TemplateSet", "build_fixed_vocabulary", "classify",
    "classify_fixed_vocabulary", "ensemble_text_embedding",
    "score_candidates", "softmax",
    "DenseFeatureMap", "GridSpec", "ImagePatchSource", "Patch", "PatchPlan",
    "Region", "RegionSet", "SegmentationMap", "SyntheticPatchSource",
    "accumulate_features", "label_regions", "plan_patches",
    "propose_vocabulary", "segment_dense",
    "cosine_similarity", "l2_normalize", "mean_embedding",
    "EmbeddingKernel", "ExactMatchKernel", "IGNORE_LABEL", "MetricReport",
    "cluster_accuracy", "evaluate_classification", "evaluate_segmentation",
    "remap_nearest", "remap_overlap", "segmentation_jaccard",
    "segmentation_recall", "semantic_iou", "semantic_similarity",
    "MockProvider", "ProviderClient", "parse_provider_spec",
    "CaptionIndex", "CaptionRecord", "CaptionStore", "IvfParams",
    "RetrievalResult", "build_index", "load_caption_file", "load_index",
    "retrieve_topk", "save_index", "store_from_texts",
    "write_embedding_file",
]
