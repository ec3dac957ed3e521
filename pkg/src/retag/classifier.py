"""Retrieval-augmented open-vocabulary classification.

Pipeline per image: retrieve the top-k captions for the image embedding,
extract candidate names from their texts, embed each candidate through the
prompt templates, then blend an image-to-candidate score with a
centroid-to-candidate score. Softmax runs across the candidate set once per
modality and the final score is a convex mix of the two distributions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .candidates import FilterConfig, clean_tokens, extract_candidates, standardize
from .embeddings import cosine_similarity, l2_normalize, mean_embedding
from .errors import (
    DimensionMismatchError,
    EmptyCandidatesError,
    NoCandidatesError,
)
from .provider import ROLE_JOINT_TEXT
from .store import CaptionIndex, RetrievalResult, retrieve_topk

DEFAULT_ALPHA = 0.7
DEFAULT_TOPK = 10
DEFAULT_TEMPLATE = "a photo of a {}"


@dataclass(frozen=True)
class TemplateSet:
    """Prompt templates, each with exactly one '{}' placeholder."""

    templates: tuple[str, ...] = (DEFAULT_TEMPLATE,)

    def __post_init__(self):
        if not self.templates:
            raise ValueError("TemplateSet needs at least one template")
        for t in self.templates:
            if t.count("{}") != 1:
                raise ValueError(f"template must contain exactly one '{{}}': {t!r}")

    def fill(self, name: str) -> list[str]:
        return [t.format(name) for t in self.templates]

    @classmethod
    def from_file(cls, path) -> "TemplateSet":
        lines = [
            line.strip()
            for line in open(path, encoding="utf-8")
            if line.strip() and not line.strip().startswith("#")
        ]
        return cls(templates=tuple(lines))


@dataclass(frozen=True)
class ClassifierConfig:
    alpha: float = DEFAULT_ALPHA
    k: int = DEFAULT_TOPK
    templates: TemplateSet = field(default_factory=TemplateSet)
    filter: FilterConfig = field(default_factory=FilterConfig)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class ScoredCandidate:
    name: str
    visual_sim: float  # cosine(image, candidate)
    text_sim: float  # cosine(caption centroid, candidate)
    score: float  # alpha * softmax_v + (1 - alpha) * softmax_t


@dataclass
class Prediction:
    ranked: list[ScoredCandidate]
    retrieved_caption_ids: list[int]

    @property
    def top(self) -> str:
        return self.ranked[0].name

    def to_dict(self) -> dict:
        return {
            "ranked": [
                {
                    "name": c.name,
                    "visual_sim": c.visual_sim,
                    "text_sim": c.text_sim,
                    "score": c.score,
                }
                for c in self.ranked
            ],
            "retrieved_caption_ids": list(self.retrieved_caption_ids),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass
class FixedVocabulary:
    """A closed label list with one template-ensembled embedding per name."""

    names: list[str]
    embeddings: np.ndarray

    def __post_init__(self):
        if not self.names:
            raise ValueError("vocabulary must be non-empty")
        if len(set(self.names)) != len(self.names):
            raise ValueError("vocabulary names must be distinct")
        if self.embeddings.shape[0] != len(self.names):
            raise DimensionMismatchError("one embedding per name required")


def softmax(values) -> np.ndarray:
    """Numerically stable softmax over a 1-D array."""
    v = np.asarray(values, dtype=np.float64)
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def ensemble_text_embedding(candidate: str, templates: TemplateSet, provider) -> np.ndarray:
    """Mean embedding of the candidate under every template, unit-normalized."""
    prompts = templates.fill(candidate)
    rows = provider.embed_texts(ROLE_JOINT_TEXT, prompts)
    return l2_normalize(mean_embedding(list(rows)))


def score_candidates(image_emb, candidate_embs, centroid, alpha: float = DEFAULT_ALPHA):
    """Blend per-candidate visual and textual similarities.

    Returns a list of (visual_sim, text_sim, score) triples aligned with the
    input candidates. Softmax is applied across the candidate set separately
    for the visual and the textual vector, so each distribution sums to one.
    """
    candidate_embs = list(candidate_embs)
    if not candidate_embs:
        raise EmptyCandidatesError("no candidates to score")
    s_v = np.array([cosine_similarity(image_emb, c) for c in candidate_embs])
    s_t = np.array([cosine_similarity(centroid, c) for c in candidate_embs])
    blended = alpha * softmax(s_v) + (1.0 - alpha) * softmax(s_t)
    return [
        (float(s_v[i]), float(s_t[i]), float(blended[i]))
        for i in range(len(candidate_embs))
    ]


def _rank(names, image_emb, centroid, alpha, templates, provider, cache):
    embs = []
    for name in names:
        key = (name, templates.templates)
        emb = cache.get(key) if cache is not None else None
        if emb is None:
            emb = ensemble_text_embedding(name, templates, provider)
            if cache is not None:
                cache[key] = emb
        embs.append(emb)
    triples = score_candidates(image_emb, embs, centroid, alpha)
    scored = [
        ScoredCandidate(name=n, visual_sim=v, text_sim=t, score=s)
        for n, (v, t, s) in zip(names, triples)
    ]
    scored.sort(key=lambda c: (-c.score, c.name))
    return scored


def classify(
    image_emb,
    index: CaptionIndex,
    cfg: ClassifierConfig | None = None,
    provider=None,
    cache: dict | None = None,
    retrieval: RetrievalResult | None = None,
) -> Prediction:
    """Retrieve, extract, embed, and score; the top entry is the label.

    With more than one template this is the prompt-ensembled variant; with a
    single template the two coincide exactly. ``cache`` shares candidate
    embeddings across calls; ``retrieval`` lets dense callers reuse an
    already-computed retrieval.
    """
    cfg = cfg or ClassifierConfig()
    if retrieval is None:
        retrieval = retrieve_topk(index, image_emb, cfg.k)
    caption_ids = retrieval.ids
    candidates = extract_candidates(retrieval.texts, cfg.filter)
    names = sorted(candidates.entries)
    centroid = retrieval.centroid

    if not names:
        # Fall back to the cleaned and standardized words of the single
        # closest caption, ranked by the same blended score.
        if retrieval.hits:
            words = clean_tokens(retrieval.texts[0], cfg.filter)
            names = sorted({standardize(w) for w in words})
        if not names:
            raise NoCandidatesError("no candidate names survive extraction")

    ranked = _rank(names, image_emb, centroid, cfg.alpha, cfg.templates, provider, cache)
    return Prediction(ranked=ranked, retrieved_caption_ids=caption_ids)


def build_fixed_vocabulary(names, templates: TemplateSet, provider) -> FixedVocabulary:
    """Embed a closed label list once, template-ensembled."""
    names = list(names)
    embs = np.stack([ensemble_text_embedding(n, templates, provider) for n in names])
    return FixedVocabulary(names=names, embeddings=embs)


def classify_fixed_vocabulary(image_emb, vocab: FixedVocabulary) -> str:
    """Zero-shot baseline over a pre-defined vocabulary.

    Highest cosine wins; exact ties go to the lexicographically smaller name.
    """
    best_name = None
    best_score = -np.inf
    for name, emb in zip(vocab.names, vocab.embeddings):
        score = cosine_similarity(image_emb, emb)
        if score > best_score or (score == best_score and (best_name is None or name < best_name)):
            best_name = name
            best_score = score
    return best_name
