"""Candidate class-name extraction from retrieved caption texts.

Three stages run in order: *remove* noise (placeholder tokens, URLs, file
extensions, compound separators, short or symbol-bearing terms, meta words),
*standardize* (lowercase plus rule-based singular form), and *filter*
(part-of-speech lexicon plus a minimum-occurrence threshold).
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import LexiconMissingError

POS_NOUN = "noun"
POS_ADJECTIVE = "adjective"
POS_VERB = "verb"
_POS_BY_CHAR = {"n": POS_NOUN, "a": POS_ADJECTIVE, "v": POS_VERB}

STAGE_REMOVE = "remove"
STAGE_STANDARDIZE = "standardize"
STAGE_FILTER = "filter"
ALL_STAGES = frozenset({STAGE_REMOVE, STAGE_STANDARDIZE, STAGE_FILTER})

_SPECIAL_TOKEN_RE = re.compile(r"[⟨<][^⟨⟩<>]*[⟩>]")
_TERM_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)*", re.UNICODE)
_STRIP_CHARS = "\"'“”‘’.,;:!?()[]{}«»…·*#@&%$+=/\\|~^"

_URL_TLDS = {
    "com", "org", "net", "edu", "gov", "mil", "int", "info", "biz",
    "io", "co", "me", "tv", "ly", "us", "uk", "ca", "au", "de", "fr",
    "it", "es", "nl", "jp", "cn", "ru", "in", "br", "eu",
}
_DOMAIN_RE = re.compile(r"^[\w.-]+\.([a-z]{2,6})(?:[/:?#].*)?$", re.IGNORECASE)

_FILE_EXTENSIONS = {
    "jpg", "jpeg", "png", "gif", "bmp", "tif", "tiff", "webp", "svg", "ico",
    "heic", "psd", "eps", "ai", "raw", "cr2", "nef", "dng",
    "pdf", "doc", "docx", "txt", "rtf", "ppt", "pptx", "xls", "xlsx", "csv",
    "mp3", "mp4", "mov", "avi", "mkv", "wmv", "flv", "webm", "wav", "ogg",
    "html", "htm", "php", "asp", "aspx", "xml", "json", "zip", "tar", "gz", "rar",
}

_IRREGULAR_SINGULARS = {
    "men": "man", "women": "woman", "children": "child", "people": "person",
    "teeth": "tooth", "feet": "foot", "geese": "goose", "mice": "mouse",
    "lice": "louse", "oxen": "ox", "dice": "die", "oases": "oasis",
    "cacti": "cactus", "fungi": "fungus", "nuclei": "nucleus",
    "alumni": "alumnus", "indices": "index", "appendices": "appendix",
    "matrices": "matrix", "vertices": "vertex", "axes": "axis",
    "analyses": "analysis", "crises": "crisis", "theses": "thesis",
    "phenomena": "phenomenon", "criteria": "criterion",
    "potatoes": "potato", "tomatoes": "tomato", "heroes": "hero",
    "echoes": "echo", "leaves": "leaf", "sheep": "sheep", "fish": "fish",
    "species": "species", "series": "series", "glasses": "glass",
}

# Stems (word minus "ves") whose singular takes "fe" rather than "f".
_VES_FE_STEMS = {"kni", "wi", "li"}


def _data_path(name: str) -> Path:
    return Path(resources.files("retag").joinpath("data", name))


def default_lexicon_path() -> Path:
    return _data_path("pos_lexicon.tsv")


def load_meta_words(path=None) -> frozenset[str]:
    """Meta-word list: one lowercase word per line, '#' comments allowed."""
    path = Path(path) if path is not None else _data_path("meta_words.txt")
    words = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)


@dataclass(frozen=True)
class FilterConfig:
    """Knobs for the extraction pipeline.

    ``keep_pos_tags`` defaults to nouns only; widen it to include adjectives
    and verbs for datasets whose classes are action phrases. Words absent
    from the lexicon are kept by default (``unknown_pos_policy="keep"``) so
    the open vocabulary is not limited to the lexicon's coverage.
    """

    min_word_length: int = 3
    meta_words: frozenset[str] = field(default_factory=load_meta_words)
    keep_pos_tags: frozenset[str] = frozenset({POS_NOUN})
    min_occurrences: int = 2
    pos_lexicon_path: Path = field(default_factory=default_lexicon_path)
    unknown_pos_policy: str = "keep"  # "keep" | "drop"
    stages: frozenset[str] = ALL_STAGES

    def __post_init__(self):
        if self.min_word_length < 1:
            raise ValueError("min_word_length must be >= 1")
        if self.min_occurrences < 1:
            raise ValueError("min_occurrences must be >= 1")
        if not self.keep_pos_tags:
            raise ValueError("keep_pos_tags must be non-empty")
        bad = set(self.keep_pos_tags) - {POS_NOUN, POS_ADJECTIVE, POS_VERB}
        if bad:
            raise ValueError(f"unknown POS tags: {sorted(bad)}")
        if self.unknown_pos_policy not in ("keep", "drop"):
            raise ValueError("unknown_pos_policy must be 'keep' or 'drop'")


@dataclass
class CandidateSet:
    """Standardized candidate names with occurrence counts."""

    entries: dict[str, int]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    @property
    def names(self) -> list[str]:
        """Names ordered by descending count, then alphabetically."""
        return sorted(self.entries, key=lambda n: (-self.entries[n], n))


_LEXICON_CACHE: dict[str, dict[str, frozenset[str]]] = {}


def load_pos_lexicon(path) -> dict[str, frozenset[str]]:
    """Load a word -> POS-set table from a ``word<TAB>tags`` file."""
    key = str(path)
    cached = _LEXICON_CACHE.get(key)
    if cached is not None:
        return cached
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise LexiconMissingError(f"cannot read POS lexicon at {path}: {exc}") from exc
    table: dict[str, frozenset[str]] = {}
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        word, _, tags = line.partition("\t")
        word = word.strip().lower()
        if not word:
            continue
        table[word] = frozenset(_POS_BY_CHAR[c] for c in tags.strip() if c in _POS_BY_CHAR)
    _LEXICON_CACHE[key] = table
    return table


def _is_url(token: str) -> bool:
    low = token.lower()
    if "://" in low or low.startswith("www."):
        return True
    if "." not in low:
        return False
    m = _DOMAIN_RE.match(low)
    return bool(m) and m.group(1).lower() in _URL_TLDS


def _strip_file_extension(token: str) -> str:
    stem, dot, ext = token.rpartition(".")
    if dot and stem and ext.lower() in _FILE_EXTENSIONS:
        return stem
    return token


def clean_tokens(caption: str, cfg: FilterConfig | None = None) -> list[str]:
    """Stage one: noise removal.

    Drops placeholder tokens, URLs, and meta words; strips file extensions
    while keeping the stem; splits compounds on underscores and dashes; and
    removes terms bearing digits or symbols or shorter than the configured
    minimum. Case is preserved for the standardize stage.
    """
    cfg = cfg or FilterConfig()
    text = unicodedata.normalize("NFC", caption)
    text = _SPECIAL_TOKEN_RE.sub(" ", text)
    out: list[str] = []
    for raw in text.split():
        token = raw.strip(_STRIP_CHARS)
        if not token:
            continue
        if _is_url(token):
            continue
        token = _strip_file_extension(token)
        for part in re.split(r"[-_]+", token):
            for term in _TERM_RE.findall(part):
                if not term.isalpha():
                    continue
                if len(term) < cfg.min_word_length:
                    continue
                if term.lower() in cfg.meta_words:
                    continue
                out.append(term)
    return out


def _singular_step(word: str) -> str:
    irregular = _IRREGULAR_SINGULARS.get(word)
    if irregular is not None:
        return irregular
    # Suffix rules only fire on words strictly longer than the suffix.
    if word.endswith("ies") and len(word) >= 4:
        return word[:-3] + "y" if len(word) >= 5 else word[:-1]
    if word.endswith("ves") and len(word) >= 4:
        stem = word[:-3]
        return stem + ("fe" if stem in _VES_FE_STEMS else "f")
    if word.endswith(("ches", "shes")) and len(word) >= 5:
        return word[:-2]
    if word.endswith(("ses", "xes", "zes")) and len(word) >= 4:
        return word[:-2]
    if (
        word.endswith("s")
        and not word.endswith(("ss", "us", "is"))
        and len(word) >= 4
    ):
        return word[:-1]
    return word


def standardize(word: str) -> str:
    """Stage two: lowercase and singularize.

    The singular rules run to a fixed point, which makes the function
    idempotent even where the rule table chains (e.g. "analyses").
    """
    current = word.lower()
    while True:
        step = _singular_step(current)
        if step == current:
            return current
        current = step


def filter_candidates(words, cfg: FilterConfig | None = None) -> CandidateSet:
    """Stage three: POS filtering and the minimum-occurrence threshold.

    ``words`` is an iterable of already cleaned and standardized tokens, or
    a mapping from token to count.
    """
    cfg = cfg or FilterConfig()
    counts: dict[str, int] = {}
    if isinstance(words, dict):
        items = words.items()
    else:
        items = None
    if items is None:
        for w in words:
            counts[w] = counts.get(w, 0) + 1
    else:
        counts = {w: int(c) for w, c in items}

    lexicon = load_pos_lexicon(cfg.pos_lexicon_path)
    keep_unknown = cfg.unknown_pos_policy == "keep"
    kept: dict[str, int] = {}
    for word in sorted(counts):
        count = counts[word]
        if count < cfg.min_occurrences:
            continue
        # Standardization can shorten a word below the threshold
        # ("ties" -> "tie" is fine, but degenerate inputs can shrink more).
        if len(word) < cfg.min_word_length:
            continue
        tags = lexicon.get(word)
        if tags is None:
            if not keep_unknown:
                continue
        elif not (tags & cfg.keep_pos_tags):
            continue
        kept[word] = count
    return CandidateSet(entries=kept)


def extract_candidates(captions, cfg: FilterConfig | None = None) -> CandidateSet:
    """Full pipeline over a list of caption texts.

    Stages can be disabled through ``cfg.stages`` for ablation runs; with
    the remove stage off, tokens are bare whitespace splits.
    """
    cfg = cfg or FilterConfig()
    tokens: list[str] = []
    for caption in captions:
        if STAGE_REMOVE in cfg.stages:
            tokens.extend(clean_tokens(caption, cfg))
        else:
            tokens.extend(unicodedata.normalize("NFC", caption).split())
    if STAGE_STANDARDIZE in cfg.stages:
        tokens = [standardize(t) for t in tokens]
    if STAGE_FILTER in cfg.stages:
        return filter_candidates(tokens, cfg)
    counts: dict[str, int] = {}
    for t in tokens:
        counts[t] = counts.get(t, 0) + 1
    return CandidateSet(entries={w: counts[w] for w in sorted(counts)})
