"""Caption database loading, top-k cosine index, and persistence.

On-disk embedding format ("VFEB", little-endian):

    magic    4 bytes  b"VFEB"
    version  u32      currently 1
    dim      u32
    count    u64
    dtype    u8       0 = float32
    reserved 7 bytes  zeros
    data     count * dim float32, row-major

The caption sidecar is plain UTF-8 text, one caption per line, line i
paired with embedding row i. An index directory holds ``meta.json`` plus
embedded copies of both files (and, for the quantized kind, the coarse
centroids and list assignments).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .embeddings import mean_embedding
from .errors import (
    CountMismatchError,
    DimensionMismatchError,
    EmptyStoreError,
    FormatError,
    InvalidParamsError,
    IoError,
    VersionError,
)

MAGIC = b"VFEB"
FORMAT_VERSION = 1
INDEX_FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIQB7x")
DTYPE_F32 = 0

KIND_FLAT = "exact-flat"
KIND_IVF = "quantized-ivf"

DEFAULT_TOPK = 10

# Rows whose norm deviates from 1 by more than this are renormalized on load.
NORM_TOLERANCE = 1e-3


@dataclass(frozen=True)
class CaptionRecord:
    id: int
    text: str
    embedding: np.ndarray


@dataclass
class CaptionStore:
    """Caption texts plus their embeddings, row-aligned."""

    texts: list[str]
    embeddings: np.ndarray  # (count, dim) float32, unit rows
    renormalized: int = 0  # rows fixed up at load time

    def __len__(self) -> int:
        return len(self.texts)

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    def record(self, idx: int) -> CaptionRecord:
        return CaptionRecord(idx, self.texts[idx], self.embeddings[idx])


@dataclass(frozen=True)
class IvfParams:
    n_lists: int
    n_probe: int


@dataclass
class RetrievalResult:
    """Hits sorted by descending score plus the mean of their embeddings."""

    hits: list[tuple[CaptionRecord, float]]
    centroid: np.ndarray

    @property
    def ids(self) -> list[int]:
        return [rec.id for rec, _ in self.hits]

    @property
    def texts(self) -> list[str]:
        return [rec.text for rec, _ in self.hits]


@dataclass
class CaptionIndex:
    """Immutable searchable view over a CaptionStore."""

    store: CaptionStore
    kind: str
    ivf_params: IvfParams | None = None
    _centroids: np.ndarray | None = field(default=None, repr=False)
    _assignments: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.store.dim

    def __len__(self) -> int:
        return len(self.store)


def write_embedding_file(path, embeddings: np.ndarray) -> None:
    """Write a (count, dim) float32 matrix in the VFEB layout."""
    arr = np.ascontiguousarray(embeddings, dtype=np.float32)
    if arr.ndim != 2:
        raise FormatError(f"expected a 2-D matrix, got shape {arr.shape}")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, arr.shape[1], arr.shape[0], DTYPE_F32))
        fh.write(arr.tobytes(order="C"))


def read_embedding_file(path) -> np.ndarray:
    """Read a VFEB file back into a (count, dim) float32 matrix."""
    path = Path(path)
    if not path.is_file():
        raise IoError(f"embedding file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise FormatError(f"file too short for header: {path}")
    magic, version, dim, count, dtype = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} in {path}")
    if version > FORMAT_VERSION:
        raise VersionError(f"embedding file version {version} is newer than supported")
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}")
    if dim == 0:
        raise FormatError("dim must be positive")
    expected = HEADER.size + count * dim * 4
    if len(raw) != expected:
        raise FormatError(f"payload size mismatch: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER.size, count=count * dim)
    return data.reshape(count, dim).copy()


def read_caption_lines(path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise IoError(f"captions file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if text == "":
        return []
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def load_caption_file(embeddings_path, captions_path) -> CaptionStore:
    """Pair a VFEB embedding file with its caption sidecar.

    Rows deviating from unit norm by more than 1e-3 are renormalized; the
    number of fixed rows is reported on the store.
    """
    matrix = read_embedding_file(embeddings_path)
    texts = read_caption_lines(captions_path)
    if len(texts) != matrix.shape[0]:
        raise CountMismatchError(
            f"{len(texts)} caption lines vs {matrix.shape[0]} embedding rows"
        )
    for i, t in enumerate(texts):
        if not t.strip():
            raise FormatError(f"caption line {i} is empty")
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    if np.any(norms < 1e-12):
        raise FormatError("embedding file contains a zero row")
    off = np.abs(norms - 1.0) > NORM_TOLERANCE
    renormalized = int(np.count_nonzero(off))
    if renormalized:
        matrix[off] = (matrix[off].astype(np.float64) / norms[off, None]).astype(np.float32)
    return CaptionStore(texts=texts, embeddings=matrix, renormalized=renormalized)


def store_from_texts(texts: list[str], embeddings: np.ndarray) -> CaptionStore:
    """Build an in-memory store from already-computed embeddings."""
    arr = np.ascontiguousarray(embeddings, dtype=np.float32)
    if arr.shape[0] != len(texts):
        raise CountMismatchError(f"{len(texts)} captions vs {arr.shape[0]} embedding rows")
    norms = np.linalg.norm(arr.astype(np.float64), axis=1)
    off = np.abs(norms - 1.0) > NORM_TOLERANCE
    if np.any(off):
        arr[off] = (arr[off].astype(np.float64) / norms[off, None]).astype(np.float32)
    return CaptionStore(texts=list(texts), embeddings=arr, renormalized=int(np.count_nonzero(off)))


def _train_coarse_centroids(embeddings: np.ndarray, n_lists: int, seed: int):
    from scipy.cluster.vq import kmeans2

    data = embeddings.astype(np.float64)
    with np.errstate(all="ignore"):
        centroids, labels = kmeans2(data, n_lists, minit="++", seed=seed)
    return centroids.astype(np.float32), labels.astype(np.int64)


def build_index(
    store: CaptionStore,
    kind: str = KIND_FLAT,
    ivf_params: IvfParams | None = None,
    seed: int = 0,
) -> CaptionIndex:
    """Build an immutable index over the store.

    ``exact-flat`` answers exact top-k. ``quantized-ivf`` trains coarse
    centroids with seeded k-means and probes only the nearest lists.
    """
    if len(store) == 0:
        raise EmptyStoreError("cannot index an empty store")
    if kind == KIND_FLAT:
        return CaptionIndex(store=store, kind=kind)
    if kind != KIND_IVF:
        raise InvalidParamsError(f"unknown index kind: {kind!r}")
    if ivf_params is None:
        raise InvalidParamsError("quantized-ivf requires ivf_params")
    if ivf_params.n_lists < 1 or ivf_params.n_probe < 1:
        raise InvalidParamsError("n_lists and n_probe must be positive")
    if ivf_params.n_probe > ivf_params.n_lists:
        raise InvalidParamsError(
            f"n_probe ({ivf_params.n_probe}) exceeds n_lists ({ivf_params.n_lists})"
        )
    if ivf_params.n_lists > len(store):
        raise InvalidParamsError("n_lists exceeds the number of records")
    centroids, assignments = _train_coarse_centroids(store.embeddings, ivf_params.n_lists, seed)
    return CaptionIndex(
        store=store,
        kind=kind,
        ivf_params=ivf_params,
        _centroids=centroids,
        _assignments=assignments,
    )


def _ivf_candidate_rows(index: CaptionIndex, query64: np.ndarray) -> np.ndarray:
    centroids = index._centroids.astype(np.float64)
    # Assignment used Euclidean distance; rank probe lists with the same metric.
    dists = np.sum((centroids - query64[None, :]) ** 2, axis=1)
    order = np.lexsort((np.arange(len(dists)), dists))
    probe = order[: index.ivf_params.n_probe]
    mask = np.isin(index._assignments, probe)
    return np.nonzero(mask)[0].astype(np.int64)


def retrieve_topk(index: CaptionIndex, query, k: int = DEFAULT_TOPK) -> RetrievalResult:
    """The k records with highest cosine similarity to ``query``.

    Exact for the flat kind; for the quantized kind only probed lists are
    scanned. Scores are cosine values; ties break toward the lower id.
    """
    if k < 1:
        raise InvalidParamsError("k must be >= 1")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.dim:
        raise DimensionMismatchError(f"query dim {q.shape[0]} vs index dim {index.dim}")
    qnorm = float(np.linalg.norm(q))
    if qnorm < 1e-12:
        raise DimensionMismatchError("query vector has zero norm")
    q = q / qnorm

    matrix = index.store.embeddings
    if index.kind == KIND_FLAT:
        ids, scores = _kernels.topk_dot(matrix, q, k)
    else:
        rows = _ivf_candidate_rows(index, q)
        ids, scores = _kernels.topk_dot_subset(matrix, rows, q, k)

    # Stored rows are unit-norm, so the dot product is already the cosine.
    hits = [(index.store.record(int(i)), float(s)) for i, s in zip(ids, scores)]
    if hits:
        centroid = mean_embedding([rec.embedding for rec, _ in hits])
    else:
        centroid = np.zeros(index.dim, dtype=np.float32)
    return RetrievalResult(hits=hits, centroid=centroid)


def save_index(index: CaptionIndex, directory) -> None:
    """Persist an index as meta.json + embedded copies of its files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": INDEX_FORMAT_VERSION,
        "kind": index.kind,
        "dim": index.dim,
        "count": len(index.store),
        "renormalized": index.store.renormalized,
    }
    if index.kind == KIND_IVF:
        meta["ivf_params"] = {
            "n_lists": index.ivf_params.n_lists,
            "n_probe": index.ivf_params.n_probe,
        }
    write_embedding_file(directory / "embeddings.vfeb", index.store.embeddings)
    with open(directory / "captions.txt", "w", encoding="utf-8") as fh:
        for text in index.store.texts:
            fh.write(text + "\n")
    if index.kind == KIND_IVF:
        write_embedding_file(directory / "centroids.vfeb", index._centroids)
        (directory / "assignments.bin").write_bytes(
            index._assignments.astype("<i8").tobytes()
        )
    with open(directory / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_index(directory) -> CaptionIndex:
    """Load an index previously written by :func:`save_index`."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.is_file():
        raise IoError(f"no index at {directory} (missing meta.json)")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"meta.json is not valid JSON: {exc}") from exc
    version = int(meta.get("format_version", -1))
    if version > INDEX_FORMAT_VERSION:
        raise VersionError(f"index format version {version} is newer than supported")
    if version < 0:
        raise FormatError("meta.json missing format_version")
    store = load_caption_file(directory / "embeddings.vfeb", directory / "captions.txt")
    kind = meta.get("kind")
    if kind == KIND_FLAT:
        index = CaptionIndex(store=store, kind=KIND_FLAT)
    elif kind == KIND_IVF:
        params = meta.get("ivf_params") or {}
        ivf = IvfParams(n_lists=int(params["n_lists"]), n_probe=int(params["n_probe"]))
        centroids = read_embedding_file(directory / "centroids.vfeb")
        assign_path = directory / "assignments.bin"
        if not assign_path.is_file():
            raise IoError(f"missing assignments.bin in {directory}")
        assignments = np.frombuffer(assign_path.read_bytes(), dtype="<i8").astype(np.int64)
        if assignments.shape[0] != len(store):
            raise FormatError("assignments length does not match record count")
        index = CaptionIndex(
            store=store,
            kind=KIND_IVF,
            ivf_params=ivf,
            _centroids=centroids,
            _assignments=assignments,
        )
    else:
        raise FormatError(f"unknown index kind in meta.json: {kind!r}")
    if len(store) != int(meta.get("count", -1)):
        raise FormatError("meta.json count does not match stored records")
    if store.dim != int(meta.get("dim", -1)):
        raise FormatError("meta.json dim does not match stored records")
    return index
