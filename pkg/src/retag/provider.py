"""Embedding-provider boundary.

Everything neural sits behind one newline-delimited JSON protocol:

    client -> {"op": "hello"}
    server -> {"roles": {"joint-text": 512, "joint-image": 512, "sentence": 384},
               "name": "..."}
    client -> {"id": 1, "op": "embed_texts", "role": "joint-text", "texts": [...]}
    server -> {"id": 1, "embeddings": [[...], ...]}
    client -> {"id": 2, "op": "embed_image", "role": "joint-image", "path": "..."}
              (or "image_b64" with inline PNG bytes)
    server -> {"id": 2, "embeddings": [[...]]}
    errors -> {"id": n, "error": {"code": "...", "message": "..."}}

One JSON document per LF-terminated UTF-8 line, over a subprocess's stdio or
a TCP socket. A deterministic mock provider lives here too so the whole
engine runs and tests without any model runtime.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import re
import select
import socket
import subprocess
import sys
import threading
from pathlib import Path

import numpy as np

from .embeddings import l2_normalize
from .errors import (
    DecodeError,
    DimDriftError,
    ProviderError,
    ProviderTimeoutError,
)

ROLE_JOINT_TEXT = "joint-text"
ROLE_JOINT_IMAGE = "joint-image"
ROLE_SENTENCE = "sentence"

MAX_TEXTS_PER_REQUEST = 256
NORM_TOLERANCE = 1e-3

_WORD_RE = re.compile(r"[a-z]+")


def _hash_unit_vector(dim: int, *salts) -> np.ndarray:
    digest = hashlib.sha256("\x1f".join(str(s) for s in salts).encode("utf-8")).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
    v = rng.standard_normal(dim)
    return l2_normalize(v.astype(np.float32))


DEFAULT_PLANTED = {
    "cat": ("cat", "cats", "kitten", "kittens", "feline", "tabby"),
    "dog": ("dog", "dogs", "puppy", "puppies", "canine"),
    "couch": ("couch", "sofa", "settee"),
    "tv": ("tv", "television"),
    "apple": ("apple", "apples"),
    "beach": ("beach", "seaside", "shore"),
    "car": ("car", "cars", "automobile"),
    "tree": ("tree", "trees"),
}

# Dominant image colors that the mock maps to planted concepts, so image
# fixtures can be plain color fields instead of carrying magic filenames.
DEFAULT_COLOR_CONCEPTS = {
    "cat": (220, 40, 40),
    "dog": (40, 60, 220),
    "tree": (40, 200, 60),
    "beach": (235, 220, 130),
}
_COLOR_MATCH_DISTANCE = 80.0


class MockProvider:
    """Hash-seeded deterministic embedder with plantable cluster structure.

    Every concept in ``planted`` owns a fixed anchor direction; texts (or
    image file stems) containing one of the concept's alias words embed
    near that anchor, everything else embeds to an independent pseudo-random
    unit vector. Identical inputs always produce identical outputs.
    """

    name = "mock"

    def __init__(self, seed: int = 0, dim: int = 64, sentence_dim: int | None = None,
                 planted: dict[str, tuple[str, ...]] | None = None, noise: float = 0.25,
                 color_concepts: dict[str, tuple[int, int, int]] | None = None):
        self.seed = seed
        self.dim = dim
        self.sentence_dim = sentence_dim or dim
        self.planted = dict(DEFAULT_PLANTED if planted is None else planted)
        self.noise = noise
        self.color_concepts = dict(
            DEFAULT_COLOR_CONCEPTS if color_concepts is None else color_concepts
        )
        self.color_concepts = {
            c: rgb for c, rgb in self.color_concepts.items() if c in self.planted
        }
        self._alias_to_concept = {}
        for concept, aliases in self.planted.items():
            for alias in aliases:
                self._alias_to_concept[alias.lower()] = concept
            self._alias_to_concept.setdefault(concept.lower(), concept)

    @property
    def roles(self) -> dict[str, int]:
        return {
            ROLE_JOINT_TEXT: self.dim,
            ROLE_JOINT_IMAGE: self.dim,
            ROLE_SENTENCE: self.sentence_dim,
        }

    def _space(self, role: str) -> tuple[str, int]:
        # Joint text and image share one embedding space; the sentence
        # encoder lives in its own.
        if role in (ROLE_JOINT_TEXT, ROLE_JOINT_IMAGE):
            return "joint", self.dim
        if role == ROLE_SENTENCE:
            return "sentence", self.sentence_dim
        raise ProviderError("bad_role", f"unknown role {role!r}")

    def concept_vector(self, concept: str, role: str = ROLE_JOINT_TEXT) -> np.ndarray:
        """Anchor direction of a planted concept."""
        space, dim = self._space(role)
        return _hash_unit_vector(dim, self.seed, space, "concept", concept)

    def planted_vector(self, concept: str, salt, role: str = ROLE_JOINT_TEXT,
                       noise: float | None = None) -> np.ndarray:
        """A fresh unit vector near a planted concept's anchor."""
        space, dim = self._space(role)
        anchor = self.concept_vector(concept, role)
        scale = self.noise if noise is None else noise
        jitter = _hash_unit_vector(dim, self.seed, space, "salt", salt)
        return l2_normalize(anchor + np.float32(scale) * jitter)

    def _embed_tokens(self, tokens, fallback_salt, space: str, dim: int) -> np.ndarray:
        concepts = sorted({self._alias_to_concept[t] for t in tokens if t in self._alias_to_concept})
        jitter = _hash_unit_vector(dim, self.seed, space, "salt", fallback_salt)
        if not concepts:
            return jitter
        anchors = [
            _hash_unit_vector(dim, self.seed, space, "concept", c) for c in concepts
        ]
        mean = np.mean(anchors, axis=0, dtype=np.float64).astype(np.float32)
        return l2_normalize(mean + np.float32(self.noise) * jitter)

    def embed_texts(self, role: str, texts: list[str]) -> np.ndarray:
        if not texts:
            raise ProviderError("invalid_request", "texts must be non-empty")
        space, dim = self._space(role)
        out = np.empty((len(texts), dim), dtype=np.float32)
        for i, text in enumerate(texts):
            tokens = _WORD_RE.findall(text.lower())
            out[i] = self._embed_tokens(tokens, f"text:{text}", space, dim)
        return out

    def _color_concept(self, blob: bytes) -> str | None:
        if not self.color_concepts:
            return None
        try:
            from PIL import Image
            import io

            with Image.open(io.BytesIO(blob)) as img:
                rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
        except Exception:
            return None
        mean = rgb.reshape(-1, 3).mean(axis=0)
        best, best_dist = None, _COLOR_MATCH_DISTANCE
        for concept, anchor in sorted(self.color_concepts.items()):
            dist = float(np.linalg.norm(mean - np.asarray(anchor, dtype=np.float64)))
            if dist < best_dist:
                best, best_dist = concept, dist
        return best

    def embed_image(self, image_ref) -> np.ndarray:
        space, dim = self._space(ROLE_JOINT_IMAGE)
        if isinstance(image_ref, (bytes, bytearray)):
            blob = bytes(image_ref)
            digest = hashlib.sha256(blob).hexdigest()
            concept = self._color_concept(blob)
            tokens = [concept] if concept else []
            return self._embed_tokens(tokens, f"bytes:{digest}", space, dim)
        path = Path(image_ref)
        if not path.is_file():
            raise ProviderError("io", f"cannot read image: {path}")
        blob = path.read_bytes()
        tokens = _WORD_RE.findall(path.stem.lower())
        if not any(t in self._alias_to_concept for t in tokens):
            concept = self._color_concept(blob)
            if concept:
                tokens = [concept]
        digest = hashlib.sha256(blob).hexdigest()
        return self._embed_tokens(tokens, f"image:{path.stem}:{digest}", space, dim)


class _PipeLineReader:
    """Line reader over a pipe fd with a real timeout (select + os.read)."""

    def __init__(self, fd: int, timeout: float):
        self._fd = fd
        self._timeout = timeout
        self._buffer = bytearray()

    def readline(self) -> str:
        while True:
            newline = self._buffer.find(b"\n")
            if newline >= 0:
                line = self._buffer[: newline + 1]
                del self._buffer[: newline + 1]
                return line.decode("utf-8")
            ready, _, _ = select.select([self._fd], [], [], self._timeout)
            if not ready:
                raise ProviderTimeoutError("provider did not answer in time")
            chunk = os.read(self._fd, 1 << 16)
            if not chunk:
                if self._buffer:
                    line = bytes(self._buffer)
                    self._buffer.clear()
                    return line.decode("utf-8")
                return ""
            self._buffer.extend(chunk)


class ProviderClient:
    """Client for the wire protocol over a subprocess's stdio or TCP.

    Requests carry increasing ids; responses are re-associated by id so a
    server may answer out of order. Returned embeddings are re-checked for
    unit norm and silently renormalized (``renormalized`` counts fixes).
    """

    def __init__(self, command=None, host=None, port=None, timeout: float = 60.0):
        self.timeout = timeout
        self.renormalized = 0
        self._lock = threading.Lock()
        self._next_id = 0
        self._pending: dict[int, dict] = {}
        self._proc = None
        self._sock = None
        if command is not None:
            if isinstance(command, str):
                import shlex

                command = shlex.split(command)
            self._proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                encoding="utf-8",
            )
            self._writer = self._proc.stdin
            self._reader = _PipeLineReader(self._proc.stdout.fileno(), timeout)
        elif host is not None and port is not None:
            self._sock = socket.create_connection((host, port), timeout=timeout)
            self._sock.settimeout(timeout)
            fh = self._sock.makefile("rw", encoding="utf-8", newline="\n")
            self._writer = fh
            self._reader = fh
        else:
            raise ValueError("need either a command or a host/port pair")
        self.name, self.roles = self._handshake()

    def _send(self, payload: dict) -> None:
        try:
            self._writer.write(json.dumps(payload) + "\n")
            self._writer.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProviderError("transport", f"cannot write to provider: {exc}") from exc

    def _read_line(self) -> dict:
        try:
            line = self._reader.readline()
        except socket.timeout as exc:
            raise ProviderTimeoutError("provider did not answer in time") from exc
        except OSError as exc:
            raise ProviderError("transport", f"cannot read from provider: {exc}") from exc
        if line == "":
            raise ProviderError("transport", "provider closed the connection")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProviderError("transport", f"invalid JSON from provider: {exc}") from exc

    def _handshake(self):
        self._send({"op": "hello"})
        reply = self._read_line()
        if "roles" not in reply:
            raise ProviderError("transport", f"bad handshake reply: {reply}")
        roles = {str(k): int(v) for k, v in reply["roles"].items()}
        return str(reply.get("name", "")), roles

    def _request(self, payload: dict) -> dict:
        with self._lock:
            self._next_id += 1
            rid = self._next_id
            payload = dict(payload, id=rid)
            self._send(payload)
            while rid not in self._pending:
                msg = self._read_line()
                got = msg.get("id")
                if got is None:
                    raise ProviderError("transport", f"response without id: {msg}")
                self._pending[int(got)] = msg
            msg = self._pending.pop(rid)
        if "error" in msg:
            err = msg["error"] or {}
            raise ProviderError(str(err.get("code", "unknown")), str(err.get("message", "")))
        return msg

    def _check_rows(self, rows, role: str) -> np.ndarray:
        arr = np.asarray(rows, dtype=np.float32)
        if arr.ndim != 2:
            raise ProviderError("transport", f"expected a matrix of embeddings, got shape {arr.shape}")
        want = self.roles.get(role)
        if want is not None and arr.shape[1] != want:
            raise DimDriftError(
                f"role {role!r} answered dim {arr.shape[1]}, handshake said {want}"
            )
        norms = np.linalg.norm(arr.astype(np.float64), axis=1)
        off = np.abs(norms - 1.0) > NORM_TOLERANCE
        if np.any(off):
            if np.any(norms[off] < 1e-12):
                raise ProviderError("transport", "provider returned a zero embedding")
            arr[off] = (arr[off].astype(np.float64) / norms[off, None]).astype(np.float32)
            self.renormalized += int(np.count_nonzero(off))
        return arr

    def embed_texts(self, role: str, texts: list[str]) -> np.ndarray:
        if not texts:
            raise ProviderError("invalid_request", "texts must be non-empty")
        chunks = []
        for start in range(0, len(texts), MAX_TEXTS_PER_REQUEST):
            batch = list(texts[start : start + MAX_TEXTS_PER_REQUEST])
            msg = self._request({"op": "embed_texts", "role": role, "texts": batch})
            rows = msg.get("embeddings")
            if rows is None or len(rows) != len(batch):
                raise ProviderError("transport", "embedding count does not match request")
            chunks.append(self._check_rows(rows, role))
        return np.vstack(chunks)

    def embed_image(self, image_ref) -> np.ndarray:
        payload = {"op": "embed_image", "role": ROLE_JOINT_IMAGE}
        if isinstance(image_ref, (bytes, bytearray)):
            payload["image_b64"] = base64.b64encode(bytes(image_ref)).decode("ascii")
        else:
            payload["path"] = str(image_ref)
        msg = self._request(payload)
        rows = msg.get("embeddings")
        if rows is None or len(rows) != 1:
            raise ProviderError("transport", "expected exactly one image embedding")
        return self._check_rows(rows, ROLE_JOINT_IMAGE)[0]

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            self._proc.terminate()
            self._proc.wait(timeout=10)
            self._proc = None
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def parse_provider_spec(spec: str):
    """Resolve a CLI provider spec.

    ``mock:SEED`` builds an in-process mock, ``tcp:HOST:PORT`` connects a
    socket client, anything else is run as a subprocess command speaking
    the protocol on stdio.
    """
    spec = spec.strip()
    if spec.startswith("mock:"):
        return MockProvider(seed=int(spec.split(":", 1)[1] or 0))
    if spec == "mock":
        return MockProvider()
    if spec.startswith("tcp:"):
        _, host, port = spec.split(":", 2)
        return ProviderClient(host=host, port=int(port))
    return ProviderClient(command=spec)


def _handle_request(provider, msg: dict) -> dict:
    rid = msg.get("id")
    op = msg.get("op")
    try:
        if op == "embed_texts":
            role = msg.get("role", ROLE_JOINT_TEXT)
            texts = msg.get("texts")
            if not isinstance(texts, list) or not texts:
                raise ProviderError("invalid_request", "texts must be a non-empty list")
            arr = provider.embed_texts(role, [str(t) for t in texts])
            return {"id": rid, "embeddings": [row.tolist() for row in arr]}
        if op == "embed_image":
            if "image_b64" in msg:
                try:
                    blob = base64.b64decode(msg["image_b64"], validate=True)
                except Exception as exc:
                    raise DecodeError(f"bad base64 payload: {exc}") from exc
                vec = provider.embed_image(blob)
            elif "path" in msg:
                vec = provider.embed_image(msg["path"])
            else:
                raise ProviderError("invalid_request", "embed_image needs path or image_b64")
            return {"id": rid, "embeddings": [vec.tolist()]}
        raise ProviderError("bad_op", f"unknown op {op!r}")
    except ProviderError as exc:
        return {"id": rid, "error": {"code": exc.code, "message": exc.message}}


def serve_stdio(provider, stdin=None, stdout=None) -> None:
    """Answer protocol requests on stdio until EOF."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            reply = {"id": None, "error": {"code": "invalid_request", "message": str(exc)}}
            print(json.dumps(reply), file=stdout, flush=True)
            continue
        if msg.get("op") == "hello":
            reply = {"roles": provider.roles, "name": provider.name}
        else:
            reply = _handle_request(provider, msg)
        print(json.dumps(reply), file=stdout, flush=True)


def serve_tcp(provider, host: str, port: int, ready_callback=None) -> None:
    """Answer protocol requests on a TCP socket, one connection at a time."""
    server = socket.create_server((host, port))
    if ready_callback is not None:
        ready_callback(server.getsockname()[1])
    with server:
        while True:
            conn, _ = server.accept()
            with conn:
                fh = conn.makefile("rw", encoding="utf-8", newline="\n")
                serve_stdio(provider, stdin=fh, stdout=fh)


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        prog="python -m retag.provider",
        description="Serve the deterministic mock embedding provider.",
    )
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--listen", default="stdio", help="'stdio' or 'tcp:HOST:PORT'")
    args = parser.parse_args(argv)
    provider = MockProvider(seed=args.seed, dim=args.dim)
    if args.listen == "stdio":
        serve_stdio(provider)
    elif args.listen.startswith("tcp:"):
        _, host, port = args.listen.split(":", 2)
        serve_tcp(provider, host, int(port))
    else:
        parser.error(f"unknown listen mode {args.listen!r}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
