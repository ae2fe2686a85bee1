"""Per-occurrence, per-layer embedding stores plus synthetic generators.

The on-disk EMB1 layout, all integers little-endian:

  magic "EMB1" | u32 record_count | u32 layer_count | u32 dim_per_layer
  index block: per record, u16 key_len followed by the UTF-8 key bytes
  data block: per record, layer_count*dim_per_layer little-endian f32

Keys are "synset_id#sentence_idx" strings, one record per annotated gloss
occurrence, values laid out layer-major so a single layer is a contiguous
slice. Files are written whole through a temp-file rename, so readers never
observe partial output.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .ioutil import atomic_write_bytes
from .taxonomy import TaxonomyGraph

MAGIC = b"EMB1"


class EmbeddingError(ValueError):
    """Store problem; code is one of "bad-magic", "truncated", "non-finite",
    "duplicate-key", "missing-key", "bad-layer", "dim-too-small", "bad-key"."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass
class EmbeddingStore:
    keys: list[str]
    layer_count: int
    dim_per_layer: int
    values: np.ndarray  # (n_records, layer_count*dim_per_layer) float32
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self._index = {key: i for i, key in enumerate(self.keys)}

    @property
    def width(self) -> int:
        return self.layer_count * self.dim_per_layer


def fetch(store: EmbeddingStore, key: str, layer: int | None = None) -> np.ndarray:
    """One occurrence vector: the full layer concatenation, or one layer's slice."""
    row = store._index.get(key)
    if row is None:
        raise EmbeddingError("missing-key", f"no record for key {key!r}")
    if layer is None:
        return store.values[row]
    if not 0 <= layer < store.layer_count:
        raise EmbeddingError("bad-layer", f"layer {layer} outside 0..{store.layer_count - 1}")
    start = layer * store.dim_per_layer
    return store.values[row, start : start + store.dim_per_layer]


def matrix_for_keys(store: EmbeddingStore, keys, layer: int | None = None) -> np.ndarray:
    """Float64 matrix stacking fetch() results row per key (probe training input)."""
    rows = []
    for key in keys:
        idx = store._index.get(key)
        if idx is None:
            raise EmbeddingError("missing-key", f"no record for key {key!r}")
        rows.append(idx)
    mat = store.values[np.array(rows, dtype=np.intp)]
    if layer is not None:
        if not 0 <= layer < store.layer_count:
            raise EmbeddingError("bad-layer", f"layer {layer} outside 0..{store.layer_count - 1}")
        start = layer * store.dim_per_layer
        mat = mat[:, start : start + store.dim_per_layer]
    return mat.astype(np.float64)


# ---------------------------------------------------------------------------
# binary format


def write_store(store: EmbeddingStore, path: str) -> None:
    n = len(store.keys)
    if store.values.shape != (n, store.width):
        raise EmbeddingError("truncated", f"values shape {store.values.shape} != ({n}, {store.width})")
    if len(set(store.keys)) != n:
        raise EmbeddingError("duplicate-key", "store keys are not unique")
    if not np.isfinite(store.values).all():
        raise EmbeddingError("non-finite", "store contains nan or inf values")
    parts = [MAGIC, struct.pack("<III", n, store.layer_count, store.dim_per_layer)]
    for key in store.keys:
        raw = key.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise EmbeddingError("bad-key", f"key too long ({len(raw)} bytes)")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(np.ascontiguousarray(store.values, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def read_store(path: str) -> EmbeddingStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        if len(blob) >= 4 and blob[:4] != MAGIC:
            raise EmbeddingError("bad-magic", f"expected {MAGIC!r}, found {blob[:4]!r}")
        raise EmbeddingError("truncated", f"file is only {len(blob)} bytes")
    if blob[:4] != MAGIC:
        raise EmbeddingError("bad-magic", f"expected {MAGIC!r}, found {blob[:4]!r}")
    n, layer_count, dim = struct.unpack_from("<III", blob, 4)
    offset = 16
    keys = []
    for _ in range(n):
        if offset + 2 > len(blob):
            raise EmbeddingError("truncated", "index block ends mid-record")
        (key_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if offset + key_len > len(blob):
            raise EmbeddingError("truncated", "key bytes run past end of file")
        keys.append(blob[offset : offset + key_len].decode("utf-8"))
        offset += key_len
    if len(set(keys)) != n:
        raise EmbeddingError("duplicate-key", "file contains duplicate keys")
    expected = n * layer_count * dim * 4
    if len(blob) - offset != expected:
        raise EmbeddingError(
            "truncated", f"data block holds {len(blob) - offset} bytes, expected {expected}"
        )
    values = np.frombuffer(blob, dtype="<f4", count=n * layer_count * dim, offset=offset)
    values = values.reshape(n, layer_count * dim).copy()
    if not np.isfinite(values).all():
        raise EmbeddingError("non-finite", "file contains nan or inf values")
    return EmbeddingStore(keys=keys, layer_count=layer_count, dim_per_layer=dim, values=values)


def verify_store(path: str) -> list[str]:
    """Read the store and return human-readable warnings; empty means clean."""
    try:
        store = read_store(path)
    except EmbeddingError as err:
        return [str(err)]
    warnings = []
    if not store.keys:
        warnings.append("store holds zero records")
    for key in store.keys:
        base, sep, idx = key.rpartition("#")
        if not sep or not base or not idx.isdigit():
            warnings.append(f"key {key!r} is not of the form synset_id#sentence_idx")
            break
    return warnings


# ---------------------------------------------------------------------------
# generators


def generate_random(keys, dim: int, seed: int) -> EmbeddingStore:
    """One layer of i.i.d. standard normal vectors; the no-signal control."""
    if dim <= 0:
        raise EmbeddingError("dim-too-small", "dim must be positive")
    keys = list(keys)
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((len(keys), dim)).astype(np.float32)
    return EmbeddingStore(keys=keys, layer_count=1, dim_per_layer=dim, values=values)


def generate_planted(
    graph: TaxonomyGraph,
    dim: int,
    noise,
    layers: int,
    seed: int,
    occurrences: int = 3,
    noise_growth: float = 4.0,
) -> EmbeddingStore:
    """Embeddings with hypernymy planted in them, the controllable ground truth.

    Each synset's base vector is its ancestor-or-self indicator (length |N|)
    times a fixed seeded Gaussian projection to dim; every occurrence then
    adds i.i.d. N(0, sigma_k^2) noise per layer. noise may be a scalar (layer
    k gets noise * noise_growth**k, so later layers are progressively worse)
    or an explicit per-layer sequence. dim must be at least |N| so the
    indicator stays linearly recoverable.
    """
    ids = graph.nodes()
    n = len(ids)
    if dim < n:
        raise EmbeddingError("dim-too-small", f"dim {dim} < {n} indicator dimensions")
    if np.isscalar(noise):
        sigmas = [float(noise) * noise_growth**k for k in range(layers)]
    else:
        sigmas = [float(s) for s in noise]
        if len(sigmas) != layers:
            raise EmbeddingError("dim-too-small", f"noise profile has {len(sigmas)} entries for {layers} layers")
    rng = np.random.default_rng(seed)
    projection = rng.standard_normal((n, dim))
    position = {sid: i for i, sid in enumerate(ids)}
    indicators = np.zeros((n, n))
    for i, sid in enumerate(ids):
        indicators[i, i] = 1.0
        for anc in graph.ancestors(sid):
            indicators[i, position[anc]] = 1.0
    base = indicators @ projection

    keys = []
    rows = np.empty((n * occurrences, layers * dim), dtype=np.float32)
    row = 0
    for i, sid in enumerate(ids):
        for occ in range(occurrences):
            keys.append(f"{sid}#{occ}")
            parts = [base[i] + rng.normal(0.0, s, dim) if s > 0 else base[i].copy() for s in sigmas]
            rows[row] = np.concatenate(parts).astype(np.float32)
            row += 1
    return EmbeddingStore(keys=keys, layer_count=layers, dim_per_layer=dim, values=rows)
