"""Embedding backends with one shared contract.

encode(sentence) returns a SentenceEncoding: character offsets for every
token the backend produced, plus states(t) giving token t's per-layer hidden
states as a (layer_count, dim_per_layer) float32 array, embedding layer
first. Models run in evaluation mode with no sampling, so the same sentence
always yields the same states. Backends:

  StaticTableModel     word2vec-style text table; one layer, whole-word
                       whitespace tokens, lookup exact then casefolded.
  ToyContextualModel   seeded hash-based encoder with wordpiece-style
                       sub-tokens; any geometry, no downloads, bit-stable.
  TransformersModel    Hugging Face encoder with a fast tokenizer; imports
                       torch/transformers lazily so they stay optional.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass

import numpy as np

from .glosses import DumpError

_TOKEN = re.compile(r"\S+")
_PIECE = 4  # max characters per toy sub-token


@dataclass(frozen=True)
class SentenceEncoding:
    offsets: list  # (start, end) character range per token
    states: object  # callable(t) -> float32 array (layer_count, dim_per_layer)


class StaticTableModel:
    """Whole-word lookup table; NCE-family models expose a single layer."""

    layer_count = 1

    def __init__(self, path: str):
        self.model_id = f"static:{os.path.basename(path)}"
        self.table: dict = {}
        dim = None
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                fields = raw.split()
                if not fields:
                    continue
                if lineno == 1 and len(fields) == 2 and all(f.isdigit() for f in fields):
                    continue  # optional word2vec-style count/dim header
                word = fields[0]
                try:
                    vec = np.array([float(v) for v in fields[1:]], dtype=np.float32)
                except ValueError as err:
                    raise DumpError("bad-table", f"{path}:{lineno}: {err}") from err
                if vec.size == 0:
                    raise DumpError("bad-table", f"{path}:{lineno}: no values for {word!r}")
                if dim is None:
                    dim = int(vec.size)
                elif vec.size != dim:
                    raise DumpError("bad-table", f"{path}:{lineno}: {vec.size} values, expected {dim}")
                self.table.setdefault(word, vec)
        if dim is None:
            raise DumpError("bad-table", f"{path} holds no vectors")
        self.dim_per_layer = dim

    def encode(self, sentence: str) -> SentenceEncoding:
        matches = list(_TOKEN.finditer(sentence))
        offsets = [(m.start(), m.end()) for m in matches]
        words = [m.group(0) for m in matches]

        def states(t: int):
            word = words[t]
            vec = self.table.get(word)
            if vec is None:
                vec = self.table.get(word.casefold())
            if vec is None:
                raise DumpError("oov-lemma", f"{word!r} is not in the static table")
            return vec.reshape(1, self.dim_per_layer)

        return SentenceEncoding(offsets=offsets, states=states)


class ToyContextualModel:
    """Deterministic stand-in for a contextual encoder.

    Words split into wordpiece-style sub-tokens of at most four characters.
    The embedding layer gives each sub-token a vector seeded by a hash of
    (model seed, sub-token text) plus a position term, like a learned
    position embedding; every later layer mixes each position with its
    neighbors through a fixed tanh recurrence, so states depend on context
    while staying bounded and bit-reproducible.
    """

    def __init__(self, layers: int, dim: int, seed: int = 0):
        if layers < 1 or dim < 1:
            raise DumpError("bad-model", f"need layers >= 1 and dim >= 1, got {layers}x{dim}")
        self.layer_count = int(layers)
        self.dim_per_layer = int(dim)
        self.seed = int(seed)
        self.model_id = f"toy:{layers}x{dim}:{seed}"
        self._token_cache: dict = {}

    def _token_vector(self, piece: str):
        cached = self._token_cache.get(piece)
        if cached is None:
            digest = hashlib.sha256(f"{self.seed}:{piece}".encode("utf-8")).digest()
            rng = np.random.default_rng(list(digest))
            cached = rng.standard_normal(self.dim_per_layer).astype(np.float32)
            self._token_cache[piece] = cached
        return cached

    def encode(self, sentence: str) -> SentenceEncoding:
        offsets = []
        pieces = []
        for m in _TOKEN.finditer(sentence):
            word = m.group(0)
            for i in range(0, len(word), _PIECE):
                offsets.append((m.start() + i, m.start() + min(i + _PIECE, len(word))))
                pieces.append(word[i : i + _PIECE].casefold())
        n = len(pieces)
        hidden = np.zeros((self.layer_count, n, self.dim_per_layer), dtype=np.float32)
        if n:
            base = np.stack([self._token_vector(p) for p in pieces])
            position = np.arange(n, dtype=np.float32)[:, None] / n
            hidden[0] = base + np.float32(0.1) * position
            for k in range(1, self.layer_count):
                prev = hidden[k - 1]
                left = np.roll(prev, 1, axis=0)
                right = np.roll(prev, -1, axis=0)
                left[0] = 0.0
                right[-1] = 0.0
                hidden[k] = np.tanh(prev + np.float32(0.5) * (left + right))

        def states(t: int):
            return hidden[:, t, :].copy()

        return SentenceEncoding(offsets=offsets, states=states)


class TransformersModel:
    """Hugging Face encoder; hidden_states already come embedding layer first.

    Encoder-decoder checkpoints would list decoder layers after the
    encoder's, keeping the embedding-layer-first convention; only encoder
    states are dumped here.
    """

    def __init__(self, tokenizer, model, model_id: str):
        import torch

        self._torch = torch
        self.tokenizer = tokenizer
        self.model = model.eval()
        self.layer_count = int(model.config.num_hidden_layers) + 1
        self.dim_per_layer = int(model.config.hidden_size)
        self.model_id = model_id

    @classmethod
    def pretrained(cls, name_or_path: str) -> "TransformersModel":
        from transformers import AutoModel, AutoTokenizer

        tokenizer = AutoTokenizer.from_pretrained(name_or_path, use_fast=True)
        model = AutoModel.from_pretrained(name_or_path, output_hidden_states=True)
        return cls(tokenizer, model, model_id=f"hf:{name_or_path}")

    def encode(self, sentence: str) -> SentenceEncoding:
        torch = self._torch
        enc = self.tokenizer(
            sentence, return_offsets_mapping=True, return_tensors="pt", truncation=True
        )
        offsets = [(int(s), int(e)) for s, e in enc.pop("offset_mapping")[0].tolist()]
        with torch.no_grad():
            out = self.model(**enc, output_hidden_states=True)
        hidden = torch.stack(out.hidden_states)[:, 0].to(torch.float32).cpu().numpy()

        def states(t: int):
            return hidden[:, t, :].copy()

        return SentenceEncoding(offsets=offsets, states=states)


def load_model(spec: str, seed: int = 0):
    """Parse a backend spec: static:PATH, toy:LAYERSxDIM, or hf:NAME."""
    scheme, sep, rest = spec.partition(":")
    if not sep or not rest:
        raise DumpError("bad-model", f"model spec {spec!r} needs a scheme prefix")
    if scheme == "static":
        return StaticTableModel(rest)
    if scheme == "toy":
        shape = rest.split("x")
        if len(shape) != 2 or not all(p.isdigit() and int(p) > 0 for p in shape):
            raise DumpError("bad-model", f"toy spec {rest!r} is not LAYERSxDIM")
        return ToyContextualModel(int(shape[0]), int(shape[1]), seed=seed)
    if scheme == "hf":
        return TransformersModel.pretrained(rest)
    raise DumpError("bad-model", f"unknown model scheme {scheme!r}")
