"""Annotated gloss occurrences, the adapter's unit of work.

Input is glosses.jsonl, one object per line: {"synset_id": str, "sentence":
str, "span": [start, end]} with character offsets into the sentence. Each
occurrence gets the key "synset_id#idx" where idx counts that synset's
occurrences in file order, so keys keep lining up with the sentence indices
used by downstream example files even when some occurrences are skipped
later in the pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass


class DumpError(ValueError):
    """Adapter failure; code is one of "bad-gloss", "bad-table", "oov-lemma",
    "bad-model", "inventory-mismatch", "no-records", "bad-magic",
    "truncated", "duplicate-key", "non-finite", "bad-key"."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class Occurrence:
    key: str  # synset_id#idx, idx in per-synset file order
    synset_id: str
    sentence: str
    span: tuple  # (start, end) character offsets, start < end


def read_glosses(path: str) -> list:
    out = []
    counts: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                sid = obj["synset_id"]
                sentence = obj["sentence"]
                start, end = obj["span"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
                raise DumpError("bad-gloss", f"{path}:{lineno}: {err}") from err
            if not (isinstance(start, int) and isinstance(end, int) and 0 <= start < end <= len(sentence)):
                raise DumpError("bad-gloss", f"{path}:{lineno}: span {obj['span']} outside sentence bounds")
            idx = counts.get(sid, 0)
            counts[sid] = idx + 1
            out.append(Occurrence(key=f"{sid}#{idx}", synset_id=sid, sentence=sentence, span=(start, end)))
    return out
