"""Dump per-layer hidden states for annotated occurrences into EMB1 files.

Each gloss occurrence's sentence is encoded once (encodings are cached per
run and models are deterministic), the annotated character span is aligned
to the first token it overlaps, and that token's per-layer states, embedding
layer first, become the record for key synset_id#idx. Spans no token covers
are logged and skipped; skipped occurrences keep their gap in the per-synset
numbering so surviving keys still match the sentence indices example files
use. A JSON manifest sidecar (<out>.manifest.json) records the model id, the
layer inventory and concatenation order, the dump date, the skip list, and
the output checksum. verify() replays the contract against a file and
returns per-check results instead of raising.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .emb1 import HEADER, MAGIC, atomic_write_bytes, write_records
from .glosses import DumpError, read_glosses

log = logging.getLogger("embdump")

TOKEN_POLICY = "first-subtoken-of-span"
LAYER_ORDER = "embedding-layer-first"
MANIFEST_SUFFIX = ".manifest.json"


@dataclass(frozen=True)
class DumpSpec:
    """What a run promises: model, layer inventory, span-to-token policy,
    and the occurrence list it covers."""

    model_id: str
    layer_count: int
    dim_per_layer: int
    glosses_path: str
    token_policy: str = TOKEN_POLICY

    @classmethod
    def for_model(cls, model, glosses_path: str) -> "DumpSpec":
        return cls(
            model_id=model.model_id,
            layer_count=model.layer_count,
            dim_per_layer=model.dim_per_layer,
            glosses_path=glosses_path,
        )


@dataclass(frozen=True)
class DumpResult:
    path: str
    manifest_path: str
    n_records: int
    skipped: list  # (key, reason) pairs
    checksum: str


def align_span(offsets, span) -> int | None:
    """Index of the first token overlapping the span, or None.

    Sub-token offsets partition each word, so the first overlapping token is
    the first sub-token of the first annotated word. Empty ranges (special
    tokens) never match."""
    start, end = span
    for i, (s, e) in enumerate(offsets):
        if e > s and e > start and s < end:
            return i
    return None


def sha256_bytes(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def dump(spec: DumpSpec, model, out_path: str) -> DumpResult:
    if (model.layer_count, model.dim_per_layer) != (spec.layer_count, spec.dim_per_layer):
        raise DumpError(
            "inventory-mismatch",
            f"model yields {model.layer_count}x{model.dim_per_layer}, "
            f"spec declares {spec.layer_count}x{spec.dim_per_layer}",
        )
    occurrences = read_glosses(spec.glosses_path)
    if not occurrences:
        raise DumpError("no-records", f"{spec.glosses_path} holds no occurrences")
    encodings: dict = {}
    keys: list = []
    rows: list = []
    skipped: list = []
    for occ in occurrences:
        enc = encodings.get(occ.sentence)
        if enc is None:
            enc = model.encode(occ.sentence)
            encodings[occ.sentence] = enc
        t = align_span(enc.offsets, occ.span)
        if t is None:
            log.warning("skipping %s: span %s aligns to no token", occ.key, list(occ.span))
            skipped.append((occ.key, "unalignable-span"))
            continue
        states = np.asarray(enc.states(t), dtype=np.float32)
        if states.shape != (spec.layer_count, spec.dim_per_layer):
            raise DumpError(
                "inventory-mismatch",
                f"{occ.key}: states shape {states.shape} != "
                f"({spec.layer_count}, {spec.dim_per_layer})",
            )
        keys.append(occ.key)
        rows.append(states.reshape(-1))
    if not keys:
        raise DumpError("no-records", "every occurrence was skipped")
    if skipped:
        log.warning("skipped %d of %d occurrences", len(skipped), len(occurrences))
    write_records(out_path, keys, np.stack(rows), spec.layer_count, spec.dim_per_layer)
    with open(out_path, "rb") as fh:
        checksum = sha256_bytes(fh.read())
    manifest = {
        "format": "EMB1",
        "model_id": spec.model_id,
        "layer_count": spec.layer_count,
        "dim_per_layer": spec.dim_per_layer,
        "concat_dim": spec.layer_count * spec.dim_per_layer,
        "layer_order": LAYER_ORDER,
        "token_policy": spec.token_policy,
        "glosses": spec.glosses_path,
        "n_occurrences": len(occurrences),
        "n_records": len(keys),
        "n_skipped": len(skipped),
        "skipped": [{"key": k, "reason": r} for k, r in skipped],
        "dump_date": datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "checksum_sha256": checksum,
    }
    manifest_path = out_path + MANIFEST_SUFFIX
    atomic_write_bytes(
        manifest_path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8")
    )
    return DumpResult(out_path, manifest_path, len(keys), skipped, checksum)


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


@dataclass(frozen=True)
class VerifyReport:
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [{"name": c.name, "ok": c.ok, "detail": c.detail} for c in self.checks],
        }


def _walk_index(blob: bytes, n: int) -> tuple:
    """Return (keys, data_offset) or raise DumpError("truncated")."""
    offset = 16
    keys = []
    for _ in range(n):
        if offset + 2 > len(blob):
            raise DumpError("truncated", "index block ends mid-record")
        (key_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if offset + key_len > len(blob):
            raise DumpError("truncated", "key bytes run past end of file")
        keys.append(blob[offset : offset + key_len].decode("utf-8"))
        offset += key_len
    return keys, offset


def verify(emb_path: str, spec: DumpSpec) -> VerifyReport:
    """Five checks: manifest, header, records, finite, checksum. Any
    mismatch, truncation, or unreadable input fails its check; verify never
    raises on file content."""
    checks = []

    manifest = None
    manifest_path = emb_path + MANIFEST_SUFFIX
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        checks.append(CheckResult("manifest", False, f"unreadable: {err}"))
    if manifest is not None:
        bad = [
            f"{name} {manifest.get(name)!r} != {want!r}"
            for name, want in (
                ("model_id", spec.model_id),
                ("layer_count", spec.layer_count),
                ("dim_per_layer", spec.dim_per_layer),
                ("layer_order", LAYER_ORDER),
            )
            if manifest.get(name) != want
        ]
        checks.append(CheckResult("manifest", not bad, "; ".join(bad) or manifest_path))

    try:
        with open(emb_path, "rb") as fh:
            blob = fh.read()
    except OSError as err:
        blob = None
        checks.append(CheckResult("header", False, f"unreadable: {err}"))

    n = layer_count = dim = None
    if blob is not None:
        if len(blob) < 16 or blob[:4] != MAGIC:
            checks.append(
                CheckResult("header", False, f"not an EMB1 header in the first {min(len(blob), 16)} bytes")
            )
        else:
            n, layer_count, dim = HEADER.unpack_from(blob, 4)
            ok = (layer_count, dim) == (spec.layer_count, spec.dim_per_layer)
            checks.append(
                CheckResult(
                    "header",
                    ok,
                    f"layer_count={layer_count} dim_per_layer={dim}"
                    + ("" if ok else f", expected {spec.layer_count}x{spec.dim_per_layer}"),
                )
            )

    expected = None
    try:
        occurrences = read_glosses(spec.glosses_path)
        n_skipped = int(manifest.get("n_skipped", 0)) if manifest else 0
        expected = len(occurrences) - n_skipped
    except (OSError, DumpError, TypeError, ValueError) as err:
        checks.append(CheckResult("records", False, f"cannot count occurrences: {err}"))

    values = None
    if expected is not None:
        if n is None:
            checks.append(CheckResult("records", False, "not counted: header unreadable"))
        else:
            # Truncation scan uses the file's own geometry; the header check
            # above already covers any disagreement with the requested inventory.
            try:
                keys, data_offset = _walk_index(blob, n)
                width = layer_count * dim
                data_bytes = len(blob) - data_offset
                if data_bytes != n * width * 4:
                    raise DumpError(
                        "truncated", f"data block holds {data_bytes} bytes, expected {n * width * 4}"
                    )
                if len(set(keys)) != n:
                    raise DumpError("duplicate-key", "file contains duplicate keys")
                if n != expected:
                    raise DumpError("truncated", f"{n} records, expected {expected}")
                values = np.frombuffer(blob, dtype="<f4", count=n * width, offset=data_offset)
                checks.append(
                    CheckResult("records", True, f"{n} records match {expected} dumpable occurrences")
                )
            except (DumpError, UnicodeDecodeError) as err:
                checks.append(CheckResult("records", False, str(err)))

    if values is not None:
        n_bad = int(np.size(values) - np.isfinite(values).sum())
        checks.append(
            CheckResult("finite", n_bad == 0, "all values finite" if n_bad == 0 else f"{n_bad} non-finite values")
        )
    else:
        checks.append(CheckResult("finite", False, "not scanned: records unreadable"))

    if manifest is not None and blob is not None:
        want = manifest.get("checksum_sha256")
        got = sha256_bytes(blob)
        checks.append(
            CheckResult("checksum", want == got, f"sha256 {got}" if want == got else f"sha256 {got} != manifest {want}")
        )
    else:
        checks.append(CheckResult("checksum", False, "not compared: manifest or file unreadable"))

    return VerifyReport(checks=checks)
