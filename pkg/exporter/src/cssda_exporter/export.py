"""Export text CSVs to CSSDAEMB embedding files, with a manifest for
after-the-fact integrity checks.

Input CSV: header `id,text` or `id,text,label`. Output row order equals
input order; the emitted labels CSV is positional (`id` column is the
0-based row index), which is the alignment the embedding consumer expects.

CSSDAEMB layout (the interchange contract, reproduced here rather than
imported): magic "CSSDAEMB", little-endian u32 version=1, u32 count,
u32 dim, then count*dim float32 row-major values. No padding, no trailer.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import make_encoder
from .errors import DataError, FormatError

EMB_MAGIC = b"CSSDAEMB"
EMB_VERSION = 1
_HEADER = struct.Struct("<8sIII")

_BATCH = 32


@dataclass(frozen=True)
class ExportManifest:
    encoder_name: str
    dim: int
    count: int
    content_hash: str  # sha256 of the emitted embedding file, hex

    def as_dict(self) -> dict:
        return {"encoder_name": self.encoder_name, "dim": self.dim,
                "count": self.count, "content_hash": self.content_hash}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ExportManifest":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: invalid manifest JSON ({exc})")
        missing = {"encoder_name", "dim", "count", "content_hash"} - set(raw)
        if missing:
            raise FormatError(f"{path}: manifest missing {sorted(missing)}")
        return cls(encoder_name=str(raw["encoder_name"]), dim=int(raw["dim"]),
                   count=int(raw["count"]),
                   content_hash=str(raw["content_hash"]))


@dataclass
class ExportResult:
    manifest: ExportManifest
    embeddings_path: Path
    labels_path: Path
    manifest_path: Path
    warnings: list[str]


def read_texts(path) -> list[tuple[str, str, str]]:
    """Rows as (id, text, label); label is "" when the column is absent."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty texts file")
        header = [h.strip() for h in header]
        if header not in (["id", "text"], ["id", "text", "label"]):
            raise FormatError(f"{path}: expected header 'id,text[,label]', "
                              f"got {header}")
        width = len(header)
        rows: list[tuple[str, str, str]] = []
        seen: set[str] = set()
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue  # tolerate a blank trailing line
            if len(row) != width:
                raise FormatError(f"{path}:{line_no}: expected {width} fields, "
                                  f"got {len(row)}")
            sample_id = row[0]
            if sample_id == "":
                raise DataError(f"{path}:{line_no}: empty id")
            if sample_id in seen:
                raise DataError(f"{path}:{line_no}: duplicate id {sample_id!r}")
            seen.add(sample_id)
            rows.append((sample_id, row[1], row[2] if width == 3 else ""))
    if not rows:
        raise DataError(f"{path}: no data rows")
    return rows


def _write_embeddings(path, vectors: np.ndarray) -> None:
    if not np.all(np.isfinite(vectors)):
        raise DataError("encoder produced a non-finite value")
    payload = np.ascontiguousarray(vectors, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMB_MAGIC, EMB_VERSION,
                              payload.shape[0], payload.shape[1]))
        fh.write(payload.tobytes())


def _write_labels(path, rows: list[tuple[str, str, str]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "label"])
    for position, (_, _, label) in enumerate(rows):
        writer.writerow([position, label])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def export(texts_csv, encoder_name: str, out_path,
           labels_path=None, manifest_path=None) -> ExportResult:
    """Embed every text row and write embeddings + labels CSV + manifest.

    Sidecar paths default to `<out stem>.labels.csv` / `<out stem>.manifest.json`
    next to out_path. Empty texts are embedded anyway and reported in
    warnings, as are rows truncated to the encoder's sequence cap.
    """
    out_path = Path(out_path)
    base = out_path.with_suffix("") if out_path.suffix else out_path
    labels_path = Path(labels_path) if labels_path else \
        base.with_name(base.name + ".labels.csv")
    manifest_path = Path(manifest_path) if manifest_path else \
        base.with_name(base.name + ".manifest.json")

    rows = read_texts(texts_csv)
    encoder = make_encoder(encoder_name)
    warnings = [f"row {i} (id {rows[i][0]!r}): empty text, embedded anyway"
                for i, (_, text, _) in enumerate(rows) if text.strip() == ""]

    chunks = []
    for start in range(0, len(rows), _BATCH):
        batch = rows[start:start + _BATCH]
        vectors, truncated = encoder.encode_batch([text for _, text, _ in batch])
        chunks.append(vectors)
        warnings += [f"row {start + j} (id {batch[j][0]!r}): truncated to "
                     f"{encoder.max_tokens} tokens"
                     for j, was_cut in enumerate(truncated) if was_cut]
    vectors = np.concatenate(chunks, axis=0)

    _write_embeddings(out_path, vectors)
    _write_labels(labels_path, rows)
    manifest = ExportManifest(encoder_name=encoder_name,
                              dim=int(vectors.shape[1]),
                              count=int(vectors.shape[0]),
                              content_hash=_sha256(out_path))
    manifest.save(manifest_path)
    return ExportResult(manifest=manifest, embeddings_path=out_path,
                        labels_path=labels_path, manifest_path=manifest_path,
                        warnings=warnings)


def verify(emb_path, manifest) -> list[str]:
    """Recompute header fields and content hash; return mismatch descriptions
    (empty list means the file matches its manifest)."""
    if not isinstance(manifest, ExportManifest):
        manifest = ExportManifest.load(manifest)
    with open(emb_path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        return [f"format: {emb_path} is shorter than a CSSDAEMB header"]
    magic, version, count, dim = _HEADER.unpack_from(blob)
    problems = []
    if magic != EMB_MAGIC:
        return [f"format: bad magic {magic!r}"]
    if version != EMB_VERSION:
        problems.append(f"format: unsupported version {version}")
    if len(blob) != _HEADER.size + 4 * count * dim:
        problems.append(f"format: size {len(blob)} does not match header "
                        f"count={count} dim={dim}")
    if dim != manifest.dim:
        problems.append(f"dim: header {dim} != manifest {manifest.dim}")
    if count != manifest.count:
        problems.append(f"count: header {count} != manifest {manifest.count}")
    actual_hash = hashlib.sha256(blob).hexdigest()
    if actual_hash != manifest.content_hash:
        problems.append(f"content_hash: file {actual_hash} != manifest "
                        f"{manifest.content_hash}")
    return problems
