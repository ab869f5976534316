"""Dataset ingestion, label handling, split schemes, batching, and synthetic
cluster generation.

On-disk formats (stable interfaces):
  * embeddings: magic "CSSDAEMB", little-endian u32 version=1, u32 count,
    u32 dim, then count*dim little-endian float32 values row-major; no
    padding, no trailer.
  * labels: CSV with header "id,label"; id is the embedding row index,
    label is a vocab string or empty for unlabeled; UTF-8, LF.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, FormatError

EMB_MAGIC = b"CSSDAEMB"
EMB_VERSION = 1
_HEADER = struct.Struct("<8sIII")


@dataclass(frozen=True)
class LabelVocab:
    """Ordered class names; index k (one past the last real class) is the
    implicit fake class and never appears in data."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) == 0:
            raise ValueError("vocab must name at least one class")
        if len(set(self.names)) != len(self.names):
            raise ValueError("vocab names must be unique")
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def k(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown label {name!r}; vocab is {list(self.names)}")


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("embedding must be a non-empty vector")
        if not np.all(np.isfinite(v)):
            raise DataError("non-finite embedding value")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class Sample:
    id: int
    embedding: EmbeddingVector
    label: int | None  # class index < k, or None when unlabeled


class Dataset:
    """Immutable sample collection with consistent dimension and label range."""

    def __init__(self, samples: list[Sample], vocab: LabelVocab):
        if not samples:
            raise DataError("dataset has no samples")
        dim = samples[0].embedding.dim
        seen: set[int] = set()
        for s in samples:
            if s.id < 0 or s.id in seen:
                raise DataError(f"duplicate or negative sample id {s.id}")
            seen.add(s.id)
            if s.embedding.dim != dim:
                raise DataError("inconsistent embedding dimensions")
            if s.label is not None and not 0 <= s.label < vocab.k:
                raise DataError(f"label index {s.label} out of range for k={vocab.k}")
        self.samples: tuple[Sample, ...] = tuple(samples)
        self.vocab = vocab
        self.dim = dim

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def k(self) -> int:
        return self.vocab.k

    def labeled(self) -> list[Sample]:
        return [s for s in self.samples if s.label is not None]

    def unlabeled(self) -> list[Sample]:
        return [s for s in self.samples if s.label is None]

    def class_counts(self) -> np.ndarray:
        counts = np.zeros(self.k, dtype=np.int64)
        for s in self.samples:
            if s.label is not None:
                counts[s.label] += 1
        return counts

    def matrix(self) -> np.ndarray:
        return np.stack([s.embedding.values for s in self.samples])


# ---------------------------------------------------------------------------
# binary embedding format


def save_embeddings(path, vectors) -> None:
    arrs = [np.asarray(getattr(v, "values", v), dtype=np.float64) for v in vectors]
    if not arrs:
        raise DataError("refusing to write an embedding file with zero rows")
    dim = arrs[0].size
    if any(a.ndim != 1 or a.size != dim for a in arrs):
        raise DataError("all embedding rows must share one dimension")
    payload = np.stack(arrs).astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise DataError("non-finite embedding value")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMB_MAGIC, EMB_VERSION, len(arrs), dim))
        fh.write(payload.tobytes(order="C"))


def load_embeddings(path) -> list[EmbeddingVector]:
    """Read a CSSDAEMB file; row i gets id i at dataset assembly."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated or empty embedding file")
    magic, version, count, dim = _HEADER.unpack_from(blob)
    if magic != EMB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != EMB_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dim == 0:
        raise FormatError(f"{path}: zero dimension")
    expected = _HEADER.size + 4 * count * dim
    if len(blob) != expected:
        raise FormatError(f"{path}: payload is {len(blob) - _HEADER.size} bytes, "
                          f"header implies {expected - _HEADER.size}")
    flat = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    rows = flat.reshape(count, dim).astype(np.float64)
    if not np.all(np.isfinite(rows)):
        raise DataError(f"{path}: non-finite embedding value")
    return [EmbeddingVector(rows[i]) for i in range(count)]


# ---------------------------------------------------------------------------
# labels CSV


def save_labels(path, labels: dict[int, int | None] | list[int | None],
                vocab: LabelVocab) -> None:
    if isinstance(labels, dict):
        items = sorted(labels.items())
    else:
        items = list(enumerate(labels))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "label"])
    for sample_id, label in items:
        writer.writerow([sample_id, "" if label is None else vocab.names[label]])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def load_labels(path, vocab: LabelVocab) -> dict[int, int | None]:
    """Read an id,label CSV; empty label string means unlabeled."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty labels file")
        if [h.strip() for h in header] != ["id", "label"]:
            raise FormatError(f"{path}: expected header 'id,label', got {header}")
        out: dict[int, int | None] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue  # tolerate a trailing blank line
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            raw_id, raw_label = row
            try:
                sample_id = int(raw_id)
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad id {raw_id!r}")
            if sample_id in out:
                raise DataError(f"{path}:{lineno}: duplicate id {sample_id}")
            out[sample_id] = None if raw_label == "" else vocab.index(raw_label)
    return out


def assemble_dataset(embeddings: list[EmbeddingVector],
                     labels: dict[int, int | None],
                     vocab: LabelVocab) -> Dataset:
    """Join embeddings (row i = id i) with a label mapping covering every row."""
    if set(labels) != set(range(len(embeddings))):
        missing = sorted(set(range(len(embeddings))) - set(labels))[:5]
        extra = sorted(set(labels) - set(range(len(embeddings))))[:5]
        raise DataError(f"label ids do not cover embedding rows exactly "
                        f"(missing {missing}, extra {extra})")
    samples = [Sample(i, emb, labels[i]) for i, emb in enumerate(embeddings)]
    return Dataset(samples, vocab)


# ---------------------------------------------------------------------------
# split scheme


def _stratified_quotas(counts: np.ndarray, m: int) -> np.ndarray:
    """Largest-remainder allocation of m kept labels across classes,
    proportional to class counts, with at least 1 per non-empty class when
    m allows it. Deterministic; ties broken by class index."""
    n = int(counts.sum())
    exact = counts * (m / n)
    base = np.minimum(np.floor(exact + 1e-9).astype(np.int64), counts)
    leftover = m - int(base.sum())
    if leftover < 0:  # float-guard overshoot; trim from the largest quotas
        for _ in range(-leftover):
            base[int(np.argmax(base))] -= 1
        leftover = 0
    remainders = exact - base
    order = sorted(range(len(counts)),
                   key=lambda c: (-remainders[c], c))
    for c in order:
        if leftover == 0:
            break
        if base[c] < counts[c]:
            base[c] += 1
            leftover -= 1
    if m >= len(counts):
        # no class may end up stripped of every label
        for c in range(len(counts)):
            if counts[c] > 0 and base[c] == 0:
                donor = int(np.argmax(base))
                base[donor] -= 1
                base[c] = 1
    return base


def split_scheme(dataset: Dataset, labeled_fraction: float, seed: int) -> Dataset:
    """Keep labels on ceil(fraction * n) samples, stratified by class, and
    strip the rest. Input must be fully labeled."""
    if not 0.0 < labeled_fraction <= 1.0:
        raise ValueError(f"labeled_fraction must be in (0, 1], got {labeled_fraction}")
    if any(s.label is None for s in dataset.samples):
        raise DataError("split_scheme input must be fully labeled")
    if labeled_fraction == 1.0:
        return dataset
    n = len(dataset)
    # guard against 0.1 * 500 = 50.000000000000007 -> ceil 51
    m = math.ceil(labeled_fraction * n - 1e-9)
    quotas = _stratified_quotas(dataset.class_counts(), m)
    rng = np.random.default_rng(seed)
    keep: set[int] = set()
    for c in range(dataset.k):
        ids = np.array([s.id for s in dataset.samples if s.label == c])
        rng.shuffle(ids)
        keep.update(int(i) for i in ids[:quotas[c]])
    samples = [s if s.id in keep else Sample(s.id, s.embedding, None)
               for s in dataset.samples]
    return Dataset(samples, dataset.vocab)


# ---------------------------------------------------------------------------
# batching


def batch_iter(dataset: Dataset, batch_size: int, seed: int, epoch: int):
    """Yield lists of samples for one epoch: a seeded per-epoch shuffle that
    interleaves labeled and unlabeled samples at the dataset's global ratio,
    so every batch keeps both loss terms defined. Final partial batch is
    emitted."""
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    labeled = dataset.labeled()
    unlabeled = dataset.unlabeled()
    if not labeled:
        raise ConfigError("training requires at least one labeled sample")
    rng = np.random.default_rng(seed ^ epoch)
    lab_idx = rng.permutation(len(labeled))
    unl_idx = rng.permutation(len(unlabeled))
    n = len(dataset)
    order: list[Sample] = []
    li = ui = acc = 0
    for _ in range(n):
        acc += len(labeled)
        take_labeled = acc >= n
        if take_labeled and li < len(labeled):
            order.append(labeled[lab_idx[li]])
            li += 1
            acc -= n
        elif ui < len(unlabeled):
            order.append(unlabeled[unl_idx[ui]])
            ui += 1
            if take_labeled:
                acc -= n
        else:
            order.append(labeled[lab_idx[li]])
            li += 1
            acc -= n
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# ---------------------------------------------------------------------------
# synthetic data


def _orthonormal_directions(k: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """k orthonormal dim-vectors via modified Gram-Schmidt on rng draws.
    Avoids LAPACK so results are bit-stable across BLAS builds."""
    dirs = np.zeros((k, dim))
    made = 0
    while made < k:
        v = rng.normal(size=dim)
        for j in range(made):
            v -= (dirs[j] @ v) * dirs[j]
        norm = float(np.linalg.norm(v))
        if norm > 1e-6:  # essentially always on the first try
            dirs[made] = v / norm
            made += 1
    return dirs


def _per_class_counts(k: int, per_class) -> list[int]:
    counts = [int(per_class)] * k if np.isscalar(per_class) else [int(c) for c in per_class]
    if len(counts) != k or any(c < 1 for c in counts):
        raise ValueError("per_class must be a positive int or k positive ints")
    return counts


def _default_vocab(k: int) -> LabelVocab:
    return LabelVocab(tuple(f"class{c}" for c in range(k)))


def synth_clusters(k: int, dim: int, per_class, separation: float,
                   noise_sd: float, seed: int,
                   vocab: LabelVocab | None = None) -> Dataset:
    """Fully labeled Gaussian clusters with mutual centroid distance exactly
    `separation` (means sit on orthonormal directions scaled by sep/sqrt(2))."""
    if k < 2 or dim < 2:
        raise ValueError("need k >= 2 and dim >= 2")
    if separation <= 0.0 or noise_sd < 0.0:
        raise ValueError("separation must be positive and noise_sd non-negative")
    counts = _per_class_counts(k, per_class)
    if dim < k:
        raise ValueError("dim must be >= k for orthogonal cluster means")
    rng = np.random.default_rng(seed)
    means = _orthonormal_directions(k, dim, rng) * (separation / math.sqrt(2.0))
    return _clusters_from_means(means, counts, noise_sd, rng,
                                vocab or _default_vocab(k))


def _clusters_from_means(means: np.ndarray, counts: list[int], noise_sd: float,
                         rng: np.random.Generator, vocab: LabelVocab) -> Dataset:
    samples: list[Sample] = []
    sample_id = 0
    for c, n_c in enumerate(counts):
        noise = rng.normal(scale=noise_sd, size=(n_c, means.shape[1])) \
            if noise_sd > 0 else np.zeros((n_c, means.shape[1]))
        for row in noise:
            samples.append(Sample(sample_id, EmbeddingVector(means[c] + row), c))
            sample_id += 1
    return Dataset(samples, vocab)


def make_benchmark(k: int, dim: int, train_per_class, test_per_class,
                   separation: float, noise_sd: float, seed: int) -> tuple[Dataset, Dataset]:
    """Train/test cluster pair sharing the same means but independent noise."""
    if k < 2 or dim < k:
        raise ValueError("need k >= 2 and dim >= k")
    if separation <= 0.0 or noise_sd < 0.0:
        raise ValueError("separation must be positive and noise_sd non-negative")
    train_counts = _per_class_counts(k, train_per_class)
    test_counts = _per_class_counts(k, test_per_class)
    root = np.random.SeedSequence(seed)
    means_ss, train_ss, test_ss = root.spawn(3)
    means = _orthonormal_directions(k, dim, np.random.default_rng(means_ss)) \
        * (separation / math.sqrt(2.0))
    vocab = _default_vocab(k)
    train = _clusters_from_means(means, train_counts, noise_sd,
                                 np.random.default_rng(train_ss), vocab)
    test = _clusters_from_means(means, test_counts, noise_sd,
                                np.random.default_rng(test_ss), vocab)
    return train, test
