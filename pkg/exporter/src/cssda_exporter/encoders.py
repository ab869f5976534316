"""Sentence encoders: a pretrained-transformer CLS backend and a hash-seeded
deterministic backend for hermetic pipelines and tests.

Both expose `dim`, `max_tokens`, and `encode_batch(texts) -> (vectors,
truncated)` where vectors is float32 (n, dim) and truncated marks rows whose
text exceeded max_tokens before encoding.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .errors import EncoderError

HASH_ENCODER = "hash"


class HashEncoder:
    """Deterministic stand-in encoder: each text maps to a fixed pseudo-random
    768-dim vector seeded by its SHA-256. No semantic content — it exists so
    the export pipeline and its consumers can be exercised without model
    weights, with real-encoder-like length handling."""

    name = HASH_ENCODER
    dim = 768
    max_tokens = 256  # whitespace tokens, mirroring a typical sequence cap

    def encode_batch(self, texts: list[str]):
        vectors = np.empty((len(texts), self.dim), dtype=np.float32)
        truncated = []
        for i, text in enumerate(texts):
            tokens = text.split()
            truncated.append(len(tokens) > self.max_tokens)
            kept = " ".join(tokens[: self.max_tokens])
            digest = hashlib.sha256(kept.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:16], "little"))
            vectors[i] = rng.standard_normal(self.dim, dtype=np.float32)
        return vectors, truncated


class TransformerEncoder:
    """CLS-token vectors from a pretrained transformer (HuggingFace name or
    local directory). Tokenization truncates to the model's sequence cap."""

    def __init__(self, name: str):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise EncoderError(
                f"encoder {name!r} needs the 'hf' extra "
                f"(pip install cssda-exporter[hf]): {exc}")
        self.name = name
        self._torch = torch
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(name)
            self.model = AutoModel.from_pretrained(name)
        except Exception as exc:
            raise EncoderError(f"cannot load encoder {name!r}: {exc}")
        self.model.eval()
        self.dim = int(self.model.config.hidden_size)
        cap = int(getattr(self.tokenizer, "model_max_length", 512))
        self.max_tokens = min(cap, 4096)  # some tokenizers report a sentinel

    def encode_batch(self, texts: list[str]):
        truncated = [len(self.tokenizer.encode(t)) > self.max_tokens
                     for t in texts]
        batch = self.tokenizer(texts, return_tensors="pt", padding=True,
                               truncation=True, max_length=self.max_tokens)
        with self._torch.no_grad():
            hidden = self.model(**batch).last_hidden_state
        return hidden[:, 0, :].cpu().numpy().astype(np.float32), truncated


def make_encoder(name: str):
    if name == HASH_ENCODER:
        return HashEncoder()
    return TransformerEncoder(name)
