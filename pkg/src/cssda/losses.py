"""Training losses for the adversarial augmentation scheme.

Four objectives — supervised cross-entropy, discriminator-unsupervised,
generator feature matching, generator-unsupervised — each in a derived
(stabilized) form. The unsupervised pair also exists in a naive form that
evaluates Z = sum(exp(logits)) directly without max-shift: it serves both as
an independent correctness oracle in tests and as a first-class ablation arm,
and it overflows by design on extreme logits.

Convention: the discriminator emits k real-class logits; the fake-class logit
is fixed at zero, so D(v) = Z/(Z+1) = sigmoid(lse(logits)) is the probability
the input is real. Expectations are mini-batch means. Either the real or the
fake batch may be empty for the discriminator-unsupervised losses (that term
contributes 0); both empty is a configuration error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .numerics import lse_rows, sigmoid, softmax_rows, softplus


def _as_logits_batch(logits, name: str) -> np.ndarray:
    v = np.asarray(logits, dtype=np.float64)
    if v.ndim == 1:
        v = v[None, :]
    if v.ndim != 2:
        raise ValueError(f"{name} must be a (n, k) batch of logits")
    if not np.all(np.isfinite(v)):
        raise NumericError(f"non-finite value in {name}")
    return v


@dataclass
class LossBreakdown:
    """Per-step (or per-epoch mean) loss components."""

    d_supervised: float
    d_unsupervised: float
    d_total: float
    g_feature_match: float
    g_unsupervised: float
    g_total: float

    @classmethod
    def from_parts(cls, d_supervised: float, d_unsupervised: float,
                   g_feature_match: float, g_unsupervised: float) -> "LossBreakdown":
        parts = (d_supervised, d_unsupervised, g_feature_match, g_unsupervised)
        if not all(np.isfinite(p) for p in parts):
            raise NumericError("non-finite loss component")
        return cls(d_supervised=float(d_supervised),
                   d_unsupervised=float(d_unsupervised),
                   d_total=float(d_supervised + d_unsupervised),
                   g_feature_match=float(g_feature_match),
                   g_unsupervised=float(g_unsupervised),
                   g_total=float(g_feature_match + g_unsupervised))

    def as_dict(self) -> dict[str, float]:
        return {
            "d_supervised": self.d_supervised,
            "d_unsupervised": self.d_unsupervised,
            "d_total": self.d_total,
            "g_feature_match": self.g_feature_match,
            "g_unsupervised": self.g_unsupervised,
            "g_total": self.g_total,
        }


# ---------------------------------------------------------------------------
# supervised cross-entropy over the k real classes


def supervised_loss(logits_batch, labels) -> float:
    """Mean of lse(l) - l[label] over the batch; 0.0 for an empty batch.

    Softmax runs over the k real logits only: a labeled sample is real by
    construction, so the fake class is excluded from the conditioning.
    """
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.size == 0:
        return 0.0
    l = _as_logits_batch(logits_batch, "logits_batch")
    if l.shape[0] != y.size:
        raise ValueError("batch size mismatch between logits and labels")
    if np.any(y < 0) or np.any(y >= l.shape[1]):
        raise ValueError("label index out of range")
    return float(np.mean(lse_rows(l) - l[np.arange(y.size), y]))


def supervised_loss_grad(logits_batch, labels) -> np.ndarray:
    """d(supervised_loss)/d(logits): (softmax(l) - onehot(y)) / n."""
    l = _as_logits_batch(logits_batch, "logits_batch")
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n = y.size
    grad = softmax_rows(l)
    grad[np.arange(n), y] -= 1.0
    return grad / n


# ---------------------------------------------------------------------------
# discriminator unsupervised: -E log D(v_real) - E log(1 - D(v_fake))


def _split_unsup_batches(real_logits_batch, fake_logits_batch):
    real = (None if real_logits_batch is None or np.size(real_logits_batch) == 0
            else _as_logits_batch(real_logits_batch, "real_logits_batch"))
    fake = (None if fake_logits_batch is None or np.size(fake_logits_batch) == 0
            else _as_logits_batch(fake_logits_batch, "fake_logits_batch"))
    if real is None and fake is None:
        raise ConfigError("both real and fake batches are empty")
    return real, fake


def d_unsup_derived(real_logits_batch, fake_logits_batch) -> float:
    """Stabilized form: mean_real[softplus(-lse(l))] + mean_fake[softplus(lse(l))].

    softplus(lse(l)) = log(Z + 1), so the fake term is -log(1/(Z+1)); the real
    term -log(Z/(Z+1)) = softplus(lse) - lse folds to softplus(-lse), which
    avoids cancellation when the loss is tiny. Finite for any finite logits.
    """
    real, fake = _split_unsup_batches(real_logits_batch, fake_logits_batch)
    total = 0.0
    if real is not None:
        total += float(np.mean(softplus(-lse_rows(real))))
    if fake is not None:
        total += float(np.mean(softplus(lse_rows(fake))))
    return total


def d_unsup_derived_grad(real_logits_batch, fake_logits_batch):
    """Gradients w.r.t. (real_logits, fake_logits); None for an absent batch.

    Real side: (D - 1) * softmax(l) / n_real; fake side: D * softmax(l) / n_fake,
    with D = sigmoid(lse(l)) per sample.
    """
    real, fake = _split_unsup_batches(real_logits_batch, fake_logits_batch)
    grad_real = grad_fake = None
    if real is not None:
        # D - 1 = -(1 - D) = -1/(Z+1), computed without cancellation
        one_minus_d = np.exp(-softplus(lse_rows(real)))
        grad_real = -one_minus_d[:, None] * softmax_rows(real) / real.shape[0]
    if fake is not None:
        d = sigmoid(lse_rows(fake))
        grad_fake = d[:, None] * softmax_rows(fake) / fake.shape[0]
    return grad_real, grad_fake


def _naive_z(logits: np.ndarray, what: str) -> np.ndarray:
    # deliberately no max-shift: exp overflows to inf for logits >= ~710
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        z = np.sum(np.exp(logits), axis=1)
    if not np.all(np.isfinite(z)):
        raise NumericError(f"overflow evaluating Z for {what}")
    return z


def d_unsup_naive(real_logits_batch, fake_logits_batch) -> float:
    """Direct evaluation -mean log(Z/(Z+1)) - mean log(1/(Z+1)), no shift."""
    real, fake = _split_unsup_batches(real_logits_batch, fake_logits_batch)
    total = 0.0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if real is not None:
            z = _naive_z(real, "real batch")
            term = np.log1p(1.0 / z)  # == -log(z/(z+1))
            if not np.all(np.isfinite(term)):
                raise NumericError("non-finite real term in naive loss")
            total += float(np.mean(term))
        if fake is not None:
            z = _naive_z(fake, "fake batch")
            term = np.log1p(z)  # == -log(1/(z+1))
            if not np.all(np.isfinite(term)):
                raise NumericError("non-finite fake term in naive loss")
            total += float(np.mean(term))
    return total


def d_unsup_naive_grad(real_logits_batch, fake_logits_batch):
    """Same gradients as the derived form, but via naive Z (overflow-prone)."""
    real, fake = _split_unsup_batches(real_logits_batch, fake_logits_batch)
    grad_real = grad_fake = None
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if real is not None:
            z = _naive_z(real, "real batch")
            p = np.exp(real) / z[:, None]
            grad_real = (z / (z + 1.0) - 1.0)[:, None] * p / real.shape[0]
        if fake is not None:
            z = _naive_z(fake, "fake batch")
            p = np.exp(fake) / z[:, None]
            grad_fake = (z / (z + 1.0))[:, None] * p / fake.shape[0]
    for g in (grad_real, grad_fake):
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient in naive loss")
    return grad_real, grad_fake


# ---------------------------------------------------------------------------
# generator feature matching: MSE between batch-mean intermediate features


def _as_feature_batch(features, name: str) -> np.ndarray:
    v = np.asarray(features, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] == 0:
        raise ConfigError(f"{name} must be a non-empty (n, H) feature batch")
    return v


def g_feature_match(real_features_batch, fake_features_batch) -> float:
    """(1/H) * sum_j (mean_real[j] - mean_fake[j])^2."""
    real = _as_feature_batch(real_features_batch, "real_features_batch")
    fake = _as_feature_batch(fake_features_batch, "fake_features_batch")
    if real.shape[1] != fake.shape[1]:
        raise ValueError(f"feature width mismatch: {real.shape[1]} vs {fake.shape[1]}")
    diff = real.mean(axis=0) - fake.mean(axis=0)
    return float(np.mean(diff * diff))


def g_feature_match_grad(real_features_batch, fake_features_batch) -> np.ndarray:
    """Gradient w.r.t. fake features only: (2/H)(mu_fake - mu_real)/n_fake per row.

    The real batch mean is a constant target for the generator update.
    """
    real = _as_feature_batch(real_features_batch, "real_features_batch")
    fake = _as_feature_batch(fake_features_batch, "fake_features_batch")
    if real.shape[1] != fake.shape[1]:
        raise ValueError(f"feature width mismatch: {real.shape[1]} vs {fake.shape[1]}")
    h = fake.shape[1]
    row = (2.0 / h) * (fake.mean(axis=0) - real.mean(axis=0)) / fake.shape[0]
    return np.broadcast_to(row, fake.shape).copy()


# ---------------------------------------------------------------------------
# generator unsupervised: -E log D(v_fake)


def g_unsup_derived(fake_logits_batch) -> float:
    """-mean log D(v_fake) = mean_fake[softplus(lse(l)) - lse(l)], computed
    as softplus(-lse(l)) so near-zero losses keep full relative precision."""
    if fake_logits_batch is None or np.size(fake_logits_batch) == 0:
        raise ConfigError("generator unsupervised loss needs a non-empty fake batch")
    fake = _as_logits_batch(fake_logits_batch, "fake_logits_batch")
    return float(np.mean(softplus(-lse_rows(fake))))


def g_unsup_derived_grad(fake_logits_batch) -> np.ndarray:
    """(D - 1) * softmax(l) / n_fake per sample, with D - 1 = -1/(Z+1) stable."""
    fake = _as_logits_batch(fake_logits_batch, "fake_logits_batch")
    one_minus_d = np.exp(-softplus(lse_rows(fake)))
    return -one_minus_d[:, None] * softmax_rows(fake) / fake.shape[0]


def g_unsup_naive(fake_logits_batch) -> float:
    """Direct -mean log(Z/(Z+1)) without shift; ablation arm and oracle."""
    if fake_logits_batch is None or np.size(fake_logits_batch) == 0:
        raise ConfigError("generator unsupervised loss needs a non-empty fake batch")
    fake = _as_logits_batch(fake_logits_batch, "fake_logits_batch")
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        z = _naive_z(fake, "fake batch")
        term = np.log1p(1.0 / z)  # == -log(z/(z+1))
    if not np.all(np.isfinite(term)):
        raise NumericError("non-finite term in naive generator loss")
    return float(np.mean(term))


def g_unsup_naive_grad(fake_logits_batch) -> np.ndarray:
    fake = _as_logits_batch(fake_logits_batch, "fake_logits_batch")
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        z = _naive_z(fake, "fake batch")
        p = np.exp(fake) / z[:, None]
        grad = (z / (z + 1.0) - 1.0)[:, None] * p / fake.shape[0]
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient in naive generator loss")
    return grad
