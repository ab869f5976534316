"""Generator, discriminator, label-embedding table, latent formation, and the
inference path.

Both networks are one-hidden-layer MLPs with leaky-ReLU activations and
manually propagated gradients. The discriminator emits k real-class logits;
the fake class is implicit with its logit fixed at zero. Conditioning is the
element-wise product of a sentence embedding with a label embedding: a
trainable table row for real samples, the generator's output for fake ones.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import (
    ParamTensor,
    affine_backward,
    affine_forward,
    leaky_relu,
    leaky_relu_grad,
    lse,
    softmax_rows,
    softplus,
)


@dataclass
class AffineLayer:
    W: ParamTensor  # (out, in)
    b: ParamTensor  # (out,)

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


def _init_affine(out_dim: int, in_dim: int, rng: np.random.Generator,
                 weight_sd: float = 0.02) -> AffineLayer:
    return AffineLayer(W=ParamTensor(rng.normal(0.0, weight_sd, size=(out_dim, in_dim))),
                       b=ParamTensor(np.zeros(out_dim)))


@dataclass
class GeneratorParams:
    hidden: AffineLayer   # in_dim -> H
    output: AffineLayer   # H -> out_dim
    leaky_slope: float
    dropout_rate: float

    def __post_init__(self):
        if self.hidden.out_dim != self.output.in_dim:
            raise ConfigError("generator hidden width mismatch")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")

    @property
    def in_dim(self) -> int:
        return self.hidden.in_dim

    @property
    def out_dim(self) -> int:
        return self.output.out_dim

    def parameters(self) -> list[ParamTensor]:
        return [self.hidden.W, self.hidden.b, self.output.W, self.output.b]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())


@dataclass
class DiscriminatorParams:
    hidden: AffineLayer   # dim -> H
    output: AffineLayer   # H -> k
    leaky_slope: float

    def __post_init__(self):
        if self.hidden.out_dim != self.output.in_dim:
            raise ConfigError("discriminator hidden width mismatch")

    @property
    def in_dim(self) -> int:
        return self.hidden.in_dim

    @property
    def k(self) -> int:
        return self.output.out_dim

    def parameters(self) -> list[ParamTensor]:
        return [self.hidden.W, self.hidden.b, self.output.W, self.output.b]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())


@dataclass
class LabelEmbeddingTable:
    rows: ParamTensor  # (k, dim), trainable with the discriminator

    @property
    def k(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def parameters(self) -> list[ParamTensor]:
        return [self.rows]


@dataclass(frozen=True)
class LatentVariable:
    values: np.ndarray
    provenance: str  # "real" | "fake"

    def __post_init__(self):
        if self.provenance not in ("real", "fake"):
            raise ValueError(f"bad provenance {self.provenance!r}")


@dataclass(frozen=True)
class DiscriminatorOutput:
    hidden_features: np.ndarray  # (H,) or (n, H); the f(v) that feature matching uses
    logits: np.ndarray           # (k,) or (n, k); fake logit implicit at 0


def init_generator(in_dim: int, hidden_dim: int, out_dim: int, leaky_slope: float,
                   dropout_rate: float, rng: np.random.Generator) -> GeneratorParams:
    gen = GeneratorParams(hidden=_init_affine(hidden_dim, in_dim, rng),
                          output=_init_affine(out_dim, hidden_dim, rng),
                          leaky_slope=leaky_slope, dropout_rate=dropout_rate)
    assert gen.param_count() == in_dim * hidden_dim + hidden_dim \
        + hidden_dim * out_dim + out_dim
    return gen


def init_discriminator(dim: int, hidden_dim: int, k: int, leaky_slope: float,
                       rng: np.random.Generator) -> DiscriminatorParams:
    disc = DiscriminatorParams(hidden=_init_affine(hidden_dim, dim, rng),
                               output=_init_affine(k, hidden_dim, rng),
                               leaky_slope=leaky_slope)
    assert disc.param_count() == dim * hidden_dim + hidden_dim + hidden_dim * k + k
    return disc


def init_table(k: int, dim: int, rng: np.random.Generator) -> LabelEmbeddingTable:
    # centered at 1 so initial real latents h * table[y] start near h itself
    table = LabelEmbeddingTable(rows=ParamTensor(rng.normal(1.0, 0.02, size=(k, dim))))
    assert table.rows.size == k * dim
    return table


def make_dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray | None:
    """Inverted-dropout mask: entries are 0 or 1/(1-rate). None when rate=0."""
    if rate == 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


# ---------------------------------------------------------------------------
# forward / backward


def generator_forward(params: GeneratorParams, h_cls: np.ndarray,
                      dropout_mask: np.ndarray | None = None) -> np.ndarray:
    """y = output(dropout(leaky_relu(hidden(h)))). No mask -> inference mode."""
    y, _ = generator_forward_cached(params, h_cls, dropout_mask)
    return y


def generator_forward_cached(params: GeneratorParams, h_cls: np.ndarray,
                             dropout_mask: np.ndarray | None = None):
    h = np.asarray(h_cls, dtype=np.float64)
    if h.shape[-1] != params.in_dim:
        raise ValueError(f"input dim {h.shape[-1]} != generator in-dim {params.in_dim}")
    pre = affine_forward(params.hidden.W, params.hidden.b, h)
    act = leaky_relu(pre, params.leaky_slope)
    if dropout_mask is not None:
        if dropout_mask.shape != act.shape:
            raise ValueError("dropout mask shape mismatch")
        act = act * dropout_mask
    y = affine_forward(params.output.W, params.output.b, act)
    return y, (h, pre, act, dropout_mask)


def generator_backward(params: GeneratorParams, cache, d_y: np.ndarray,
                       accumulate: bool = True) -> np.ndarray:
    """Accumulate dL/d(params) given dL/dy; returns dL/dh."""
    h, pre, act, mask = cache
    d_act = affine_backward(params.output.W, params.output.b, act, d_y, accumulate)
    if mask is not None:
        d_act = d_act * mask
    d_pre = d_act * leaky_relu_grad(pre, params.leaky_slope)
    return affine_backward(params.hidden.W, params.hidden.b, h, d_pre, accumulate)


def discriminator_forward(params: DiscriminatorParams, v) -> DiscriminatorOutput:
    feat, logits, _ = discriminator_forward_cached(params, v)
    return DiscriminatorOutput(hidden_features=feat, logits=logits)


def discriminator_forward_cached(params: DiscriminatorParams, v):
    values = v.values if isinstance(v, LatentVariable) else np.asarray(v, dtype=np.float64)
    if values.shape[-1] != params.in_dim:
        raise ValueError(f"input dim {values.shape[-1]} != discriminator in-dim "
                         f"{params.in_dim}")
    pre = affine_forward(params.hidden.W, params.hidden.b, values)
    feat = leaky_relu(pre, params.leaky_slope)
    logits = affine_forward(params.output.W, params.output.b, feat)
    return feat, logits, (values, pre, feat)


def discriminator_backward(params: DiscriminatorParams, cache,
                           d_logits: np.ndarray | None = None,
                           d_features: np.ndarray | None = None,
                           accumulate: bool = True) -> np.ndarray:
    """Backprop from logits and/or the intermediate features; returns dL/dv.

    d_features lets the feature-matching loss inject gradient directly at
    f(v). With accumulate=False the parameter grads are left untouched (used
    by the generator step, which must not move the discriminator).
    """
    values, pre, feat = cache
    if d_logits is None and d_features is None:
        raise ValueError("nothing to backpropagate")
    d_feat = np.zeros_like(feat)
    if d_logits is not None:
        d_feat += affine_backward(params.output.W, params.output.b, feat,
                                  d_logits, accumulate)
    if d_features is not None:
        d_feat += d_features
    d_pre = d_feat * leaky_relu_grad(pre, params.leaky_slope)
    return affine_backward(params.hidden.W, params.hidden.b, values, d_pre, accumulate)


# ---------------------------------------------------------------------------
# latent formation


def form_fake_latent(h_cls: np.ndarray, y_fake: np.ndarray) -> LatentVariable:
    h = np.asarray(h_cls, dtype=np.float64)
    y = np.asarray(y_fake, dtype=np.float64)
    if h.shape != y.shape:
        raise ValueError("h_cls and y_fake must have equal shapes")
    return LatentVariable(values=h * y, provenance="fake")


def form_real_latent(h_cls: np.ndarray, label: int,
                     table: LabelEmbeddingTable) -> LatentVariable:
    if not 0 <= label < table.k:
        raise ValueError(f"label {label} out of range for k={table.k}")
    h = np.asarray(h_cls, dtype=np.float64)
    if h.shape[-1] != table.dim:
        raise ValueError("h_cls dimension does not match the label table")
    return LatentVariable(values=h * table.rows.values[label], provenance="real")


def real_latent_batch(h_batch: np.ndarray, labels: np.ndarray,
                      table: LabelEmbeddingTable) -> np.ndarray:
    """Rows h_i * table[y_i]; companion backward is table_grad_from_batch."""
    return h_batch * table.rows.values[labels]


def table_grad_from_batch(table: LabelEmbeddingTable, h_batch: np.ndarray,
                          labels: np.ndarray, d_latent: np.ndarray) -> None:
    """Accumulate dL/d(table rows) for latents formed by real_latent_batch."""
    np.add.at(table.rows.grad, labels, h_batch * d_latent)


# ---------------------------------------------------------------------------
# inference


def fake_probability(logits) -> float:
    """1 - D(v) = 1/(Z+1), evaluated stably as exp(-softplus(lse(logits)))."""
    return float(np.exp(-softplus(lse(logits))))


def predict_class(gen: GeneratorParams | None, disc: DiscriminatorParams,
                  table: LabelEmbeddingTable | None, h_cls: np.ndarray,
                  infer: str = "generator") -> tuple[int, np.ndarray]:
    """Class index plus softmax probabilities over the k real classes.

    "generator" routes h through the generator exactly like the unlabeled
    training path: v = h * G(h). "per-label" instead scores h * table[j] for
    every class j and takes the best class-j logit. Ties break to the lowest
    index (argmax convention).
    """
    h = np.asarray(h_cls, dtype=np.float64)
    if infer == "generator":
        if gen is None:
            raise ConfigError("generator inference path needs generator parameters")
        v = form_fake_latent(h, generator_forward(gen, h))
        logits = discriminator_forward(disc, v).logits
    elif infer == "per-label":
        if table is None:
            raise ConfigError("per-label inference path needs the label table")
        scores = np.empty(table.k)
        for j in range(table.k):
            out = discriminator_forward(disc, form_real_latent(h, j, table))
            scores[j] = out.logits[j]
        logits = scores
    else:
        raise ValueError(f"unknown inference mode {infer!r}")
    probs = softmax_rows(logits[None, :])[0]
    return int(np.argmax(logits)), probs
