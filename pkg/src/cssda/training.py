"""Alternating adversarial training loop with ablation modes, determinism,
checkpointing, and model evaluation.

Per batch: one discriminator step (supervised + unsupervised losses, updating
the discriminator and the label table), then one generator step with fresh
forward passes (feature matching + unsupervised, updating the generator only).

Modes:
  * full           — conditional wiring, derived (stabilized) losses.
  * naive-loss     — same wiring, unsupervised losses evaluated without the
                     max-shift derivation; numeric errors are counted and the
                     step is rolled back and skipped.
  * non-conditional — generator consumes a seeded noise vector and its output
                     is the fake input itself; real inputs are raw embeddings;
                     the label table does not exist.
  * no-augment     — supervised MLP on embeddings alone; labeled data only.
"""
from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass

import numpy as np

from .data import Dataset, Sample, batch_iter
from .errors import ConfigError, FormatError, NumericError
from .evaluation import MetricsReport, attach_roc, confusion, macro_metrics
from .losses import (
    LossBreakdown,
    d_unsup_derived,
    d_unsup_derived_grad,
    d_unsup_naive,
    d_unsup_naive_grad,
    g_feature_match,
    g_feature_match_grad,
    g_unsup_derived,
    g_unsup_derived_grad,
    g_unsup_naive,
    g_unsup_naive_grad,
    supervised_loss,
    supervised_loss_grad,
)
from .model import (
    AffineLayer,
    DiscriminatorParams,
    GeneratorParams,
    LabelEmbeddingTable,
    discriminator_backward,
    discriminator_forward,
    discriminator_forward_cached,
    generator_backward,
    generator_forward_cached,
    init_discriminator,
    init_generator,
    init_table,
    make_dropout_mask,
    predict_class,
    real_latent_batch,
    table_grad_from_batch,
)
from .numerics import OptimizerState, ParamTensor, adam_step, softmax_rows

MODES = ("full", "non-conditional", "naive-loss", "no-augment")
INFER = ("generator", "per-label")

CKP_MAGIC = b"CSSDACKP"
_CKP_V1 = struct.Struct("<8sIIII")
_CKP_V2 = struct.Struct("<8sIIIIII")
_MODE_CODES = {m: i for i, m in enumerate(MODES)}


@dataclass
class TrainingConfig:
    batch_size: int = 64
    epochs: int = 5
    k: int = 3
    dim: int = 768
    hidden: int | None = None   # defaults to dim
    labeled_fraction: float = 0.5
    lr_d: float = 2e-3
    lr_g: float = 2e-3
    leaky_slope: float = 0.2
    dropout: float = 0.1
    seed: int = 0
    mode: str = "full"
    infer: str = "generator"
    noise_dim: int = 100

    def __post_init__(self):
        if self.hidden is None:
            self.hidden = self.dim
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.k < 2 or self.dim < 2 or self.hidden < 1:
            raise ConfigError("need k >= 2, dim >= 2, hidden >= 1")
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ConfigError("labeled_fraction must be in (0, 1]")
        if self.lr_d <= 0.0 or self.lr_g <= 0.0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError("leaky_slope must be in (0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must fit in u64")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.infer not in INFER:
            raise ConfigError(f"infer must be one of {INFER}, got {self.infer!r}")
        if self.noise_dim < 1:
            raise ConfigError("noise_dim must be >= 1")

    @classmethod
    def from_dict(cls, values: dict) -> "TrainingConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(values) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)


@dataclass
class EpochLog:
    epoch: int
    losses: LossBreakdown
    numeric_error_count: int
    wall_time_s: float

    def as_dict(self) -> dict:
        # non-finite means every step this epoch was rolled back; emit null
        # rather than a bare NaN literal so the log line stays valid JSON
        losses = {k: (v if np.isfinite(v) else None)
                  for k, v in self.losses.as_dict().items()}
        return {"epoch": self.epoch,
                "losses": losses,
                "numeric_error_count": self.numeric_error_count,
                "wall_time_s": self.wall_time_s}


@dataclass
class Models:
    mode: str
    discriminator: DiscriminatorParams
    generator: GeneratorParams | None = None
    table: LabelEmbeddingTable | None = None
    noise_dim: int = 100

    @property
    def dim(self) -> int:
        return self.discriminator.in_dim

    @property
    def hidden(self) -> int:
        return self.discriminator.hidden.out_dim

    @property
    def k(self) -> int:
        return self.discriminator.k


def ablation_mode_behavior(mode: str) -> dict:
    """Wiring dispatch per mode; consulted by train_step and documented here
    in one place."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    return {
        "full": dict(generator=True, table=True, unlabeled=True,
                     generator_input="embedding", naive=False),
        "naive-loss": dict(generator=True, table=True, unlabeled=True,
                           generator_input="embedding", naive=True),
        "non-conditional": dict(generator=True, table=False, unlabeled=True,
                                generator_input="noise", naive=False),
        "no-augment": dict(generator=False, table=False, unlabeled=False,
                           generator_input=None, naive=False),
    }[mode]


def init_models(config: TrainingConfig) -> Models:
    wiring = ablation_mode_behavior(config.mode)
    gen_ss, disc_ss, table_ss = np.random.SeedSequence(config.seed).spawn(3)
    disc = init_discriminator(config.dim, config.hidden, config.k,
                              config.leaky_slope, np.random.default_rng(disc_ss))
    gen = None
    if wiring["generator"]:
        gen_in = config.noise_dim if wiring["generator_input"] == "noise" else config.dim
        gen = init_generator(gen_in, config.hidden, config.dim, config.leaky_slope,
                             config.dropout, np.random.default_rng(gen_ss))
    table = init_table(config.k, config.dim, np.random.default_rng(table_ss)) \
        if wiring["table"] else None
    return Models(mode=config.mode, discriminator=disc, generator=gen,
                  table=table, noise_dim=config.noise_dim)


@dataclass
class TrainState:
    """Optimizer slots plus the training-time randomness streams."""
    d_params: list[ParamTensor]
    g_params: list[ParamTensor]
    d_opt: list[OptimizerState]
    g_opt: list[OptimizerState]
    dropout_rng: np.random.Generator
    noise_rng: np.random.Generator

    @classmethod
    def for_models(cls, models: Models, config: TrainingConfig) -> "TrainState":
        d_params = list(models.discriminator.parameters())
        if models.table is not None:
            d_params += models.table.parameters()
        g_params = list(models.generator.parameters()) if models.generator else []
        drop_ss, noise_ss = np.random.SeedSequence(
            entropy=config.seed, spawn_key=(1,)).spawn(2)
        return cls(
            d_params=d_params,
            g_params=g_params,
            d_opt=[OptimizerState.for_param(p, config.lr_d) for p in d_params],
            g_opt=[OptimizerState.for_param(p, config.lr_g) for p in g_params],
            dropout_rng=np.random.default_rng(drop_ss),
            noise_rng=np.random.default_rng(noise_ss))


def _split_batch(batch: list[Sample]):
    h = np.stack([s.embedding.values for s in batch])
    labels = np.array([-1 if s.label is None else s.label for s in batch])
    lab = labels >= 0
    return h, labels, h[lab], labels[lab], h[~lab]


def _snapshot(params: list[ParamTensor], opt: list[OptimizerState]):
    return ([p.values.copy() for p in params],
            [(o.first_moment.copy(), o.second_moment.copy(), o.step_count)
             for o in opt])


def _restore(params: list[ParamTensor], opt: list[OptimizerState], snap) -> None:
    values, states = snap
    for p, v in zip(params, values):
        p.values[:] = v
        p.zero_grad()
    for o, (m1, m2, t) in zip(opt, states):
        o.first_moment[:] = m1
        o.second_moment[:] = m2
        o.step_count = t


def train_step(models: Models, batch: list[Sample], config: TrainingConfig,
               state: TrainState) -> LossBreakdown | None:
    """One discriminator update then one generator update on a batch.

    Returns the loss breakdown, or None when a numeric error in naive-loss
    mode caused the step to be rolled back and skipped. In derived modes
    numeric errors propagate (they indicate a bug, not a phenomenon).
    """
    if not batch:
        raise ConfigError("empty batch")
    wiring = ablation_mode_behavior(models.mode)
    naive = wiring["naive"]
    if naive:
        snap_d = _snapshot(state.d_params, state.d_opt)
        snap_g = _snapshot(state.g_params, state.g_opt)
    try:
        return _train_step_inner(models, batch, config, state, wiring)
    except NumericError:
        if not naive:
            raise
        _restore(state.d_params, state.d_opt, snap_d)
        _restore(state.g_params, state.g_opt, snap_g)
        return None


def _train_step_inner(models: Models, batch, config, state, wiring):
    h, labels, h_l, y_l, h_u = _split_batch(batch)
    naive = wiring["naive"]
    d_unsup_fn = d_unsup_naive if naive else d_unsup_derived
    d_unsup_grad_fn = d_unsup_naive_grad if naive else d_unsup_derived_grad
    g_unsup_fn = g_unsup_naive if naive else g_unsup_derived
    g_unsup_grad_fn = g_unsup_naive_grad if naive else g_unsup_derived_grad

    if models.mode == "no-augment":
        # batches come from the labeled-only subset, so h_l is the whole batch
        _, logits, cache = discriminator_forward_cached(models.discriminator, h_l)
        d_sup = supervised_loss(logits, y_l)
        discriminator_backward(models.discriminator, cache,
                               d_logits=supervised_loss_grad(logits, y_l))
        for p, o in zip(state.d_params, state.d_opt):
            adam_step(p, o)
        return LossBreakdown.from_parts(d_sup, 0.0, 0.0, 0.0)

    conditional = wiring["generator_input"] == "embedding"
    n_fake = h_u.shape[0] if conditional else h.shape[0]

    # --- discriminator step ---------------------------------------------
    if conditional:
        real_in = real_latent_batch(h_l, y_l, models.table) \
            if h_l.shape[0] else np.empty((0, models.dim))
        fake_src = h_u
    else:
        real_in = h
        fake_src = state.noise_rng.normal(size=(n_fake, models.noise_dim)) \
            if n_fake else np.empty((0, models.noise_dim))

    logits_r = cache_r = None
    if real_in.shape[0]:
        _, logits_r, cache_r = discriminator_forward_cached(models.discriminator,
                                                            real_in)
    logits_f = cache_f = None
    if n_fake:
        mask = make_dropout_mask(state.dropout_rng,
                                 (n_fake, models.generator.hidden.out_dim),
                                 config.dropout)
        y_fake, _ = generator_forward_cached(models.generator, fake_src, mask)
        v_fake = h_u * y_fake if conditional else y_fake
        _, logits_f, cache_f = discriminator_forward_cached(models.discriminator,
                                                            v_fake)

    if conditional:
        sup_logits, sup_labels = logits_r, y_l
    else:
        sup_logits = logits_r[labels >= 0] if logits_r is not None else None
        sup_labels = labels[labels >= 0]
    has_sup = sup_labels.size > 0
    d_sup = supervised_loss(sup_logits, sup_labels) if has_sup else 0.0
    d_unsup = d_unsup_fn(logits_r, logits_f)
    grad_r, grad_f = d_unsup_grad_fn(logits_r, logits_f)

    if logits_r is not None:
        d_logits_r = grad_r if grad_r is not None else np.zeros_like(logits_r)
        if has_sup:
            sgrad = supervised_loss_grad(sup_logits, sup_labels)
            if conditional:
                d_logits_r = d_logits_r + sgrad
            else:
                d_logits_r = d_logits_r.copy()
                d_logits_r[labels >= 0] += sgrad
        d_real_in = discriminator_backward(models.discriminator, cache_r,
                                           d_logits=d_logits_r)
        if conditional and h_l.shape[0]:
            table_grad_from_batch(models.table, h_l, y_l, d_real_in)
    if logits_f is not None:
        discriminator_backward(models.discriminator, cache_f, d_logits=grad_f)
    for p, o in zip(state.d_params, state.d_opt):
        adam_step(p, o)

    # --- generator step (fresh forwards against the updated critic) -------
    g_fm = 0.0
    g_unsup = 0.0
    if n_fake:
        if conditional:
            real_in = real_latent_batch(h_l, y_l, models.table) \
                if h_l.shape[0] else np.empty((0, models.dim))
            fake_src = h_u
        else:
            real_in = h
            fake_src = state.noise_rng.normal(size=(n_fake, models.noise_dim))
        mask = make_dropout_mask(state.dropout_rng,
                                 (n_fake, models.generator.hidden.out_dim),
                                 config.dropout)
        y_fake, cache_g = generator_forward_cached(models.generator,
                                                   fake_src, mask)
        v_fake = h_u * y_fake if conditional else y_fake
        feat_f, logits_f, cache_f = discriminator_forward_cached(
            models.discriminator, v_fake)
        d_feat = None
        if real_in.shape[0]:
            feat_r, _, _ = discriminator_forward_cached(models.discriminator,
                                                        real_in)
            g_fm = g_feature_match(feat_r, feat_f)
            d_feat = g_feature_match_grad(feat_r, feat_f)
        g_unsup = g_unsup_fn(logits_f)
        d_v_fake = discriminator_backward(models.discriminator, cache_f,
                                          d_logits=g_unsup_grad_fn(logits_f),
                                          d_features=d_feat,
                                          accumulate=False)
        d_y = h_u * d_v_fake if conditional else d_v_fake
        generator_backward(models.generator, cache_g, d_y)
        for p, o in zip(state.g_params, state.g_opt):
            adam_step(p, o)
    return LossBreakdown.from_parts(d_sup, d_unsup, g_fm, g_unsup)


def _mean_breakdown(parts: list[LossBreakdown]) -> LossBreakdown:
    if not parts:
        nan = float("nan")
        return LossBreakdown(nan, nan, nan, nan, nan, nan)
    return LossBreakdown(
        d_supervised=float(np.mean([p.d_supervised for p in parts])),
        d_unsupervised=float(np.mean([p.d_unsupervised for p in parts])),
        d_total=float(np.mean([p.d_total for p in parts])),
        g_feature_match=float(np.mean([p.g_feature_match for p in parts])),
        g_unsupervised=float(np.mean([p.g_unsupervised for p in parts])),
        g_total=float(np.mean([p.g_total for p in parts])))


def train_run(dataset: Dataset, config: TrainingConfig,
              checkpoint_path=None, log_path=None) -> tuple[Models, list[EpochLog]]:
    """Seeded epochs x batches of train_step; returns models and epoch logs."""
    if dataset.k != config.k:
        raise ConfigError(f"dataset has k={dataset.k} but config.k={config.k}")
    if dataset.dim != config.dim:
        raise ConfigError(f"dataset dim {dataset.dim} != config dim {config.dim}")
    labeled = dataset.labeled()
    if not labeled:
        raise ConfigError("training requires at least one labeled sample")
    wiring = ablation_mode_behavior(config.mode)
    train_set = dataset
    if not wiring["unlabeled"]:
        train_set = Dataset(labeled, dataset.vocab)

    models = init_models(config)
    state = TrainState.for_models(models, config)
    logs: list[EpochLog] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            parts: list[LossBreakdown] = []
            errors = 0
            for batch in batch_iter(train_set, config.batch_size, config.seed, epoch):
                out = train_step(models, batch, config, state)
                if out is None:
                    errors += 1
                else:
                    parts.append(out)
            log = EpochLog(epoch=epoch, losses=_mean_breakdown(parts),
                           numeric_error_count=errors,
                           wall_time_s=time.perf_counter() - t0)
            logs.append(log)
            if log_fh:
                log_fh.write(json.dumps(log.as_dict()) + "\n")
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path:
        save_checkpoint(models, checkpoint_path)
    return models, logs


# ---------------------------------------------------------------------------
# evaluation dispatch


def predict_dataset(models: Models, dataset: Dataset,
                    infer: str = "generator") -> tuple[np.ndarray, np.ndarray]:
    """Predicted class indices and (n, k) probability rows for every sample."""
    preds = np.empty(len(dataset), dtype=np.int64)
    probs = np.empty((len(dataset), models.k))
    for i, s in enumerate(dataset.samples):
        if models.mode in ("no-augment", "non-conditional"):
            # latent is the raw embedding; the generator plays no role here
            logits = discriminator_forward(models.discriminator,
                                           s.embedding.values).logits
            preds[i] = int(np.argmax(logits))
            probs[i] = softmax_rows(logits[None, :])[0]
        else:
            preds[i], probs[i] = predict_class(models.generator,
                                               models.discriminator,
                                               models.table,
                                               s.embedding.values, infer=infer)
    return preds, probs


def evaluate(models: Models, dataset: Dataset,
             infer: str = "generator") -> MetricsReport:
    if any(s.label is None for s in dataset.samples):
        raise ConfigError("evaluation requires a fully labeled dataset")
    if models.k != dataset.k:
        raise ConfigError(f"model has k={models.k} but labels define k={dataset.k}")
    if models.dim != dataset.dim:
        raise ConfigError(f"model dim {models.dim} != dataset dim {dataset.dim}")
    true = np.array([s.label for s in dataset.samples])
    preds, probs = predict_dataset(models, dataset, infer)
    report = macro_metrics(confusion(true, preds, models.k),
                           class_names=list(dataset.vocab.names))
    return attach_roc(report, probs, true)


# ---------------------------------------------------------------------------
# checkpoints


def _tensor_bytes(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<f4").tobytes()


def save_checkpoint(models: Models, path) -> None:
    """Fixed tensor order: generator hidden W/b, generator output W/b,
    discriminator hidden W/b, discriminator output W/b, table rows.
    Full-wiring models use the version-1 layout; ablation shapes get
    version 2 with a mode tag."""
    dim, hidden, k = models.dim, models.hidden, models.k
    full_shape = (models.generator is not None and models.table is not None
                  and models.generator.in_dim == dim)
    chunks = []
    if full_shape:
        chunks.append(_CKP_V1.pack(CKP_MAGIC, 1, dim, hidden, k))
    else:
        gen_in = models.generator.in_dim if models.generator else 0
        chunks.append(_CKP_V2.pack(CKP_MAGIC, 2, dim, hidden, k,
                                   _MODE_CODES[models.mode], gen_in))
    if models.generator is not None:
        for p in models.generator.parameters():
            chunks.append(_tensor_bytes(p.values))
    for p in models.discriminator.parameters():
        chunks.append(_tensor_bytes(p.values))
    if models.table is not None:
        chunks.append(_tensor_bytes(models.table.rows.values))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path, leaky_slope: float = 0.2,
                    dropout: float = 0.1) -> Models:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _CKP_V1.size or blob[:8] != CKP_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version = struct.unpack_from("<I", blob, 8)[0]
    if version == 1:
        _, _, dim, hidden, k = _CKP_V1.unpack_from(blob)
        mode, gen_in = "full", dim
        offset = _CKP_V1.size
    elif version == 2:
        _, _, dim, hidden, k, mode_code, gen_in = _CKP_V2.unpack_from(blob)
        if mode_code >= len(MODES):
            raise FormatError(f"{path}: unknown mode code {mode_code}")
        mode = MODES[mode_code]
        offset = _CKP_V2.size
    else:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")

    shapes: list[tuple[int, ...]] = []
    has_gen = gen_in > 0
    if has_gen:
        shapes += [(hidden, gen_in), (hidden,), (dim, hidden), (dim,)]
    shapes += [(hidden, dim), (hidden,), (k, hidden), (k,)]
    has_table = version == 1  # ablation layouts never carry a table
    if has_table:
        shapes.append((k, dim))
    expected = offset + 4 * sum(int(np.prod(s)) for s in shapes)
    if len(blob) != expected:
        raise FormatError(f"{path}: size {len(blob)} != expected {expected}")

    tensors = []
    for s in shapes:
        n = int(np.prod(s))
        tensors.append(np.frombuffer(blob, dtype="<f4", count=n,
                                     offset=offset).astype(np.float64).reshape(s))
        offset += 4 * n
    it = iter(tensors)
    gen = None
    if has_gen:
        gen = GeneratorParams(
            hidden=AffineLayer(ParamTensor(next(it)), ParamTensor(next(it))),
            output=AffineLayer(ParamTensor(next(it)), ParamTensor(next(it))),
            leaky_slope=leaky_slope, dropout_rate=dropout)
    disc = DiscriminatorParams(
        hidden=AffineLayer(ParamTensor(next(it)), ParamTensor(next(it))),
        output=AffineLayer(ParamTensor(next(it)), ParamTensor(next(it))),
        leaky_slope=leaky_slope)
    table = LabelEmbeddingTable(ParamTensor(next(it))) if has_table else None
    noise_dim = gen_in if (has_gen and mode == "non-conditional") else 100
    return Models(mode=mode, discriminator=disc, generator=gen, table=table,
                  noise_dim=noise_dim)
