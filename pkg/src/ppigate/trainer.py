"""End-to-end optimization: Xavier init, Adam updates, dedup-batch training."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import evalkit, objective, tensor as T
from .data import Batch, InteractionDataset, ProteinRecord, make_batches, make_rng
from .encoder import (
    BatchEncoding,
    EncoderConfig,
    EncoderParams,
    GRUDirection,
    encode_batch,
    named_tensors,
    with_tensors,
)
from .tensor import GradTape, Tensor


class TrainingError(RuntimeError):
    """Training hit a non-finite quantity; message carries the context."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.003
    batch_size: int = 256
    max_epochs: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_reduction: str = "sum"
    grad_clip: float | None = None  # off by default; BPTT over long inputs can spike
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")


def xavier_init(shape: tuple[int, int], seed: int) -> Tensor:
    """Glorot uniform on [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    if len(shape) != 2:
        raise ValueError(f"xavier_init needs a 2-D shape, got {shape}")
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    rng = make_rng(seed, "xavier", shape[0], shape[1])
    return Tensor(rng.uniform(-bound, bound, size=shape))


def _init_direction(d_in: int, hidden: int, seed: int, tag: str) -> GRUDirection:
    def w(name, shape):
        return xavier_init(shape, make_rng(seed, tag, name).integers(1 << 62))

    return GRUDirection(
        w_r=w("w_r", (d_in, hidden)), u_r=w("u_r", (hidden, hidden)), b_r=Tensor(np.zeros(hidden)),
        w_z=w("w_z", (d_in, hidden)), u_z=w("u_z", (hidden, hidden)), b_z=Tensor(np.zeros(hidden)),
        w_n=w("w_n", (d_in, hidden)), u_n=w("u_n", (hidden, hidden)), b_n=Tensor(np.zeros(hidden)),
    )


def init_encoder_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """All matrices Xavier-initialized, all biases zero, deterministic per seed."""
    def w(name, shape):
        return xavier_init(shape, make_rng(seed, "enc", name).integers(1 << 62))

    d_h = config.state_dim
    d = config.out_dim
    kwargs = dict(
        embed=w("embed", (config.input_dim, config.embed_dim)),
        fwd=_init_direction(config.embed_dim, config.hidden_size, seed, "fwd"),
        bwd=_init_direction(config.embed_dim, config.hidden_size, seed, "bwd"),
        gate_w1=w("gate_w1", (d_h, d_h)),
        gate_b1=Tensor(np.zeros(d_h)),
        gate_w2=w("gate_w2", (d_h, 1)),
        gate_b2=Tensor(0.0),
    )
    if config.head == "gaussian":
        kwargs.update(
            w_mu=w("w_mu", (d_h, d)), b_mu=Tensor(np.zeros(d)),
            w_sigma=w("w_sigma", (d_h, d)), b_sigma=Tensor(np.zeros(d)),
        )
    else:
        kwargs.update(w_point=w("w_point", (d_h, d)), b_point=Tensor(np.zeros(d)))
    return EncoderParams(**kwargs)


# --------------------------------------------------------------------------
# Adam


@dataclass
class TrainState:
    params: EncoderParams
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def fresh(cls, params: EncoderParams) -> "TrainState":
        tensors = named_tensors(params)
        return cls(
            params=params,
            m={k: np.zeros(t.shape) for k, t in tensors.items()},
            v={k: np.zeros(t.shape) for k, t in tensors.items()},
        )


def adam_step(state: TrainState, grads: Mapping[str, np.ndarray], config: TrainConfig) -> TrainState:
    """One bias-corrected Adam update; aborts on NaN naming the parameter."""
    tensors = named_tensors(state.params)
    t = state.step + 1
    new_tensors: dict[str, Tensor] = {}
    new_m, new_v = {}, {}
    clip = config.grad_clip
    if clip is not None:
        norm = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
        scale = min(1.0, clip / norm) if norm > 0 else 1.0
    for name, tensor in tensors.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if g.shape != tensor.shape:
            raise ValueError(f"gradient shape {g.shape} mismatches {name} {tensor.shape}")
        if clip is not None:
            g = g * scale
        m = config.beta1 * state.m[name] + (1 - config.beta1) * g
        v = config.beta2 * state.v[name] + (1 - config.beta2) * g * g
        m_hat = m / (1 - config.beta1**t)
        v_hat = v / (1 - config.beta2**t)
        update = tensor.array - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        new_tensors[name] = Tensor(update)
        new_m[name], new_v[name] = m, v
    return TrainState(with_tensors(state.params, new_tensors), new_m, new_v, t)


# --------------------------------------------------------------------------
# Training loop


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_auroc: float
    val_ap: float
    seconds: float
    encodes: int


@dataclass
class TrainResult:
    params: EncoderParams          # best-validation snapshot
    final_params: EncoderParams
    history: list[EpochStats]
    best_epoch: int
    best_val_auroc: float


def batch_loss(
    batch: Batch, params: EncoderParams, config: TrainConfig
) -> tuple[Tensor, BatchEncoding]:
    """Differentiable loss for one dedup batch; one-sided batches contribute
    only the term their pairs define."""
    enc = encode_batch(batch.unique_records, params, config.encoder)
    mu = enc.mu if enc.mu is not None else enc.point
    pos_term, neg_term = objective.ranking_loss_terms(
        mu, enc.sigma, batch.pos_pairs, batch.neg_pairs
    )
    if pos_term is None and neg_term is None:
        raise objective.TrainingConfigError("batch has no pairs")
    if pos_term is None:
        total = neg_term
    elif neg_term is None:
        total = pos_term
    else:
        total = T.add(pos_term, neg_term)
    if config.loss_reduction == "mean":
        total = T.mul(total, 1.0 / batch.n_pairs)
    return total, enc


def score_pairs(
    pairs: Sequence[tuple[str, str]],
    sequences: Mapping[str, ProteinRecord],
    params: EncoderParams,
    config: EncoderConfig,
) -> np.ndarray:
    """Ranking scores (negated distances) for id pairs, dedup-encoded."""
    ids = sorted({i for p in pairs for i in p})
    index = {pid: k for k, pid in enumerate(ids)}
    enc = encode_batch([sequences[i] for i in ids], params, config)
    idx = [(index[a], index[b]) for a, b in pairs]
    return -objective.batch_distances(enc, idx)


def validation_metrics(
    dataset: InteractionDataset,
    part: str,
    sequences: Mapping[str, ProteinRecord],
    params: EncoderParams,
    config: EncoderConfig,
) -> tuple[float, float]:
    pos, neg = dataset.pairs_for(part)
    scores = score_pairs(pos + neg, sequences, params, config)
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return evalkit.auroc(scores, labels), evalkit.average_precision(scores, labels)


def train(
    config: TrainConfig,
    dataset: InteractionDataset,
    sequences: Mapping[str, ProteinRecord],
    log=None,
) -> TrainResult:
    """Optimize the encoder on the train split, selecting on validation AUROC.

    Per epoch: shuffle pairs, build dedup batches, encode each batch's
    unique sequences once, backprop the ranking loss, and apply Adam.
    """
    train_pairs = dataset.labeled_pairs("train")
    if not any(l == 1 for _, _, l in train_pairs) or not any(l == 0 for _, _, l in train_pairs):
        raise objective.TrainingConfigError("train split needs both labels present")
    state = TrainState.fresh(init_encoder_params(config.encoder, config.seed))
    history: list[EpochStats] = []
    best = (-1.0, 0, state.params)  # (val_auroc, epoch, params)

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        batches = make_batches(
            train_pairs, sequences, config.batch_size, make_rng(config.seed, "epoch", epoch).integers(1 << 62)
        )
        epoch_loss = 0.0
        encodes = 0
        for bi, batch in enumerate(batches):
            with GradTape() as tape:
                loss, _ = batch_loss(batch, state.params, config)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            epoch_loss += value
            tensors = named_tensors(state.params)
            grad_list = tape.gradients(loss, list(tensors.values()))
            grads = dict(zip(tensors.keys(), grad_list))
            state = adam_step(state, grads, config)
            encodes += len(batch.unique_records)
        val_auroc, val_ap = validation_metrics(
            dataset, "val", sequences, state.params, config.encoder
        )
        stats = EpochStats(
            epoch, epoch_loss, val_auroc, val_ap, time.perf_counter() - started, encodes
        )
        history.append(stats)
        if log is not None:
            log(stats)
        if val_auroc > best[0]:
            best = (val_auroc, epoch, state.params)
    return TrainResult(best[2], state.params, history, best[1], best[0])


def history_csv(history: Sequence[EpochStats]) -> str:
    lines = ["epoch,train_loss,val_auroc,val_ap,seconds"]
    for s in history:
        lines.append(f"{s.epoch},{s.train_loss!r},{s.val_auroc!r},{s.val_ap!r},{s.seconds!r}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Timing harness


@dataclass
class BenchmarkRow:
    pairs: int
    seconds_per_epoch: float
    encodes_per_epoch: int


def benchmark_epoch(
    config: TrainConfig,
    labeled_pairs: Sequence[tuple[str, str, int]],
    sequences: Mapping[str, ProteinRecord],
    sizes: Sequence[int],
) -> list[BenchmarkRow]:
    """Wall-clock and encoder-pass counts for one epoch at several sizes.

    Each size runs as a single dedup batch, so encodes per epoch equal the
    number of unique proteins touched, never two per pair.
    """
    rows = []
    for size in sizes:
        if size > len(labeled_pairs):
            raise ValueError(f"requested {size} pairs but only {len(labeled_pairs)} available")
        subset = list(labeled_pairs)
        make_rng(config.seed, "bench", size).shuffle(subset)
        subset = subset[:size]
        state = TrainState.fresh(init_encoder_params(config.encoder, config.seed))
        batches = make_batches(subset, sequences, max(size, 1), config.seed)
        started = time.perf_counter()
        encodes = 0
        for batch in batches:
            with GradTape() as tape:
                loss, _ = batch_loss(batch, state.params, config)
            tensors = named_tensors(state.params)
            grads = dict(
                zip(tensors.keys(), tape.gradients(loss, list(tensors.values())))
            )
            state = adam_step(state, grads, config)
            encodes += len(batch.unique_records)
        rows.append(BenchmarkRow(size, time.perf_counter() - started, encodes))
    return rows


def benchmark_csv(rows: Sequence[BenchmarkRow]) -> str:
    lines = ["pairs,seconds_per_epoch,encodes_per_epoch"]
    for r in rows:
        lines.append(f"{r.pairs},{r.seconds_per_epoch!r},{r.encodes_per_epoch}")
    return "\n".join(lines) + "\n"
