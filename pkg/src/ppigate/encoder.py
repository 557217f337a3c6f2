"""Sparse gating sequence encoder.

Pipeline per protein: token embedding -> bidirectional GRU -> per-position
gate scores -> simplex projection -> gate-weighted pooling -> Gaussian (or
point) head. Whole mini-batches of unique sequences are encoded together
on a padded batch; positions past a sequence's length are never read
downstream, so their padded values carry no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Sequence

import numpy as np

from . import projections, tensor as T
from .data import ProteinRecord
from .projections import apply_gate, uniform_gates
from .tensor import Tensor

HEAD_MODES = ("gaussian", "point")


@dataclass(frozen=True)
class EncoderConfig:
    alphabet_size: int = 25
    embed_dim: int = 32
    hidden_size: int = 16           # per direction
    out_dim: int = 128              # mean and variance dims each
    gating: str = "sparsemax"       # none | softmax | sparsemax | fusedmax
    head: str = "gaussian"          # gaussian | point
    gamma: float = 1.0
    fuse_lam: float = 0.1
    sparse_temperature: float = 1.0
    max_len: int = 1024
    profile_dim: int | None = None  # input feature columns, if profiles are used

    def __post_init__(self):
        if self.gating not in projections.GATING_MODES:
            raise ValueError(f"unknown gating mode {self.gating!r}")
        if self.head not in HEAD_MODES:
            raise ValueError(f"unknown head mode {self.head!r}")

    @property
    def state_dim(self) -> int:
        return 2 * self.hidden_size

    @property
    def input_dim(self) -> int:
        return self.profile_dim if self.profile_dim is not None else self.alphabet_size


@dataclass(frozen=True)
class GRUDirection:
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_n: Tensor
    u_n: Tensor
    b_n: Tensor


@dataclass(frozen=True)
class EncoderParams:
    embed: Tensor                 # (input_dim, embed_dim)
    fwd: GRUDirection
    bwd: GRUDirection
    gate_w1: Tensor               # (2H, 2H)
    gate_b1: Tensor               # (2H,)
    gate_w2: Tensor               # (2H, 1)
    gate_b2: Tensor               # scalar
    w_mu: Tensor | None = None    # (2H, d)
    b_mu: Tensor | None = None
    w_sigma: Tensor | None = None
    b_sigma: Tensor | None = None
    w_point: Tensor | None = None
    b_point: Tensor | None = None


def named_tensors(params: EncoderParams) -> dict[str, Tensor]:
    """Stable name -> tensor view over all present parameters."""
    out: dict[str, Tensor] = {"embed": params.embed}
    for direction in ("fwd", "bwd"):
        gru: GRUDirection = getattr(params, direction)
        for f in fields(GRUDirection):
            out[f"{direction}.{f.name}"] = getattr(gru, f.name)
    for f in fields(EncoderParams):
        if f.name in ("embed", "fwd", "bwd"):
            continue
        value = getattr(params, f.name)
        if value is not None:
            out[f.name] = value
    return out


def with_tensors(params: EncoderParams, mapping: dict[str, Tensor]) -> EncoderParams:
    """Rebuild a parameter set with some tensors replaced by name."""
    def pick(name, current):
        return mapping.get(name, current)

    def rebuild_dir(prefix, gru):
        return GRUDirection(
            **{f.name: pick(f"{prefix}.{f.name}", getattr(gru, f.name)) for f in fields(GRUDirection)}
        )

    kwargs = {}
    for f in fields(EncoderParams):
        if f.name == "fwd":
            kwargs["fwd"] = rebuild_dir("fwd", params.fwd)
        elif f.name == "bwd":
            kwargs["bwd"] = rebuild_dir("bwd", params.bwd)
        else:
            kwargs[f.name] = pick(f.name, getattr(params, f.name))
    return EncoderParams(**kwargs)


@dataclass(frozen=True)
class GaussianEmbedding:
    mu: np.ndarray
    sigma: np.ndarray  # diagonal variances, strictly positive

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise T.ContractError(
                f"mu and sigma dims differ: {self.mu.shape} vs {self.sigma.shape}"
            )
        if not np.all(self.sigma > 0):
            raise T.ContractError("sigma must be strictly positive")


@dataclass
class EncodedSequence:
    id: str
    hidden: np.ndarray           # (L, 2H)
    gates: np.ndarray            # (L,), on the simplex
    embedding: GaussianEmbedding | np.ndarray  # point vector in the ablation head


# --------------------------------------------------------------------------
# Primitive operations


def embed(tokens: Sequence[int], weight: Tensor) -> Tensor:
    """Look up one embedding row per token; adjoints scatter back to rows."""
    return T.gather_rows(weight, np.asarray(tokens, dtype=np.int64))


def gru_layer(p_r, p_z, p_n, u_r, u_z, u_n) -> Tensor:
    """GRU over a padded batch, one direction.

    ``p_*`` are (B, L, H) input projections with biases already added;
    ``u_*`` are (H, H) recurrent weights. Initial state is zero. The whole
    layer is one tape record whose backward pass runs the standard
    backprop-through-time recursion.
    """
    pr, pz, pn = p_r.array, p_z.array, p_n.array
    ur, uz, un = u_r.array, u_z.array, u_n.array
    B, L, H = pr.shape
    h = np.zeros((B, H))
    states = np.empty((B, L, H))
    saved = []
    for t in range(L):
        r = T._sigmoid_np(pr[:, t] + h @ ur)
        z = T._sigmoid_np(pz[:, t] + h @ uz)
        rh = r * h
        n = np.tanh(pn[:, t] + rh @ un)
        saved.append((r, z, n, rh, h))
        h = (1.0 - z) * n + z * h
        states[:, t] = h
    out = Tensor._wrap(states)

    def vjp(g, bufs):
        d_pr, d_pz, d_pn, d_ur, d_uz, d_un = bufs
        dh = np.zeros((B, H))
        for t in range(L - 1, -1, -1):
            r, z, n, rh, h_prev = saved[t]
            dh = dh + g[:, t]
            dn = dh * (1.0 - z)
            dz = dh * (h_prev - n)
            da_n = dn * (1.0 - n * n)
            drh = da_n @ un.T
            da_z = dz * z * (1.0 - z)
            dr = drh * h_prev
            da_r = dr * r * (1.0 - r)
            if d_pr is not None:
                d_pr[:, t] += da_r
            if d_pz is not None:
                d_pz[:, t] += da_z
            if d_pn is not None:
                d_pn[:, t] += da_n
            if d_ur is not None:
                d_ur += h_prev.T @ da_r
            if d_uz is not None:
                d_uz += h_prev.T @ da_z
            if d_un is not None:
                d_un += rh.T @ da_n
            dh = dh * z + drh * r + da_z @ uz.T + da_r @ ur.T

    return T.record(out, (p_r, p_z, p_n, u_r, u_z, u_n), vjp)


def _direction_inputs(x_flat: Tensor, shape, gru: GRUDirection) -> tuple[Tensor, Tensor, Tensor]:
    B, L, H = shape
    projections_ = []
    for w, b in ((gru.w_r, gru.b_r), (gru.w_z, gru.b_z), (gru.w_n, gru.b_n)):
        p = T.add_rowvec(T.matmul(x_flat, w), b)
        projections_.append(T.reshape(p, (B, L, H)))
    return tuple(projections_)


def bigru(x: Tensor, fwd: GRUDirection, bwd: GRUDirection) -> Tensor:
    """Both GRU directions over one (L, d_e) sequence; rows are [fwd ; bwd]."""
    L = x.shape[0]
    H = fwd.u_r.shape[0]
    x_fwd = T.reshape(x, (1, L, x.shape[1]))
    flat_fwd = T.reshape(x_fwd, (L, x.shape[1]))
    h_f = gru_layer(*_direction_inputs(flat_fwd, (1, L, H), fwd), fwd.u_r, fwd.u_z, fwd.u_n)
    rev = np.arange(L - 1, -1, -1)
    flat_bwd = T.gather_rows(flat_fwd, rev)
    h_b = gru_layer(*_direction_inputs(flat_bwd, (1, L, H), bwd), bwd.u_r, bwd.u_z, bwd.u_n)
    rows_f = T.gather_time(h_f, 0, np.arange(L))
    rows_b = T.gather_time(h_b, 0, rev)
    return T.concat_cols(rows_f, rows_b)


def gate_scores(hidden: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Position-wise two-layer scorer: tanh projection then a scalar score."""
    inner = T.tanh(T.add_rowvec(T.matmul(hidden, w1), b1))
    return T.add(T.reshape(T.matmul(inner, w2), (hidden.shape[0],)), b2)


def pool(hidden: Tensor, gates: Tensor) -> Tensor:
    """Gate-weighted sum of hidden rows; zero-gate positions contribute nothing."""
    return T.matmul(gates, hidden)


def _affine(v: Tensor, w: Tensor, b: Tensor) -> Tensor:
    # v may be a single pooled vector or a stacked (B, 2H) matrix.
    product = T.matmul(v, w)
    return T.add_rowvec(product, b) if v.ndim == 2 else T.add(product, b)


def gaussian_head(v: Tensor, w_mu, b_mu, w_sigma, b_sigma) -> tuple[Tensor, Tensor]:
    mu = _affine(v, w_mu, b_mu)
    sigma = T.elu_plus_one(_affine(v, w_sigma, b_sigma))
    return mu, sigma


# --------------------------------------------------------------------------
# Batched encoding


@dataclass
class BatchEncoding:
    """Tape-connected outputs for one mini-batch of unique sequences."""

    mu: Tensor | None
    sigma: Tensor | None
    point: Tensor | None
    gates: list[np.ndarray]
    hidden: list[Tensor]

    @property
    def n_sequences(self) -> int:
        return len(self.gates)


def _padded_ids(records, L_max) -> tuple[np.ndarray, np.ndarray]:
    B = len(records)
    fwd = np.zeros((B, L_max), dtype=np.int64)
    bwd = np.zeros((B, L_max), dtype=np.int64)
    for b, rec in enumerate(records):
        ids = np.asarray(rec.tokens, dtype=np.int64)
        fwd[b, : ids.size] = ids
        bwd[b, : ids.size] = ids[::-1]
    return fwd, bwd


def _padded_profiles(records, L_max) -> tuple[np.ndarray, np.ndarray]:
    B = len(records)
    F = records[0].profile.shape[1]
    fwd = np.zeros((B, L_max, F))
    bwd = np.zeros((B, L_max, F))
    for b, rec in enumerate(records):
        fwd[b, : rec.length] = rec.profile
        bwd[b, : rec.length] = rec.profile[::-1]
    return fwd, bwd


def encode_batch(
    records: Sequence[ProteinRecord], params: EncoderParams, config: EncoderConfig
) -> BatchEncoding:
    """Encode unique sequences once each; see module docstring for the flow."""
    if not records:
        raise ValueError("encode_batch: empty batch")
    for rec in records:
        if rec.length > config.max_len:
            raise ValueError(
                f"{rec.id}: length {rec.length} exceeds max_len {config.max_len}; truncate first"
            )
    B = len(records)
    lengths = [rec.length for rec in records]
    L_max = max(lengths)
    H = config.hidden_size

    if config.profile_dim is not None:
        prof_fwd, prof_bwd = _padded_profiles(records, L_max)
        flat_fwd = T.matmul(Tensor(prof_fwd.reshape(B * L_max, -1)), params.embed)
        flat_bwd = T.matmul(Tensor(prof_bwd.reshape(B * L_max, -1)), params.embed)
    else:
        ids_fwd, ids_bwd = _padded_ids(records, L_max)
        flat_fwd = T.gather_rows(params.embed, ids_fwd.ravel())
        flat_bwd = T.gather_rows(params.embed, ids_bwd.ravel())

    h_fwd = gru_layer(
        *_direction_inputs(flat_fwd, (B, L_max, H), params.fwd),
        params.fwd.u_r, params.fwd.u_z, params.fwd.u_n,
    )
    h_bwd = gru_layer(
        *_direction_inputs(flat_bwd, (B, L_max, H), params.bwd),
        params.bwd.u_r, params.bwd.u_z, params.bwd.u_n,
    )

    pooled: list[Tensor] = []
    all_gates: list[np.ndarray] = []
    all_hidden: list[Tensor] = []
    for b, rec in enumerate(records):
        L = lengths[b]
        rows_f = T.gather_time(h_fwd, b, np.arange(L))
        rows_b = T.gather_time(h_bwd, b, np.arange(L - 1, -1, -1))
        hidden = T.concat_cols(rows_f, rows_b)
        if config.gating == "none":
            gates_t = Tensor(uniform_gates(L))
        else:
            scores = gate_scores(
                hidden, params.gate_w1, params.gate_b1, params.gate_w2, params.gate_b2
            )
            gates_t = apply_gate(
                scores,
                config.gating,
                gamma=config.gamma,
                lam=config.fuse_lam,
                temperature=config.sparse_temperature,
            )
        pooled.append(pool(hidden, gates_t))
        all_gates.append(gates_t.array)
        all_hidden.append(hidden)

    v = T.stack_rows(pooled)
    if config.head == "gaussian":
        mu, sigma = gaussian_head(v, params.w_mu, params.b_mu, params.w_sigma, params.b_sigma)
        if not np.all(sigma.array > 0):
            raise T.ContractError("encoder produced a non-positive variance")
        return BatchEncoding(mu, sigma, None, all_gates, all_hidden)
    point = _affine(v, params.w_point, params.b_point)
    return BatchEncoding(None, None, point, all_gates, all_hidden)


def encode(rec: ProteinRecord, params: EncoderParams, config: EncoderConfig) -> EncodedSequence:
    """Encode one record; deterministic, and parallel-safe when no tape is open."""
    enc = encode_batch([rec], params, config)
    if config.head == "gaussian":
        embedding = GaussianEmbedding(enc.mu.array[0].copy(), enc.sigma.array[0].copy())
    else:
        embedding = enc.point.array[0].copy()
    return EncodedSequence(rec.id, enc.hidden[0].array.copy(), enc.gates[0], embedding)


def embed_records(
    records: Sequence[ProteinRecord],
    params: EncoderParams,
    config: EncoderConfig,
    chunk: int = 512,
):
    """Forward-only embeddings for many records, encoded in dedup chunks."""
    out = []
    for start in range(0, len(records), chunk):
        part = records[start : start + chunk]
        enc = encode_batch(part, params, config)
        for b in range(len(part)):
            if config.head == "gaussian":
                out.append(GaussianEmbedding(enc.mu.array[b].copy(), enc.sigma.array[b].copy()))
            else:
                out.append(enc.point.array[b].copy())
    return out
