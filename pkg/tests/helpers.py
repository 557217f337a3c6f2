"""Shared fixtures: tiny model instances and full-model gradient checking."""

import numpy as np

from ppigate.data import Batch, ProteinRecord
from ppigate.encoder import EncoderConfig, encode_batch, named_tensors, with_tensors
from ppigate.projections import tv_segments
from ppigate.tensor import GradTape, Tensor
from ppigate.trainer import TrainConfig, batch_loss, init_encoder_params


def tiny_config(gating="sparsemax", head="gaussian") -> EncoderConfig:
    return EncoderConfig(
        embed_dim=4, hidden_size=3, out_dim=5, gating=gating, head=head,
        gamma=1.0, fuse_lam=0.1, max_len=64,
    )


def toy_batch(seed=0, n_proteins=3, length=9) -> Batch:
    rng = np.random.Generator(np.random.Philox(key=seed))
    records = [
        ProteinRecord(f"t{i}", tuple(rng.integers(0, 25, size=length + i).tolist()))
        for i in range(n_proteins)
    ]
    return Batch(records, pos_pairs=[(0, 1)], neg_pairs=[(0, 2)])


def _gate_structure(batch, params, config):
    """Support plus fused-segment pattern per protein; defines kink adjacency."""
    enc = encode_batch(batch.unique_records, params, config.encoder if isinstance(config, TrainConfig) else config)
    structure = []
    for g in enc.gates:
        support = tuple(np.flatnonzero(g > 0).tolist())
        segments = tuple(tv_segments(g).tolist())
        structure.append((support, segments))
    return tuple(structure)


def full_model_grad_errors(batch, config: TrainConfig, seed=0, eps=1e-5):
    """Central-difference check of every model parameter on a toy batch.

    Returns (errors, skipped): per-parameter max relative error excluding
    coordinates whose gate support or segment pattern changes under the
    +-eps perturbation, and the count of excluded coordinates.
    """
    params = init_encoder_params(config.encoder, seed)
    tensors = named_tensors(params)

    with GradTape() as tape:
        loss, _ = batch_loss(batch, params, config)
    grads = dict(zip(tensors.keys(), tape.gradients(loss, list(tensors.values()))))
    base_structure = _gate_structure(batch, params, config)

    def loss_and_structure(p):
        value, _ = batch_loss(batch, p, config)
        return value.item(), _gate_structure(batch, p, config)

    errors: dict[str, float] = {}
    skipped = 0
    total = 0
    for name, tensor in tensors.items():
        flat = tensor.array.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            total += 1
            bumped = flat.copy()
            bumped[i] += eps
            plus, s_plus = loss_and_structure(
                with_tensors(params, {name: Tensor(bumped.reshape(tensor.shape))})
            )
            bumped[i] -= 2 * eps
            minus, s_minus = loss_and_structure(
                with_tensors(params, {name: Tensor(bumped.reshape(tensor.shape))})
            )
            if s_plus != base_structure or s_minus != base_structure:
                skipped += 1
                continue
            numeric = (plus - minus) / (2 * eps)
            analytic = grads[name].reshape(-1)[i]
            err = abs(analytic - numeric) / max(1.0, abs(analytic))
            worst = max(worst, err)
        errors[name] = worst
    return errors, skipped, total
