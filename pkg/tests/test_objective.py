import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppigate import objective as O
from ppigate import tensor as T
from ppigate.encoder import GaussianEmbedding
from ppigate.objective import (
    TrainingConfigError,
    l2_point,
    ranking_loss,
    ranking_loss_t,
    w2_diag,
    w2_general_diag_oracle,
)
from ppigate.tensor import GradTape, Tensor


def _emb(mu, sigma):
    return GaussianEmbedding(np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float))


def _random_emb(rng, d=6):
    return _emb(rng.normal(size=d), rng.uniform(0.1, 4.0, size=d))


# -- w2 ------------------------------------------------------------------------


def test_w2_identical_embeddings_zero():
    a = _emb([1.0, -2.0], [0.5, 3.0])
    assert w2_diag(a, a) == 0.0


def test_w2_variance_terms_cancel():
    a = _emb([1.0, 0.0], [1.0, 1.0])
    b = _emb([0.0, 0.0], [1.0, 1.0])
    assert abs(w2_diag(a, b) ** 2 - 1.0) < 1e-15


def test_w2_analytic_square_roots():
    a = _emb([0.0], [4.0])
    b = _emb([0.0], [1.0])
    assert abs(w2_diag(a, b) ** 2 - 1.0) < 1e-15


def test_w2_dimension_mismatch():
    with pytest.raises(T.ContractError):
        w2_diag(_emb([1.0], [1.0]), _emb([1.0, 2.0], [1.0, 2.0]))


def test_w2_oracle_identity_on_1000_random(rng):
    for _ in range(1000):
        a, b = _random_emb(rng), _random_emb(rng)
        assert abs(w2_diag(a, b) - w2_general_diag_oracle(a, b)) < 1e-12


def test_w2_oracle_trace_term_cases():
    a = _emb([0.0], [4.0])
    b = _emb([0.0], [1.0])
    # per-coordinate trace term: 4 + 1 - 2*2 = 1
    assert abs(w2_general_diag_oracle(a, b) ** 2 - 1.0) < 1e-15
    same = _emb([1.0, 2.0], [3.0, 0.5])
    other = _emb([1.0, 2.0], [3.0, 0.5])
    assert w2_general_diag_oracle(same, other) == 0.0


def test_w2_metric_properties_on_random_triples(rng):
    for _ in range(1000):
        a, b, c = (_random_emb(rng) for _ in range(3))
        dab, dba = w2_diag(a, b), w2_diag(b, a)
        assert dab == dba
        assert dab >= 0
        assert w2_diag(a, c) <= dab + w2_diag(b, c) + 1e-12


# -- l2 ------------------------------------------------------------------------


def test_l2_point_cases(rng):
    assert l2_point([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert l2_point([3.0, 4.0], [0.0, 0.0]) == 5.0
    a, b = rng.normal(size=9), rng.normal(size=9)
    loop = np.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))
    assert abs(l2_point(a, b) - loop) < 1e-12
    with pytest.raises(T.ContractError):
        l2_point([1.0], [1.0, 2.0])


# -- ranking loss -----------------------------------------------------------------


def test_ranking_loss_floor_when_well_separated():
    shared = _emb(np.zeros(4), np.ones(4))
    far = _emb(np.full(4, 10.0), np.ones(4))
    embs = [shared, shared, far]
    loss = ranking_loss(embs, pos_pairs=[(0, 1)], neg_pairs=[(0, 2)])
    assert loss == pytest.approx(np.exp(-20.0), abs=1e-12)


def test_ranking_loss_single_pos_single_neg():
    a = _emb([0.0], [1.0])
    b = _emb([1.0], [1.0])  # E(a, b) = 1
    embs = [a, b, a]
    loss = ranking_loss(embs, pos_pairs=[(0, 1)], neg_pairs=[(0, 2)])  # neg E = 0
    # The energy floor perturbs exp(-0) by at most 1e-12.
    assert loss == pytest.approx(1.0 + 1.0, abs=2e-12)


def test_ranking_loss_matches_hand_sum(rng):
    embs = [_random_emb(rng) for _ in range(4)]
    pos = [(0, 1), (2, 3)]
    neg = [(0, 2), (1, 3)]
    expected = sum(w2_diag(embs[i], embs[j]) ** 2 for i, j in pos)
    expected += sum(np.exp(-w2_diag(embs[i], embs[k])) for i, k in neg)
    assert abs(ranking_loss(embs, pos, neg) - expected) < 1e-12


def test_ranking_loss_requires_both_sides():
    embs = [_random_emb(np.random.default_rng(0)) for _ in range(2)]
    with pytest.raises(TrainingConfigError):
        ranking_loss(embs, [], [(0, 1)])
    with pytest.raises(TrainingConfigError):
        ranking_loss(embs, [(0, 1)], [])


def test_loss_monotone_in_energies(rng):
    base_embs = [_random_emb(rng) for _ in range(3)]
    pos, neg = [(0, 1)], [(0, 2)]
    base = ranking_loss(base_embs, pos, neg)
    # Decreasing the positive-pair energy never increases the loss.
    closer = [base_embs[0], base_embs[0], base_embs[2]]
    assert ranking_loss(closer, pos, neg) <= base + 1e-12
    # Increasing the negative-pair energy never increases the loss.
    farther = [
        base_embs[0],
        base_embs[1],
        _emb(base_embs[2].mu + 100.0, base_embs[2].sigma),
    ]
    assert ranking_loss(farther, pos, neg) <= base + 1e-12


def test_tape_loss_matches_plain_loss(rng):
    mus = rng.normal(size=(4, 5))
    sigmas = rng.uniform(0.2, 3.0, size=(4, 5))
    embs = [_emb(mus[i], sigmas[i]) for i in range(4)]
    pos, neg = [(0, 1), (1, 2)], [(0, 3), (2, 3)]
    plain = ranking_loss(embs, pos, neg)
    taped = ranking_loss_t(Tensor(mus), Tensor(sigmas), pos, neg).item()
    assert abs(plain - taped) < 1e-12
    mean_plain = ranking_loss(embs, pos, neg, reduction="mean")
    mean_taped = ranking_loss_t(Tensor(mus), Tensor(sigmas), pos, neg, reduction="mean").item()
    assert abs(mean_plain - mean_taped) < 1e-12


def test_tape_loss_gradients_match_finite_differences(rng):
    sigmas = rng.uniform(0.3, 2.0, size=(3, 4))
    pos, neg = [(0, 1)], [(0, 2), (1, 2)]

    def f_mu(m):
        return ranking_loss_t(T.reshape(m, (3, 4)), Tensor(sigmas), pos, neg)

    point = Tensor(rng.normal(size=12))
    assert T.grad_check(f_mu, point, eps=1e-5) < 1e-5

    mus = rng.normal(size=(3, 4))

    def f_sigma(s):
        return ranking_loss_t(Tensor(mus), T.reshape(s, (3, 4)), pos, neg)

    point = Tensor(rng.uniform(0.3, 2.0, size=12))
    assert T.grad_check(f_sigma, point, eps=1e-6) < 1e-5


def test_point_head_loss_uses_l2(rng):
    z = rng.normal(size=(3, 4))
    pos, neg = [(0, 1)], [(0, 2)]
    taped = ranking_loss_t(Tensor(z), None, pos, neg).item()
    expected = l2_point(z[0], z[1]) ** 2 + np.exp(-l2_point(z[0], z[2]))
    assert abs(taped - expected) < 1e-12


def test_identical_negative_pair_has_finite_gradient():
    # A homodimer sampled as a negative yields E = 0; the clamp keeps the
    # gradient finite instead of dividing by zero in the sqrt.
    mus = np.zeros((2, 3))
    sigmas = np.ones((2, 3))
    with GradTape() as tape:
        mu_t = Tensor(mus)
        loss = ranking_loss_t(mu_t, Tensor(sigmas), [(0, 1)], [(0, 1)])
    g = tape.gradients(loss, [mu_t])[0]
    assert np.all(np.isfinite(g))
    assert abs(loss.item() - 1.0) < 1e-12  # exp(-0) with zero positive term


@given(st.integers(0, 10_000))
def test_energy_symmetry(seed):
    rng = np.random.default_rng(seed)
    a, b = _random_emb(rng), _random_emb(rng)
    assert O.pair_energy(a, b) == O.pair_energy(b, a)
