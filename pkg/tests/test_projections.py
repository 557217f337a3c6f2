import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    fused_simplex_oracle,
    grid_refine_oracle,
    simplex_project_bisect,
    sparsemax_support_enum,
    tv_cd_oracle,
)
from ppigate import projections as proj
from ppigate import tensor as T
from ppigate.projections import (
    ParameterError,
    apply_gate,
    fusedmax,
    softmax,
    sparsemax,
    tv_prox,
    tv_segments,
)
from ppigate.tensor import GradTape, Tensor

finite_vectors = st.lists(
    st.floats(min_value=-50, max_value=50, allow_nan=False), min_size=1, max_size=24
).map(np.array)


# -- softmax ----------------------------------------------------------------


def test_softmax_symmetry_and_constant():
    assert np.allclose(softmax([0.0, 0.0]), [0.5, 0.5], atol=0)
    for c in (-3.0, 0.0, 17.5):
        assert np.array_equal(softmax([c, c, c]), np.full(3, 1.0 / 3.0))


def test_softmax_matches_naive_exp_normalize():
    p = np.array([1.0, 2.0, 3.0])
    naive = np.exp(p) / np.exp(p).sum()
    assert np.abs(softmax(p) - naive).max() < 1e-12


# -- sparsemax ---------------------------------------------------------------


def test_sparsemax_worked_example():
    assert np.allclose(sparsemax([1.0, 0.5, -1.0]), [0.75, 0.25, 0.0], atol=1e-15)


def test_sparsemax_symmetric_and_vertex():
    assert np.allclose(sparsemax([2.2, 2.2]), [0.5, 0.5], atol=0)
    assert np.array_equal(sparsemax([10.0, 0.0, 0.0]), [1.0, 0.0, 0.0])


def test_sparsemax_matches_support_enumeration(rng):
    for _ in range(200):
        n = int(rng.integers(1, 9))
        p = rng.normal(scale=rng.uniform(0.1, 5.0), size=n)
        assert np.abs(sparsemax(p) - sparsemax_support_enum(p)).max() < 1e-9


def test_sparsemax_temperature_is_input_scaling(rng):
    p = rng.normal(size=6)
    assert np.array_equal(sparsemax(p, temperature=2.5), sparsemax(p / 2.5))
    with pytest.raises(ParameterError):
        sparsemax(p, temperature=0.0)


@given(finite_vectors)
def test_sparsemax_simplex_membership(p):
    g = sparsemax(p)
    assert g.min() >= 0.0
    assert abs(g.sum() - 1.0) < 1e-9


@given(finite_vectors, st.floats(-20, 20))
def test_sparsemax_shift_invariance(p, c):
    assert np.abs(sparsemax(p + c) - sparsemax(p)).max() < 1e-9


@given(finite_vectors, st.randoms(use_true_random=False))
def test_sparsemax_permutation_equivariance(p, rand):
    perm = list(range(p.size))
    rand.shuffle(perm)
    perm = np.array(perm)
    assert np.abs(sparsemax(p[perm]) - sparsemax(p)[perm]).max() < 1e-12


@given(finite_vectors)
def test_sparsemax_monotone(p):
    g = sparsemax(p)
    order = np.argsort(p)
    assert np.all(np.diff(g[order]) >= -1e-12)


# -- tv_prox -----------------------------------------------------------------


def test_tv_prox_zero_penalty_is_identity(rng):
    z = rng.normal(size=9)
    assert np.array_equal(tv_prox(z, 0.0), z)


def test_tv_prox_full_fusion_preserves_mean():
    out = tv_prox(np.array([1.0, 2.0, 3.0]), 100.0)
    assert np.allclose(out, [2.0, 2.0, 2.0], atol=1e-12)


def test_tv_prox_worked_example_vs_iterative_oracle():
    z = np.array([1.0, 0.0, 1.0])
    mine = tv_prox(z, 0.25)
    oracle = tv_cd_oracle(z, 0.25)
    assert np.abs(mine - oracle).max() < 1e-8
    assert np.allclose(mine, [0.75, 0.5, 0.75], atol=1e-12)


def test_tv_prox_negative_lambda_raises():
    with pytest.raises(ParameterError):
        tv_prox(np.array([1.0, 2.0]), -0.1)


def test_tv_prox_fuzz_against_coordinate_descent(rng):
    for _ in range(300):
        n = int(rng.integers(1, 30))
        scale = rng.uniform(0.05, 4.0)
        z = rng.normal(scale=scale, size=n)
        if rng.uniform() < 0.3:  # many ties stress the hulls
            z = np.round(z, 1)
        lam = float(rng.uniform(0, 2.0))
        assert np.abs(tv_prox(z, lam) - tv_cd_oracle(z, lam)).max() < 1e-8


@given(finite_vectors, st.floats(0, 10))
def test_tv_prox_preserves_total_mass(z, lam):
    assert abs(tv_prox(z, lam).sum() - z.sum()) < 1e-7 * max(1.0, np.abs(z).sum())


def test_tv_prox_output_is_piecewise_constant(rng):
    z = rng.normal(size=40)
    out = tv_prox(z, 0.4)
    seg = tv_segments(out)
    for s in range(seg.max() + 1):
        vals = out[seg == s]
        assert np.all(vals == vals[0])


def test_tv_oracle_agrees_with_cvxpy(rng):
    cvxpy = pytest.importorskip("cvxpy")
    for _ in range(10):
        n = int(rng.integers(2, 12))
        z = rng.normal(size=n)
        lam = float(rng.uniform(0.05, 1.0))
        y = cvxpy.Variable(n)
        problem = cvxpy.Problem(
            cvxpy.Minimize(0.5 * cvxpy.sum_squares(y - z) + lam * cvxpy.tv(y))
        )
        problem.solve(solver="CLARABEL")
        assert np.abs(tv_cd_oracle(z, lam) - y.value).max() < 1e-6
        assert np.abs(tv_prox(z, lam) - y.value).max() < 1e-6


# -- fusedmax ----------------------------------------------------------------


def test_fusedmax_zero_lambda_reduces_to_sparsemax(rng):
    for _ in range(100):
        p = rng.normal(scale=rng.uniform(0.2, 3.0), size=int(rng.integers(1, 12)))
        gamma = float(rng.uniform(0.3, 3.0))
        diff = np.abs(fusedmax(p, gamma, 0.0) - sparsemax(p / gamma)).max()
        assert diff < 1e-10


def test_fusedmax_constant_input_is_uniform():
    assert np.allclose(fusedmax(np.full(7, 3.3), 1.0, 0.5), np.full(7, 1.0 / 7.0), atol=1e-12)


def test_fusedmax_worked_example():
    g = fusedmax(np.array([2.0, 2.1, -1.0, -1.0]), gamma=1.0, lam=0.5)
    assert g[0] == g[1]
    assert g[2] == 0.0 and g[3] == 0.0
    oracle = fused_simplex_oracle(np.array([2.0, 2.1, -1.0, -1.0]), 0.5)
    assert np.abs(g - oracle).max() < 1e-6


def test_fusedmax_parameter_errors():
    with pytest.raises(ParameterError):
        fusedmax(np.array([1.0, 2.0]), gamma=0.0, lam=0.1)
    with pytest.raises(ParameterError):
        fusedmax(np.array([1.0, 2.0]), gamma=1.0, lam=-0.5)


def test_fusedmax_matches_dykstra_oracle(rng):
    for _ in range(60):
        n = int(rng.integers(2, 9))
        p = rng.normal(scale=rng.uniform(0.2, 3.0), size=n)
        lam = float(rng.uniform(0.02, 1.0))
        gamma = float(rng.uniform(0.5, 2.0))
        mine = fusedmax(p, gamma, lam)
        oracle = fused_simplex_oracle(p / gamma, lam)
        assert np.abs(mine - oracle).max() < 1e-6


def test_fusedmax_matches_tiny_grid_search(rng):
    for _ in range(15):
        n = int(rng.integers(2, 4))
        p = rng.normal(size=n)
        lam = float(rng.uniform(0.05, 0.6))
        assert np.abs(fusedmax(p, 1.0, lam) - grid_refine_oracle(p, lam)).max() < 1e-5


def test_fused_oracle_agrees_with_cvxpy(rng):
    cvxpy = pytest.importorskip("cvxpy")
    for _ in range(10):
        n = int(rng.integers(2, 9))
        x = rng.normal(size=n)
        lam = float(rng.uniform(0.05, 1.0))
        g = cvxpy.Variable(n, nonneg=True)
        problem = cvxpy.Problem(
            cvxpy.Minimize(0.5 * cvxpy.sum_squares(g - x) + lam * cvxpy.tv(g)),
            [cvxpy.sum(g) == 1],
        )
        problem.solve(solver="CLARABEL")
        assert np.abs(fused_simplex_oracle(x, lam) - g.value).max() < 1e-6


@given(finite_vectors, st.floats(0.2, 4.0), st.floats(0, 2.0))
def test_fusedmax_simplex_and_piecewise_constant(p, gamma, lam):
    g = fusedmax(p, gamma, lam)
    assert g.min() >= 0.0
    assert abs(g.sum() - 1.0) < 1e-9
    # Support entries come in exactly-equal runs delimited by value changes.
    seg = tv_segments(g)
    for s in range(seg.max() + 1):
        vals = g[seg == s]
        assert np.all(vals == vals[0])


@given(finite_vectors, st.floats(-10, 10))
def test_fusedmax_shift_invariance(p, c):
    assert np.abs(fusedmax(p + c, 1.0, 0.3) - fusedmax(p, 1.0, 0.3)).max() < 1e-9


@given(finite_vectors)
def test_fusedmax_reversal_equivariance(p):
    # Fusedmax depends on adjacency, so the order-respecting permutation
    # (reversal) is the equivariance that holds.
    assert np.abs(fusedmax(p[::-1], 1.0, 0.3) - fusedmax(p, 1.0, 0.3)[::-1]).max() < 1e-9


def test_simplex_bisect_oracle_matches_enum(rng):
    for _ in range(50):
        p = rng.normal(size=int(rng.integers(1, 8)))
        assert np.abs(simplex_project_bisect(p) - sparsemax_support_enum(p)).max() < 1e-9


# -- vector-Jacobian products -------------------------------------------------


def _directional_fd(f, p, u, eps=1e-6):
    return (f(p + eps * u) - f(p - eps * u)) / (2.0 * eps)


def _support_stable(f, p, eps=1e-6):
    base = f(p) > 0
    for i in range(p.size):
        for sign in (-1.0, 1.0):
            q = p.copy()
            q[i] += sign * eps
            if not np.array_equal(f(q) > 0, base):
                return False
    return True


def test_sparsemax_vjp_matches_finite_differences(rng):
    checked = 0
    while checked < 25:
        n = int(rng.integers(2, 10))
        p = rng.normal(scale=2.0, size=n)
        if not _support_stable(sparsemax, p):
            continue
        u = rng.normal(size=n)
        g = sparsemax(p)
        analytic = proj.sparsemax_vjp(u, g)  # J symmetric: JVP == VJP
        fd = _directional_fd(sparsemax, p, u)
        denom = max(1.0, np.abs(analytic).max())
        assert np.abs(analytic - fd).max() / denom < 1e-5
        checked += 1


def test_fusedmax_vjp_matches_finite_differences(rng):
    checked = 0
    while checked < 25:
        n = int(rng.integers(2, 10))
        p = rng.normal(scale=2.0, size=n)
        lam = float(rng.uniform(0.05, 0.5))
        f = lambda q: fusedmax(q, 1.0, lam)
        stable_structure = _support_stable(f, p) and _support_stable(
            lambda q: np.bincount(tv_segments(tv_prox(q, lam)), minlength=n) / n, p
        )
        if not stable_structure:
            continue
        u = rng.normal(size=n)
        g = f(p)
        fused = tv_prox(p, lam)
        analytic = proj.fusedmax_vjp(u, g, fused, 1.0)
        fd = _directional_fd(f, p, u)
        denom = max(1.0, np.abs(analytic).max())
        assert np.abs(analytic - fd).max() / denom < 1e-5
        checked += 1


def test_softmax_vjp_matches_finite_differences(rng):
    p = rng.normal(size=7)
    u = rng.normal(size=7)
    g = softmax(p)
    analytic = proj.softmax_vjp(u, g)
    fd = _directional_fd(softmax, p, u)
    assert np.abs(analytic - fd).max() < 1e-6


def test_apply_gate_records_on_tape(rng):
    p = rng.normal(size=6)
    for mode in ("softmax", "sparsemax", "fusedmax"):
        weights = rng.normal(size=6)

        def f(t):
            gate = apply_gate(t, mode, gamma=1.0, lam=0.2)
            return T.tsum(T.mul(gate, Tensor(weights)))

        err = T.grad_check(f, Tensor(p), eps=1e-6)
        assert err < 1e-5, mode


def test_apply_gate_rejects_unknown_mode():
    with pytest.raises(ParameterError):
        apply_gate(Tensor([1.0, 2.0]), "magic")
