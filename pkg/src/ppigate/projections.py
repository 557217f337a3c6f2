"""Mappings from score vectors onto the probability simplex.

Three gate mechanisms are provided. ``softmax`` has full support;
``sparsemax`` is the Euclidean projection onto the simplex and zeroes out
low scores; ``fusedmax`` additionally fuses adjacent positions into
equal-weight segments via a 1-D total-variation prox. All three are exact,
non-iterative, and come with closed-form vector-Jacobian products so they
can sit inside the gradient tape.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ParameterError(ValueError):
    """A projection hyperparameter is outside its valid range."""


GATING_MODES = ("none", "softmax", "sparsemax", "fusedmax")


def _as_vector(p) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"expected a non-empty 1-D score vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("score vector contains non-finite entries")
    return arr


def gate_support(g: np.ndarray) -> np.ndarray:
    """Indices with strictly positive gate value."""
    return np.flatnonzero(np.asarray(g) > 0.0)


# --------------------------------------------------------------------------
# Softmax


def softmax(p) -> np.ndarray:
    p = _as_vector(p)
    shifted = np.exp(p - p.max())
    return shifted / shifted.sum()


def softmax_vjp(grad: np.ndarray, output: np.ndarray) -> np.ndarray:
    g = output
    return g * grad - g * float(g @ grad)


# --------------------------------------------------------------------------
# Sparsemax


def sparsemax(p, temperature: float = 1.0) -> np.ndarray:
    """Euclidean projection of p / temperature onto the simplex.

    Sort-and-threshold: with scores sorted descending, the support size is
    the largest k such that 1 + k * p_(k) > sum_{j<=k} p_(j); the shared
    threshold tau is (sum over the support - 1) / k. Ties keep their
    original order (stable sort), so equal scores get equal gates.
    """
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    p = _as_vector(p) / temperature
    order = np.argsort(-p, kind="stable")
    z = p[order]
    cssv = np.cumsum(z)
    ks = np.arange(1, p.size + 1)
    valid = 1.0 + ks * z > cssv
    k = int(ks[valid][-1])
    tau = (cssv[k - 1] - 1.0) / k
    return np.maximum(p - tau, 0.0)


def sparsemax_vjp(grad: np.ndarray, output: np.ndarray) -> np.ndarray:
    """Adjoint through the projection, using the forward-pass support."""
    support = output > 0.0
    out = np.zeros_like(grad)
    out[support] = grad[support] - grad[support].mean()
    return out


# --------------------------------------------------------------------------
# 1-D total-variation proximal operator (taut string)


def tv_prox(z, lam: float) -> np.ndarray:
    """argmin_y 0.5*||y - z||^2 + lam * sum_j |y_{j+1} - y_j|.

    Direct (non-iterative) taut-string construction: the cumulative sums of
    the solution form the shortest path through the tube of half-width lam
    around the cumulative sums of z, pinned at both ends. The path is built
    in one sweep with a convex-minorant hull of the upper tube and a
    concave-majorant hull of the lower tube; every kink of the path starts
    a new constant segment of the output.
    """
    if lam < 0:
        raise ParameterError(f"lam must be nonnegative, got {lam}")
    z = np.ascontiguousarray(z, dtype=np.float64)
    n = z.size
    if n <= 1 or lam == 0.0:
        return z.copy()

    cum = np.empty(n + 1)
    cum[0] = 0.0
    np.cumsum(z, out=cum[1:])

    y = np.empty(n)
    anchor_i, anchor_v = 0, 0.0
    emit = 0  # next output position to fill
    up: list[tuple[int, float]] = []  # convex hull below the upper tube
    lo: list[tuple[int, float]] = []  # concave hull above the lower tube

    def push(hull: list, i: int, v: float, upper: bool) -> None:
        while hull:
            pi, pv = hull[-1]
            qi, qv = hull[-2] if len(hull) >= 2 else (anchor_i, anchor_v)
            s_prev = (pv - qv) / (pi - qi)
            s_new = (v - pv) / (i - pi)
            # Convex minorant needs increasing slopes, concave decreasing.
            if (s_new <= s_prev) if upper else (s_new >= s_prev):
                hull.pop()
            else:
                break
        hull.append((i, v))

    def first_slope(hull: list) -> float:
        i, v = hull[0]
        return (v - anchor_v) / (i - anchor_i)

    def bend(emitting: list) -> None:
        # Fix the string at the front vertex of the emitting hull and fill
        # that run of the output with a single constant slope. The other
        # hull holds exactly one vertex past the new anchor at this point,
        # and the emitting hull stays valid after losing its front.
        nonlocal anchor_i, anchor_v, emit
        bi, bv = emitting.pop(0)
        y[emit:bi] = (bv - anchor_v) / (bi - anchor_i)
        emit = bi
        anchor_i, anchor_v = bi, bv

    for k in range(1, n + 1):
        if k < n:
            uk, lk = cum[k] + lam, cum[k] - lam
        else:
            uk = lk = cum[n]  # pinned endpoint

        push(up, k, uk, upper=True)
        while lo and up and first_slope(lo) > first_slope(up):
            bend(lo)
        push(lo, k, lk, upper=False)
        while lo and up and first_slope(lo) > first_slope(up):
            bend(up)

    if emit < n:
        y[emit:] = (cum[n] - anchor_v) / (n - anchor_i)
    return y


def tv_segments(y: np.ndarray) -> np.ndarray:
    """Segment id per position; runs of exactly-equal values share an id."""
    y = np.asarray(y)
    ids = np.zeros(y.size, dtype=np.int64)
    if y.size > 1:
        ids[1:] = np.cumsum(y[1:] != y[:-1])
    return ids


def tv_prox_vjp(grad: np.ndarray, output: np.ndarray) -> np.ndarray:
    """Adjoint of tv_prox: average the incoming adjoint within each segment."""
    seg = tv_segments(output)
    sums = np.bincount(seg, weights=grad)
    counts = np.bincount(seg)
    return (sums / counts)[seg]


# --------------------------------------------------------------------------
# Fusedmax


def fusedmax(p, gamma: float = 1.0, lam: float = 0.1) -> np.ndarray:
    """Simplex projection of p / gamma with a fused (TV) penalty lam.

    Computed exactly by composition: first the TV prox fuses neighbours
    into constant segments, then sparsemax projects the fused vector onto
    the simplex. Segments survive the projection intact, so the output is
    sparse and piecewise constant.
    """
    if gamma <= 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    if lam < 0:
        raise ParameterError(f"lam must be nonnegative, got {lam}")
    p = _as_vector(p)
    fused = tv_prox(p / gamma, lam)
    return sparsemax(fused)


def fusedmax_vjp(
    grad: np.ndarray, output: np.ndarray, fused: np.ndarray, gamma: float
) -> np.ndarray:
    """Adjoint through sparsemax, then the TV prox, then the 1/gamma scale."""
    u = sparsemax_vjp(grad, output)
    u = tv_prox_vjp(u, fused)
    return u / gamma


# --------------------------------------------------------------------------
# Tape primitive used by the encoder


def apply_gate(
    scores: Tensor,
    mode: str,
    gamma: float = 1.0,
    lam: float = 0.1,
    temperature: float = 1.0,
) -> Tensor:
    """Project a score tensor to a gate tensor, recording the exact VJP."""
    if mode not in ("softmax", "sparsemax", "fusedmax"):
        raise ParameterError(f"unknown gating mode {mode!r}")
    p = scores.array
    if mode == "softmax":
        g = softmax(p)

        def vjp(out_grad, bufs):
            if bufs[0] is not None:
                bufs[0] += softmax_vjp(out_grad, g)

    elif mode == "sparsemax":
        g = sparsemax(p, temperature)

        def vjp(out_grad, bufs):
            if bufs[0] is not None:
                bufs[0] += sparsemax_vjp(out_grad, g) / temperature

    else:
        fused = tv_prox(p / gamma, lam)
        g = sparsemax(fused)

        def vjp(out_grad, bufs):
            if bufs[0] is not None:
                bufs[0] += fusedmax_vjp(out_grad, g, fused, gamma)

    out = Tensor._wrap(g)
    return T.record(out, (scores,), vjp)


def uniform_gates(length: int) -> np.ndarray:
    return np.full(length, 1.0 / length)
