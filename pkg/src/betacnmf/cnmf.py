"""Convolutional NMF under the beta-divergence.

The model approximates a nonnegative ``K x N`` matrix ``V`` by

    U = sum_m W[m] @ right_shift(H, m),   m = 0 .. M-1

with a dictionary ``W`` of shape ``(M, K, I)`` and activations ``H`` of
shape ``(I, N)``. ``M == 1`` is ordinary NMF.

The shift operators are applied through column slicing inside the kernels:
``right_shift(X, m) @ Y.T`` only touches ``X[:, :N-m]`` and ``Y[:, m:]``,
which avoids allocating the zero-padded copies.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .betadiv import D_beta
from .nnmat import DEFAULT_EPS, DimensionError, as_nonneg, entrywise_pow, safe_divide

H_UPDATE_WEIGHTS = ("new", "old")


class NumericalError(ArithmeticError):
    """The loss became NaN or infinite during a fit."""

    def __init__(self, iteration: int, trace: "LossTrace | None" = None):
        super().__init__(f"non-finite loss at iteration {iteration}")
        self.iteration = iteration
        self.trace = trace


def as_dictionary(w, name: str = "W") -> np.ndarray:
    """Validate an ``(M, K, I)`` stack of nonnegative dictionary slices."""
    a = np.array(w, dtype=np.float64)
    if a.ndim == 2:
        a = a[np.newaxis]
    if a.ndim != 3 or min(a.shape) < 1:
        raise DimensionError(f"{name} must have shape (M, K, I), got {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ValueError(f"{name} must be finite and nonnegative")
    return a


def _check_factors(W: np.ndarray, H: np.ndarray) -> None:
    if W.ndim != 3 or H.ndim != 2:
        raise DimensionError(f"expected W (M, K, I) and H (I, N), got {W.shape} and {H.shape}")
    if W.shape[2] != H.shape[0]:
        raise DimensionError(f"W has {W.shape[2]} components but H has {H.shape[0]} rows")


def _check_data(W: np.ndarray, H: np.ndarray, *mats: np.ndarray) -> None:
    _check_factors(W, H)
    shape = (W.shape[1], H.shape[1])
    for x in mats:
        if x.shape != shape:
            raise DimensionError(f"expected a {shape} matrix, got {x.shape}")


def reconstruct(W: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``sum_m W[m] @ right_shift(H, m)``."""
    _check_factors(W, H)
    n = H.shape[1]
    U = np.zeros((W.shape[1], n))
    for m in range(min(W.shape[0], n)):
        U[:, m:] += W[m] @ H[:, : n - m]
    return U


def _power_pair(V, U, beta, eps):
    """``(V * U^(beta-2), U^(beta-1))``, the numerator and denominator bases."""
    return V * entrywise_pow(U, beta - 2.0, eps), entrywise_pow(U, beta - 1.0, eps)


def w_slice_terms(num_base, den_base, H, m):
    """Numerator and denominator of the slice-``m`` dictionary multiplier.

    Both are ``base @ right_shift(H, m).T``.
    """
    n = H.shape[1]
    hs = H[:, : n - m].T
    return num_base[:, m:] @ hs, den_base[:, m:] @ hs


def update_W(W, H, V, U, beta: float, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Multiplicative update of every dictionary slice from the same ``U``."""
    _check_data(W, H, V, U)
    num_base, den_base = _power_pair(V, U, beta, eps)
    W_new = np.empty_like(W)
    for m in range(W.shape[0]):
        if m >= H.shape[1]:
            # right_shift(H, m) is all zeros; the slice has no effect on U
            W_new[m] = W[m]
            continue
        num, den = w_slice_terms(num_base, den_base, H, m)
        W_new[m] = W[m] * safe_divide(num, den, eps)
    return W_new


def h_slice_terms(W_m, num_base, den_base, m, shift_denominator: bool = True):
    """Numerator and denominator contributed by lag ``m`` to the activation multiplier.

    The numerator is ``W_m.T @ left_shift(num_base, m)``. The denominator is
    the same product with ``den_base``, or with ``den_base`` left unshifted
    when ``shift_denominator`` is false (the misaligned variant used by
    several earlier update schemes).
    """
    n = num_base.shape[1]
    num = np.zeros((W_m.shape[1], n))
    if m < n:
        num[:, : n - m] = W_m.T @ num_base[:, m:]
    if not shift_denominator:
        return num, W_m.T @ den_base
    den = np.zeros_like(num)
    if m < n:
        den[:, : n - m] = W_m.T @ den_base[:, m:]
    return num, den


def update_H(
    W, H, V, U, beta: float, eps: float = DEFAULT_EPS, *, shift_denominator: bool = True
) -> np.ndarray:
    """Multiplicative update of the activations using all lags at once.

    Powers of ``U`` are taken before shifting, so columns shifted in from
    beyond ``N`` contribute nothing to either sum.
    """
    _check_data(W, H, V, U)
    num_base, den_base = _power_pair(V, U, beta, eps)
    num = np.zeros_like(H)
    den = np.zeros_like(H)
    for m in range(W.shape[0]):
        a, b = h_slice_terms(W[m], num_base, den_base, m, shift_denominator)
        num += a
        den += b
    return H * safe_divide(num, den, eps)


def refresh_U_incremental(U, W_old_m, W_new_m, H, m: int) -> np.ndarray:
    """Patch ``U`` after dictionary slice ``m`` changed from ``W_old_m`` to ``W_new_m``."""
    if W_old_m.shape != W_new_m.shape or W_old_m.shape[1] != H.shape[0]:
        raise DimensionError("dictionary slice and activation shapes disagree")
    if U.shape != (W_old_m.shape[0], H.shape[1]):
        raise DimensionError(f"U has shape {U.shape}")
    n = H.shape[1]
    out = U.copy()
    if m < n:
        out[:, m:] += (W_new_m - W_old_m) @ H[:, : n - m]
        np.maximum(out, 0.0, out=out)
    return out


def gradient_W(W, H, V, beta: float, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Partial derivatives of ``D_beta(V | U)`` with respect to every ``w_ki(m)``."""
    U = reconstruct(W, H)
    _check_data(W, H, V)
    num_base, den_base = _power_pair(V, U, beta, eps)
    g = np.zeros_like(W)
    for m in range(min(W.shape[0], H.shape[1])):
        num, den = w_slice_terms(num_base, den_base, H, m)
        g[m] = den - num
    return g


def gradient_H(W, H, V, beta: float, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Partial derivatives of ``D_beta(V | U)`` with respect to every ``h_in``."""
    U = reconstruct(W, H)
    _check_data(W, H, V)
    num_base, den_base = _power_pair(V, U, beta, eps)
    g = np.zeros_like(H)
    for m in range(W.shape[0]):
        num, den = h_slice_terms(W[m], num_base, den_base, m)
        g += den - num
    return g


@dataclass
class FactorizationState:
    W: np.ndarray
    H: np.ndarray
    U: np.ndarray
    beta: float
    eps: float = DEFAULT_EPS
    t: int = 0
    # which dictionary the activation update multiplies by: W^{t+1} or W^t
    h_update_weights: str = "new"

    @classmethod
    def from_factors(cls, W, H, beta, eps=DEFAULT_EPS, h_update_weights="new"):
        if h_update_weights not in H_UPDATE_WEIGHTS:
            raise ValueError(f"h_update_weights must be one of {H_UPDATE_WEIGHTS}")
        W = as_dictionary(W)
        H = as_nonneg(H, "H")
        return cls(W, H, reconstruct(W, H), float(beta), eps, 0, h_update_weights)


def step_proposed(state: FactorizationState, V: np.ndarray) -> tuple[FactorizationState, float]:
    """One alternating iteration of the exact updates; returns the new state and its loss."""
    return _alternating_step(state, V, shift_denominator=True)


def _alternating_step(state, V, shift_denominator):
    beta, eps = state.beta, state.eps
    W, H = state.W, state.H
    W_new = update_W(W, H, V, state.U, beta, eps)
    U_tilde = state.U
    for m in range(W.shape[0]):
        U_tilde = refresh_U_incremental(U_tilde, W[m], W_new[m], H, m)
    W_h = W_new if state.h_update_weights == "new" else W
    H_new = update_H(W_h, H, V, U_tilde, beta, eps, shift_denominator=shift_denominator)
    U_new = reconstruct(W_new, H_new)
    loss = D_beta(V, U_new, beta, eps)
    return replace(state, W=W_new, H=H_new, U=U_new, t=state.t + 1), loss


@dataclass
class FitOptions:
    max_iters: int = 1000
    rel_tol: float | None = None
    record_trace: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol is not None and not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")


@dataclass
class LossTrace:
    """Loss after each iteration of one run; iteration 0 is the initial loss."""

    method: str
    beta: float
    run_id: int = 0
    iterations: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    elapsed_ns: list[int] = field(default_factory=list)
    failure: str | None = None

    def append(self, iteration: int, loss: float, elapsed_ns: int) -> None:
        self.iterations.append(iteration)
        self.losses.append(loss)
        self.elapsed_ns.append(elapsed_ns)

    def __len__(self) -> int:
        return len(self.iterations)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    @property
    def wall_time_ns(self) -> int:
        return self.elapsed_ns[-1]


Step = Callable[[FactorizationState, np.ndarray], "tuple[FactorizationState, float]"]


def random_init(K: int, I: int, N: int, M: int, rng: np.random.Generator):
    """Strictly positive starting factors, entries uniform on (0.1, 1.1)."""
    W = 0.1 + rng.random((M, K, I))
    H = 0.1 + rng.random((I, N))
    return W, H


def fit(
    V,
    init,
    beta: float,
    opts: FitOptions | None = None,
    *,
    step: Step = step_proposed,
    method: str = "proposed",
    eps: float = DEFAULT_EPS,
    h_update_weights: str = "new",
    run_id: int = 0,
) -> tuple[FactorizationState, LossTrace]:
    """Iterate ``step`` from ``init = (W, H)`` and record the loss trace.

    Raises ``ValueError`` if the initial factors are not strictly positive and
    ``NumericalError`` (carrying the partial trace) if the loss stops being
    finite.
    """
    opts = opts or FitOptions()
    V = as_nonneg(V, "V")
    W0, H0 = init
    state = FactorizationState.from_factors(W0, H0, beta, eps, h_update_weights)
    if np.any(state.W <= 0) or np.any(state.H <= 0):
        raise ValueError("initial factors must be strictly positive")
    _check_data(state.W, state.H, V)

    trace = LossTrace(method, float(beta), run_id)
    prev = D_beta(V, state.U, beta, eps)
    if not math.isfinite(prev):
        raise NumericalError(0, trace)
    trace.append(0, prev, 0)
    start = time.perf_counter_ns()
    for t in range(1, opts.max_iters + 1):
        state, loss = step(state, V)
        if not math.isfinite(loss):
            raise NumericalError(t, trace)
        last = t == opts.max_iters
        if opts.rel_tol is not None and (prev == 0 or abs(prev - loss) < opts.rel_tol * abs(prev)):
            last = True
        if opts.record_trace or last:
            trace.append(t, loss, time.perf_counter_ns() - start)
        if last:
            break
        prev = loss
    return state, trace
