"""Earlier convolutional NMF update schemes, generalized to any beta.

Each scheme keeps its structural signature while the exponents ``beta - 1``
and ``beta - 2`` replace its native KL or Euclidean ones:

``smaragdis_biased``
    Lags are visited in order; for each lag ``H`` is updated from that lag
    alone with an unshifted denominator, then the slice ``W_m`` is updated
    from the new ``H``. ``U`` is rebuilt after every partial update.
``smaragdis_average``
    All slices are updated from ``H^t``, then ``H`` becomes the mean of the
    per-lag updates, again with unshifted denominators.
``schmidt``
    The exact updates, except that at ``beta == 1`` the activation
    denominator uses the unshifted all-ones matrix.
``wang``
    Slices are updated one after another, each from a reconstruction that is
    patched incrementally after the previous slice changed; ``H`` is then
    averaged as in ``smaragdis_average``.

For ``M == 1`` the update formulas of every scheme coincide with the exact
ones. All but ``smaragdis_biased`` then also follow the same trajectory;
the biased scheme updates ``H`` before ``W`` and so alternates in the
opposite order.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .betadiv import D_beta
from .cnmf import (
    FactorizationState,
    _alternating_step,
    _power_pair,
    h_slice_terms,
    reconstruct,
    refresh_U_incremental,
    step_proposed,
    update_W,
    w_slice_terms,
)
from .nnmat import safe_divide

METHODS = ("proposed", "smaragdis_biased", "smaragdis_average", "schmidt", "wang")


def _update_slice(W_m, H, V, U, m, beta, eps):
    if m >= H.shape[1]:
        return W_m.copy()
    num_base, den_base = _power_pair(V, U, beta, eps)
    num, den = w_slice_terms(num_base, den_base, H, m)
    return W_m * safe_divide(num, den, eps)


def _averaged_H(W, H, V, U, beta, eps):
    num_base, den_base = _power_pair(V, U, beta, eps)
    acc = np.zeros_like(H)
    for m in range(W.shape[0]):
        num, den = h_slice_terms(W[m], num_base, den_base, m, shift_denominator=False)
        acc += H * safe_divide(num, den, eps)
    return acc / W.shape[0]


def _finish(state, V, W, H):
    U = reconstruct(W, H)
    loss = D_beta(V, U, state.beta, state.eps)
    return replace(state, W=W, H=H, U=U, t=state.t + 1), loss


def step_smaragdis_biased(state: FactorizationState, V: np.ndarray):
    beta, eps = state.beta, state.eps
    W = state.W.copy()
    H, U = state.H, state.U
    for m in range(W.shape[0]):
        num_base, den_base = _power_pair(V, U, beta, eps)
        num, den = h_slice_terms(W[m], num_base, den_base, m, shift_denominator=False)
        H = H * safe_divide(num, den, eps)
        U = reconstruct(W, H)
        W[m] = _update_slice(W[m], H, V, U, m, beta, eps)
        U = reconstruct(W, H)
    loss = D_beta(V, U, beta, eps)
    return replace(state, W=W, H=H, U=U, t=state.t + 1), loss


def step_smaragdis_average(state: FactorizationState, V: np.ndarray):
    beta, eps = state.beta, state.eps
    W_new = update_W(state.W, state.H, V, state.U, beta, eps)
    U_tilde = reconstruct(W_new, state.H)
    H_new = _averaged_H(W_new, state.H, V, U_tilde, beta, eps)
    return _finish(state, V, W_new, H_new)


def step_schmidt(state: FactorizationState, V: np.ndarray):
    if state.beta != 1:
        return step_proposed(state, V)
    return _alternating_step(state, V, shift_denominator=False)


def step_wang(state: FactorizationState, V: np.ndarray):
    beta, eps = state.beta, state.eps
    W = state.W.copy()
    H, U = state.H, state.U
    for m in range(W.shape[0]):
        old = W[m].copy()
        W[m] = _update_slice(old, H, V, U, m, beta, eps)
        U = refresh_U_incremental(U, old, W[m], H, m)
    H_new = _averaged_H(W, H, V, U, beta, eps)
    return _finish(state, V, W, H_new)


STEPS = {
    "proposed": step_proposed,
    "smaragdis_biased": step_smaragdis_biased,
    "smaragdis_average": step_smaragdis_average,
    "schmidt": step_schmidt,
    "wang": step_wang,
}


def get_step(method: str):
    try:
        return STEPS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; valid: {', '.join(METHODS)}") from None
