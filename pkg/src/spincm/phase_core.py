"""Matrices and algebraic identities attached to a phase point.

Everything here is closed-form linear algebra: the Lax matrix and its
companion evolution matrix (in both the sinh and the exponentiated-variable
form), the spin overlap matrix, the commutation identity relating them to
the diagonal coordinate matrix, and residues at infinity of resolvent
expressions, which reduce to finite sums of matrix powers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RangeOverflowError
from .state import SpinState

_LOG_MAX = float(np.log(np.finfo(float).max))  # ~709.78


def pole_exponentials(state: SpinState) -> np.ndarray:
    """Vector w_i = exp(2*gamma*x_i); raises on double-precision overflow."""
    arg = 2.0 * state.gamma * state.x
    if np.any(np.abs(arg) > _LOG_MAX - 1.0):
        raise RangeOverflowError(
            f"|2*gamma*x| up to {np.max(np.abs(arg)):.3g} exceeds the exp() range"
        )
    return np.exp(arg)


def exp_coordinates(state: SpinState) -> np.ndarray:
    """Diagonal matrix W = diag(exp(2*gamma*x_i))."""
    return np.diag(pole_exponentials(state))


def overlap_matrix(state: SpinState) -> np.ndarray:
    """Spin overlaps R_ik = b_i . a_k; unit diagonal for a valid state."""
    return state.b @ state.a.T


def _offdiag_mask(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def pair_differences(x: np.ndarray) -> np.ndarray:
    """Antisymmetric matrix of coordinate differences x_i - x_k."""
    x = np.asarray(x, dtype=float)
    return x[:, None] - x[None, :]


def sinh_kernel(gamma: float, x: np.ndarray) -> np.ndarray:
    """Off-diagonal matrix 1/sinh(gamma*(x_i - x_k)), zero diagonal."""
    n = len(x)
    d = pair_differences(x)
    off = _offdiag_mask(n)
    out = np.zeros((n, n))
    out[off] = 1.0 / np.sinh(gamma * d[off])
    return out


def lax_matrix_arrays(gamma: float, x, p, a, b) -> np.ndarray:
    """Array-level Lax matrix; used by integrators on raw coordinates."""
    n = len(x)
    R = np.asarray(b) @ np.asarray(a).T
    L = -gamma * R * sinh_kernel(gamma, x)
    L[np.arange(n), np.arange(n)] = -np.asarray(p, dtype=float)
    return L


def lax_matrix(state: SpinState) -> np.ndarray:
    """Lax matrix: diagonal -p_i, off-diagonal -gamma (b_i.a_k)/sinh(gamma(x_i-x_k))."""
    return lax_matrix_arrays(state.gamma, state.x, state.p, state.a, state.b)


def lax_matrix_exponential_form(state: SpinState) -> np.ndarray:
    """Same matrix built from w_i = exp(2*gamma*x_i):
    off-diagonal -2*gamma*sqrt(w_i*w_k)(b_i.a_k)/(w_i - w_k).

    Numerically inferior to the sinh form for |gamma| << 1 (cancellation in
    w_i - w_k); kept as an independent algebraic cross-check path.
    """
    n = state.n_particles
    w = pole_exponentials(state)
    R = overlap_matrix(state)
    off = _offdiag_mask(n)
    dw = w[:, None] - w[None, :]
    L = np.zeros((n, n))
    root = np.sqrt(np.outer(w, w))
    L[off] = -2.0 * state.gamma * root[off] * R[off] / dw[off]
    L[np.arange(n), np.arange(n)] = -state.p
    return L


def m_matrix_arrays(gamma: float, x, p, a, b) -> np.ndarray:
    """Array-level evolution companion matrix (gauge with no extra diagonal
    terms): diagonal 2*gamma*p_i, off-diagonal
    2*gamma^2 (b_i.a_k) e^{gamma(x_i-x_k)} / sinh^2(gamma(x_i-x_k))."""
    n = len(x)
    d = pair_differences(np.asarray(x, dtype=float))
    R = np.asarray(b) @ np.asarray(a).T
    off = _offdiag_mask(n)
    M = np.zeros((n, n))
    sh = np.sinh(gamma * d[off])
    M[off] = 2.0 * gamma**2 * R[off] * np.exp(gamma * d[off]) / sh**2
    M[np.arange(n), np.arange(n)] = 2.0 * gamma * np.asarray(p, dtype=float)
    return M


def m_matrix(state: SpinState) -> np.ndarray:
    """Companion matrix of the second flow; diag gamma*xdot_i with xdot = 2p."""
    return m_matrix_arrays(state.gamma, state.x, state.p, state.a, state.b)


def m_matrix_exponential_form(state: SpinState) -> np.ndarray:
    """Exponentiated-variable form: off-diagonal
    8*gamma^2 w_i^{3/2} w_k^{1/2} (b_i.a_k)/(w_i - w_k)^2."""
    n = state.n_particles
    w = pole_exponentials(state)
    R = overlap_matrix(state)
    off = _offdiag_mask(n)
    dw = w[:, None] - w[None, :]
    num = np.outer(w ** 1.5, np.sqrt(w))
    M = np.zeros((n, n))
    M[off] = 8.0 * state.gamma**2 * num[off] * R[off] / dw[off] ** 2
    M[np.arange(n), np.arange(n)] = 2.0 * state.gamma * state.p
    return M


@dataclass(frozen=True)
class LaxPair:
    """The pair (L, M) evaluated at one state; diag(L) is exactly -p."""

    L: np.ndarray
    M: np.ndarray


def lax_pair(state: SpinState) -> LaxPair:
    return LaxPair(L=lax_matrix(state), M=m_matrix(state))


def commutation_identity_residual(state: SpinState) -> float:
    """Max-entry residual of [L, W] = 2*gamma*(W^{1/2} R W^{1/2} - W).

    Exact in exact arithmetic for unit pairing; the diagonal of the right
    side is 2*gamma*w_i*(b_i.a_i - 1), so off-constraint states report a
    residual proportional to the violation.
    """
    L = lax_matrix(state)
    w = pole_exponentials(state)
    R = overlap_matrix(state)
    comm = L * w[None, :] - w[:, None] * L
    root = np.sqrt(w)
    rhs = 2.0 * state.gamma * (np.outer(root, root) * R - np.diag(w))
    return float(np.max(np.abs(comm - rhs)))


def commutation_identity_scale(state: SpinState) -> float:
    """Dimensional scale 1 + ||L||_inf * ||W||_inf used to normalize the residual."""
    L = lax_matrix(state)
    w = pole_exponentials(state)
    return 1.0 + float(np.max(np.abs(L))) * float(np.max(np.abs(w)))


def resolvent_residue_single(m: int, A: np.ndarray) -> np.ndarray:
    """Residue at infinity of z^m (zI - A)^{-1}, i.e. the matrix power A^m.

    Convention: the residue at infinity of z^{-n} is 1 for n = 1 and 0
    otherwise, so the geometric resolvent series leaves exactly A^m.
    """
    if m < 0 or int(m) != m:
        raise ValueError("power index m must be a nonnegative integer")
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    return np.linalg.matrix_power(A, int(m))


def residue_pair_matrix(m: int, A: np.ndarray, X: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Matrix residue sum_{j+k=m-1} A^j X B^k (zero matrix for m = 0).

    This is the residue at infinity of z^m (zI-A)^{-1} X (zI-B)^{-1}.
    """
    if m < 0 or int(m) != m:
        raise ValueError("power index m must be a nonnegative integer")
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    X = np.asarray(X, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != B.shape[1]:
        raise ValueError("A and B must be square")
    if X.shape != (n, B.shape[0]):
        raise ValueError("X has incompatible shape")
    out = np.zeros((n, B.shape[0]))
    left = np.eye(n)
    rights = [np.eye(B.shape[0])]
    for _ in range(int(m) - 1):
        rights.append(rights[-1] @ B)
    for j in range(int(m)):
        out += left @ X @ rights[int(m) - 1 - j]
        left = left @ A
    return out


def resolvent_residue_pair(m: int, X, A, Y, B) -> float:
    """Scalar residue at infinity of z^m tr(X (zI-A)^{-1} Y (zI-B)^{-1}),
    equal to sum_{j+k=m-1} tr(X A^j Y B^k); zero for m = 0."""
    X = np.asarray(X, dtype=float)
    A = np.asarray(A, dtype=float)
    if X.ndim != 2 or A.ndim != 2 or X.shape[1] != A.shape[0]:
        raise ValueError("X and A have mismatched dimensions")
    return float(np.trace(X @ residue_pair_matrix(m, A, np.asarray(Y, dtype=float), B)))
