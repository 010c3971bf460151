"""Reconstruction of the wave-function side of the correspondence.

From a phase point one can rebuild the objects of the underlying integrable
hierarchy: the tau polynomial in w = exp(2*gamma*x), the matrix wave
function and its adjoint (constant term plus simple poles with rank-1
residues), the first expansion coefficient w1 and the potential V.  The
functions below evaluate these objects and return machine-checkable
residuals for the identities they satisfy: the linear (Schroedinger-type)
problems of the second flow, the evolution law of the wave vectors, and the
bilinear residue relation tying every higher flow of the pole data to a
residue at infinity in the spectral parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConditioningError, PoleProximityError, RangeOverflowError, SpinCMError
from .flows import FlowSpec, flow_rhs, integrate
from .phase_core import (
    _LOG_MAX,
    lax_matrix,
    m_matrix,
    overlap_matrix,
    pole_exponentials,
    residue_pair_matrix,
    resolvent_residue_single,
)
from .state import SpinState

Z_MARGIN_DEFAULT = 1e-6
POLE_CLEARANCE = 1e-8


@dataclass(frozen=True)
class KpConstants:
    """Constant color matrices of the wave-function ansatz.

    ``C`` multiplies the constant term of the wave function (its inverse
    appears in the adjoint); ``S`` is the constant term of the first
    expansion coefficient.  Both are time independent; identity and zero are
    the canonical choice and make the tilde spin vectors coincide with a, b.
    """

    C: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        C = np.array(self.C, dtype=float)
        S = np.array(self.S, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1] or S.shape != C.shape:
            raise ValueError("C and S must be square matrices of equal size")
        if np.linalg.cond(C) > 1e6:
            raise ValueError("C is too ill-conditioned (cond > 1e6)")
        C.flags.writeable = False
        S.flags.writeable = False
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "S", S)

    @classmethod
    def defaults(cls, n_colors: int) -> "KpConstants":
        return cls(C=np.eye(n_colors), S=np.zeros((n_colors, n_colors)))


@dataclass(frozen=True)
class WaveVectors:
    """Per-pole wave data at spectral point z: c[i, color] and c_star[i, color]."""

    c: np.ndarray
    c_star: np.ndarray
    z: float


@dataclass(frozen=True)
class ReducedWave:
    """Pole parts of the wave pair at one (z, w), exponential factors stripped.

    F and G are the wave function and adjoint pole parts; dF, d2F, dG, d2G
    are derivatives with respect to w for analytic space differentiation.
    """

    F: np.ndarray
    G: np.ndarray
    dF: np.ndarray
    d2F: np.ndarray
    dG: np.ndarray
    d2G: np.ndarray


def _consts(state: SpinState, consts: KpConstants | None) -> KpConstants:
    if consts is None:
        return KpConstants.defaults(state.n_colors)
    if consts.C.shape[0] != state.n_colors:
        raise ValueError("constants have the wrong color dimension")
    return consts


def spectral_margin(state: SpinState, z: float) -> float:
    """Distance from z to the union of the spectra of L + gamma I and L - gamma I."""
    lam = np.linalg.eigvals(lax_matrix(state))
    return float(
        min(np.min(np.abs(z - (lam + state.gamma))), np.min(np.abs(z - (lam - state.gamma))))
    )


def default_spectral_point(state: SpinState) -> float:
    """A real z comfortably outside both shifted spectra."""
    lam = np.linalg.eigvals(lax_matrix(state))
    return float(np.max(lam.real) + abs(state.gamma) + 1.5)


def default_w_samples(state: SpinState, count: int = 8) -> np.ndarray:
    """Deterministic positive sample points in w, away from all w_i.

    Log-uniform grid over the pole range widened by one unit, filtered for
    clearance from the poles, plus geometric gap midpoints and a far point.
    """
    w = np.sort(pole_exponentials(state))
    lo, hi = float(np.log(w[0]) - 1.0), float(np.log(w[-1]) + 1.0)
    logs_w = np.log(w)
    picked: list[float] = []
    candidates = list(np.linspace(lo, hi, 4 * count))
    candidates += [0.5 * (logs_w[i] + logs_w[i + 1]) for i in range(len(w) - 1)]
    candidates.append(float(np.log(w[-1]) + 1.5))
    span = max(hi - lo, 1.0)
    for lw in candidates:
        if len(picked) >= count:
            break
        if np.min(np.abs(lw - logs_w)) >= 0.04 * span:
            picked.append(float(np.exp(lw)))
    if len(picked) < count:
        raise SpinCMError("could not place enough sample points away from the poles")
    return np.array(picked)


def require_margin(state: SpinState, z: float, margin: float = Z_MARGIN_DEFAULT) -> None:
    got = spectral_margin(state, z)
    if got < margin:
        raise ConditioningError(
            f"z={z:.6g} is within {got:.3e} of a shifted Lax eigenvalue",
            margin=got,
            suggestion=default_spectral_point(state),
        )


def wave_vectors(state: SpinState, z: float, consts: KpConstants | None = None) -> WaveVectors:
    """Solve the two stationary linear problems for the pole wave data:

        (zI - (L + gamma I)) c = -W^{1/2} b~      (columns per color)
        c* (zI - (L - gamma I)) = a~^T W^{1/2}    (rows per color)

    with b~ = b C and a~ = a C^{-T}.
    """
    consts = _consts(state, consts)
    require_margin(state, z)
    g = state.gamma
    L = lax_matrix(state)
    eye = np.eye(state.n_particles)
    root_w = np.sqrt(pole_exponentials(state))
    b_t = state.b @ consts.C
    a_t = state.a @ np.linalg.inv(consts.C).T
    c = -np.linalg.solve(z * eye - (L + g * eye), root_w[:, None] * b_t)
    c_star = np.linalg.solve((z * eye - (L - g * eye)).T, root_w[:, None] * a_t)
    return WaveVectors(c=c, c_star=c_star, z=float(z))


def tau_value(state: SpinState, x_point: float, prefactor: float = 1.0) -> float:
    """Tau polynomial prefactor * prod_i (exp(2 gamma x) - exp(2 gamma x_i))."""
    arg = 2.0 * state.gamma * x_point
    if abs(arg) > _LOG_MAX - 1.0:
        raise RangeOverflowError("evaluation point overflows the exp() range")
    w = np.exp(arg)
    return float(prefactor * np.prod(w - pole_exponentials(state)))


def _pole_gaps(state: SpinState, w: float) -> tuple[np.ndarray, np.ndarray]:
    wi = pole_exponentials(state)
    dw = w - wi
    if np.min(np.abs(dw)) < POLE_CLEARANCE * (1.0 + np.max(np.abs(wi))):
        raise PoleProximityError(f"sample w={w:.6g} too close to a pole")
    return wi, dw


def wave_matrices_reduced(
    state: SpinState,
    z: float,
    w: float,
    consts: KpConstants | None = None,
    wave: WaveVectors | None = None,
) -> ReducedWave:
    """Pole parts of the wave pair at (z, w):

        F(w) = C      + sum_i 2 gamma w_i^{1/2} a_i c_i^T  / (w - w_i)
        G(w) = C^{-1} + sum_i 2 gamma w_i^{1/2} c*_i b_i^T / (w - w_i)

    Passing precomputed ``wave`` vectors skips the linear solves (used by
    stencils and by the frozen-wave negative control).
    """
    consts = _consts(state, consts)
    if wave is None:
        wave = wave_vectors(state, z, consts)
    g = state.gamma
    wi, dw = _pole_gaps(state, w)
    root = np.sqrt(wi)

    def assemble(left, right, power):
        coef = 2.0 * g * root / dw**power
        return np.einsum("i,ia,ib->ab", coef, left, right)

    F = consts.C + assemble(state.a, wave.c, 1)
    G = np.linalg.inv(consts.C) + assemble(wave.c_star, state.b, 1)
    dF = -assemble(state.a, wave.c, 2)
    dG = -assemble(wave.c_star, state.b, 2)
    d2F = 2.0 * assemble(state.a, wave.c, 3)
    d2G = 2.0 * assemble(wave.c_star, state.b, 3)
    return ReducedWave(F=F, G=G, dF=dF, d2F=d2F, dG=dG, d2G=d2G)


def wave_function_pair(
    state: SpinState,
    z: float,
    x_point: float,
    t2: float = 0.0,
    consts: KpConstants | None = None,
):
    """Wave function and adjoint at (x, t2, z).

    Exponents keep only the first-time (= x) and second-time dependence,
    the part exercised by the second-flow checks.
    """
    w = float(np.exp(2.0 * state.gamma * x_point))
    red = wave_matrices_reduced(state, z, w, consts)
    phase = float(np.exp(x_point * z + t2 * z * z))
    return phase * red.F, red.G / phase


def w1_and_potential(state: SpinState, x_point: float, consts: KpConstants | None = None):
    """First expansion coefficient and potential at x_point:

        w1 = S - sum_i 2 gamma w_i a_i b_i^T / (w - w_i)
        V  = -8 gamma^2 sum_i w w_i a_i b_i^T / (w - w_i)^2

    The identity V = -2 d/dx w1 (with d/dx = 2 gamma w d/dw) is recomputed
    through :func:`potential_from_w1_derivative` and enforced to 1e-12.
    """
    consts = _consts(state, consts)
    g = state.gamma
    w = float(np.exp(2.0 * g * x_point))
    wi, dw = _pole_gaps(state, w)
    w1 = consts.S - np.einsum("i,ia,ib->ab", 2.0 * g * wi / dw, state.a, state.b)
    V = -8.0 * g**2 * np.einsum("i,ia,ib->ab", w * wi / dw**2, state.a, state.b)
    V_alt = potential_from_w1_derivative(state, x_point, consts)
    scale = 1.0 + float(np.max(np.abs(V)))
    if np.max(np.abs(V - V_alt)) > 1e-12 * scale:
        raise SpinCMError("internal inconsistency: V != -2 d/dx w1")
    return w1, V


def potential_from_w1_derivative(
    state: SpinState, x_point: float, consts: KpConstants | None = None
) -> np.ndarray:
    """Second derivation path for the potential: -2 d/dx of the coefficient w1."""
    g = state.gamma
    w = float(np.exp(2.0 * g * x_point))
    wi, dw = _pole_gaps(state, w)
    dw1_dw = np.einsum("i,ia,ib->ab", 2.0 * g * wi / dw**2, state.a, state.b)
    return -4.0 * g * w * dw1_dw


def _evolved_pair(state: SpinState, delta_t: float) -> tuple[SpinState, SpinState]:
    """One accurate step of the m=2 flow forward and backward (RK4, single step)."""
    spec = FlowSpec(m=2, t_end=delta_t, dt=delta_t)
    forward = integrate(state, spec).samples[-1][1]
    backward = integrate(state, spec, direction=-1).samples[-1][1]
    return forward, backward


def schrodinger_residual(
    state: SpinState,
    z: float,
    x_points,
    delta_t: float,
    consts: KpConstants | None = None,
    frozen_wave: bool = False,
) -> float:
    """Residual of the second-flow linear problems at the given x points.

    The state is evolved by +-delta_t under the m=2 flow; the time
    derivative of the wave pair is formed by central differences of the
    pole parts (the explicit t2-exponent is differentiated analytically,
    so the stencil error tracks the pole-data motion, not z^2 phases).
    The space derivative is analytic from the pole ansatz.  Returns the
    worst entry of either residual, scaled by 1 + max |wave part|.

    ``frozen_wave=True`` keeps the wave vectors of the central state at the
    shifted times (negative control; the identity then fails at O(1)).
    """
    consts = _consts(state, consts)
    g = state.gamma
    z = float(z)
    require_margin(state, z)
    splus, sminus = _evolved_pair(state, delta_t)
    wave0 = wave_vectors(state, z, consts)
    wave_p = wave0 if frozen_wave else wave_vectors(splus, z, consts)
    wave_m = wave0 if frozen_wave else wave_vectors(sminus, z, consts)

    worst = 0.0
    for xp in np.atleast_1d(np.asarray(x_points, dtype=float)):
        w = float(np.exp(2.0 * g * xp))
        red0 = wave_matrices_reduced(state, z, w, consts, wave=wave0)
        red_p = wave_matrices_reduced(splus, z, w, consts, wave=wave_p)
        red_m = wave_matrices_reduced(sminus, z, w, consts, wave=wave_m)
        _, V = w1_and_potential(state, xp, consts)
        exz = float(np.exp(xp * z))

        psi0 = exz * red0.F
        dpsi_dt = z * z * psi0 + exz * (red_p.F - red_m.F) / (2.0 * delta_t)
        dxF = 2.0 * g * w * red0.dF
        dx2F = 4.0 * g * g * (w * w * red0.d2F + w * red0.dF)
        d2psi_dx2 = exz * (z * z * red0.F + 2.0 * z * dxF + dx2F)
        r = np.max(np.abs(dpsi_dt - d2psi_dx2 - V @ psi0)) / (1.0 + np.max(np.abs(psi0)))
        worst = max(worst, float(r))

        psid0 = red0.G / exz
        dpsid_dt = -z * z * psid0 + (red_p.G - red_m.G) / (2.0 * delta_t) / exz
        dxG = 2.0 * g * w * red0.dG
        dx2G = 4.0 * g * g * (w * w * red0.d2G + w * red0.dG)
        d2psid_dx2 = (z * z * red0.G - 2.0 * z * dxG + dx2G) / exz
        r = np.max(np.abs(dpsid_dt + d2psid_dx2 + psid0 @ V)) / (1.0 + np.max(np.abs(psid0)))
        worst = max(worst, float(r))
    return worst


def bilinear_identity_sides(
    state: SpinState,
    m: int,
    w_samples,
    consts: KpConstants | None = None,
    flow_override: int | None = None,
):
    """Both sides of the bilinear residue relation for flow m.

    Left side: residue at infinity of z^m times the product of the wave
    pole parts, assembled algebraically from matrix-power residues (no
    contour integration).  Right side: the pole expansion of the time
    derivative of the first expansion coefficient, with all time
    derivatives supplied by the m-th flow (``flow_override`` substitutes a
    wrong flow index on the right side, as a negative control).
    Returns (lhs, rhs) arrays of shape (n_samples, N, N).
    """
    from .flows import _check_m

    consts = _consts(state, consts)
    m = _check_m(m)
    g = state.gamma
    n = state.n_particles
    L = lax_matrix(state)
    eye = np.eye(n)
    w = pole_exponentials(state)
    root = np.sqrt(w)
    R = overlap_matrix(state)

    d_plus = resolvent_residue_single(m, L + g * eye)
    d_minus = resolvent_residue_single(m, L - g * eye)
    pair_core = residue_pair_matrix(m, L + g * eye, np.outer(root, root) * R, L - g * eye)

    u_left = state.a.T @ (root[:, None] * d_minus)  # [alpha, k]
    u_right = d_plus @ (root[:, None] * state.b)  # [i, beta]

    tang = flow_rhs(state, m if flow_override is None else flow_override)
    dw_dt = 2.0 * g * tang.dx * w
    num = (
        dw_dt[:, None, None] * np.einsum("ia,ib->iab", state.a, state.b)
        + w[:, None, None]
        * (np.einsum("ia,ib->iab", tang.da, state.b) + np.einsum("ia,ib->iab", state.a, tang.db))
    )

    samples = np.atleast_1d(np.asarray(w_samples, dtype=float))
    lhs = np.zeros((len(samples), state.n_colors, state.n_colors))
    rhs = np.zeros_like(lhs)
    for s, ws in enumerate(samples):
        _, dw = _pole_gaps(state, float(ws))
        weight = root / dw
        term1 = 2.0 * g * (u_left * weight[None, :]) @ state.b
        term2 = -2.0 * g * state.a.T @ (weight[:, None] * u_right)
        term3 = -4.0 * g**2 * state.a.T @ ((weight[:, None] * pair_core * weight[None, :])) @ state.b
        lhs[s] = term1 + term2 + term3
        rhs[s] = np.einsum("iab,i->ab", num, 2.0 * g / dw) + 4.0 * g**2 * np.einsum(
            "i,ia,ib->ab", tang.dx * w**2 / dw**2, state.a, state.b
        )
    return lhs, rhs


def bilinear_identity_residual(
    state: SpinState,
    m: int,
    w_samples,
    consts: KpConstants | None = None,
    flow_override: int | None = None,
) -> float:
    """Max absolute mismatch of the bilinear residue relation over all
    samples and color pairs (see :func:`bilinear_identity_sides`)."""
    lhs, rhs = bilinear_identity_sides(state, m, w_samples, consts, flow_override)
    return float(np.max(np.abs(lhs - rhs)))


def wave_vector_evolution_residual(
    state: SpinState,
    z: float,
    delta_t: float,
    consts: KpConstants | None = None,
) -> float:
    """Residuals of the wave-vector evolution law under the second flow.

    Central-differences the wave vectors along the flow and compares with
    M c; also contracts the finite-difference Lax compatibility residual
    (dL/dt + [L, M]) with c.  Returns the larger of the two, scaled by
    1 + max |c|.
    """
    consts = _consts(state, consts)
    z = float(z)
    require_margin(state, z)
    splus, sminus = _evolved_pair(state, delta_t)
    c0 = wave_vectors(state, z, consts).c
    cp = wave_vectors(splus, z, consts).c
    cm = wave_vectors(sminus, z, consts).c
    M0 = m_matrix(state)
    scale = 1.0 + float(np.max(np.abs(c0)))
    r1 = np.max(np.abs((cp - cm) / (2.0 * delta_t) - M0 @ c0)) / scale

    L0 = lax_matrix(state)
    ldot = (lax_matrix(splus) - lax_matrix(sminus)) / (2.0 * delta_t)
    r2 = np.max(np.abs((ldot + L0 @ M0 - M0 @ L0) @ c0)) / scale
    return float(max(r1, r2))
