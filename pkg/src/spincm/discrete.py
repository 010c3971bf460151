"""Integrable implicit time discretization of the spin system.

One discrete level carries (x, a, b, xdot); advancing a level solves a
square nonlinear system of n*(2*N_colors + 2) equations: the two coth-sum
equations of motion coupling consecutive levels (the second one applied at
the new level, which determines the new xdot), the unit-pairing constraint,
and a gauge condition freezing per-particle |a_i|^2 across the step.  The
solver is a damped Newton iteration with a central finite-difference
Jacobian and an optional continuation fallback from larger values of the
discretization parameter mu.

A converged step is certified by the intertwining relation
L(p+1) M(p) = M(p) L(p), spectrum preservation of L, the three-level
symmetric equation of motion, and the discrete linear problems.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass, replace

import numpy as np

from .errors import (
    NewtonConvergenceError,
    RankDeficiencyError,
    SingularConfigurationError,
)
from .phase_core import lax_matrix_arrays, pole_exponentials
from .state import (
    CONSTRAINT_TOL_DEFAULT,
    SEP_MIN_DEFAULT,
    SpinState,
    min_pair_separation,
)

MU_MIN_DEFAULT = 1.0
_CROSS_GAP_REL = 1e-12


@dataclass(frozen=True)
class DiscreteLevel:
    """One discrete-time level of the pole data."""

    gamma: float
    x: np.ndarray
    a: np.ndarray
    b: np.ndarray
    xdot: np.ndarray
    sep_min: InitVar[float] = SEP_MIN_DEFAULT
    constraint_tol: InitVar[float] = CONSTRAINT_TOL_DEFAULT

    def __post_init__(self, sep_min, constraint_tol):
        # reuse the state validator for shapes, separation and pairing
        state = SpinState(
            self.gamma,
            self.x,
            np.asarray(self.xdot, dtype=float) / 2.0,
            self.a,
            self.b,
            sep_min=sep_min,
            constraint_tol=constraint_tol,
        )
        object.__setattr__(self, "gamma", state.gamma)
        object.__setattr__(self, "x", state.x)
        object.__setattr__(self, "a", state.a)
        object.__setattr__(self, "b", state.b)
        xdot = np.array(self.xdot, dtype=float)
        xdot.flags.writeable = False
        object.__setattr__(self, "xdot", xdot)

    @property
    def n_particles(self) -> int:
        return self.x.shape[0]

    @property
    def n_colors(self) -> int:
        return self.a.shape[1]

    @classmethod
    def from_state(cls, state: SpinState) -> "DiscreteLevel":
        """Initialize a level from a continuous phase point (xdot = 2p)."""
        return cls(state.gamma, state.x, state.a, state.b, 2.0 * state.p)

    def to_state(self, constraint_tol: float = 1e-8) -> SpinState:
        return SpinState(
            self.gamma, self.x, self.xdot / 2.0, self.a, self.b, constraint_tol=constraint_tol
        )

    def lax_matrix(self) -> np.ndarray:
        return lax_matrix_arrays(self.gamma, self.x, self.xdot / 2.0, self.a, self.b)


@dataclass(frozen=True)
class DiscreteSpec:
    """Discretization parameter and Newton controls."""

    mu: float
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    mu_min: float = MU_MIN_DEFAULT

    def __post_init__(self):
        if abs(self.mu) < self.mu_min:
            raise ValueError(
                f"|mu| = {abs(self.mu):.3g} below mu_min = {self.mu_min:.3g}; "
                "small |mu| is outside the validated regime"
            )
        if not (self.newton_tol > 0):
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")


@dataclass
class DiscreteTrajectory:
    """Levels indexed by the discrete time, with per-step solver info."""

    levels: list[DiscreteLevel]
    spec: DiscreteSpec
    step_info: list[dict]

    def __len__(self) -> int:
        return len(self.levels)


def _coth(y: np.ndarray) -> np.ndarray:
    return np.cosh(y) / np.sinh(y)


def _cross_gap_guard(x_new: np.ndarray, x_old: np.ndarray) -> None:
    gap = np.min(np.abs(x_new[:, None] - x_old[None, :]))
    scale = 1.0 + float(np.max(np.abs(x_old)))
    if gap < _CROSS_GAP_REL * scale:
        raise SingularConfigurationError(
            f"cross-level pole collision: min |x_i(p+1) - x_j(p)| = {gap:.3e}"
        )


def discrete_m_matrix(nxt: DiscreteLevel, cur: DiscreteLevel) -> np.ndarray:
    """Intertwining matrix between consecutive levels:
    M_ij = gamma (b_i(p+1).a_j(p)) / sinh(gamma (x_i(p+1) - x_j(p)))."""
    g = cur.gamma
    _cross_gap_guard(nxt.x, cur.x)
    d = nxt.x[:, None] - cur.x[None, :]
    rx = nxt.b @ cur.a.T
    return g * rx / np.sinh(g * d)


def discrete_m_matrix_exponential_form(nxt: DiscreteLevel, cur: DiscreteLevel) -> np.ndarray:
    """Same matrix in exponentiated variables:
    2 gamma sqrt(w_i(p+1) w_j(p)) (b_i(p+1).a_j(p)) / (w_i(p+1) - w_j(p))."""
    g = cur.gamma
    _cross_gap_guard(nxt.x, cur.x)
    w_new = pole_exponentials(nxt.to_state(constraint_tol=np.inf))
    w_old = pole_exponentials(cur.to_state(constraint_tol=np.inf))
    rx = nxt.b @ cur.a.T
    num = 2.0 * g * np.sqrt(np.outer(w_new, w_old)) * rx
    return num / (w_new[:, None] - w_old[None, :])


def _residual_displacement(gamma, mu, x, a, b, xdot, u, a2, b2, xdot2, sep_min=SEP_MIN_DEFAULT):
    """Stacked step residual with the next level parametrized by the pole
    displacement u = x(p+1) - x(p).

    Working in displacements keeps the near-diagonal cross-level coth
    arguments (of size ~1/mu) at full relative precision; recovering them
    from absolute positions would cap the attainable residual near
    mu^2 * eps * |x|.

    Blocks, in order: forward coth equation at the current level (n*N),
    backward coth equation at the next level (n*N), unit pairing at the
    next level (n), gauge |a_i(p+1)|^2 - |a_i(p)|^2 (n).
    """
    n = len(x)
    x2 = x + u
    if min_pair_separation(x2) < sep_min:
        raise SingularConfigurationError("next-level poles violate the separation threshold")
    d_base = x[:, None] - x[None, :]
    d_cross = d_base + u[:, None]  # x'_i - x_j, exact in the diagonal gap
    gap = np.min(np.abs(d_cross))
    if gap < _CROSS_GAP_REL * (1.0 + float(np.max(np.abs(x)))):
        raise SingularConfigurationError(
            f"cross-level pole collision: min |x_i(p+1) - x_j(p)| = {gap:.3e}"
        )
    off = ~np.eye(n, dtype=bool)

    cm = _coth(gamma * d_cross)  # [next i, cur j]
    rx = b2 @ a.T  # [next k, cur i]
    r_cur = b @ a.T
    r_nxt = b2 @ a2.T

    cs_cur = np.zeros((n, n))
    cs_cur[off] = _coth(gamma * d_base[off])
    cs_nxt = np.zeros((n, n))
    d_nxt = d_base + (u[:, None] - u[None, :])
    cs_nxt[off] = _coth(gamma * d_nxt[off])

    # forward: gamma sum_k coth(g(x'_k - x_i)) a'_k (b'_k.a_i)
    #          - gamma sum_{k!=i} coth(g(x_k - x_i)) a_k (b_k.a_i) - (xdot_i/2 + mu) a_i
    block1 = (
        gamma * (cm * rx).T @ a2
        - gamma * (cs_cur.T * r_cur.T) @ a
        - (0.5 * xdot + mu)[:, None] * a
    )
    # backward at next level: gamma sum_k coth(g(x'_i - x_k)) b_k (b'_i.a_k)
    #          - gamma sum_{k!=i} coth(g(x'_i - x'_k)) b'_k (b'_i.a'_k) - (xdot'_i/2 + mu) b'_i
    block2 = (
        gamma * (cm * rx) @ b
        - gamma * (cs_nxt * r_nxt) @ b2
        - (0.5 * xdot2 + mu)[:, None] * b2
    )
    block3 = np.einsum("ic,ic->i", b2, a2) - 1.0
    block4 = np.einsum("ic,ic->i", a2, a2) - np.einsum("ic,ic->i", a, a)
    return np.concatenate([block1.ravel(), block2.ravel(), block3, block4])


def discrete_residual(cur: DiscreteLevel, nxt: DiscreteLevel, spec: DiscreteSpec) -> np.ndarray:
    """Step residual vector of length n*(2*N + 2) for a candidate level pair.

    Recomputed from the stored absolute positions, so the attainable floor
    is ~mu^2 * eps * |x| (the displacement x(p+1) - x(p) is only known to
    absolute rounding); the stepper itself iterates in displacement form
    and its recorded residuals are not subject to this floor.
    """
    return _residual_displacement(
        cur.gamma,
        spec.mu,
        cur.x,
        cur.a,
        cur.b,
        cur.xdot,
        nxt.x - cur.x,
        nxt.a,
        nxt.b,
        nxt.xdot,
    )


def _pack_unknowns(u, a2, b2, xdot2):
    return np.concatenate([u, a2.ravel(), b2.ravel(), xdot2])


def _unpack_unknowns(y, n, nc):
    u = y[:n]
    a2 = y[n : n + n * nc].reshape(n, nc)
    b2 = y[n + n * nc : n + 2 * n * nc].reshape(n, nc)
    xdot2 = y[n + 2 * n * nc :]
    return u, a2, b2, xdot2


def _newton_solve(cur: DiscreteLevel, spec: DiscreteSpec, y0: np.ndarray):
    """Damped Newton with central finite-difference Jacobian.

    Unknowns are (u, a', b', xdot') with u the pole displacement.
    """
    n, nc = cur.n_particles, cur.n_colors
    g, mu = cur.gamma, spec.mu

    def residual(y):
        return _residual_displacement(
            g, mu, cur.x, cur.a, cur.b, cur.xdot, *_unpack_unknowns(y, n, nc)
        )

    def jacobian(y):
        dim = y.size
        J = np.empty((dim, dim))
        for j in range(dim):
            if j < n:  # displacement entries live on the 1/mu scale
                h = max(1e-9, 1e-3 * abs(y[j]))
            else:
                h = 1e-7 * max(1.0, abs(y[j]))
            yp = y.copy()
            ym = y.copy()
            yp[j] += h
            ym[j] -= h
            J[:, j] = (residual(yp) - residual(ym)) / (2.0 * h)
        return J

    y = y0.copy()
    r = residual(y)
    norm = float(np.max(np.abs(r)))
    for iteration in range(1, spec.newton_max_iter + 1):
        if norm <= spec.newton_tol:
            return y, iteration - 1, norm
        J = jacobian(y)
        try:
            delta = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError(f"singular Newton Jacobian: {exc}") from exc
        if not np.all(np.isfinite(delta)):
            raise RankDeficiencyError("non-finite Newton direction")
        lam = 1.0
        accepted = False
        while lam >= 1.0 / 1024.0:
            try:
                r_trial = residual(y + lam * delta)
            except SingularConfigurationError:
                lam *= 0.5
                continue
            norm_trial = float(np.max(np.abs(r_trial)))
            if norm_trial < (1.0 - 0.25 * lam) * norm or norm_trial <= spec.newton_tol:
                y = y + lam * delta
                r, norm = r_trial, norm_trial
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            break
    if norm <= spec.newton_tol:
        return y, spec.newton_max_iter, norm
    raise NewtonConvergenceError(
        f"Newton stalled at residual {norm:.3e} (tol {spec.newton_tol:.1e})",
        last_residual=norm,
        iterations=spec.newton_max_iter,
    )


def _default_guess(cur: DiscreteLevel, mu: float) -> np.ndarray:
    # leading continuum behavior: a uniform pole translation by 1/mu
    n = cur.n_particles
    return _pack_unknowns(np.full(n, 1.0 / mu), cur.a, cur.b, cur.xdot)


def _discrete_step_info(cur: DiscreteLevel, spec: DiscreteSpec):
    try:
        y, iters, res = _newton_solve(cur, spec, _default_guess(cur, spec.mu))
    except NewtonConvergenceError:
        # continuation in 1/mu from easier (larger) mu values, rescaling the
        # pole displacement like 1/mu between stages
        y = None
        parts = None
        for factor in (8.0, 4.0, 2.0, 1.0):
            stage = replace(spec, mu=spec.mu * factor)
            if parts is None:
                guess = _default_guess(cur, stage.mu)
            else:
                u, a2, b2, xd2 = parts
                guess = _pack_unknowns(2.0 * u, a2, b2, xd2)
            y, iters, res = _newton_solve(cur, stage, guess)
            parts = _unpack_unknowns(y, cur.n_particles, cur.n_colors)
    u, a2, b2, xdot2 = _unpack_unknowns(y, cur.n_particles, cur.n_colors)
    tol = max(10.0 * spec.newton_tol, 1e-9)
    level = DiscreteLevel(cur.gamma, cur.x + u, a2, b2, xdot2, constraint_tol=tol)
    return level, {"iterations": iters, "residual": res, "displacement": u.copy()}


def discrete_step(cur: DiscreteLevel, spec: DiscreteSpec) -> DiscreteLevel:
    """Advance one discrete time step by solving the implicit system.

    Deterministic given inputs.  Raises NewtonConvergenceError (with the
    last residual norm) on failure and RankDeficiencyError on a singular
    Jacobian.
    """
    return _discrete_step_info(cur, spec)[0]


def run_discrete(start: DiscreteLevel, spec: DiscreteSpec, steps: int) -> DiscreteTrajectory:
    """Iterate the stepper, recording per-step Newton diagnostics."""
    levels = [start]
    info = []
    for _ in range(steps):
        nxt, meta = _discrete_step_info(levels[-1], spec)
        levels.append(nxt)
        info.append(meta)
    return DiscreteTrajectory(levels=levels, spec=spec, step_info=info)


def discrete_lax_residual(cur: DiscreteLevel, nxt: DiscreteLevel) -> float:
    """Max-entry residual of the intertwining relation L(p+1) M(p) = M(p) L(p)."""
    m_mat = discrete_m_matrix(nxt, cur)
    return float(np.max(np.abs(nxt.lax_matrix() @ m_mat - m_mat @ cur.lax_matrix())))


def discrete_lax_scale(cur: DiscreteLevel, nxt: DiscreteLevel) -> float:
    m_mat = discrete_m_matrix(nxt, cur)
    return 1.0 + float(np.max(np.abs(cur.lax_matrix()))) * float(np.max(np.abs(m_mat)))


def discrete_eom_residual(prev: DiscreteLevel, cur: DiscreteLevel, nxt: DiscreteLevel) -> np.ndarray:
    """Three-level symmetric equation of motion, one entry per particle:

        sum_j coth(g(x_i - x_j^+)) (b_i.a_j^+)(b_j^+.a_i)
      + sum_j coth(g(x_i - x_j^-)) (b_i.a_j^-)(b_j^-.a_i)
      - 2 sum_{j!=i} coth(g(x_i - x_j)) (b_i.a_j)(b_j.a_i)

    where +/- mark the neighboring levels.  Vanishes after two converged
    steps; the fully contracted color sums make each entry a scalar.
    """
    g = cur.gamma
    n = cur.n_particles

    def contracted(other: DiscreteLevel) -> np.ndarray:
        _cross_gap_guard(cur.x, other.x)
        cth = _coth(g * (cur.x[:, None] - other.x[None, :]))
        fwd = cur.b @ other.a.T  # (b_i . a_j(other))
        bwd = other.b @ cur.a.T  # (b_j(other) . a_i)
        return np.sum(cth * fwd * bwd.T, axis=1)

    off = ~np.eye(n, dtype=bool)
    d = cur.x[:, None] - cur.x[None, :]
    cth_same = np.zeros((n, n))
    cth_same[off] = _coth(g * d[off])
    r_same = cur.b @ cur.a.T
    same = np.sum(cth_same * r_same * r_same.T, axis=1)
    return contracted(nxt) + contracted(prev) - 2.0 * same


def discrete_linear_problem_residual(
    cur: DiscreteLevel,
    nxt: DiscreteLevel,
    z: float,
    w_samples,
    spec: DiscreteSpec,
) -> float:
    """End-to-end residual of the discrete linear problems for a level pair.

    Checks, with wave vectors solved independently at each level: the
    forward recursion (z - mu) c(p+1) = -W^{1/2}(p+1) b(p+1) - M(p) c(p),
    the adjoint recursion (z - mu) c*(p) = a(p)^T W^{1/2}(p) - c*(p+1) M(p),
    and the assembled one-step linear problem
    mu Psi(p) - mu Psi(p+1) = dPsi(p)/dx + (w1(p+1) - w1(p)) Psi(p)
    at the given w samples.  Returns the worst scaled residual.
    """
    from .kp import wave_matrices_reduced, wave_vectors

    mu = spec.mu
    g = cur.gamma
    state_cur = cur.to_state()
    state_nxt = nxt.to_state()
    wave_cur = wave_vectors(state_cur, z)
    wave_nxt = wave_vectors(state_nxt, z)
    m_mat = discrete_m_matrix(nxt, cur)

    root_cur = np.sqrt(pole_exponentials(state_cur))
    root_nxt = np.sqrt(pole_exponentials(state_nxt))

    r6 = (z - mu) * wave_nxt.c + root_nxt[:, None] * nxt.b + m_mat @ wave_cur.c
    scale6 = 1.0 + float(np.max(np.abs(wave_nxt.c))) * max(1.0, abs(z - mu))
    worst = float(np.max(np.abs(r6))) / scale6

    r8 = (z - mu) * wave_cur.c_star - root_cur[:, None] * cur.a + (m_mat.T @ wave_nxt.c_star)
    scale8 = 1.0 + float(np.max(np.abs(wave_cur.c_star))) * max(1.0, abs(z - mu))
    worst = max(worst, float(np.max(np.abs(r8))) / scale8)

    w_cur = pole_exponentials(state_cur)
    w_nxt = pole_exponentials(state_nxt)
    for ws in np.atleast_1d(np.asarray(w_samples, dtype=float)):
        red0 = wave_matrices_reduced(state_cur, z, float(ws), wave=wave_cur)
        red1 = wave_matrices_reduced(state_nxt, z, float(ws), wave=wave_nxt)
        # w1 difference between levels (constant terms cancel)
        dw1 = -np.einsum("i,ia,ib->ab", 2.0 * g * w_nxt / (ws - w_nxt), nxt.a, nxt.b)
        dw1 += np.einsum("i,ia,ib->ab", 2.0 * g * w_cur / (ws - w_cur), cur.a, cur.b)
        # exponential prefactors: e^{xz} common, next level carries (1 - z/mu)
        psi0 = red0.F
        psi1 = (1.0 - z / mu) * red1.F
        dpsi0_dx = z * red0.F + 2.0 * g * ws * red0.dF
        resid = mu * psi0 - mu * psi1 - dpsi0_dx - dw1 @ psi0
        scale = 1.0 + float(np.max(np.abs(mu * psi0)))
        worst = max(worst, float(np.max(np.abs(resid))) / scale)
    return worst
