"""Named verification suites over a single state.

Each suite evaluates a fixed set of identity residuals at pinned tolerances
and returns a :class:`VerificationReport`.  Residuals are scaled by natural
operand norms so the tolerances are dimensionless.
"""

from __future__ import annotations

import hashlib
import subprocess

import numpy as np

from . import __version__
from .discrete import (
    DiscreteLevel,
    DiscreteSpec,
    discrete_eom_residual,
    discrete_lax_residual,
    discrete_lax_scale,
    discrete_linear_problem_residual,
    run_discrete,
)
from .flows import (
    FlowSpec,
    conservation_report,
    explicit_second_flow_rhs,
    flow_rhs,
    hierarchy_gradient,
    integrate,
    lax_matrix,
    pole_velocity_from_residue,
    spectrum_drift,
)
from .kp import (
    bilinear_identity_sides,
    default_spectral_point,
    default_w_samples,
    schrodinger_residual,
    wave_vector_evolution_residual,
)
from .phase_core import (
    commutation_identity_residual,
    commutation_identity_scale,
    lax_matrix_exponential_form,
    m_matrix,
    m_matrix_exponential_form,
    overlap_matrix,
)
from .report import VerificationReport
from .state import SpinState

SUITE_NAMES = ("core", "flows", "discrete", "kp", "all")


def _fd_gradient(state: SpinState, m: int, h: float = 1e-6):
    """Central finite differences of the hierarchy Hamiltonian (oracle-style)."""
    from .flows import _hierarchy_hamiltonian_arrays

    g = state.gamma

    def value(x, p, a, b):
        return _hierarchy_hamiltonian_arrays(g, x, p, a, b, m)

    def diff(arr_name):
        base = {k: np.array(getattr(state, k), dtype=float) for k in ("x", "p", "a", "b")}
        out = np.zeros_like(base[arr_name])
        flat = out.ravel()
        for j in range(flat.size):
            plus = {k: v.copy() for k, v in base.items()}
            minus = {k: v.copy() for k, v in base.items()}
            plus[arr_name].ravel()[j] += h
            minus[arr_name].ravel()[j] -= h
            flat[j] = (value(**plus) - value(**minus)) / (2.0 * h)
        return out

    return diff("p"), diff("x"), diff("a"), diff("b")


def gradient_fd_relative_error(state: SpinState, m: int, h: float = 1e-6) -> float:
    """Worst relative deviation of analytic gradients from central differences.

    Components are compared against the gradient's own sup-norm with an
    absolute floor, so identically-zero components are not over-penalized.
    """
    grad = hierarchy_gradient(state, m)
    fd = _fd_gradient(state, m, h)
    analytic = np.concatenate([grad.d_p, grad.d_x, grad.d_a.ravel(), grad.d_b.ravel()])
    numeric = np.concatenate([fd[0], fd[1], fd[2].ravel(), fd[3].ravel()])
    scale = max(float(np.max(np.abs(analytic))), 1e-9)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def run_core_suite(state: SpinState, report: VerificationReport | None = None) -> VerificationReport:
    rep = report if report is not None else VerificationReport()
    L = lax_matrix(state)
    scale_L = 1.0 + float(np.max(np.abs(L)))
    rep.add(
        "lax_forms_agree",
        float(np.max(np.abs(L - lax_matrix_exponential_form(state)))) / scale_L,
        1e-12,
    )
    M = m_matrix(state)
    scale_M = 1.0 + float(np.max(np.abs(M)))
    rep.add(
        "m_forms_agree",
        float(np.max(np.abs(M - m_matrix_exponential_form(state)))) / scale_M,
        1e-12,
    )
    rep.add("unit_pairing", float(np.max(np.abs(np.diag(overlap_matrix(state)) - 1.0))), 1e-10)
    rep.add(
        "commutation_identity",
        commutation_identity_residual(state) / commutation_identity_scale(state),
        1e-11,
    )
    return rep


def run_flows_suite(state: SpinState, report: VerificationReport | None = None) -> VerificationReport:
    rep = report if report is not None else VerificationReport()
    for m in (2, 3, 4):
        rep.add(f"gradient_fd_m{m}", gradient_fd_relative_error(state, m), 1e-6)

    rhs_a = flow_rhs(state, 2)
    rhs_b = explicit_second_flow_rhs(state)
    diff = max(
        float(np.max(np.abs(rhs_a.dx - rhs_b.dx))),
        float(np.max(np.abs(rhs_a.dp - rhs_b.dp))),
        float(np.max(np.abs(rhs_a.da - rhs_b.da))),
        float(np.max(np.abs(rhs_a.db - rhs_b.db))),
    )
    scale = 1.0 + float(np.max(np.abs(rhs_a.pack())))
    rep.add("second_flow_two_paths", diff / scale, 1e-10)

    worst = 0.0
    for m in range(1, 6):
        t = flow_rhs(state, m)
        contraction = np.einsum("ic,ic->i", state.b, t.da) + np.einsum("ic,ic->i", state.a, t.db)
        worst = max(worst, float(np.max(np.abs(contraction))))
    rep.add("pairing_conserved_by_rhs", worst, 1e-12)

    worst = 0.0
    for m in range(1, 5):
        grad = hierarchy_gradient(state, m)
        for i in range(state.n_particles):
            ref = grad.d_p[i]
            got = pole_velocity_from_residue(state, m, i)
            worst = max(worst, abs(got - ref) / max(1.0, abs(ref)))
    rep.add("residue_gradient_match", worst, 1e-9)

    traj = integrate(state, FlowSpec(m=2, t_end=0.2, dt=1e-3, record_every=20))
    conservation_report(traj, k_max=4, tol=1e-8, report=rep)
    drift = max(
        spectrum_drift(lax_matrix(traj.states[0]), lax_matrix(s)) for s in traj.states
    )
    rep.add("isospectral_drift", drift, 1e-7)

    delta = 1e-5
    spec = FlowSpec(m=2, t_end=delta, dt=delta)
    lp = lax_matrix(integrate(state, spec).samples[-1][1])
    lm_ = lax_matrix(integrate(state, spec, direction=-1).samples[-1][1])
    ldot = (lp - lm_) / (2.0 * delta)
    M = m_matrix(state)
    L = lax_matrix(state)
    rep.add("lax_equation_fd", float(np.max(np.abs(ldot - (M @ L - L @ M)))), 1e-6)
    return rep


def run_discrete_suite(
    state: SpinState,
    mu: float = 1e3,
    steps: int = 3,
    report: VerificationReport | None = None,
) -> VerificationReport:
    rep = report if report is not None else VerificationReport()
    spec = DiscreteSpec(mu=mu)
    traj = run_discrete(DiscreteLevel.from_state(state), spec, steps)
    levels = traj.levels

    rep.add("newton_residual", max(info["residual"] for info in traj.step_info), spec.newton_tol)
    worst_lax = max(
        discrete_lax_residual(levels[i], levels[i + 1]) / discrete_lax_scale(levels[i], levels[i + 1])
        for i in range(steps)
    )
    rep.add("discrete_lax", worst_lax, 1e-9)

    lax0 = levels[0].lax_matrix()
    rep.add(
        "discrete_spectrum_drift",
        max(spectrum_drift(lax0, lv.lax_matrix()) for lv in levels),
        1e-8,
    )
    worst = 0.0
    for k in range(1, 5):
        ref = np.trace(np.linalg.matrix_power(lax0, k))
        for lv in levels:
            got = np.trace(np.linalg.matrix_power(lv.lax_matrix(), k))
            worst = max(worst, abs(got - ref) / max(1.0, abs(ref)))
    rep.add("discrete_trace_powers", worst, 1e-8)

    if steps >= 2:
        worst = max(
            float(np.max(np.abs(discrete_eom_residual(levels[i - 1], levels[i], levels[i + 1]))))
            for i in range(1, steps)
        )
        rep.add("three_level_equation", worst, 1e-9)

    z = default_spectral_point(state) + 1.0
    samples = default_w_samples(state, count=6)
    rep.add(
        "discrete_linear_problem",
        discrete_linear_problem_residual(levels[0], levels[1], z, samples, spec),
        1e-8,
    )
    return rep


def run_kp_suite(state: SpinState, report: VerificationReport | None = None) -> VerificationReport:
    rep = report if report is not None else VerificationReport()
    z = default_spectral_point(state)
    xs = np.sort(state.x)
    x_probe = [float(0.5 * (xs[i] + xs[i + 1])) for i in range(len(xs) - 1)]
    x_probe.append(float(xs[-1] + 0.9))

    r1 = schrodinger_residual(state, z, x_probe, 1e-4)
    r2 = schrodinger_residual(state, z, x_probe, 5e-5)
    rep.add("schrodinger_residual", r1, 1e-5)
    rep.add("schrodinger_order", abs(r1 / r2 - 4.0), 1.0)

    samples = default_w_samples(state, count=8)
    for m in (1, 2, 3):
        lhs, rhs = bilinear_identity_sides(state, m, samples)
        scale = 1.0 + float(np.max(np.abs(rhs)))
        rep.add(f"bilinear_identity_m{m}", float(np.max(np.abs(lhs - rhs))) / scale, 1e-9)

    r1 = wave_vector_evolution_residual(state, z, 1e-4)
    r2 = wave_vector_evolution_residual(state, z, 5e-5)
    rep.add("wave_vector_evolution", r1, 1e-5)
    rep.add("wave_vector_order", abs(r1 / r2 - 4.0), 1.0)
    return rep


def report_digest(report: VerificationReport) -> str:
    """Stable digest of a report's check names, tolerances and pass flags.

    Residual values are excluded: their trailing bits vary across BLAS
    builds, while the check set and outcomes are the committed contract.
    """
    stable = [(c.name, format(c.tolerance, ".3e"), c.passed) for c in report.checks]
    return hashlib.sha256(repr(stable).encode()).hexdigest()


def _git_hash() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def build_metadata(command: str, params: dict, seed: int | None = None) -> dict:
    digest_src = repr(sorted(params.items())).encode()
    meta = {
        "package_version": __version__,
        "git_hash": _git_hash(),
        "config_digest": hashlib.sha256(digest_src).hexdigest(),
        "command": command,
    }
    if seed is not None:
        meta["seed"] = seed
    return meta


def run_suite(
    name: str,
    state: SpinState,
    seed: int | None = None,
    mu: float = 1e3,
) -> VerificationReport:
    """Run one named suite (or all of them) against a state."""
    if name not in SUITE_NAMES:
        raise ValueError(f"unknown suite '{name}'; choose from {SUITE_NAMES}")
    rep = VerificationReport()
    if name in ("core", "all"):
        sub = VerificationReport()
        run_core_suite(state, sub)
        rep.extend(sub, prefix="core." if name == "all" else "")
    if name in ("flows", "all"):
        sub = VerificationReport()
        run_flows_suite(state, sub)
        rep.extend(sub, prefix="flows." if name == "all" else "")
    if name in ("discrete", "all"):
        sub = VerificationReport()
        run_discrete_suite(state, mu=mu, steps=3, report=sub)
        rep.extend(sub, prefix="discrete." if name == "all" else "")
    if name in ("kp", "all"):
        sub = VerificationReport()
        run_kp_suite(state, sub)
        rep.extend(sub, prefix="kp." if name == "all" else "")
    rep.metadata = build_metadata("verify", {"suite": name, "mu": mu}, seed)
    return rep
