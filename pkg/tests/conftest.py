"""Shared test fixtures and independent numerical oracles."""

from pathlib import Path

import numpy as np
import pytest

import spincm as sc

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "fixtures"


def make_state(n=3, nc=2, gamma=1.0, seed=0, gentle=False, **kw):
    """Random valid state; gentle=True draws wide, slow configurations that
    stay far from collisions over unit-time integrations."""
    if gentle:
        kw.setdefault("p_scale", 0.25)
        kw.setdefault("min_gap", 1.6)
        kw.setdefault("spacing", 2.2)
    return sc.random_state(n, nc, gamma=gamma, seed=seed, **kw)


@pytest.fixture
def state():
    return make_state(seed=7)


@pytest.fixture
def gentle_state():
    return make_state(seed=1, gentle=True)


@pytest.fixture
def fixture_state():
    from spincm.io import load_state

    return load_state(FIXTURE_DIR / "state_n3_c2.json")


def contour_residue(f, radius, n_nodes=512):
    """Residue at infinity by trapezoidal contour quadrature on |z| = radius.

    (1/2 pi i) closed-integral of f equals the mean of f(z) * z over
    equispaced nodes; spectrally accurate for rational f with poles inside.
    """
    theta = 2.0 * np.pi * np.arange(n_nodes) / n_nodes
    zs = radius * np.exp(1j * theta)
    acc = None
    for z in zs:
        val = np.asarray(f(z)) * z
        acc = val if acc is None else acc + val
    return np.real(acc / n_nodes)


def resolvent_pair_contour(m, X, A, Y, B, radius=None, n_nodes=512):
    """Contour-quadrature oracle for the scalar pair residue."""
    n = A.shape[0]
    if radius is None:
        radius = 3.0 * max(np.max(np.abs(np.linalg.eigvals(A))), np.max(np.abs(np.linalg.eigvals(B))), 1.0)

    def f(z):
        ra = np.linalg.inv(z * np.eye(n) - A)
        rb = np.linalg.inv(z * np.eye(B.shape[0]) - B)
        return z**m * np.trace(X @ ra @ Y @ rb)

    return float(contour_residue(f, radius, n_nodes))


def resolvent_single_contour(m, A, radius=None, n_nodes=512):
    """Contour-quadrature oracle for the matrix residue of z^m (zI-A)^{-1}."""
    n = A.shape[0]
    if radius is None:
        radius = 3.0 * max(float(np.max(np.abs(np.linalg.eigvals(A)))), 1.0)

    def f(z):
        return z**m * np.linalg.inv(z * np.eye(n) - A)

    return contour_residue(f, radius, n_nodes)


def lax_rational(state):
    """gamma -> 0 limit of the Lax matrix (independent closed form)."""
    n = state.n_particles
    R = state.b @ state.a.T
    d = state.x[:, None] - state.x[None, :]
    off = ~np.eye(n, dtype=bool)
    L = np.zeros((n, n))
    L[off] = -R[off] / d[off]
    L[np.arange(n), np.arange(n)] = -state.p
    return L


def rational_second_flow_rhs(state):
    """gamma -> 0 limit of the second-flow equations of motion."""
    n = state.n_particles
    R = state.b @ state.a.T
    d = state.x[:, None] - state.x[None, :]
    off = ~np.eye(n, dtype=bool)
    inv2 = np.zeros((n, n))
    inv2[off] = 1.0 / d[off] ** 2
    inv3 = np.zeros((n, n))
    inv3[off] = 1.0 / d[off] ** 3
    dx = 2.0 * state.p
    dp = -4.0 * np.sum(inv3 * R * R.T, axis=1)
    da = -2.0 * (inv2 * R.T) @ state.a
    db = 2.0 * (inv2 * R) @ state.b
    return dx, dp, da, db


def hand_second_hamiltonian_gradient(state):
    """Direct gradient of sum p_i^2 - gamma^2 sum_{i!=k} (b_i.a_k)(b_k.a_i)
    / sinh^2(gamma(x_i-x_k)), written independently of the kernel machinery."""
    g = state.gamma
    n = state.n_particles
    R = state.b @ state.a.T
    d = state.x[:, None] - state.x[None, :]
    off = ~np.eye(n, dtype=bool)
    inv_sinh2 = np.zeros((n, n))
    inv_sinh2[off] = 1.0 / np.sinh(g * d[off]) ** 2
    cosh_over_sinh3 = np.zeros((n, n))
    cosh_over_sinh3[off] = np.cosh(g * d[off]) / np.sinh(g * d[off]) ** 3

    d_p = 2.0 * state.p
    d_x = 4.0 * g**3 * np.sum(cosh_over_sinh3 * R * R.T, axis=1)
    d_a = -2.0 * g**2 * (inv_sinh2 * R) @ state.b
    d_b = -2.0 * g**2 * (inv_sinh2 * R.T) @ state.a
    return d_p, d_x, d_a, d_b
