"""Phase-space state of the hyperbolic spin many-body system.

A state bundles the coupling ``gamma`` (the interaction period is
``pi*1j/gamma``), pole positions ``x``, canonical momenta ``p`` and the
two families of spin vectors ``a``, ``b`` (one N-component vector per
particle, stored as rows).  States are immutable values; every operation
in the package is a pure function of them.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass, fields
from typing import Iterator

import numpy as np

from .errors import ConstraintViolationError, SingularConfigurationError

SEP_MIN_DEFAULT = 1e-6
CONSTRAINT_TOL_DEFAULT = 1e-10


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.flags.writeable = False
    return out


def min_pair_separation(x: np.ndarray) -> float:
    """Smallest |x_i - x_k| over distinct index pairs (inf for one particle)."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return np.inf
    diff = np.abs(x[:, None] - x[None, :])
    return float(np.min(diff[~np.eye(x.size, dtype=bool)]))


@dataclass(frozen=True)
class SpinState:
    """Immutable phase point (gamma, x, p, a, b).

    Construction validates: gamma nonzero and finite, pairwise pole
    separation at least ``sep_min``, and unit pairing b_i . a_i = 1 within
    ``constraint_tol``.  Loosening ``constraint_tol`` is allowed for
    diagnostic states (negative controls, finite-difference probes).
    """

    gamma: float
    x: np.ndarray
    p: np.ndarray
    a: np.ndarray
    b: np.ndarray
    sep_min: InitVar[float] = SEP_MIN_DEFAULT
    constraint_tol: InitVar[float] = CONSTRAINT_TOL_DEFAULT

    def __post_init__(self, sep_min, constraint_tol):
        gamma = float(self.gamma)
        x = _readonly(np.atleast_1d(self.x))
        p = _readonly(np.atleast_1d(self.p))
        a = _readonly(np.atleast_2d(self.a))
        b = _readonly(np.atleast_2d(self.b))
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

        if not np.isfinite(gamma) or gamma == 0.0:
            raise ValueError("gamma must be finite and nonzero")
        n = x.shape[0]
        if x.ndim != 1 or p.shape != (n,):
            raise ValueError("x and p must be 1-d arrays of equal length")
        if a.ndim != 2 or a.shape[0] != n or b.shape != a.shape:
            raise ValueError("a and b must be (n_particles, n_colors) arrays")
        for name, arr in (("x", x), ("p", p), ("a", a), ("b", b)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        if min_pair_separation(x) < sep_min:
            raise SingularConfigurationError(
                f"pole separation {min_pair_separation(x):.3e} below sep_min={sep_min:.1e}"
            )
        err = np.max(np.abs(self.pairing() - 1.0))
        if err > constraint_tol:
            raise ConstraintViolationError(
                f"unit pairing violated: max |b_i.a_i - 1| = {err:.3e} > {constraint_tol:.1e}"
            )

    @property
    def n_particles(self) -> int:
        return self.x.shape[0]

    @property
    def n_colors(self) -> int:
        return self.a.shape[1]

    def pairing(self) -> np.ndarray:
        """Per-particle spin pairing b_i . a_i (all ones for a valid state)."""
        return np.einsum("ic,ic->i", self.b, self.a)

    def spin_moment(self) -> np.ndarray:
        """Color matrix sum_i a_i^alpha b_i^beta, conserved by every flow."""
        return self.a.T @ self.b

    def replace(self, **kw) -> "SpinState":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(kw)
        return SpinState(**data)


def gauge_normalize(state: SpinState) -> SpinState:
    """Fix the residual per-site rescaling freedom (a_i -> q a_i, b_i -> b_i/q).

    Chooses the representative with |a_i| = |b_i| on every site; physical
    observables (x, p, pairings, pair products, Lax spectrum) are untouched.
    States reached along different flow orderings coincide only after this
    normalization: the flow commutator is itself a per-site gauge rotation.
    """
    na = np.linalg.norm(state.a, axis=1)
    nb = np.linalg.norm(state.b, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise ValueError("cannot gauge-normalize a state with a vanishing spin vector")
    q = np.sqrt(nb / na)
    return state.replace(a=state.a * q[:, None], b=state.b / q[:, None])


def pack_coordinates(state: SpinState) -> np.ndarray:
    """Flatten (x, p, a, b) into one vector for integrators."""
    return np.concatenate([state.x, state.p, state.a.ravel(), state.b.ravel()])


def unpack_coordinates(y: np.ndarray, n: int, nc: int):
    """Inverse of :func:`pack_coordinates`; returns (x, p, a, b) views."""
    x = y[:n]
    p = y[n : 2 * n]
    a = y[2 * n : 2 * n + n * nc].reshape(n, nc)
    b = y[2 * n + n * nc :].reshape(n, nc)
    return x, p, a, b


def coordinate_labels(n: int, nc: int) -> Iterator[str]:
    """Column labels matching the packed-coordinate order (1-based)."""
    for i in range(n):
        yield f"x_{i + 1}"
    for i in range(n):
        yield f"p_{i + 1}"
    for i in range(n):
        for c in range(nc):
            yield f"a_{i + 1}_{c + 1}"
    for i in range(n):
        for c in range(nc):
            yield f"b_{i + 1}_{c + 1}"


def random_state(
    n_particles: int,
    n_colors: int,
    gamma: float = 1.0,
    *,
    seed: int | None = 0,
    rng: np.random.Generator | None = None,
    spacing: float = 1.2,
    min_gap: float = 0.7,
    p_scale: float = 1.0,
) -> SpinState:
    """Draw a valid random state.

    Positions are sorted uniform draws over a window of size
    ``spacing * n_particles`` (centered), redrawn until all gaps exceed
    ``min_gap``; momenta are normal with scale ``p_scale``; spin entries are
    uniform in (0.5, 1.5) with b_i rescaled so that b_i . a_i = 1.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    span = spacing * n_particles
    for _ in range(10000):
        x = np.sort(rng.uniform(0.0, span, size=n_particles))
        if min_pair_separation(x) >= min_gap or n_particles == 1:
            break
    else:
        raise RuntimeError("could not draw positions with the requested minimum gap")
    x = x - x.mean()
    p = p_scale * rng.standard_normal(n_particles)
    a = rng.uniform(0.5, 1.5, size=(n_particles, n_colors))
    b = rng.uniform(0.5, 1.5, size=(n_particles, n_colors))
    b = b / np.einsum("ic,ic->i", b, a)[:, None]
    return SpinState(gamma, x, p, a, b)
