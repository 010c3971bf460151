"""Flat-file formats: state files (JSON), trajectory CSV, report JSON.

State files are human-diffable JSON with a fixed key order (gamma,
n_particles, n_colors, x, p, a, b, then optional metadata) and floats
rendered with 17 significant digits, which round-trips double precision
exactly.  Trajectories are RFC-4180 CSV with a header row.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import StateFileError
from .state import SpinState

FLOAT_FORMAT = ".17g"


def format_float(v: float) -> str:
    return format(float(v), FLOAT_FORMAT)


def _render(value, indent: int) -> str:
    pad = "  " * indent
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = ",\n".join(
            f"{pad}  {json.dumps(str(k))}: {_render(v, indent + 1)}" for k, v in value.items()
        )
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(value, (list, tuple, np.ndarray)):
        seq = list(value)
        if seq and isinstance(seq[0], (list, tuple, np.ndarray, dict)):
            items = ",\n".join(f"{pad}  {_render(v, indent + 1)}" for v in seq)
            return "[\n" + items + "\n" + pad + "]"
        return "[" + ", ".join(_render(v, indent) for v in seq) + "]"
    raise TypeError(f"cannot serialize {type(value)!r}")


def canonical_json(doc: dict) -> str:
    """Deterministic JSON text with the documented float formatting."""
    return _render(doc, 0) + "\n"


def state_to_dict(state: SpinState, metadata: dict | None = None) -> dict:
    doc = {
        "gamma": state.gamma,
        "n_particles": state.n_particles,
        "n_colors": state.n_colors,
        "x": state.x,
        "p": state.p,
        "a": state.a,
        "b": state.b,
    }
    if metadata:
        doc["metadata"] = metadata
    return doc


def save_state(state: SpinState, path, metadata: dict | None = None) -> None:
    Path(path).write_text(canonical_json(state_to_dict(state, metadata)))


def _require(doc: dict, field: str, kind) -> object:
    if field not in doc:
        raise StateFileError(field, "missing")
    value = doc[field]
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise StateFileError(field, f"expected an integer, got {type(value).__name__}")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise StateFileError(field, f"expected an array, got {type(value).__name__}")
        return value
    if not isinstance(value, kind):
        raise StateFileError(field, f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _vector(doc: dict, field: str, n: int) -> np.ndarray:
    raw = _require(doc, field, list)
    if len(raw) != n:
        raise StateFileError(field, f"expected {n} entries, got {len(raw)}")
    try:
        return np.array([float(v) for v in raw])
    except (TypeError, ValueError):
        raise StateFileError(field, "entries must be numbers") from None


def _matrix(doc: dict, field: str, n: int, nc: int) -> np.ndarray:
    raw = _require(doc, field, list)
    if len(raw) != n:
        raise StateFileError(field, f"expected {n} rows, got {len(raw)}")
    rows = []
    for i, row in enumerate(raw):
        if not isinstance(row, list) or len(row) != nc:
            raise StateFileError(field, f"row {i + 1} must be an array of {nc} numbers")
        try:
            rows.append([float(v) for v in row])
        except (TypeError, ValueError):
            raise StateFileError(field, f"row {i + 1} entries must be numbers") from None
    return np.array(rows)


def dict_to_state(doc: dict, constraint_tol: float | None = None) -> SpinState:
    if not isinstance(doc, dict):
        raise StateFileError("<root>", "state file must hold a JSON object")
    gamma = _require(doc, "gamma", float)
    n = _require(doc, "n_particles", int)
    nc = _require(doc, "n_colors", int)
    if n < 1:
        raise StateFileError("n_particles", "must be positive")
    if nc < 1:
        raise StateFileError("n_colors", "must be positive")
    x = _vector(doc, "x", n)
    p = _vector(doc, "p", n)
    a = _matrix(doc, "a", n, nc)
    b = _matrix(doc, "b", n, nc)
    kwargs = {} if constraint_tol is None else {"constraint_tol": constraint_tol}
    return SpinState(gamma, x, p, a, b, **kwargs)


def load_state(path, constraint_tol: float | None = None) -> SpinState:
    """Parse a state file; failures carry the offending field name."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise StateFileError("<root>", f"invalid JSON: {exc}") from exc
    return dict_to_state(doc, constraint_tol)


def write_trajectory_csv(traj, path, k_max: int = 4) -> None:
    """Trajectory CSV: t, coordinates in packed order, then tr L^k columns."""
    from .flows import hamiltonian_trace_power
    from .state import coordinate_labels, pack_coordinates

    states = traj.states
    n, nc = states[0].n_particles, states[0].n_colors
    header = ["t", *coordinate_labels(n, nc), *[f"H_{k}" for k in range(1, k_max + 1)]]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t, state in traj.samples:
            row = [format_float(t)]
            row += [format_float(v) for v in pack_coordinates(state)]
            row += [
                format_float(hamiltonian_trace_power(state, k)) for k in range(1, k_max + 1)
            ]
            writer.writerow(row)


def write_discrete_csv(traj, path, k_max: int = 4) -> None:
    """Discrete run CSV: one row per level with solver and certification data.

    The ``eom_residual`` column holds the three-level symmetric equation
    residual and is populated only at interior levels.
    """
    from .discrete import discrete_eom_residual, discrete_lax_residual

    levels = traj.levels
    n, nc = levels[0].n_particles, levels[0].n_colors
    header = ["step"]
    header += [f"x_{i + 1}" for i in range(n)]
    header += [f"xdot_{i + 1}" for i in range(n)]
    header += [f"a_{i + 1}_{c + 1}" for i in range(n) for c in range(nc)]
    header += [f"b_{i + 1}_{c + 1}" for i in range(n) for c in range(nc)]
    header += [f"H_{k}" for k in range(1, k_max + 1)]
    header += ["newton_iterations", "newton_residual", "lax_residual", "eom_residual"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for idx, level in enumerate(levels):
            row = [str(idx)]
            row += [format_float(v) for v in level.x]
            row += [format_float(v) for v in level.xdot]
            row += [format_float(v) for v in level.a.ravel()]
            row += [format_float(v) for v in level.b.ravel()]
            lax = level.lax_matrix()
            powers = [lax]
            for _ in range(k_max - 1):
                powers.append(powers[-1] @ lax)
            row += [format_float(np.trace(pk)) for pk in powers]
            if idx == 0:
                row += ["", "", ""]
            else:
                meta = traj.step_info[idx - 1]
                row += [
                    str(meta["iterations"]),
                    format_float(meta["residual"]),
                    format_float(discrete_lax_residual(levels[idx - 1], level)),
                ]
            if 0 < idx < len(levels) - 1:
                eom = discrete_eom_residual(levels[idx - 1], level, levels[idx + 1])
                row.append(format_float(np.max(np.abs(eom))))
            else:
                row.append("")
            writer.writerow(row)


def save_report(report, path) -> None:
    Path(path).write_text(canonical_json(report.to_dict()))


def load_report_dict(path) -> dict:
    from .report import validate_report_dict

    doc = json.loads(Path(path).read_text())
    validate_report_dict(doc)
    return doc
