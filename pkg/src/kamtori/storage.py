"""File formats: JSON for configs, reports and torus coefficients, CSV for
grid samples and sweep tables.

The coefficient file stores one entry per retained lattice mode as
[k-vector, real parts, imaginary parts] together with the torus dimension,
range dimension, cutoffs, frequency, winding matrix and a format-version
field, so an exported torus reloads bit-for-bit.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .fourier import FourierMap, Frequency
from .geometry import TorusState
from .systems import PoissonSystem, build_system

FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# torus coefficients
# ---------------------------------------------------------------------------

def torus_to_dict(state: TorusState) -> dict:
    f = state.periodic
    n, m = f.dim_domain, f.dim_range
    modes = []
    coef = f.coef
    mags = np.abs(coef).max(axis=0)
    for idx in np.argwhere(mags > 0):
        k = [int(i - N) for i, N in zip(idx, f.trunc)]
        c = coef[(slice(None),) + tuple(idx)]
        modes.append([k, [float(v) for v in c.real], [float(v) for v in c.imag]])
    return {
        "format_version": FORMAT_VERSION,
        "n": n,
        "m": m,
        "trunc": list(f.trunc),
        "omega": [float(w) for w in state.omega.omega],
        "gamma": state.omega.gamma,
        "sigma": state.omega.sigma,
        "winding": [[float(x) for x in row] for row in state.winding],
        "rho": state.rho,
        "dealias": state.dealias,
        "system": {"name": state.system.name, "params": _jsonable(state.system.params)},
        "modes": modes,
    }


def torus_from_dict(data: dict, system: PoissonSystem | None = None) -> TorusState:
    if data.get("format_version") != FORMAT_VERSION:
        raise ConfigError(
            f"unsupported torus format version {data.get('format_version')!r}"
        )
    n, m = int(data["n"]), int(data["m"])
    trunc = tuple(int(N) for N in data["trunc"])
    coef = np.zeros((m,) + tuple(2 * N + 1 for N in trunc), dtype=complex)
    for k, re, im in data["modes"]:
        idx = tuple(int(ki) + N for ki, N in zip(k, trunc))
        coef[(slice(None),) + idx] = np.asarray(re, dtype=float) + 1j * np.asarray(
            im, dtype=float
        )
    periodic = FourierMap(coef, trunc, symmetrize=False)
    omega = Frequency(
        np.asarray(data["omega"], dtype=float),
        gamma=float(data["gamma"]),
        sigma=float(data["sigma"]),
    )
    if system is None:
        sysinfo = data.get("system")
        if sysinfo is None:
            raise ConfigError("torus file does not name its system; pass one")
        system = build_system(sysinfo["name"], **_strip_arrays(sysinfo.get("params", {})))
    return TorusState(
        system,
        omega,
        np.asarray(data["winding"], dtype=float),
        periodic,
        rho=float(data.get("rho", 0.0)),
        dealias=int(data.get("dealias", 2)),
    )


def save_torus(state: TorusState, path) -> None:
    Path(path).write_text(json.dumps(torus_to_dict(state), indent=1))


def load_torus(path, system: PoissonSystem | None = None) -> TorusState:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return torus_from_dict(data, system)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _strip_arrays(params: dict) -> dict:
    """Drop non-scalar entries (builder metadata) before re-building a system."""
    return {
        k: v
        for k, v in params.items()
        if isinstance(v, (int, float)) and not isinstance(v, bool)
    }


# ---------------------------------------------------------------------------
# grid samples / sweep tables
# ---------------------------------------------------------------------------

def save_samples_csv(state: TorusState, path) -> None:
    theta = state.theta
    K = state.K_grid
    header = [f"theta_{j+1}" for j in range(state.n)] + [
        f"K_{i+1}" for i in range(state.d)
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row_t, row_k in zip(theta, K):
            writer.writerow([repr(float(v)) for v in (*row_t, *row_k)])


def save_table_csv(rows: list[dict], path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    header = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row.get(k, "") for k in header])


def save_json(data: dict, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(data), indent=1, default=repr))


# ---------------------------------------------------------------------------
# problem configuration
# ---------------------------------------------------------------------------

_DEFAULT_SOLVER = {"target": 1e-12, "max_iter": 30, "damping": True}
_DEFAULT_CERT = {"mode": "heuristic", "c": 1.0, "r": 1.0}


class ProblemConfig:
    """Validated run configuration loaded from JSON."""

    def __init__(self, data: dict, source: str = "<config>"):
        def fail(field, message):
            raise ConfigError(f"{source}: field {field!r}: {message}")

        sysinfo = data.get("system")
        if not isinstance(sysinfo, dict) or "name" not in sysinfo:
            fail("system", "expected an object with a 'name'")
        self.system_name = sysinfo["name"]
        self.system_params = dict(sysinfo.get("params", {}))
        try:
            self.system = build_system(self.system_name, **self.system_params)
        except KeyError as exc:
            fail("system.name", str(exc))
        except TypeError as exc:
            fail("system.params", str(exc))

        omega = data.get("omega")
        if omega is None:
            fail("omega", "missing")
        self.omega_vec = np.atleast_1d(np.asarray(omega, dtype=float))
        self.gamma = float(data.get("gamma", 0.1))
        self.sigma = float(data.get("sigma", 1.0))
        self.k_check = int(data.get("k_check", 30))
        if self.gamma <= 0:
            fail("gamma", "must be positive")
        if self.sigma < 1:
            fail("sigma", "must be at least 1")

        modes = data.get("modes")
        if modes is None:
            fail("modes", "missing")
        self.modes = tuple(int(N) for N in np.atleast_1d(modes))
        if len(self.modes) == 1 and self.omega_vec.shape[0] > 1:
            self.modes = self.modes * self.omega_vec.shape[0]
        if len(self.modes) != self.omega_vec.shape[0]:
            fail("modes", "length must match the frequency dimension")
        if any(N < 4 for N in self.modes):
            fail("modes", "every per-dimension cutoff must be at least 4")

        self.rho_0 = float(data.get("rho_0", 0.02))
        delta_0 = data.get("delta_0")
        self.delta_0 = float(delta_0) if delta_0 is not None else self.rho_0 / 12.0
        limit = min(1.0, self.rho_0 / 12.0)
        if not 0 < self.delta_0 <= limit:
            fail(
                "delta_0",
                f"must satisfy 0 < delta_0 <= min(1, rho_0/12) = {limit}",
            )

        self.norm_mode = data.get("norm_mode", "sup")
        if self.norm_mode not in ("sup", "strip"):
            fail("norm_mode", "must be 'sup' or 'strip'")

        self.initial_torus = data.get("initial_torus", "flat")
        solver = {**_DEFAULT_SOLVER, **data.get("solver", {})}
        self.target = float(solver["target"])
        self.max_iter = int(solver["max_iter"])
        self.damping = bool(solver["damping"])

        cert = {**_DEFAULT_CERT, **data.get("certificate", {})}
        self.cert_mode = cert["mode"]
        if self.cert_mode not in ("heuristic", "user"):
            fail("certificate.mode", "must be 'heuristic' or 'user'")
        self.cert_c = float(cert["c"])
        self.cert_r = float(cert["r"])
        self.seed = int(data.get("seed", 0))
        self.dealias = int(data.get("dealias", 2))
        self.raw = data

    @classmethod
    def load(cls, path) -> "ProblemConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
        return cls(data, source=str(path))

    def frequency(self) -> Frequency:
        return Frequency(self.omega_vec, gamma=self.gamma, sigma=self.sigma)

    def initial_state(self) -> TorusState:
        from .systems import make_initial_state

        if isinstance(self.initial_torus, dict) and "file" in self.initial_torus:
            return load_torus(self.initial_torus["file"], self.system)
        if self.initial_torus != "flat":
            raise ConfigError(
                f"initial_torus must be 'flat' or {{'file': path}}, "
                f"got {self.initial_torus!r}"
            )
        return make_initial_state(
            self.system, self.frequency(), self.modes, rho=self.rho_0,
            dealias=self.dealias,
        )
