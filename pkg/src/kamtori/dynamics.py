"""Independent dynamical verification by time integration.

Deliberately shares no machinery with the spectral solver: tori are
checked by integrating the flow with Runge-Kutta methods and comparing
against the rigid rotation, by transporting the variational equations to
test that the flow preserves the structure matrix, and by locating the
phase shift between two parameterizations of the same torus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import KamtoriError, OutsideDomainError
from .geometry import TorusState
from .norms import max_norm
from .systems import PoissonSystem


@dataclass(frozen=True)
class IntegratorConfig:
    """Time-integration settings: fixed-step RK4 or adaptive RK45."""

    method: str = "rk4"
    step: float = 1e-3
    rtol: float = 1e-10
    atol: float = 1e-12

    def __post_init__(self):
        if self.method not in ("rk4", "adaptive"):
            raise ValueError("method must be 'rk4' or 'adaptive'")
        if self.step <= 0 or self.rtol <= 0 or self.atol <= 0:
            raise ValueError("step sizes and tolerances must be positive")


def _rk4(rhs, z0, T, step):
    """Classical fixed-step RK4, vectorized over a batch of states (B, d)."""
    z = np.array(z0, dtype=float)
    if T == 0:
        return z
    n_steps = max(1, int(np.ceil(abs(T) / step)))
    h = T / n_steps
    for _ in range(n_steps):
        k1 = rhs(z)
        k2 = rhs(z + 0.5 * h * k1)
        k3 = rhs(z + 0.5 * h * k2)
        k4 = rhs(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return z


def flow(sys: PoissonSystem, z0, T: float, cfg: IntegratorConfig = IntegratorConfig(),
         variational: bool = False):
    """Integrate dz/dt = B(z) grad H(z) from z0 over time T.

    With ``variational`` the Jacobian of the flow is transported alongside
    via d/dt D = Df(z) D, D(0) = I, and (z(T), D(T)) is returned.
    """
    z0 = np.atleast_2d(np.asarray(z0, dtype=float))
    batch, d = z0.shape
    sys.require_inside(z0)

    if not variational:
        def rhs(z):
            return sys.vector_field(z)

        if cfg.method == "rk4":
            out = _rk4(rhs, z0, T, cfg.step)
        else:
            def rhs_flat(t, y):
                return rhs(y.reshape(batch, d)).ravel()

            sol = solve_ivp(
                rhs_flat, (0.0, T), z0.ravel(), method="RK45",
                rtol=cfg.rtol, atol=cfg.atol, dense_output=False,
            )
            if not sol.success:
                raise KamtoriError(f"adaptive integration failed: {sol.message}")
            out = sol.y[:, -1].reshape(batch, d)
        sys.require_inside(out)
        return out[0] if batch == 1 and np.asarray(z0).ndim else out

    def rhs_aug(state):
        z = state[:, :d]
        D = state[:, d:].reshape(batch, d, d)
        dz = sys.vector_field(z)
        dD = np.matmul(sys.field_jacobian(z), D)
        return np.concatenate([dz, dD.reshape(batch, -1)], axis=1)

    aug0 = np.concatenate(
        [z0, np.broadcast_to(np.eye(d).ravel(), (batch, d * d))], axis=1
    )
    if cfg.method == "rk4":
        aug = _rk4(rhs_aug, aug0, T, cfg.step)
    else:
        def rhs_flat(t, y):
            return rhs_aug(y.reshape(batch, -1)).ravel()

        sol = solve_ivp(
            rhs_flat, (0.0, T), aug0.ravel(), method="RK45",
            rtol=cfg.rtol, atol=cfg.atol,
        )
        if not sol.success:
            raise KamtoriError(f"adaptive integration failed: {sol.message}")
        aug = sol.y[:, -1].reshape(batch, -1)
    zT = aug[:, :d]
    DT = aug[:, d:].reshape(batch, d, d)
    sys.require_inside(zT)
    return zT, DT


def _sample_points(n: int, n_samples: int, seed: int = 0) -> np.ndarray:
    """Deterministic torus sample points: uniform for n=1, seeded otherwise."""
    if n == 1:
        return (np.arange(n_samples) / n_samples)[:, None]
    rng = np.random.default_rng(seed)
    return rng.random((n_samples, n))


def conjugacy_residual(state: TorusState, T: float, n_samples: int = 32,
                       cfg: IntegratorConfig = IntegratorConfig(), seed: int = 0) -> float:
    """Max over samples of |phi_T(K(theta)) - K(theta + omega T)|.

    Vanishing (up to integrator error) characterizes an invariant torus
    carrying the rigid rotation of frequency omega.
    """
    theta = _sample_points(state.n, n_samples, seed)
    z0 = state.embed(theta)
    zT = flow(state.system, z0, T, cfg)
    target = state.embed(theta + T * state.omega.omega[None, :])
    return max_norm(zT - target)


def poisson_map_residual(sys: PoissonSystem, z, T: float,
                         cfg: IntegratorConfig = IntegratorConfig()) -> float:
    """Failure of Dphi_T B(z) Dphi_T^T = B(phi_T(z)) along the flow."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    zT, DT = flow(sys, z, T, cfg, variational=True)
    lhs = np.matmul(DT, np.matmul(sys.B(z), np.swapaxes(DT, -1, -2)))
    return max_norm(lhs - sys.B(zT))


def energy_drift(sys: PoissonSystem, z0, T: float,
                 cfg: IntegratorConfig = IntegratorConfig()) -> float:
    """|H(z(T)) - H(z0)|; zero in exact arithmetic by antisymmetry of B."""
    z0 = np.atleast_2d(np.asarray(z0, dtype=float))
    zT = flow(sys, z0, T, cfg)
    return float(np.abs(sys.H(zT) - sys.H(z0)).max())


def _golden_section(fun, a, b, tol=1e-10, max_iter=200):
    """Minimize a unimodal scalar function on [a, b]."""
    invphi = (np.sqrt(5.0) - 1) / 2
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    x = 0.5 * (a + b)
    return x, fun(x)


def align_phase(state1: TorusState, state2: TorusState,
                grid: int = 64, threshold: float = 1e-6):
    """Find tau minimizing |K_1(. + tau) - K_2| over the torus.

    Coarse grid search (``grid`` points per dimension) followed by
    golden-section refinement along each axis.  Returns (tau, residual,
    same_torus) where same_torus reports residual <= threshold; two
    parameterizations of one torus with equal frequency differ exactly by
    such a translation.
    """
    if state1.n != state2.n or state1.d != state2.d:
        raise KamtoriError("tori are not comparable")
    if not np.array_equal(state1.winding, state2.winding):
        return np.zeros(state1.n), np.inf, False

    grid_shape = tuple(
        max(a, b) for a, b in zip(state1.grid_shape, state2.grid_shape)
    )
    K2_vals = state2.periodic.to_samples(grid_shape)
    W = state1.winding

    def objective(tau):
        shifted = state1.periodic.shift(tau).to_samples(grid_shape)
        offset = (W @ tau).reshape((state1.d,) + (1,) * state1.n)
        return float(np.abs(shifted + offset - K2_vals).max())

    n = state1.n
    candidates = _sample_grid_taus(n, grid)
    values = [objective(t) for t in candidates]
    tau = np.array(candidates[int(np.argmin(values))], dtype=float)

    # refine one axis at a time; the objective is smooth and 1-periodic
    width = 1.0 / grid
    for _ in range(2):
        for j in range(n):
            def f(x, j=j):
                t = tau.copy()
                t[j] = x
                return objective(t)

            xj, _ = _golden_section(f, tau[j] - width, tau[j] + width)
            tau[j] = xj
    residual = objective(tau)
    tau = np.mod(tau, 1.0)
    return tau, residual, residual <= threshold


def _sample_grid_taus(n: int, grid: int):
    axes = [np.arange(grid) / grid] * n
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)
