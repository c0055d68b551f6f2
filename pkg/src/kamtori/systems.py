"""Generalized Hamiltonian (Poisson) systems and the built-in registry.

A system bundles analytic callbacks (H, grad H, Hess H, B, dB) evaluated
in batch: every callback accepts z of shape (..., d) with d = 2n and
returns arrays with matching leading shape.  Derivatives are supplied in
closed form per system; finite differences appear only in consistency
checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import OutsideDomainError
from .norms import max_norm


def _canonical_J(n: int) -> np.ndarray:
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = np.eye(n)
    J[n:, :n] = -np.eye(n)
    return J


@dataclass(frozen=True)
class PoissonSystem:
    """Callable bundle defining dz/dt = B(z) grad H(z).

    ``dB`` returns the derivative tensor with indices [i, j, k] meaning
    d b_ij / d z_k.  ``norm_bounds`` holds coarse sup bounds of B and H and
    their derivatives over the working region, used only by the heuristic
    constant tracker.
    """

    name: str
    dim: int
    H: Callable
    grad_H: Callable
    hess_H: Callable
    B: Callable
    dB: Callable
    domain_guard: Callable = field(default=lambda z: np.ones(np.shape(z)[:-1], dtype=bool))
    norm_bounds: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @property
    def half_dim(self) -> int:
        return self.dim // 2

    def require_inside(self, z):
        ok = np.asarray(self.domain_guard(z))
        if not ok.all():
            bad = np.asarray(z)[~ok]
            raise OutsideDomainError(
                f"{self.name}: point outside admissible domain, e.g. z={bad.reshape(-1, self.dim)[0]}"
            )

    def vector_field(self, z) -> np.ndarray:
        """B(z) grad H(z), batched over leading axes."""
        self.require_inside(z)
        B = self.B(z)
        g = self.grad_H(z)
        return np.einsum("...ij,...j->...i", B, g)

    def structure_gradient_matrix(self, z) -> np.ndarray:
        """Matrix G with G[i, k] = sum_j dB[i, j, k] dH/dz_j.

        Contracting a vector h against the second index reproduces the
        directional derivative of B applied to grad H:
        (dB . h) grad H = G h.
        """
        self.require_inside(z)
        dB = self.dB(z)
        g = self.grad_H(z)
        return np.einsum("...ijk,...j->...ik", dB, g)

    def field_jacobian(self, z) -> np.ndarray:
        """Jacobian of the vector field: G(z) + B(z) Hess H(z)."""
        self.require_inside(z)
        return self.structure_gradient_matrix(z) + np.einsum(
            "...ij,...jk->...ik", self.B(z), self.hess_H(z)
        )

    def structure_derivative_along(self, z, v) -> np.ndarray:
        """Directional derivative of B at z along vector v (matrix valued)."""
        dB = self.dB(z)
        return np.einsum("...ijk,...k->...ij", dB, v)

    def jacobi_residual(self, z) -> float:
        """Max violation of the cyclic Jacobi identity at z.

        Evaluates sum_l (d_l b_ij b_lk + d_l b_jk b_li + d_l b_ki b_lj)
        with analytic dB and returns the largest absolute entry.
        """
        self.require_inside(z)
        B = self.B(z)
        dB = self.dB(z)
        t1 = np.einsum("...ijl,...lk->...ijk", dB, B)
        cyc = t1 + np.einsum("...jkl,...li->...ijk", dB, B) + np.einsum("...kil,...lj->...ijk", dB, B)
        return max_norm(cyc)

    def infinitesimal_poisson_residual(self, z) -> float:
        """Residual of a B + B a^T = (dB . f) with a = Df, f = B grad H.

        This identity expresses that the flow of the system preserves B;
        a nonzero value flags an inconsistency between B, dB, grad H and
        Hess H.
        """
        self.require_inside(z)
        a = self.field_jacobian(z)
        B = self.B(z)
        f = self.vector_field(z)
        lhs = np.einsum("...ij,...jk->...ik", a, B) + np.einsum(
            "...ij,...kj->...ik", B, a
        )
        rhs = self.structure_derivative_along(z, f)
        return max_norm(lhs - rhs)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _fd_gradient(fun, z, h=1e-5):
    z = np.asarray(z, dtype=float)
    g = np.zeros_like(z)
    for k in range(z.shape[-1]):
        dz = np.zeros_like(z)
        dz[..., k] = h
        g[..., k] = (fun(z + dz) - fun(z - dz)) / (2 * h)
    return g


def _fd_jacobian(fun, z, h=1e-5):
    z = np.asarray(z, dtype=float)
    cols = []
    for k in range(z.shape[-1]):
        dz = np.zeros_like(z)
        dz[..., k] = h
        cols.append((np.asarray(fun(z + dz)) - np.asarray(fun(z - dz))) / (2 * h))
    return np.stack(cols, axis=-1)


def validate_system(sys: PoissonSystem, n_points: int = 100, seed: int = 0,
                    fd_step: float = 1e-5, tol: float = 1e-6) -> dict:
    """Check the structure axioms and derivative consistency at random points.

    Returns a report dict with the worst residual per axiom and pass/fail
    flags; failures never raise.
    """
    rng = np.random.default_rng(seed)
    pts = sample_domain_points(sys, n_points, rng)
    B = sys.B(pts)
    antisym = max_norm(B + np.swapaxes(B, -1, -2))
    jacobi = sys.jacobi_residual(pts)
    min_det = float(np.abs(np.linalg.det(B)).min())
    grad_err = max_norm(sys.grad_H(pts) - _fd_gradient(sys.H, pts, fd_step))
    dB_err = max_norm(sys.dB(pts) - _fd_jacobian(sys.B, pts, fd_step))
    hess_err = max_norm(sys.hess_H(pts) - _fd_jacobian(sys.grad_H, pts, fd_step))
    report = {
        "system": sys.name,
        "points": int(n_points),
        "antisymmetry_residual": antisym,
        "jacobi_residual": jacobi,
        "min_abs_det_B": min_det,
        "grad_consistency": grad_err,
        "dB_consistency": dB_err,
        "hess_consistency": hess_err,
        "antisymmetry_ok": antisym <= 1e-12,
        "jacobi_ok": jacobi <= 1e-10,
        "invertible_ok": min_det > 1e-12,
        "gradient_ok": grad_err <= tol,
        "dB_ok": dB_err <= max(tol, 1e-4 * max(1.0, max_norm(B))),
        "hess_ok": hess_err <= max(tol, 1e-4),
    }
    report["ok"] = all(
        report[k] for k in (
            "antisymmetry_ok", "jacobi_ok", "invertible_ok",
            "gradient_ok", "dB_ok", "hess_ok",
        )
    )
    return report


def sample_domain_points(sys: PoissonSystem, n_points: int, rng) -> np.ndarray:
    """Random points inside the system's working region."""
    base = sys.params.get("sample_center", np.zeros(sys.dim))
    spread = sys.params.get("sample_spread", 1.0)
    pts = np.asarray(base) + spread * (rng.random((n_points, sys.dim)) - 0.5)
    ok = np.asarray(sys.domain_guard(pts))
    if not ok.all():  # resample the stragglers near the base point
        pts[~ok] = np.asarray(base) + 0.1 * spread * (
            rng.random((int((~ok).sum()), sys.dim)) - 0.5
        )
    return pts


# ---------------------------------------------------------------------------
# built-in systems
# ---------------------------------------------------------------------------

def _pendulum(eps: float = 1e-3) -> PoissonSystem:
    """Canonical pendulum: B = J, H = y^2/2 + (eps/(2 pi)^2)(1 - cos 2 pi x)."""
    J = _canonical_J(1)
    two_pi = 2 * np.pi

    def H(z):
        x, y = z[..., 0], z[..., 1]
        return 0.5 * y**2 + eps / two_pi**2 * (1 - np.cos(two_pi * x))

    def grad_H(z):
        x, y = z[..., 0], z[..., 1]
        return np.stack([eps / two_pi * np.sin(two_pi * x), y], axis=-1)

    def hess_H(z):
        x = z[..., 0]
        out = np.zeros(z.shape[:-1] + (2, 2))
        out[..., 0, 0] = eps * np.cos(two_pi * x)
        out[..., 1, 1] = 1.0
        return out

    def B(z):
        return np.broadcast_to(J, z.shape[:-1] + (2, 2)).copy()

    def dB(z):
        return np.zeros(z.shape[:-1] + (2, 2, 2))

    return PoissonSystem(
        name="pendulum", dim=2, H=H, grad_H=grad_H, hess_H=hess_H, B=B, dB=dB,
        norm_bounds=_bounds_pendulum(eps),
        params={"eps": eps, "sample_center": np.array([0.0, 0.5]), "sample_spread": 2.0},
    )


def _bounds_pendulum(eps, y_max=2.0):
    return {
        "B_C0": 1.0, "B_C1": 1.0, "B_C2": 1.0, "Binv_C0": 1.0,
        "H_C1": max(abs(eps) / (2 * np.pi), y_max),
        "H_C2": max(abs(eps), 1.0),
        "H_C3": max(2 * np.pi * abs(eps), 1.0),
    }


def _scaled2d(eps: float = 1e-3, mu: float = 0.3) -> PoissonSystem:
    """Variable structure B(z) = (1 + mu cos 2 pi x) J with the pendulum H."""
    if not abs(mu) < 1:
        raise ValueError("need |mu| < 1 so B stays invertible")
    J = _canonical_J(1)
    two_pi = 2 * np.pi

    def g(x):
        return 1.0 + mu * np.cos(two_pi * x)

    def H(z):
        x, y = z[..., 0], z[..., 1]
        return 0.5 * y**2 + eps / two_pi**2 * (1 - np.cos(two_pi * x))

    def grad_H(z):
        x, y = z[..., 0], z[..., 1]
        return np.stack([eps / two_pi * np.sin(two_pi * x), y], axis=-1)

    def hess_H(z):
        x = z[..., 0]
        out = np.zeros(z.shape[:-1] + (2, 2))
        out[..., 0, 0] = eps * np.cos(two_pi * x)
        out[..., 1, 1] = 1.0
        return out

    def B(z):
        return g(z[..., 0])[..., None, None] * J

    def dB(z):
        x = z[..., 0]
        out = np.zeros(z.shape[:-1] + (2, 2, 2))
        dg = -two_pi * mu * np.sin(two_pi * x)
        out[..., 0, 1, 0] = dg
        out[..., 1, 0, 0] = -dg
        return out

    bounds = _bounds_pendulum(eps)
    bounds.update({"B_C0": 1 + abs(mu), "B_C1": 2 * np.pi * abs(mu) + 1 + abs(mu),
                   "B_C2": (2 * np.pi) ** 2 * abs(mu) + 1 + abs(mu),
                   "Binv_C0": 1.0 / (1 - abs(mu))})
    return PoissonSystem(
        name="scaled2d", dim=2, H=H, grad_H=grad_H, hess_H=hess_H, B=B, dB=dB,
        norm_bounds=bounds,
        params={"eps": eps, "mu": mu, "sample_center": np.array([0.0, 0.5]),
                "sample_spread": 2.0},
    )


def _lotka_volterra(alpha: float = 1.0, beta: float = 1.0,
                    gamma_p: float = 1.0, delta: float = 1.0) -> PoissonSystem:
    """Predator-prey system on the positive quadrant.

    B = x y J and H = delta x - gamma_p log x + beta y - alpha log y, which
    reproduces the classical Lotka-Volterra equations; the interior
    equilibrium sits at (gamma_p/delta, alpha/beta).
    """
    J = _canonical_J(1)

    def H(z):
        x, y = z[..., 0], z[..., 1]
        return delta * x - gamma_p * np.log(x) + beta * y - alpha * np.log(y)

    def grad_H(z):
        x, y = z[..., 0], z[..., 1]
        return np.stack([delta - gamma_p / x, beta - alpha / y], axis=-1)

    def hess_H(z):
        x, y = z[..., 0], z[..., 1]
        out = np.zeros(z.shape[:-1] + (2, 2))
        out[..., 0, 0] = gamma_p / x**2
        out[..., 1, 1] = alpha / y**2
        return out

    def B(z):
        x, y = z[..., 0], z[..., 1]
        return (x * y)[..., None, None] * J

    def dB(z):
        x, y = z[..., 0], z[..., 1]
        out = np.zeros(z.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 0] = y
        out[..., 0, 1, 1] = x
        out[..., 1, 0, 0] = -y
        out[..., 1, 0, 1] = -x
        return out

    def guard(z):
        return (np.asarray(z)[..., 0] > 0) & (np.asarray(z)[..., 1] > 0)

    eq = np.array([gamma_p / delta, alpha / beta])
    return PoissonSystem(
        name="lotka_volterra", dim=2, H=H, grad_H=grad_H, hess_H=hess_H, B=B,
        dB=dB, domain_guard=guard,
        norm_bounds={"B_C0": 9.0, "B_C1": 3.0, "B_C2": 1.0, "Binv_C0": 4.0,
                     "H_C1": 5.0, "H_C2": 16.0, "H_C3": 128.0},
        params={"alpha": alpha, "beta": beta, "gamma_p": gamma_p, "delta": delta,
                "equilibrium": eq, "sample_center": eq, "sample_spread": 0.5},
    )


def _coupled4d(eps: float = 1e-4) -> PoissonSystem:
    """Two rotors with a cosine coupling: B = J_4, n = 2 torus dimension.

    H = (y1^2 + y2^2)/2 + eps (cos 2 pi x1 + cos 2 pi x1 cos 2 pi x2).
    """
    J = _canonical_J(2)
    two_pi = 2 * np.pi

    def H(z):
        x1, x2, y1, y2 = (z[..., i] for i in range(4))
        return 0.5 * (y1**2 + y2**2) + eps * (
            np.cos(two_pi * x1) + np.cos(two_pi * x1) * np.cos(two_pi * x2)
        )

    def grad_H(z):
        x1, x2, y1, y2 = (z[..., i] for i in range(4))
        gx1 = -two_pi * eps * np.sin(two_pi * x1) * (1 + np.cos(two_pi * x2))
        gx2 = -two_pi * eps * np.cos(two_pi * x1) * np.sin(two_pi * x2)
        return np.stack([gx1, gx2, y1, y2], axis=-1)

    def hess_H(z):
        x1, x2 = z[..., 0], z[..., 1]
        out = np.zeros(z.shape[:-1] + (4, 4))
        c1, s1 = np.cos(two_pi * x1), np.sin(two_pi * x1)
        c2, s2 = np.cos(two_pi * x2), np.sin(two_pi * x2)
        w = two_pi**2 * eps
        out[..., 0, 0] = -w * c1 * (1 + c2)
        out[..., 0, 1] = w * s1 * s2
        out[..., 1, 0] = w * s1 * s2
        out[..., 1, 1] = -w * c1 * c2
        out[..., 2, 2] = 1.0
        out[..., 3, 3] = 1.0
        return out

    def B(z):
        return np.broadcast_to(J, z.shape[:-1] + (4, 4)).copy()

    def dB(z):
        return np.zeros(z.shape[:-1] + (4, 4, 4))

    return PoissonSystem(
        name="coupled4d", dim=4, H=H, grad_H=grad_H, hess_H=hess_H, B=B, dB=dB,
        norm_bounds={"B_C0": 1.0, "B_C1": 1.0, "B_C2": 1.0, "Binv_C0": 1.0,
                     "H_C1": max(2.0, 4 * np.pi * abs(eps)),
                     "H_C2": max(1.0, 2 * (2 * np.pi) ** 2 * abs(eps)),
                     "H_C3": max(1.0, 2 * (2 * np.pi) ** 3 * abs(eps))},
        params={"eps": eps, "sample_center": np.array([0.0, 0.0, 0.7, 0.4]),
                "sample_spread": 1.5},
    )


SYSTEMS: dict[str, Callable[..., PoissonSystem]] = {
    "pendulum": _pendulum,
    "scaled2d": _scaled2d,
    "lotka_volterra": _lotka_volterra,
    "coupled4d": _coupled4d,
}


def build_system(name: str, **params) -> PoissonSystem:
    if name not in SYSTEMS:
        raise KeyError(f"unknown system {name!r}; registered: {sorted(SYSTEMS)}")
    return SYSTEMS[name](**params)


def make_initial_state(sys: PoissonSystem, omega, trunc, rho: float = 0.0,
                       dealias: int = 2):
    """Default initial torus for a registered system.

    pendulum/coupled4d: the flat rotational torus K(theta) = (theta, omega).
    scaled2d: the exact invariant torus of the integrable eps = 0 system,
    obtained by closed-form quadrature of dX/dtheta = (c/omega)(1 + mu cos 2 pi X)
    with c = omega sqrt(1 - mu^2).
    lotka_volterra: a small circle around the interior equilibrium (useful
    only as a test embedding; it is not near-invariant).
    """
    from .fourier import FourierMap, Frequency
    from .geometry import TorusState

    omega_vec = np.atleast_1d(np.asarray(getattr(omega, "omega", omega), dtype=float))
    freq = omega if isinstance(omega, Frequency) else Frequency(omega_vec, gamma=0.1, sigma=1.0)
    n = omega_vec.shape[0]
    d = sys.dim
    trunc = tuple(int(N) for N in np.atleast_1d(trunc))
    if len(trunc) == 1 and n > 1:
        trunc = trunc * n

    if sys.name in ("pendulum", "coupled4d"):
        winding = np.zeros((d, n))
        winding[:n, :] = np.eye(n)
        periodic = FourierMap.constant(np.concatenate([np.zeros(n), omega_vec]), trunc)
        return TorusState(sys, freq, winding, periodic, rho=rho, dealias=dealias)

    if sys.name == "scaled2d":
        mu = sys.params["mu"]
        winding = np.array([[1.0], [0.0]])
        c = omega_vec[0] / np.sqrt(1 - mu**2)
        G = max(4 * (2 * trunc[0] + 1), 64)
        theta = np.arange(G) / G
        lam = np.sqrt((1 + mu) / (1 - mu))
        X = np.arctan2(lam * np.sin(np.pi * theta), np.cos(np.pi * theta)) / np.pi
        samples = np.stack([X - theta, np.full(G, c)])
        periodic = FourierMap.from_samples(samples, trunc)
        return TorusState(sys, freq, winding, periodic, rho=rho, dealias=dealias)

    if sys.name == "lotka_volterra":
        eq = sys.params["equilibrium"]
        winding = np.zeros((2, 1))
        a = 0.1 * min(eq)
        G = max(4 * (2 * trunc[0] + 1), 64)
        theta = np.arange(G) / G
        samples = np.stack([
            eq[0] + a * np.cos(2 * np.pi * theta),
            eq[1] + a * np.sin(2 * np.pi * theta),
        ])
        periodic = FourierMap.from_samples(samples, trunc)
        return TorusState(sys, freq, winding, periodic, rho=rho, dealias=dealias)

    raise KeyError(f"no initial torus builder for system {sys.name!r}")
