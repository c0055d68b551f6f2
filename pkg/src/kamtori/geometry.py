"""Geometry of a candidate torus embedding.

A ``TorusState`` holds an embedding K(theta) = W theta + P(theta), with an
integer winding matrix W (so rotational tori around angular coordinates
are representable) and a periodic part P stored spectrally.  All derived
fields -- the invariance error e, the metric inverse N, the symplectic
pullback defect L, the torsion S0, and the adapted frame M -- are grid
fields evaluated once on a de-aliased product grid and cached; states are
immutable afterwards and safe to share.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from . import kernels
from .errors import (
    DegenerateMetricError,
    FrameSingularError,
    NoTwistError,
    OutsideDomainError,
    SmallnessViolationError,
    StructureSingularError,
)
from .fourier import FourierMap, Frequency
from .norms import max_norm
from .systems import PoissonSystem

ND1_DET_FLOOR = 1e-10
ND2_COND_LIMIT = 1e8


def product_grid(grid_shape) -> np.ndarray:
    """Flattened uniform grid on T^n: shape (P, n) with theta_j = i_j / G_j."""
    axes = [np.arange(G) / G for G in grid_shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def grid_to_fourier(values, grid_shape, trunc) -> FourierMap:
    """Fit a FourierMap of the given cutoff to flattened grid values (P, m)."""
    vals = np.asarray(values)
    m = vals.shape[1]
    samples = vals.T.reshape((m,) + tuple(grid_shape))
    return FourierMap.from_samples(samples, trunc)


class TorusState:
    """Embedding K = W theta + P with cached geometric grid fields."""

    def __init__(
        self,
        system: PoissonSystem,
        omega: Frequency,
        winding,
        periodic: FourierMap,
        rho: float = 0.0,
        dealias: int = 2,
    ):
        self.system = system
        self.omega = omega
        self.winding = np.asarray(winding, dtype=float)
        self.periodic = periodic
        self.rho = float(rho)
        self.dealias = int(dealias)
        n = periodic.dim_domain
        if self.winding.shape != (system.dim, n):
            raise ValueError(
                f"winding matrix must be {system.dim} x {n}, got {self.winding.shape}"
            )
        if periodic.dim_range != system.dim:
            raise ValueError("periodic part must map into phase space")
        if omega.dim != n:
            raise ValueError("frequency dimension does not match the torus")

    # -- basic shape info ----------------------------------------------------

    @property
    def n(self) -> int:
        return self.periodic.dim_domain

    @property
    def d(self) -> int:
        return self.system.dim

    @cached_property
    def grid_shape(self) -> tuple[int, ...]:
        return self.periodic.default_grid(self.dealias)

    @cached_property
    def theta(self) -> np.ndarray:
        return product_grid(self.grid_shape)

    @cached_property
    def ext_trunc(self) -> tuple[int, ...]:
        """Largest mode box the working grid resolves."""
        return tuple((G - 1) // 2 for G in self.grid_shape)

    def _to_grid(self, fmap: FourierMap) -> np.ndarray:
        """Samples of a FourierMap on the working grid, flattened to (P, m)."""
        vals = fmap.to_samples(self.grid_shape)
        return vals.reshape(fmap.dim_range, -1).T

    # -- embedding and derivatives -------------------------------------------

    def embed(self, theta) -> np.ndarray:
        """K(theta) at arbitrary points (P, n) -> (P, d)."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        return theta @ self.winding.T + self.periodic.evaluate(theta)

    def embed_derivative_along_omega(self, theta) -> np.ndarray:
        """d_omega K at arbitrary points (P, n) -> (P, d)."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        dP = self.periodic.directional_derivative(self.omega)
        return (self.winding @ self.omega.omega)[None, :] + dP.evaluate(theta)

    @cached_property
    def K_grid(self) -> np.ndarray:
        vals = self.theta @ self.winding.T + self._to_grid(self.periodic)
        ok = np.asarray(self.system.domain_guard(vals))
        if not ok.all():
            i = int(np.argmax(~ok))
            raise OutsideDomainError(
                f"embedding leaves the {self.system.name} domain at "
                f"theta={tuple(self.theta[i])}"
            )
        return vals

    @cached_property
    def DK_grid(self) -> np.ndarray:
        cols = [
            self._to_grid(self.periodic.partial_derivative(j))
            for j in range(self.n)
        ]
        return self.winding[None, :, :] + np.stack(cols, axis=-1)

    @cached_property
    def dK_omega_grid(self) -> np.ndarray:
        return (
            self.winding @ self.omega.omega
        )[None, :] + self._to_grid(self.periodic.directional_derivative(self.omega))

    # -- system fields along the torus ---------------------------------------

    @cached_property
    def grad_H_grid(self) -> np.ndarray:
        return self.system.grad_H(self.K_grid)

    @cached_property
    def B_grid(self) -> np.ndarray:
        B = self.system.B(self.K_grid)
        dets = np.linalg.det(B)
        if np.abs(dets).min() < 1e-14:
            raise StructureSingularError(
                f"structure matrix singular along the torus "
                f"(min |det B| = {np.abs(dets).min():.3e})"
            )
        return B

    @cached_property
    def B_inv_grid(self) -> np.ndarray:
        return kernels.batched_inv(self.B_grid)

    @cached_property
    def vector_field_grid(self) -> np.ndarray:
        return np.einsum("pij,pj->pi", self.B_grid, self.grad_H_grid)

    @cached_property
    def A_grid(self) -> np.ndarray:
        """Jacobian of the vector field along the torus."""
        return self.system.field_jacobian(self.K_grid)

    @cached_property
    def DBf_grid(self) -> np.ndarray:
        """Directional derivative of B along the vector field."""
        return self.system.structure_derivative_along(
            self.K_grid, self.vector_field_grid
        )

    # -- invariance error ------------------------------------------------------

    @cached_property
    def e_grid(self) -> np.ndarray:
        """Invariance defect B(K) grad H(K) - d_omega K on the grid."""
        return self.vector_field_grid - self.dK_omega_grid

    @cached_property
    def e_map(self) -> FourierMap:
        return grid_to_fourier(self.e_grid, self.grid_shape, self.ext_trunc)

    @cached_property
    def eps_sup(self) -> float:
        """Grid sup norm of the invariance error (the working error size)."""
        return max_norm(self.e_grid)

    def eps_strip(self, rho: float | None = None) -> float:
        """Strip-weighted error size at the given (or the state's) width."""
        return self.e_map.strip_norm(self.rho if rho is None else rho)

    def error_norm(self, mode: str = "sup", rho: float | None = None) -> float:
        if mode == "sup":
            return self.eps_sup
        if mode == "strip":
            return self.eps_strip(rho)
        raise ValueError(f"unknown norm mode {mode!r}")

    # -- metric, defect, torsion ------------------------------------------------

    @cached_property
    def gram_dets(self) -> np.ndarray:
        DK = self.DK_grid
        gram = np.matmul(np.swapaxes(DK, -1, -2), DK)
        return np.linalg.det(gram)

    @cached_property
    def nd1_threshold(self) -> float:
        DK = self.DK_grid
        gram_diag_mean = float(np.einsum("pij,pij->", DK, DK) / (DK.shape[0] * self.n))
        return ND1_DET_FLOOR * max(gram_diag_mean, 1e-30) ** self.n

    @cached_property
    def N_grid(self) -> np.ndarray:
        """Inverse Gram matrix (DK^T DK)^-1 per grid point."""
        dets = self.gram_dets
        if np.abs(dets).min() <= self.nd1_threshold:
            i = int(np.argmin(np.abs(dets)))
            raise DegenerateMetricError(
                f"tangent Gram matrix degenerate at theta={tuple(self.theta[i])}: "
                f"|det| = {abs(dets[i]):.3e}"
            )
        DK = self.DK_grid
        gram = np.matmul(np.swapaxes(DK, -1, -2), DK)
        return kernels.batched_inv(gram)

    @cached_property
    def L_grid(self) -> np.ndarray:
        """Symplectic pullback defect DK^T B(K)^-1 DK; zero on exact tori."""
        return kernels.lagrangian_core(self.DK_grid, self.B_inv_grid)

    @cached_property
    def L_sup(self) -> float:
        return max_norm(self.L_grid)

    @cached_property
    def S0_grid(self) -> np.ndarray:
        return kernels.torsion_core(
            self.DK_grid, self.N_grid, self.A_grid, self.B_grid, self.DBf_grid
        )

    @cached_property
    def S0_avg(self) -> np.ndarray:
        return self.S0_grid.mean(axis=0)

    @cached_property
    def S0_avg_inv(self) -> np.ndarray:
        avg = self.S0_avg
        cond = np.linalg.cond(avg)
        if not np.isfinite(cond) or cond > ND2_COND_LIMIT:
            raise NoTwistError(
                f"averaged torsion is singular or ill-conditioned (cond = {cond:.3e})"
            )
        return np.linalg.inv(avg)

    # -- frame -------------------------------------------------------------------

    @cached_property
    def _frame_pair(self):
        return kernels.frame_core(self.DK_grid, self.N_grid, self.B_grid)

    @property
    def M_grid(self) -> np.ndarray:
        return self._frame_pair[0]

    @property
    def V_grid(self) -> np.ndarray:
        return self._frame_pair[1]

    @cached_property
    def R_grid(self) -> np.ndarray:
        n, d = self.n, self.d
        R = np.zeros((self.L_grid.shape[0], d, d))
        R[:, :n, :n] = self.L_grid
        return R

    @cached_property
    def M_inv_grid(self) -> np.ndarray:
        """Direct pointwise inverse of the frame (the default route)."""
        M = self.M_grid
        dets = np.linalg.det(M)
        if np.abs(dets).min() < 1e-14:
            i = int(np.argmin(np.abs(dets)))
            raise FrameSingularError(
                f"frame singular at theta={tuple(self.theta[i])} "
                f"(det = {dets[i]:.3e})"
            )
        return kernels.batched_inv(M)

    @cached_property
    def V_inv_grid(self) -> np.ndarray:
        """Closed-form inverse of V: [[-Q, -I], [I, 0]] with Q = V's lower block."""
        n, d = self.n, self.d
        Q = -self.V_grid[:, n:, n:]
        Vi = np.zeros_like(self.V_grid)
        eye = np.eye(n)
        Vi[:, :n, :n] = -Q
        Vi[:, :n, n:] = -eye
        Vi[:, n:, :n] = eye
        return Vi

    @cached_property
    def frame_product_inverse(self) -> np.ndarray:
        """V^-1 M^T B(K)^-1: the exact frame inverse when the defect L vanishes."""
        Mt = np.swapaxes(self.M_grid, -1, -2)
        return np.matmul(self.V_inv_grid, np.matmul(Mt, self.B_inv_grid))

    @cached_property
    def frame_correction(self) -> np.ndarray:
        """Series correction M_e = -(I + V^-1 R)^-1 V^-1 R V^-1 M^T B^-1.

        Satisfies M^-1 = V^-1 M^T B(K)^-1 + M_e; vanishes when e = 0.
        """
        ViR = np.matmul(self.V_inv_grid, self.R_grid)
        smallness = float(np.abs(ViR).sum(axis=-1).max())
        if smallness > 0.5:
            raise SmallnessViolationError(
                f"Neumann condition fails: ||V^-1 R|| = {smallness:.3e} > 1/2"
            )
        eye = np.eye(self.d)
        inv_term = kernels.batched_inv(eye[None, :, :] + ViR)
        return -np.matmul(inv_term, np.matmul(ViR, self.frame_product_inverse))

    def frame_inverse_check(self) -> dict:
        """Compare the series frame inverse against direct inversion.

        Returns the sup norms of M_e computed two ways (series formula and
        M^-1 - V^-1 M^T B^-1) together with their disagreement.
        """
        series = self.frame_correction
        direct = self.M_inv_grid - self.frame_product_inverse
        return {
            "Me_series_sup": max_norm(series),
            "Me_direct_sup": max_norm(direct),
            "mismatch": max_norm(series - direct),
            "identity_residual": max_norm(
                np.matmul(self.M_inv_grid, self.M_grid) - np.eye(self.d)
            ),
        }

    # -- theorem-level identity residuals ----------------------------------------

    @cached_property
    def projected_error_grid(self) -> np.ndarray:
        """DK^T B(K)^-1 e per grid point (the quantity with zero average)."""
        DKt = np.swapaxes(self.DK_grid, -1, -2)
        return np.einsum(
            "pij,pj->pi", np.matmul(DKt, self.B_inv_grid), self.e_grid
        )

    def error_average_residual(self) -> float:
        """|< DK^T B(K)^-1 e >|: vanishes for every embedding, up to aliasing."""
        return float(np.abs(self.projected_error_grid.mean(axis=0)).max())

    def _grid_directional_derivative(self, grid_field: np.ndarray) -> np.ndarray:
        """d_omega of a periodic grid field (P, ...) via the extended spectrum."""
        P = grid_field.shape[0]
        flat = grid_field.reshape(P, -1)
        fmap = grid_to_fourier(flat, self.grid_shape, self.ext_trunc)
        dmap = fmap.directional_derivative(self.omega)
        return self._to_grid(dmap).reshape(grid_field.shape)

    def De_grid(self) -> np.ndarray:
        """Jacobian of the invariance error on the grid: (P, d, n)."""
        cols = [
            self._to_grid(self.e_map.partial_derivative(j)) for j in range(self.n)
        ]
        return np.stack(cols, axis=-1)

    def jacobian_transport_residual(self) -> tuple[float, float]:
        """Residual of A DK - d_omega DK = De and the size of De.

        A consequence of differentiating the definition of e, so it holds
        for arbitrary embeddings up to aliasing.
        """
        De = self.De_grid()
        dDK = self._grid_directional_derivative(self.DK_grid - self.winding[None, :, :])
        lhs = np.matmul(self.A_grid, self.DK_grid) - dDK
        return max_norm(lhs - De), max_norm(De)

    def frame_transport_matrix(self) -> np.ndarray:
        """E = A M - d_omega M - M [[0, S0], [0, 0]] on the grid."""
        n, d = self.n, self.d
        dM = np.empty_like(self.M_grid)
        dDK = self._grid_directional_derivative(self.DK_grid - self.winding[None, :, :])
        dM[:, :, :n] = dDK
        second = self.M_grid[:, :, n:]
        dM[:, :, n:] = self._grid_directional_derivative(second)
        upper = np.zeros((self.M_grid.shape[0], d, d))
        upper[:, :n, n:] = self.S0_grid
        return (
            np.matmul(self.A_grid, self.M_grid)
            - dM
            - np.matmul(self.M_grid, upper)
        )

    def frame_transport_residual(self) -> dict:
        """Sup norms of E and M^-1 E (both vanish on exact solutions)."""
        E = self.frame_transport_matrix()
        return {
            "E_sup": max_norm(E),
            "MinvE_sup": max_norm(np.matmul(self.M_inv_grid, E)),
        }

    def nondegeneracy_report(self) -> dict:
        """ND1/ND2 diagnostics with pass/fail flags (failures do not raise)."""
        report = {
            "nd1_min_abs_det": float(np.abs(self.gram_dets).min()),
            "nd1_threshold": self.nd1_threshold,
        }
        report["nd1_ok"] = report["nd1_min_abs_det"] > report["nd1_threshold"]
        if report["nd1_ok"]:
            avg = self.S0_avg
            cond = float(np.linalg.cond(avg))
            report["nd2_cond"] = cond
            report["nd2_cond_limit"] = ND2_COND_LIMIT
            report["nd2_ok"] = bool(np.isfinite(cond) and cond <= ND2_COND_LIMIT)
            if report["nd2_ok"]:
                report["S0_avg_inv_norm"] = max_norm(np.linalg.inv(avg))
        else:
            report["nd2_ok"] = False
        report["ok"] = report["nd1_ok"] and report["nd2_ok"]
        return report

    # -- norms the constant tracker needs -----------------------------------------

    @cached_property
    def DK_sup(self) -> float:
        return max_norm(self.DK_grid)

    @cached_property
    def N_sup(self) -> float:
        return max_norm(self.N_grid)

    @cached_property
    def S0_avg_inv_sup(self) -> float:
        return max_norm(self.S0_avg_inv)

    # -- evolution ------------------------------------------------------------------

    def with_periodic(self, periodic: FourierMap) -> "TorusState":
        return TorusState(
            self.system, self.omega, self.winding, periodic,
            rho=self.rho, dealias=self.dealias,
        )

    def translated(self, tau) -> "TorusState":
        """The reparameterized torus theta -> K(theta + tau)."""
        tau = np.asarray(tau, dtype=float)
        shifted = self.periodic.shift(tau) + FourierMap.constant(
            self.winding @ tau, self.periodic.trunc
        )
        return self.with_periodic(shifted)

    def distance_to(self, other: "TorusState") -> float:
        """Sup distance between embeddings with identical winding."""
        if not np.array_equal(self.winding, other.winding):
            raise ValueError("cannot compare tori with different winding")
        return (self.periodic - other.periodic).sup_norm()

    def __repr__(self):
        return (
            f"TorusState({self.system.name}, n={self.n}, trunc={self.periodic.trunc}, "
            f"grid={self.grid_shape})"
        )
