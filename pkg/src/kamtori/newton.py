"""One quasi-Newton step for the invariance equation.

The linearized equation A Delta - d_omega Delta = -e is conjugated by the
adapted frame M = [DK | B(K) DK N], which reduces it to a triangular pair
of small-divisor equations

    d_omega xi_x = S0 xi_y - p_x,      d_omega xi_y = -p_y,

solved spectrally; the free average of xi_y is fixed so the first equation
is solvable, the average of xi_x is pinned to zero, and the update is
Delta = M xi.  The quadratically small terms dropped by the reduction are
computed only as diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutsideDomainError, StepTooLargeError
from .fourier import FourierMap, cohomological_solve
from .geometry import TorusState, grid_to_fourier
from .norms import max_norm


def rhs_components(state: TorusState) -> tuple[FourierMap, FourierMap]:
    """Frame-projected right-hand sides (p_x, p_y) of the reduced system.

    p_x = N^T DK^T [B DK N DK^T B^-1 - I] e  and  p_y = -DK^T B^-1 e.
    The average of p_y vanishes up to aliasing, which is what makes the
    xi_y equation solvable.
    """
    DK = state.DK_grid
    DKt = np.swapaxes(DK, -1, -2)
    N = state.N_grid
    B = state.B_grid
    Binv = state.B_inv_grid
    e = state.e_grid

    T = np.matmul(DK, N)                      # (P, d, n)
    inner = np.matmul(np.matmul(B, T), np.matmul(DKt, Binv))
    inner -= np.eye(state.d)[None, :, :]
    px = np.einsum("pij,pj->pi", np.matmul(np.swapaxes(T, -1, -2), inner), e)
    py = -state.projected_error_grid
    p_x = grid_to_fourier(px, state.grid_shape, state.ext_trunc)
    p_y = grid_to_fourier(py, state.grid_shape, state.ext_trunc)
    return p_x, p_y


def solve_reduced(state: TorusState, p_x: FourierMap, p_y: FourierMap,
                  zero_average_rtol: float = 1e-8):
    """Solve the triangular reduced system; returns (xi_x, xi_y, xi_bar_y).

    xi_y = tilde_xi_y + xi_bar_y where the constant part is chosen as
    xi_bar_y = <S0>^-1 <p_x> - <S0>^-1 <S0 tilde_xi_y>, which zeroes the
    average of S0 xi_y - p_x so the xi_x equation is solvable.
    """
    S0_inv = state.S0_avg_inv  # raises NoTwistError when ND2 fails
    xi_y_tilde = cohomological_solve(
        -p_y, state.omega, zero_average_rtol=zero_average_rtol
    )
    xi_y_tilde_grid = state._to_grid(xi_y_tilde)
    s_xi = np.einsum("pij,pj->pi", state.S0_grid, xi_y_tilde_grid)
    xi_bar_y = S0_inv @ p_x.average() - S0_inv @ s_xi.mean(axis=0)

    xi_y = xi_y_tilde + FourierMap.constant(xi_bar_y, xi_y_tilde.trunc)
    xi_y_grid = xi_y_tilde_grid + xi_bar_y[None, :]
    rhs_x_grid = np.einsum("pij,pj->pi", state.S0_grid, xi_y_grid) - state._to_grid(p_x)
    rhs_x = grid_to_fourier(rhs_x_grid, state.grid_shape, state.ext_trunc)
    # the correction above kills the average up to quadrature error; pin it
    rhs_avg = np.abs(rhs_x.average()).max()
    scale = max_norm(state.S0_grid) * max_norm(xi_y_grid) + max_norm(state._to_grid(p_x))
    if rhs_avg > max(1e-10 * scale, 1e-300):
        raise StepTooLargeError(
            f"average of the tangential right-hand side did not cancel: "
            f"{rhs_avg:.3e} vs scale {scale:.3e}"
        )
    xi_x = cohomological_solve(
        rhs_x.remove_average(), state.omega, zero_average_rtol=np.inf
    )
    return xi_x, xi_y, xi_bar_y


@dataclass
class StepResult:
    """Outcome of one quasi-Newton step."""

    new_state: TorusState
    delta: FourierMap
    xi_x: FourierMap
    xi_y: FourierMap
    xi_bar_y: np.ndarray
    eps_before: float
    eps_after: float
    delta_sup: float
    residual_linear: float
    tail_discarded: float
    halvings: int
    diagnostics: dict


def linearized_residual(state: TorusState, delta: FourierMap) -> float:
    """Sup norm of A Delta - d_omega Delta + e for any candidate update."""
    d_grid = state._to_grid(delta.pad_to(state.ext_trunc))
    dd_grid = state._to_grid(delta.directional_derivative(state.omega).pad_to(state.ext_trunc))
    lhs = np.einsum("pij,pj->pi", state.A_grid, d_grid) - dd_grid + state.e_grid
    return max_norm(lhs)


def _build_candidate(state: TorusState, delta: FourierMap):
    """K + Delta truncated back to the state's cutoff; returns (state, tail)."""
    new_periodic_ext = state.periodic.pad_to(delta.trunc) + delta
    new_periodic, tail = new_periodic_ext.truncated(state.periodic.trunc)
    cleaned, _ = new_periodic.truncate_tail(1e-16)
    return state.with_periodic(cleaned), tail


def newton_step(state: TorusState, damping: bool = True,
                max_halvings: int = 4, norm_mode: str = "sup") -> StepResult:
    """Run one full quasi-Newton update on the invariance equation.

    With ``damping`` the update is halved (up to ``max_halvings`` times)
    whenever the candidate leaves the system domain or increases the error;
    exhausting the halvings raises StepTooLargeError.  Damping is a
    practical safeguard outside the certified smallness regime and is
    reported via ``halvings``.
    """
    eps_before = state.error_norm(norm_mode)
    p_x, p_y = rhs_components(state)
    xi_x, xi_y, xi_bar_y = solve_reduced(state, p_x, p_y)

    xi_grid = np.concatenate(
        [state._to_grid(xi_x), state._to_grid(xi_y)], axis=1
    )
    delta_grid = np.einsum("pij,pj->pi", state.M_grid, xi_grid)
    delta = grid_to_fourier(delta_grid, state.grid_shape, state.ext_trunc)
    delta, _ = delta.truncate_tail(1e-16)

    residual = linearized_residual(state, delta)

    # quadratically small terms the reduction drops, reported only
    E = state.frame_transport_matrix()
    C_sup = max_norm(np.matmul(state.M_inv_grid, E))
    w_sup = max_norm(
        np.einsum("pij,pj->pi", state.frame_correction, state.e_grid)
    )
    diagnostics = {
        "C_sup": C_sup,
        "w_sup": w_sup,
        "p_x_sup": max_norm(state._to_grid(p_x)),
        "p_y_sup": max_norm(state._to_grid(p_y)),
        "xi_x_sup": xi_x.sup_norm(),
        "xi_y_sup": xi_y.sup_norm(),
    }

    halvings = 0
    scale = 1.0
    while True:
        try:
            candidate, tail = _build_candidate(state, delta * scale)
            eps_after = candidate.error_norm(norm_mode)
            accept = eps_after <= eps_before or eps_before == 0.0
        except OutsideDomainError:
            accept = False
            candidate, tail, eps_after = None, 0.0, np.inf
        if accept or not damping:
            if candidate is None:
                raise StepTooLargeError("update leaves the system domain")
            break
        halvings += 1
        if halvings > max_halvings:
            raise StepTooLargeError(
                f"error grew from {eps_before:.3e} to {eps_after:.3e} "
                f"after {max_halvings} halvings"
            )
        scale *= 0.5

    return StepResult(
        new_state=candidate,
        delta=delta * scale,
        xi_x=xi_x,
        xi_y=xi_y,
        xi_bar_y=np.asarray(xi_bar_y),
        eps_before=eps_before,
        eps_after=eps_after,
        delta_sup=(delta * scale).sup_norm(),
        residual_linear=residual,
        tail_discarded=tail,
        halvings=halvings,
        diagnostics=diagnostics,
    )


def dense_collocation_delta(state: TorusState) -> FourierMap:
    """Solve the full linearized equation by dense collocation (oracle).

    Only sensible at small one-dimensional instances: builds the
    (d P) x (d P) collocation matrix of Delta -> A Delta - d_omega Delta
    on the minimal grid resolving the state's cutoff and solves in the
    least-squares sense (the operator has a near-kernel along DK).
    """
    if state.n != 1:
        raise ValueError("dense collocation oracle is one-dimensional only")
    N = state.periodic.trunc[0]
    P = 2 * N + 1
    d = state.d
    theta = (np.arange(P) / P)[:, None]

    K_vals = state.embed(theta)
    A = state.system.field_jacobian(K_vals)
    e = state.system.vector_field(K_vals) - state.embed_derivative_along_omega(theta)

    # spectral directional-derivative matrix on the P-point grid:
    # D[i, j] maps values at theta_j to the d_omega derivative at theta_i
    kvals = np.fft.fftfreq(P, d=1.0 / P)
    diag = 2j * np.pi * kvals * state.omega.omega[0]
    D = np.real(
        np.fft.ifft(diag[:, None] * np.fft.fft(np.eye(P), axis=0), axis=0)
    )

    big = np.zeros((d * P, d * P))
    for p in range(P):
        big[d * p : d * p + d, d * p : d * p + d] = A[p]
    big -= np.kron(D, np.eye(d))
    rhs = (-e).ravel()
    sol, *_ = np.linalg.lstsq(big, rhs, rcond=None)
    delta_vals = sol.reshape(P, d)
    return grid_to_fourier(delta_vals, (P,), (N,))
