"""Truncated real Fourier series on the torus and small-divisor solvers.

Maps f : T^n -> R^m are one-periodic in every variable and represented by
complex coefficients c_k on the centered mode box |k_j| <= N_j, so that

    f(theta) = sum_k c_k exp(2 pi i k . theta).

Real-valuedness is enforced as the Hermitian symmetry c_{-k} = conj(c_k)
after every transform.  With this periodicity convention the directional
derivative along omega multiplies mode k by 2 pi i (k . omega), and the
small-divisor (cohomological) equation d_omega v = h is solved mode by
mode by dividing by that factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.fft import fftn, ifftn

from . import kernels
from .errors import (
    NormOverflowError,
    NotSolvableError,
    ResonanceError,
    ResonantFrequencyError,
    TruncationError,
)

_REAL_TOL = 1e-12
_EXP_LIMIT = 700.0  # log of float64 overflow threshold


def _as_trunc(trunc) -> tuple[int, ...]:
    t = tuple(int(N) for N in np.atleast_1d(trunc))
    if any(N < 0 for N in t):
        raise ValueError("mode cutoffs must be nonnegative")
    return t


class FourierMap:
    """Truncated Fourier series of a periodic map T^n -> R^m.

    Parameters
    ----------
    coef : complex array, shape (m, 2*N_1+1, ..., 2*N_n+1)
        Mode coefficients in centered layout: axis j+1 index i corresponds
        to mode k_j = i - N_j.
    trunc : sequence of int
        Per-dimension cutoffs (N_1, ..., N_n).
    symmetrize : bool
        Enforce Hermitian symmetry by averaging with the conjugate of the
        reflected coefficients (default True).

    Instances are immutable; all operations return new maps.
    """

    __slots__ = ("coef", "trunc", "dim_domain", "dim_range")

    def __init__(self, coef, trunc, symmetrize: bool = True):
        trunc = _as_trunc(trunc)
        coef = np.asarray(coef, dtype=complex)
        expected = tuple(2 * N + 1 for N in trunc)
        if coef.ndim != 1 + len(trunc) or coef.shape[1:] != expected:
            raise ValueError(
                f"coefficient array shape {coef.shape} does not match cutoff {trunc}"
            )
        if symmetrize:
            coef = 0.5 * (coef + np.conj(coef[self._flip_index(len(trunc))]))
        coef.flags.writeable = False
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "trunc", trunc)
        object.__setattr__(self, "dim_domain", len(trunc))
        object.__setattr__(self, "dim_range", coef.shape[0])

    def __setattr__(self, name, value):
        raise AttributeError("FourierMap is immutable")

    # -- constructors ------------------------------------------------------

    @staticmethod
    def _flip_index(n):
        return (slice(None),) + (slice(None, None, -1),) * n

    @classmethod
    def zeros(cls, dim_range: int, trunc) -> "FourierMap":
        trunc = _as_trunc(trunc)
        shape = (dim_range,) + tuple(2 * N + 1 for N in trunc)
        return cls(np.zeros(shape, dtype=complex), trunc, symmetrize=False)

    @classmethod
    def constant(cls, values, trunc) -> "FourierMap":
        values = np.atleast_1d(np.asarray(values, dtype=float))
        f = cls.zeros(values.shape[0], trunc)
        coef = f.coef.copy()
        coef[(slice(None),) + tuple(N for N in f.trunc)] = values
        return cls(coef, f.trunc, symmetrize=False)

    @classmethod
    def from_samples(cls, samples, trunc) -> "FourierMap":
        """Build a map from values on a regular product grid of T^n.

        ``samples`` has shape (m, G_1, ..., G_n) with grid values at
        theta_i = i/G per dimension.  Requires G_j >= 2*N_j + 1 so every
        retained mode is resolved.
        """
        trunc = _as_trunc(trunc)
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == len(trunc):
            samples = samples[None, :]
        grid = samples.shape[1:]
        if len(grid) != len(trunc):
            raise ValueError("sample array rank does not match cutoff length")
        for G, N in zip(grid, trunc):
            if G < 2 * N + 1:
                raise TruncationError(
                    f"grid size {G} cannot resolve modes up to {N} "
                    f"(need at least {2 * N + 1} points)"
                )
        axes = tuple(range(1, samples.ndim))
        c_full = fftn(samples, axes=axes) / np.prod(grid)
        idx = [np.arange(-N, N + 1) % G for N, G in zip(trunc, grid)]
        coef = c_full[np.ix_(np.arange(samples.shape[0]), *idx)]
        return cls(coef, trunc, symmetrize=True)

    # -- mode bookkeeping --------------------------------------------------

    def _kaxis(self, j: int) -> np.ndarray:
        N = self.trunc[j]
        return np.arange(-N, N + 1, dtype=float)

    def _kbroadcast(self, j: int) -> np.ndarray:
        shape = [1] * (self.dim_domain + 1)
        shape[j + 1] = 2 * self.trunc[j] + 1
        return self._kaxis(j).reshape(shape)

    def k_dot(self, vector) -> np.ndarray:
        """Array of k . vector over the mode box (without the range axis)."""
        vector = np.asarray(vector, dtype=float)
        out = np.zeros(tuple(2 * N + 1 for N in self.trunc))
        for j in range(self.dim_domain):
            out = out + vector[j] * self._kbroadcast(j)[0]
        return out

    def k_abs_sum(self) -> np.ndarray:
        out = np.zeros(tuple(2 * N + 1 for N in self.trunc))
        for j in range(self.dim_domain):
            out = out + np.abs(self._kbroadcast(j)[0])
        return out

    def mode(self, k) -> np.ndarray:
        """Coefficient vector at lattice mode k (complex, length m)."""
        k = tuple(int(x) for x in np.atleast_1d(k))
        idx = tuple(ki + N for ki, N in zip(k, self.trunc))
        for i, N in zip(idx, (2 * n + 1 for n in self.trunc)):
            if not 0 <= i < N:
                return np.zeros(self.dim_range, dtype=complex)
        return self.coef[(slice(None),) + idx]

    def default_grid(self, dealias: int = 2) -> tuple[int, ...]:
        """Grid that de-aliases products of order ``dealias``."""
        return tuple(max(dealias * (2 * N + 1), 2 * N + 1) for N in self.trunc)

    # -- transforms --------------------------------------------------------

    def to_samples(self, grid=None) -> np.ndarray:
        """Evaluate on a regular product grid; returns (m, G_1, ..., G_n)."""
        if grid is None:
            grid = self.default_grid()
        grid = tuple(int(G) for G in np.atleast_1d(grid))
        for G, N in zip(grid, self.trunc):
            if G < 2 * N + 1:
                raise TruncationError(
                    f"evaluation grid {G} would alias modes up to {N}"
                )
        full = np.zeros((self.dim_range,) + grid, dtype=complex)
        idx = [np.arange(-N, N + 1) % G for N, G in zip(self.trunc, grid)]
        full[np.ix_(np.arange(self.dim_range), *idx)] = self.coef
        axes = tuple(range(1, full.ndim))
        vals = ifftn(full, axes=axes) * np.prod(grid)
        return np.ascontiguousarray(vals.real)

    def evaluate(self, theta) -> np.ndarray:
        """Evaluate at arbitrary points theta of shape (P, n) -> (P, m)."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        kvecs = np.stack(
            [g.ravel() for g in np.meshgrid(*[self._kaxis(j) for j in range(self.dim_domain)], indexing="ij")],
            axis=1,
        )
        cflat = self.coef.reshape(self.dim_range, -1).T  # (M, m)
        return kernels.eval_modes(
            np.ascontiguousarray(cflat.real),
            np.ascontiguousarray(cflat.imag),
            np.ascontiguousarray(kvecs),
            np.ascontiguousarray(theta),
        )

    # -- calculus ----------------------------------------------------------

    def partial_derivative(self, j: int) -> "FourierMap":
        """Spectral d/d theta_j: mode k scaled by 2 pi i k_j."""
        factor = 2j * np.pi * self._kbroadcast(j)
        return FourierMap(self.coef * factor, self.trunc, symmetrize=False)

    def directional_derivative(self, omega) -> "FourierMap":
        """Spectral d_omega = sum_j omega_j d/d theta_j."""
        omega = np.asarray(getattr(omega, "omega", omega), dtype=float)
        factor = 2j * np.pi * self.k_dot(omega)[None, ...]
        return FourierMap(self.coef * factor, self.trunc, symmetrize=False)

    def average(self) -> np.ndarray:
        """Mean over the torus, i.e. the k = 0 coefficient (real part)."""
        c0 = self.coef[(slice(None),) + tuple(N for N in self.trunc)]
        return c0.real.copy()

    def remove_average(self) -> "FourierMap":
        coef = self.coef.copy()
        coef[(slice(None),) + tuple(N for N in self.trunc)] = 0.0
        return FourierMap(coef, self.trunc, symmetrize=False)

    def shift(self, tau) -> "FourierMap":
        """Translate the argument: returns theta -> f(theta + tau)."""
        tau = np.asarray(tau, dtype=float)
        phase = np.exp(2j * np.pi * self.k_dot(tau))[None, ...]
        return FourierMap(self.coef * phase, self.trunc, symmetrize=False)

    # -- norms ---------------------------------------------------------------

    def strip_norm(self, rho: float) -> float:
        """Strip-weighted coefficient norm sum_k max_i |c_{k,i}| e^{2 pi rho |k|_1}.

        An upper bound for the sup of |f| over the complex strip of half
        width rho; coincides with the plain coefficient l1 norm at rho = 0.
        """
        if rho < 0:
            raise ValueError("strip width must be nonnegative")
        kabs = self.k_abs_sum()
        arg = 2.0 * np.pi * rho * kabs.max() if kabs.size else 0.0
        if arg > _EXP_LIMIT:
            raise NormOverflowError(
                f"exp(2 pi rho |k|) overflows at rho={rho}; shrink the strip "
                "or lower the mode cutoff"
            )
        weights = np.exp(2.0 * np.pi * rho * kabs)
        mags = np.abs(self.coef).max(axis=0)
        return float((mags * weights).sum())

    def sup_norm(self, grid=None) -> float:
        """Max absolute value on a (de-aliased) real sample grid."""
        vals = self.to_samples(grid)
        return float(np.abs(vals).max()) if vals.size else 0.0

    # -- tail handling -----------------------------------------------------

    def truncate_tail(self, threshold: float) -> tuple["FourierMap", float]:
        """Zero modes with max_i |c_{k,i}| below threshold * max_k max_i |c_{k,i}|.

        Returns the cleaned map and the discarded coefficient mass
        (l1 sum of the dropped magnitudes).
        """
        if threshold < 0:
            raise ValueError("threshold must be nonnegative")
        mags = np.abs(self.coef).max(axis=0)
        peak = mags.max() if mags.size else 0.0
        drop = mags < threshold * peak
        coef = self.coef.copy()
        coef[:, drop] = 0.0
        discarded = float(np.abs(self.coef).max(axis=0)[drop].sum())
        return FourierMap(coef, self.trunc, symmetrize=False), discarded

    def pad_to(self, trunc) -> "FourierMap":
        """Embed into a larger mode box (new modes zero)."""
        trunc = _as_trunc(trunc)
        if trunc == self.trunc:
            return self
        if any(a < b for a, b in zip(trunc, self.trunc)):
            raise ValueError("pad_to only grows the mode box; use truncated()")
        out = FourierMap.zeros(self.dim_range, trunc)
        coef = out.coef.copy()
        sl = tuple(
            slice(Nb - Na, Nb + Na + 1) for Na, Nb in zip(self.trunc, trunc)
        )
        coef[(slice(None),) + sl] = self.coef
        return FourierMap(coef, trunc, symmetrize=False)

    def truncated(self, trunc) -> tuple["FourierMap", float]:
        """Restrict to a smaller mode box; returns (map, discarded mass)."""
        trunc = _as_trunc(trunc)
        if any(a > b for a, b in zip(trunc, self.trunc)):
            raise ValueError("truncated only shrinks the mode box; use pad_to()")
        sl = tuple(
            slice(Nb - Na, Nb + Na + 1) for Na, Nb in zip(trunc, self.trunc)
        )
        coef = self.coef[(slice(None),) + sl].copy()
        kept = FourierMap(coef, trunc, symmetrize=False)
        discarded = float(
            np.abs(self.coef).max(axis=0).sum() - np.abs(coef).max(axis=0).sum()
        )
        return kept, max(discarded, 0.0)

    # -- algebra -------------------------------------------------------------

    def _binary(self, other: "FourierMap", op):
        if self.dim_domain != other.dim_domain or self.dim_range != other.dim_range:
            raise ValueError("operand dimensions do not match")
        trunc = tuple(max(a, b) for a, b in zip(self.trunc, other.trunc))
        a = self.pad_to(trunc)
        b = other.pad_to(trunc)
        return FourierMap(op(a.coef, b.coef), trunc, symmetrize=False)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, scalar):
        return FourierMap(self.coef * float(scalar), self.trunc, symmetrize=False)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def component(self, i: int) -> "FourierMap":
        return FourierMap(self.coef[i : i + 1], self.trunc, symmetrize=False)

    def __repr__(self):
        return (
            f"FourierMap(T^{self.dim_domain} -> R^{self.dim_range}, "
            f"trunc={self.trunc})"
        )


# ---------------------------------------------------------------------------
# frequencies and small divisors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Frequency:
    """Rotation vector with Diophantine parameters (gamma, sigma)."""

    omega: np.ndarray
    gamma: float
    sigma: float
    resonance_floor: float = field(default=1e-13)

    def __post_init__(self):
        object.__setattr__(self, "omega", np.atleast_1d(np.asarray(self.omega, dtype=float)))
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.sigma < 1:
            raise ValueError("sigma must be at least 1")

    @property
    def dim(self) -> int:
        return self.omega.shape[0]

    def margin(self, k_check: int):
        return diophantine_margin(self.omega, self.sigma, k_check)

    def certified(self, k_check: int) -> bool:
        """True when gamma is no larger than the measured margin up to k_check."""
        gamma_best, _ = self.margin(k_check)
        return self.gamma <= gamma_best


def _lattice_box(n: int, radius: int):
    """All k in Z^n with 0 < |k|_1 <= radius."""
    axes = [np.arange(-radius, radius + 1)] * n
    K = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    norms = np.abs(K).sum(axis=1)
    keep = (norms > 0) & (norms <= radius)
    return K[keep], norms[keep]


def diophantine_margin(omega, sigma: float, k_check: int):
    """Worst Diophantine constant over modes with 0 < |k|_1 <= k_check.

    Returns (gamma_best, k_worst) where gamma_best minimizes
    |k . omega| |k|_1^sigma.  Raises ResonantFrequencyError if some
    k . omega vanishes exactly within the window.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if k_check < 1:
        raise ValueError("k_check must be at least 1")
    K, norms = _lattice_box(omega.shape[0], int(k_check))
    vals = np.abs(K @ omega)
    zero = vals == 0.0
    if zero.any():
        raise ResonantFrequencyError(K[np.argmax(zero)])
    products = vals * norms.astype(float) ** sigma
    i = int(np.argmin(products))
    k_worst = K[i]
    first_nonzero = k_worst[np.argmax(k_worst != 0)]
    if first_nonzero < 0:  # the pair (k, -k) ties; report the positive one
        k_worst = -k_worst
    return float(products[i]), tuple(int(x) for x in k_worst)


def russmann_mu(n: int, sigma: float) -> float:
    """Small-divisor constant 2^(n/2-sigma-1) 3^(n/2+1) sigma^(1/2) pi Gamma(2 sigma)^(1/2).

    Quoted for the 2-pi-periodic torus convention; see
    ``russmann_bound_factor`` for the factor used with 1-periodic maps.
    """
    if sigma < 1:
        raise ValueError("sigma must be at least 1")
    return (
        2.0 ** (n / 2.0 - sigma - 1.0)
        * 3.0 ** (n / 2.0 + 1.0)
        * math.sqrt(sigma)
        * math.pi
        * math.sqrt(math.gamma(2.0 * sigma))
    )


def russmann_bound_factor(n: int, sigma: float, gamma: float, delta: float) -> float:
    """Upper-bound factor mu' gamma^-1 delta^-sigma for the 1-periodic torus.

    The constant mu is stated for maps of period 2 pi, where divisors are
    i(k.omega); for 1-periodic maps the divisors are 2 pi i (k.omega) and
    the strip rescales by 2 pi, which multiplies the factor by
    (2 pi)^-(sigma+1).
    """
    mu = russmann_mu(n, sigma)
    return mu * (2.0 * np.pi) ** (-(sigma + 1.0)) / gamma / delta**sigma


def cohomological_solve(
    h: FourierMap,
    omega,
    *,
    zero_average_rtol: float = 1e-10,
    resonance_floor: float | None = None,
) -> FourierMap:
    """Solve d_omega v = h with <v> = 0 by spectral division.

    Requires |<h>| <= zero_average_rtol * ||h||_0 componentwise; modes with
    |k . omega| below the resonance floor raise ResonanceError naming the
    offending k.  On the stored modes the solution satisfies
    d_omega v = h - <h> exactly up to floating point.
    """
    freq = omega if isinstance(omega, Frequency) else None
    omega_vec = np.atleast_1d(np.asarray(getattr(omega, "omega", omega), dtype=float))
    if resonance_floor is None:
        resonance_floor = freq.resonance_floor if freq is not None else 1e-13
    scale = float(np.abs(h.coef).sum())
    avg = h.average()
    if np.abs(avg).max() > zero_average_rtol * max(scale, 1e-300):
        raise NotSolvableError(
            f"right-hand side has nonzero average {avg} "
            f"(tolerance {zero_average_rtol:.1e} relative)"
        )
    kdot = h.k_dot(omega_vec)
    center = tuple(N for N in h.trunc)
    small = np.abs(kdot) < resonance_floor
    small[center] = False
    if small.any():
        # restrict to modes actually carrying coefficients
        carrying = small & (np.abs(h.coef).max(axis=0) > 0)
        offending = carrying if carrying.any() else small
        flat = int(np.argmax(offending))
        k_idx = np.unravel_index(flat, offending.shape)
        k = tuple(int(i - N) for i, N in zip(k_idx, h.trunc))
        raise ResonanceError(k, np.abs(kdot)[k_idx], resonance_floor)
    divisor = 2j * np.pi * kdot
    divisor[center] = 1.0  # placeholder; mode 0 zeroed below
    coef = h.coef / divisor[None, ...]
    coef[(slice(None),) + center] = 0.0
    return FourierMap(coef, h.trunc, symmetrize=False)
