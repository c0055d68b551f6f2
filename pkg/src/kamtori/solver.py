"""Outer iteration with shrinking analyticity strips, plus the smallness
certificate that turns a small initial error into an existence statement.

The loop is plain: repeat quasi-Newton steps, monitor the error, the
non-degeneracy of each iterate, and the drift of the tracked norms, and
stop on convergence, divergence, or failure.  The strip schedule
rho_m = rho_0 - 6 delta_0 (1 - 2^-m) with delta_m = delta_0 2^-m exists for
the certificate arithmetic; in the default "practical" norm mode the
stopping error is the grid sup norm, while "strip" mode evaluates the
shrinking strip-weighted norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateMetricError,
    KamtoriError,
    NoTwistError,
    StepTooLargeError,
)
from .fourier import russmann_mu
from .geometry import TorusState
from .newton import newton_step

NOISE_FLOOR = 1e-13


@dataclass(frozen=True)
class Schedule:
    """Strip-shrinking schedule (rho_0, delta_0) with delta halving each step."""

    rho_0: float
    delta_0: float

    def __post_init__(self):
        if self.rho_0 < 0:
            raise ValueError("rho_0 must be nonnegative")
        limit = min(1.0, self.rho_0 / 12.0)
        if not 0 < self.delta_0 <= limit:
            raise ValueError(
                f"delta_0 must satisfy 0 < delta_0 <= min(1, rho_0/12) = {limit}"
            )

    @classmethod
    def default(cls, rho_0: float) -> "Schedule":
        return cls(rho_0, rho_0 / 12.0)

    def delta(self, m: int) -> float:
        return self.delta_0 * 2.0 ** (-m)

    def rho(self, m: int) -> float:
        return self.rho_0 - 6.0 * self.delta_0 * (1.0 - 2.0 ** (-m))

    @property
    def rho_inf(self) -> float:
        return self.rho_0 - 6.0 * self.delta_0


@dataclass
class IterationRecord:
    m: int
    eps: float
    eps_sup: float
    delta_sup: float = 0.0
    distance_from_start: float = 0.0
    residual_linear: float = 0.0
    L_sup: float = 0.0
    DK_sup: float = 0.0
    N_sup: float = 0.0
    S0_inv_sup: float = 0.0
    nd_ok: bool = True
    halvings: int = 0
    tail_discarded: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class KamReport:
    verdict: str
    iterations: list = field(default_factory=list)
    final_eps: float = math.inf
    final_eps_sup: float = math.inf
    norm_mode: str = "sup"
    target: float = 0.0
    distance_total: float = 0.0
    failure: str = ""
    schedule: Schedule | None = None
    gamma: float = 0.0
    sigma: float = 1.0

    @property
    def converged(self) -> bool:
        return self.verdict == "converged"

    def eps_sequence(self) -> list[float]:
        return [r.eps for r in self.iterations]

    def to_dict(self) -> dict:
        out = {
            "verdict": self.verdict,
            "final_eps": self.final_eps,
            "final_eps_sup": self.final_eps_sup,
            "norm_mode": self.norm_mode,
            "target": self.target,
            "distance_total": self.distance_total,
            "failure": self.failure,
            "gamma": self.gamma,
            "sigma": self.sigma,
            "iterations": [r.to_dict() for r in self.iterations],
        }
        if self.schedule is not None:
            out["schedule"] = {
                "rho_0": self.schedule.rho_0,
                "delta_0": self.schedule.delta_0,
                "rho_inf": self.schedule.rho_inf,
            }
        return out


def run(
    initial: TorusState,
    schedule: Schedule,
    target: float = 1e-12,
    max_iter: int = 30,
    norm_mode: str = "sup",
    damping: bool = True,
    k_check: int = 30,
    keep_states: bool = True,
) -> KamReport:
    """Iterate quasi-Newton steps until the error target or failure.

    ``target`` is relative to max(1, initial vector-field size).  Every
    iterate is re-validated for non-degeneracy and domain containment; the
    run aborts after two consecutive error increases (divergence), on
    exhausted step damping, or on a non-degeneracy failure.
    """
    omega = initial.omega
    if not omega.certified(k_check):
        gamma_best, k_worst = omega.margin(k_check)
        raise KamtoriError(
            f"frequency not certified: gamma={omega.gamma} exceeds measured "
            f"margin {gamma_best:.3e} attained at k={k_worst}"
        )
    nd0 = initial.nondegeneracy_report()
    if not nd0["ok"]:
        raise KamtoriError(f"initial torus fails non-degeneracy: {nd0}")

    scale = max(1.0, float(np.abs(initial.vector_field_grid).max()))
    tol_abs = target * scale

    def measure(state: TorusState, m: int) -> float:
        if norm_mode == "sup":
            return state.eps_sup
        return state.eps_strip(schedule.rho(m))

    report = KamReport(
        verdict="max-iter",
        norm_mode=norm_mode,
        target=tol_abs,
        schedule=schedule,
        gamma=omega.gamma,
        sigma=omega.sigma,
    )
    state = initial
    increases = 0
    states = [state]
    for m in range(max_iter + 1):
        eps = measure(state, m)
        rec = IterationRecord(
            m=m,
            eps=eps,
            eps_sup=state.eps_sup,
            distance_from_start=state.distance_to(initial),
            L_sup=state.L_sup,
            DK_sup=state.DK_sup,
            N_sup=state.N_sup,
        )
        nd = state.nondegeneracy_report()
        rec.nd_ok = nd["ok"]
        if nd["ok"]:
            rec.S0_inv_sup = nd.get("S0_avg_inv_norm", 0.0)
        report.iterations.append(rec)
        if not nd["ok"]:
            report.verdict = "nd-failure"
            report.failure = f"non-degeneracy lost at iteration {m}: {nd}"
            break
        if eps <= tol_abs:
            report.verdict = "converged"
            break
        if m == max_iter:
            break
        try:
            step = newton_step(state, damping=damping, norm_mode=norm_mode)
        except (StepTooLargeError, DegenerateMetricError, NoTwistError) as exc:
            report.verdict = "step-failure"
            report.failure = str(exc)
            break
        rec.delta_sup = step.delta_sup
        rec.residual_linear = step.residual_linear
        rec.halvings = step.halvings
        rec.tail_discarded = step.tail_discarded
        if step.eps_after > eps and eps > tol_abs:
            increases += 1
            if increases >= 2:
                report.verdict = "diverged"
                report.failure = "error grew on two consecutive iterations"
                state = step.new_state
                states.append(state)
                break
        else:
            increases = 0
        state = step.new_state
        states.append(state)

    report.final_eps = report.iterations[-1].eps
    report.final_eps_sup = states[-1].eps_sup
    report.distance_total = states[-1].distance_to(initial)
    if keep_states:
        report.initial_state = initial
        report.final_state = states[-1]
    return report


def quadratic_decay_check(report: KamReport, factor: float = 8.0) -> dict:
    """Fit the one-step quadratic-decay constant and test its stability.

    For consecutive recorded errors above the noise floor computes
    C_m = eps_m * gamma^4 * delta_{m-1}^{4 sigma} / eps_{m-1}^2 and checks
    the fitted values stay within a multiplicative band of ``factor``.
    """
    eps = report.eps_sequence()
    sched = report.schedule
    gamma, sigma = report.gamma, report.sigma
    usable = []
    for m in range(1, len(eps)):
        if eps[m - 1] > NOISE_FLOOR and eps[m] > NOISE_FLOOR:
            c_hat = eps[m] * gamma**4 * sched.delta(m - 1) ** (4 * sigma) / eps[m - 1] ** 2
            usable.append((m, c_hat))
    if len(eps) < 3 or not usable:
        return {"ok": False, "reason": "insufficient data", "fitted": usable}
    values = [c for _, c in usable]
    spread = max(values) / min(values) if min(values) > 0 else math.inf
    return {
        "ok": spread <= factor,
        "fitted": usable,
        "spread": spread,
        "band": factor,
        "excluded_below_floor": len(eps) - 1 - len(usable),
    }


def error_cascade_check(report: KamReport, c: float) -> dict:
    """Check eps_j <= kappa^(2^j - 1) 2^(-4 sigma j) eps_0 for the recorded run."""
    eps = report.eps_sequence()
    if not eps:
        return {"ok": False, "reason": "empty run"}
    sched = report.schedule
    gamma, sigma = report.gamma, report.sigma
    kappa = 2.0 ** (4 * sigma) * c * gamma**-4 * sched.delta_0 ** (-4 * sigma) * eps[0]
    checks = []
    for j in range(1, len(eps)):
        bound = kappa ** (2**j - 1) * 2.0 ** (-4 * sigma * j) * eps[0]
        checks.append(bool(eps[j] <= bound + NOISE_FLOOR))
    return {"ok": all(checks), "kappa": kappa, "per_iteration": checks}


def drift_budget_check(report: KamReport) -> dict:
    """Check the recorded norm drifts against beta from the schedule.

    The uniform-constant mechanism keeps ||DK_m||, ||N_m|| and |<S0_m>^-1|
    within an additive budget beta of their initial values.
    """
    sched = report.schedule
    gamma, sigma = report.gamma, report.sigma
    beta = (
        gamma**2
        * sched.delta_0 ** (2 * sigma - 1)
        * 2.0 ** (-(4 * sigma + 1))
        * (1 + 2.0 ** (4 * sigma - 1))
    )
    rows = report.iterations
    if not rows:
        return {"ok": False, "reason": "empty run"}
    d0, n0, s0 = rows[0].DK_sup, rows[0].N_sup, rows[0].S0_inv_sup
    ok = all(
        r.DK_sup <= d0 + beta + 1e-12
        and r.N_sup <= n0 + beta + 1e-12
        and r.S0_inv_sup <= s0 + beta + 1e-12
        for r in rows
    )
    return {"ok": ok, "beta": beta, "d0": d0, "nu0": n0, "s0": s0}


def geometric_tail_lemma(j_max: int = 20) -> bool:
    """Direct summation check of 2^(j-1) sum_{s=1}^{j-1} s 2^-s <= 2^j - j - 1."""
    for j in range(2, j_max + 1):
        lhs = 2.0 ** (j - 1) * sum(s * 2.0**-s for s in range(1, j))
        if lhs > 2.0**j - j - 1 + 1e-9:
            return False
    return True


# ---------------------------------------------------------------------------
# certificate
# ---------------------------------------------------------------------------

@dataclass
class ConstantTracker:
    """Source of the composite constant c entering the certificate.

    ``user`` mode takes c verbatim; ``heuristic`` mode composes the
    explicit ingredients available in closed form -- the bound
    ||A|| <= 2 ||B||_C1 ||H||_C2, the torsion bound
    2n(16n^2+5)(||N||+1)^3(||DK||+1)^4 ||B||_C1^2 ||H||_C2, the
    small-divisor constant mu, the curvature bound 4 ||B||_C2 ||H||_C3,
    and frame prefactors of the form (||DK||+1)(||N||+1)(||B||+1) -- and
    must be treated as non-rigorous (the exact polynomial dependence of c
    is not available in closed form).
    """

    mode: str = "heuristic"
    c_user: float = 1.0

    def composite(self, state: TorusState, schedule: Schedule) -> dict:
        gamma = state.omega.gamma
        sigma = state.omega.sigma
        n = state.n
        beta = (
            gamma**2
            * schedule.delta_0 ** (2 * sigma - 1)
            * 2.0 ** (-(4 * sigma + 1))
            * (1 + 2.0 ** (4 * sigma - 1))
        )
        if self.mode == "user":
            return {"c": float(self.c_user), "mode": "user", "beta": beta}
        nb = state.system.norm_bounds
        B0 = nb.get("B_C0", 1.0)
        B1 = nb.get("B_C1", 1.0)
        B2 = nb.get("B_C2", 1.0)
        Binv = nb.get("Binv_C0", 1.0)
        H2 = nb.get("H_C2", 1.0)
        H3 = nb.get("H_C3", 1.0)
        d = state.DK_sup + beta
        nu = state.N_sup + beta
        s = state.S0_avg_inv_sup + beta
        A_bound = 2.0 * B1 * H2
        S0_bound = (
            2 * n * (16 * n**2 + 5) * (nu + 1) ** 3 * (d + 1) ** 4 * B1**2 * H2
        )
        mu = russmann_mu(n, sigma)
        curvature = 4.0 * B2 * H3
        prefactor = (d + 1) * (nu + 1) * (B0 + 1)
        c = max(1.0, mu) * (1 + A_bound) * (1 + S0_bound) * (1 + s) * (
            1 + Binv
        ) * prefactor**2 * (1 + curvature)
        return {
            "c": float(c),
            "mode": "heuristic",
            "beta": beta,
            "A_bound": A_bound,
            "S0_bound": S0_bound,
            "mu": mu,
            "curvature_bound": curvature,
            "prefactor": prefactor,
            "non_rigorous": True,
        }


def certificate(
    initial: TorusState,
    schedule: Schedule,
    tracker: ConstantTracker,
    r: float,
    eps_0: float | None = None,
) -> dict:
    """Evaluate the a-posteriori smallness conditions on the initial error.

    Computes kappa = 2^(4 sigma) c gamma^-4 delta_0^(-4 sigma) eps_0, the
    two conditions C gamma^-4 delta_0^(-4 sigma) eps_0 <= 1/2 and
    C gamma^-2 delta_0^(-2 sigma) eps_0 < r with C = (1 + 2^(4 sigma - 1)) c,
    and the predicted distance bound
    c gamma^-2 delta_0^(-2 sigma) eps_0 (1 + kappa 2^(4 sigma)/(2^(2 sigma)-1)).
    The verdict is certified exactly when kappa <= 1/2 and both conditions
    hold; in heuristic mode the verdict carries a non-rigorous label.
    """
    gamma = initial.omega.gamma
    sigma = initial.omega.sigma
    comp = tracker.composite(initial, schedule)
    c = comp["c"]
    if eps_0 is None:
        eps_0 = initial.eps_strip(schedule.rho_0)
    d0 = schedule.delta_0
    kappa = 2.0 ** (4 * sigma) * c * gamma**-4 * d0 ** (-4 * sigma) * eps_0
    C = (1 + 2.0 ** (4 * sigma - 1)) * c
    cond_small = C * gamma**-4 * d0 ** (-4 * sigma) * eps_0
    cond_radius = C * gamma**-2 * d0 ** (-2 * sigma) * eps_0
    distance_bound = (
        c
        * gamma**-2
        * d0 ** (-2 * sigma)
        * eps_0
        * (1 + kappa * 2.0 ** (4 * sigma) / (2.0 ** (2 * sigma) - 1))
    )
    ok = (kappa <= 0.5) and (cond_small <= 0.5) and (cond_radius < r)
    verdict = "certified" if ok else "not-certified"
    out = {
        "verdict": verdict,
        "non_rigorous": comp.get("mode") == "heuristic",
        "kappa": kappa,
        "kappa_ok": kappa <= 0.5,
        "smallness_lhs": cond_small,
        "smallness_ok": cond_small <= 0.5,
        "radius_lhs": cond_radius,
        "radius_ok": cond_radius < r,
        "r": r,
        "C": C,
        "c": c,
        "gamma": gamma,
        "sigma": sigma,
        "delta_0": d0,
        "rho_0": schedule.rho_0,
        "rho_inf": schedule.rho_inf,
        "eps_0": eps_0,
        "distance_bound": distance_bound,
        "tracker": comp,
    }
    if sigma <= initial.n - 1:
        out["sigma_warning"] = (
            f"sigma = {sigma} is not above n - 1 = {initial.n - 1}; the "
            "existence statement requires sigma > n - 1"
        )
    return out


def distance_check(report: KamReport, tracker: ConstantTracker) -> dict:
    """Compare the measured |K_final - K_0| against the predicted bound."""
    if not hasattr(report, "initial_state"):
        raise KamtoriError("run() must keep states for the distance check")
    initial = report.initial_state
    cert = certificate(
        initial, report.schedule, tracker, r=math.inf,
        eps_0=report.iterations[0].eps,
    )
    measured = report.distance_total
    bound = cert["distance_bound"]
    ratio = measured / bound if bound > 0 else (0.0 if measured == 0 else math.inf)
    out = {
        "measured": measured,
        "predicted_bound": bound,
        "ratio": ratio,
        "mode": tracker.mode,
    }
    if tracker.mode == "user":
        out["ok"] = measured <= bound
    return out
