"""Command-line front end: solve, verify, certify, sweep.

Exit codes: 0 success, 1 usage or configuration error, 2 not converged or
a verification check failed, 3 certificate not granted.  Log verbosity is
controlled by the KAMTORI_LOG environment variable (DEBUG/INFO/WARNING).
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .dynamics import IntegratorConfig, conjugacy_residual
from .errors import ConfigError, KamtoriError
from .solver import ConstantTracker, Schedule, certificate, quadratic_decay_check, run
from .storage import (
    ProblemConfig,
    load_torus,
    save_json,
    save_samples_csv,
    save_table_csv,
    save_torus,
)

log = logging.getLogger("kamtori")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILED = 2
EXIT_NOT_CERTIFIED = 3


def _setup_logging():
    level = os.environ.get("KAMTORI_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _tracker(cfg: ProblemConfig) -> ConstantTracker:
    return ConstantTracker(mode=cfg.cert_mode, c_user=cfg.cert_c)


def cmd_solve(args) -> int:
    try:
        cfg = ProblemConfig.load(args.config)
        initial = cfg.initial_state()
    except (ConfigError, KamtoriError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schedule = Schedule(cfg.rho_0, cfg.delta_0)
    try:
        report = run(
            initial,
            schedule,
            target=cfg.target,
            max_iter=cfg.max_iter,
            norm_mode=cfg.norm_mode,
            damping=cfg.damping,
            k_check=cfg.k_check,
        )
    except KamtoriError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    final = report.final_state
    decay = quadratic_decay_check(report)
    payload = report.to_dict()
    payload["quadratic_decay"] = decay
    payload["config"] = cfg.raw
    save_json(payload, out / "report.json")
    save_torus(final, out / "torus.json")
    save_samples_csv(final, out / "samples.csv")
    log.info("verdict=%s final_eps=%.3e", report.verdict, report.final_eps)
    print(f"{report.verdict}: final error {report.final_eps:.3e} "
          f"({len(report.iterations) - 1} steps), artifacts in {out}")
    return EXIT_OK if report.converged else EXIT_FAILED


def cmd_verify(args) -> int:
    try:
        cfg = ProblemConfig.load(args.config)
        state = load_torus(args.torus, cfg.system)
    except (ConfigError, KamtoriError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_path = Path(args.out) if args.out else Path(args.torus).parent / "verify.json"
    cfg_int = IntegratorConfig(method="rk4", step=min(1e-3, abs(args.horizon) / 100 or 1e-3))
    checks = {}

    eps = state.eps_sup
    checks["invariance_error"] = {"value": eps, "threshold": args.eps_tol,
                                  "ok": eps <= args.eps_tol}

    conj = conjugacy_residual(state, args.horizon, n_samples=args.samples,
                              cfg=cfg_int, seed=cfg.seed)
    checks["conjugacy"] = {"value": conj, "threshold": args.conj_tol,
                           "ok": conj <= args.conj_tol, "horizon": args.horizon,
                           "samples": args.samples}

    avg = state.error_average_residual()
    avg_tol = 1e-8 * max(eps, 1e-300)
    checks["projected_error_average"] = {
        "value": avg, "threshold": avg_tol, "ok": avg <= avg_tol,
    }

    jac_res, de_sup = state.jacobian_transport_residual()
    jac_tol = 1e-8 * (1.0 + de_sup)
    checks["jacobian_transport"] = {
        "value": jac_res, "threshold": jac_tol, "ok": jac_res <= jac_tol,
    }

    payload = {"torus": str(args.torus), "checks": checks,
               "ok": all(c["ok"] for c in checks.values())}
    save_json(payload, out_path)
    failing = [name for name, c in checks.items() if not c["ok"]]
    if failing:
        print(f"verification failed: {', '.join(failing)} (see {out_path})")
        return EXIT_FAILED
    print(f"verification passed ({out_path})")
    return EXIT_OK


def cmd_certify(args) -> int:
    try:
        cfg = ProblemConfig.load(args.config)
        state = load_torus(args.torus, cfg.system)
    except (ConfigError, KamtoriError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_path = Path(args.out) if args.out else Path(args.torus).parent / "certificate.json"
    schedule = Schedule(cfg.rho_0, cfg.delta_0)
    cert = certificate(state, schedule, _tracker(cfg), r=cfg.cert_r)
    save_json(cert, out_path)
    label = " (non-rigorous constants)" if cert["non_rigorous"] else ""
    print(f"{cert['verdict']}{label}: kappa={cert['kappa']:.4e} ({out_path})")
    return EXIT_OK if cert["verdict"] == "certified" else EXIT_NOT_CERTIFIED


def _set_by_path(data: dict, dotted: str, value):
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"sweep parameter {dotted!r} not present in config")
        node = node[k]
    leaf = keys[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"sweep parameter {dotted!r} not present in config")
    old = node[leaf]
    if isinstance(old, list) and not isinstance(value, list):
        node[leaf] = [value] * len(old)
    else:
        node[leaf] = value


def cmd_sweep(args) -> int:
    try:
        base = json.loads(Path(args.config).read_text())
        values = [float(v) for v in args.values.split(",") if v.strip() != ""]
        if not values:
            raise ConfigError("empty sweep value list")
    except (ConfigError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, value in enumerate(values):
        data = copy.deepcopy(base)
        row = {"value": repr(value)}
        try:
            _set_by_path(data, args.param, value)
            cfg = ProblemConfig(data, source=f"{args.config}[{args.param}={value}]")
            initial = cfg.initial_state()
            schedule = Schedule(cfg.rho_0, cfg.delta_0)
            report = run(initial, schedule, target=cfg.target,
                         max_iter=cfg.max_iter, norm_mode=cfg.norm_mode,
                         damping=cfg.damping, k_check=cfg.k_check)
            run_dir = out / f"run_{i:03d}"
            run_dir.mkdir(exist_ok=True)
            save_torus(report.final_state, run_dir / "torus.json")
            save_json(report.to_dict(), run_dir / "report.json")
            row.update({
                "eps_0": repr(report.iterations[0].eps),
                "iterations": len(report.iterations) - 1,
                "final_eps": repr(report.final_eps),
                "distance": repr(report.distance_total),
                "verdict": report.verdict,
            })
        except (ConfigError, KamtoriError) as exc:
            row.update({"eps_0": "", "iterations": "", "final_eps": "",
                        "distance": "", "verdict": f"error: {exc}"})
        rows.append(row)
    save_table_csv(rows, out / "sweep.csv")
    print(f"swept {args.param} over {len(values)} values, table in {out / 'sweep.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="kamtori",
        description="Compute and verify quasi-periodic invariant tori of "
                    "Poisson systems dz/dt = B(z) grad H(z).",
    )
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="run the quasi-Newton iteration")
    ps.add_argument("--config", required=True, help="problem configuration JSON")
    ps.add_argument("--out", required=True, help="output directory")
    ps.set_defaults(fn=cmd_solve)

    pv = sub.add_parser("verify", help="flow-based and identity checks on a torus file")
    pv.add_argument("--torus", required=True)
    pv.add_argument("--config", required=True)
    pv.add_argument("--horizon", type=float, default=5.0, metavar="T")
    pv.add_argument("--samples", type=int, default=32, metavar="N")
    pv.add_argument("--conj-tol", type=float, default=1e-8)
    pv.add_argument("--eps-tol", type=float, default=1e-10)
    pv.add_argument("--out", default=None, help="verify.json path")
    pv.set_defaults(fn=cmd_verify)

    pc = sub.add_parser("certify", help="evaluate the smallness certificate")
    pc.add_argument("--torus", required=True)
    pc.add_argument("--config", required=True)
    pc.add_argument("--out", default=None, help="certificate.json path")
    pc.set_defaults(fn=cmd_certify)

    pw = sub.add_parser("sweep", help="re-run the solver over a parameter range")
    pw.add_argument("--config", required=True)
    pw.add_argument("--param", required=True, help="dotted config path, e.g. system.params.eps")
    pw.add_argument("--values", required=True, help="comma-separated values")
    pw.add_argument("--out", required=True)
    pw.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except KamtoriError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
