"""Command-line front end: ``dyngame {solve,verify,compare,list-problems}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import oracle
from .backward import ddp_backward
from .derivatives import differentiate_trajectory
from .model import Trajectory, rollout, total_cost
from .problems import CATALOG, build, random_lq_game, random_smooth_game
from .solver import (
    SolveOptions,
    SolveReport,
    ddp_forward,
    solve,
    stationarity_residual,
    take_step,
)

logger = logging.getLogger("dyngame")

FAULTS = ("none", "ddp-correction-sign")


@dataclasses.dataclass
class RunConfig:
    problem: str = "owner-dog"
    method: str = "newton"
    lam: float | None = None
    max_iters: int = 100
    residual_tol: float = 1e-9
    step_tol: float = 1e-12
    seed: int = 0
    overrides: dict[str, Any] = dataclasses.field(default_factory=dict)
    out: str = "dyngame-out"
    value_update: str = "open_loop"

    def methods(self) -> list[str]:
        return ["newton", "ddp"] if self.method == "both" else [self.method]

    def resolved_lam(self) -> float:
        if self.lam is not None:
            return float(self.lam)
        return CATALOG[self.problem].lam if self.problem in CATALOG else 0.0

    def options(self, method: str, **extra: Any) -> SolveOptions:
        return SolveOptions(
            method=method,
            lam=self.resolved_lam(),
            max_iters=self.max_iters,
            residual_tol=self.residual_tol,
            step_tol=self.step_tol,
            value_update=self.value_update,
            **extra,
        )


CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)} | {"lambda"}


class ConfigError(ValueError):
    pass


def load_config(path: str) -> dict[str, Any]:
    """Read a flat JSON config; unknown keys are rejected."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "lambda" in data:
        data["lam"] = data.pop("lambda")
    return data


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


# --------------------------------------------------------------------------
# deterministic output


def _fmt(obj: Any) -> str:
    """JSON text with every float printed at 17 significant digits."""
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return format(x, ".17g")
        return json.dumps(str(x))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _fmt(obj.tolist())
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_trajectory_csv(path: Path, traj: Trajectory) -> None:
    nx = traj.states.shape[1]
    nu = traj.controls.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + [f"x_{i}" for i in range(nx)] + [f"u_{j}" for j in range(nu)])
        for k, x in enumerate(traj.states):
            u = [format(v, ".17g") for v in traj.controls[k]] if k < traj.horizon else [""] * nu
            w.writerow([k] + [format(v, ".17g") for v in x] + u)


def write_iterations(path: Path, report: SolveReport) -> None:
    with path.open("w") as fh:
        for rec in report.records:
            fh.write(
                _fmt(
                    {
                        "iter": rec.iteration,
                        "residual_inf": rec.residual_inf,
                        "step_inf": rec.step_inf,
                        "costs": rec.costs,
                        "reg_events": rec.regularized_stages,
                    }
                )
                + "\n"
            )


def summarize(cfg: RunConfig, method: str, problem_name: str, report: SolveReport, initial_costs) -> dict:
    return {
        "problem": problem_name,
        "method": method,
        "lambda": cfg.resolved_lam(),
        "value_update": cfg.value_update,
        "seed": cfg.seed,
        "reason": report.reason,
        "iterations": report.iterations,
        "residual_inf": report.residual.inf_norm,
        "initial_costs": initial_costs,
        "final_costs": total_cost_of(report),
    }


def total_cost_of(report: SolveReport):
    return report.records[-1].costs if report.records else None


def _out_dir(cfg: RunConfig, method: str) -> Path:
    d = Path(cfg.out) / method
    d.mkdir(parents=True, exist_ok=True)
    return d


def _build(cfg: RunConfig):
    horizon = cfg.overrides.get("horizon")
    overrides = {k: v for k, v in cfg.overrides.items() if k != "horizon"}
    return build(cfg.problem, seed=cfg.seed, horizon=horizon, overrides=overrides)


# --------------------------------------------------------------------------
# commands


def cmd_solve(cfg: RunConfig) -> int:
    problem, x0, u0 = _build(cfg)
    initial = total_cost(problem, rollout(problem, x0, u0)).totals
    ok = True
    for method in cfg.methods():
        start = time.perf_counter()
        report = solve(problem, x0, u0, cfg.options(method))
        elapsed = time.perf_counter() - start
        out = _out_dir(cfg, method)
        write_trajectory_csv(out / "trajectory.csv", report.trajectory)
        write_iterations(out / "iterations.jsonl", report)
        summary = summarize(cfg, method, problem.name, report, initial)
        (out / "summary.json").write_text(_fmt(summary) + "\n")
        (out / "timing.json").write_text(_fmt({"wall_time_s": elapsed}) + "\n")
        print(
            f"{method}: {report.reason} after {report.iterations} iterations, "
            f"residual {report.residual.inf_norm:.3e}, costs {np.array2string(summary['final_costs'], precision=6)}"
        )
        if report.reason != "residual_tol":
            print(f"{method}: did not reach residual tolerance ({report.reason})", file=sys.stderr)
            ok = False
    return 0 if ok else 1


@dataclasses.dataclass
class CheckResult:
    name: str
    status: str  # PASS | FAIL | SKIP
    detail: str


def _check(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    try:
        passed, detail = fn()
    except oracle.OracleSizeError as exc:
        return CheckResult(name, "SKIP", str(exc))
    except Exception as exc:  # noqa: BLE001 - a crashing check is a failing check
        return CheckResult(name, "FAIL", f"error: {exc!r}")
    return CheckResult(name, "PASS" if passed else "FAIL", detail)


def _fd_player_gradients(problem, x0, u, h=1e-6) -> np.ndarray:
    """Central-difference ``dJ_n/du_n`` stacked player-major (independent of the adjoint sweep)."""
    out = []
    for n in range(problem.num_players):
        cols = np.arange(problem.input_dim)[problem.player_slice(n)]
        g = np.empty((problem.horizon, cols.size))
        for k in range(problem.horizon):
            for j, c in enumerate(cols):
                step = h * max(1.0, abs(u[k, c]))
                up, um = u.copy(), u.copy()
                up[k, c] += step
                um[k, c] -= step
                Jp = total_cost(problem, rollout(problem, x0, up)).totals[n]
                Jm = total_cost(problem, rollout(problem, x0, um)).totals[n]
                g[k, j] = (Jp - Jm) / (2 * step)
        out.append(g.reshape(-1))
    return np.concatenate(out)


def check_gradient_identity(problem, x0, u) -> tuple[bool, str]:
    r = stationarity_residual(problem, rollout(problem, x0, u)).vector
    fd = _fd_player_gradients(problem, x0, u)
    err = np.abs(r - fd)
    tol = np.maximum(1e-5, 1e-3 * np.abs(fd))
    return bool(np.all(err <= tol)), f"max err {err.max():.2e}"


def check_dense_newton(problem, x0, u, max_dim) -> tuple[bool, str]:
    ds = oracle.dense_jacobian(problem, u, x0, max_dim=max_dim)
    dense = oracle.dense_newton_step(ds)
    fast = take_step(problem, rollout(problem, x0, u), "newton").controls - u
    err = np.linalg.norm(dense - fast)
    tol = max(1e-6, 1e-4 * np.linalg.norm(dense))
    return bool(err <= tol), f"|dense - stagewise| {err:.2e} (tol {tol:.1e})"


def closeness_slope(problem, x0, u_star, correction_scale=1.0, eps=(1e-1, 1e-2, 1e-3), seed=0) -> float:
    """Log-log slope of ``|δu^N - δu^D|`` against the distance to ``u_star``."""
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=u_star.shape)
    direction /= np.abs(direction).max()
    diffs = []
    for e in eps:
        nominal = rollout(problem, x0, u_star + e * direction)
        derivs = differentiate_trajectory(problem, nominal)
        newton = take_step(problem, nominal, "newton", derivs=derivs).controls
        policy, _, _ = ddp_backward(*derivs, correction_scale=correction_scale)
        ddp = ddp_forward(problem, nominal, policy).controls
        diffs.append(np.abs(newton - ddp).max())
    return float(np.polyfit(np.log(eps), np.log(np.maximum(diffs, 1e-300)), 1)[0])


def _verify_instances(seed: int):
    lq = random_lq_game(seed=seed, num_players=2, state_dim=3, input_dims=(1, 2), horizon=6)
    smooth = random_smooth_game(seed=seed, num_players=2, state_dim=3, input_dims=(1, 1), horizon=6)
    rng = np.random.default_rng(seed)
    return lq, smooth, rng.normal(size=3), rng


def cmd_verify(cfg: RunConfig, *, fault: str = "none", max_dense_dim: int = oracle.MAX_DENSE_DIM) -> int:
    lq, smooth, x0, rng = _verify_instances(cfg.seed)
    u_lq = rng.normal(size=(lq.horizon, lq.input_dim))
    u_sm = 0.3 * rng.normal(size=(smooth.horizon, smooth.input_dim))
    scale = -1.0 if fault == "ddp-correction-sign" else 1.0

    def sm_star():
        rep = solve(smooth, x0, np.zeros_like(u_sm), SolveOptions(max_iters=50, residual_tol=1e-11))
        if not rep.converged:
            raise RuntimeError(f"smooth instance did not converge ({rep.reason})")
        return rep.trajectory.controls

    def closeness():
        slope = closeness_slope(smooth, x0, sm_star(), correction_scale=scale)
        return slope >= 1.8, f"slope {slope:.2f} (need >= 1.8)"

    def probes():
        rep = solve(lq, x0, u_lq, SolveOptions(max_iters=3))
        worst = min(oracle.best_response_probe(lq, rep.trajectory, n, 200, 1e-2, cfg.seed) for n in range(2))
        return worst >= -1e-8, f"worst change {worst:.2e}"

    checks = [
        _check("dense Newton equivalence (LQ)", lambda: check_dense_newton(lq, x0, u_lq, max_dense_dim)),
        _check("dense Newton equivalence (smooth)", lambda: check_dense_newton(smooth, x0, u_sm, max_dense_dim)),
        _check("gradient identity (smooth)", lambda: check_gradient_identity(smooth, x0, u_sm)),
        _check("Newton/DDP closeness slope", closeness),
        _check("best-response probes (LQ)", probes),
    ]
    if cfg.problem and cfg.problem in CATALOG and cfg.problem not in ("random-lq", "random-smooth"):
        problem, px0, pu0 = _build(cfg)
        checks.append(
            _check(
                f"dense Newton equivalence ({cfg.problem})",
                lambda: check_dense_newton(problem, px0, pu0, max_dense_dim),
            )
        )
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{c.name:<{width}}  {c.status:<4}  {c.detail}")
    return 0 if all(c.status != "FAIL" for c in checks) else 1


def cmd_compare(cfg: RunConfig, *, lockstep: bool = False) -> int:
    problem, x0, u0 = _build(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    series = {}
    for method in ("newton", "ddp"):
        report = solve(problem, x0, u0, cfg.options(method, capture_iterates=True))
        final = report.trajectory.controls
        series[method] = [float(np.linalg.norm(u - final)) for u in report.iterates]
        print(f"{method}: {report.reason} after {report.iterations} iterations")
    with (out / "distances.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "newton", "ddp"])
        for i in range(max(len(s) for s in series.values())):
            w.writerow(
                [i] + [format(s[i], ".17g") if i < len(s) else "" for s in (series["newton"], series["ddp"])]
            )
    if lockstep:
        traj = rollout(problem, x0, u0)
        lam = cfg.resolved_lam()
        with (out / "lockstep.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "residual_inf", "newton_ddp_diff_inf"])
            for it in range(cfg.max_iters):
                derivs = differentiate_trajectory(problem, traj)
                res = stationarity_residual(problem, traj).inf_norm
                stepn = take_step(problem, traj, "newton", lam, derivs=derivs, value_update=cfg.value_update)
                stepd = take_step(problem, traj, "ddp", lam, derivs=derivs, value_update=cfg.value_update)
                diff = float(np.abs(stepn.controls - stepd.controls).max())
                w.writerow([it, format(res, ".17g"), format(diff, ".17g")])
                traj = stepn.trajectory
                if res < cfg.residual_tol:
                    break
    return 0


def cmd_list(_: RunConfig) -> int:
    for name, rec in CATALOG.items():
        print(f"{name:<14} T={rec.horizon:<4} lambda={rec.lam:<5g} {rec.description}")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyngame", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat JSON file with RunConfig keys")
        p.add_argument("--problem")
        p.add_argument("--method", choices=["newton", "ddp", "both"])
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--max-iters", type=int)
        p.add_argument("--residual-tol", type=float)
        p.add_argument("--step-tol", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--value-update", choices=["open_loop", "feedback"])
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="problem parameter override")

    p_solve = sub.add_parser("solve", help="solve one catalog problem")
    common(p_solve)
    p_verify = sub.add_parser("verify", help="run the oracle checks")
    common(p_verify)
    p_verify.add_argument("--inject-fault", choices=FAULTS, default="none")
    p_verify.add_argument("--max-dense-dim", type=int, default=oracle.MAX_DENSE_DIM)
    p_compare = sub.add_parser("compare", help="run both methods and write distance series")
    common(p_compare)
    p_compare.add_argument("--lockstep", action="store_true")
    sub.add_parser("list-problems", help="print the problem catalog")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    data: dict[str, Any] = load_config(args.config) if getattr(args, "config", None) else {}
    for key in ("problem", "method", "lam", "max_iters", "residual_tol", "step_tol", "seed", "out", "value_update"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    overrides = dict(data.pop("overrides", {}) or {})
    for item in getattr(args, "set", []) or []:
        k, v = parse_override(item)
        overrides[k] = v
    cfg = RunConfig(**data, overrides=overrides)
    if cfg.method not in ("newton", "ddp", "both"):
        raise ConfigError(f"unknown method {cfg.method!r}")
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command != "list-problems" and cfg.problem not in CATALOG:
            raise ConfigError(f"unknown problem {cfg.problem!r}; available: {', '.join(CATALOG)}")
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "verify":
            return cmd_verify(cfg, fault=args.inject_fault, max_dense_dim=args.max_dense_dim)
        if args.command == "compare":
            return cmd_compare(cfg, lockstep=args.lockstep)
        return cmd_list(cfg)
    except (ConfigError, TypeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
