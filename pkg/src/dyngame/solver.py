"""Iteration loop, forward passes and the stationarity residual."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import numpy.typing as npt

from .backward import (
    VALUE_UPDATES,
    AffinePolicy,
    RegularizationLog,
    StageGameError,
    ValueBundle,
    ddp_backward,
    newton_backward,
)
from .derivatives import StageDerivatives, TerminalDerivatives, differentiate_trajectory
from .model import (
    Array,
    DimensionError,
    GameProblem,
    NonFiniteStateError,
    Trajectory,
    rollout,
    total_cost,
)

logger = logging.getLogger(__name__)

METHODS = ("newton", "ddp")
TERMINATION_REASONS = ("residual_tol", "step_tol", "max_iters", "stage_singular", "diverged")


@dataclass(frozen=True)
class SolveOptions:
    method: str = "newton"
    lam: float = 0.0
    max_iters: int = 100
    residual_tol: float = 1e-9
    step_tol: float = 1e-12
    capture_iterates: bool = False
    value_update: str = "open_loop"

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.value_update not in VALUE_UPDATES:
            raise ValueError(f"value_update must be one of {VALUE_UPDATES}")
        if not self.lam >= 0:
            raise ValueError("lam must be nonnegative")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be at least 1")
        if not (self.residual_tol > 0 and self.step_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class Residual:
    """Stacked per-player gradients ``∂J_n/∂u_{n,:}``.

    ``vector`` is ordered player-major, then stage, then input component;
    ``per_player[n]`` has shape ``(T, n_{u_n})``.
    """

    vector: Array
    per_player: tuple[Array, ...]

    @property
    def inf_norm(self) -> float:
        return float(np.max(np.abs(self.vector))) if self.vector.size else 0.0


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    residual_inf: float
    step_inf: float
    costs: Array
    regularized_stages: int


@dataclass
class SolveReport:
    trajectory: Trajectory
    policy: AffinePolicy | None
    records: list[IterationRecord]
    reason: str
    residual: Residual
    iterates: list[Array] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def converged(self) -> bool:
        return self.reason == "residual_tol"


def residual_from_derivatives(
    problem: GameProblem, stage_derivs: Sequence[StageDerivatives], terminal: TerminalDerivatives
) -> Residual:
    """Adjoint evaluation of the stacked gradients from one backward costate sweep."""
    T, N, nx = problem.horizon, problem.num_players, problem.state_dim
    omega = terminal.V[:, 0, 1:].copy()
    grads = np.empty((T, N, problem.input_dim))
    for k in range(T - 1, -1, -1):
        sd = stage_derivs[k]
        grads[k] = sd.M[:, 0, 1 + nx :] + omega @ sd.B
        omega = sd.M[:, 0, 1 : 1 + nx] + omega @ sd.A
    per_player = tuple(grads[:, n, problem.player_slice(n)].copy() for n in range(N))
    vector = np.concatenate([g.reshape(-1) for g in per_player])
    return Residual(vector, per_player)


def stationarity_residual(problem: GameProblem, traj: Trajectory) -> Residual:
    stage_derivs, terminal = differentiate_trajectory(problem, traj)
    return residual_from_derivatives(problem, stage_derivs, terminal)


def newton_forward(
    nominal: Trajectory, policy: AffinePolicy, stage_derivs: Sequence[StageDerivatives]
) -> Array:
    """Apply the policy along the linearized dynamics; returns the new controls."""
    T = nominal.horizon
    if policy.horizon != T or len(stage_derivs) != T:
        raise DimensionError("policy, derivatives and nominal horizons differ")
    dx = np.zeros(nominal.states.shape[1])
    u = np.empty_like(nominal.controls)
    for k in range(T):
        du = policy.K[k] @ dx + policy.s[k]
        u[k] = nominal.controls[k] + du
        dx = stage_derivs[k].A @ dx + stage_derivs[k].B @ du
    return u


def ddp_forward(problem: GameProblem, nominal: Trajectory, policy: AffinePolicy) -> Trajectory:
    """Apply the policy in closed loop on the true dynamics.

    Raises:
        NonFiniteStateError: if the rollout blows up.
    """
    T = problem.horizon
    if policy.horizon != T:
        raise DimensionError("policy horizon differs from the problem horizon")
    states = np.empty_like(nominal.states)
    controls = np.empty_like(nominal.controls)
    states[0] = nominal.states[0]
    for k in range(T):
        controls[k] = nominal.controls[k] + policy.K[k] @ (states[k] - nominal.states[k]) + policy.s[k]
        nxt = np.asarray(problem.dynamics(k, states[k], controls[k]), dtype=float)
        if not np.all(np.isfinite(nxt)):
            raise NonFiniteStateError(k + 1)
        states[k + 1] = nxt
    return Trajectory(states, controls)


def backward_pass(
    method: str,
    stage_derivs: Sequence[StageDerivatives],
    terminal: TerminalDerivatives,
    lam: float,
    *,
    value_update: str = "open_loop",
    capture: bool = False,
) -> tuple[AffinePolicy, ValueBundle, RegularizationLog]:
    if method == "newton":
        return newton_backward(stage_derivs, terminal, lam, value_update=value_update, capture=capture)
    if method == "ddp":
        return ddp_backward(stage_derivs, terminal, lam, value_update=value_update, capture=capture)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class Step:
    trajectory: Trajectory
    policy: AffinePolicy
    values: ValueBundle
    regularization: RegularizationLog

    @property
    def controls(self) -> Array:
        return self.trajectory.controls


def take_step(
    problem: GameProblem,
    nominal: Trajectory,
    method: str,
    lam: float = 0.0,
    *,
    derivs: tuple[Sequence[StageDerivatives], TerminalDerivatives] | None = None,
    value_update: str = "open_loop",
    capture: bool = False,
) -> Step:
    """One backward + forward pass from ``nominal``."""
    stage_derivs, terminal = derivs if derivs is not None else differentiate_trajectory(problem, nominal)
    policy, values, log = backward_pass(
        method, stage_derivs, terminal, lam, value_update=value_update, capture=capture
    )
    if method == "newton":
        controls = newton_forward(nominal, policy, stage_derivs)
        new = rollout(problem, nominal.states[0], controls)
    else:
        new = ddp_forward(problem, nominal, policy)
    return Step(new, policy, values, log)


def solve(
    problem: GameProblem,
    x0: npt.ArrayLike,
    u0: npt.ArrayLike,
    opts: SolveOptions | None = None,
) -> SolveReport:
    """Iterate backward/forward passes until a stopping rule fires.

    Stops on residual ∞-norm below ``residual_tol``, step ∞-norm below
    ``step_tol``, ``max_iters``, a singular stage game or a diverging rollout.
    The returned policy is recomputed around the final trajectory.
    """
    opts = opts or SolveOptions()
    traj = rollout(problem, x0, u0)
    derivs = differentiate_trajectory(problem, traj)
    residual = residual_from_derivatives(problem, *derivs)
    records: list[IterationRecord] = []
    iterates = [traj.controls.copy()] if opts.capture_iterates else []
    reason = "max_iters"
    for it in range(1, int(opts.max_iters) + 1):
        try:
            step = take_step(
                problem, traj, opts.method, opts.lam, derivs=derivs, value_update=opts.value_update
            )
        except StageGameError as exc:
            logger.warning("iteration %d: %s", it, exc)
            reason = "stage_singular"
            break
        except NonFiniteStateError as exc:
            logger.warning("iteration %d: %s", it, exc)
            reason = "diverged"
            break
        step_inf = float(np.max(np.abs(step.controls - traj.controls)))
        traj = step.trajectory
        derivs = differentiate_trajectory(problem, traj)
        residual = residual_from_derivatives(problem, *derivs)
        costs = total_cost(problem, traj).totals
        records.append(
            IterationRecord(it, residual.inf_norm, step_inf, costs, step.regularization.regularized_stages)
        )
        if opts.capture_iterates:
            iterates.append(traj.controls.copy())
        logger.debug("iter %d residual %.3e step %.3e", it, residual.inf_norm, step_inf)
        if residual.inf_norm < opts.residual_tol:
            reason = "residual_tol"
            break
        if step_inf < opts.step_tol:
            reason = "step_tol"
            break

    policy = None
    try:
        policy = backward_pass(opts.method, *derivs, opts.lam, value_update=opts.value_update)[0]
    except StageGameError:
        if reason != "stage_singular":
            logger.warning("final policy unavailable: stage game singular at the final trajectory")
    return SolveReport(traj, policy, records, reason, residual, iterates)
