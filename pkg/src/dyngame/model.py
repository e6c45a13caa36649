"""Dynamic game problem definition, trajectories, rollouts and cost totals.

A game has ``N`` players sharing one discrete-time system

    x_{k+1} = f_k(x_k, u_k),   k = 0, ..., T-1

where ``u_k`` stacks every player's input in ascending player order. Player
``n`` pays ``sum_k c_{n,k}(x_k, u_k) + c_{n,T}(x_T)``. Terminal costs depend on
the state only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import numpy.typing as npt

Array = npt.NDArray[np.float64]

DynamicsFn = Callable[[int, Array, Array], Array]
DynamicsDerivsFn = Callable[[int, Array, Array], tuple[Array, Array, Array]]
StageCostFn = Callable[[int, Array, Array], Array]
StageCostDerivsFn = Callable[[int, Array, Array], tuple[Array, Array, Array]]
TerminalCostFn = Callable[[Array], Array]
TerminalCostDerivsFn = Callable[[Array], tuple[Array, Array, Array]]


class DimensionError(ValueError):
    """Raised when arrays do not match the problem dimensions."""


class NonFiniteStateError(ArithmeticError):
    """Raised when a rollout produces a NaN or infinite state."""

    def __init__(self, stage: int, message: str | None = None):
        self.stage = stage
        super().__init__(message or f"non-finite state produced at stage {stage}")


@dataclass(frozen=True)
class GameProblem:
    """An unconstrained finite-horizon N-player dynamic game.

    The value and derivative suppliers are plain callables:

    * ``dynamics(k, x, u) -> x_next`` with shape ``(n_x,)``.
    * ``dynamics_derivs(k, x, u) -> (A, B, G)`` where ``A`` is ``(n_x, n_x)``,
      ``B`` is ``(n_x, n_u)`` and ``G[l]`` is the ``(n_z, n_z)`` Hessian of
      component ``l`` with respect to ``z = [x; u]``.
    * ``stage_cost(k, x, u) -> c`` with shape ``(N,)``, one entry per player.
    * ``stage_cost_derivs(k, x, u) -> (c, grad, hess)`` with shapes ``(N,)``,
      ``(N, n_z)`` and ``(N, n_z, n_z)``.
    * ``terminal_cost(x) -> c`` and ``terminal_cost_derivs(x) -> (c, grad,
      hess)``, the same layout with ``n_x`` in place of ``n_z``.
    """

    num_players: int
    horizon: int
    state_dim: int
    input_dims: tuple[int, ...]
    dynamics: DynamicsFn
    dynamics_derivs: DynamicsDerivsFn
    stage_cost: StageCostFn
    stage_cost_derivs: StageCostDerivsFn
    terminal_cost: TerminalCostFn
    terminal_cost_derivs: TerminalCostDerivsFn
    name: str = "game"
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        for attr in ("num_players", "horizon", "state_dim"):
            if int(getattr(self, attr)) < 1:
                raise DimensionError(f"{attr} must be a positive integer")
        if len(self.input_dims) != self.num_players:
            raise DimensionError(
                f"expected {self.num_players} input dimensions, got {len(self.input_dims)}"
            )
        if any(d < 1 for d in self.input_dims):
            raise DimensionError("every player needs at least one input")

    @property
    def input_dim(self) -> int:
        return sum(self.input_dims)

    @property
    def stage_dim(self) -> int:
        """Length of z = [x; u]."""
        return self.state_dim + self.input_dim

    @property
    def input_offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.cumsum((0,) + self.input_dims[:-1]))

    def player_slice(self, n: int) -> slice:
        """Columns of the stacked input vector owned by player ``n``."""
        start = self.input_offsets[n]
        return slice(start, start + self.input_dims[n])

    @property
    def num_decision_variables(self) -> int:
        return self.horizon * self.input_dim


@dataclass(frozen=True)
class Trajectory:
    """States ``x_0..x_T`` (shape ``(T+1, n_x)``) and controls ``u_0..u_{T-1}``."""

    states: Array
    controls: Array

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]

    def player_controls(self, problem: GameProblem, n: int) -> Array:
        return self.controls[:, problem.player_slice(n)]


@dataclass(frozen=True)
class PlayerCosts:
    """Per-player totals and a per-stage breakdown.

    ``stages[k, n]`` is ``c_{n,k}`` for ``k < T``; the last row holds the
    terminal costs.
    """

    totals: Array
    stages: Array

    def __getitem__(self, n: int) -> float:
        return float(self.totals[n])


def _as_controls(problem: GameProblem, controls: npt.ArrayLike) -> Array:
    u = np.asarray(controls, dtype=float)
    if u.ndim == 1 and problem.input_dim == 1:
        u = u[:, None]
    if u.shape != (problem.horizon, problem.input_dim):
        raise DimensionError(
            f"controls must have shape {(problem.horizon, problem.input_dim)}, got {u.shape}"
        )
    return u


def _as_state(problem: GameProblem, x: npt.ArrayLike) -> Array:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (problem.state_dim,):
        raise DimensionError(f"state must have dimension {problem.state_dim}, got {x.shape[0]}")
    return x


def rollout(problem: GameProblem, x0: npt.ArrayLike, controls: npt.ArrayLike) -> Trajectory:
    """Simulate the dynamics from ``x0`` under a fixed control sequence.

    Raises:
        DimensionError: if ``x0`` or ``controls`` have the wrong shape, or the
            dynamics return a vector of the wrong size.
        NonFiniteStateError: if some stage produces a NaN/inf state.
    """
    x0 = _as_state(problem, x0)
    u = _as_controls(problem, controls)
    if not np.all(np.isfinite(x0)):
        raise NonFiniteStateError(0, "initial state is not finite")
    states = np.empty((problem.horizon + 1, problem.state_dim))
    states[0] = x0
    for k in range(problem.horizon):
        nxt = np.asarray(problem.dynamics(k, states[k], u[k]), dtype=float)
        if nxt.shape != (problem.state_dim,):
            raise DimensionError(f"f_{k} returned shape {nxt.shape}, expected ({problem.state_dim},)")
        if not np.all(np.isfinite(nxt)):
            raise NonFiniteStateError(k + 1)
        states[k + 1] = nxt
    return Trajectory(states, u.copy())


def total_cost(problem: GameProblem, traj: Trajectory) -> PlayerCosts:
    """Sum every player's stage costs plus terminal cost along ``traj``."""
    T, N = problem.horizon, problem.num_players
    if traj.states.shape != (T + 1, problem.state_dim) or traj.controls.shape != (T, problem.input_dim):
        raise DimensionError("trajectory dimensions do not match the problem")
    stages = np.empty((T + 1, N))
    for k in range(T):
        stages[k] = problem.stage_cost(k, traj.states[k], traj.controls[k])
    stages[T] = problem.terminal_cost(traj.states[T])
    return PlayerCosts(stages.sum(axis=0), stages)


def cost_to_go(problem: GameProblem, traj: Trajectory, start: int) -> Array:
    """Per-player sum of costs from stage ``start`` through the terminal stage."""
    return total_cost(problem, traj).stages[start:].sum(axis=0)


@dataclass(frozen=True)
class Diagnostic:
    kind: str  # "dimension" | "derivative"
    where: str
    message: str
    value: float = float("nan")


def validate(
    problem: GameProblem,
    probes: Sequence[tuple[int, npt.ArrayLike, npt.ArrayLike]] | None = None,
    *,
    h: float = 1e-5,
    rtol: float = 1e-3,
    atol: float = 1e-5,
) -> list[Diagnostic]:
    """Collect dimension errors and analytic-vs-finite-difference mismatches.

    Dimension checks are run at ``x = 0, u = 0`` for every stage. When
    ``probes`` is given, each ``(k, x, u)`` point is also checked against
    central differences; ``k == problem.horizon`` probes the terminal cost.
    Nothing is raised: problems are reported in the returned list.
    """
    from . import derivatives as _d  # circular at import time

    diags: list[Diagnostic] = []
    nx, nu, nz, N = problem.state_dim, problem.input_dim, problem.stage_dim, problem.num_players
    x, u = np.zeros(nx), np.zeros(nu)

    def check(where: str, value: Any, shape: tuple[int, ...]) -> None:
        try:
            arr = np.asarray(value, dtype=float)
        except (TypeError, ValueError) as exc:
            diags.append(Diagnostic("dimension", where, f"{where} is not numeric: {exc}"))
            return
        if arr.shape != shape:
            diags.append(Diagnostic("dimension", where, f"{where} has shape {arr.shape}, expected {shape}"))

    for k in range(problem.horizon):
        try:
            check(f"f_{k}", problem.dynamics(k, x, u), (nx,))
            A, B, G = problem.dynamics_derivs(k, x, u)
            check(f"A_{k}", A, (nx, nx))
            check(f"B_{k}", B, (nx, nu))
            check(f"G_{k}", G, (nx, nz, nz))
            check(f"c_{k}", problem.stage_cost(k, x, u), (N,))
            c, g, H = problem.stage_cost_derivs(k, x, u)
            check(f"c_{k} value", c, (N,))
            check(f"c_{k} gradient", g, (N, nz))
            check(f"c_{k} Hessian", H, (N, nz, nz))
        except Exception as exc:  # noqa: BLE001 - diagnostics never raise
            diags.append(Diagnostic("dimension", f"stage {k}", f"evaluation failed: {exc!r}"))
    try:
        check("c_T", problem.terminal_cost(x), (N,))
        c, g, H = problem.terminal_cost_derivs(x)
        check("c_T value", c, (N,))
        check("c_T gradient", g, (N, nx))
        check("c_T Hessian", H, (N, nx, nx))
    except Exception as exc:  # noqa: BLE001
        diags.append(Diagnostic("dimension", "terminal", f"evaluation failed: {exc!r}"))

    if diags or not probes:
        return diags

    for k, px, pu in probes:
        px = np.asarray(px, dtype=float)
        for label, exact, approx in _derivative_blocks(problem, k, px, pu, h):
            err = np.abs(exact - approx)
            scale = float(np.max(np.abs(approx), initial=0.0))
            bad = err > max(atol, rtol * scale)
            if np.any(bad):
                rel = float(np.max(err) / max(scale, 1e-300))
                diags.append(
                    Diagnostic(
                        "derivative",
                        label,
                        f"{label}: analytic derivative disagrees with central differences "
                        f"(relative error {rel:.3g})",
                        rel,
                    )
                )
    return diags


def _derivative_blocks(problem: GameProblem, k: int, x: Array, u: Any, h: float):
    """Yield ``(label, analytic, finite_difference)`` block pairs at one probe."""
    from . import derivatives as _d

    if k == problem.horizon:
        exact = _d.differentiate_terminal(problem, x).V
        approx = _d.fd_terminal_oracle(problem, x, h).V
        for n in range(problem.num_players):
            yield f"terminal cost gradient of player {n}", exact[n, 0, 1:], approx[n, 0, 1:]
            yield f"terminal cost Hessian of player {n}", exact[n, 1:, 1:], approx[n, 1:, 1:]
        return
    u = np.asarray(u, dtype=float)
    sd = _d.differentiate_stage(problem, k, x, u)
    od = _d.fd_stage_oracle(problem, k, x, u, h)
    yield f"A_{k}", sd.A, od.A
    yield f"B_{k}", sd.B, od.B
    for l in range(problem.state_dim):
        yield f"G_{k}^{l}", sd.G[l], od.G[l]
    for n in range(problem.num_players):
        yield f"cost gradient of player {n} at stage {k}", sd.M[n, 0, 1:], od.M[n, 0, 1:]
        yield f"cost Hessian of player {n} at stage {k}", sd.M[n, 1:, 1:], od.M[n, 1:, 1:]
