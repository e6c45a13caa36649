"""Brute-force reference computations used to check the fast recursions.

Everything here is deliberately dense and quadratic (or worse) in the horizon.
A size guard keeps these routines from being used as a production path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .backward import AffinePolicy
from .model import Array, GameProblem, Trajectory, rollout, total_cost
from .solver import stationarity_residual

MAX_DENSE_DIM = 400


class OracleSizeError(ValueError):
    """The dense oracle refuses problems above :data:`MAX_DENSE_DIM` unknowns."""


@dataclass(frozen=True)
class DenseSystem:
    """Stationarity residual and its finite-difference Jacobian at one control sequence.

    ``index[n][k]`` lists the flat coordinates of ``u_{n,k}``; flat ordering is
    player-major, then stage, then component, matching ``Residual.vector``.
    """

    residual: Array
    jacobian: Array
    index: tuple[tuple[Array, ...], ...]
    input_dims: tuple[int, ...]
    horizon: int

    @property
    def dim(self) -> int:
        return self.residual.size

    def flat_to_controls(self, v: Array) -> Array:
        """Reorder a player-major flat vector into a ``(T, n_u)`` control array."""
        out = np.empty((self.horizon, sum(self.input_dims)))
        col = 0
        pos = 0
        for d in self.input_dims:
            block = v[pos : pos + self.horizon * d].reshape(self.horizon, d)
            out[:, col : col + d] = block
            col += d
            pos += self.horizon * d
        return out

    def controls_to_flat(self, u: Array) -> Array:
        parts = []
        col = 0
        for d in self.input_dims:
            parts.append(np.asarray(u)[:, col : col + d].reshape(-1))
            col += d
        return np.concatenate(parts)


def _index_map(problem: GameProblem) -> tuple[tuple[Array, ...], ...]:
    T = problem.horizon
    index = []
    pos = 0
    for d in problem.input_dims:
        index.append(tuple(np.arange(pos + k * d, pos + (k + 1) * d) for k in range(T)))
        pos += T * d
    return tuple(index)


def _guard(problem: GameProblem, max_dim: int) -> None:
    dim = problem.num_decision_variables
    if dim > max_dim:
        raise OracleSizeError(f"dense oracle refuses {dim} unknowns (limit {max_dim})")


def dense_jacobian(
    problem: GameProblem,
    u: npt.ArrayLike,
    x0: npt.ArrayLike,
    h: float = 1e-6,
    *,
    max_dim: int = MAX_DENSE_DIM,
) -> DenseSystem:
    """Central-difference Jacobian of the stationarity residual in the controls.

    Raises:
        OracleSizeError: above ``max_dim`` unknowns.
        ValueError: for a nonpositive step.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    _guard(problem, max_dim)
    u = np.asarray(u, dtype=float).reshape(problem.horizon, problem.input_dim)
    r0 = stationarity_residual(problem, rollout(problem, x0, u)).vector
    system = DenseSystem(r0, np.empty((r0.size, r0.size)), _index_map(problem), problem.input_dims, problem.horizon)
    flat = system.controls_to_flat(u)
    for j in range(flat.size):
        step = h * max(1.0, abs(flat[j]))
        e = np.zeros_like(flat)
        e[j] = step
        rp = stationarity_residual(problem, rollout(problem, x0, system.flat_to_controls(flat + e))).vector
        rm = stationarity_residual(problem, rollout(problem, x0, system.flat_to_controls(flat - e))).vector
        system.jacobian[:, j] = (rp - rm) / (2 * step)
    return system


def dense_newton_step(ds: DenseSystem, rcond_min: float = 1e-12) -> Array:
    """Solve ``J δu = -r`` and return ``δu`` as a ``(T, n_u)`` array.

    Raises:
        np.linalg.LinAlgError: if the Jacobian is numerically singular.
    """
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(ds.jacobian)
    if not np.isfinite(cond) or 1.0 / cond < rcond_min:
        raise np.linalg.LinAlgError(f"dense Jacobian is singular (condition estimate {cond:.3e})")
    return ds.flat_to_controls(np.linalg.solve(ds.jacobian, -ds.residual))


def player_hessian(
    problem: GameProblem, traj: Trajectory, n: int, h: float = 1e-4, *, max_dim: int = MAX_DENSE_DIM
) -> Array:
    """Finite-difference Hessian of ``J_n`` in player ``n``'s own controls."""
    _guard(problem, max_dim)
    x0 = traj.states[0]
    cols = problem.player_slice(n)
    base = traj.controls[:, cols].reshape(-1)
    d = base.size

    def J(v: Array) -> float:
        u = traj.controls.copy()
        u[:, cols] = v.reshape(problem.horizon, -1)
        return total_cost(problem, rollout(problem, x0, u)).totals[n]

    f0 = J(base)
    H = np.empty((d, d))
    steps = h * np.maximum(1.0, np.abs(base))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = steps[i]
        H[i, i] = (J(base + ei) - 2 * f0 + J(base - ei)) / steps[i] ** 2
        for j in range(i):
            ej = np.zeros(d)
            ej[j] = steps[j]
            v = (J(base + ei + ej) - J(base + ei - ej) - J(base - ei + ej) + J(base - ei - ej)) / (
                4 * steps[i] * steps[j]
            )
            H[i, j] = H[j, i] = v
    return H


def player_hessian_min_eigs(problem: GameProblem, traj: Trajectory, h: float = 1e-4) -> Array:
    """Smallest eigenvalue of every player's own-control Hessian (strict convexity check)."""
    return np.array(
        [np.linalg.eigvalsh(player_hessian(problem, traj, n, h))[0] for n in range(problem.num_players)]
    )


def best_response_probe(
    problem: GameProblem,
    traj: Trajectory,
    n: int,
    num_samples: int = 200,
    radius: float = 1e-2,
    seed: int = 0,
) -> float:
    """Worst change in ``J_n`` under random unilateral deviations of player ``n``.

    Perturbations of player ``n``'s whole control sequence are drawn uniformly
    on the sphere of the given radius; the others' controls stay fixed. The
    return value is ``min(J_n(perturbed) - J_n(traj))``, so a negative number
    is a cost decrease, i.e. a profitable deviation.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if radius == 0 or num_samples == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    x0 = traj.states[0]
    cols = problem.player_slice(n)
    J0 = total_cost(problem, traj).totals[n]
    worst = np.inf
    for _ in range(num_samples):
        d = rng.normal(size=(problem.horizon, problem.input_dims[n]))
        d *= radius / np.linalg.norm(d)
        u = traj.controls.copy()
        u[:, cols] += d
        worst = min(worst, total_cost(problem, rollout(problem, x0, u)).totals[n] - J0)
    return float(worst)


def closed_loop_controls(
    problem: GameProblem, nominal: Trajectory, policy: AffinePolicy, x0: npt.ArrayLike
) -> Trajectory:
    """Roll the affine feedback policy from a (possibly perturbed) initial state."""
    x0 = np.asarray(x0, dtype=float)
    T = problem.horizon
    states = np.empty_like(nominal.states)
    controls = np.empty_like(nominal.controls)
    states[0] = x0
    for k in range(T):
        controls[k] = nominal.controls[k] + policy.K[k] @ (states[k] - nominal.states[k]) + policy.s[k]
        states[k + 1] = problem.dynamics(k, states[k], controls[k])
    return Trajectory(states, controls)


def restrict_to_player(
    problem: GameProblem, nominal: Trajectory, policy: AffinePolicy, n: int
) -> GameProblem:
    """Single-player problem for ``n`` with every other player on their feedback policy.

    The state is augmented with nothing: the others' inputs are computed from
    the current state through the affine policy, so the reduced dynamics are
    ``x+ = f_k(x, J_k(x, v))`` where ``J_k`` inserts player ``n``'s input ``v``
    and the others' feedback inputs into the stacked vector. Derivatives of the
    reduced problem are exact chain-rule transforms of the full ones.
    """
    nx, nu = problem.state_dim, problem.input_dim
    cols = np.arange(nu)[problem.player_slice(n)]
    others = np.setdiff1d(np.arange(nu), cols)
    dn = cols.size

    def stack(k, x, v):
        u = nominal.controls[k] + policy.K[k] @ (x - nominal.states[k]) + policy.s[k]
        u[cols] = v
        return u

    # z_full = Jmap @ [x; v] + offset (affine)
    def jmap(k):
        Jm = np.zeros((nx + nu, nx + dn))
        Jm[:nx, :nx] = np.eye(nx)
        Jm[nx + others, :nx] = policy.K[k][others]
        Jm[nx + cols, nx:] = np.eye(dn)
        return Jm

    def dynamics(k, x, v):
        return problem.dynamics(k, x, stack(k, x, v))

    def dynamics_derivs(k, x, v):
        A, B, G = problem.dynamics_derivs(k, x, stack(k, x, v))
        Jm = jmap(k)
        AB = np.hstack([A, B]) @ Jm
        Gr = np.einsum("ai,lab,bj->lij", Jm, np.asarray(G), Jm)
        return AB[:, :nx], AB[:, nx:], Gr

    def stage_cost(k, x, v):
        return np.atleast_1d(problem.stage_cost(k, x, stack(k, x, v))[n])

    def stage_cost_derivs(k, x, v):
        c, g, H = problem.stage_cost_derivs(k, x, stack(k, x, v))
        Jm = jmap(k)
        return np.atleast_1d(c[n]), (g[n] @ Jm)[None], (Jm.T @ H[n] @ Jm)[None]

    def terminal_cost(x):
        return np.atleast_1d(problem.terminal_cost(x)[n])

    def terminal_cost_derivs(x):
        c, g, H = problem.terminal_cost_derivs(x)
        return np.atleast_1d(c[n]), g[n][None], H[n][None]

    return GameProblem(
        num_players=1,
        horizon=problem.horizon,
        state_dim=nx,
        input_dims=(dn,),
        dynamics=dynamics,
        dynamics_derivs=dynamics_derivs,
        stage_cost=stage_cost,
        stage_cost_derivs=stage_cost_derivs,
        terminal_cost=terminal_cost,
        terminal_cost_derivs=terminal_cost_derivs,
        name=f"{problem.name}[player {n}]",
    )
