"""First/second order derivative bundles along a nominal trajectory.

Per stage ``k`` the bundle holds

* ``A = df/dx`` and ``B = df/du``,
* ``G[l]``, the Hessian of dynamics component ``l`` with respect to ``z = [x; u]``,
* ``M[n]``, player ``n``'s cost packed as
  ``[[2c, c_z], [c_z^T, c_zz]]`` so that
  ``0.5 * [1; dz]^T M [1; dz]`` is the second-order Taylor model of ``c``.

The finite-difference oracle rebuilds the same bundle from value maps only and
is what every analytic supplier is checked against.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import Array, DimensionError, GameProblem, Trajectory


class SupplierError(RuntimeError):
    """A user derivative supplier raised; ``stage`` tells where."""

    def __init__(self, stage: int | None, cause: BaseException):
        self.stage = stage
        where = "terminal stage" if stage is None else f"stage {stage}"
        super().__init__(f"derivative supplier failed at {where}: {cause!r}")


@dataclass(frozen=True)
class StageDerivatives:
    A: Array  # (n_x, n_x)
    B: Array  # (n_x, n_u)
    G: Array  # (n_x, n_z, n_z)
    M: Array  # (N, 1 + n_z, 1 + n_z)
    input_dims: tuple[int, ...]

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class TerminalDerivatives:
    """Terminal cost bundles ``V[n] = [[2c, c_x], [c_x^T, c_xx]]``, shape ``(N, 1+n_x, 1+n_x)``."""

    V: Array


def _sym(a: Array) -> Array:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def pack_cost(value: Array, grad: Array, hess: Array) -> Array:
    """Stack per-player value, gradient and Hessian into ``(N, 1+d, 1+d)`` bundles."""
    value = np.asarray(value, dtype=float)
    grad = np.asarray(grad, dtype=float)
    hess = np.asarray(hess, dtype=float)
    N, d = grad.shape
    M = np.empty((N, 1 + d, 1 + d))
    M[:, 0, 0] = 2.0 * value
    M[:, 0, 1:] = grad
    M[:, 1:, 0] = grad
    M[:, 1:, 1:] = _sym(hess)
    return M


def differentiate_stage(problem: GameProblem, k: int, x: Array, u: Array) -> StageDerivatives:
    """Analytic derivative bundle of stage ``k`` at ``(x, u)``."""
    if not 0 <= k < problem.horizon:
        raise IndexError(f"stage {k} outside 0..{problem.horizon - 1}")
    nx, nu, nz, N = problem.state_dim, problem.input_dim, problem.stage_dim, problem.num_players
    try:
        A, B, G = problem.dynamics_derivs(k, x, u)
        c, g, H = problem.stage_cost_derivs(k, x, u)
    except Exception as exc:
        raise SupplierError(k, exc) from exc
    A, B, G = (np.asarray(a, dtype=float) for a in (A, B, G))
    if A.shape != (nx, nx) or B.shape != (nx, nu) or G.shape != (nx, nz, nz):
        raise DimensionError(f"dynamics derivatives at stage {k} have wrong shapes")
    M = pack_cost(c, g, H)
    if M.shape != (N, 1 + nz, 1 + nz):
        raise DimensionError(f"cost derivatives at stage {k} have wrong shapes")
    return StageDerivatives(A, B, _sym(G), M, problem.input_dims)


def differentiate_terminal(problem: GameProblem, xT: Array) -> TerminalDerivatives:
    try:
        c, g, H = problem.terminal_cost_derivs(xT)
    except Exception as exc:
        raise SupplierError(None, exc) from exc
    V = pack_cost(c, g, H)
    if V.shape != (problem.num_players, 1 + problem.state_dim, 1 + problem.state_dim):
        raise DimensionError("terminal cost derivatives have wrong shapes")
    return TerminalDerivatives(V)


def _num_threads() -> int:
    try:
        return max(1, int(os.environ.get("DYNGAME_THREADS", "1")))
    except ValueError:
        return 1


def differentiate_trajectory(
    problem: GameProblem, traj: Trajectory
) -> tuple[list[StageDerivatives], TerminalDerivatives]:
    """Bundles for every stage of ``traj`` plus the terminal bundle.

    Stages are independent; ``DYNGAME_THREADS`` > 1 evaluates them on a thread
    pool (useful only when the suppliers release the GIL).
    """
    T = problem.horizon

    def one(k: int) -> StageDerivatives:
        return differentiate_stage(problem, k, traj.states[k], traj.controls[k])

    threads = _num_threads()
    if threads > 1 and T > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stages = list(pool.map(one, range(T)))
    else:
        stages = [one(k) for k in range(T)]
    return stages, differentiate_terminal(problem, traj.states[T])


def _steps(z: Array, h: float) -> Array:
    return h * np.maximum(1.0, np.abs(z))


def _fd_jacobian_hessian(fun, z: Array, h: float) -> tuple[Array, Array, Array]:
    """Central-difference value, Jacobian and Hessian of a vector map ``fun(z)``.

    Returns arrays of shape ``(m,)``, ``(m, d)`` and ``(m, d, d)``.
    """
    d = z.size
    hs = _steps(z, h)
    f0 = np.asarray(fun(z), dtype=float)
    m = f0.size
    jac = np.empty((m, d))
    hess = np.empty((m, d, d))
    plus = np.empty((d, m))
    minus = np.empty((d, m))
    for i in range(d):
        e = np.zeros(d)
        e[i] = hs[i]
        plus[i] = fun(z + e)
        minus[i] = fun(z - e)
        jac[:, i] = (plus[i] - minus[i]) / (2 * hs[i])
        hess[:, i, i] = (plus[i] - 2 * f0 + minus[i]) / hs[i] ** 2
    for i in range(d):
        for j in range(i + 1, d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = hs[i]
            ej[j] = hs[j]
            v = (fun(z + ei + ej) - fun(z + ei - ej) - fun(z - ei + ej) + fun(z - ei - ej)) / (
                4 * hs[i] * hs[j]
            )
            hess[:, i, j] = v
            hess[:, j, i] = v
    return f0, jac, hess


def fd_stage_oracle(problem: GameProblem, k: int, x: Array, u: Array, h: float = 1e-5) -> StageDerivatives:
    """Rebuild the stage bundle from value maps by central differences.

    The step along coordinate ``i`` is ``h * max(1, |z_i|)``.
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    nx = problem.state_dim
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    z = np.concatenate([x, u])
    _, jac, G = _fd_jacobian_hessian(lambda zz: problem.dynamics(k, zz[:nx], zz[nx:]), z, h)
    c, g, H = _fd_jacobian_hessian(lambda zz: problem.stage_cost(k, zz[:nx], zz[nx:]), z, h)
    return StageDerivatives(jac[:, :nx], jac[:, nx:], G, pack_cost(c, g, H), problem.input_dims)


def fd_terminal_oracle(problem: GameProblem, xT: Array, h: float = 1e-5) -> TerminalDerivatives:
    if h <= 0:
        raise ValueError("step size must be positive")
    c, g, H = _fd_jacobian_hessian(problem.terminal_cost, np.asarray(xT, dtype=float), h)
    return TerminalDerivatives(pack_cost(c, g, H))


def eval_quadratic_dynamics(sd: StageDerivatives, f_nominal: Array, dx: Array, du: Array) -> Array:
    """Second-order Taylor prediction of ``f(x̄ + dx, ū + du)``.

    ``f̄ + A dx + B du + 0.5 * [dz^T G^l dz]_l`` with ``dz = [dx; du]``.
    """
    dx = np.asarray(dx, dtype=float)
    du = np.asarray(du, dtype=float)
    if dx.shape != (sd.state_dim,) or du.shape != (sd.input_dim,):
        raise DimensionError("perturbation dimensions do not match the bundle")
    dz = np.concatenate([dx, du])
    return np.asarray(f_nominal, dtype=float) + sd.A @ dx + sd.B @ du + 0.5 * np.einsum("lij,i,j->l", sd.G, dz, dz)
