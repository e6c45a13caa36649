"""Backward recursions for the stagewise Newton and DDP game iterations.

Both passes sweep ``k = T-1, ..., 0`` and, for every player ``n``, form the
stage matrix

    Γ_n = M_n + E^T S_n E + blockdiag(0, D_n),   E = [[1, 0, 0], [0, A, B]]

where ``D_n = Σ_l w_n^l G^l`` carries the second-order dynamics. The two
methods differ only in the weight row ``w_n``: Newton uses the costate ``Ω``
(gradient of the cost-to-go with controls held fixed), DDP uses the gradient
column of the propagated value matrix ``S̃``.

Each player's own-input rows of ``Γ_n`` are stacked into ``F δu + P δx + H = 0``
and solved for the affine stage policy ``δu = K δx + s``.

Two value updates are offered:

``"open_loop"`` (default)
    ``S_n ← (Γ_n L)[:1+n_x]`` with ``L = [[1, 0], [0, I], [s, K]]``. Player
    ``n`` treats the other players' future inputs as fixed, which makes the
    Newton pass reproduce the Newton step on the stacked stationarity
    conditions exactly. ``S_n`` is not symmetric for ``N > 1``.

``"feedback"``
    ``S_n ← L^T Γ_n L``. Every player anticipates the others' feedback gains.
    ``S_n`` stays symmetric; fixed points are feedback rather than open-loop
    stationary. For ``N = 1`` the two updates coincide.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .derivatives import StageDerivatives, TerminalDerivatives
from .model import Array

VALUE_UPDATES = ("open_loop", "feedback")

# reciprocal condition number below which a stage game counts as singular
RCOND_MIN = 1e-12


class StageGameError(np.linalg.LinAlgError):
    """The stacked stage matrix ``F_k`` is singular or badly conditioned."""

    def __init__(self, stage: int | None, rcond: float):
        self.stage = stage
        self.rcond = rcond
        super().__init__(f"stage game unsolvable at k={stage} (reciprocal condition {rcond:.3e})")


@dataclass(frozen=True)
class AffinePolicy:
    """``u_k = ū_k + K[k] (x_k - x̄_k) + s[k]``."""

    K: Array  # (T, n_u, n_x)
    s: Array  # (T, n_u)

    @property
    def horizon(self) -> int:
        return self.s.shape[0]


@dataclass(frozen=True)
class RegularizationEvent:
    stage: int
    player: int
    min_eig: float
    shift: float


@dataclass
class RegularizationLog:
    events: list[RegularizationEvent] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def regularized_stages(self) -> int:
        return len({e.stage for e in self.events})


@dataclass(frozen=True)
class ValueBundle:
    """Everything the backward pass produces besides the policy.

    ``S[k, n]`` is player ``n``'s value matrix at stage ``k`` (``k = T`` is the
    terminal quadraticization). ``omega`` is only filled by the Newton pass.
    ``gammas``/``gammas_raw`` (after/before regularization) and ``D`` are kept
    only when the pass runs with ``capture=True``.
    """

    S: Array  # (T+1, N, 1+n_x, 1+n_x)
    omega: Array | None  # (T+1, N, n_x)
    F: Array  # (T, n_u, n_u)
    P: Array  # (T, n_u, n_x)
    H: Array  # (T, n_u)
    gammas: Array | None = None  # (T, N, 1+n_z, 1+n_z)
    gammas_raw: Array | None = None
    D: Array | None = None  # (T, N, n_z, n_z)


class StageGame(NamedTuple):
    F: Array
    P: Array
    H: Array
    K: Array
    s: Array


def regularize(gamma: Array, lam: float) -> tuple[Array, float]:
    """Shift ``gamma`` so its smallest eigenvalue is at least ``lam``.

    The eigenvalue is taken on the symmetric part. ``lam == 0`` disables the
    shift.

    >>> regularize(np.diag([-1.0, 5.0]), 1.0)[1]
    2.0
    """
    if lam < 0:
        raise ValueError("regularization magnitude must be nonnegative")
    gamma = np.asarray(gamma, dtype=float)
    if lam == 0:
        return gamma, 0.0
    if not np.all(np.isfinite(gamma)):
        raise np.linalg.LinAlgError("cannot regularize a matrix with non-finite entries")
    e = float(np.linalg.eigvalsh(0.5 * (gamma + gamma.T))[0])
    if e < lam:
        shift = lam - e
        return gamma + shift * np.eye(gamma.shape[0]), shift
    return gamma, 0.0


def solve_stage_game(gammas: Array, input_dims: Sequence[int], *, stage: int | None = None) -> StageGame:
    """Solve the stage equilibrium ``F δu + P δx + H = 0`` for ``K`` and ``s``.

    Args:
        gammas: per-player stage matrices, shape ``(N, 1+n_x+n_u, 1+n_x+n_u)``
            laid out as ``[1, x, u_1, ..., u_N]``.
        input_dims: per-player input sizes.
        stage: stage index, only used in error messages.

    Raises:
        StageGameError: if ``F`` is numerically singular.
    """
    gammas = np.asarray(gammas, dtype=float)
    nu = int(sum(input_dims))
    nx = gammas.shape[-1] - 1 - nu
    F = np.empty((nu, nu))
    P = np.empty((nu, nx))
    H = np.empty(nu)
    row = 0
    for n, d in enumerate(input_dims):
        rows = slice(1 + nx + row, 1 + nx + row + d)
        F[row : row + d] = gammas[n, rows, 1 + nx :]
        P[row : row + d] = gammas[n, rows, 1 : 1 + nx]
        H[row : row + d] = gammas[n, rows, 0]
        row += d
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(F)
    rcond = 1.0 / cond if np.isfinite(cond) and cond > 0 else 0.0
    if rcond < RCOND_MIN:
        raise StageGameError(stage, rcond)
    sol = np.linalg.solve(F, -np.column_stack([H, P]))
    return StageGame(F, P, H, sol[:, 1:], sol[:, 0])


def _backward(
    stage_derivs: Sequence[StageDerivatives],
    terminal: TerminalDerivatives,
    lam: float,
    *,
    costate_weights: bool,
    value_update: str,
    capture: bool,
    correction_scale: float = 1.0,
) -> tuple[AffinePolicy, ValueBundle, RegularizationLog]:
    if value_update not in VALUE_UPDATES:
        raise ValueError(f"value_update must be one of {VALUE_UPDATES}, got {value_update!r}")
    T = len(stage_derivs)
    if T == 0:
        raise ValueError("need at least one stage")
    dims = stage_derivs[0].input_dims
    N = len(dims)
    nx = stage_derivs[0].state_dim
    nu = stage_derivs[0].input_dim
    nz = nx + nu
    feedback = value_update == "feedback"

    S_all = np.empty((T + 1, N, 1 + nx, 1 + nx))
    S = np.array(terminal.V, dtype=float)
    S_all[T] = S
    omega_all = np.empty((T + 1, N, nx)) if costate_weights else None
    omega = S[:, 0, 1:].copy()
    if omega_all is not None:
        omega_all[T] = omega

    K = np.empty((T, nu, nx))
    s = np.empty((T, nu))
    F = np.empty((T, nu, nu))
    P = np.empty((T, nu, nx))
    H = np.empty((T, nu))
    gam_all = np.empty((T, N, 1 + nz, 1 + nz)) if capture else None
    raw_all = np.empty((T, N, 1 + nz, 1 + nz)) if capture else None
    D_all = np.empty((T, N, nz, nz)) if capture else None
    log = RegularizationLog()

    E = np.zeros((1 + nx, 1 + nz))
    E[0, 0] = 1.0
    L = np.zeros((1 + nz, 1 + nx))
    L[: 1 + nx, : 1 + nx] = np.eye(1 + nx)

    for k in range(T - 1, -1, -1):
        sd = stage_derivs[k]
        E[1:, 1 : 1 + nx] = sd.A
        E[1:, 1 + nx :] = sd.B
        gammas = sd.M + np.einsum("ai,nab,bj->nij", E, S, E)
        # Newton weights the dynamics curvature by the costate; DDP by the
        # gradient column of the propagated value matrix
        weights = omega if costate_weights else S[:, 1:, 0]
        D = correction_scale * np.einsum("nl,lij->nij", weights, sd.G)
        gammas[:, 1:, 1:] += D
        if capture:
            raw_all[k] = gammas
            D_all[k] = D
        if lam > 0:
            for n in range(N):
                gammas[n], shift = regularize(gammas[n], lam)
                if shift > 0:
                    log.events.append(RegularizationEvent(k, n, lam - shift, shift))
        if capture:
            gam_all[k] = gammas

        game = solve_stage_game(gammas, dims, stage=k)
        F[k], P[k], H[k], K[k], s[k] = game
        L[1 + nx :, 0] = game.s
        L[1 + nx :, 1:] = game.K
        GL = gammas @ L
        if feedback:
            S = np.einsum("ia,nib->nab", L, GL)
            S = 0.5 * (S + np.swapaxes(S, -1, -2))
        else:
            S = GL[:, : 1 + nx, :].copy()
        S_all[k] = S
        if costate_weights:
            omega = sd.M[:, 0, 1 : 1 + nx] + omega @ sd.A
            omega_all[k] = omega

    values = ValueBundle(S_all, omega_all, F, P, H, gam_all, raw_all, D_all)
    return AffinePolicy(K, s), values, log


def newton_backward(
    stage_derivs: Sequence[StageDerivatives],
    terminal: TerminalDerivatives,
    lam: float = 0.0,
    *,
    value_update: str = "open_loop",
    capture: bool = False,
) -> tuple[AffinePolicy, ValueBundle, RegularizationLog]:
    """Stagewise Newton backward pass.

    The costate ``Ω_{n,k} = c_x + Ω_{n,k+1} A_k`` starts from the terminal cost
    gradient and weights the dynamics curvature ``D_{n,k} = Σ_l Ω^l_{n,k+1} G^l_k``.
    """
    return _backward(
        stage_derivs,
        terminal,
        lam,
        costate_weights=True,
        value_update=value_update,
        capture=capture,
    )


def ddp_backward(
    stage_derivs: Sequence[StageDerivatives],
    terminal: TerminalDerivatives,
    lam: float = 0.0,
    *,
    value_update: str = "open_loop",
    capture: bool = False,
    correction_scale: float = 1.0,
) -> tuple[AffinePolicy, ValueBundle, RegularizationLog]:
    """DDP backward pass: curvature weighted by the value gradient ``S̃^{x1}_{n,k+1}``.

    ``correction_scale`` multiplies that curvature term; anything other than
    1.0 is a deliberate fault used by the verification suite.
    """
    return _backward(
        stage_derivs,
        terminal,
        lam,
        costate_weights=False,
        value_update=value_update,
        capture=capture,
        correction_scale=correction_scale,
    )
