"""Problem catalog: the owner-dog and planar-robot games plus random test games."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .model import Array, GameProblem, rollout


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _tanh_derivs(u: Array) -> tuple[Array, Array, Array]:
    t = np.tanh(u)
    d1 = 1.0 - t * t
    return t, d1, -2.0 * t * d1


# --------------------------------------------------------------------------
# owner-dog


def owner_dog(
    horizon: int = 10,
    target: float = 1.0,
    dog_home: float = 2.0,
    dog_weight: float = 40.0,
    terminal_weight: float = 100.0,
) -> GameProblem:
    """1-D owner (player 0) and dog (player 1), one scalar input each.

    ``x_{i,k+1} = x_{i,k} + tanh(u_{i,k})``. The owner wants to reach
    ``target`` while keeping the dog near ``dog_home``; the dog only chases the
    owner. Both pay the squared input.
    """
    nx, nz = 2, 4

    def dynamics(k, x, u):
        return x + np.tanh(u)

    def dynamics_derivs(k, x, u):
        _, d1, d2 = _tanh_derivs(u)
        G = np.zeros((nx, nz, nz))
        G[0, 2, 2] = d2[0]
        G[1, 3, 3] = d2[1]
        return np.eye(nx), np.diag(d1), G

    def owner_terms(x, w):
        """w*sigmoid((x0-target)^2) + dog_weight*(x1-dog_home)^2 and derivatives."""
        e = x[0] - target
        q = e * e
        sg = sigmoid(q)
        s1 = sg * (1 - sg)
        s2 = s1 * (1 - 2 * sg)
        f = w * sg + dog_weight * (x[1] - dog_home) ** 2
        g = np.array([w * s1 * 2 * e, 2 * dog_weight * (x[1] - dog_home)])
        H = np.diag([w * (s2 * 4 * q + 2 * s1), 2 * dog_weight])
        return f, g, H

    def dog_terms(x):
        t = np.tanh(x[0] - x[1])
        f = t * t
        g1 = 2 * t * (1 - t * t)
        g2 = 2 * (1 - t * t) * (1 - 3 * t * t)
        v = np.array([1.0, -1.0])
        return f, g1 * v, g2 * np.outer(v, v)

    def stage_cost(k, x, u):
        return np.array(
            [
                sigmoid((x[0] - target) ** 2) + dog_weight * (x[1] - dog_home) ** 2 + u[0] ** 2,
                np.tanh(x[0] - x[1]) ** 2 + u[1] ** 2,
            ]
        )

    def stage_cost_derivs(k, x, u):
        c = np.empty(2)
        g = np.zeros((2, nz))
        H = np.zeros((2, nz, nz))
        f, gx, Hx = owner_terms(x, 1.0)
        c[0] = f + u[0] ** 2
        g[0, :2], g[0, 2] = gx, 2 * u[0]
        H[0, :2, :2], H[0, 2, 2] = Hx, 2.0
        f, gx, Hx = dog_terms(x)
        c[1] = f + u[1] ** 2
        g[1, :2], g[1, 3] = gx, 2 * u[1]
        H[1, :2, :2], H[1, 3, 3] = Hx, 2.0
        return c, g, H

    def terminal_cost(x):
        return np.array(
            [
                terminal_weight * sigmoid((x[0] - target) ** 2) + dog_weight * (x[1] - dog_home) ** 2,
                np.tanh(x[0] - x[1]) ** 2,
            ]
        )

    def terminal_cost_derivs(x):
        f0, g0, H0 = owner_terms(x, terminal_weight)
        f1, g1, H1 = dog_terms(x)
        return np.array([f0, f1]), np.stack([g0, g1]), np.stack([H0, H1])

    return GameProblem(
        num_players=2,
        horizon=horizon,
        state_dim=nx,
        input_dims=(1, 1),
        dynamics=dynamics,
        dynamics_derivs=dynamics_derivs,
        stage_cost=stage_cost,
        stage_cost_derivs=stage_cost_derivs,
        terminal_cost=terminal_cost,
        terminal_cost_derivs=terminal_cost_derivs,
        name="owner-dog",
        params=dict(
            horizon=horizon,
            target=target,
            dog_home=dog_home,
            dog_weight=dog_weight,
            terminal_weight=terminal_weight,
        ),
    )


# --------------------------------------------------------------------------
# planar robots

PLANAR_GOALS = ((-1.0, 0.0), (0.5, -0.866), (0.5, 0.866))
PLANAR_X0 = (1.96, 0.24, -0.72, 1.39, -0.49, -2.00)


def _barrier(h: float) -> tuple[float, float, float]:
    """-log(1 - exp(-h)) and its first two derivatives in h."""
    em = np.expm1(h)  # e^h - 1
    return -np.log(-np.expm1(-h)), -1.0 / em, (em + 1.0) / em**2


def planar_robots(
    horizon: int = 119,
    dt: float = 0.04,
    alpha: float = 10.0,
    beta: float = 3.0,
    radius: float = 0.25,
    clearance_floor: float = 0.01,
    goals=PLANAR_GOALS,
) -> GameProblem:
    """Three disc robots on a plane steering to their own goals.

    Robot ``n`` moves by ``tanh(u_n) * dt`` per step and pays a goal cost
    ``alpha * (1 - exp(-|p_n - g_n|^2))``, the squared input and a log barrier
    ``beta * sum_i -log(1 - exp(-max(clearance_in, clearance_floor)))`` on its
    clearance to every other robot. At the floor the barrier is constant. The
    terminal cost is the stage cost without the input term.
    """
    goals = np.asarray(goals, dtype=float)
    N = goals.shape[0]
    nx = nu = 2 * N
    nz = nx + nu
    radii = np.full(N, float(radius))
    pairs = [(i, j) for i in range(N) for j in range(i + 1, N)]

    def dynamics(k, x, u):
        return x + np.tanh(u) * dt

    def dynamics_derivs(k, x, u):
        _, d1, d2 = _tanh_derivs(u)
        G = np.zeros((nx, nz, nz))
        idx = np.arange(nx)
        G[idx, nx + idx, nx + idx] = dt * d2
        return np.eye(nx), np.diag(dt * d1), G

    def state_costs(x, derivs: bool):
        """Goal and avoidance parts of every player's cost as a function of x."""
        p = x.reshape(N, 2)
        c = np.zeros(N)
        g = np.zeros((N, nx)) if derivs else None
        H = np.zeros((N, nx, nx)) if derivs else None
        for n in range(N):
            e = p[n] - goals[n]
            ex = np.exp(-e @ e)
            c[n] += alpha * (1.0 - ex)
            if derivs:
                sl = slice(2 * n, 2 * n + 2)
                g[n, sl] += alpha * ex * 2 * e
                H[n, sl, sl] += alpha * ex * (2 * np.eye(2) - 4 * np.outer(e, e))
        for i, j in pairs:
            diff = p[i] - p[j]
            dist = float(np.sqrt(diff @ diff))
            h = dist - radii[i] - radii[j]
            if h <= clearance_floor:
                val, d1, d2 = _barrier(clearance_floor)[0], 0.0, 0.0
            else:
                val, d1, d2 = _barrier(h)
            c[i] += beta * val
            c[j] += beta * val
            if derivs and d1 != 0.0:
                e = diff / dist
                # h as a function of (p_i, p_j)
                gh = np.concatenate([e, -e])
                Hd = (np.eye(2) - np.outer(e, e)) / dist
                Hh = np.block([[Hd, -Hd], [-Hd, Hd]])
                gb = beta * d1 * gh
                Hb = beta * (d2 * np.outer(gh, gh) + d1 * Hh)
                cols = np.r_[2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
                for n in (i, j):
                    g[n, cols] += gb
                    H[n][np.ix_(cols, cols)] += Hb
        return c, g, H

    def stage_cost(k, x, u):
        c, _, _ = state_costs(x, False)
        return c + (u.reshape(N, 2) ** 2).sum(axis=1)

    def stage_cost_derivs(k, x, u):
        cx, gx, Hx = state_costs(x, True)
        c = cx + (u.reshape(N, 2) ** 2).sum(axis=1)
        g = np.zeros((N, nz))
        H = np.zeros((N, nz, nz))
        g[:, :nx] = gx
        H[:, :nx, :nx] = Hx
        for n in range(N):
            sl = slice(nx + 2 * n, nx + 2 * n + 2)
            g[n, sl] = 2 * u[2 * n : 2 * n + 2]
            H[n, sl, sl] = 2 * np.eye(2)
        return c, g, H

    def terminal_cost(x):
        return state_costs(x, False)[0]

    def terminal_cost_derivs(x):
        return state_costs(x, True)

    return GameProblem(
        num_players=N,
        horizon=horizon,
        state_dim=nx,
        input_dims=(2,) * N,
        dynamics=dynamics,
        dynamics_derivs=dynamics_derivs,
        stage_cost=stage_cost,
        stage_cost_derivs=stage_cost_derivs,
        terminal_cost=terminal_cost,
        terminal_cost_derivs=terminal_cost_derivs,
        name="planar-robots",
        params=dict(
            horizon=horizon,
            dt=dt,
            alpha=alpha,
            beta=beta,
            radius=radius,
            clearance_floor=clearance_floor,
            goals=goals.tolist(),
        ),
    )


def pairwise_clearances(problem: GameProblem, states: Array) -> Array:
    """Clearance between every pair of robots at every stage, shape ``(T+1, n_pairs)``."""
    N = problem.num_players
    r = problem.params["radius"]
    p = np.asarray(states).reshape(len(states), N, 2)
    out = [
        np.linalg.norm(p[:, i] - p[:, j], axis=1) - 2 * r for i in range(N) for j in range(i + 1, N)
    ]
    return np.stack(out, axis=1)


def push_pull_controls(
    problem: GameProblem,
    x0,
    attraction: float = 1.0,
    repulsion: float = 0.5,
) -> Array:
    """Naive initializer for the robot game.

    Each robot is pulled toward its goal proportionally to the offset and
    pushed away from every other robot with strength ``repulsion / d^2``.
    The closed-loop inputs become the open-loop initial control sequence.
    """
    goals = np.asarray(problem.params["goals"], dtype=float)
    N = goals.shape[0]
    dt = problem.params["dt"]
    x = np.asarray(x0, dtype=float).copy()
    u = np.empty((problem.horizon, problem.input_dim))
    for k in range(problem.horizon):
        p = x.reshape(N, 2)
        cmd = attraction * (goals - p)
        for n in range(N):
            for i in range(N):
                if i != n:
                    d = p[n] - p[i]
                    dist = np.linalg.norm(d)
                    cmd[n] += repulsion * d / dist**3
        u[k] = cmd.reshape(-1)
        x = x + np.tanh(u[k]) * dt
    return u


# --------------------------------------------------------------------------
# random games


def _random_dynamics_matrices(rng: np.random.Generator, nx: int, nu: int, max_radius: float):
    A = rng.normal(size=(nx, nx))
    radius = np.max(np.abs(np.linalg.eigvals(A)))
    A *= rng.uniform(0.5, max_radius) / radius
    B = rng.normal(size=(nx, nu))
    return A, B


def _random_player_costs(rng, N, nx, input_dims, own_min_eig=0.1):
    """Convex quadratic per-player stage and terminal costs."""
    nu = sum(input_dims)
    nz = nx + nu
    offsets = np.cumsum((0,) + tuple(input_dims[:-1]))
    Hs, gs, Qs, qs = [], [], [], []
    for n in range(N):
        W = rng.normal(size=(nz, nz)) / np.sqrt(nz)
        Hn = W @ W.T
        sl = slice(nx + offsets[n], nx + offsets[n] + input_dims[n])
        Hn[sl, sl] += own_min_eig * np.eye(input_dims[n])
        Hs.append(Hn)
        gs.append(rng.normal(size=nz))
        V = rng.normal(size=(nx, nx)) / np.sqrt(nx)
        Qs.append(V @ V.T)
        qs.append(rng.normal(size=nx))
    return np.stack(Hs), np.stack(gs), np.stack(Qs), np.stack(qs)


def random_lq_game(
    seed: int = 0,
    num_players: int = 2,
    state_dim: int = 3,
    input_dims=(1, 1),
    horizon: int = 10,
    max_radius: float = 1.2,
) -> GameProblem:
    """Random linear dynamics with convex quadratic costs.

    The spectral radius of ``A`` is drawn in ``[0.5, max_radius]``. Every
    player's own-input Hessian block is ``W W^T + 0.1 I``.
    """
    input_dims = tuple(int(d) for d in input_dims)
    if len(input_dims) != num_players:
        raise ValueError("need one input dimension per player")
    rng = np.random.default_rng(seed)
    nx, nu = state_dim, sum(input_dims)
    nz = nx + nu
    A, B = _random_dynamics_matrices(rng, nx, nu, max_radius)
    Hs, gs, Qs, qs = _random_player_costs(rng, num_players, nx, input_dims)
    G0 = np.zeros((nx, nz, nz))

    def stage_cost(k, x, u):
        z = np.concatenate([x, u])
        return 0.5 * np.einsum("i,nij,j->n", z, Hs, z) + gs @ z

    def stage_cost_derivs(k, x, u):
        z = np.concatenate([x, u])
        return stage_cost(k, x, u), Hs @ z + gs, Hs.copy()

    def terminal_cost(x):
        return 0.5 * np.einsum("i,nij,j->n", x, Qs, x) + qs @ x

    return GameProblem(
        num_players=num_players,
        horizon=horizon,
        state_dim=nx,
        input_dims=input_dims,
        dynamics=lambda k, x, u: A @ x + B @ u,
        dynamics_derivs=lambda k, x, u: (A.copy(), B.copy(), G0.copy()),
        stage_cost=stage_cost,
        stage_cost_derivs=stage_cost_derivs,
        terminal_cost=terminal_cost,
        terminal_cost_derivs=lambda x: (terminal_cost(x), Qs @ x + qs, Qs.copy()),
        name="random-lq",
        params=dict(seed=seed, A=A, B=B, H=Hs, g=gs, Q=Qs, q=qs),
    )


def random_smooth_game(
    seed: int = 0,
    num_players: int = 2,
    state_dim: int = 3,
    input_dims=(1, 1),
    horizon: int = 10,
    nonlinearity: float = 0.5,
    max_radius: float = 1.0,
) -> GameProblem:
    """A random LQ game bent by smooth nonlinear terms.

    Dynamics ``A x + B u + a * tanh(C x + D u)`` and costs
    ``0.5 z^T H_n z + g_n^T z + a * sum_i log cosh(x_i)``, with
    ``a = nonlinearity``.
    """
    input_dims = tuple(int(d) for d in input_dims)
    rng = np.random.default_rng(seed)
    nx, nu = state_dim, sum(input_dims)
    nz = nx + nu
    a = float(nonlinearity)
    A, B = _random_dynamics_matrices(rng, nx, nu, max_radius)
    W = rng.normal(size=(nx, nz)) / np.sqrt(nz)
    Hs, gs, Qs, qs = _random_player_costs(rng, num_players, nx, input_dims)

    def dynamics(k, x, u):
        z = np.concatenate([x, u])
        return A @ x + B @ u + a * np.tanh(W @ z)

    def dynamics_derivs(k, x, u):
        z = np.concatenate([x, u])
        _, d1, d2 = _tanh_derivs(W @ z)
        J = np.hstack([A, B]) + a * d1[:, None] * W
        G = a * d2[:, None, None] * np.einsum("li,lj->lij", W, W)
        return J[:, :nx], J[:, nx:], G

    def logcosh(x):
        return np.logaddexp(x, -x) - np.log(2.0)

    def stage_cost(k, x, u):
        z = np.concatenate([x, u])
        return 0.5 * np.einsum("i,nij,j->n", z, Hs, z) + gs @ z + a * logcosh(x).sum()

    def stage_cost_derivs(k, x, u):
        z = np.concatenate([x, u])
        t = np.tanh(x)
        g = Hs @ z + gs
        g[:, :nx] += a * t
        H = Hs.copy()
        H[:, np.arange(nx), np.arange(nx)] += a * (1 - t * t)
        return stage_cost(k, x, u), g, H

    def terminal_cost(x):
        return 0.5 * np.einsum("i,nij,j->n", x, Qs, x) + qs @ x + a * logcosh(x).sum()

    def terminal_cost_derivs(x):
        t = np.tanh(x)
        g = Qs @ x + qs + a * t
        H = Qs + a * np.diag(1 - t * t)
        return terminal_cost(x), g, H

    return GameProblem(
        num_players=num_players,
        horizon=horizon,
        state_dim=nx,
        input_dims=input_dims,
        dynamics=dynamics,
        dynamics_derivs=dynamics_derivs,
        stage_cost=stage_cost,
        stage_cost_derivs=stage_cost_derivs,
        terminal_cost=terminal_cost,
        terminal_cost_derivs=terminal_cost_derivs,
        name="random-smooth",
        params=dict(seed=seed, nonlinearity=a),
    )


# --------------------------------------------------------------------------
# registry


@dataclass(frozen=True)
class ProblemSpecRecord:
    name: str
    horizon: int
    x0: tuple[float, ...] | None
    lam: float
    params: Mapping[str, Any] = field(default_factory=dict)
    builder: Callable[..., GameProblem] | None = None
    description: str = ""


CATALOG: dict[str, ProblemSpecRecord] = {
    "owner-dog": ProblemSpecRecord(
        "owner-dog",
        10,
        (-1.0, 2.0),
        30.0,
        dict(target=1.0, dog_home=2.0, dog_weight=40.0, terminal_weight=100.0),
        owner_dog,
        "1-D owner and dog, two scalar players",
    ),
    "planar-robots": ProblemSpecRecord(
        "planar-robots",
        119,
        PLANAR_X0,
        10.0,
        dict(dt=0.04, alpha=10.0, beta=3.0, radius=0.25, clearance_floor=0.01),
        planar_robots,
        "three disc robots reaching goals without collisions",
    ),
    "random-lq": ProblemSpecRecord(
        "random-lq",
        10,
        None,
        0.0,
        dict(num_players=2, state_dim=3),
        random_lq_game,
        "seeded random linear-quadratic game",
    ),
    "random-smooth": ProblemSpecRecord(
        "random-smooth",
        10,
        None,
        0.0,
        dict(num_players=2, state_dim=3, nonlinearity=0.5),
        random_smooth_game,
        "seeded random game with tanh dynamics and log-cosh costs",
    ),
}

_SEEDED = {"random-lq", "random-smooth"}


def build(
    name: str, *, seed: int = 0, horizon: int | None = None, overrides: Mapping[str, Any] | None = None
) -> tuple[GameProblem, Array, Array]:
    """Construct a catalog problem with its default initial state and controls.

    Raises:
        KeyError: for names not in :data:`CATALOG`.
    """
    if name not in CATALOG:
        raise KeyError(f"unknown problem {name!r}; available: {', '.join(sorted(CATALOG))}")
    rec = CATALOG[name]
    kwargs: dict[str, Any] = dict(rec.params)
    kwargs.update(overrides or {})
    x0_override = kwargs.pop("x0", None)
    kwargs["horizon"] = int(horizon if horizon is not None else kwargs.get("horizon", rec.horizon))
    if name in _SEEDED:
        kwargs["seed"] = seed
        if "input_dims" not in kwargs:
            kwargs["input_dims"] = (1,) * int(kwargs.get("num_players", 2))
    problem = rec.builder(**kwargs)
    if x0_override is not None:
        x0 = np.asarray(x0_override, dtype=float)
    elif rec.x0 is not None:
        x0 = np.asarray(rec.x0, dtype=float)
    else:
        x0 = np.random.default_rng(seed).normal(size=problem.state_dim)
    if name == "planar-robots":
        u0 = push_pull_controls(problem, x0)
    else:
        u0 = np.zeros((problem.horizon, problem.input_dim))
    return problem, x0, u0


def initial_trajectory(name: str, **kwargs):
    problem, x0, u0 = build(name, **kwargs)
    return problem, rollout(problem, x0, u0)
