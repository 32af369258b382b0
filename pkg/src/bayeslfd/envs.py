"""Simulated task contexts with programmatic expert demonstrators.

Two families of contexts are provided: a double integrator (point mass on
a frictionless line, goal at the origin) and a torque-driven pendulum
swing-up.  A context fixes the dynamics parameters, the reward weights and
the episode horizon; varying e.g. the mass across contexts produces the
hidden task variations the temporal-window policy has to pick up on.

Experts: a discrete LQR regulator for the integrator, and an
energy-pumping swing-up with an LQR catch about the upright for the
pendulum.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.81

# Swing-up energy-pump gain; saturates against the action limit far from
# the target energy and tapers off as the target is approached.
SWINGUP_GAIN = 2.0

# Pump toward slightly more than the upright energy: the discrete-time energy
# estimate reads high near the bottom, and damping bleeds energy, so aiming
# exactly at the upright energy stalls just outside the catch basin.
ENERGY_TARGET_MARGIN = 1.05

# Handoff region for the pendulum's stabilizing regulator.
CATCH_ANGLE = 0.3
CATCH_RATE = 2.0

RICCATI_TOL = 1e-10
RICCATI_MAX_ITER = 100_000


class SimulationDiverged(RuntimeError):
    """A state stopped being finite during integration."""


class RiccatiFailure(RuntimeError):
    """The Riccati fixed-point iteration did not converge."""


@dataclass(frozen=True)
class Context:
    """A hidden task variant: dynamics + reward + episode length.

    ``length`` and ``damping`` are only meaningful for the pendulum.
    """

    id: str
    kind: str  # "double_integrator" | "pendulum"
    mass: float
    dt: float
    horizon: int
    w_pos: float
    w_vel: float
    w_act: float
    action_limit: float
    length: float = 1.0
    damping: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("double_integrator", "pendulum"):
            raise ValueError(f"unknown context kind: {self.kind!r}")
        if self.mass <= 0 or self.dt <= 0 or self.horizon < 1:
            raise ValueError("mass, dt must be positive and horizon >= 1")
        if self.kind == "pendulum" and self.length <= 0:
            raise ValueError("pendulum length must be positive")
        if self.action_limit <= 0:
            raise ValueError("action_limit must be positive")
        if min(self.w_pos, self.w_vel, self.w_act) < 0:
            raise ValueError("reward weights must be nonnegative")

    @property
    def state_dim(self) -> int:
        return 2

    @property
    def action_dim(self) -> int:
        return 1


def make_integrator_context(
    mass: float,
    *,
    dt: float = 0.05,
    horizon: int = 200,
    w_pos: float = 1.0,
    w_vel: float = 0.1,
    w_act: float = 0.001,
    action_limit: float = 5.0,
    id: str | None = None,
) -> Context:
    return Context(
        id=id if id is not None else f"di-m{mass:g}",
        kind="double_integrator",
        mass=mass,
        dt=dt,
        horizon=horizon,
        w_pos=w_pos,
        w_vel=w_vel,
        w_act=w_act,
        action_limit=action_limit,
    )


def make_pendulum_context(
    mass: float,
    length: float = 1.0,
    *,
    damping: float = 0.02,
    dt: float = 0.05,
    horizon: int = 300,
    w_pos: float = 1.0,
    w_vel: float = 0.1,
    w_act: float = 0.001,
    action_limit: float | None = None,
    id: str | None = None,
) -> Context:
    # Default torque limit scales with the gravity torque so swing-up and
    # catch remain feasible across the whole mass/length family.
    limit = action_limit if action_limit is not None else mass * GRAVITY * length
    return Context(
        id=id if id is not None else f"pend-m{mass:g}-l{length:g}",
        kind="pendulum",
        mass=mass,
        length=length,
        damping=damping,
        dt=dt,
        horizon=horizon,
        w_pos=w_pos,
        w_vel=w_vel,
        w_act=w_act,
        action_limit=limit,
    )


INTEGRATOR_MASSES = (0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0)
PENDULUM_MASSES = (0.5, 1.0, 1.5, 2.0)
PENDULUM_LENGTHS = (0.5, 1.0)


def integrator_family(**kwargs) -> list[Context]:
    return [make_integrator_context(m, **kwargs) for m in INTEGRATOR_MASSES]


def pendulum_family(**kwargs) -> list[Context]:
    return [
        make_pendulum_context(m, l, **kwargs)
        for m in PENDULUM_MASSES
        for l in PENDULUM_LENGTHS
    ]


@dataclass
class Trajectory:
    """One episode: states s_0..s_T, actions a_0..a_{T-1}, rewards r_0..r_{T-1}."""

    states: np.ndarray  # (T+1, state_dim)
    actions: np.ndarray  # (T, action_dim)
    rewards: np.ndarray  # (T,)
    context_id: str = ""
    episode_id: int = 0

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if self.states.shape[0] != self.actions.shape[0] + 1:
            raise ValueError("need exactly one terminal state beyond the actions")
        if self.rewards.shape[0] != self.actions.shape[0]:
            raise ValueError("one reward per action")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(theta, 2.0 * math.pi)
    if w <= -math.pi:
        w += 2.0 * math.pi
    return w


def clip_action(ctx: Context, a: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(a, dtype=np.float64).reshape(-1), -ctx.action_limit, ctx.action_limit)


def upright_error(theta: float) -> float:
    """Signed angular distance from the upright position."""
    return wrap_angle(theta - math.pi)


def pendulum_energy(ctx: Context, s: np.ndarray) -> float:
    """Total mechanical energy, zero potential at the pivot height."""
    theta, omega = float(s[0]), float(s[1])
    m, l = ctx.mass, ctx.length
    return 0.5 * m * l * l * omega * omega - m * GRAVITY * l * math.cos(theta)


def reward(ctx: Context, s: np.ndarray, a_clipped: np.ndarray) -> float:
    """Quadratic state/action cost, integrated over one step of length dt."""
    q = float(s[1])
    if ctx.kind == "double_integrator":
        p = float(s[0])
    else:
        p = upright_error(float(s[0]))
    u = float(a_clipped[0])
    return -ctx.dt * (ctx.w_pos * p * p + ctx.w_vel * q * q + ctx.w_act * u * u)


def step(ctx: Context, s: np.ndarray, a) -> tuple[np.ndarray, float]:
    """Semi-implicit Euler step; the action is clipped before it is applied."""
    a_c = clip_action(ctx, a)
    r = reward(ctx, s, a_c)
    u = float(a_c[0])
    if ctx.kind == "double_integrator":
        v = float(s[1]) + (u / ctx.mass) * ctx.dt
        x = float(s[0]) + v * ctx.dt
        nxt = np.array([x, v])
    else:
        m, l, b = ctx.mass, ctx.length, ctx.damping
        theta, omega = float(s[0]), float(s[1])
        alpha = -(GRAVITY / l) * math.sin(theta) - (b / (m * l * l)) * omega + u / (m * l * l)
        omega_n = omega + alpha * ctx.dt
        theta_n = wrap_angle(theta + omega_n * ctx.dt)
        nxt = np.array([theta_n, omega_n])
    if not np.all(np.isfinite(nxt)):
        raise SimulationDiverged(f"non-finite state in context {ctx.id}: {nxt}")
    return nxt, r


def reset(ctx: Context, rng: np.random.Generator) -> np.ndarray:
    if ctx.kind == "double_integrator":
        return np.array([rng.uniform(-2.0, 2.0), rng.uniform(-0.5, 0.5)])
    return np.array([rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)])


def _linearized_dynamics(ctx: Context) -> tuple[np.ndarray, np.ndarray]:
    """Exact discrete linearization of the semi-implicit update.

    Integrator: about the origin. Pendulum: about the upright, in the
    coordinates (angle-to-upright, angular rate).
    """
    dt = ctx.dt
    if ctx.kind == "double_integrator":
        m = ctx.mass
        A = np.array([[1.0, dt], [0.0, 1.0]])
        B = np.array([[dt * dt / m], [dt / m]])
        return A, B
    m, l, b = ctx.mass, ctx.length, ctx.damping
    g_l = GRAVITY / l
    c = b / (m * l * l)
    A = np.array([[1.0 + g_l * dt * dt, dt - c * dt * dt], [g_l * dt, 1.0 - c * dt]])
    B = np.array([[dt * dt / (m * l * l)], [dt / (m * l * l)]])
    return A, B


@functools.lru_cache(maxsize=None)
def solve_lqr(ctx: Context) -> np.ndarray:
    """Feedback gain K (1 x 2) from the discrete Riccati fixed point.

    Iterates P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA until the sup-norm
    change drops below RICCATI_TOL, then checks closed-loop stability.
    """
    A, B = _linearized_dynamics(ctx)
    Q = np.diag([ctx.w_pos, ctx.w_vel])
    R = np.array([[max(ctx.w_act, 1e-3)]])
    P = Q.copy()
    for _ in range(RICCATI_MAX_ITER):
        BtP = B.T @ P
        K = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ (A - B @ K)
        if np.max(np.abs(P_next - P)) < RICCATI_TOL:
            P = P_next
            break
        P = P_next
    else:
        raise RiccatiFailure(f"no convergence after {RICCATI_MAX_ITER} iterations")
    BtP = B.T @ P
    K = np.linalg.solve(R + BtP @ B, BtP @ A)
    eigvals = np.linalg.eigvals(A - B @ K)
    if np.max(np.abs(eigvals)) >= 1.0:
        raise RiccatiFailure(f"closed loop unstable: spectral radius {np.max(np.abs(eigvals))}")
    return K


def expert_action(ctx: Context, s: np.ndarray) -> np.ndarray:
    """Demonstrator policy: LQR for the integrator, swing-up + catch for the pendulum."""
    if ctx.kind == "double_integrator":
        K = solve_lqr(ctx)
        a = -(K @ np.asarray(s, dtype=np.float64).reshape(2))
        return clip_action(ctx, a)
    theta, omega = float(s[0]), float(s[1])
    phi = upright_error(theta)
    if abs(phi) < CATCH_ANGLE and abs(omega) < CATCH_RATE:
        K = solve_lqr(ctx)
        a = -(K @ np.array([phi, omega]))
        return clip_action(ctx, a)
    # Torque acting directly on the joint changes energy at rate a * omega,
    # so pumping follows sign(omega).
    m, l = ctx.mass, ctx.length
    e_target = ENERGY_TARGET_MARGIN * m * GRAVITY * l
    e = pendulum_energy(ctx, s)
    a = SWINGUP_GAIN * (e_target - e) * np.sign(omega)
    return clip_action(ctx, np.array([a]))


def rollout(
    ctx: Context,
    policy_fn,
    s0: np.ndarray,
    horizon: int | None = None,
    episode_id: int = 0,
) -> Trajectory:
    """Roll a state-feedback policy for ``horizon`` steps from ``s0``."""
    h = ctx.horizon if horizon is None else horizon
    states = [np.asarray(s0, dtype=np.float64)]
    actions = []
    rewards = []
    s = states[0]
    for _ in range(h):
        a = clip_action(ctx, policy_fn(ctx, s))
        s, r = step(ctx, s, a)
        states.append(s)
        actions.append(a)
        rewards.append(r)
    return Trajectory(
        states=np.stack(states),
        actions=np.stack(actions),
        rewards=np.array(rewards),
        context_id=ctx.id,
        episode_id=episode_id,
    )


def get_demonstrations(
    ctx: Context, n_episodes: int, rng: np.random.Generator
) -> list[Trajectory]:
    """Expert rollouts of full horizon length from random reset states."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    return [
        rollout(ctx, expert_action, reset(ctx, rng), episode_id=ep)
        for ep in range(n_episodes)
    ]


def export_trajectory(traj: Trajectory, path, ctx: Context | None = None) -> None:
    """Write one episode as CSV: t, state..., action..., reward."""
    dim_s = traj.states.shape[1]
    dim_a = traj.actions.shape[1]
    cols = ["t"] + [f"s{i + 1}" for i in range(dim_s)] + [f"a{i + 1}" for i in range(dim_a)] + ["r"]
    with open(path, "w", newline="") as f:
        ctx_id = ctx.id if ctx is not None else traj.context_id
        f.write(f"# context={ctx_id} episode={traj.episode_id}\n")
        f.write(",".join(cols) + "\n")
        for t in range(traj.length):
            row = [str(t)]
            row += [f"{v:.17g}" for v in traj.states[t]]
            row += [f"{v:.17g}" for v in traj.actions[t]]
            row.append(f"{traj.rewards[t]:.17g}")
            f.write(",".join(row) + "\n")
