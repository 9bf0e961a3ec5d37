"""Kinematic 6-DOF arm and the reach-task MDP built on top of it."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Protocol

import numpy as np

PI = np.pi

# UR3 Denavit-Hartenberg rows (a, d, alpha, theta_offset).  The base row
# carries a pi yaw offset so the arm's working side faces +x.
UR3_DH = np.array([
    [0.0, 0.1519, PI / 2, PI],
    [-0.24365, 0.0, 0.0, 0.0],
    [-0.21325, 0.0, 0.0, 0.0],
    [0.0, 0.11235, PI / 2, 0.0],
    [0.0, 0.08535, -PI / 2, 0.0],
    [0.0, 0.0819, 0.0, 0.0],
])
UR3_HOME = np.array([0.0, -2.0, 2.0, 0.0, PI / 2, 0.0])


@dataclass(frozen=True)
class KinematicChain:
    dh: np.ndarray
    joint_limits: np.ndarray = field(default_factory=lambda: np.tile([-PI, PI], (6, 1)))
    v_max: np.ndarray = field(default_factory=lambda: np.ones(6))
    dt: float = 0.05

    def __post_init__(self):
        dh = np.asarray(self.dh, dtype=np.float64)
        limits = np.asarray(self.joint_limits, dtype=np.float64)
        v_max = np.broadcast_to(np.asarray(self.v_max, dtype=np.float64), (6,)).copy()
        if dh.shape != (6, 4):
            raise ValueError(f"expected 6 DH rows of (a, d, alpha, theta_offset), got {dh.shape}")
        if limits.shape != (6, 2) or np.any(limits[:, 0] >= limits[:, 1]):
            raise ValueError("joint limits must be 6 (lo, hi) pairs with lo < hi")
        if np.any(v_max <= 0) or self.dt <= 0:
            raise ValueError("v_max and dt must be positive")
        object.__setattr__(self, "dh", dh)
        object.__setattr__(self, "joint_limits", limits)
        object.__setattr__(self, "v_max", v_max)

    @classmethod
    def ur3(cls, **kwargs) -> "KinematicChain":
        return cls(UR3_DH.copy(), **kwargs)

    @property
    def max_step(self) -> np.ndarray:
        return self.v_max * self.dt


def dh_transform(a: float, d: float, alpha: float, theta: float) -> np.ndarray:
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _check_limits(chain: KinematicChain, joints: np.ndarray) -> np.ndarray:
    q = np.asarray(joints, dtype=np.float64)
    if q.shape != (6,):
        raise ValueError(f"expected 6 joint angles, got shape {q.shape}")
    lo, hi = chain.joint_limits[:, 0], chain.joint_limits[:, 1]
    if np.any(q < lo) or np.any(q > hi) or not np.all(np.isfinite(q)):
        raise ValueError(f"joint angles {q} outside limits")
    return q


def link_frames(chain: KinematicChain, joints) -> list[np.ndarray]:
    """Base frame followed by the frame after each of the 6 joints (4x4 each)."""
    q = _check_limits(chain, joints)
    frames = [np.eye(4)]
    t = frames[0]
    for (a, d, alpha, offset), qi in zip(chain.dh, q):
        t = t @ dh_transform(a, d, alpha, qi + offset)
        frames.append(t)
    return frames


def tip_pose(chain: KinematicChain, joints) -> np.ndarray:
    return link_frames(chain, joints)[-1]


def forward_kinematics(chain: KinematicChain, joints) -> np.ndarray:
    return link_frames(chain, joints)[-1][:3, 3].copy()


def jacobian(chain: KinematicChain, joints, h: float = 1e-5) -> np.ndarray:
    """3x6 positional Jacobian by central differences."""
    q = _check_limits(chain, joints)
    jac = np.zeros((3, 6))
    lo, hi = chain.joint_limits[:, 0], chain.joint_limits[:, 1]
    for j in range(6):
        qp, qm = q.copy(), q.copy()
        qp[j] = min(q[j] + h, hi[j])
        qm[j] = max(q[j] - h, lo[j])
        jac[:, j] = (forward_kinematics(chain, qp) - forward_kinematics(chain, qm)) / (qp[j] - qm[j])
    return jac


# -- rewards -----------------------------------------------------------------

def sparse_reward(tip, target, epsilon: float) -> float:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    d = float(np.linalg.norm(np.asarray(tip) - np.asarray(target)))
    return 1.0 if d < epsilon else 0.0


def continuous_reward(tip, target, epsilon: float, bonus: float = 100.0) -> float:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    d = float(np.linalg.norm(np.asarray(tip) - np.asarray(target)))
    r = float(np.exp(-d))
    return r + bonus if d < epsilon else r


# -- task --------------------------------------------------------------------

@dataclass(frozen=True)
class TaskConfig:
    epsilon: float = 0.05
    target_low: tuple[float, float, float] = (0.15, -0.05, 0.05)
    target_high: tuple[float, float, float] = (0.45, 0.25, 0.35)
    reward_kind: str = "continuous"
    success_bonus: float = 100.0
    terminate_on_success: bool = True
    active_joints: int = 6
    home: tuple[float, ...] = tuple(float(x) for x in UR3_HOME)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.reward_kind not in ("sparse", "continuous"):
            raise ValueError(f"reward_kind must be 'sparse' or 'continuous', got {self.reward_kind!r}")
        if any(lo > hi for lo, hi in zip(self.target_low, self.target_high)):
            raise ValueError("target box low corner must not exceed high corner")
        if not 1 <= self.active_joints <= 6:
            raise ValueError("active_joints must be in 1..6")
        if len(self.home) != 6:
            raise ValueError("home must have 6 joint angles")

    @property
    def active_mask(self) -> np.ndarray:
        return np.arange(6) < self.active_joints


@dataclass
class ArmState:
    joints: np.ndarray
    tip: np.ndarray
    target: np.ndarray
    step_index: int
    episode_len: int

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.tip - self.target))

    def copy(self) -> "ArmState":
        return replace(self, joints=self.joints.copy(), tip=self.tip.copy(), target=self.target.copy())


@dataclass
class Transition:
    obs: dict[str, np.ndarray]
    action: np.ndarray
    reward: float
    next_obs: dict[str, np.ndarray]
    done: bool
    is_demo: bool = False


def check_target_box_reachable(chain: KinematicChain, task: TaskConfig, samples: int = 20000,
                               seed: int = 0, refine_steps: int = 200) -> None:
    """Raise if some point of a 3x3x3 grid over the target box cannot be reached within epsilon.

    Joint space is sampled by FK (active joints only; locked joints stay at
    home).  Grid points with no sample within epsilon are refined by damped
    least squares from the nearest sample before being declared unreachable.
    """
    rng = np.random.default_rng(seed)
    home = np.asarray(task.home, dtype=np.float64)
    mask = task.active_mask
    lo, hi = chain.joint_limits[mask, 0], chain.joint_limits[mask, 1]
    configs = np.tile(home, (samples, 1))
    configs[:, mask] = rng.uniform(lo, hi, size=(samples, int(mask.sum())))
    cloud = np.array([forward_kinematics(chain, q) for q in configs])
    axes = [np.linspace(a, b, 3) for a, b in zip(task.target_low, task.target_high)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    dists = np.sqrt(((grid[:, None, :] - cloud[None, :, :]) ** 2).sum(-1))
    bad = []
    for g, row in zip(grid, dists):
        if row.min() <= task.epsilon:
            continue
        q = configs[int(row.argmin())].copy()
        lim = chain.joint_limits
        for _ in range(refine_steps):
            step = expert_action(chain, q, g, active_mask=mask) * chain.max_step
            q = np.clip(q + step, lim[:, 0], lim[:, 1])
            if np.linalg.norm(forward_kinematics(chain, q) - g) < task.epsilon:
                break
        else:
            bad.append(g.tolist())
    if bad:
        raise ValueError(f"target box not reachable near {bad}")


class ReachEnv:
    """Reach-a-ball MDP: the transition kernel is deterministic kinematic integration."""

    def __init__(self, chain: KinematicChain | None = None, task: TaskConfig | None = None,
                 episode_len: int = 100, check_reachable: bool = False):
        if episode_len < 1:
            raise ValueError("episode_len must be >= 1")
        self.chain = chain if chain is not None else KinematicChain.ur3()
        self.task = task if task is not None else TaskConfig()
        self.episode_len = episode_len
        self.home = _check_limits(self.chain, self.task.home).copy()
        self._mask = self.task.active_mask.astype(np.float64)
        if check_reachable:
            check_target_box_reachable(self.chain, self.task)
        self.state: ArmState | None = None

    def reset(self, rng: np.random.Generator) -> ArmState:
        target = rng.uniform(self.task.target_low, self.task.target_high)
        joints = self.home.copy()
        self.state = ArmState(joints, forward_kinematics(self.chain, joints), target, 0,
                              self.episode_len)
        return self.state

    def resample_target(self, rng: np.random.Generator) -> ArmState:
        if self.state is None:
            raise RuntimeError("reset() must be called first")
        self.state.target = rng.uniform(self.task.target_low, self.task.target_high)
        return self.state

    def reward(self, tip, target) -> float:
        t = self.task
        if t.reward_kind == "sparse":
            return sparse_reward(tip, target, t.epsilon)
        return continuous_reward(tip, target, t.epsilon, t.success_bonus)

    def is_success(self, state: ArmState | None = None) -> bool:
        s = state if state is not None else self.state
        return bool(np.linalg.norm(s.tip - s.target) < self.task.epsilon)

    def step(self, action) -> tuple[ArmState, float, bool]:
        if self.state is None:
            raise RuntimeError("reset() must be called first")
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (6,):
            raise ValueError(f"expected 6 action components, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError(f"non-finite action {a}")
        s = self.state
        if s.step_index >= s.episode_len:
            raise RuntimeError("episode is over; call reset()")
        lim = self.chain.joint_limits
        delta = np.clip(a, -1.0, 1.0) * self.chain.max_step * self._mask
        joints = np.clip(s.joints + delta, lim[:, 0], lim[:, 1])
        tip = forward_kinematics(self.chain, joints)
        self.state = ArmState(joints, tip, s.target, s.step_index + 1, s.episode_len)
        reward = self.reward(tip, s.target)
        done = self.state.step_index == s.episode_len or (
            self.task.terminate_on_success and self.is_success(self.state))
        return self.state, reward, done


# -- expert ------------------------------------------------------------------

def expert_action(chain: KinematicChain, joints, target, damping: float = 0.05,
                  active_mask: np.ndarray | None = None) -> np.ndarray:
    """Damped-least-squares step toward ``target`` expressed as a normalized velocity command.

    The joint step is scaled uniformly (not clipped per joint) so that its
    direction is preserved when it exceeds one control step.
    """
    q = np.asarray(joints, dtype=np.float64)
    jac = jacobian(chain, q)
    if active_mask is not None:
        jac = jac * np.asarray(active_mask, dtype=np.float64)
    err = np.asarray(target, dtype=np.float64) - forward_kinematics(chain, q)
    try:
        dq = jac.T @ np.linalg.solve(jac @ jac.T + damping ** 2 * np.eye(3), err)
    except np.linalg.LinAlgError:
        warnings.warn("singular damped least-squares system; expert returns zero action",
                      RuntimeWarning, stacklevel=2)
        return np.zeros(6)
    cmd = dq / chain.max_step
    peak = np.abs(cmd).max()
    if peak > 1.0:
        cmd = cmd / peak
    return cmd


class ObservationPipeline(Protocol):
    name: str

    def reset(self, env: ReachEnv, rng: np.random.Generator) -> dict[str, np.ndarray]: ...

    def observe(self, env: ReachEnv) -> dict[str, np.ndarray]: ...


class ExpertFailure(RuntimeError):
    pass


def expert_rollout(env: ReachEnv, pipeline: Any, rng: np.random.Generator) -> tuple[list[Transition], bool]:
    obs = pipeline.reset(env, rng)
    out: list[Transition] = []
    done = False
    while not done:
        s = env.state
        a = expert_action(env.chain, s.joints, s.target, active_mask=env.task.active_mask)
        _, r, done = env.step(a)
        nxt = pipeline.observe(env)
        out.append(Transition(obs, a, r, nxt, done, is_demo=True))
        obs = nxt
    return out, env.is_success()


def generate_demos(env: ReachEnv, n_episodes: int, pipeline: Any,
                   rng: np.random.Generator) -> list[Transition]:
    """Expert rollouts encoded through ``pipeline``; only successful episodes are kept."""
    kept: list[Transition] = []
    successes = attempts = 0
    while successes < n_episodes:
        if attempts >= 3 * n_episodes:
            raise ExpertFailure(
                f"expert succeeded in only {successes}/{attempts} episodes "
                f"(failure rate {1 - successes / attempts:.2%})")
        episode, ok = expert_rollout(env, pipeline, rng)
        attempts += 1
        if ok:
            kept.extend(episode)
            successes += 1
    return kept
