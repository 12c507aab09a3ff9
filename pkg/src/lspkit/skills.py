"""Analytic desk-scale skill domains: push, pivot, pull, pick, place.

Each skill is a deterministic discounted MDP over a box-bounded state.  All
states are regulated toward the origin of their own frame (the pivot skill
instead carries its goal angle inside the state).  Transition and reward
callables are vectorized over leading batch dimensions.

State vector conventions
------------------------
push   : [x, y, yaw, face]               object planar pose relative to the
         target and the contact face index (0..3 for +x, +y, -x, -y); the
         pusher acts from the center of the commanded face each step
pivot  : [beta, beta_goal]               current and commanded pivot angle
pull   : [x, y, yaw]
pick   : [x, y, z, roll, pitch, yaw]     end-effector pose relative to target
place  : same layout as pick

Skill states live in plain boxes: every transition clamps to the bounds,
including angles (a pivot cannot rotate through its hard stops).  Angle
wrapping happens only in the long-horizon maps, where configurations are
genuinely periodic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

__all__ = [
    "SkillMdp",
    "TrainSettings",
    "DomainParams",
    "PushState",
    "PivotState",
    "PullState",
    "PickPlaceState",
    "LongHorizonState",
    "SkillMap",
    "LongHorizonLayout",
    "ConfigurationError",
    "wrap_angle",
    "load_domain_params",
    "build_mdp",
    "step",
    "reward",
    "gamma_map",
    "phi_map",
    "push_face_center",
]

SKILLS = ("push", "pivot", "pull", "pick", "place")


class ConfigurationError(ValueError):
    """Bad domain/skill configuration (unknown skill, malformed file)."""


def wrap_angle(x):
    """Wrap angles into [-pi, pi)."""
    return (np.asarray(x) + np.pi) % (2.0 * np.pi) - np.pi


# ---------------------------------------------------------------------------
# parameter loading


@dataclass(frozen=True)
class TrainSettings:
    """Per-skill value-iteration settings (grid and budgets)."""

    grid: tuple
    eps: float = 1e-3
    max_rank: int = 100
    max_iters: int = 200
    cross_sweeps: int = 3
    candidates: int = 9
    scheme: str = "enumerate"  # or "coordinate" for high-dim action spaces
    dense_cutoff: int = 16384  # grids at or below this size iterate exactly
    eval_sweeps: int = 0  # dense path: policy-evaluation sweeps per backup


@dataclass(frozen=True)
class DomainParams:
    """Physical and training parameters shared by every skill MDP."""

    name: str
    dt: float
    gamma: float
    horizon: int
    position_bound: float
    success_position: float
    success_orientation: float
    half_extent: float
    linear_speed: float
    angular_speed: float
    rho_push: float
    limit_surface_c: float
    contact_friction: float
    train: dict
    phi_dims: dict

    def train_for(self, skill: str) -> TrainSettings:
        if skill not in self.train:
            raise ConfigurationError(f"unknown skill: {skill}")
        return self.train[skill]


_DEFAULT_GRIDS = {
    "push": (21, 21, 21, 4),
    "pivot": (64, 64),
    "pull": (24, 24, 24),
    "pick": (11, 11, 11, 11, 11, 11),
    "place": (11, 11, 11, 11, 11, 11),
}


def default_domain_path() -> Path:
    return Path(resources.files("lspkit") / "data" / "desk_domain.json")


def load_domain_params(path=None) -> DomainParams:
    """Read the domain parameter file (shipped desk domain by default)."""
    path = Path(path) if path is not None else default_domain_path()
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read domain parameters: {exc}") from exc
    try:
        train = {}
        for skill in SKILLS:
            block = raw.get(skill, {})
            tr = block.get("train", {})
            train[skill] = TrainSettings(
                grid=tuple(block.get("grid", _DEFAULT_GRIDS[skill])),
                eps=float(tr.get("eps", 1e-3)),
                max_rank=int(tr.get("max_rank", 100)),
                max_iters=int(tr.get("max_iters", 200)),
                cross_sweeps=int(tr.get("cross_sweeps", 3)),
                candidates=int(tr.get("candidates", 9)),
                scheme=str(tr.get("scheme", "enumerate")),
                dense_cutoff=int(tr.get("dense_cutoff", 16384)),
                eval_sweeps=int(tr.get("eval_sweeps", 0)),
            )
        return DomainParams(
            name=str(raw.get("name", "desk")),
            dt=float(raw["dt"]),
            gamma=float(raw["gamma"]),
            horizon=int(raw.get("horizon", 200)),
            position_bound=float(raw["workspace"]["position_bound"]),
            success_position=float(raw["success"]["position"]),
            success_orientation=float(np.deg2rad(raw["success"]["orientation_deg"])),
            half_extent=float(raw["object"]["half_extent"]),
            linear_speed=float(raw["speeds"]["linear"]),
            angular_speed=float(raw["speeds"]["angular"]),
            rho_push=float(raw["push"]["rho"]),
            limit_surface_c=float(raw["push"]["limit_surface_c"]),
            contact_friction=float(raw["push"]["contact_friction"]),
            train=train,
            phi_dims={k: tuple(v) for k, v in raw["phi"].items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed domain parameter file: {exc}") from exc


# ---------------------------------------------------------------------------
# skill MDPs


@dataclass(frozen=True)
class SkillMdp:
    """Deterministic skill MDP with batch transition and reward maps.

    ``transition(states, actions)`` and ``reward(states, actions)`` accept
    (N, ds) / (N, da) arrays.  ``state_discrete`` / ``action_discrete`` map a
    dimension index to its category count; those dimensions hold integer
    values stored as floats.
    """

    name: str
    state_lower: np.ndarray
    state_upper: np.ndarray
    state_angle_dims: tuple
    state_discrete: dict
    action_lower: np.ndarray
    action_upper: np.ndarray
    action_discrete: dict
    dt: float
    gamma: float
    rho: float
    transition: Callable
    reward: Callable
    position_error: Callable
    orientation_error: Callable
    sample_states: Callable

    @property
    def state_dim(self) -> int:
        return self.state_lower.size

    @property
    def action_dim(self) -> int:
        return self.action_lower.size


def step(mdp: SkillMdp, state, action):
    """Single or batch transition; output stays inside the state box."""
    state = np.asarray(state, dtype=np.float64)
    single = state.ndim == 1
    nxt = mdp.transition(np.atleast_2d(state), np.atleast_2d(action))
    return nxt[0] if single else nxt


def reward(mdp: SkillMdp, state, action):
    """Single or batch reward."""
    state = np.asarray(state, dtype=np.float64)
    single = state.ndim == 1
    r = mdp.reward(np.atleast_2d(state), np.atleast_2d(action))
    return float(r[0]) if single else r


def _integrator(lower, upper, dt):
    def transition(states, actions):
        return np.clip(states + actions * dt, lower, upper)

    return transition


def _regulated_reward(pos_dims, ang_dims, rho, l_p=0.5, l_o=np.pi):
    def rew(states, actions):
        c_p = np.linalg.norm(states[:, pos_dims], axis=1) / l_p if pos_dims else 0.0
        c_o = np.linalg.norm(states[:, ang_dims], axis=1) / l_o
        c_a = np.linalg.norm(actions, axis=1)
        return -(c_p + rho * c_o + 0.01 * c_a)

    return rew


def push_face_center(face, half_extent):
    """Pusher home position (object frame) for a face index array."""
    face = np.asarray(face)
    alpha = face * (np.pi / 2.0)
    return np.stack(
        [half_extent * np.cos(alpha), half_extent * np.sin(alpha)], axis=-1
    )


def _make_push(params: DomainParams) -> SkillMdp:
    h = params.half_extent
    c2 = params.limit_surface_c**2
    mu = params.contact_friction
    dt = params.dt
    b = params.position_bound
    lower = np.array([-b, -b, -np.pi, 0.0])
    upper = np.array([b, b, np.pi, 3.0])

    def transition(states, actions):
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        face_new = np.clip(np.rint(actions[:, 2]), 0, 3)

        alpha = face_new * (np.pi / 2.0)
        ca, sa = np.cos(alpha), np.sin(alpha)
        # rotate the object-frame velocity into the canonical +x face frame;
        # the pusher works from the face center, contact point (h, 0)
        v = actions[:, 0:2]
        vcx = ca * v[:, 0] + sa * v[:, 1]
        vct = -sa * v[:, 0] + ca * v[:, 1]

        pushing = vcx < 0.0
        # sticking: ellipsoidal limit surface
        denom = c2 + h * h
        om_stick = h * vct / denom
        vx_stick = vcx
        vy_stick = vct - h * om_stick
        stick = pushing & (np.abs(vy_stick) <= mu * np.abs(vx_stick)) & (vx_stick < 0.0)

        # sliding: friction saturated at the cone edge
        s_sign = np.where(vy_stick >= 0.0, 1.0, -1.0)
        scale = np.where(pushing, -vcx, 0.0)
        om_slide = scale * h * s_sign * mu / c2
        vx_slide = -scale
        vy_slide = scale * s_sign * mu

        om = np.where(stick, om_stick, np.where(pushing, om_slide, 0.0))
        vx = np.where(stick, vx_stick, np.where(pushing, vx_slide, 0.0))
        vy = np.where(stick, vy_stick, np.where(pushing, vy_slide, 0.0))

        # canonical twist -> object frame -> world frame
        ox = ca * vx - sa * vy
        oy = sa * vx + ca * vy
        th = states[:, 2]
        wx = np.cos(th) * ox - np.sin(th) * oy
        wy = np.sin(th) * ox + np.cos(th) * oy

        out = np.empty_like(states)
        out[:, 0] = np.clip(states[:, 0] + wx * dt, -b, b)
        out[:, 1] = np.clip(states[:, 1] + wy * dt, -b, b)
        out[:, 2] = np.clip(th + om * dt, -np.pi, np.pi)
        out[:, 3] = face_new
        return out

    def rew(states, actions):
        c_p = np.linalg.norm(states[:, 0:2], axis=1) / 0.5
        c_o = np.abs(states[:, 2]) / np.pi
        # action magnitude counts the commanded velocity, not the face index
        c_a = np.linalg.norm(actions[:, 0:2], axis=1)
        switch = np.rint(actions[:, 2]) != np.rint(states[:, 3])
        c_f = switch.astype(np.float64)
        return -(c_p + params.rho_push * c_o + 0.01 * c_a + 0.1 * c_f)

    def sample(n, rng):
        out = np.empty((n, 4))
        out[:, 0:2] = rng.uniform(-0.4, 0.4, size=(n, 2))
        out[:, 2] = rng.uniform(-np.pi, np.pi, size=n)
        out[:, 3] = rng.integers(0, 4, size=n).astype(np.float64)
        return out

    sp = params.linear_speed
    return SkillMdp(
        name="push",
        state_lower=lower,
        state_upper=upper,
        state_angle_dims=(2,),
        state_discrete={3: 4},
        action_lower=np.array([-sp, -sp, 0.0]),
        action_upper=np.array([sp, sp, 3.0]),
        action_discrete={2: 4},
        dt=dt,
        gamma=params.gamma,
        rho=params.rho_push,
        transition=transition,
        reward=rew,
        position_error=lambda s: np.linalg.norm(np.atleast_2d(s)[:, 0:2], axis=1),
        orientation_error=lambda s: np.abs(np.atleast_2d(s)[:, 2]),
        sample_states=sample,
    )


def _make_pivot(params: DomainParams) -> SkillMdp:
    dt = params.dt
    w = params.angular_speed

    def transition(states, actions):
        out = np.empty_like(np.asarray(states, dtype=np.float64))
        out[:, 0] = np.clip(states[:, 0] + actions[:, 0] * dt, -np.pi, np.pi)
        out[:, 1] = states[:, 1]
        return out

    def rew(states, actions):
        c_o = np.abs(states[:, 0] - states[:, 1]) / np.pi
        c_a = np.abs(actions[:, 0])
        return -(c_o + 0.01 * c_a)

    def sample(n, rng):
        return rng.uniform(-np.pi, np.pi, size=(n, 2))

    return SkillMdp(
        name="pivot",
        state_lower=np.array([-np.pi, -np.pi]),
        state_upper=np.array([np.pi, np.pi]),
        state_angle_dims=(0, 1),
        state_discrete={},
        action_lower=np.array([-w]),
        action_upper=np.array([w]),
        action_discrete={},
        dt=dt,
        gamma=params.gamma,
        rho=1.0,
        transition=transition,
        reward=rew,
        position_error=lambda s: np.zeros(np.atleast_2d(s).shape[0]),
        orientation_error=lambda s: np.abs(
            np.atleast_2d(s)[:, 0] - np.atleast_2d(s)[:, 1]
        ),
        sample_states=sample,
    )


def _make_planar_integrator(name, params: DomainParams) -> SkillMdp:
    b = params.position_bound
    lower = np.array([-b, -b, -np.pi])
    upper = np.array([b, b, np.pi])
    sp, w = params.linear_speed, params.angular_speed

    def sample(n, rng):
        out = np.empty((n, 3))
        out[:, 0:2] = rng.uniform(-0.4, 0.4, size=(n, 2))
        out[:, 2] = rng.uniform(-np.pi, np.pi, size=n)
        return out

    return SkillMdp(
        name=name,
        state_lower=lower,
        state_upper=upper,
        state_angle_dims=(2,),
        state_discrete={},
        action_lower=np.array([-sp, -sp, -w]),
        action_upper=np.array([sp, sp, w]),
        action_discrete={},
        dt=params.dt,
        gamma=params.gamma,
        rho=1.0,
        transition=_integrator(lower, upper, params.dt),
        reward=_regulated_reward([0, 1], [2], rho=1.0),
        position_error=lambda s: np.linalg.norm(np.atleast_2d(s)[:, 0:2], axis=1),
        orientation_error=lambda s: np.abs(np.atleast_2d(s)[:, 2]),
        sample_states=sample,
    )


def _make_se3_integrator(name, params: DomainParams) -> SkillMdp:
    b = params.position_bound
    lower = np.array([-b, -b, -b, -np.pi, -np.pi, -np.pi])
    upper = np.array([b, b, b, np.pi, np.pi, np.pi])
    sp, w = params.linear_speed, params.angular_speed

    def sample(n, rng):
        out = np.empty((n, 6))
        out[:, 0:3] = rng.uniform(-0.4, 0.4, size=(n, 3))
        out[:, 3:6] = rng.uniform(-np.pi, np.pi, size=(n, 3))
        return out

    return SkillMdp(
        name=name,
        state_lower=lower,
        state_upper=upper,
        state_angle_dims=(3, 4, 5),
        state_discrete={},
        action_lower=np.array([-sp, -sp, -sp, -w, -w, -w]),
        action_upper=np.array([sp, sp, sp, w, w, w]),
        action_discrete={},
        dt=params.dt,
        gamma=params.gamma,
        rho=1.0,
        transition=_integrator(lower, upper, params.dt),
        reward=_regulated_reward([0, 1, 2], [3, 4, 5], rho=1.0),
        position_error=lambda s: np.linalg.norm(np.atleast_2d(s)[:, 0:3], axis=1),
        orientation_error=lambda s: np.linalg.norm(np.atleast_2d(s)[:, 3:6], axis=1),
        sample_states=sample,
    )


def build_mdp(params: DomainParams, skill: str) -> SkillMdp:
    """Construct one of the five skill MDPs from domain parameters."""
    if skill == "push":
        return _make_push(params)
    if skill == "pivot":
        return _make_pivot(params)
    if skill == "pull":
        return _make_planar_integrator("pull", params)
    if skill in ("pick", "place"):
        return _make_se3_integrator(skill, params)
    raise ConfigurationError(f"unknown skill: {skill}")


# ---------------------------------------------------------------------------
# typed state views


@dataclass(frozen=True)
class PushState:
    """Physical push state; the pusher must sit on the face segment.

    The pusher defaults to the center of the current face, which is where
    the MDP places it; off-center contacts remain valid physical records.
    """

    object_pose: np.ndarray  # (3,) x, y, yaw
    face: int
    pusher: np.ndarray = None  # (2,) object frame, default face center
    half_extent: float = 0.1

    def __post_init__(self):
        if not 0 <= int(self.face) <= 3:
            raise ValueError("face index must be in 0..3")
        if self.pusher is None:
            object.__setattr__(
                self, "pusher", push_face_center(int(self.face), self.half_extent)
            )
        h = self.half_extent
        alpha = int(self.face) * np.pi / 2.0
        normal_coord = np.cos(alpha) * self.pusher[0] + np.sin(alpha) * self.pusher[1]
        tangent_coord = -np.sin(alpha) * self.pusher[0] + np.cos(alpha) * self.pusher[1]
        if abs(normal_coord - h) > 1e-6 or abs(tangent_coord) > h + 1e-6:
            raise ValueError("pusher must lie on the boundary segment of the face")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.object_pose, [float(self.face)]])


@dataclass(frozen=True)
class PivotState:
    angle: float
    goal_angle: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.angle, self.goal_angle])


@dataclass(frozen=True)
class PullState:
    pose: np.ndarray  # (3,)

    def as_vector(self) -> np.ndarray:
        return np.asarray(self.pose, dtype=np.float64)


@dataclass(frozen=True)
class PickPlaceState:
    pose: np.ndarray  # (6,)

    def as_vector(self) -> np.ndarray:
        return np.asarray(self.pose, dtype=np.float64)


@dataclass(frozen=True)
class LongHorizonState:
    """World configuration: object pose, robot end-effector pose, tool pose.

    Poses are [x, y, z, roll, pitch, yaw] with intrinsic Z-Y-X Euler angles;
    the tool (when present) is planar [x, y, yaw].
    """

    object_pose: np.ndarray
    robot_pose: np.ndarray
    tool_pose: np.ndarray | None = None

    def as_vector(self) -> np.ndarray:
        parts = [self.object_pose, self.robot_pose]
        if self.tool_pose is not None:
            parts.append(self.tool_pose)
        return np.concatenate(parts).astype(np.float64)

    @staticmethod
    def from_vector(vec) -> "LongHorizonState":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size == 12:
            return LongHorizonState(vec[0:6].copy(), vec[6:12].copy(), None)
        if vec.size == 15:
            return LongHorizonState(vec[0:6].copy(), vec[6:12].copy(), vec[12:15].copy())
        raise ValueError("long-horizon vector must have 12 or 15 entries")


# ---------------------------------------------------------------------------
# domain maps between long-horizon states and skill states


@dataclass(frozen=True)
class SkillMap:
    """Pairing of long-horizon dimensions with skill state dimensions."""

    skill: str
    lh_dims: tuple
    skill_dims: tuple
    state_dim: int
    goal_augmented: bool = False

    def __post_init__(self):
        if self.skill not in SKILLS:
            raise ConfigurationError(f"unknown skill: {self.skill}")
        if not self.goal_augmented and len(self.lh_dims) != len(self.skill_dims):
            raise ConfigurationError("lh_dims and skill_dims must pair up")


@dataclass(frozen=True)
class LongHorizonLayout:
    """Dimension bookkeeping for the long-horizon configuration vector."""

    has_tool: bool

    @property
    def dim(self) -> int:
        return 15 if self.has_tool else 12

    @property
    def angle_dims(self) -> tuple:
        base = (3, 4, 5, 9, 10, 11)
        return base + (14,) if self.has_tool else base

    @property
    def position_dims(self) -> tuple:
        base = (0, 1, 2, 6, 7, 8)
        return base + (12, 13) if self.has_tool else base

    def bounds(self, position_bound: float):
        lower = np.empty(self.dim)
        upper = np.empty(self.dim)
        for k in range(self.dim):
            if k in self.angle_dims:
                lower[k], upper[k] = -np.pi, np.pi
            else:
                lower[k], upper[k] = -position_bound, position_bound
        return lower, upper

    def wrapped_difference(self, a, b):
        diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
        for k in self.angle_dims:
            diff[..., k] = wrap_angle(diff[..., k])
        return diff

    def distance(self, a, b):
        diff = self.wrapped_difference(a, b)
        return np.linalg.norm(diff, axis=-1)


def default_skill_map(params: DomainParams, skill: str, layout: LongHorizonLayout,
                      lh_dims=None) -> SkillMap:
    """Skill map from the domain file's phi dimension lists.

    ``lh_dims`` overrides the long-horizon side (operators acting on the tool
    reuse the place skill on tool dimensions, for example).
    """
    if skill not in SKILLS:
        raise ConfigurationError(f"unknown skill: {skill}")
    dims = tuple(lh_dims) if lh_dims is not None else params.phi_dims[skill]
    for d in dims:
        if d >= layout.dim:
            raise ConfigurationError(
                f"phi dimension {d} outside the {layout.dim}-dim configuration"
            )
    if skill == "pivot":
        return SkillMap("pivot", dims, (0, 1), state_dim=2, goal_augmented=True)
    skill_dims = {
        "push": (0, 1, 2),
        "pull": (0, 1, 2),
        "pick": tuple(range(6)),
        "place": tuple(range(6)),
    }[skill]
    if len(dims) < len(skill_dims):
        skill_dims = skill_dims[: len(dims)]
    state_dim = {"push": 4, "pull": 3, "pick": 6, "place": 6}[skill]
    return SkillMap(skill, dims, skill_dims, state_dim=state_dim)


_ANGLE_LH = {3, 4, 5, 9, 10, 11, 14}


def gamma_map(skill_map: SkillMap, xbar_start, xbar_goal) -> np.ndarray:
    """Project a long-horizon transition onto the skill state space.

    Displacement skills get the wrapped difference of the selected
    dimensions (remaining skill dimensions are zero, already at target); the
    pivot skill gets (current angle, goal angle).
    """
    starts = np.atleast_2d(np.asarray(xbar_start, dtype=np.float64))
    goals = np.atleast_2d(np.asarray(xbar_goal, dtype=np.float64))
    single = np.asarray(xbar_start).ndim == 1
    if skill_map.goal_augmented:
        out = np.stack(
            [
                wrap_angle(starts[:, skill_map.lh_dims[0]]),
                wrap_angle(goals[:, skill_map.lh_dims[0]]),
            ],
            axis=1,
        )
        return out[0] if single else out
    out = np.zeros((starts.shape[0], skill_map.state_dim))
    for l, s in zip(skill_map.lh_dims, skill_map.skill_dims):
        diff = starts[:, l] - goals[:, l]
        out[:, s] = wrap_angle(diff) if l in _ANGLE_LH else diff
    return out[0] if single else out


def phi_map(skill_map: SkillMap, skill_state, xbar_ref) -> np.ndarray:
    """Write a skill outcome back into a long-horizon configuration.

    ``xbar_ref`` carries the commanded subgoal; displacement skills add the
    residual skill state to the subgoal dims, the pivot skill writes its
    reached angle directly.  Only mapped dimensions change.
    """
    states = np.atleast_2d(np.asarray(skill_state, dtype=np.float64))
    refs = np.atleast_2d(np.asarray(xbar_ref, dtype=np.float64))
    single = np.asarray(xbar_ref).ndim == 1
    out = refs.copy()
    if skill_map.goal_augmented:
        out[:, skill_map.lh_dims[0]] = wrap_angle(states[:, 0])
        return out[0] if single else out
    for l, s in zip(skill_map.lh_dims, skill_map.skill_dims):
        val = refs[:, l] + states[:, s]
        out[:, l] = wrap_angle(val) if l in _ANGLE_LH else val
    return out[0] if single else out
