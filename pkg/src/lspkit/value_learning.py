"""Skill value functions via tensor-train value iteration.

Backs up V_{j+1} = cross( x -> max_u [ R(x,u) + gamma V_j(f(x,u)) ] ) over the
skill state grid.  Small grids keep a dense table between iterations and are
compressed once at the end; large grids re-cross each iterate with warm-started
index sets.  The greedy policy, rollout evaluation, the value-prediction
metric, and the on-disk skill library live here as well.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .tt import (
    Grid,
    TensorTrain,
    _interp_batch,
    _tt_from_dense,
    save_tt,
    load_tt,
    tt_argmax,
    tt_cross,
    tt_evaluate,
    tt_scale,
)
from .skills import SkillMdp, DomainParams, build_mdp

__all__ = [
    "ValueFunction",
    "GreedyPolicy",
    "SkillLibrary",
    "LibraryError",
    "action_candidates",
    "greedy_backup",
    "tt_value_iteration",
    "act",
    "rollout",
    "rollout_batch",
    "bellman_residual",
    "value_prediction_agreement",
    "train_skill",
    "train_library",
    "save_library",
    "load_library",
]

_CHUNK = 120_000


class LibraryError(KeyError):
    """A requested skill has no trained value function."""


def value_range(tt: TensorTrain, budget: int = 50):
    """(min, max) of the TT over its grid via prioritized argmax sweeps."""
    _, hi = tt_argmax(tt, candidates_per_mode=budget)
    _, neg_lo = tt_argmax(tt_scale(tt, -1.0), candidates_per_mode=budget)
    return float(-neg_lo), float(hi)


@dataclass(frozen=True)
class ValueFunction:
    """Trained skill value function on a state grid.

    ``evaluate`` interpolates the TT multilinearly and clamps to <= 0, since
    every skill reward is nonpositive and cross approximation may overshoot
    slightly.  ``v_min``/``v_max`` are grid extremes used for normalization.
    """

    skill: str
    tt: TensorTrain
    gamma: float
    eps: float
    max_rank: int
    iterations: int
    converged: bool
    v_min: float
    v_max: float

    @staticmethod
    def from_tt(skill, tt, gamma, eps, max_rank, iterations, converged,
                extremes=None):
        lo, hi = value_range(tt) if extremes is None else extremes
        return ValueFunction(
            skill, tt, gamma, eps, max_rank, iterations, converged,
            v_min=min(lo, 0.0), v_max=min(hi, 0.0),
        )

    @property
    def grid(self) -> Grid:
        return self.tt.grid

    def evaluate(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.empty(points.shape[0])
        for s in range(0, points.shape[0], _CHUNK):
            out[s:s + _CHUNK] = _interp_batch(self.tt, points[s:s + _CHUNK])
        return np.minimum(out, 0.0)

    def normalized(self, points) -> np.ndarray:
        """Affine map of V onto [0, 1] using the grid extremes."""
        span = self.v_max - self.v_min
        if span <= 0.0:
            return np.ones(np.atleast_2d(points).shape[0])
        raw = (self.evaluate(points) - self.v_min) / span
        return np.clip(raw, 0.0, 1.0)


# ---------------------------------------------------------------------------
# greedy policy


def action_candidates(mdp: SkillMdp, per_dim: int) -> np.ndarray:
    """Cartesian candidate actions: ``per_dim`` uniform points per continuous
    dim, every category of each discrete dim."""
    if per_dim < 3:
        raise ValueError("need at least 3 candidates per continuous dim")
    axes = []
    for k in range(mdp.action_dim):
        if k in mdp.action_discrete:
            axes.append(np.arange(mdp.action_discrete[k], dtype=np.float64))
        else:
            axes.append(np.linspace(mdp.action_lower[k], mdp.action_upper[k], per_dim))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _axis_values(mdp: SkillMdp, dim: int, per_dim: int) -> np.ndarray:
    if dim in mdp.action_discrete:
        return np.arange(mdp.action_discrete[dim], dtype=np.float64)
    return np.linspace(mdp.action_lower[dim], mdp.action_upper[dim], per_dim)


def _q_values(mdp, value_fn, states, actions):
    q = mdp.reward(states, actions)
    if value_fn is not None:
        q = q + mdp.gamma * value_fn(mdp.transition(states, actions))
    return q


def greedy_backup(mdp: SkillMdp, value_fn, states, per_dim: int = 9,
                  scheme: str = "enumerate"):
    """Bellman backup max_u [R + gamma V(f)] over candidate actions.

    ``value_fn`` maps next states (N, ds) to values, or None for V = 0.
    Returns (values (N,), actions (N, da)).  The ``coordinate`` scheme runs
    two passes of per-dimension descent from the zero action, trading
    exactness for tractability on six-dimensional action spaces.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    n = states.shape[0]
    if scheme == "enumerate":
        cands = action_candidates(mdp, per_dim)
        best_q = np.full(n, -np.inf)
        best_a = np.zeros((n, mdp.action_dim))
        block = max(1, _CHUNK // max(1, n))
        for s in range(0, cands.shape[0], block):
            chunk = cands[s:s + block]
            rep_s = np.repeat(states, chunk.shape[0], axis=0)
            rep_a = np.tile(chunk, (n, 1))
            q = _q_values(mdp, value_fn, rep_s, rep_a).reshape(n, chunk.shape[0])
            # strict > keeps the earliest maximizer in enumeration order
            local = np.argmax(q, axis=1)
            local_q = q[np.arange(n), local]
            better = local_q > best_q
            best_q = np.where(better, local_q, best_q)
            best_a[better] = chunk[local[better]]
        return best_q, best_a
    if scheme == "coordinate":
        actions = np.zeros((n, mdp.action_dim))
        for _ in range(2):
            for dim in range(mdp.action_dim):
                vals = _axis_values(mdp, dim, per_dim)
                k = vals.size
                rep_s = np.repeat(states, k, axis=0)
                rep_a = np.repeat(actions, k, axis=0)
                rep_a[:, dim] = np.tile(vals, n)
                q = _q_values(mdp, value_fn, rep_s, rep_a).reshape(n, k)
                actions[:, dim] = vals[np.argmax(q, axis=1)]
        final = _q_values(mdp, value_fn, states, actions)
        return final, actions
    raise ValueError(f"unknown action scheme: {scheme}")


@dataclass(frozen=True)
class GreedyPolicy:
    """One-step lookahead policy over the candidate action set."""

    mdp: SkillMdp
    vf: ValueFunction
    per_dim: int = 9
    scheme: str = "enumerate"

    def __post_init__(self):
        if self.per_dim < 3:
            raise ValueError("need at least 3 candidates per continuous dim")

    def value_fn(self):
        return self.vf.evaluate

    def act_batch(self, states) -> np.ndarray:
        _, actions = greedy_backup(
            self.mdp, self.vf.evaluate, states, self.per_dim, self.scheme
        )
        return actions


def act(policy: GreedyPolicy, state) -> np.ndarray:
    """Greedy action for one state; ties go to the earliest candidate."""
    return policy.act_batch(np.atleast_2d(np.asarray(state, dtype=np.float64)))[0]


# ---------------------------------------------------------------------------
# value iteration


def _dense_interp(grid: Grid, table: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation on a dense grid table."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    idx, frac = grid.locate(pts)
    d = grid.ndim
    out = np.zeros(pts.shape[0])
    for corner in range(2**d):
        offs = [(corner >> k) & 1 for k in range(d)]
        w = np.ones(pts.shape[0])
        for k, o in enumerate(offs):
            w *= frac[:, k] if o else 1.0 - frac[:, k]
        gathered = table[tuple(idx[:, k] + offs[k] for k in range(d))]
        out += w * gathered
    return out


def _grid_points(grid: Grid) -> np.ndarray:
    mesh = np.meshgrid(*[grid.axis(k) for k in range(grid.ndim)], indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def tt_value_iteration(
    mdp: SkillMdp,
    grid: Grid,
    eps: float = 1e-3,
    max_rank: int = 100,
    max_iters: int = 200,
    per_dim: int = 9,
    scheme: str = "enumerate",
    cross_sweeps: int = 3,
    seed: int = 0,
    dense_cutoff: int = 16384,
    eval_sweeps: int = 0,
    validation_size: int = 256,
    callback: Callable | None = None,
) -> ValueFunction:
    """Value iteration with TT-compressed iterates.

    Stops when the sampled sup difference between successive iterates drops
    to ``eps`` or after ``max_iters`` backups.  Grids at or below
    ``dense_cutoff`` entries iterate on an exact dense table and compress
    once at the end; larger grids rebuild a TT-cross approximation per
    backup, warm-starting each cross from the previous index sets.  On the
    dense path ``eval_sweeps`` extra policy-evaluation sweeps reuse each
    backup's greedy actions, sharpening the contraction per backup when the
    discount factor sits close to one.
    ``callback(iteration, residual, value_fn)`` observes each iterate.
    """
    if grid.ndim != mdp.state_dim:
        raise ValueError("grid dimensionality must match the skill state")
    if eps <= 0:
        raise ValueError("eps must be positive")
    rng = np.random.default_rng(seed)
    val_states = mdp.sample_states(validation_size, rng)

    if grid.size <= dense_cutoff:
        points = _grid_points(grid)
        table = np.zeros(grid.counts)
        iterations, converged, residual = 0, False, np.inf
        for j in range(max_iters):
            value_fn = None if j == 0 else (
                lambda p, t=table: _dense_interp(grid, t, p)
            )
            new_flat, best_a = greedy_backup(mdp, value_fn, points, per_dim, scheme)
            if eval_sweeps > 0:
                nxt = mdp.transition(points, best_a)
                rew = mdp.reward(points, best_a)
                for _ in range(eval_sweeps):
                    new_flat = rew + mdp.gamma * _dense_interp(
                        grid, new_flat.reshape(grid.counts), nxt
                    )
            new_table = new_flat.reshape(grid.counts)
            residual = float(np.max(np.abs(new_table - table)))
            table = new_table
            iterations = j + 1
            if callback is not None:
                callback(iterations, residual,
                         lambda p, t=table: _dense_interp(grid, t, p))
            if residual <= eps:
                converged = True
                break
        tt = _tt_from_dense(table, grid, eps=1e-9, max_rank=max_rank)
        return ValueFunction.from_tt(
            mdp.name, tt, mdp.gamma, eps, max_rank, iterations, converged,
            extremes=(float(table.min()), float(table.max())),
        )

    cross_seeds = rng.integers(0, 2**63 - 1, size=max_iters)
    tt = None
    right_sets = None
    iterations, converged = 0, False
    for j in range(max_iters):
        value_fn = None if tt is None else (
            lambda p, t=tt: np.minimum(_interp_batch(t, p), 0.0)
        )

        def oracle(pts, vf=value_fn):
            return greedy_backup(mdp, vf, pts, per_dim, scheme)[0]

        try:
            result = tt_cross(
                oracle, grid, eps=eps, max_rank=max_rank,
                max_sweeps=cross_sweeps, seed=int(cross_seeds[j]),
                dense_cutoff=0, warm_start=right_sets,
            )
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise RuntimeError(f"TT-cross failed at iteration {j}: {exc}") from exc
        new_tt = result.tt
        right_sets = result.right_sets
        old = np.zeros(validation_size) if tt is None else np.minimum(
            _interp_batch(tt, val_states), 0.0
        )
        new = np.minimum(_interp_batch(new_tt, val_states), 0.0)
        residual = float(np.max(np.abs(new - old)))
        tt = new_tt
        iterations = j + 1
        if callback is not None:
            callback(iterations, residual,
                     lambda p, t=tt: np.minimum(_interp_batch(t, p), 0.0))
        if residual <= eps:
            converged = True
            break
    return ValueFunction.from_tt(
        mdp.name, tt, mdp.gamma, eps, max_rank, iterations, converged
    )


def bellman_residual(vf: ValueFunction, mdp: SkillMdp, n_states: int = 1000,
                     seed: int = 0, per_dim: int = 9,
                     scheme: str = "enumerate") -> float:
    """max |V(x) - max_u(R + gamma V(f(x,u)))| over random states."""
    rng = np.random.default_rng(seed)
    states = mdp.sample_states(n_states, rng)
    backed, _ = greedy_backup(mdp, vf.evaluate, states, per_dim, scheme)
    return float(np.max(np.abs(vf.evaluate(states) - backed)))


# ---------------------------------------------------------------------------
# rollout and evaluation


@dataclass(frozen=True)
class RolloutResult:
    states: np.ndarray
    actions: np.ndarray
    cumulative_reward: float
    success: bool
    steps: int


def rollout_batch(mdp: SkillMdp, policy: GreedyPolicy, x0, horizon: int,
                  success_position: float = 0.03,
                  success_orientation: float = np.deg2rad(15.0),
                  early_stop: bool = True):
    """Roll the greedy policy from many starts at once.

    Returns (final states, cumulative rewards, success flags, steps taken).
    Success latches as soon as both error thresholds hold, including at the
    start state; with ``early_stop`` successful rollouts freeze in place.
    """
    states = np.atleast_2d(np.asarray(x0, dtype=np.float64)).copy()
    n = states.shape[0]
    returns = np.zeros(n)
    steps = np.zeros(n, dtype=int)

    def at_goal(s):
        return (np.asarray(mdp.position_error(s)) <= success_position) & (
            np.asarray(mdp.orientation_error(s)) <= success_orientation
        )

    success = at_goal(states)
    active = ~success if early_stop else np.ones(n, dtype=bool)
    for t in range(horizon):
        if not np.any(active):
            break
        acts = policy.act_batch(states[active])
        r = mdp.reward(states[active], acts)
        returns[active] += (mdp.gamma**t) * r
        states[active] = mdp.transition(states[active], acts)
        steps[active] = t + 1
        success |= at_goal(states) & active
        if early_stop:
            active &= ~success
    return states, returns, success, steps


def rollout(mdp: SkillMdp, policy: GreedyPolicy, x0, horizon: int = 200,
            success_position: float = 0.03,
            success_orientation: float = np.deg2rad(15.0),
            early_stop: bool = True) -> RolloutResult:
    """Single rollout that records the visited trajectory."""
    state = np.asarray(x0, dtype=np.float64).copy()
    traj = [state.copy()]
    acts = []
    total = 0.0
    success = bool(
        mdp.position_error(state)[0] <= success_position
        and mdp.orientation_error(state)[0] <= success_orientation
    )
    steps = 0
    for t in range(horizon):
        if success and early_stop:
            break
        a = act(policy, state)
        total += (mdp.gamma**t) * float(
            mdp.reward(state[None, :], a[None, :])[0]
        )
        state = mdp.transition(state[None, :], a[None, :])[0]
        traj.append(state.copy())
        acts.append(a)
        steps = t + 1
        if (
            mdp.position_error(state)[0] <= success_position
            and mdp.orientation_error(state)[0] <= success_orientation
        ):
            success = True
    return RolloutResult(
        np.array(traj), np.array(acts) if acts else np.zeros((0, mdp.action_dim)),
        total, success, steps,
    )


def value_prediction_agreement(vf, mdp: SkillMdp, policy: GreedyPolicy,
                               n_pairs: int = 1000, rng_seed: int = 0,
                               horizon: int = 200) -> float:
    """Fraction of state pairs where the value difference has the same sign
    as the rollout cumulative-reward difference.

    ``vf`` may be a ValueFunction or any callable mapping states (N, ds) to
    scores.  Pairs whose rollout returns differ by less than 1e-6 are
    discarded and redrawn.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    value_fn = vf.evaluate if isinstance(vf, ValueFunction) else vf
    rng = np.random.default_rng(rng_seed)
    agree = 0
    collected = 0
    rounds = 0
    while collected < n_pairs:
        if rounds > 200:
            raise RuntimeError("could not collect enough distinguishable pairs")
        rounds += 1
        want = n_pairs - collected
        a = mdp.sample_states(want, rng)
        b = mdp.sample_states(want, rng)
        _, ra, _, _ = rollout_batch(mdp, policy, a, horizon, early_stop=False)
        _, rb, _, _ = rollout_batch(mdp, policy, b, horizon, early_stop=False)
        keep = np.abs(ra - rb) >= 1e-6
        if not np.any(keep):
            continue
        dv = np.asarray(value_fn(a[keep])) - np.asarray(value_fn(b[keep]))
        dr = ra[keep] - rb[keep]
        agree += int(np.sum(np.sign(dv) == np.sign(dr)))
        collected += int(np.sum(keep))
    return agree / n_pairs


# ---------------------------------------------------------------------------
# skill library persistence


@dataclass
class SkillLibrary:
    """Immutable map from skill name to trained value function and policy."""

    params: DomainParams
    values: dict = field(default_factory=dict)
    policies: dict = field(default_factory=dict)

    def value(self, skill: str) -> ValueFunction:
        if skill not in self.values:
            raise LibraryError(f"no trained value function for skill '{skill}'")
        return self.values[skill]

    def policy(self, skill: str) -> GreedyPolicy:
        if skill not in self.policies:
            raise LibraryError(f"no trained value function for skill '{skill}'")
        return self.policies[skill]

    def missing(self, skills) -> list:
        return sorted(set(skills) - set(self.values))


def train_skill(params: DomainParams, skill: str, seed: int = 0,
                callback: Callable | None = None) -> ValueFunction:
    """Train one skill with its configured grid and budgets."""
    mdp = build_mdp(params, skill)
    settings = params.train_for(skill)
    grid = Grid(mdp.state_lower, mdp.state_upper, np.asarray(settings.grid))
    return tt_value_iteration(
        mdp, grid, eps=settings.eps, max_rank=settings.max_rank,
        max_iters=settings.max_iters, per_dim=settings.candidates,
        scheme=settings.scheme, cross_sweeps=settings.cross_sweeps,
        seed=seed, dense_cutoff=settings.dense_cutoff,
        eval_sweeps=settings.eval_sweeps, callback=callback,
    )


def _policy_for(params: DomainParams, skill: str, vf: ValueFunction) -> GreedyPolicy:
    settings = params.train_for(skill)
    return GreedyPolicy(build_mdp(params, skill), vf,
                        per_dim=settings.candidates, scheme=settings.scheme)


def train_library(params: DomainParams, skills, seed: int = 0,
                  callback: Callable | None = None) -> SkillLibrary:
    """Train several skills; per-skill seeds derive from the master seed."""
    lib = SkillLibrary(params)
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(len(skills))
    for child, skill in zip(children, sorted(skills)):
        cb = (lambda *a, s=skill: callback(s, *a)) if callback else None
        vf = train_skill(params, skill, seed=int(child.generate_state(1)[0]),
                         callback=cb)
        lib.values[skill] = vf
        lib.policies[skill] = _policy_for(params, skill, vf)
    return lib


def save_library(directory, library: SkillLibrary) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for skill in sorted(library.values):
        vf = library.values[skill]
        meta = {
            "skill": skill,
            "gamma": vf.gamma,
            "iterations": vf.iterations,
            "converged": vf.converged,
            "v_min": vf.v_min,
            "v_max": vf.v_max,
        }
        save_tt(directory / f"{skill}.tt", vf.tt, eps=vf.eps,
                max_rank=vf.max_rank, provenance=json.dumps(meta, sort_keys=True))


def load_library(directory, params: DomainParams) -> SkillLibrary:
    """Load every ``<skill>.tt`` container found in ``directory``."""
    directory = Path(directory)
    lib = SkillLibrary(params)
    for path in sorted(directory.glob("*.tt")):
        tt, meta = load_tt(path)
        info = json.loads(meta.get("provenance", "{}"))
        skill = info.get("skill", path.stem)
        vf = ValueFunction(
            skill=skill, tt=tt, gamma=float(info.get("gamma", params.gamma)),
            eps=float(meta.get("eps") or 1e-3),
            max_rank=int(meta.get("max_rank") or 100),
            iterations=int(info.get("iterations", 0)),
            converged=bool(info.get("converged", False)),
            v_min=float(info["v_min"]) if "v_min" in info else value_range(tt)[0],
            v_max=float(info["v_max"]) if "v_max" in info else value_range(tt)[1],
        )
        lib.values[skill] = vf
        lib.policies[skill] = _policy_for(params, skill, vf)
    return lib
