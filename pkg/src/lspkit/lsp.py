"""Long-horizon planning over skill sequences.

A problem pairs a start and target configuration with a symbolic operator
domain and a library of trained skill value functions.  Solving alternates
two levels: a Monte Carlo tree search proposes operator skeletons, and for
each skeleton the subgoal configurations between skills are optimized by
cross-entropy search over the variables the skeleton actually actuates.
The objective sums the skill value functions along the chain plus a weighted
distance from the final subgoal to the target, so subgoal quality and
terminal accuracy trade off in one score.  Candidate solutions are checked
by rolling the greedy skill policies through the chain; the binary outcome
feeds back into the tree statistics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .cem import CemConfig, NumericalError, VariableSpec, cem_optimize
from .skills import (
    LongHorizonLayout,
    LongHorizonState,
    SkillMap,
    build_mdp,
    default_skill_map,
    gamma_map,
    load_domain_params,
    phi_map,
)
from .symbolic import (
    SearchTree,
    SkillOperator,
    SymbolicDomain,
    backprop,
    builtin_domain_path,
    load_symbolic_domain,
    succ,
)
from .value_learning import SkillLibrary, load_library, rollout_batch

__all__ = [
    "ProblemError",
    "InfeasibleSkeletonError",
    "Problem",
    "Solution",
    "SolutionSet",
    "LspConfig",
    "load_problem",
    "builtin_problem_path",
    "build_objective",
    "switch_violations",
    "replay_solution",
    "verify_solution",
    "skill_rewards",
    "normalized_cumulative_reward",
    "lsp_solve",
    "solution_set_to_json",
    "solution_set_from_json",
    "save_solution_set",
    "load_solution_set",
]


class ProblemError(ValueError):
    """Raised for malformed problem definitions or missing ingredients."""


class InfeasibleSkeletonError(RuntimeError):
    """Raised when a skeleton's switch constraints admit no subgoal at all."""


_EQ_TOL = 1e-9
# skill states projected outside a value function's grid score as the nearest
# in-grid state minus this rate times the clipped distance; the slope tops the
# steepest in-grid value gradient so optimization always moves back inside
_RANGE_PENALTY = 1e3


# ---------------------------------------------------------------------------
# problem definition


@dataclass(frozen=True)
class Problem:
    """A long-horizon planning instance.

    ``start`` and ``target`` are full configuration vectors (12 entries, or
    15 when a tool pose is present); ``domain`` supplies the initial symbolic
    state and the operator set; ``library`` the trained value functions and
    greedy policies.  ``lam`` weights the terminal distance term and must be
    nonzero (negative values penalize missing the target).  The two
    tolerance fields define when a configuration counts as solved: every
    position dimension within ``position_tol`` and every angle dimension
    within ``orientation_tol`` of the target, angles compared wrapped.
    """

    start: np.ndarray
    target: np.ndarray
    domain: SymbolicDomain
    library: SkillLibrary
    lam: float = -100.0
    position_tol: float = 0.05
    orientation_tol: float = 0.30
    name: str = ""

    def __post_init__(self):
        try:
            start = LongHorizonState.from_vector(self.start).as_vector()
            target = LongHorizonState.from_vector(self.target).as_vector()
        except ValueError as exc:
            raise ProblemError(str(exc)) from exc
        if start.size != target.size:
            raise ProblemError("start and target must have the same length")
        if not (np.all(np.isfinite(start)) and np.all(np.isfinite(target))):
            raise ProblemError("configurations must be finite")
        if self.lam == 0.0 or not np.isfinite(self.lam):
            raise ProblemError("lam must be finite and nonzero")
        if self.position_tol <= 0.0 or self.orientation_tol <= 0.0:
            raise ProblemError("solve tolerances must be positive")
        dim = start.size
        for op in self.domain.operators:
            touched = set(op.actuated) | set(op.switch)
            if op.lh_dims is not None:
                touched |= set(op.lh_dims)
            if touched and max(touched) >= dim:
                raise ProblemError(
                    f"operator {op.name} references dimension {max(touched)} "
                    f"outside the {dim}-dim configuration"
                )
        for arr in (start, target):
            arr.flags.writeable = False
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "target", target)

    @property
    def layout(self) -> LongHorizonLayout:
        return LongHorizonLayout(has_tool=self.start.size == 15)


def builtin_problem_path(name: str) -> Path:
    return Path(resources.files("lspkit") / "data" / "problems" / f"{name}.json")


def load_problem(path, library=None, params=None) -> Problem:
    """Read a problem JSON file.

    The file holds ``start``, ``target``, a ``domain`` entry (either a
    builtin domain name or a JSON path resolved relative to the problem
    file), the distance weight ``lambda`` and the solved ``thresholds``.  A
    ``library`` entry names the directory with trained skill files; passing
    a loaded :class:`SkillLibrary` overrides it.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ProblemError(f"cannot read problem file: {exc}") from exc
    for key in ("start", "target", "domain"):
        if key not in raw:
            raise ProblemError(f"problem file is missing {key!r}")
    dom = str(raw["domain"])
    dom_path = Path(dom)
    if dom_path.suffix == ".json":
        if not dom_path.is_absolute():
            dom_path = path.parent / dom_path
    else:
        dom_path = builtin_domain_path(dom)
    domain = load_symbolic_domain(dom_path)
    if library is None:
        if "library" not in raw:
            raise ProblemError("problem file names no skill library directory")
        lib_dir = Path(raw["library"])
        if not lib_dir.is_absolute():
            lib_dir = path.parent / lib_dir
        library = load_library(lib_dir, params or load_domain_params())
    thresholds = raw.get("thresholds", {})
    return Problem(
        start=np.asarray(raw["start"], dtype=np.float64),
        target=np.asarray(raw["target"], dtype=np.float64),
        domain=domain,
        library=library,
        lam=float(raw.get("lambda", -100.0)),
        position_tol=float(thresholds.get("position", 0.05)),
        orientation_tol=float(thresholds.get("orientation", 0.30)),
        name=str(raw.get("name", path.stem)),
    )


# ---------------------------------------------------------------------------
# solutions


@dataclass(frozen=True)
class Solution:
    """One skeleton with optimized subgoals.

    ``subgoals`` has one full configuration row per operator; ``score`` is
    the composed objective value at those subgoals, ``rewards`` the per-step
    normalized value terms, and ``rollouts`` per-step replay diagnostics.
    """

    skeleton: tuple
    subgoals: np.ndarray
    score: float
    rewards: tuple = ()
    solved: bool = False
    rollouts: tuple = ()

    def __post_init__(self):
        subgoals = np.atleast_2d(np.asarray(self.subgoals, dtype=np.float64))
        if not self.skeleton:
            if subgoals.size:
                raise ProblemError("an empty skeleton cannot carry subgoals")
            subgoals = subgoals.reshape(0, subgoals.shape[-1])
        if subgoals.shape[0] != len(self.skeleton):
            raise ProblemError("need exactly one subgoal row per operator")
        if self.rewards and len(self.rewards) != len(self.skeleton):
            raise ProblemError("need one reward entry per operator")
        subgoals.flags.writeable = False
        object.__setattr__(self, "skeleton", tuple(str(n) for n in self.skeleton))
        object.__setattr__(self, "subgoals", subgoals)
        object.__setattr__(self, "rewards", tuple(float(r) for r in self.rewards))
        object.__setattr__(self, "rollouts", tuple(dict(s) for s in self.rollouts))

    @property
    def normalized_reward(self) -> float:
        """Sum of the per-step normalized values; at most the chain length."""
        return float(sum(self.rewards))


@dataclass(frozen=True)
class SolutionSet:
    """Solutions found within one solve budget, with aligned scores."""

    solutions: tuple = ()
    scores: tuple = ()
    iterations: int = 0
    best_infeasible: float | None = None

    def __post_init__(self):
        if len(self.solutions) != len(self.scores):
            raise ProblemError("solutions and scores must align")
        object.__setattr__(self, "solutions", tuple(self.solutions))
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))


def _solution_dict(sol: Solution) -> dict:
    return {
        "skeleton": list(sol.skeleton),
        "subgoals": [[float(v) for v in row] for row in sol.subgoals],
        "score": float(sol.score),
        "rewards": list(sol.rewards),
        "normalized_reward": sol.normalized_reward,
        "solved": bool(sol.solved),
        "rollouts": [dict(s) for s in sol.rollouts],
    }


def solution_set_to_json(sset: SolutionSet, meta: dict | None = None) -> str:
    """Serialize deterministically: sorted keys, newline terminated.

    Identical solution sets (and ``meta``) produce identical bytes, which is
    what makes repeated same-seed runs comparable file-by-file.
    """
    payload = {
        "solutions": [_solution_dict(s) for s in sset.solutions],
        "scores": list(sset.scores),
        "iterations": int(sset.iterations),
        "best_infeasible": sset.best_infeasible,
    }
    if meta is not None:
        payload["meta"] = meta
    return json.dumps(payload, indent=1, sort_keys=True) + "\n"


def solution_set_from_json(text: str):
    """Inverse of :func:`solution_set_to_json`; returns ``(set, meta)``."""
    raw = json.loads(text)
    sols = []
    for entry in raw.get("solutions", ()):
        subgoals = np.asarray(entry["subgoals"], dtype=np.float64)
        if subgoals.size == 0:
            subgoals = subgoals.reshape(0, 0)
        sols.append(
            Solution(
                skeleton=tuple(entry["skeleton"]),
                subgoals=subgoals,
                score=float(entry["score"]),
                rewards=tuple(entry.get("rewards", ())),
                solved=bool(entry.get("solved", False)),
                rollouts=tuple(entry.get("rollouts", ())),
            )
        )
    best = raw.get("best_infeasible")
    sset = SolutionSet(
        solutions=tuple(sols),
        scores=tuple(raw.get("scores", ())),
        iterations=int(raw.get("iterations", 0)),
        best_infeasible=None if best is None else float(best),
    )
    return sset, raw.get("meta", {})


def save_solution_set(path, sset: SolutionSet, meta: dict | None = None) -> None:
    Path(path).write_text(solution_set_to_json(sset, meta))


def load_solution_set(path):
    return solution_set_from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# composed objective over subgoal variables


_STATE_DIM = {"push": 4, "pull": 3, "pick": 6, "place": 6}


def _operator_map(params, op: SkillOperator, layout: LongHorizonLayout) -> SkillMap:
    # operators may override both sides of the pairing (tool moves reuse the
    # place skill with its yaw on the skill's rz axis)
    if op.skill_dims is not None:
        return SkillMap(
            op.skill,
            tuple(op.lh_dims if op.lh_dims is not None else op.actuated),
            tuple(op.skill_dims),
            state_dim=_STATE_DIM[op.skill],
        )
    return default_skill_map(params, op.skill, layout, lh_dims=op.lh_dims)


def _resolve_ops(problem: Problem, skeleton) -> tuple:
    ops = tuple(
        problem.domain.operator(s) if isinstance(s, str) else s for s in skeleton
    )
    missing = problem.library.missing([op.skill for op in ops])
    if missing:
        raise ProblemError(f"library is missing skills: {', '.join(missing)}")
    return ops


def _replay_symbolic(problem: Problem, ops) -> None:
    state = problem.domain.initial
    for op in ops:
        state = succ(state, op)


def _check_static(value: float, cons: dict, op_name: str, dim: int) -> None:
    kind = cons["type"]
    if kind == "lock":
        ok = abs(value - cons["value"]) <= _EQ_TOL
    elif kind == "choice":
        ok = any(abs(value - v) <= _EQ_TOL for v in cons["values"])
    else:
        ok = cons["lower"] - _EQ_TOL <= value <= cons["upper"] + _EQ_TOL
    if not ok:
        raise InfeasibleSkeletonError(
            f"{op_name}: switch on dimension {dim} conflicts with the "
            f"inherited value {value:.6g}"
        )


def _variable_domain(cons_list, lo: float, hi: float, dim: int):
    """Fold switch constraints into one variable domain for an actuated dim.

    Returns ``(kind, payload)`` with kind ``cont`` (payload bounds pair),
    ``cat`` (payload value array) or ``lock`` (payload the pinned value).
    """
    locks = [c["value"] for c, _ in cons_list if c["type"] == "lock"]
    choices = [c["values"] for c, _ in cons_list if c["type"] == "choice"]
    for c, _ in cons_list:
        if c["type"] == "interval":
            lo = max(lo, c["lower"])
            hi = min(hi, c["upper"])
    names = ", ".join(sorted({n for _, n in cons_list}))
    if locks:
        v = locks[0]
        if any(abs(v - w) > _EQ_TOL for w in locks[1:]):
            raise InfeasibleSkeletonError(
                f"{names}: conflicting locks on dimension {dim}"
            )
        _check_static(v, {"type": "interval", "lower": lo, "upper": hi},
                      names, dim)
        for values in choices:
            if not any(abs(v - w) <= _EQ_TOL for w in values):
                raise InfeasibleSkeletonError(
                    f"{names}: lock on dimension {dim} is outside a choice set"
                )
        return "lock", v
    if choices:
        kept = [
            v
            for v in choices[0]
            if all(any(abs(v - w) <= _EQ_TOL for w in other) for other in choices[1:])
            and lo - _EQ_TOL <= v <= hi + _EQ_TOL
        ]
        if not kept:
            raise InfeasibleSkeletonError(
                f"{names}: empty choice set on dimension {dim}"
            )
        return "cat", np.asarray(kept, dtype=np.float64)
    if lo > hi:
        raise InfeasibleSkeletonError(f"{names}: empty interval on dimension {dim}")
    return "cont", (lo, hi)


def build_objective(problem: Problem, skeleton, terminal_only: bool = False):
    """Compose the subgoal objective for one skeleton.

    The decision vector holds, step by step, the actuated dimensions of each
    subgoal configuration; non-actuated dimensions are inherited from the
    previous subgoal (the start configuration for the first step).  Switch
    constraints of the following operator shape each variable's domain: a
    lock pins the value, a choice turns the dimension categorical and an
    interval narrows the box bounds.  Constraints that land on inherited
    values are checked against them immediately and raise
    :class:`InfeasibleSkeletonError` on conflict, as does a skeleton whose
    constraints leave no free variable.

    Returns ``(objective, spec)``.  The objective maps a flat sample to the
    summed skill values along the chain plus ``lam`` times the wrapped
    distance from the last subgoal to the target; with ``terminal_only``
    the value terms are dropped and only the distance term remains.  The
    callable carries ``batch`` (vectorized scoring of an ``(m, ndim)``
    matrix) and ``assemble`` (samples to full ``(m, K, dim)`` subgoal
    stacks) attributes.
    """
    ops = _resolve_ops(problem, skeleton)
    if not ops:
        raise InfeasibleSkeletonError("empty skeleton has no subgoal variables")
    _replay_symbolic(problem, ops)
    layout = problem.layout
    params = problem.library.params
    lo_ws, hi_ws = layout.bounds(params.position_bound)
    n_steps = len(ops)

    # collect, per subgoal step and dimension, the switch constraints imposed
    # by later operators; a constraint binds the closest earlier actuation of
    # that dimension, or the start configuration when nothing rewrites it
    pending: list[dict] = [dict() for _ in range(n_steps)]
    for dim, cons in sorted(ops[0].switch.items()):
        _check_static(problem.start[dim], cons, ops[0].name, dim)
    for k in range(1, n_steps):
        for dim, cons in sorted(ops[k].switch.items()):
            writer = None
            for j in range(k - 1, -1, -1):
                if dim in ops[j].actuated:
                    writer = j
                    break
            if writer is None:
                _check_static(problem.start[dim], cons, ops[k].name, dim)
            else:
                pending[writer].setdefault(dim, []).append((cons, ops[k].name))

    cont_lo: list = []
    cont_hi: list = []
    tables: list = []
    writes: list = []
    for k, op in enumerate(ops):
        rows = []
        for dim in op.actuated:
            kind, payload = _variable_domain(
                pending[k].get(dim, []), lo_ws[dim], hi_ws[dim], dim
            )
            if kind == "cont":
                rows.append((dim, "cont", len(cont_lo)))
                cont_lo.append(payload[0])
                cont_hi.append(payload[1])
            elif kind == "cat":
                rows.append((dim, "cat", len(tables)))
                tables.append(payload)
            else:
                rows.append((dim, "lock", payload))
        writes.append(tuple(rows))
    if not cont_lo and not tables:
        raise InfeasibleSkeletonError("skeleton leaves no free subgoal variable")
    spec = VariableSpec(
        lower=np.asarray(cont_lo), upper=np.asarray(cont_hi), categories=tuple(tables)
    )
    n_cont = spec.n_continuous

    maps = tuple(_operator_map(params, op, layout) for op in ops)
    values = tuple(problem.library.value(op.skill) for op in ops)
    start = problem.start
    target = problem.target
    lam = problem.lam

    def assemble(samples) -> np.ndarray:
        samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        m = samples.shape[0]
        out = np.empty((m, n_steps, start.size))
        cur = np.tile(start, (m, 1))
        for k in range(n_steps):
            cur = cur.copy()
            for dim, kind, payload in writes[k]:
                if kind == "cont":
                    cur[:, dim] = samples[:, payload]
                elif kind == "cat":
                    cur[:, dim] = samples[:, n_cont + payload]
                else:
                    cur[:, dim] = payload
            out[:, k] = cur
        return out

    def score_batch(samples) -> np.ndarray:
        samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        sub = assemble(samples)
        total = np.zeros(samples.shape[0])
        if not terminal_only:
            prev = np.tile(start, (samples.shape[0], 1))
            for k in range(n_steps):
                z = np.atleast_2d(gamma_map(maps[k], prev, sub[:, k]))
                grid = values[k].grid
                inside = np.clip(z, grid.lower, grid.upper)
                total += values[k].evaluate(inside)
                total -= _RANGE_PENALTY * np.abs(z - inside).sum(axis=1)
                prev = sub[:, k]
        total += lam * layout.distance(sub[:, n_steps - 1], target)
        return total

    def objective(x) -> float:
        return float(score_batch(x)[0])

    objective.batch = score_batch
    objective.assemble = assemble
    objective.operators = ops
    return objective, spec


# ---------------------------------------------------------------------------
# verification by policy replay


def switch_violations(problem: Problem, skeleton, subgoals) -> list:
    """Names of switch constraints the subgoal chain violates.

    Each operator's switch binds the configuration it starts from: the
    previous subgoal row, or the start configuration for the first step.
    """
    ops = _resolve_ops(problem, skeleton)
    subgoals = np.atleast_2d(np.asarray(subgoals, dtype=np.float64))
    out = []
    for k, op in enumerate(ops):
        before = problem.start if k == 0 else subgoals[k - 1]
        for dim, cons in sorted(op.switch.items()):
            value = float(before[dim])
            kind = cons["type"]
            if kind == "lock":
                ok = abs(value - cons["value"]) <= _EQ_TOL
            elif kind == "choice":
                ok = any(abs(value - v) <= _EQ_TOL for v in cons["values"])
            else:
                ok = cons["lower"] - _EQ_TOL <= value <= cons["upper"] + _EQ_TOL
            if not ok:
                out.append(f"{op.name}: {kind} switch on dimension {dim}")
    return out


def _meets_target(problem: Problem, x) -> bool:
    diff = problem.layout.wrapped_difference(x, problem.target)
    angles = problem.layout.angle_dims
    for k in range(diff.size):
        tol = problem.orientation_tol if k in angles else problem.position_tol
        if abs(diff[k]) > tol:
            return False
    return True


def replay_solution(problem: Problem, skeleton, subgoals):
    """Roll the greedy skill policies through the chain.

    Returns the achieved final configuration and per-step diagnostics
    (steps taken, residual errors in the skill frame, whether the skill
    reached its subgoal before the horizon).
    """
    ops = _resolve_ops(problem, skeleton)
    _replay_symbolic(problem, ops)
    subgoals = np.atleast_2d(np.asarray(subgoals, dtype=np.float64))
    if subgoals.shape[0] != len(ops):
        raise ProblemError("need exactly one subgoal row per operator")
    params = problem.library.params
    layout = problem.layout
    x = problem.start.copy()
    stats = []
    for k, op in enumerate(ops):
        smap = _operator_map(params, op, layout)
        mdp = build_mdp(params, op.skill)
        policy = problem.library.policy(op.skill)
        z0 = gamma_map(smap, x, subgoals[k])
        grid = problem.library.value(op.skill).grid
        if np.any(z0 < grid.lower - _EQ_TOL) or np.any(z0 > grid.upper + _EQ_TOL):
            # the commanded transition leaves the skill's trained region; the
            # chain cannot execute past this point
            stats.append(
                {
                    "operator": op.name,
                    "skill": op.skill,
                    "steps": 0,
                    "reached": False,
                    "in_range": False,
                    "position_error": float(mdp.position_error(z0[np.newaxis])[0]),
                    "orientation_error": float(
                        mdp.orientation_error(z0[np.newaxis])[0]
                    ),
                }
            )
            break
        finals, _, reached, steps = rollout_batch(
            mdp,
            policy,
            z0[np.newaxis],
            params.horizon,
            success_position=params.success_position,
            success_orientation=params.success_orientation,
        )
        x = phi_map(smap, finals[0], subgoals[k])
        stats.append(
            {
                "operator": op.name,
                "skill": op.skill,
                "steps": int(steps[0]),
                "reached": bool(reached[0]),
                "in_range": True,
                "position_error": float(mdp.position_error(finals)[0]),
                "orientation_error": float(mdp.orientation_error(finals)[0]),
            }
        )
    return x, stats


def verify_solution(problem: Problem, skeleton, subgoals):
    """Check a candidate by replaying its skills.

    Returns ``(solved, feedback, achieved)`` where feedback is the binary
    tree reward.  An empty skeleton is solved exactly when the start already
    meets the target tolerances; switch violations and rollouts that run out
    of horizon yield an unsolved result rather than an error.
    """
    ops = _resolve_ops(problem, skeleton)
    if not ops:
        ok = _meets_target(problem, problem.start)
        return ok, float(ok), problem.start.copy()
    subgoals = np.atleast_2d(np.asarray(subgoals, dtype=np.float64))
    if subgoals.shape != (len(ops), problem.start.size):
        raise ProblemError("need exactly one subgoal row per operator")
    if switch_violations(problem, ops, subgoals):
        return False, 0.0, problem.start.copy()
    achieved, _ = replay_solution(problem, ops, subgoals)
    ok = _meets_target(problem, achieved)
    return bool(ok), float(ok), achieved


def skill_rewards(problem: Problem, skeleton, subgoals) -> np.ndarray:
    """Per-step value terms rescaled to [0, 1] over each skill's range."""
    ops = _resolve_ops(problem, skeleton)
    subgoals = np.atleast_2d(np.asarray(subgoals, dtype=np.float64))
    params = problem.library.params
    layout = problem.layout
    out = np.zeros(len(ops))
    prev = problem.start
    for k, op in enumerate(ops):
        smap = _operator_map(params, op, layout)
        z = gamma_map(smap, prev, subgoals[k])
        out[k] = problem.library.value(op.skill).normalized(z[np.newaxis])[0]
        prev = subgoals[k]
    return out


def normalized_cumulative_reward(problem: Problem, solution: Solution) -> float:
    """Sum of normalized per-step values; bounded by the skeleton length."""
    if not solution.skeleton:
        return 0.0
    return float(np.sum(skill_rewards(problem, solution.skeleton, solution.subgoals)))


# ---------------------------------------------------------------------------
# the solver loop


@dataclass(frozen=True)
class LspConfig:
    """Solver budgets: proposal iterations, wanted solutions, exploration
    weight, skeleton length cap and the subgoal optimizer settings.  The
    optimizer seed is respawned per proposal from the master ``seed``."""

    max_iters: int = 100
    max_solutions: int = 5
    explore: float = 3.0
    max_skeleton_len: int = 6
    cem: CemConfig = field(default_factory=CemConfig)
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1 or self.max_solutions < 1:
            raise ProblemError("budgets must be at least 1")
        if self.max_skeleton_len < 1:
            raise ProblemError("max_skeleton_len must be at least 1")
        if self.explore < 0.0:
            raise ProblemError("explore must be non-negative")


def lsp_solve(problem: Problem, cfg: LspConfig | None = None) -> SolutionSet:
    """Search skeletons and subgoals until enough verified solutions exist.

    Each iteration proposes one skeleton from the persistent tree, optimizes
    its subgoals, replays the skills and feeds the binary outcome back into
    the tree.  Solved candidates accumulate unless byte-identical to an
    earlier one; the loop stops at ``max_solutions`` or after ``max_iters``
    proposals.  When the start configuration already meets the target
    tolerances the result is a single empty-skeleton solution whose score is
    the weighted start-to-target distance.  An exhausted budget without any
    solution returns an empty set that still reports the iteration count and
    the best infeasible score seen.
    """
    cfg = LspConfig() if cfg is None else cfg
    if _meets_target(problem, problem.start):
        psi = float(problem.lam * problem.layout.distance(problem.start, problem.target))
        sol = Solution(
            skeleton=(),
            subgoals=np.zeros((0, problem.start.size)),
            score=psi,
            solved=True,
        )
        return SolutionSet(solutions=(sol,), scores=(psi,), iterations=0)

    rng = np.random.default_rng(cfg.seed)
    tree = SearchTree(
        problem.domain.initial,
        problem.domain.operators,
        max_len=cfg.max_skeleton_len,
        c_e=cfg.explore,
    )
    solutions: list = []
    scores: list = []
    seen: set = set()
    best_infeasible = None
    iterations = 0
    for _ in range(cfg.max_iters):
        iterations += 1
        cem_seed = int(rng.integers(2**31 - 1))
        prop = tree.propose(rng)
        if prop.failed or not prop.skeleton:
            backprop(prop.path, 0.0)
            continue
        try:
            objective, spec = build_objective(problem, prop.skeleton)
        except InfeasibleSkeletonError:
            backprop(prop.path, 0.0)
            continue
        try:
            mode, score = cem_optimize(
                objective, spec, replace(cfg.cem, seed=cem_seed)
            )
        except NumericalError:
            backprop(prop.path, 0.0)
            continue
        subgoals = objective.assemble(mode)[0]
        achieved, stats = replay_solution(problem, prop.skeleton, subgoals)
        solved = _meets_target(problem, achieved)
        backprop(prop.path, 1.0 if solved else 0.0)
        if not solved:
            if best_infeasible is None or score > best_infeasible:
                best_infeasible = float(score)
            continue
        names = tuple(op.name for op in prop.skeleton)
        key = (names, subgoals.tobytes())
        if key in seen:
            continue
        seen.add(key)
        rewards = skill_rewards(problem, names, subgoals)
        solutions.append(
            Solution(
                skeleton=names,
                subgoals=subgoals,
                score=float(score),
                rewards=tuple(rewards),
                solved=True,
                rollouts=tuple(stats),
            )
        )
        scores.append(float(score))
        if len(solutions) >= cfg.max_solutions:
            break
    return SolutionSet(
        solutions=tuple(solutions),
        scores=tuple(scores),
        iterations=iterations,
        best_infeasible=best_infeasible,
    )
