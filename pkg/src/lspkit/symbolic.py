"""Ground-predicate planning layer: operators, successors, and MCTS.

States are sets of ground atoms under the closed-world assumption (an absent
atom is false).  Operators come from JSON domain files that also carry the
geometric annotations (actuated dims, switch constraints) consumed by the
long-horizon solver; this module treats those annotations as opaque data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "DomainError",
    "OperatorError",
    "SymbolicState",
    "SymbolicGoal",
    "SkillOperator",
    "SymbolicDomain",
    "MctsNode",
    "Proposal",
    "SearchTree",
    "applicable",
    "succ",
    "ucb1",
    "mcts_propose",
    "backprop",
    "format_state",
    "load_symbolic_domain",
    "builtin_domain_path",
]


class DomainError(ValueError):
    """A domain file is malformed or internally inconsistent."""


class OperatorError(ValueError):
    """An operator was applied in a state that violates its preconditions."""


def _atom(raw) -> tuple:
    atom = tuple(str(part) for part in raw)
    if len(atom) < 2:
        raise DomainError(f"atom needs a predicate and arguments: {raw!r}")
    return atom


def _atoms(raw) -> frozenset:
    return frozenset(_atom(a) for a in raw)


def format_atom(atom: tuple) -> str:
    return "(" + " ".join(atom) + ")"


@dataclass(frozen=True)
class SymbolicState:
    """Set of ground atoms; equality and hashing follow the set."""

    atoms: frozenset

    @staticmethod
    def from_atoms(raw) -> "SymbolicState":
        return SymbolicState(_atoms(raw))

    def __contains__(self, atom) -> bool:
        return tuple(atom) in self.atoms

    def __len__(self) -> int:
        return len(self.atoms)

    def sorted_atoms(self) -> list:
        return sorted(self.atoms)


def format_state(state: SymbolicState) -> str:
    """Deterministic one-line dump used by golden-file tests."""
    return " ".join(format_atom(a) for a in state.sorted_atoms())


@dataclass(frozen=True)
class SymbolicGoal:
    """Conjunctive goal: required atoms plus forbidden atoms."""

    positive: frozenset
    negative: frozenset

    def satisfied(self, state: SymbolicState) -> bool:
        return self.positive <= state.atoms and not (self.negative & state.atoms)


@dataclass(frozen=True)
class SkillOperator:
    """One symbolic operator grounded on the domain entities.

    ``skill`` names the underlying trained policy (the token before the
    underscore in ``name``).  ``actuated``/``lh_dims``/``skill_dims`` and
    ``switch`` annotate the geometry for the long-horizon solver: ``switch``
    maps a long-horizon dim of the *preceding* subgoal to a lock, choice, or
    interval that must hold before this operator runs.
    """

    name: str
    skill: str
    pre_pos: frozenset
    pre_neg: frozenset
    add: frozenset
    delete: frozenset
    actuated: tuple
    switch: dict
    lh_dims: tuple | None = None
    skill_dims: tuple | None = None

    def __post_init__(self):
        if self.add & self.delete:
            raise DomainError(f"{self.name}: add and delete effects overlap")
        if not self.actuated:
            raise DomainError(f"{self.name}: actuated dims must be non-empty")

    def applicable_in(self, state: SymbolicState) -> bool:
        return self.pre_pos <= state.atoms and not (self.pre_neg & state.atoms)


@dataclass(frozen=True)
class SymbolicDomain:
    """Operator declarations plus the initial state of one task family."""

    name: str
    predicates: tuple
    entities: tuple
    operators: tuple
    initial: SymbolicState
    goal: SymbolicGoal | None = None

    def operator(self, name: str) -> SkillOperator:
        for op in self.operators:
            if op.name == name:
                return op
        raise DomainError(f"unknown operator: {name}")


def applicable(state: SymbolicState, ops) -> list:
    """Operators whose preconditions hold, in declaration order."""
    return [op for op in ops if op.applicable_in(state)]


def succ(state: SymbolicState, op: SkillOperator) -> SymbolicState:
    """Successor state (state minus deletes, plus adds)."""
    if not op.applicable_in(state):
        raise OperatorError(f"operator {op.name} not applicable in "
                            f"[{format_state(state)}]")
    return SymbolicState((state.atoms - op.delete) | op.add)


# ---------------------------------------------------------------------------
# domain files


_SWITCH_KINDS = {"lock", "choice", "interval"}


def _parse_switch(name: str, raw: dict) -> dict:
    out = {}
    for dim, spec in raw.items():
        kind = spec.get("type")
        if kind not in _SWITCH_KINDS:
            raise DomainError(f"{name}: unknown switch type {kind!r}")
        entry = {"type": kind}
        if kind == "lock":
            entry["value"] = float(spec["value"])
        elif kind == "choice":
            values = [float(v) for v in spec["values"]]
            if not values:
                raise DomainError(f"{name}: empty choice set")
            entry["values"] = tuple(values)
        else:
            lo, hi = float(spec["lower"]), float(spec["upper"])
            if not lo < hi:
                raise DomainError(f"{name}: interval bounds out of order")
            entry["lower"], entry["upper"] = lo, hi
        out[int(dim)] = entry
    return out


def builtin_domain_path(name: str) -> Path:
    return Path(resources.files("lspkit") / "data" / f"{name}.json")


def load_symbolic_domain(path) -> SymbolicDomain:
    """Read a domain JSON file (operators in declaration order)."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DomainError(f"cannot read domain file: {exc}") from exc

    predicates = tuple(raw.get("predicates", ()))
    entities = tuple(raw.get("entities", ()))
    declared = set(predicates)

    def check(atoms, where):
        for a in atoms:
            if a[0] not in declared:
                raise DomainError(f"{where}: undeclared predicate {a[0]!r}")
            for arg in a[1:]:
                if arg not in entities:
                    raise DomainError(f"{where}: undeclared entity {arg!r}")
        return atoms

    ops = []
    for spec in raw.get("operators", ()):
        name = spec["name"]
        skill = spec.get("skill", name.split("_")[0])
        op = SkillOperator(
            name=name,
            skill=skill,
            pre_pos=check(_atoms(spec.get("pre_pos", ())), name),
            pre_neg=check(_atoms(spec.get("pre_neg", ())), name),
            add=check(_atoms(spec.get("add", ())), name),
            delete=check(_atoms(spec.get("delete", ())), name),
            actuated=tuple(int(d) for d in spec["actuated"]),
            switch=_parse_switch(name, spec.get("switch", {})),
            lh_dims=tuple(int(d) for d in spec["lh_dims"])
            if "lh_dims" in spec else None,
            skill_dims=tuple(int(d) for d in spec["skill_dims"])
            if "skill_dims" in spec else None,
        )
        ops.append(op)
    if len({op.name for op in ops}) != len(ops):
        raise DomainError("duplicate operator names")

    goal = None
    if "goal" in raw:
        goal = SymbolicGoal(
            positive=check(_atoms(raw["goal"].get("positive", ())), "goal"),
            negative=check(_atoms(raw["goal"].get("negative", ())), "goal"),
        )
    return SymbolicDomain(
        name=str(raw.get("name", path.stem)),
        predicates=predicates,
        entities=entities,
        operators=tuple(ops),
        initial=SymbolicState(check(_atoms(raw.get("initial", ())), "initial")),
        goal=goal,
    )


# ---------------------------------------------------------------------------
# Monte Carlo tree search


@dataclass
class MctsNode:
    state: SymbolicState
    op: SkillOperator | None = None
    parent: "MctsNode | None" = None
    visits: int = 0
    wins: float = 0.0
    children: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Proposal:
    """One proposed skeleton plus the tree path that produced it."""

    skeleton: tuple
    path: list
    failed: bool = False


def ucb1(node: MctsNode, parent_visits: int, c_e: float) -> float:
    """Upper confidence bound; unvisited nodes rank first."""
    if node.visits == 0:
        return math.inf
    return node.wins / node.visits + c_e * math.sqrt(
        2.0 * math.log(parent_visits) / node.visits
    )


def _fresh_steps(state: SymbolicState, operators, visited):
    """Applicable (operator, successor) pairs that leave the visited set.

    Dropping revisits keeps proposals acyclic: an operator whose effects are
    already contained in the state (or that undoes an earlier step) would
    otherwise pad skeletons with no-op repetitions up to the length cap.
    """
    steps = []
    for op in applicable(state, operators):
        nxt = succ(state, op)
        if nxt not in visited:
            steps.append((op, nxt))
    return steps


class SearchTree:
    """Persistent MCTS tree over symbolic states.

    ``propose`` runs one select-expand-simulate pass and returns the skeleton
    with the visited node path; the caller scores the skeleton and feeds the
    result to :func:`backprop`.
    """

    def __init__(self, root_state: SymbolicState, operators, max_len: int = 6,
                 c_e: float = 3.0, goal: SymbolicGoal | None = None):
        self.operators = tuple(operators)
        self.max_len = int(max_len)
        self.c_e = float(c_e)
        self.goal = goal
        self.root = MctsNode(root_state)

    def _terminal(self, state: SymbolicState) -> bool:
        return self.goal is not None and self.goal.satisfied(state)

    def propose(self, rng: np.random.Generator) -> Proposal:
        if self.max_len < 1:
            return Proposal((), [self.root], failed=True)
        node = self.root
        path = [node]
        visited = {node.state}
        skeleton = []
        # tree policy: descend by UCB1 until an unvisited node or a terminal
        while len(skeleton) < self.max_len and not self._terminal(node.state):
            steps = _fresh_steps(node.state, self.operators, visited)
            if not steps:
                break
            best, best_score = None, -math.inf
            for op, nxt in steps:
                child = node.children.get(op.name)
                if child is None:
                    child = MctsNode(nxt, op, node)
                    node.children[op.name] = child
                score = ucb1(child, max(node.visits, 1), self.c_e)
                if score > best_score:
                    best, best_score = child, score
            node = best
            path.append(node)
            visited.add(node.state)
            skeleton.append(node.op)
            if node.visits == 0:
                break
        if not skeleton and not self._terminal(node.state):
            return Proposal((), path, failed=True)
        # rollout: uniform random continuation outside the stored tree
        state = node.state
        while len(skeleton) < self.max_len and not self._terminal(state):
            steps = _fresh_steps(state, self.operators, visited)
            if not steps:
                break
            op, state = steps[int(rng.integers(len(steps)))]
            visited.add(state)
            skeleton.append(op)
        return Proposal(tuple(skeleton), path)


def mcts_propose(root: SymbolicState, ops, max_len: int = 6, c_e: float = 3.0,
                 rng: np.random.Generator | None = None,
                 tree: SearchTree | None = None) -> Proposal:
    """One search pass; pass ``tree`` to accumulate statistics across calls."""
    if tree is None:
        tree = SearchTree(root, ops, max_len=max_len, c_e=c_e)
    if rng is None:
        rng = np.random.default_rng(0)
    return tree.propose(rng)


def backprop(path, r: float) -> None:
    """Add one visit with reward ``r`` to every node on the path."""
    for node in path:
        node.visits += 1
        node.wins += r
