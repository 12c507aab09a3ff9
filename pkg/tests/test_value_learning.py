"""Tests for grid value iteration, greedy policies, and the skill library."""

import dataclasses
import json

import numpy as np
import oracles
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import lspkit.value_learning as vl
from lspkit.skills import SkillMdp, TrainSettings, build_mdp, load_domain_params
from lspkit.tt import Grid, tt_cross
from lspkit.value_learning import (
    GreedyPolicy,
    LibraryError,
    SkillLibrary,
    ValueFunction,
    act,
    action_candidates,
    bellman_residual,
    greedy_backup,
    load_library,
    rollout,
    rollout_batch,
    save_library,
    train_library,
    train_skill,
    tt_value_iteration,
    value_prediction_agreement,
)

PARAMS = load_domain_params()


def toy_mdp(gamma=0.9, reward=None, action_dim=1):
    """1-D (or separable 2-D action) clamped integrator used for fast tests."""
    lower, upper = np.array([-1.0]), np.array([1.0])
    alow = np.full(action_dim, -1.0)
    aup = np.full(action_dim, 1.0)

    def trans(s, a):
        return np.clip(s + a[:, :1] * 0.25, lower, upper)

    def default_reward(s, a):
        return -np.abs(s[:, 0]) - 0.01 * np.linalg.norm(a, axis=1)

    return SkillMdp(
        name="toy",
        state_lower=lower,
        state_upper=upper,
        state_angle_dims=(),
        state_discrete={},
        action_lower=alow,
        action_upper=aup,
        action_discrete={},
        dt=0.25,
        gamma=gamma,
        rho=1.0,
        transition=trans,
        reward=reward or default_reward,
        position_error=lambda s: np.abs(np.atleast_2d(s)[:, 0]),
        orientation_error=lambda s: np.zeros(np.atleast_2d(s).shape[0]),
        sample_states=lambda n, rng: rng.uniform(-1, 1, size=(n, 1)),
    )


def small_grid(mdp, counts):
    return Grid(mdp.state_lower, mdp.state_upper, np.asarray(counts))


@pytest.fixture(scope="module")
def pivot17():
    """Pivot value function on a deliberately coarse grid (fast, inexact)."""
    mdp = build_mdp(PARAMS, "pivot")
    vf = tt_value_iteration(mdp, small_grid(mdp, [17, 17]), eps=1e-4,
                            max_iters=300, per_dim=9)
    return mdp, vf


class TestActionCandidates:
    def test_counts_and_enumeration_order(self):
        mdp = build_mdp(PARAMS, "pull")
        cands = action_candidates(mdp, per_dim=3)
        assert cands.shape == (27, 3)
        sp = PARAMS.linear_speed
        # first dim varies slowest; the first candidate is the lower corner
        assert cands[0] == pytest.approx([-sp, -sp, -PARAMS.angular_speed])
        assert cands[1][:2] == pytest.approx([-sp, -sp])
        assert cands[9][0] == pytest.approx(0.0)
        assert cands[9][1] == pytest.approx(-sp)

    def test_discrete_face_axis(self):
        mdp = build_mdp(PARAMS, "push")
        cands = action_candidates(mdp, per_dim=5)
        assert cands.shape == (100, 3)
        assert set(np.unique(cands[:, 2])) == {0.0, 1.0, 2.0, 3.0}

    def test_too_few_candidates_rejected(self):
        mdp = build_mdp(PARAMS, "pull")
        with pytest.raises(ValueError):
            action_candidates(mdp, per_dim=2)
        vf = ValueFunction.from_tt(
            "pull", _const_tt(mdp), mdp.gamma, 1e-3, 10, 1, True)
        with pytest.raises(ValueError):
            GreedyPolicy(mdp, vf, per_dim=2)

    @given(per_dim=st.integers(min_value=3, max_value=12))
    @settings(max_examples=20, deadline=None)
    def test_candidates_inside_action_box(self, per_dim):
        mdp = build_mdp(PARAMS, "pull")
        cands = action_candidates(mdp, per_dim)
        assert np.all(cands >= mdp.action_lower - 1e-12)
        assert np.all(cands <= mdp.action_upper + 1e-12)


def _const_tt(mdp, counts=(5, 5, 5)):
    grid = small_grid(mdp, counts[: mdp.state_dim])
    res = tt_cross(lambda p: np.zeros(p.shape[0]), grid, eps=1e-10, max_rank=2)
    return res.tt


class TestGreedyBackup:
    def test_matches_manual_candidate_max(self):
        mdp = build_mdp(PARAMS, "pivot")
        rng = np.random.default_rng(3)
        states = mdp.sample_states(40, rng)

        def value_fn(p):
            return -np.abs(p[:, 0] - p[:, 1])

        values, actions = greedy_backup(mdp, value_fn, states, per_dim=9)
        cands = action_candidates(mdp, 9)
        for i, s in enumerate(states):
            qs = [
                float(mdp.reward(s[None], u[None])[0])
                + mdp.gamma * float(value_fn(mdp.transition(s[None], u[None]))[0])
                for u in cands
            ]
            best = int(np.argmax(qs))
            assert values[i] == pytest.approx(qs[best], abs=1e-12)
            assert actions[i] == pytest.approx(cands[best])

    def test_tie_breaks_to_first_candidate(self):
        mdp = toy_mdp(reward=lambda s, a: np.zeros(s.shape[0]))
        _, actions = greedy_backup(mdp, None, np.array([[0.2]]), per_dim=5)
        # every action scores 0; the earliest candidate (lower bound) wins
        assert actions[0] == pytest.approx([-1.0])

    def test_coordinate_scheme_solves_separable_objective(self):
        target = np.array([0.5, -0.75])

        def rew(s, a):
            return -np.sum((a - target) ** 2, axis=1)

        mdp = toy_mdp(reward=rew, action_dim=2)
        states = np.array([[0.0], [0.4]])
        v_en, a_en = greedy_backup(mdp, None, states, per_dim=9,
                                   scheme="enumerate")
        v_co, a_co = greedy_backup(mdp, None, states, per_dim=9,
                                   scheme="coordinate")
        assert a_co == pytest.approx(a_en)
        assert v_co == pytest.approx(v_en)

    def test_unknown_scheme_rejected(self):
        mdp = toy_mdp()
        with pytest.raises(ValueError):
            greedy_backup(mdp, None, np.array([[0.0]]), scheme="anneal")


class TestValueIteration:
    def test_zero_reward_gives_zero_value(self):
        mdp = toy_mdp(reward=lambda s, a: np.zeros(s.shape[0]))
        vf = tt_value_iteration(mdp, small_grid(mdp, [9]), eps=1e-6,
                                max_iters=50, per_dim=5)
        assert vf.converged
        assert vf.iterations == 1
        pts = np.linspace(-1, 1, 33)[:, None]
        assert vf.evaluate(pts) == pytest.approx(np.zeros(33), abs=1e-12)

    def test_dense_path_matches_tabular_oracle(self):
        mdp = build_mdp(PARAMS, "pivot")
        grid = small_grid(mdp, [17, 17])
        vf = tt_value_iteration(mdp, grid, eps=1e-12, max_iters=30, per_dim=9)
        axes = [grid.axis(0), grid.axis(1)]
        table, iters, _ = oracles.dense_value_iteration(
            axes, mdp.transition, mdp.reward, action_candidates(mdp, 9),
            mdp.gamma, max_iters=30)
        assert iters == vf.iterations == 30
        pts = vl._grid_points(grid)
        assert np.max(np.abs(vf.evaluate(pts) - table.ravel())) < 1e-8

    def test_cross_path_matches_dense_path(self):
        mdp = build_mdp(PARAMS, "pivot")
        grid = small_grid(mdp, [17, 17])
        dense = tt_value_iteration(mdp, grid, eps=1e-4, max_iters=300,
                                   per_dim=9)
        crossed = tt_value_iteration(mdp, grid, eps=1e-4, max_iters=300,
                                     per_dim=9, max_rank=17, cross_sweeps=3,
                                     dense_cutoff=0)
        # warm-started sweeps must keep enriching the skeleton: a stalled
        # rank-4 cross lands an order of magnitude further from the dense
        # fixpoint than the value scale allows here
        assert max(crossed.tt.ranks) > 8
        pts = mdp.sample_states(400, np.random.default_rng(5))
        diff = np.max(np.abs(dense.evaluate(pts) - crossed.evaluate(pts)))
        scale = abs(dense.v_min)
        assert diff < 0.005 * scale

    def test_goal_state_value_near_zero(self):
        mdp = build_mdp(PARAMS, "pull")
        vf = tt_value_iteration(mdp, small_grid(mdp, [9, 9, 9]), eps=1e-3,
                                max_iters=100, per_dim=5)
        assert float(vf.evaluate([[0.0, 0.0, 0.0]])[0]) >= -1e-3

    def test_residual_sequence_contracts(self):
        mdp = build_mdp(PARAMS, "pivot")
        seen = []
        tt_value_iteration(mdp, small_grid(mdp, [17, 17]), eps=1e-6,
                           max_iters=40, per_dim=9,
                           callback=lambda i, r, f: seen.append((i, r)))
        iters = [i for i, _ in seen]
        assert iters == list(range(1, len(seen) + 1))
        resid = [r for _, r in seen]
        for prev, nxt in zip(resid[1:], resid[2:]):
            # sup-norm Bellman contraction, exact on the dense path
            assert nxt <= prev * mdp.gamma + 1e-9

    def test_callback_value_fn_is_callable(self):
        mdp = build_mdp(PARAMS, "pivot")
        grabbed = []
        tt_value_iteration(mdp, small_grid(mdp, [9, 9]), eps=1e-2,
                           max_iters=30, per_dim=5,
                           callback=lambda i, r, f: grabbed.append(f))
        vals = grabbed[-1](np.array([[0.0, 0.0], [1.0, -1.0]]))
        assert np.all(np.isfinite(vals))

    def test_unconverged_flag(self):
        mdp = build_mdp(PARAMS, "pivot")
        vf = tt_value_iteration(mdp, small_grid(mdp, [9, 9]), eps=1e-9,
                                max_iters=2, per_dim=5)
        assert not vf.converged
        assert vf.iterations == 2

    def test_bad_arguments_rejected(self):
        mdp = build_mdp(PARAMS, "pivot")
        with pytest.raises(ValueError):
            tt_value_iteration(mdp, small_grid(toy_mdp(), [9]), eps=1e-3)
        with pytest.raises(ValueError):
            tt_value_iteration(mdp, small_grid(mdp, [9, 9]), eps=0.0)

    def test_same_seed_same_result(self):
        mdp = build_mdp(PARAMS, "pivot")
        grid = small_grid(mdp, [13, 13])
        kw = dict(eps=1e-4, max_iters=60, per_dim=5, max_rank=13,
                  cross_sweeps=2, dense_cutoff=0, seed=7)
        a = tt_value_iteration(mdp, grid, **kw)
        b = tt_value_iteration(mdp, grid, **kw)
        assert all(
            np.array_equal(ca, cb) for ca, cb in zip(a.tt.cores, b.tt.cores)
        )


class TestValueFunction:
    def test_evaluate_clamps_to_nonpositive(self):
        mdp = build_mdp(PARAMS, "pull")
        grid = small_grid(mdp, [7, 7, 7])
        res = tt_cross(lambda p: 1.0 + p[:, 0] ** 2, grid, eps=1e-10,
                       max_rank=5)
        vf = ValueFunction.from_tt("pull", res.tt, 0.99, 1e-3, 5, 1, True)
        pts = mdp.sample_states(200, np.random.default_rng(0))
        assert np.all(vf.evaluate(pts) <= 0.0)
        assert vf.v_max <= 0.0 and vf.v_min <= vf.v_max

    def test_normalized_hits_unit_interval(self, pivot17):
        mdp, vf = pivot17
        pts = mdp.sample_states(300, np.random.default_rng(1))
        norm = vf.normalized(pts)
        assert np.all((norm >= 0.0) & (norm <= 1.0))
        # on-diagonal states are goals: value ~ 0 so normalized ~ 1
        diag = np.array([[0.5, 0.5], [-2.0, -2.0]])
        assert np.all(vf.normalized(diag) > 0.95)
        # the worst corner (pi apart) should sit near the bottom of the range
        assert float(vf.normalized([[np.pi - 0.01, -np.pi + 0.01]])[0]) < 0.05

    def test_evaluate_chunking_consistent(self, pivot17, monkeypatch):
        mdp, vf = pivot17
        pts = mdp.sample_states(50, np.random.default_rng(2))
        whole = vf.evaluate(pts)
        monkeypatch.setattr(vl, "_CHUNK", 7)
        assert vf.evaluate(pts) == pytest.approx(whole, abs=0)


class TestBellmanResidual:
    def test_matches_manual_computation(self, pivot17):
        mdp, vf = pivot17
        got = bellman_residual(vf, mdp, n_states=64, seed=9, per_dim=9)
        states = mdp.sample_states(64, np.random.default_rng(9))
        backed, _ = greedy_backup(mdp, vf.evaluate, states, per_dim=9)
        want = float(np.max(np.abs(vf.evaluate(states) - backed)))
        assert got == pytest.approx(want, abs=0)

    def test_small_on_converged_toy(self):
        # 33 nodes put the grid spacing at exactly one candidate-action step
        # (0.0625), which keeps interpolation aligned with the reachable set
        mdp = toy_mdp()
        vf = tt_value_iteration(mdp, small_grid(mdp, [33]), eps=1e-6,
                                max_iters=400, per_dim=9)
        assert vf.converged
        assert bellman_residual(vf, mdp, n_states=200, per_dim=9) < 0.05


class TestPolicyRollout:
    def test_pivot_rotates_toward_goal(self, pivot17):
        mdp, vf = pivot17
        policy = GreedyPolicy(mdp, vf, per_dim=9)
        assert act(policy, np.array([-1.0, 1.0]))[0] > 0.0
        assert act(policy, np.array([1.0, -1.0]))[0] < 0.0

    def test_act_tie_breaks_to_first_candidate(self):
        mdp = toy_mdp(reward=lambda s, a: np.zeros(s.shape[0]))
        vf = tt_value_iteration(mdp, small_grid(mdp, [9]), eps=1e-6,
                                max_iters=5, per_dim=5)
        policy = GreedyPolicy(mdp, vf, per_dim=5)
        assert act(policy, np.array([0.3]))[0] == pytest.approx(-1.0)

    def test_rollout_start_at_goal(self, pivot17):
        mdp, vf = pivot17
        policy = GreedyPolicy(mdp, vf, per_dim=9)
        res = rollout(mdp, policy, np.array([0.3, 0.3]), horizon=50)
        assert res.success
        assert res.steps == 0
        assert res.cumulative_reward == 0.0
        assert res.states.shape == (1, 2)
        assert res.actions.shape == (0, 1)

    def test_rollout_batch_matches_single(self, pivot17):
        mdp, vf = pivot17
        policy = GreedyPolicy(mdp, vf, per_dim=9)
        starts = np.array([[-2.0, 1.0], [0.5, -0.5], [3.0, 2.9]])
        finals, returns, succ, steps = rollout_batch(
            mdp, policy, starts, horizon=60)
        for i, x0 in enumerate(starts):
            single = rollout(mdp, policy, x0, horizon=60)
            assert finals[i] == pytest.approx(single.states[-1])
            assert returns[i] == pytest.approx(single.cumulative_reward)
            assert bool(succ[i]) == single.success
            assert steps[i] == single.steps

    def test_success_latches_without_early_stop(self, pivot17):
        mdp, vf = pivot17
        policy = GreedyPolicy(mdp, vf, per_dim=9)
        res = rollout(mdp, policy, np.array([-1.0, -0.8]), horizon=80,
                      early_stop=False)
        assert res.success
        assert res.steps == 80

    def test_early_stop_freezes_at_goal(self, pivot17):
        mdp, vf = pivot17
        policy = GreedyPolicy(mdp, vf, per_dim=9)
        res = rollout(mdp, policy, np.array([-1.0, -0.8]), horizon=80)
        assert res.success
        assert res.steps < 80
        assert float(mdp.orientation_error(res.states[-1])[0]) <= np.deg2rad(15)


class TestPredictionAgreement:
    def _trained_toy(self):
        mdp = toy_mdp()
        vf = tt_value_iteration(mdp, small_grid(mdp, [81]), eps=1e-5,
                                max_iters=300, per_dim=9)
        return mdp, vf, GreedyPolicy(mdp, vf, per_dim=9)

    def test_trained_value_agrees_with_rollouts(self):
        mdp, vf, policy = self._trained_toy()
        agr = value_prediction_agreement(vf, mdp, policy, n_pairs=200,
                                         rng_seed=4, horizon=60)
        assert agr >= 0.9

    def test_exact_oracle_control_is_perfect(self):
        mdp, vf, policy = self._trained_toy()

        def oracle(states):
            _, returns, _, _ = rollout_batch(mdp, policy, states, horizon=60,
                                             early_stop=False)
            return returns

        agr = value_prediction_agreement(oracle, mdp, policy, n_pairs=200,
                                         rng_seed=4, horizon=60)
        assert agr == 1.0

    def test_noise_control_near_chance(self):
        mdp, vf, policy = self._trained_toy()

        def noise(states):
            return np.sin(12345.678 * states[:, 0])

        agr = value_prediction_agreement(noise, mdp, policy, n_pairs=400,
                                         rng_seed=4, horizon=60)
        assert 0.4 <= agr <= 0.6

    def test_all_ties_raises(self):
        mdp = toy_mdp(reward=lambda s, a: np.zeros(s.shape[0]))
        vf = tt_value_iteration(mdp, small_grid(mdp, [9]), eps=1e-6,
                                max_iters=5, per_dim=5)
        policy = GreedyPolicy(mdp, vf, per_dim=5)
        with pytest.raises(RuntimeError):
            value_prediction_agreement(vf, mdp, policy, n_pairs=10,
                                       rng_seed=0, horizon=5)

    def test_rejects_zero_pairs(self):
        mdp, vf, policy = self._trained_toy()
        with pytest.raises(ValueError):
            value_prediction_agreement(vf, mdp, policy, n_pairs=0)


class TestSkillLibrary:
    def test_missing_and_lookup_errors(self):
        lib = SkillLibrary(PARAMS)
        assert lib.missing(["pivot", "pull"]) == ["pivot", "pull"]
        with pytest.raises(LibraryError):
            lib.value("pivot")
        with pytest.raises(KeyError):
            lib.policy("pivot")

    def test_save_load_roundtrip(self, pivot17, tmp_path):
        mdp, vf = pivot17
        lib = SkillLibrary(PARAMS, values={"pivot": vf},
                           policies={"pivot": GreedyPolicy(mdp, vf)})
        save_library(tmp_path, lib)
        assert (tmp_path / "pivot.tt").exists()
        meta = json.loads((tmp_path / "pivot.tt.json").read_text())
        info = json.loads(meta["provenance"])
        assert info["skill"] == "pivot"
        assert info["iterations"] == vf.iterations

        loaded = load_library(tmp_path, PARAMS)
        vf2 = loaded.value("pivot")
        pts = mdp.sample_states(200, np.random.default_rng(6))
        assert np.array_equal(vf.evaluate(pts), vf2.evaluate(pts))
        assert vf2.gamma == vf.gamma
        assert vf2.converged == vf.converged
        assert vf2.v_min == pytest.approx(vf.v_min)
        assert loaded.policy("pivot").per_dim \
            == PARAMS.train_for("pivot").candidates

    def test_train_library_deterministic_per_seed(self):
        small = dataclasses.replace(
            PARAMS,
            train={**PARAMS.train,
                   "pivot": TrainSettings(grid=(9, 9), eps=1e-3, max_iters=40,
                                          candidates=5)},
        )
        a = train_library(small, ["pivot"], seed=3)
        b = train_library(small, ["pivot"], seed=3)
        ca, cb = a.value("pivot").tt.cores, b.value("pivot").tt.cores
        assert all(np.array_equal(x, y) for x, y in zip(ca, cb))

    def test_train_skill_unknown_name(self):
        from lspkit.skills import ConfigurationError

        with pytest.raises(ConfigurationError):
            train_skill(PARAMS, "juggle")
