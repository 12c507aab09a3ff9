"""Tests for the analytic skill domains and long-horizon maps."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lspkit.skills import (
    ConfigurationError,
    LongHorizonLayout,
    LongHorizonState,
    PushState,
    build_mdp,
    default_skill_map,
    gamma_map,
    load_domain_params,
    phi_map,
    push_face_center,
    reward,
    step,
    wrap_angle,
)

PARAMS = load_domain_params()


def mdp_for(name):
    return build_mdp(PARAMS, name)


class TestWrapAngle:
    def test_values(self):
        assert wrap_angle(0.0) == 0.0
        assert wrap_angle(np.pi) == pytest.approx(-np.pi)
        assert wrap_angle(-np.pi) == pytest.approx(-np.pi)
        assert wrap_angle(3 * np.pi / 2) == pytest.approx(-np.pi / 2)
        assert wrap_angle(6.0) == pytest.approx(6.0 - 2 * np.pi)

    @given(st.floats(-50.0, 50.0))
    def test_range_and_period(self, x):
        w = float(wrap_angle(x))
        assert -np.pi <= w < np.pi
        assert abs(wrap_angle(x + 2 * np.pi) - w) < 1e-9


class TestDomainParams:
    def test_defaults_load(self):
        assert PARAMS.dt == 0.1
        assert PARAMS.gamma == 0.99
        assert PARAMS.rho_push == 0.5
        assert PARAMS.half_extent == 0.1
        assert PARAMS.success_position == 0.03
        assert PARAMS.success_orientation == pytest.approx(np.deg2rad(15.0))
        assert PARAMS.train_for("push").grid == (21, 21, 21, 4)
        assert len(PARAMS.train_for("pivot").grid) == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_domain_params(tmp_path / "nope.json")

    def test_malformed_file(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"dt": 0.1}))
        with pytest.raises(ConfigurationError):
            load_domain_params(bad)

    def test_unknown_skill(self):
        with pytest.raises(ConfigurationError):
            PARAMS.train_for("juggle")
        with pytest.raises(ConfigurationError):
            build_mdp(PARAMS, "juggle")


class TestIntegrators:
    def test_pull_step(self):
        mdp = mdp_for("pull")
        nxt = step(mdp, [0.2, 0.1, 0.5], [-0.2, -0.1, -0.5])
        assert nxt == pytest.approx([0.18, 0.09, 0.45])

    def test_pull_clamps_at_bound(self):
        mdp = mdp_for("pull")
        nxt = step(mdp, [0.49, 0.0, 0.0], [0.3, 0.0, 0.0])
        assert nxt[0] == pytest.approx(0.5)

    def test_pull_clamps_angle(self):
        mdp = mdp_for("pull")
        nxt = step(mdp, [0.0, 0.0, np.pi - 0.01], [0.0, 0.0, 1.0])
        assert nxt[2] == pytest.approx(np.pi)

    def test_pull_reward(self):
        mdp = mdp_for("pull")
        assert reward(mdp, [0.3, 0.4, 0.0], [0.0, 0.0, 0.0]) == pytest.approx(-1.0)
        assert reward(mdp, [0.0, 0.0, np.pi / 2], [0.0, 0.0, 0.0]) == pytest.approx(-0.5)
        assert reward(mdp, [0.0, 0.0, 0.0], [0.3, 0.0, 0.0]) == pytest.approx(-0.003)

    def test_pick_step_and_reward(self):
        mdp = mdp_for("pick")
        s = np.array([0.1, -0.1, 0.2, 0.0, 0.0, 1.0])
        u = np.array([-0.1, 0.1, -0.2, 0.0, 0.0, -1.0])
        assert step(mdp, s, u) == pytest.approx(s + 0.1 * u)
        r = reward(mdp, [0.0, 0.3, 0.0, 0.0, np.pi / 2, 0.0], np.zeros(6))
        assert r == pytest.approx(-(0.3 / 0.5 + 0.5))

    def test_pivot_step_and_reward(self):
        mdp = mdp_for("pivot")
        nxt = step(mdp, [0.2, -1.0], [-1.0])
        assert nxt == pytest.approx([0.1, -1.0])
        assert reward(mdp, [np.pi / 2, 0.0], [0.0]) == pytest.approx(-0.5)
        assert reward(mdp, [0.3, 0.3], [1.0]) == pytest.approx(-0.01)

    def test_pivot_distance_is_not_periodic(self):
        # hard stops at the angle bounds: no shortcut through the wrap point
        mdp = mdp_for("pivot")
        r = reward(mdp, [3.0, -3.0], [0.0])
        assert r == pytest.approx(-6.0 / np.pi)
        nxt = step(mdp, [np.pi - 0.01, 0.0], [1.0])
        assert nxt[0] == pytest.approx(np.pi)


class TestPushDynamics:
    def test_head_on_center_translates(self):
        mdp = mdp_for("push")
        nxt = step(mdp, [0.0, 0.0, 0.0, 0.0], [-0.3, 0.0, 0.0])
        assert nxt == pytest.approx([-0.03, 0.0, 0.0, 0.0])

    def test_opposite_face_mirrors(self):
        mdp = mdp_for("push")
        nxt = step(mdp, [0.0, 0.0, 0.0, 2.0], [0.3, 0.0, 2.0])
        assert nxt == pytest.approx([0.03, 0.0, 0.0, 2.0])

    def test_top_face_pushes_down(self):
        mdp = mdp_for("push")
        nxt = step(mdp, [0.0, 0.0, 0.0, 1.0], [0.0, -0.3, 1.0])
        assert nxt == pytest.approx([0.0, -0.03, 0.0, 1.0], abs=1e-12)

    def test_sticking_rotation(self):
        # tangential component inside the cone: omega = h*vt/(c^2+h^2) = 1.2
        mdp = mdp_for("push")
        nxt = step(mdp, [0.0, 0.0, 0.0, 0.0], [-0.3, 0.15, 0.0])
        assert nxt == pytest.approx([-0.03, 0.003, 0.12, 0.0])

    def test_sliding_contact(self):
        # cone violated: friction saturates, omega = scale*h*mu/c^2 = 2
        mdp = mdp_for("push")
        nxt = step(mdp, [0.0, 0.0, 0.0, 0.0], [-0.1, 0.3, 0.0])
        assert nxt == pytest.approx([-0.01, 0.005, 0.2, 0.0])

    def test_separation_keeps_object_still(self):
        mdp = mdp_for("push")
        s = [0.1, -0.2, 0.4, 0.0]
        nxt = step(mdp, s, [0.3, 0.0, 0.0])
        assert nxt == pytest.approx(s)

    def test_tangential_slide_keeps_object_still(self):
        mdp = mdp_for("push")
        s = [0.1, -0.2, 0.4, 0.0]
        nxt = step(mdp, s, [0.0, 0.3, 0.0])
        assert nxt == pytest.approx(s)

    def test_face_switch_changes_contact_only(self):
        mdp = mdp_for("push")
        nxt = step(mdp, [0.1, -0.2, 0.4, 0.0], [0.0, 0.0, 3.0])
        assert nxt == pytest.approx([0.1, -0.2, 0.4, 3.0])

    def test_rotated_object_world_motion(self):
        # object frame velocity rotates by yaw before integrating
        mdp = mdp_for("push")
        nxt = step(mdp, [0.0, 0.0, np.pi / 2, 0.0], [-0.3, 0.0, 0.0])
        assert nxt[:2] == pytest.approx([0.0, -0.03], abs=1e-12)
        assert nxt[2] == pytest.approx(np.pi / 2)

    def test_reward_examples(self):
        mdp = mdp_for("push")
        r = reward(mdp, [0.03, 0.04, 0.0, 0.0], [0.0, 0.0, 0.0])
        assert r == pytest.approx(-0.1)
        r = reward(mdp, [0.0, 0.0, np.pi, 0.0], [0.0, 0.0, 0.0])
        assert r == pytest.approx(-0.5)
        r = reward(mdp, [0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0])
        assert r == pytest.approx(-0.1)
        r = reward(mdp, [0.0, 0.0, 0.0, 0.0], [-0.3, 0.0, 0.0])
        assert r == pytest.approx(-0.003)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_transition_respects_contact(self, seed):
        mdp = mdp_for("push")
        rng = np.random.default_rng(seed)
        s = mdp.sample_states(8, rng)
        u = rng.uniform(mdp.action_lower, mdp.action_upper, size=(8, 3))
        u[:, 2] = rng.integers(0, 4, size=8)
        nxt = mdp.transition(s, u)
        assert np.all(nxt[:, 3] == np.rint(u[:, 2]))
        assert np.all(nxt >= mdp.state_lower - 1e-9)
        assert np.all(nxt <= mdp.state_upper + 1e-9)
        # motion only happens while the pusher presses into the face
        alpha = np.rint(u[:, 2]) * np.pi / 2
        vcx = np.cos(alpha) * u[:, 0] + np.sin(alpha) * u[:, 1]
        still = vcx >= 0.0
        assert np.allclose(nxt[still, :3], s[still, :3])


class TestMdpInvariants:
    @pytest.mark.parametrize("name", ["push", "pivot", "pull", "pick", "place"])
    def test_rewards_nonpositive_and_bounded_steps(self, name):
        mdp = mdp_for(name)
        rng = np.random.default_rng(7)
        s = mdp.sample_states(64, rng)
        u = rng.uniform(mdp.action_lower, mdp.action_upper, size=(64, mdp.action_dim))
        for k, count in mdp.action_discrete.items():
            u[:, k] = rng.integers(0, count, size=64)
        assert np.all(mdp.reward(s, u) <= 1e-12)
        nxt = mdp.transition(s, u)
        assert np.all(nxt >= mdp.state_lower - 1e-9)
        assert np.all(nxt <= mdp.state_upper + 1e-9)

    @pytest.mark.parametrize("name", ["push", "pivot", "pull", "pick", "place"])
    def test_origin_zero_action_is_free(self, name):
        mdp = mdp_for(name)
        s = np.zeros(mdp.state_dim)
        u = np.zeros(mdp.action_dim)
        assert reward(mdp, s, u) == pytest.approx(0.0, abs=1e-12)
        assert mdp.position_error(s)[0] == pytest.approx(0.0)
        assert mdp.orientation_error(s)[0] == pytest.approx(0.0)

    def test_push_samples_are_valid_states(self):
        mdp = mdp_for("push")
        rng = np.random.default_rng(3)
        for row in mdp.sample_states(32, rng):
            state = PushState(row[0:3], int(row[3]))
            assert state.as_vector() == pytest.approx(row)


class TestStateTypes:
    def test_push_state_validates_face_membership(self):
        PushState(np.zeros(3), 0, np.array([0.1, 0.03]))
        with pytest.raises(ValueError):
            PushState(np.zeros(3), 0, np.array([0.05, 0.0]))
        with pytest.raises(ValueError):
            PushState(np.zeros(3), 0, np.array([0.1, 0.2]))
        with pytest.raises(ValueError):
            PushState(np.zeros(3), 5)

    def test_push_state_defaults_to_face_center(self):
        state = PushState(np.zeros(3), 3)
        assert state.pusher == pytest.approx([0.0, -0.1])
        assert state.as_vector() == pytest.approx([0.0, 0.0, 0.0, 3.0])

    def test_face_centers(self):
        centers = push_face_center(np.arange(4), 0.1)
        expected = [[0.1, 0.0], [0.0, 0.1], [-0.1, 0.0], [0.0, -0.1]]
        assert np.allclose(centers, expected, atol=1e-12)

    def test_long_horizon_round_trip(self):
        vec = np.arange(12.0) / 10.0
        state = LongHorizonState.from_vector(vec)
        assert state.tool_pose is None
        assert state.as_vector() == pytest.approx(vec)
        vec15 = np.arange(15.0) / 10.0
        state = LongHorizonState.from_vector(vec15)
        assert state.tool_pose == pytest.approx([1.2, 1.3, 1.4])
        with pytest.raises(ValueError):
            LongHorizonState.from_vector(np.zeros(7))


class TestDomainMaps:
    def test_push_gamma(self):
        layout = LongHorizonLayout(has_tool=False)
        smap = default_skill_map(PARAMS, "push", layout)
        start = np.zeros(12)
        goal = np.zeros(12)
        start[[0, 1, 5]] = [0.3, 0.2, 1.0]
        goal[[0, 1, 5]] = [0.1, 0.1, 0.5]
        got = gamma_map(smap, start, goal)
        assert got == pytest.approx([0.2, 0.1, 0.5, 0.0])

    def test_gamma_wraps_angles(self):
        layout = LongHorizonLayout(has_tool=False)
        smap = default_skill_map(PARAMS, "pull", layout)
        start = np.zeros(12)
        goal = np.zeros(12)
        start[5], goal[5] = 3.0, -3.0
        got = gamma_map(smap, start, goal)
        assert got[2] == pytest.approx(6.0 - 2 * np.pi)

    def test_pivot_gamma_and_phi(self):
        layout = LongHorizonLayout(has_tool=False)
        smap = default_skill_map(PARAMS, "pivot", layout)
        start = np.zeros(12)
        goal = np.zeros(12)
        start[3], goal[3] = 0.4, -1.2
        assert gamma_map(smap, start, goal) == pytest.approx([0.4, -1.2])
        reached = phi_map(smap, [-1.1, -1.2], goal)
        assert reached[3] == pytest.approx(-1.1)
        assert reached[[0, 1, 2]] == pytest.approx(goal[[0, 1, 2]])

    def test_phi_identity_on_perfect_skill(self):
        layout = LongHorizonLayout(has_tool=False)
        goal = np.linspace(-0.4, 0.4, 12)
        for name in ("push", "pull", "pick", "place"):
            smap = default_skill_map(PARAMS, name, layout)
            out = phi_map(smap, np.zeros(smap.state_dim), goal)
            assert out == pytest.approx(goal)

    def test_phi_adds_residual(self):
        layout = LongHorizonLayout(has_tool=False)
        smap = default_skill_map(PARAMS, "push", layout)
        goal = np.zeros(12)
        residual = np.array([0.01, -0.02, 0.03, 0.0])
        out = phi_map(smap, residual, goal)
        assert out[[0, 1, 5]] == pytest.approx([0.01, -0.02, 0.03])

    def test_tool_dims_override(self):
        layout = LongHorizonLayout(has_tool=True)
        smap = default_skill_map(PARAMS, "place", layout, lh_dims=(12, 13, 14))
        assert smap.skill_dims == (0, 1, 2)
        start = np.zeros(15)
        goal = np.zeros(15)
        start[12:15] = [0.2, -0.1, 0.5]
        got = gamma_map(smap, start, goal)
        assert got[:3] == pytest.approx([0.2, -0.1, 0.5])
        out = phi_map(smap, np.zeros(6), goal)
        assert out == pytest.approx(goal)

    def test_layout_bounds_and_distance(self):
        layout = LongHorizonLayout(has_tool=True)
        assert layout.dim == 15
        lower, upper = layout.bounds(0.5)
        assert lower[14] == pytest.approx(-np.pi)
        assert upper[0] == pytest.approx(0.5)
        a = np.zeros(15)
        b = np.zeros(15)
        a[5], b[5] = 3.0, -3.0
        assert layout.distance(a, b) == pytest.approx(abs(6.0 - 2 * np.pi))

    def test_dims_outside_layout_rejected(self):
        layout = LongHorizonLayout(has_tool=False)
        with pytest.raises(ConfigurationError):
            default_skill_map(PARAMS, "push", layout, lh_dims=(0, 1, 14))
        with pytest.raises(ConfigurationError):
            default_skill_map(PARAMS, "juggle", layout)

    def test_batched_maps(self):
        layout = LongHorizonLayout(has_tool=False)
        smap = default_skill_map(PARAMS, "pull", layout)
        starts = np.zeros((3, 12))
        goals = np.zeros((3, 12))
        starts[:, 0] = [0.1, 0.2, 0.3]
        got = gamma_map(smap, starts, goals)
        assert got.shape == (3, 3)
        assert got[:, 0] == pytest.approx([0.1, 0.2, 0.3])
        out = phi_map(smap, np.zeros((3, 3)), goals)
        assert out.shape == (3, 12)
