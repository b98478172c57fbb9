import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mirrorbench.errors import ConfigurationError
from mirrorbench.world import (
    ACTIONS,
    COLOR_NAMES,
    PALETTE,
    Condition,
    CubeSpec,
    Pose,
    RoomSpec,
    ScenarioConfig,
    WorldState,
    apply_action,
    cube_within_reach,
    distractor_action,
    generate_scenario,
    initial_state,
    move_pose,
    reach_threshold,
    step_distractors,
)

ROOM = RoomSpec()


def test_condition_parse():
    assert Condition.parse("e3") is Condition.E3
    assert Condition.E5.family == "exploration"
    assert Condition.E1.family == "cube_selection"
    with pytest.raises(ConfigurationError):
        Condition.parse("E6")


def test_palette_is_well_separated():
    assert len(COLOR_NAMES) == 10
    rgb = list(PALETTE.values())
    for i in range(len(rgb)):
        for j in range(i + 1, len(rgb)):
            assert math.dist(rgb[i], rgb[j]) >= 100


def test_actions():
    assert ACTIONS == ("w", "a", "s", "d", "done")


class TestKinematics:
    def test_turns(self):
        p = Pose(0.0, 0.0, 0)
        assert move_pose(p, "a", ROOM)[0].heading == 30
        assert move_pose(p, "d", ROOM)[0].heading == 330

    def test_forward_back_restores(self):
        p = Pose(1.234, -2.5, 30)
        q, bumped = move_pose(p, "w", ROOM)
        assert not bumped
        assert math.hypot(q.x - p.x, q.y - p.y) == pytest.approx(0.5)
        assert move_pose(q, "s", ROOM)[0] == p

    def test_wall_bump(self):
        p = Pose(4.5, 0.0, 0)
        q, bumped = move_pose(p, "w", ROOM)
        assert bumped and q == p

    def test_apply_action_advances_time(self):
        s = WorldState(t=3, ego=Pose(4.5, 0.0, 0))
        s2, bumped = apply_action(s, "w", ROOM)
        assert s2.t == 4 and bumped and s2.bumped_last
        s3, _ = apply_action(s2, "a", ROOM)
        assert not s3.bumped_last

    def test_non_move_rejected(self):
        with pytest.raises(ValueError):
            move_pose(Pose(0, 0, 0), "done", ROOM)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.sampled_from("wasd"), max_size=200), st.floats(-4, 4), st.floats(-4, 4))
    def test_stays_inside(self, actions, x, y):
        s = WorldState(t=1, ego=Pose(round(x, 6), round(y, 6), 0))
        for a in actions:
            s, _ = apply_action(s, a, ROOM)
            assert ROOM.inside(s.ego.x, s.ego.y)


def test_reach_threshold_boundary():
    cube = CubeSpec("red", (0.0, 0.0))
    d = reach_threshold(cube)
    assert d == pytest.approx(0.5 + 0.3 + 0.3)
    assert cube_within_reach(WorldState(1, Pose(d, 0.0, 0)), cube)
    assert not cube_within_reach(WorldState(1, Pose(d + 1e-6, 0.0, 0)), cube)


def test_distractor_motion_is_pure():
    seq1 = [distractor_action(77, t) for t in range(1, 101)]
    seq2 = [distractor_action(77, t) for t in range(1, 101)]
    assert seq1 == seq2
    assert set(seq1) <= {"w", "a", "s", "d"}


class TestScenarioGeneration:
    @pytest.mark.parametrize("cond", list(Condition))
    def test_deterministic(self, cond):
        assert generate_scenario(cond, 42) == generate_scenario(cond, 42)
        assert generate_scenario(cond, 42) != generate_scenario(cond, 43)

    @pytest.mark.parametrize("seed", range(30))
    def test_cube_conditions(self, seed):
        for cond in ("E1", "E2", "E3", "E4"):
            sc = generate_scenario(cond, seed)
            colors = [c.color for c in sc.candidates]
            assert len(colors) == 3 and len(set(colors)) == 3
            assert colors.count(sc.ego_color) == 1
            for a in sc.candidates:
                assert ROOM.inside(*a.center, radius=a.edge / 2)
                assert math.dist(a.center, (sc.ego_start.x, sc.ego_start.y)) >= 1.5
        assert generate_scenario("E2", seed).room.mirror is None
        assert generate_scenario("E1", seed).room.mirror is not None
        e3 = generate_scenario("E3", seed)
        assert e3.wrong_color in COLOR_NAMES and e3.wrong_color != e3.ego_color
        e4 = generate_scenario("E4", seed)
        assert 1 <= len(e4.distractors) <= 6

    def test_e4_shares_color_about_half_the_time(self):
        shared = sum(
            any(d.color == sc.ego_color for d in sc.distractors)
            for sc in (generate_scenario("E4", s) for s in range(400))
        )
        assert 150 < shared < 250

    @pytest.mark.parametrize("seed", range(30))
    def test_exploration(self, seed):
        sc = generate_scenario("E5", seed)
        assert not sc.candidates
        assert 2 <= len(sc.cubes) <= 5
        assert 1 <= len(sc.distractors) <= 6
        assert 1 <= len(sc.room.occluders) <= 3
        for o in sc.room.occluders:
            assert o.wall_id == sc.room.mirror.wall_id

    def test_start_does_not_face_mirror(self):
        for seed in range(50):
            sc = generate_scenario("E1", seed)
            diff = abs((sc.ego_start.heading - sc.room.mirror.facing_heading + 180) % 360 - 180)
            assert diff >= 90

    def test_seed_range(self):
        with pytest.raises(ConfigurationError):
            generate_scenario("E1", -1)
        with pytest.raises(ConfigurationError):
            generate_scenario("E1", 2**64)

    @pytest.mark.parametrize("cond", list(Condition))
    def test_dict_round_trip(self, cond):
        sc = generate_scenario(cond, 5)
        assert ScenarioConfig.from_dict(sc.to_dict()) == sc


def test_distractors_step_inside_room():
    sc = generate_scenario("E4", 11)
    s = initial_state(sc)
    for _ in range(100):
        s = step_distractors(s, sc)
        s = WorldState(s.t + 1, s.ego, s.distractors)
        assert all(sc.room.inside(p.x, p.y) for p in s.distractors)
