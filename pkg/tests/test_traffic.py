import numpy as np
import pytest

from aads.io import FormatError, write_trajectories
from aads.traffic import (RADIUS, AgentState, Lane, LaneMap, TrafficConfig, VelocityBank, agent_energy,
                          bank_from_rows, draw_candidates, eval_distributions, histogram, init_agents,
                          load_velocity_bank, simulate, step, straight_road, time_to_collision)

STRAIGHT = LaneMap([Lane(np.array([[0.0, 0.0], [200.0, 0.0]]), 3.5)])


def csv_rows(tracks):
    """``tracks``: {agent_id: (class, [(frame, x, y), ...])} -> writer tuples."""
    rows = []
    for aid, (cls, pts) in tracks.items():
        for f, x, y in pts:
            rows.append((f, aid, cls, x, y, 0.0, 0.0, 0.0))
    return rows


def min_gaps(frames):
    worst = np.inf
    for agents in frames:
        for i, a in enumerate(agents):
            for b in agents[i + 1:]:
                worst = min(worst, np.linalg.norm(a.position - b.position) - a.radius - b.radius)
    return worst


# ---- bank ----

def test_bank_finite_difference(tmp_path):
    path = tmp_path / "bank.csv"
    write_trajectories(path, csv_rows({1: ("car", [(0, 0, 0), (5, 5, 0)]), 2: ("ped", [(0, 3, 3), (1, 3, 3)])}),
                       dt=0.1)
    bank = load_velocity_bank(path)
    assert np.allclose(bank.velocities["car"], [[10.0, 0.0]])
    assert np.array_equal(bank.velocities["pedestrian"], [[0.0, 0.0]])


def test_bank_matches_generator():
    rng = np.random.default_rng(4)
    truth = rng.uniform(-8, 8, (6, 2))
    tracks = {i: ("car", [(f, 1.0 + v[0] * f * 0.1, -2.0 + v[1] * f * 0.1) for f in range(5)])
              for i, v in enumerate(truth)}
    rows = [dict(zip(["frame_id", "agent_id", "class", "x", "y", "heading", "vx", "vy"], r))
            for r in csv_rows(tracks)]
    bank = bank_from_rows(rows, 0.1)
    assert np.allclose(bank.velocities["car"], np.repeat(truth, 4, axis=0), atol=1e-9)


def test_bank_single_appearance_skipped_and_malformed_row(tmp_path):
    rows = [dict(frame_id=0, agent_id=1, **{"class": "car"}, x=0.0, y=0.0, heading=0.0, vx=0.0, vy=0.0)]
    assert bank_from_rows(rows, 0.1).velocities == {}
    path = tmp_path / "bad.csv"
    path.write_text("frame_id,agent_id,class,x,y,heading,vx,vy\n0,1,car,0,0,0,0,0\n1,1,car,zz,0,0,0,0\n")
    with pytest.raises(FormatError, match=":3:"):
        load_velocity_bank(path, dt=0.1)


# ---- init ----

def test_init_single_car_on_lane():
    (car,) = init_agents(STRAIGHT, {"car": 1}, TrafficConfig(seed=3))
    assert abs(car.heading) <= np.radians(10)
    assert abs(car.position[1]) <= 3.5 / 2 and 0 <= car.position[0] <= 200


def test_init_deterministic_and_separated():
    lanes = straight_road(300.0, 4)
    cfg = TrafficConfig(seed=11)
    a = init_agents(lanes, {"car": 20, "ped": 5}, cfg)
    b = init_agents(lanes, {"car": 20, "ped": 5}, cfg)
    assert all(np.array_equal(x.position, y.position) and x.heading == y.heading for x, y in zip(a, b))
    assert min_gaps([a]) >= cfg.safe_gap - 1e-9
    for ag in a:
        _, tan, _ = lanes.lanes[ag.lane_id].project(ag.position)
        assert np.cos(ag.heading - np.arctan2(tan[0, 1], tan[0, 0])) >= np.cos(np.radians(10))


def test_init_capacity_error():
    lane = LaneMap([Lane(np.array([[0.0, 0.0], [50.0, 0.0]]), 3.5)])
    with pytest.raises(ValueError, match="at most 20"):
        init_agents(lane, {"car": 1000})


# ---- energy ----

def test_energy_vanishes_for_lone_aligned_agent():
    a = AgentState(0, "car", [10.0, 0.0], [8.0, 0.0], 0.0, 0)
    assert agent_energy(a, [8.0, 0.0], [], STRAIGHT.lanes[0]) == 0.0


def test_energy_reverse_direction_term():
    a = AgentState(0, "car", [10.0, 0.0], [-8.0, 0.0], np.pi, 0)
    cfg = TrafficConfig(w_cont=0, w_coll=0, w_attr=0)
    assert agent_energy(a, [-8.0, 0.0], [], STRAIGHT.lanes[0], cfg) == pytest.approx(2 * cfg.w_dir)


def test_time_to_collision_examples():
    assert time_to_collision([0, 0], [1, 0], 1, [10, 0], [0, 0], 1) == pytest.approx(8.0)
    assert time_to_collision([0, 0], [0, 0], 1, [1, 0], [0, 0], 1) == 0.0
    assert np.isinf(time_to_collision([0, 0], [-1, 0], 1, [10, 0], [0, 0], 1))


def test_follower_choice_matches_enumeration():
    rng = np.random.default_rng(2)
    bank = VelocityBank({"car": np.column_stack([rng.uniform(0, 20, 300), np.zeros(300)])})
    leader = AgentState(0, "car", [20.0, 0.0], [2.0, 0.0], 0.0, 0)
    follower = AgentState(1, "car", [10.0, 0.0], [12.0, 0.0], 0.0, 0)
    cfg = TrafficConfig(seed=5)
    lane = STRAIGHT.lanes[0]
    moved = step([leader, follower], bank, STRAIGHT, cfg, frame=1)
    new_leader = moved[0]
    cand = draw_candidates(follower, bank, lane, cfg, 1)
    scores = []
    for v in cand:
        p = follower.position + v * cfg.dt
        gap = np.linalg.norm(p - new_leader.position) - 2.0
        scores.append(agent_energy(follower, v, [new_leader], lane, cfg) if gap >= cfg.safe_gap else np.inf)
    scores = np.array(scores)
    assert np.array_equal(moved[1].velocity, cand[int(np.argmin(scores))])
    coll_only = TrafficConfig(w_cont=0, w_attr=0, w_dir=0)
    assert max(agent_energy(follower, v, [new_leader], lane, coll_only) for v in cand) > 0


# ---- step ----

def test_single_car_advances_one_meter():
    bank = VelocityBank({"car": [[10.0, 0.0]]})
    car = AgentState(0, "car", [5.0, 0.0], [10.0, 0.0], 0.0, 0)
    frames = simulate([car], bank, STRAIGHT, 5)
    xs = [f[0].position[0] for f in frames]
    assert np.allclose(np.diff(xs), 1.0, atol=1e-12)


def test_head_to_tail_gap_kept():
    rng = np.random.default_rng(8)
    bank = VelocityBank({"car": np.column_stack([rng.uniform(0, 25, 500), rng.normal(0, 0.3, 500)])})
    pair = [AgentState(0, "car", [30.0, 0.0], [3.0, 0.0], 0.0, 0),
            AgentState(1, "car", [24.0, 0.0], [15.0, 0.0], 0.0, 0)]
    frames = simulate(pair, bank, STRAIGHT, 100, TrafficConfig(seed=1))
    assert min_gaps(frames[1:]) >= TrafficConfig().safe_gap - 1e-9


def test_no_overlap_long_run_and_determinism():
    rng = np.random.default_rng(3)
    lanes = straight_road(400.0, 2)
    bank = VelocityBank({"car": np.column_stack([rng.uniform(0, 15, 400), rng.normal(0, 0.5, 400)]),
                         "pedestrian": np.column_stack([rng.uniform(0, 2, 100), np.zeros(100)])})
    cfg = TrafficConfig(seed=21, candidate_count=16)
    agents = init_agents(lanes, {"car": 6, "pedestrian": 2}, cfg, bank)
    frames = simulate(agents, bank, lanes, 1000, cfg)
    assert min_gaps(frames) >= 0.0
    again = simulate(agents, bank, lanes, 50, cfg)
    for f1, f2 in zip(frames[:51], again):
        assert all(np.array_equal(a.position, b.position) for a, b in zip(f1, f2))


def test_empty_bank_class():
    car = AgentState(0, "car", [5.0, 0.0], [0.0, 0.0], 0.0, 0)
    with pytest.raises(ValueError, match="no samples"):
        step([car], VelocityBank({"pedestrian": [[1.0, 0.0]]}), STRAIGHT)


# ---- histograms ----

def frames_with_speeds(speeds):
    return [[AgentState(i, "car", [3.0 * i, 0.0], [s, 0.0], 0.0, 0) for i, s in enumerate(speeds)]]


def test_identical_speeds_one_bin():
    sh, dh = eval_distributions(frames_with_speeds([7.0] * 10))
    assert np.count_nonzero(sh.probs) == 1 and sh.probs.max() == 1.0
    assert abs(dh.probs.sum() - 1.0) <= 1e-9


def test_uniform_speeds_normalized():
    h = histogram(np.linspace(0, 30, 3000), bins=30)
    assert abs(h.probs.sum() - 1.0) <= 1e-9
    assert np.abs(h.probs - 1 / 30).max() < 2e-3


def test_mixture_counts():
    speeds = [5.0] * 3 + [15.0] * 7
    sh, _ = eval_distributions(frames_with_speeds(speeds), bins=30, speed_max=30.0)
    # Direct count: 5 m/s falls in bin 5, 15 m/s in bin 15 at 1 m/s per bin.
    assert sh.probs[5] == pytest.approx(0.3) and sh.probs[15] == pytest.approx(0.7)
    assert abs(sh.probs.sum() - 1.0) <= 1e-12


def test_single_agent_distance_histogram_empty(caplog):
    _, dh = eval_distributions(frames_with_speeds([4.0]))
    assert dh.n_samples == 0 and "empty" in caplog.text


def test_radius_table():
    assert RADIUS == {"car": 1.0, "cyclist": 0.5, "pedestrian": 0.3}
    with pytest.raises(ValueError):
        AgentState(0, "pedestrian", [0, 0], [5.0, 0], 0.0, 0)
