import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import open_scene, place
from rendezvous.agents import (AgentContext, Communicate, CosarState, MctsConfig, Navigate, Query,
                               cosar_decide, make_policy, mcts_decide, oracle_centered_decide)
from rendezvous.agents.base import place_info
from rendezvous.agents.cosar import ETA_DEGRADATION
from rendezvous.agents.mcts import detected_steps, rollout_reward, sample_route
from rendezvous.geometry import Pose2D
from rendezvous.maptool import MapTool, Route, build_waypoint_graph
from rendezvous.memory import Memory
from rendezvous.protocol import (AskPose, Message, Oppose, PoseReport, Support, analyze_transcript,
                                 extract_spatial_facts)

ROSTER = ["Ann", "Bob", "Cid"]


def town():
    places = [place("Hall", 40, 20), place("Mill", 100, 20), place("Park", 160, 20, indoor=False),
              place("Inn", 40, 60), place("Dock", 100, 60)]
    roads = [((10.0, 40.0), (190.0, 40.0)), ((40.0, 10.0), (40.0, 90.0)), ((100.0, 10.0), (100.0, 90.0)),
             ((160.0, 10.0), (160.0, 90.0))]
    return open_scene(places, [("Ann", "Hall"), ("Bob", "Mill"), ("Cid", "Inn")], roads=roads)


def cosar_setup(clock=0):
    scene = town()
    graph = build_waypoint_graph(scene.road_segments)
    mem = Memory("Ann", ROSTER, scene.extent)
    st_ = CosarState("Ann", list(ROSTER), graph, 1500, 1.0, Pose2D(40, 20),
                     known_places={p.name: place_info(scene, p.name) for p in scene.places})
    return scene, mem, st_


def test_cosar_fresh_episode_asks_for_positions():
    _, mem, st_ = cosar_setup()
    plan = cosar_decide("Ann", mem, analyze_transcript([], ROSTER, 0), [], 0, st_)
    assert isinstance(plan, Communicate)
    assert plan.message.kind == AskPose("*") and plan.message.sender == "Ann"


def test_cosar_requires_state():
    _, mem, _ = cosar_setup()
    with pytest.raises(ValueError):
        cosar_decide("Ann", mem, analyze_transcript([], ROSTER, 0), [], 0)


def _agreed_history():
    h = [Message(1, a, PoseReport(p)) for a, p in zip(ROSTER, [(40, 20), (100, 20), (40, 60)])]
    h += [Message(5 + i, a, Support("Dock", 100 + i)) for i, a in enumerate(ROSTER)]
    return h


def test_cosar_agreement_navigates():
    _, mem, st_ = cosar_setup()
    h = _agreed_history()
    st_.history = list(h)
    mem.update_pose_registry(extract_spatial_facts(h))
    mem.update_eta_map(extract_spatial_facts(h))
    mem.etas.update("Dock", "Ann", 100, 8)  # own ETA is computed, never read back off the channel
    st_.eta_time["Dock"] = 8
    st_.eta_sent["Dock"] = 100
    st_.answered.update((m.timestamp, m.sender) for m in h)
    opinions = analyze_transcript(h, ROSTER, 8)
    assert opinions.reached
    plan = cosar_decide("Ann", mem, opinions, [], 8, st_)
    assert isinstance(plan, Navigate) and plan.place == "Dock"


def test_cosar_missing_eta_leads_to_route_query():
    _, mem, st_ = cosar_setup()
    h = _agreed_history()[:3] + [Message(5, "Bob", Support("Dock", 90))]
    st_.history = list(h)
    mem.update_pose_registry(extract_spatial_facts(h))
    plan = cosar_decide("Ann", mem, analyze_transcript(h, ROSTER, 6), [], 6, st_)
    assert isinstance(plan, Query) and plan.variant == "route"


def test_cosar_eta_degradation_reopens():
    _, mem, st_ = cosar_setup()
    mem.plan.commit("Dock", None)
    mem.plan.record_eta(0, 100)
    mem.etas.update("Dock", "Ann", 100 + ETA_DEGRADATION + 1, 200)
    plan = cosar_decide("Ann", mem, analyze_transcript([], ROSTER, 200), [], 200, st_)
    assert isinstance(plan, Communicate)
    k = plan.message.kind
    assert isinstance(k, Oppose) and k.place == "Dock" and k.reason == "eta_worsened"
    assert not mem.plan.committed


def test_cosar_small_degradation_keeps_plan():
    _, mem, st_ = cosar_setup()
    mem.plan.commit("Dock", None)
    mem.plan.record_eta(0, 100)
    mem.etas.update("Dock", "Ann", 100 + ETA_DEGRADATION, 200)
    plan = cosar_decide("Ann", mem, analyze_transcript([], ROSTER, 200), [], 200, st_)
    assert not (isinstance(plan, Communicate) and isinstance(plan.message.kind, Oppose))
    assert mem.plan.committed


def test_cosar_reports_sightings_first():
    _, mem, st_ = cosar_setup()
    st_.sightings = {3: Pose2D(70, 40)}
    plan = cosar_decide("Ann", mem, analyze_transcript([], ROSTER, 0), [], 0, st_)
    assert plan.message.kind.poses == ((70.0, 40.0),)
    # the same sighting is not repeated straight away
    plan = cosar_decide("Ann", mem, analyze_transcript([], ROSTER, 1), [], 1, st_)
    assert not hasattr(plan, "message") or not hasattr(plan.message.kind, "poses")


# ---------------------------------------------------------------------------
# tree search


def mcts_setup():
    scene = town()
    graph = build_waypoint_graph(scene.road_segments)
    mem = Memory("Ann", ROSTER, scene.extent)
    mem.update_pose_registry(extract_spatial_facts(
        [Message(0, "Bob", PoseReport((100, 20))), Message(0, "Cid", PoseReport((40, 60)))]))
    places = {p.name: place_info(scene, p.name) for p in scene.places}
    return mem, graph, places


def decide(cfg, cands, seed=0, mem_graph_places=None):
    mem, graph, places = mem_graph_places or mcts_setup()
    return mcts_decide("Ann", mem, cfg, cands, pose=Pose2D(40, 20), places=places, graph=graph,
                       rng=np.random.default_rng(seed))


def test_mcts_single_candidate():
    assert decide(MctsConfig(), ["Mill"]).place == "Mill"


def test_mcts_zero_weights_pick_first():
    cfg = MctsConfig(iterations=30, alpha=0, beta=0, gamma=0)
    assert decide(cfg, ["Dock", "Hall", "Mill"]).place == "Dock"
    assert decide(cfg, ["Mill", "Dock", "Hall"]).place == "Mill"


def test_mcts_large_gamma_prefers_clean_candidate():
    mgp = mcts_setup()
    mem = mgp[0]
    # a sentinel right at the Mill crossing
    mem.grid.mark_danger_zone(Pose2D(100, 30), Pose2D(100, 20), 0)
    cfg = MctsConfig(iterations=60, alpha=0, beta=0, gamma=1e3)
    assert decide(cfg, ["Mill", "Inn"], mem_graph_places=mgp).place == "Inn"


def test_mcts_deterministic():
    cfg = MctsConfig(iterations=50)
    a = decide(cfg, ["Dock", "Hall", "Mill", "Inn"], seed=4)
    b = decide(cfg, ["Dock", "Hall", "Mill", "Inn"], seed=4)
    assert a == b


def test_mcts_empty_candidates():
    with pytest.raises(ValueError):
        decide(MctsConfig(), [])


@pytest.mark.parametrize("kw", [{"iterations": 0}, {"rollout_horizon": 0}, {"alpha": -1}, {"gamma": -0.1}])
def test_mcts_config_validation(kw):
    with pytest.raises(ValueError):
        MctsConfig(**kw)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 50), st.floats(0, 100), st.floats(0, 100))
def test_reward_monotone_in_gamma(detected, g1, g2):
    path = sample_route(Route.through([Pose2D(0, 0), Pose2D(30, 0)]), 40)
    peers = np.array([[10.0, 10.0]])
    lo, hi = sorted((g1, g2))
    r_lo = rollout_reward(path, peers, detected, MctsConfig(gamma=lo))
    r_hi = rollout_reward(path, peers, detected, MctsConfig(gamma=hi))
    assert r_hi <= r_lo


def test_sample_route_walks_at_speed():
    path = sample_route(Route.through([Pose2D(0, 0), Pose2D(3, 0), Pose2D(3, 4)]), 10)
    assert path[0].tolist() == [1, 0]
    assert path[4].tolist() == pytest.approx([3, 2])
    assert path[9].tolist() == [3, 4]


def test_detected_steps_counts_cone_hits():
    path = np.array([[10.0, 0.0]] * 3)
    # heading after step 1 points straight at the agent
    assert detected_steps(path, np.array([[0.0, 0.0]]), np.array([-0.314]), rate=0.314) >= 1
    far = np.array([[200.0, 0.0]] * 3)
    assert detected_steps(far, np.array([[0.0, 0.0]]), np.array([0.0])) == 0


# ---------------------------------------------------------------------------
# oracle baselines


def test_oracle_centroid():
    poses = {"A": Pose2D(0, 0), "B": Pose2D(8, 0), "C": Pose2D(4, 4)}
    # centroid (4, 4/3): Mid is the closest place
    scene = open_scene([place("Mid", 4, 2, half=1), place("Edge", 8, 8, half=1), place("Far", 50, 50)], [])
    plan = oracle_centered_decide("A", poses, scene, False)
    assert plan == Navigate("Mid", plan.justification)
    assert oracle_centered_decide("A", poses, scene, True).place == "Mid"


def _ctx(scene, name, kind):
    tool = MapTool(scene)
    starts = {a.name: scene.place(a.initial_place).location for a in scene.agents}
    return AgentContext(name, [a.name for a in scene.agents], scene, tool.graph, np.random.default_rng(0),
                        1500, known_places={p.name: place_info(scene, p.name) for p in scene.places},
                        true_initial_poses=starts if kind.startswith("oracle") else None)


def test_oracle_place_never_changes():
    from rendezvous.world import World
    scene = town()
    world = World(scene)
    pols = {a.name: make_policy("oracle_dz", _ctx(scene, a.name, "oracle_dz")) for a in scene.agents}
    first = {n: p.target for n, p in pols.items()}
    assert len(set(first.values())) == 1
    obs = world.observe_all()
    for _ in range(60):
        obs = world.step({n: p.act(obs[n]) for n, p in pols.items()})
    assert {n: p.target for n, p in pols.items()} == first


def test_oracle_needs_ground_truth():
    scene = town()
    ctx = _ctx(scene, "Ann", "cosar")
    with pytest.raises(ValueError):
        make_policy("oracle", ctx)


def test_unknown_policy():
    with pytest.raises(ValueError):
        make_policy("telepathy", _ctx(town(), "Ann", "cosar"))
