import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import brute_min_max
from rendezvous.geometry import Pose2D
from rendezvous.memory import (DANGER, FREE, DANGER_TTL, Memory, NoViableCandidate, OccupancyGrid,
                               in_danger_zone, mark_danger_zone, select_from_table,
                               select_meeting_place)
from rendezvous.protocol import IMPOSSIBLE, EtaReport, Message, PoseReport, extract_spatial_facts
from rendezvous.world import LocalView, Observation, SeenSentinel


def zone(s, a, extent=(80.0, 80.0)):
    g = OccupancyGrid(extent, 0.5)
    g.mark_danger_zone(Pose2D(*s), Pose2D(*a))
    return g


def expected_mark(p, s, a):
    ds = math.dist(p, s)
    return ds <= 10.0 and ds - math.dist(p, a) < 0.8 * math.dist(a, s)


def test_zone_examples():
    # the zone geometry, evaluated directly
    assert in_danger_zone((25, 0), (20, 0), (0, 0))
    assert not in_danger_zone((0, 0), (20, 0), (0, 0))
    assert in_danger_zone((10, 0), (6, 0), (0, 0))
    assert not in_danger_zone((-3, 0), (6, 0), (0, 0))


def test_zone_on_grid_expands_away_from_agent():
    g = zone((46, 40), (40, 40))
    assert g.danger[g.cell_of((50.25, 40.25))]
    assert not g.danger[g.cell_of((37.25, 40.25))]
    assert not g.danger[g.cell_of((40, 40))]


@settings(max_examples=300, deadline=None)
@given(st.tuples(st.floats(50, 110), st.floats(50, 110)), st.floats(0.5, 30), st.floats(0, 2 * math.pi),
       st.tuples(st.floats(-12, 12), st.floats(-12, 12)))
def test_zone_cells_match_inequalities(s, r, ang, off):
    a = (s[0] + r * math.cos(ang), s[1] + r * math.sin(ang))
    g = zone(s, a, (160.0, 160.0))
    p = (s[0] + off[0], s[1] + off[1])
    cell = g.cell_of(p)
    c = g.center_of(cell)
    want = expected_mark(c, s, a) and cell != g.cell_of(a)
    assert bool(g.danger[cell]) == want
    assert not g.danger[g.cell_of(a)]


def test_every_danger_cell_is_sound():
    rng = random.Random(3)
    for _ in range(50):
        s = (rng.uniform(20, 60), rng.uniform(20, 60))
        a = (s[0] + rng.uniform(-25, 25), s[1] + rng.uniform(-25, 25))
        g = zone(s, a)
        for cell in zip(*np.nonzero(g.danger)):
            assert expected_mark(g.center_of(cell), s, a)


def test_far_sentinel_never_marks_agent_cell():
    g = zone((79, 79), (1, 1))
    assert not g.danger[g.cell_of((1, 1))]


def test_sighting_refresh_and_replace():
    g = OccupancyGrid((80, 80), 0.5)
    g.mark_danger_zone(Pose2D(40, 40), Pose2D(20, 40), 0, key=1, quality=30.0)
    before = g.danger.copy()
    # jitter from a similar range only refreshes the timestamp
    g.mark_danger_zone(Pose2D(41, 40), Pose2D(22, 40), 5, key=1, quality=28.0)
    assert len(g.centers) == 1 and g.centers[0].timestamp == 5
    assert np.array_equal(g.danger, before)
    # the same sentinel seen much closer replaces the zone
    g.mark_danger_zone(Pose2D(41, 40), Pose2D(35, 40), 6, key=1, quality=6.0)
    assert len(g.centers) == 1 and g.centers[0].agent.xy == (35, 40)
    # a moved sentinel replaces it as well, and the old area is cleared
    g.mark_danger_zone(Pose2D(60, 40), Pose2D(45, 40), 7, key=1, quality=15.0)
    assert len(g.centers) == 1
    assert not g.danger[g.cell_of((41, 41))]
    assert g.danger[g.cell_of((62, 40))]


def test_separate_sentinels_keep_separate_zones():
    mem = Memory("Ann", ["Ann"], (80, 80))
    mark_danger_zone(mem, Pose2D(20, 20), Pose2D(10, 20))
    mark_danger_zone(mem, Pose2D(60, 60), Pose2D(50, 60))
    assert len(mem.grid.centers) == 2
    mem.grid.drop_centers(lambda c: c.sentinel.x > 30)
    assert not mem.grid.danger[mem.grid.cell_of((22, 20))]
    assert mem.grid.danger[mem.grid.cell_of((62, 60))]


def _obs(t, pose, sentinels=(), view=None):
    return Observation(t, "Ann", pose, False, True, list(sentinels), view=view)


def test_observation_marks_then_clears():
    mem = Memory("Ann", ["Ann"], (80, 80))
    here = Pose2D(30, 40)
    empty = LocalView(0, 0, np.zeros((160, 160), dtype=bool))
    mem.integrate_observation(_obs(0, here, [SeenSentinel(0, Pose2D(38, 40), 8.0)], empty), here)
    assert (mem.grid.cells == DANGER).any()
    assert mem.grid.state(mem.grid.cell_of((29, 40))) == FREE
    # the centre is in plain view and nobody is there any more
    mem.integrate_observation(_obs(1, Pose2D(30.2, 40), [], empty), Pose2D(30.2, 40))
    assert not (mem.grid.cells == DANGER).any()


def test_zones_expire():
    mem = Memory("Ann", ["Ann"], (80, 80))
    here = Pose2D(10, 10)
    mem.integrate_observation(_obs(0, here, [SeenSentinel(0, Pose2D(60, 60), 70.0)]), here)
    assert mem.grid.centers
    mem.integrate_observation(_obs(DANGER_TTL + 1, here), here)
    assert not mem.grid.centers


def test_pose_registry_latest_wins():
    mem = Memory("Ann", ["Ann", "Bob"], (80, 80))
    facts = extract_spatial_facts([Message(3, "Bob", PoseReport((1, 2))), Message(9, "Bob", PoseReport((5, 6)))])
    mem.update_pose_registry(facts)
    assert mem.poses.agents["Bob"][0].xy == (5, 6)
    old = extract_spatial_facts([Message(4, "Bob", PoseReport((0, 0)))])
    mem.update_pose_registry(old)
    assert mem.poses.agents["Bob"][0].xy == (5, 6)


def test_eta_map_impossible_and_recency():
    mem = Memory("Ann", ["Ann", "Bob"], (80, 80))
    mem.update_eta_map(extract_spatial_facts([Message(1, "Bob", EtaReport("Pasque", 400)),
                                              Message(2, "Bob", EtaReport("Pasque", IMPOSSIBLE))]))
    assert mem.etas.get("Pasque", "Bob") == IMPOSSIBLE
    mem.etas.update("Museum", "Ann", 300, 1)
    mem.etas.update("Museum", "Bob", 200, 1)
    mem.etas.update("Pasque", "Ann", 100, 1)
    assert select_meeting_place(mem, ["Museum", "Pasque"]) == ("Museum", 300.0)


def test_empty_facts_change_nothing():
    mem = Memory("Ann", ["Ann"], (80, 80))
    mem.update_eta_map(extract_spatial_facts([]))
    mem.update_pose_registry(extract_spatial_facts([]))
    assert not mem.etas.entries and not mem.poses.agents


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["P", "Q"]), st.sampled_from(["A", "B"]),
                          st.integers(0, 999), st.integers(0, 50)), max_size=30))
def test_eta_entries_keep_latest_timestamp(updates):
    mem = Memory("Z", ["Z"], (10, 10))
    latest = {}
    for p, a, eta, t in updates:
        mem.etas.update(p, a, eta, t)
        if (p, a) not in latest or latest[(p, a)][1] <= t:
            latest[(p, a)] = (eta, t)
    for (p, a), (eta, _) in latest.items():
        assert mem.etas.get(p, a) == eta


MUSEUM = {"Alex": 342, "Brycer": 327, "Ethan": 383, "Adam": 384}
PASQUE = {"Adam": 471, "Ethan": 917, "Brycer": 951, "Kate": 857, "Alex": 871}


def test_transcript_fixture_prefers_museum():
    place, worst = select_from_table({"Firehouse Museum": MUSEUM, "Pasque": PASQUE})
    assert place == "Firehouse Museum" and worst == 384
    assert select_from_table({"Pasque": PASQUE}) == ("Pasque", 951)


def test_single_candidate():
    assert select_from_table({"Only": {"A": 10, "B": 20}}) == ("Only", 20)


def test_no_candidates():
    with pytest.raises(NoViableCandidate):
        select_from_table({})
    with pytest.raises(NoViableCandidate):
        select_from_table({"P": {"A": None}})


def test_partial_rows_fall_back_to_fewest_gaps():
    table = {"P": {"A": 10, "B": None, "C": None}, "Q": {"A": 50, "B": 60, "C": None}}
    assert select_from_table(table) == ("Q", 60)


def random_table(rng, n_places, n_agents):
    agents = [f"a{i}" for i in range(n_agents)]
    table = {}
    for k in range(n_places):
        row = {}
        for a in agents:
            u = rng.random()
            row[a] = None if u < 0.05 else IMPOSSIBLE if u < 0.1 else rng.randint(0, 30)
        table[f"p{k}"] = row
    return table


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**9), st.integers(1, 10), st.integers(1, 8))
def test_min_max_matches_brute_force(seed, n_places, n_agents):
    table = random_table(random.Random(seed), n_places, n_agents)
    want = brute_min_max(table)
    if want is None:
        return
    assert select_from_table(table) == (want[0], float(want[1]))
