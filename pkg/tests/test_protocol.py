from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rendezvous.maptool import UnknownPlace
from rendezvous.memory import select_from_table
from rendezvous.protocol import (FINALIZED, IMPOSSIBLE, OPPOSE_REASONS, OPPOSES, PREFERS, PRESUMED_CAUGHT,
                                 Arrived, AskEta, AskPose, EtaReport, Finalize, Message, Oppose,
                                 PoseReport, Propose, ProtocolError, SentinelReport, Support,
                                 analyze_transcript, encode_message, extract_spatial_facts,
                                 parse_message, parse_transcript)

DATA = Path(__file__).parent / "data"
ROSTER = ["Adam", "Brycer", "Kate", "Ethan", "Alex"]
PLACES = ["Firehouse Museum", "Pasque"]
MUSEUM = "Firehouse Museum"


def transcript():
    return parse_transcript(open(DATA / "transcript.txt"), PLACES)


def upto(history, t):
    return [m for m in history if m.timestamp <= t]


def test_wire_examples():
    m = parse_message("540 Adam SUPPORT <Pasque> ETA 471")
    assert m == Message(540, "Adam", Support("Pasque", 471))
    m = parse_message("1 Kate SENTINEL [-95.32,-44.21]")
    assert m.kind == SentinelReport(((-95.32, -44.21),))
    assert encode_message(m) == "1 Kate SENTINEL [-95.32,-44.21]"


def test_note_and_impossible():
    m = parse_message("7 Bob ETA <Pasque> IMPOSSIBLE # road cut")
    assert m.kind.eta == IMPOSSIBLE and m.note == "road cut"
    assert encode_message(m) == "7 Bob ETA <Pasque> IMPOSSIBLE # road cut"


def test_coordinates_two_decimals():
    m = Message(0, "A", PoseReport((1.005, -2.0)))
    assert encode_message(m).endswith("[1.00,-2.00]") or encode_message(m).endswith("[1.01,-2.00]")
    assert parse_message(encode_message(m)) == m


@pytest.mark.parametrize("line,col", [
    ("x Adam POSE [1,2]", 1),
    ("5  Adam POSE [1,2]", 3),
    ("5 Adam JUMP <Pasque>", 8),
    ("5 Adam POSE [1,2", 13),
    ("5 Adam OPPOSE <Pasque> bored", 24),
    ("5 Adam FINALIZE <Pasque> extra", 25),
    ("5 Adam ETA <Pasque> -3", 21),
])
def test_errors_carry_column(line, col):
    with pytest.raises(ProtocolError) as e:
        parse_message(line)
    assert e.value.column == col


def test_unknown_place():
    with pytest.raises(UnknownPlace):
        parse_message("5 Adam PROPOSE <Atlantis>", PLACES)
    assert parse_message("5 Adam PROPOSE <Atlantis>").kind == Propose("Atlantis")


def test_transcript_line_numbers():
    with pytest.raises(ProtocolError, match="line 3"):
        parse_transcript(["; c", "", "5 Adam NOPE"])


names = st.from_regex(r"[A-Za-z][A-Za-z0-9_]{0,8}", fullmatch=True)
places = st.from_regex(r"[A-Za-z][A-Za-z0-9 ']{0,15}", fullmatch=True).map(str.strip).filter(bool)
coords = st.tuples(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
etas = st.one_of(st.integers(0, 10**6), st.just(IMPOSSIBLE))
kinds = st.one_of(
    st.builds(PoseReport, coords),
    st.builds(SentinelReport, st.lists(coords, min_size=1, max_size=4).map(tuple)),
    st.builds(EtaReport, places, etas),
    st.builds(Propose, places),
    st.builds(Support, places, st.none() | etas),
    st.builds(Oppose, places, st.sampled_from(OPPOSE_REASONS), st.none() | etas),
    st.builds(Finalize, places),
    st.builds(AskPose, st.just("*") | names),
    st.builds(AskEta, names, places),
    st.builds(Arrived, places),
)
notes = st.just("") | st.from_regex(r"[a-z ,.]{1,20}", fullmatch=True).map(str.strip)


@settings(max_examples=400)
@given(st.integers(0, 10**6), names, kinds, notes)
def test_round_trip(t, sender, kind, note):
    m = Message(t, sender, kind, note)
    line = encode_message(m)
    assert parse_message(line) == m
    assert encode_message(parse_message(line)) == line


def test_golden_transcript_parses_and_reencodes():
    lines = [s.rstrip("\n") for s in open(DATA / "transcript.txt")
             if s.strip() and not s.startswith(";")]
    msgs = transcript()
    assert len(msgs) == len(lines)
    assert [encode_message(m) for m in msgs] == lines


def test_agreement_after_unanimous_support():
    h = transcript()
    s = analyze_transcript(upto(h, 5), ROSTER, 5)
    assert not s.reached and s.opinions["Alex"].stance == PREFERS
    # Kate has not spoken on the matter yet
    s = analyze_transcript(upto(h, 12), ROSTER, 12)
    assert not s.reached and s.place == MUSEUM
    s = analyze_transcript(upto(h, 14), ROSTER, 14)
    assert s.reached and s.place == MUSEUM


def test_reopened_by_opposition():
    h = transcript()
    s = analyze_transcript(upto(h, 264), ROSTER, 264)
    assert not s.reached
    assert s.opinions["Kate"].stance == OPPOSES
    # the other four still back the museum
    assert s.place == MUSEUM


def test_second_agreement():
    h = transcript()
    # a fresh proposal is the latest stance, so nothing is settled
    assert not analyze_transcript(upto(h, 266), ROSTER, 266).reached
    s = analyze_transcript(upto(h, 277), ROSTER, 277)
    assert not s.reached and s.opinions["Alex"].place == MUSEUM
    s = analyze_transcript(upto(h, 278), ROSTER, 278)
    assert s.reached and s.place == "Pasque"
    assert s.opinions["Adam"].stance == PREFERS
    s = analyze_transcript(upto(h, 280), ROSTER, 280)
    assert s.reached and s.place == "Pasque"
    assert s.opinions["Adam"].stance == FINALIZED


def test_finalize_after_grace_without_objection():
    h = [Message(0, "Adam", Finalize("Pasque"))]
    assert not analyze_transcript(h, ["Adam", "Kate"], 4).reached
    s = analyze_transcript(h, ["Adam", "Kate"], 5)
    assert s.reached and s.place == "Pasque"


def test_silence_after_direct_ask():
    h = [Message(0, "Kate", PoseReport((0, 0))),
         Message(100, "Adam", AskEta("Kate", "Pasque")),
         Message(104, "Ethan", Support("Pasque")),
         Message(112, "Adam", Support("Pasque"))]
    roster = ["Adam", "Kate", "Ethan"]
    assert analyze_transcript(h, roster, 110).opinions["Kate"].stance != PRESUMED_CAUGHT
    s = analyze_transcript(h, roster, 112)
    assert s.opinions["Kate"].stance == PRESUMED_CAUGHT
    # with Kate out of the picture the others agree
    assert s.reached and s.place == "Pasque"
    # an answer clears the presumption
    s = analyze_transcript(h + [Message(113, "Kate", Support("Pasque"))], roster, 113)
    assert s.opinions["Kate"].stance == PREFERS


def test_broadcast_ask_never_presumes():
    h = [Message(0, "Adam", AskPose("*")), Message(30, "Ethan", Support("Pasque"))]
    s = analyze_transcript(h, ["Adam", "Ethan"], 60)
    assert all(o.stance != PRESUMED_CAUGHT for o in s.opinions.values())


def test_extract_facts_from_transcript():
    f = extract_spatial_facts(transcript())
    table = {}
    for (p, a), fact in f.etas.items():
        table.setdefault(p, {})[a] = fact.eta
    assert table["Pasque"] == {"Adam": 471, "Ethan": 917, "Brycer": 951, "Kate": 857, "Alex": 871}
    assert table[MUSEUM]["Kate"] == 1290
    assert select_from_table(table) == ("Pasque", 951)
    assert f.agent_poses["Alex"][0].xy == (5.0, 5.0)
    assert [p.xy for p, _ in f.sentinel_poses] == [(-95.32, -44.21)]


def test_museum_table_before_reopening():
    f = extract_spatial_facts(upto(transcript(), 15))
    row = {a: fact.eta for (p, a), fact in f.etas.items() if p == MUSEUM}
    assert row == {"Alex": 342, "Brycer": 327, "Ethan": 383, "Adam": 384}


stances = st.sampled_from(["Propose", "Support", "Oppose", "Finalize"])


def _msg(t, who, kind, place):
    cls = {"Propose": Propose, "Support": Support, "Oppose": Oppose, "Finalize": Finalize}[kind]
    return Message(t, who, cls(place))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["A", "B", "C"]), stances, st.sampled_from(["P", "Q"])), max_size=15))
def test_last_stance_wins(events):
    h = [_msg(i, w, k, p) for i, (w, k, p) in enumerate(events)]
    s = analyze_transcript(h, ["A", "B", "C"], len(h))
    for who in "ABC":
        mine = [(k, p) for w, k, p in events if w == who]
        if not mine:
            assert s.opinions[who].place is None
            continue
        k, p = mine[-1]
        want = {"Propose": PREFERS, "Support": PREFERS, "Oppose": OPPOSES, "Finalize": FINALIZED}[k]
        assert s.opinions[who].stance == want and s.opinions[who].place == p
    if events and events[-1][1] in ("Propose", "Oppose"):
        assert not s.reached


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["A", "B"]), stances, st.sampled_from(["P", "Q"])), max_size=12))
def test_analysis_depends_only_on_prefix(events):
    h = [_msg(i, w, k, p) for i, (w, k, p) in enumerate(events)]
    for n in range(len(h) + 1):
        a = analyze_transcript(h[:n], ["A", "B"], n)
        b = analyze_transcript(list(h[:n]), ["A", "B"], n)
        assert a.signature() == b.signature()
