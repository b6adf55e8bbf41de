"""Line-oriented message protocol for the broadcast channel, plus the analyzer
that turns a message history into opinions, agreement and spatial facts.

Wire format (one message per line, see docs/protocol.ebnf)::

    <t> <sender> <KIND> <args> [# note]

    540 Adam SUPPORT <Pasque> ETA 471
    1 Kate SENTINEL [-95.32,-44.21]
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

from .geometry import Pose2D
from .maptool import UnknownPlace

IMPOSSIBLE = "Impossible"
BROADCAST = "*"
SILENCE_LIMIT = 10
FINALIZE_GRACE = 5

OPPOSE_REASONS = ("eta_worsened", "too_far", "sentinel", "impossible", "deadline", "other")

Eta = Union[int, str]  # seconds, or IMPOSSIBLE


class ProtocolError(ValueError):
    def __init__(self, msg: str, column: int):
        self.column = column
        super().__init__(f"column {column}: {msg}")


def _xy(p) -> tuple[float, float]:
    if isinstance(p, Pose2D):
        p = (p.x, p.y)
    x, y = float(p[0]), float(p[1])
    if x != x or y != y or abs(x) == float("inf") or abs(y) == float("inf"):
        raise ValueError("coordinates must be finite")
    # wire precision; keeps parse(encode(m)) == m exact
    return (round(x, 2) + 0.0, round(y, 2) + 0.0)


def _eta(v) -> Eta:
    if v == IMPOSSIBLE:
        return IMPOSSIBLE
    v = int(v)
    if v < 0:
        raise ValueError("ETA must be >= 0")
    return v


@dataclass(frozen=True)
class PoseReport:
    pose: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "pose", _xy(self.pose))


@dataclass(frozen=True)
class SentinelReport:
    poses: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.poses:
            raise ValueError("sentinel report needs at least one pose")
        object.__setattr__(self, "poses", tuple(_xy(p) for p in self.poses))


@dataclass(frozen=True)
class EtaReport:
    place: str
    eta: Eta

    def __post_init__(self):
        object.__setattr__(self, "eta", _eta(self.eta))


@dataclass(frozen=True)
class Propose:
    place: str


@dataclass(frozen=True)
class Support:
    place: str
    eta: Eta | None = None

    def __post_init__(self):
        if self.eta is not None:
            object.__setattr__(self, "eta", _eta(self.eta))


@dataclass(frozen=True)
class Oppose:
    place: str
    reason: str = "other"
    eta: Eta | None = None

    def __post_init__(self):
        if self.reason not in OPPOSE_REASONS:
            raise ValueError(f"unknown oppose reason {self.reason!r}")
        if self.eta is not None:
            object.__setattr__(self, "eta", _eta(self.eta))


@dataclass(frozen=True)
class Finalize:
    place: str


@dataclass(frozen=True)
class AskPose:
    target: str = BROADCAST


@dataclass(frozen=True)
class AskEta:
    target: str
    place: str


@dataclass(frozen=True)
class Arrived:
    place: str


Kind = Union[PoseReport, SentinelReport, EtaReport, Propose, Support, Oppose,
             Finalize, AskPose, AskEta, Arrived]

_KEYWORDS = {
    PoseReport: "POSE", SentinelReport: "SENTINEL", EtaReport: "ETA",
    Propose: "PROPOSE", Support: "SUPPORT", Oppose: "OPPOSE", Finalize: "FINALIZE",
    AskPose: "ASKPOSE", AskEta: "ASKETA", Arrived: "ARRIVED",
}
STANCE_KINDS = (Propose, Support, Oppose, Finalize, Arrived)

_NAME_RE = re.compile(r"[A-Za-z][A-Za-z0-9_.'-]*")


@dataclass(frozen=True)
class Message:
    timestamp: int
    sender: str
    kind: Kind
    note: str = ""

    def __post_init__(self):
        if int(self.timestamp) != self.timestamp or self.timestamp < 0:
            raise ValueError("timestamp must be a non-negative integer")
        if not _NAME_RE.fullmatch(self.sender):
            raise ValueError(f"bad sender name {self.sender!r}")
        if "\n" in self.note or "\r" in self.note:
            raise ValueError("note must be a single line")
        object.__setattr__(self, "note", self.note.strip())

    def places(self) -> list[str]:
        k = self.kind
        return [k.place] if hasattr(k, "place") else []


# ---------------------------------------------------------------------------
# encoding


def _fmt_xy(p) -> str:
    return f"[{p[0]:.2f},{p[1]:.2f}]"


def _fmt_eta(e: Eta) -> str:
    return "IMPOSSIBLE" if e == IMPOSSIBLE else str(e)


def _fmt_place(name: str) -> str:
    if not name or any(c in name for c in "<>\n\r"):
        raise ValueError(f"place name {name!r} cannot be encoded")
    return f"<{name}>"


def encode_message(m: Message) -> str:
    k = m.kind
    parts = [str(m.timestamp), m.sender, _KEYWORDS[type(k)]]
    if isinstance(k, PoseReport):
        parts.append(_fmt_xy(k.pose))
    elif isinstance(k, SentinelReport):
        parts.extend(_fmt_xy(p) for p in k.poses)
    elif isinstance(k, EtaReport):
        parts += [_fmt_place(k.place), _fmt_eta(k.eta)]
    elif isinstance(k, (Propose, Finalize, Arrived)):
        parts.append(_fmt_place(k.place))
    elif isinstance(k, Support):
        parts.append(_fmt_place(k.place))
        if k.eta is not None:
            parts += ["ETA", _fmt_eta(k.eta)]
    elif isinstance(k, Oppose):
        parts += [_fmt_place(k.place), k.reason]
        if k.eta is not None:
            parts += ["ETA", _fmt_eta(k.eta)]
    elif isinstance(k, AskPose):
        parts.append(k.target)
    elif isinstance(k, AskEta):
        parts += [k.target, _fmt_place(k.place)]
    line = " ".join(parts)
    if m.note:
        line += " # " + m.note
    return line


# ---------------------------------------------------------------------------
# parsing

_NUM = r"-?\d+(?:\.\d+)?"
_TOKENS = {
    "int": re.compile(r"\d+"),
    "name": _NAME_RE,
    "target": re.compile(r"\*|[A-Za-z][A-Za-z0-9_.'-]*"),
    "kind": re.compile(r"[A-Z]+"),
    "place": re.compile(r"<([^<>\n\r]+)>"),
    "xy": re.compile(rf"\[({_NUM}),({_NUM})\]"),
    "eta": re.compile(r"\d+|IMPOSSIBLE"),
    "reason": re.compile(r"[a-z_]+"),
}


class _Scanner:
    def __init__(self, line: str, places):
        self.s = line
        self.i = 0
        self.places = places

    @property
    def col(self) -> int:
        return self.i + 1

    def at_end(self) -> bool:
        return self.i >= len(self.s)

    def space(self) -> None:
        if self.at_end() or self.s[self.i] != " ":
            raise ProtocolError("expected a single space", self.col)
        self.i += 1

    def peek_arg(self) -> bool:
        """True when another argument (not a note) follows."""
        return (not self.at_end() and self.s[self.i] == " "
                and not self.s.startswith(" #", self.i))

    def take(self, what: str) -> re.Match:
        m = _TOKENS[what].match(self.s, self.i)
        if m is None:
            raise ProtocolError(f"expected {what}", self.col)
        self.i = m.end()
        return m

    def place(self) -> str:
        col = self.col
        name = self.take("place").group(1)
        if self.places is not None and name not in self.places:
            raise UnknownPlace(f"<{name}> (column {col})")
        return name

    def xy(self) -> tuple[float, float]:
        m = self.take("xy")
        return (float(m.group(1)), float(m.group(2)))

    def eta(self) -> Eta:
        tok = self.take("eta").group(0)
        return IMPOSSIBLE if tok == "IMPOSSIBLE" else int(tok)

    def optional_eta(self) -> Eta | None:
        if self.peek_arg() and self.s.startswith(" ETA ", self.i):
            self.i += len(" ETA ")
            return self.eta()
        return None


def parse_message(line: str, places: Iterable[str] | None = None) -> Message:
    """Parse one wire line. With `places`, unknown place names raise UnknownPlace."""
    if "\n" in line.rstrip("\r\n") or "\r" in line.rstrip("\r\n"):
        raise ProtocolError("message must be a single line", 1)
    line = line.rstrip("\r\n")
    sc = _Scanner(line, set(places) if places is not None else None)
    t = int(sc.take("int").group(0))
    sc.space()
    sender = sc.take("name").group(0)
    sc.space()
    kcol = sc.col
    kw = sc.take("kind").group(0)
    sc.space()
    if kw == "POSE":
        kind: Kind = PoseReport(sc.xy())
    elif kw == "SENTINEL":
        pts = [sc.xy()]
        while sc.peek_arg():
            sc.space()
            pts.append(sc.xy())
        kind = SentinelReport(tuple(pts))
    elif kw == "ETA":
        p = sc.place()
        sc.space()
        kind = EtaReport(p, sc.eta())
    elif kw == "PROPOSE":
        kind = Propose(sc.place())
    elif kw == "FINALIZE":
        kind = Finalize(sc.place())
    elif kw == "ARRIVED":
        kind = Arrived(sc.place())
    elif kw == "SUPPORT":
        p = sc.place()
        kind = Support(p, sc.optional_eta())
    elif kw == "OPPOSE":
        p = sc.place()
        sc.space()
        rcol = sc.col
        reason = sc.take("reason").group(0)
        if reason not in OPPOSE_REASONS:
            raise ProtocolError(f"unknown oppose reason {reason!r}", rcol)
        kind = Oppose(p, reason, sc.optional_eta())
    elif kw == "ASKPOSE":
        kind = AskPose(sc.take("target").group(0))
    elif kw == "ASKETA":
        target = sc.take("name").group(0)
        sc.space()
        kind = AskEta(target, sc.place())
    else:
        raise ProtocolError(f"unknown message kind {kw!r}", kcol)

    note = ""
    if not sc.at_end():
        if not line.startswith(" # ", sc.i) and line[sc.i:] != " #":
            raise ProtocolError("unexpected trailing input", sc.col)
        note = line[sc.i + 3:]
    return Message(t, sender, kind, note)


def parse_transcript(lines: Iterable[str], places=None) -> list[Message]:
    """Parse a multi-line transcript; blank lines and lines starting with ';' are skipped."""
    out = []
    for n, raw in enumerate(lines, 1):
        s = raw.rstrip("\r\n")
        if not s.strip() or s.lstrip().startswith(";"):
            continue
        try:
            out.append(parse_message(s, places))
        except ProtocolError as e:
            raise ProtocolError(f"line {n}: {e}", e.column) from None
    return out


# ---------------------------------------------------------------------------
# analysis

UNDECIDED = "undecided"
PREFERS = "prefers"
OPPOSES = "opposes"
FINALIZED = "finalized"
PRESUMED_CAUGHT = "presumed_caught"


@dataclass(frozen=True)
class Opinion:
    stance: str = UNDECIDED
    place: str | None = None

    def supports(self) -> str | None:
        return self.place if self.stance in (PREFERS, FINALIZED) else None


@dataclass
class OpinionState:
    opinions: dict[str, Opinion]
    reached: bool = False
    place: str | None = None
    last_heard: dict[str, int] = field(default_factory=dict)

    @property
    def active(self) -> list[str]:
        return [a for a, o in self.opinions.items() if o.stance != PRESUMED_CAUGHT]

    def supporters(self, place: str) -> list[str]:
        return [a for a, o in self.opinions.items() if o.supports() == place]

    def signature(self) -> tuple:
        """Hashable summary, used to detect opinion changes."""
        return (self.reached, self.place,
                tuple(sorted((a, o.stance, o.place) for a, o in self.opinions.items())))


def most_supported(opinions: dict[str, Opinion]) -> str | None:
    counts = Counter(o.supports() for o in opinions.values()
                     if o.stance != PRESUMED_CAUGHT and o.supports() is not None)
    if not counts:
        return None
    best = max(counts.values())
    return min(p for p, c in counts.items() if c == best)


def analyze_transcript(history: Sequence[Message], roster: Sequence[str], now: int) -> OpinionState:
    """Opinions and agreement status after `history`, evaluated at clock `now`."""
    opinions = {a: Opinion() for a in roster}
    last_heard: dict[str, int] = {}
    pending_asks: dict[str, int] = {}  # target -> time of oldest unanswered direct ask
    last_stance_objects = False
    finalize: tuple[int, str] | None = None
    objected_since_finalize = False

    for m in history:
        last_heard[m.sender] = m.timestamp
        pending_asks.pop(m.sender, None)
        k = m.kind
        if isinstance(k, (AskPose, AskEta)) and k.target not in (BROADCAST, m.sender):
            pending_asks.setdefault(k.target, m.timestamp)
        if not isinstance(k, STANCE_KINDS) or m.sender not in opinions:
            continue
        if isinstance(k, Propose):
            opinions[m.sender] = Opinion(PREFERS, k.place)
            last_stance_objects = True
            objected_since_finalize = True
        elif isinstance(k, Oppose):
            opinions[m.sender] = Opinion(OPPOSES, k.place)
            last_stance_objects = True
            objected_since_finalize = True
        elif isinstance(k, Support):
            opinions[m.sender] = Opinion(PREFERS, k.place)
            last_stance_objects = False
        elif isinstance(k, Finalize):
            opinions[m.sender] = Opinion(FINALIZED, k.place)
            last_stance_objects = False
            finalize = (m.timestamp, k.place)
            objected_since_finalize = False
        elif isinstance(k, Arrived):
            opinions[m.sender] = Opinion(FINALIZED, k.place)
            last_stance_objects = False

    for target, t_ask in pending_asks.items():
        if target not in opinions or now - t_ask <= SILENCE_LIMIT:
            continue
        others_spoke = any(m.timestamp > t_ask and m.sender != target for m in history)
        if others_spoke:
            opinions[target] = Opinion(PRESUMED_CAUGHT)

    active = [a for a in opinions if opinions[a].stance != PRESUMED_CAUGHT]
    supported = {opinions[a].supports() for a in active}
    unanimous = bool(active) and len(supported) == 1 and None not in supported

    reached, place = False, None
    if not last_stance_objects:
        if unanimous:
            reached, place = True, supported.pop()
        elif finalize is not None and not objected_since_finalize and now - finalize[0] >= FINALIZE_GRACE:
            reached, place = True, finalize[1]
    if not reached:
        place = most_supported(opinions)
    return OpinionState(opinions, reached, place, last_heard)


@dataclass(frozen=True)
class EtaFact:
    agent: str
    place: str
    eta: Eta
    timestamp: int


@dataclass
class SpatialFacts:
    etas: dict[tuple[str, str], EtaFact] = field(default_factory=dict)  # (place, agent)
    agent_poses: dict[str, tuple[Pose2D, int]] = field(default_factory=dict)
    sentinel_poses: list[tuple[Pose2D, int]] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not (self.etas or self.agent_poses or self.sentinel_poses)


def extract_spatial_facts(history: Sequence[Message]) -> SpatialFacts:
    facts = SpatialFacts()
    for m in history:
        k = m.kind
        eta = None
        if isinstance(k, EtaReport):
            eta = k.eta
        elif isinstance(k, (Support, Oppose)) and k.eta is not None:
            eta = k.eta
        if eta is not None:
            facts.etas[(k.place, m.sender)] = EtaFact(m.sender, k.place, eta, m.timestamp)
        if isinstance(k, PoseReport):
            facts.agent_poses[m.sender] = (Pose2D(*k.pose), m.timestamp)
        elif isinstance(k, SentinelReport):
            for p in k.poses:
                facts.sentinel_poses.append((Pose2D(*p), m.timestamp))
    return facts
