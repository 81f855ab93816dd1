"""Central coordination service for synchronized random walks.

Three primary crawlers submit the clickable elements they see; the controller
matches equivalent elements across the three lists, picks one target for all
to click in unison, verifies that everyone landed on the same FQDN, and hands
the repeat crawler the exact element the first crawler clicked. A landing
disagreement or a silent crawler terminates the walk, but the final step's
data is still retained.
"""

from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from random import Random
from typing import Sequence
from urllib.parse import urlsplit, urlunsplit

from .domains import DomainError, SuffixRules, fqdn, registered_domain
from .records import ElementDescriptor, ElementKind, PRIMARY_CRAWLERS

DEFAULT_PHASE_TIMEOUT = 60.0
BOX_X_TOLERANCE = 8.0  # px; width and height must match exactly, y is free


class ControllerError(Exception):
    pass


class NotReady(ControllerError):
    """The requested artifact is not available yet; retry later."""


class WalkTerminated(ControllerError):
    def __init__(self, reason: str):
        super().__init__(f"walk terminated: {reason}")
        self.reason = reason


class MatchHeuristic(str, Enum):
    HREF_SANS_QUERY = "HrefSansQuery"
    PROPS_AND_BOX = "PropsAndBox"
    PROPS_AND_XPATH = "PropsAndXpath"


@dataclass(frozen=True)
class MatchedTriple:
    indices: tuple[int, int, int]  # per submitted list, in crawler order
    elements: tuple[ElementDescriptor, ElementDescriptor, ElementDescriptor]
    heuristic: MatchHeuristic


@dataclass(frozen=True)
class ClickDirective:
    """Which element each primary crawler must click, as submission indices."""

    element_index: dict[str, int]  # crawler id -> index into its submission
    match_heuristic: MatchHeuristic
    rank_reason: str

    def to_dict(self) -> dict:
        return {
            "element_index": dict(self.element_index),
            "match_heuristic": self.match_heuristic.value,
            "rank_reason": self.rank_reason,
        }


def strip_query_and_fragment(url: str) -> str:
    parts = urlsplit(url)
    return urlunsplit((parts.scheme, parts.netloc, parts.path, "", ""))


def _box_compatible(a: ElementDescriptor, b: ElementDescriptor) -> bool:
    ax, _, aw, ah = a.bounding_box
    bx, _, bw, bh = b.bounding_box
    return aw == bw and ah == bh and abs(ax - bx) <= BOX_X_TOLERANCE


def match_elements(
    lists: Sequence[Sequence[ElementDescriptor]],
) -> list[MatchedTriple]:
    """Find elements equivalent across all three submissions.

    Heuristics, in order: anchors whose href matches once query and fragment
    are stripped; equal property-name sets with boxes equal in width, height
    and x within tolerance (y may differ, elements render at different
    heights); equal property-name sets with identical xpath. Each element
    joins at most one triple; within a heuristic candidates pair greedily in
    submitted order.
    """
    if len(lists) != 3:
        raise ControllerError("element matching needs exactly three submissions")
    used: list[set[int]] = [set(), set(), set()]
    triples: list[MatchedTriple] = []

    def claim(i: int, j: int, k: int, heuristic: MatchHeuristic) -> None:
        used[0].add(i)
        used[1].add(j)
        used[2].add(k)
        triples.append(
            MatchedTriple(
                indices=(i, j, k),
                elements=(lists[0][i], lists[1][j], lists[2][k]),
                heuristic=heuristic,
            )
        )

    # H1: exact key on stripped href, anchors only.
    for i, a in enumerate(lists[0]):
        if i in used[0] or a.kind is not ElementKind.ANCHOR or a.href is None:
            continue
        key = strip_query_and_fragment(a.href)
        j = _find(lists[1], used[1], lambda e: e.kind is ElementKind.ANCHOR and e.href is not None and strip_query_and_fragment(e.href) == key)
        if j is None:
            continue
        k = _find(lists[2], used[2], lambda e: e.kind is ElementKind.ANCHOR and e.href is not None and strip_query_and_fragment(e.href) == key)
        if k is None:
            continue
        claim(i, j, k, MatchHeuristic.HREF_SANS_QUERY)

    # H2: property names plus compatible boxes.
    for i, a in enumerate(lists[0]):
        if i in used[0]:
            continue
        j = _find(lists[1], used[1], lambda e: e.kind is a.kind and e.property_names == a.property_names and _box_compatible(a, e))
        if j is None:
            continue
        k = _find(lists[2], used[2], lambda e: e.kind is a.kind and e.property_names == a.property_names and _box_compatible(a, e))
        if k is None:
            continue
        claim(i, j, k, MatchHeuristic.PROPS_AND_BOX)

    # H3: property names plus identical xpath.
    for i, a in enumerate(lists[0]):
        if i in used[0]:
            continue
        j = _find(lists[1], used[1], lambda e: e.kind is a.kind and e.property_names == a.property_names and e.xpath == a.xpath)
        if j is None:
            continue
        k = _find(lists[2], used[2], lambda e: e.kind is a.kind and e.property_names == a.property_names and e.xpath == a.xpath)
        if k is None:
            continue
        claim(i, j, k, MatchHeuristic.PROPS_AND_XPATH)

    return triples


def _find(elements, used, predicate):
    for index, element in enumerate(elements):
        if index not in used and predicate(element):
            return index
    return None


def rank_and_select(
    matches: Sequence[MatchedTriple],
    current_page_domain: str,
    seed: int,
    rules: SuffixRules | None = None,
) -> ClickDirective | None:
    """Pick the click target: iframes first (they tend to hold ads), then
    anchors leaving the current registered domain, then everything else.
    Selection within a tier is seeded-uniform so replays are reproducible.
    Returns None when there is nothing to click (the step is a match failure).
    """
    if not matches:
        return None
    tiers: dict[int, list[MatchedTriple]] = {1: [], 2: [], 3: []}
    for triple in matches:
        lead = triple.elements[0]
        if lead.kind is ElementKind.IFRAME:
            tiers[1].append(triple)
        elif lead.href is not None and _is_cross_domain(lead.href, current_page_domain, rules):
            tiers[2].append(triple)
        else:
            tiers[3].append(triple)
    for tier, reason in ((1, "iframe"), (2, "cross-domain anchor"), (3, "same-domain anchor")):
        if tiers[tier]:
            choice = Random(seed).randrange(len(tiers[tier]))
            selected = tiers[tier][choice]
            return ClickDirective(
                element_index={
                    crawler.value: selected.indices[slot]
                    for slot, crawler in enumerate(PRIMARY_CRAWLERS)
                },
                match_heuristic=selected.heuristic,
                rank_reason=f"{reason} ({len(tiers[tier])} candidates, seed {seed})",
            )
    return None


def _is_cross_domain(href: str, current_domain: str, rules: SuffixRules | None) -> bool:
    try:
        host = fqdn(href)
        domain = registered_domain(host, rules) if rules is not None else host
    except DomainError:
        return False
    return domain != current_domain


class LandingVerdict(str, Enum):
    CONTINUE = "Continue"
    TERMINATE = "Terminate"


def verify_landing(landings: dict[str, str]) -> LandingVerdict:
    """Continue only when all three primary FQDNs are byte-equal."""
    values = [landings[c.value] for c in PRIMARY_CRAWLERS]
    return LandingVerdict.CONTINUE if len(set(values)) == 1 else LandingVerdict.TERMINATE


class SessionState(str, Enum):
    AWAITING_ELEMENTS = "AwaitingElements"
    CHOICE_PUBLISHED = "ChoicePublished"
    AWAITING_LANDINGS = "AwaitingLandings"
    TERMINATED = "Terminated"
    COMPLETED = "Completed"


@dataclass
class StepOutcome:
    directive: ClickDirective | None = None
    landings: dict[str, str] = field(default_factory=dict)
    verdict: LandingVerdict | None = None
    completed: bool = False
    data_retained: bool = True


@dataclass
class WalkSession:
    walk_id: str
    seeder_domain: str
    steps_per_walk: int
    step_index: int = 0
    state: SessionState = SessionState.AWAITING_ELEMENTS
    submissions: dict[str, list[ElementDescriptor]] = field(default_factory=dict)
    landings: dict[str, str] = field(default_factory=dict)
    directive: ClickDirective | None = None
    terminate_reason: str | None = None
    history: dict[int, StepOutcome] = field(default_factory=dict)
    phase_started: float = 0.0


class WalkCoordinator:
    """Session registry; all mutations of one session are serialized."""

    def __init__(
        self,
        rules: SuffixRules | None = None,
        phase_timeout: float = DEFAULT_PHASE_TIMEOUT,
        steps_per_walk: int = 10,
        seed: int = 0,
        clock=time.monotonic,
    ):
        self._rules = rules
        self._timeout = phase_timeout
        self._steps = steps_per_walk
        self._seed = seed
        self._clock = clock
        self._lock = threading.Lock()
        self._sessions: dict[str, WalkSession] = {}
        self._session_locks: dict[str, threading.Lock] = {}
        self._counter = 0

    # -- session management -------------------------------------------------

    def create_walk(self, seeder_domain: str, walk_id: str | None = None) -> str:
        with self._lock:
            if walk_id is None:
                walk_id = f"walk-{self._counter:06d}"
                self._counter += 1
            if walk_id in self._sessions:
                existing = self._sessions[walk_id]
                if existing.seeder_domain != seeder_domain:
                    raise ControllerError(f"walk {walk_id!r} already exists")
                return walk_id  # idempotent retry
            session = WalkSession(
                walk_id=walk_id, seeder_domain=seeder_domain, steps_per_walk=self._steps
            )
            session.phase_started = self._clock()
            self._sessions[walk_id] = session
            self._session_locks[walk_id] = threading.Lock()
            return walk_id

    def walk_ids(self) -> list[str]:
        with self._lock:
            return list(self._sessions)

    def _session(self, walk_id: str) -> tuple[WalkSession, threading.Lock]:
        with self._lock:
            if walk_id not in self._sessions:
                raise KeyError(walk_id)
            return self._sessions[walk_id], self._session_locks[walk_id]

    def session_state(self, walk_id: str) -> SessionState:
        session, lock = self._session(walk_id)
        with lock:
            self._check_timeout(session)
            return session.state

    def terminate_all(self, reason: str) -> None:
        for walk_id in self.walk_ids():
            session, lock = self._session(walk_id)
            with lock:
                if session.state not in (SessionState.TERMINATED, SessionState.COMPLETED):
                    self._terminate(session, reason)

    # -- step protocol -------------------------------------------------------

    def submit_elements(
        self,
        walk_id: str,
        step_index: int,
        crawler: str,
        elements: list[ElementDescriptor],
    ) -> None:
        session, lock = self._session(walk_id)
        with lock:
            self._check_timeout(session)
            self._guard_active(session)
            if crawler not in {c.value for c in PRIMARY_CRAWLERS}:
                raise ControllerError(f"{crawler} does not submit elements (replay only)")
            if step_index != session.step_index:
                raise ControllerError(
                    f"expected step {session.step_index}, got {step_index}"
                )
            if session.state is not SessionState.AWAITING_ELEMENTS:
                # Idempotent retry of a submission already folded into the choice.
                if crawler in session.submissions:
                    return
                raise ControllerError(f"step {step_index} is not accepting elements")
            session.submissions[crawler] = list(elements)
            if all(c.value in session.submissions for c in PRIMARY_CRAWLERS):
                self._publish_choice(session)

    def _publish_choice(self, session: WalkSession) -> None:
        lists = [session.submissions[c.value] for c in PRIMARY_CRAWLERS]
        matches = match_elements(lists)
        step_seed = int.from_bytes(
            f"{self._seed}|{session.walk_id}|{session.step_index}".encode(), "big"
        ) % (2**31)
        directive = rank_and_select(
            matches, session.seeder_domain, step_seed, self._rules
        )
        if directive is None:
            self._terminate(session, "no-match")
            return
        session.directive = directive
        session.state = SessionState.CHOICE_PUBLISHED
        session.phase_started = self._clock()

    def get_choice(self, walk_id: str, step_index: int) -> ClickDirective:
        session, lock = self._session(walk_id)
        with lock:
            self._check_timeout(session)
            outcome = session.history.get(step_index)
            if outcome is not None and outcome.directive is not None:
                return outcome.directive
            if session.state is SessionState.TERMINATED:
                raise WalkTerminated(session.terminate_reason or "terminated")
            if step_index != session.step_index or session.directive is None:
                raise NotReady("choice not published yet")
            return session.directive

    def report_landing(
        self, walk_id: str, step_index: int, crawler: str, landing_fqdn: str
    ) -> None:
        session, lock = self._session(walk_id)
        with lock:
            self._check_timeout(session)
            self._guard_active(session)
            if crawler not in {c.value for c in PRIMARY_CRAWLERS}:
                raise ControllerError(f"{crawler} does not vote on landings")
            if step_index != session.step_index:
                raise ControllerError(
                    f"expected step {session.step_index}, got {step_index}"
                )
            if session.state not in (
                SessionState.CHOICE_PUBLISHED,
                SessionState.AWAITING_LANDINGS,
            ):
                raise ControllerError("no click directive outstanding")
            previous = session.landings.get(crawler)
            if previous is not None and previous != landing_fqdn:
                raise ControllerError("conflicting landing report")
            session.landings[crawler] = landing_fqdn
            session.state = SessionState.AWAITING_LANDINGS
            if all(c.value in session.landings for c in PRIMARY_CRAWLERS):
                self._conclude_step(session)

    def _conclude_step(self, session: WalkSession) -> None:
        verdict = verify_landing(session.landings)
        outcome = StepOutcome(
            directive=session.directive,
            landings=dict(session.landings),
            verdict=verdict,
            completed=True,
            data_retained=True,
        )
        session.history[session.step_index] = outcome
        if verdict is LandingVerdict.TERMINATE:
            # Landing mismatch ends the walk; the step's data is retained
            # because divergent ads often carry their own smuggling cases.
            session.state = SessionState.TERMINATED
            session.terminate_reason = "landing-mismatch"
            session.directive = None
            return
        if session.step_index + 1 >= session.steps_per_walk:
            session.state = SessionState.COMPLETED
            return
        session.step_index += 1
        session.state = SessionState.AWAITING_ELEMENTS
        session.submissions = {}
        session.landings = {}
        session.directive = None
        session.phase_started = self._clock()

    def get_verdict(self, walk_id: str, step_index: int) -> tuple[LandingVerdict, str | None]:
        session, lock = self._session(walk_id)
        with lock:
            self._check_timeout(session)
            outcome = session.history.get(step_index)
            if outcome is not None and outcome.verdict is not None:
                reason = (
                    session.terminate_reason
                    if outcome.verdict is LandingVerdict.TERMINATE
                    else None
                )
                return outcome.verdict, reason
            if session.state is SessionState.TERMINATED:
                return LandingVerdict.TERMINATE, session.terminate_reason
            raise NotReady("landing verification pending")

    def get_replay_choice(self, walk_id: str, step_index: int) -> ClickDirective:
        """The element Safari-1 clicked, for the repeat crawler, once the
        primary step completed."""
        session, lock = self._session(walk_id)
        with lock:
            self._check_timeout(session)
            outcome = session.history.get(step_index)
            if outcome is not None and outcome.completed and outcome.directive is not None:
                return outcome.directive
            if session.state is SessionState.TERMINATED:
                raise WalkTerminated(session.terminate_reason or "terminated")
            raise NotReady("primary step not completed yet")

    # -- internals -----------------------------------------------------------

    def _guard_active(self, session: WalkSession) -> None:
        if session.state is SessionState.TERMINATED:
            raise WalkTerminated(session.terminate_reason or "terminated")
        if session.state is SessionState.COMPLETED:
            raise ControllerError("walk already completed")

    def _check_timeout(self, session: WalkSession) -> None:
        if session.state in (SessionState.TERMINATED, SessionState.COMPLETED):
            return
        if self._clock() - session.phase_started > self._timeout:
            self._terminate(session, "timeout")

    def _terminate(self, session: WalkSession, reason: str) -> None:
        session.state = SessionState.TERMINATED
        session.terminate_reason = reason
        # Completed steps, including a retained landing-mismatch step, stay
        # replayable through the history; only the live directive is cleared.
        session.directive = None


# ---------------------------------------------------------------------------
# HTTP layer

_ROUTES = (
    ("POST", re.compile(r"^/v1/walk$"), "create"),
    ("POST", re.compile(r"^/v1/walk/([^/]+)/step/(\d+)/elements$"), "elements"),
    ("GET", re.compile(r"^/v1/walk/([^/]+)/step/(\d+)/choice$"), "choice"),
    ("POST", re.compile(r"^/v1/walk/([^/]+)/step/(\d+)/landing$"), "landing"),
    ("GET", re.compile(r"^/v1/walk/([^/]+)/step/(\d+)/verdict$"), "verdict"),
    ("GET", re.compile(r"^/v1/walk/([^/]+)/step/(\d+)/replay-choice$"), "replay"),
    ("GET", re.compile(r"^/v1/health$"), "health"),
)


def make_handler(coordinator: WalkCoordinator):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, status: int, payload: dict) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _body(self) -> dict:
            length = int(self.headers.get("Content-Length", "0"))
            if length == 0:
                return {}
            return json.loads(self.rfile.read(length).decode("utf-8"))

        def _dispatch(self, method: str) -> None:
            for route_method, pattern, name in _ROUTES:
                if route_method != method:
                    continue
                match = pattern.match(self.path)
                if match is None:
                    continue
                try:
                    self._handle(name, match)
                except NotReady as exc:
                    self._send(425, {"error": str(exc)})
                except WalkTerminated as exc:
                    self._send(409, {"error": str(exc), "reason": exc.reason})
                except KeyError:
                    self._send(404, {"error": "unknown walk"})
                except ControllerError as exc:
                    self._send(400, {"error": str(exc)})
                except (ValueError, json.JSONDecodeError) as exc:
                    self._send(400, {"error": f"bad request: {exc}"})
                return
            self._send(404, {"error": "no such endpoint"})

        def _handle(self, name: str, match: re.Match) -> None:
            if name == "health":
                self._send(200, {"status": "ok"})
                return
            if name == "create":
                body = self._body()
                walk_id = coordinator.create_walk(
                    seeder_domain=body["seeder_domain"], walk_id=body.get("walk_id")
                )
                self._send(201, {"walk_id": walk_id})
                return
            walk_id, step = match.group(1), int(match.group(2))
            if name == "elements":
                body = self._body()
                elements = [ElementDescriptor.from_dict(e) for e in body["elements"]]
                coordinator.submit_elements(walk_id, step, body["crawler"], elements)
                self._send(200, {"accepted": len(elements)})
            elif name == "choice":
                directive = coordinator.get_choice(walk_id, step)
                self._send(200, directive.to_dict())
            elif name == "landing":
                body = self._body()
                coordinator.report_landing(walk_id, step, body["crawler"], body["landing_fqdn"])
                self._send(200, {"recorded": True})
            elif name == "verdict":
                verdict, reason = coordinator.get_verdict(walk_id, step)
                payload: dict = {"verdict": verdict.value}
                if reason is not None:
                    payload["reason"] = reason
                self._send(200, payload)
            elif name == "replay":
                directive = coordinator.get_replay_choice(walk_id, step)
                self._send(200, directive.to_dict())

        def do_GET(self):
            self._dispatch("GET")

        def do_POST(self):
            self._dispatch("POST")

    return Handler


class ControllerServer:
    """Threaded HTTP server wrapping a coordinator; one thread per request."""

    def __init__(self, coordinator: WalkCoordinator, host: str = "127.0.0.1", port: int = 0):
        self.coordinator = coordinator
        self._httpd = ThreadingHTTPServer((host, port), make_handler(coordinator))
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[0], self._httpd.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    def shutdown(self, reason: str = "shutdown") -> None:
        self.coordinator.terminate_all(reason)
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
