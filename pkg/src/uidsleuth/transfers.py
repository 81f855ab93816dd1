"""Navigation-path reconstruction and cross-context transfer detection.

A token only becomes a smuggling candidate when it was carried as a query
parameter on at least one navigation hop and its appearance sequence crosses
a registered-domain boundary. Values that merely show up on both endpoints
without riding a navigation URL are discarded; values carried over only part
of a path are kept.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from urllib.parse import unquote

from .domains import DomainError, SuffixRules, fqdn, normalize_url, registered_domain
from .records import StepRecord
from .tokens import (
    DEFAULT_MAX_DEPTH,
    Token,
    TokenObservation,
    TokenSource,
    decompose_value,
    parse_query,
)


class TransferError(ValueError):
    pass


@dataclass(frozen=True)
class NavigationPath:
    """originator -> redirectors -> destination for one clicked navigation."""

    originator: str
    redirectors: tuple[str, ...]
    destination: str

    @property
    def hops(self) -> tuple[str, ...]:
        return (self.originator, *self.redirectors, self.destination)

    @property
    def n_redirectors(self) -> int:
        return len(self.redirectors)

    def domain_path(self, rules: SuffixRules) -> tuple[str, ...]:
        return tuple(registered_domain(fqdn(url), rules) for url in self.hops)

    def url_key(self) -> tuple[str, ...]:
        return tuple(normalize_url(url) for url in self.hops)


class SegmentCategory(str, Enum):
    FULL_PATH = "FullPath"
    ORIGINATOR_TO_DESTINATION = "OriginatorToDestination"
    ORIGINATOR_TO_REDIRECTOR = "OriginatorToRedirector"
    REDIRECTOR_TO_DESTINATION = "RedirectorToDestination"
    REDIRECTOR_TO_REDIRECTOR = "RedirectorToRedirector"


@dataclass(frozen=True)
class TransferSegment:
    category: SegmentCategory
    via_dedicated: bool = False


class OriginKind(str, Enum):
    STORAGE_ON_ORIGINATOR = "StorageOnOriginator"
    QUERY_ON_HOP = "QueryOnHop"
    THIRD_PARTY_REQUEST = "ThirdPartyRequest"


@dataclass(frozen=True)
class CandidateCase:
    """A token carried across at least one registered-domain boundary.

    crossing_hops are indices into ``path.hops`` where the value rode a query
    parameter; index 0 is additionally included when the value originated in
    the originator's storage, marking where its journey began.
    """

    token: Token
    path: NavigationPath
    crossing_hops: tuple[int, ...]
    origin_kind: OriginKind
    walk_id: str
    step_index: int
    crawler_id: str
    context_domain: str
    hop_param_names: frozenset[str]


class LeakMode(str, Enum):
    DIRECT_PARAM = "DirectParam"
    FULL_URL_EMBED = "FullUrlEmbed"


@dataclass(frozen=True)
class LeakReport:
    uid_value: str
    third_party_domain: str
    mode: LeakMode
    request_url: str


def build_navigation_path(step: StepRecord) -> NavigationPath:
    """Reconstruct the navigation path of one step.

    The page where the click happened is the originator; the chain's last hop
    is the destination; everything between is a redirector. Consecutive hops
    with the same normalized URL are collapsed, but consecutive hops that
    merely share a registered domain stay distinct.
    """
    if not step.navigation_chain:
        raise TransferError(f"no navigation occurred in walk {step.walk_id} step {step.step_index}")
    hops: list[str] = [step.page_url]
    for url in step.navigation_chain:
        if normalize_url(url) != normalize_url(hops[-1]):
            hops.append(url)
    if len(hops) == 1:
        # The click navigated to the page itself; still a path with no hops crossed.
        hops.append(step.navigation_chain[-1])
    return NavigationPath(
        originator=hops[0], redirectors=tuple(hops[1:-1]), destination=hops[-1]
    )


def _hop_leaf_values(
    path: NavigationPath, max_depth: int
) -> tuple[list[dict[str, list[str]]], list[str]]:
    """Per hop: leaf value -> parameter names carrying it, plus hop domains."""
    per_hop: list[dict[str, list[str]]] = []
    for url in path.hops:
        values: dict[str, list[str]] = {}
        try:
            pairs = parse_query(url)
        except DomainError:
            pairs = []
        for name, raw in pairs:
            for token in decompose_value(name, raw, max_depth):
                values.setdefault(token.value, []).append(token.name)
        per_hop.append(values)
    return per_hop, list(path.hops)


def find_cross_context_transfers(
    observations: list[TokenObservation],
    path: NavigationPath,
    rules: SuffixRules,
    *,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> list[CandidateCase]:
    """Candidate smuggling cases for one (walk, step, crawler).

    The appearance sequence for a value is its origin context (storage on the
    originator, or a third-party request) followed by every hop that carried
    it as a query parameter; a candidate needs some adjacent pair of that
    sequence to span distinct registered domains.
    """
    if not observations:
        return []

    hop_values, hops = _hop_leaf_values(path, max_depth)
    hop_domains = [registered_domain(fqdn(url), rules) for url in hops]
    normalized_hops = {normalize_url(url) for url in hops}
    originator_norm = normalize_url(path.originator)

    storage_obs: dict[str, TokenObservation] = {}
    request_obs: dict[str, TokenObservation] = {}
    walk_id = observations[0].walk_id
    step_index = observations[0].step_index
    crawler = observations[0].crawler
    for obs in observations:
        value = obs.token.value
        if obs.token.source in (TokenSource.COOKIE, TokenSource.LOCAL_STORAGE):
            if normalize_url(obs.context_url) == originator_norm and value not in storage_obs:
                storage_obs[value] = obs
        elif normalize_url(obs.context_url) not in normalized_hops:
            request_obs.setdefault(value, obs)

    all_values: dict[str, None] = {}
    for values in hop_values:
        for value in values:
            all_values.setdefault(value)

    cases: list[CandidateCase] = []
    for value in all_values:
        query_hops = [i for i, values in enumerate(hop_values) if value in values]
        if not query_hops:
            continue

        if value in storage_obs:
            origin_kind = OriginKind.STORAGE_ON_ORIGINATOR
            origin_obs = storage_obs[value]
            contexts = [hop_domains[0]] + [hop_domains[i] for i in query_hops]
            crossing = tuple(sorted({0, *query_hops}))
        elif value in request_obs:
            origin_kind = OriginKind.THIRD_PARTY_REQUEST
            origin_obs = request_obs[value]
            contexts = [origin_obs.context_registered_domain] + [
                hop_domains[i] for i in query_hops
            ]
            crossing = tuple(query_hops)
        else:
            origin_kind = OriginKind.QUERY_ON_HOP
            origin_obs = None
            contexts = [hop_domains[i] for i in query_hops]
            crossing = tuple(query_hops)

        crossed = any(a != b for a, b in zip(contexts, contexts[1:]))
        if not crossed:
            continue

        first_hop = query_hops[0]
        param_names = frozenset(
            name for i in query_hops for name in hop_values[i][value]
        )
        if origin_obs is not None and origin_kind is OriginKind.STORAGE_ON_ORIGINATOR:
            token = origin_obs.token
            context_domain = origin_obs.context_registered_domain
        else:
            token = Token(
                name=hop_values[first_hop][value][0],
                value=value,
                source=TokenSource.QUERY_PARAM,
            )
            context_domain = hop_domains[first_hop]

        cases.append(
            CandidateCase(
                token=token,
                path=path,
                crossing_hops=crossing,
                origin_kind=origin_kind,
                walk_id=walk_id,
                step_index=step_index,
                crawler_id=crawler.crawler_id.value,
                context_domain=context_domain,
                hop_param_names=param_names,
            )
        )
    return cases


def segment_category(first_hop: int, last_hop: int, n_redirectors: int) -> SegmentCategory:
    """Five-way classification of the traversed portion of a path.

    Exhaustive and mutually exclusive over every (first, last) pair: on a
    zero-redirector path everything is originator-to-destination; otherwise
    the pair's endpoints decide the bucket.
    """
    destination = n_redirectors + 1
    if n_redirectors == 0:
        return SegmentCategory.ORIGINATOR_TO_DESTINATION
    if first_hop == 0:
        if last_hop == destination:
            return SegmentCategory.FULL_PATH
        return SegmentCategory.ORIGINATOR_TO_REDIRECTOR
    if last_hop == destination:
        return SegmentCategory.REDIRECTOR_TO_DESTINATION
    return SegmentCategory.REDIRECTOR_TO_REDIRECTOR


def classify_transfer_segment(case: CandidateCase) -> TransferSegment:
    if not case.crossing_hops:
        raise TransferError("candidate case has no crossing hops")
    first, last = min(case.crossing_hops), max(case.crossing_hops)
    return TransferSegment(
        category=segment_category(first, last, case.path.n_redirectors)
    )


def mark_via_dedicated(
    case: CandidateCase,
    segment: TransferSegment,
    dedicated_fqdns: frozenset[str],
) -> TransferSegment:
    """Set via_dedicated when a dedicated smuggler lies on the traversed span."""
    first, last = min(case.crossing_hops), max(case.crossing_hops)
    hops = case.path.hops
    for i in range(max(first, 1), min(last, case.path.n_redirectors) + 1):
        if fqdn(hops[i]) in dedicated_fqdns:
            return replace(segment, via_dedicated=True)
    return replace(segment, via_dedicated=False)


def detect_third_party_leaks(
    destination_step: StepRecord,
    uid_value: str,
    rules: SuffixRules,
    *,
    min_value_length: int = 8,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> list[LeakReport]:
    """Scan a step's non-navigation requests for the UID reaching third parties.

    DirectParam: the UID appears verbatim as a decomposed parameter value.
    FullUrlEmbed: a parameter carries the full destination URL, which itself
    contains the UID.
    """
    if len(uid_value) < min_value_length:
        raise TransferError(
            f"uid value shorter than minimum token length {min_value_length}"
        )
    if not destination_step.navigation_chain:
        return []
    destination_url = destination_step.navigation_chain[-1]
    destination_domain = registered_domain(fqdn(destination_url), rules)

    leaks: list[LeakReport] = []
    seen: set[tuple[str, LeakMode]] = set()
    for request in destination_step.requests:
        if request.is_navigation:
            continue
        try:
            request_domain = registered_domain(fqdn(request.url), rules)
            pairs = parse_query(request.url)
        except DomainError:
            continue
        if request_domain == destination_domain:
            continue

        direct = False
        embed = False
        for name, raw in pairs:
            candidates = [raw]
            decoded = unquote(raw)
            if decoded != raw:
                candidates.append(decoded)
            leaves = [t.value for t in decompose_value(name, raw, max_depth)]
            if uid_value in leaves:
                direct = True
            if any(destination_url in c for c in candidates) and uid_value in destination_url:
                embed = True
        if direct and (request_domain, LeakMode.DIRECT_PARAM) not in seen:
            seen.add((request_domain, LeakMode.DIRECT_PARAM))
            leaks.append(
                LeakReport(uid_value, request_domain, LeakMode.DIRECT_PARAM, request.url)
            )
        if embed and (request_domain, LeakMode.FULL_URL_EMBED) not in seen:
            seen.add((request_domain, LeakMode.FULL_URL_EMBED))
            leaks.append(
                LeakReport(uid_value, request_domain, LeakMode.FULL_URL_EMBED, request.url)
            )
    return leaks
