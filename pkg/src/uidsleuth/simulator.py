"""Deterministic synthetic-web campaigns with labeled tracker behaviors.

A seeded world of sites, clickable elements and trackers is walked in
lockstep by the four-crawler fleet, emitting crawl records in the canonical
format plus ground truth for every injected token, path and redirector. The
entire campaign is a pure function of the configuration, so two runs with the
same seed produce byte-identical artifacts.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from hashlib import blake2b
from pathlib import Path
from typing import Mapping, Sequence
from urllib.parse import quote

from .domains import SuffixRules, normalize_url, registered_domain
from .records import (
    Cookie,
    CrawlRecordSet,
    CrawlerId,
    CrawlerIdentity,
    ElementDescriptor,
    ElementKind,
    LocalStorageItem,
    StepRecord,
    WebRequest,
    default_fleet,
)
from .transfers import SegmentCategory, segment_category

SIMULATOR_SUFFIX_RULES = ("test",)

_PARAM_POOL = (
    "uid", "visitor", "guid", "cid", "pid", "tk", "ref_id", "sub_id",
    "click_id", "mkid", "xid", "aud", "sess_ref", "partner_id", "imp",
)

_CRAWL_ORDER = (CrawlerId.SAFARI1, CrawlerId.SAFARI2, CrawlerId.CHROME3, CrawlerId.SAFARI1R)
_PRIMARIES = (CrawlerId.SAFARI1, CrawlerId.SAFARI2, CrawlerId.CHROME3)

_WALK_EPOCH_MS = 1_700_000_000_000


class SimulationError(ValueError):
    pass


class TrackerBehavior(str, Enum):
    PROFILE_STABLE_UID = "ProfileStableUid"
    PER_VISIT_SESSION_ID = "PerVisitSessionId"
    CONSTANT_TOKEN = "ConstantToken"
    TIMESTAMP_TOKEN = "TimestampToken"
    FINGERPRINT_UID = "FingerprintUid"
    PARTIAL_PATH_UID = "PartialPathUid"
    THIRD_PARTY_LEAKER = "ThirdPartyLeaker"
    BENIGN_REDIRECT = "BenignRedirect"


# Behaviors an ad slot may rotate to when it resolves dynamically. A lone
# session or timestamp token on a single crawler is undecidable from one
# observation, so slot rotation only serves campaigns whose single-crawler
# sightings are still true positives (or carry no token at all).
AD_BEHAVIORS = frozenset(
    {
        TrackerBehavior.PROFILE_STABLE_UID,
        TrackerBehavior.PARTIAL_PATH_UID,
        TrackerBehavior.THIRD_PARTY_LEAKER,
        TrackerBehavior.BENIGN_REDIRECT,
    }
)

_UID_BEHAVIORS = frozenset(
    {
        TrackerBehavior.PROFILE_STABLE_UID,
        TrackerBehavior.PARTIAL_PATH_UID,
        TrackerBehavior.THIRD_PARTY_LEAKER,
    }
)


class CarryPlan(str, Enum):
    FULL = "Full"                        # storage at originator, every hop decorated
    ORIGINATOR_TO_REDIRECTOR = "O2R"     # storage at originator, destination undecorated
    REDIRECTOR_TO_DESTINATION = "R2D"    # minted at the first redirector
    REDIRECTOR_TO_REDIRECTOR = "R2R"     # rides redirectors only
    NONE = "None"                        # bounce only, no decoration


def _digest(*parts: object, n: int = 16) -> str:
    joined = "|".join(str(p) for p in parts)
    return blake2b(joined.encode("utf-8"), digest_size=16).hexdigest()[:n]


@dataclass(frozen=True)
class WorldConfig:
    seed: int
    n_sites: int = 20
    walks: int = 10
    steps_per_walk: int = 10
    tracker_mix: Mapping[TrackerBehavior, float] = field(
        default_factory=lambda: {
            TrackerBehavior.PROFILE_STABLE_UID: 4.0,
            TrackerBehavior.PER_VISIT_SESSION_ID: 2.0,
            TrackerBehavior.CONSTANT_TOKEN: 2.0,
            TrackerBehavior.TIMESTAMP_TOKEN: 1.0,
            TrackerBehavior.PARTIAL_PATH_UID: 2.0,
            TrackerBehavior.THIRD_PARTY_LEAKER: 1.0,
            TrackerBehavior.BENIGN_REDIRECT: 2.0,
        }
    )
    dynamic_ad_probability: float = 0.0
    redirector_chain_lengths: Mapping[int, float] = field(
        default_factory=lambda: {0: 1.0, 1: 4.0, 2: 3.0, 3: 1.5, 4: 0.5}
    )
    n_trackers: int = 14
    anchor_campaign_rate: float = 0.6
    multipurpose_fraction: float = 0.25
    iframe_preference: float = 0.6

    def validate(self) -> None:
        if self.n_sites < 2:
            raise SimulationError("n_sites must be at least 2")
        if self.steps_per_walk < 1:
            raise SimulationError("steps_per_walk must be at least 1")
        if self.walks < 1:
            raise SimulationError("walks must be at least 1")
        weights = [w for w in self.tracker_mix.values() if w > 0]
        if not weights or any(w < 0 for w in self.tracker_mix.values()):
            raise SimulationError("tracker_mix needs nonnegative weights, at least one positive")
        if not 0.0 <= self.dynamic_ad_probability <= 1.0:
            raise SimulationError("dynamic_ad_probability must be in [0, 1]")
        if not self.redirector_chain_lengths or any(
            w < 0 for w in self.redirector_chain_lengths.values()
        ):
            raise SimulationError("redirector_chain_lengths needs nonnegative weights")
        positive = [b for b, w in self.tracker_mix.items() if w > 0]
        if self.n_trackers < len(positive):
            raise SimulationError("n_trackers must cover every behavior with positive weight")

    def canonical(self) -> dict:
        return {
            "seed": self.seed,
            "n_sites": self.n_sites,
            "walks": self.walks,
            "steps_per_walk": self.steps_per_walk,
            "tracker_mix": {
                TrackerBehavior(b).value: w for b, w in sorted(
                    self.tracker_mix.items(), key=lambda kv: TrackerBehavior(kv[0]).value
                )
            },
            "dynamic_ad_probability": self.dynamic_ad_probability,
            "redirector_chain_lengths": {
                str(k): v for k, v in sorted(self.redirector_chain_lengths.items())
            },
            "n_trackers": self.n_trackers,
            "anchor_campaign_rate": self.anchor_campaign_rate,
            "multipurpose_fraction": self.multipurpose_fraction,
            "iframe_preference": self.iframe_preference,
        }


@dataclass(frozen=True)
class TrackerSpec:
    tracker_id: str
    behavior: TrackerBehavior
    param_name: str
    redirector_fqdns: tuple[str, ...]
    plan: CarryPlan
    storage_kind: str  # "cookie" | "local_storage" | "none"
    multipurpose: bool
    leak_fqdn: str | None
    json_wrapped: bool = False  # storage value nests the id inside a JSON blob

    @property
    def domain(self) -> str:
        return f"{self.tracker_id}.test"

    @property
    def n_redirectors(self) -> int:
        return len(self.redirector_fqdns)

    def carry_span(self) -> tuple[int, int] | None:
        """(first, last) crossing-hop indices over originator..destination."""
        k = self.n_redirectors
        if self.plan is CarryPlan.FULL:
            return (0, k + 1)
        if self.plan is CarryPlan.ORIGINATOR_TO_REDIRECTOR:
            return (0, k)
        if self.plan is CarryPlan.REDIRECTOR_TO_DESTINATION:
            return (1, k + 1)
        if self.plan is CarryPlan.REDIRECTOR_TO_REDIRECTOR:
            return (1, k)
        return None

    def decorated_hops(self) -> tuple[int, ...]:
        """Chain-hop indices (1-based path hops) that carry the value."""
        span = self.carry_span()
        if span is None:
            return ()
        first, last = span
        return tuple(range(max(first, 1), last + 1))

    @property
    def uses_storage(self) -> bool:
        return self.plan in (CarryPlan.FULL, CarryPlan.ORIGINATOR_TO_REDIRECTOR)

    def expected_segment(self) -> SegmentCategory | None:
        span = self.carry_span()
        if span is None:
            return None
        return segment_category(span[0], span[1], self.n_redirectors)


@dataclass(frozen=True)
class SiteElement:
    element_id: str
    kind: ElementKind
    target: int  # index into World.sites
    campaign: str | None  # tracker_id
    is_dynamic: bool


@dataclass(frozen=True)
class SiteSpec:
    index: int
    domain: str
    elements: tuple[SiteElement, ...]
    is_tracker_page: bool = False


@dataclass
class World:
    config: WorldConfig
    campaign_id: str
    sites: tuple[SiteSpec, ...]
    trackers: dict[str, TrackerSpec]
    n_regular_sites: int
    fingerprinter_domains: tuple[str, ...]

    def suffix_rules(self) -> SuffixRules:
        return SuffixRules(frozenset(SIMULATOR_SUFFIX_RULES))

    def to_json(self) -> str:
        payload = {
            "campaign_id": self.campaign_id,
            "config": self.config.canonical(),
            "n_regular_sites": self.n_regular_sites,
            "fingerprinter_domains": list(self.fingerprinter_domains),
            "trackers": {
                tid: {
                    "behavior": t.behavior.value,
                    "param_name": t.param_name,
                    "redirector_fqdns": list(t.redirector_fqdns),
                    "plan": t.plan.value,
                    "storage_kind": t.storage_kind,
                    "multipurpose": t.multipurpose,
                    "leak_fqdn": t.leak_fqdn,
                    "json_wrapped": t.json_wrapped,
                }
                for tid, t in sorted(self.trackers.items())
            },
            "sites": [
                {
                    "index": s.index,
                    "domain": s.domain,
                    "is_tracker_page": s.is_tracker_page,
                    "elements": [
                        {
                            "element_id": e.element_id,
                            "kind": e.kind.value,
                            "target": e.target,
                            "campaign": e.campaign,
                            "is_dynamic": e.is_dynamic,
                        }
                        for e in s.elements
                    ],
                }
                for s in self.sites
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _allocate_trackers(config: WorldConfig) -> list[TrackerBehavior]:
    """Largest-remainder allocation of the roster over positive-weight behaviors."""
    positive = [
        b for b in TrackerBehavior if float(config.tracker_mix.get(b, 0.0)) > 0.0
    ]
    total_weight = sum(float(config.tracker_mix[b]) for b in positive)
    remaining = config.n_trackers - len(positive)
    counts = {b: 1 for b in positive}
    quotas = {
        b: remaining * float(config.tracker_mix[b]) / total_weight for b in positive
    }
    for b in positive:
        counts[b] += int(quotas[b])
    leftover = config.n_trackers - sum(counts.values())
    by_fraction = sorted(
        positive, key=lambda b: (-(quotas[b] - int(quotas[b])), b.value)
    )
    for b in by_fraction[:leftover]:
        counts[b] += 1
    roster: list[TrackerBehavior] = []
    for b in positive:
        roster.extend([b] * counts[b])
    return roster


def _draw_weighted(rng: random.Random, weights: Mapping[int, float]) -> int:
    items = sorted((k, float(v)) for k, v in weights.items() if float(v) > 0)
    total = sum(w for _, w in items)
    mark = rng.random() * total
    acc = 0.0
    for value, weight in items:
        acc += weight
        if mark <= acc:
            return value
    return items[-1][0]


def generate_world(config: WorldConfig) -> World:
    """Build the deterministic site graph, tracker roster and element layout."""
    config.validate()
    rng = random.Random(config.seed)
    campaign_id = _digest(json.dumps(config.canonical(), sort_keys=True), n=12)

    roster = _allocate_trackers(config)
    trackers: dict[str, TrackerSpec] = {}
    for i, behavior in enumerate(roster):
        tracker_id = f"t{i:03d}"
        param = _PARAM_POOL[i] if i < len(_PARAM_POOL) else f"{_PARAM_POOL[i % len(_PARAM_POOL)]}{i}"
        chain_len = _draw_weighted(rng, config.redirector_chain_lengths)
        if behavior is TrackerBehavior.PARTIAL_PATH_UID:
            plan = rng.choice(
                [
                    CarryPlan.ORIGINATOR_TO_REDIRECTOR,
                    CarryPlan.REDIRECTOR_TO_DESTINATION,
                    CarryPlan.REDIRECTOR_TO_REDIRECTOR,
                ]
            )
            chain_len = max(chain_len, 2 if plan is CarryPlan.REDIRECTOR_TO_REDIRECTOR else 1)
        elif behavior is TrackerBehavior.BENIGN_REDIRECT:
            plan = CarryPlan.NONE
            chain_len = max(chain_len, 1)
        else:
            plan = CarryPlan.FULL
        storage_kind = "none"
        if plan in (CarryPlan.FULL, CarryPlan.ORIGINATOR_TO_REDIRECTOR):
            storage_kind = "cookie" if rng.random() < 0.7 else "local_storage"
        multipurpose = (
            behavior in _UID_BEHAVIORS
            and chain_len >= 1
            and rng.random() < config.multipurpose_fraction
        )
        if plan is CarryPlan.REDIRECTOR_TO_REDIRECTOR:
            # A hop between same-domain redirectors crosses no boundary, so
            # these trackers pair their own infrastructure with a partner
            # domain, the way acquired ad networks synchronize redirectors.
            fqdns = tuple(
                f"r{j}.{tracker_id}{'' if j % 2 else 'x'}.test"
                for j in range(1, chain_len + 1)
            )
        else:
            fqdns = tuple(f"r{j}.{tracker_id}.test" for j in range(1, chain_len + 1))
        trackers[tracker_id] = TrackerSpec(
            tracker_id=tracker_id,
            behavior=behavior,
            param_name=param,
            redirector_fqdns=fqdns,
            plan=plan,
            storage_kind=storage_kind,
            multipurpose=multipurpose,
            leak_fqdn=(
                f"sink.{tracker_id}.test"
                if behavior is TrackerBehavior.THIRD_PARTY_LEAKER
                else None
            ),
            json_wrapped=storage_kind != "none" and rng.random() < 0.3,
        )

    tracker_ids = list(trackers)
    ad_pool = [tid for tid in tracker_ids if trackers[tid].behavior in AD_BEHAVIORS]

    site_domains = [f"site{i:03d}.test" for i in range(config.n_sites)]
    public_pages = [
        (tid, trackers[tid].redirector_fqdns[0])
        for tid in tracker_ids
        if trackers[tid].multipurpose
    ]
    total_sites = len(site_domains) + len(public_pages)

    sites: list[SiteSpec] = []
    for index in range(total_sites):
        is_tracker_page = index >= len(site_domains)
        domain = (
            site_domains[index]
            if not is_tracker_page
            else public_pages[index - len(site_domains)][1]
        )
        elements: list[SiteElement] = []
        n_anchors = rng.randint(2, 3)
        n_iframes = 0 if is_tracker_page else rng.randint(0, 2)
        for a in range(n_anchors):
            target = rng.randrange(config.n_sites)
            while target == index:
                target = (target + 1) % config.n_sites
            campaign = None
            if not is_tracker_page and rng.random() < config.anchor_campaign_rate:
                campaign = rng.choice(tracker_ids)
            elements.append(
                SiteElement(
                    element_id=f"s{index:03d}a{a}",
                    kind=ElementKind.ANCHOR,
                    target=target,
                    campaign=campaign,
                    is_dynamic=False,
                )
            )
        for f in range(n_iframes):
            target = rng.randrange(config.n_sites)
            while target == index:
                target = (target + 1) % config.n_sites
            campaign = rng.choice(ad_pool) if ad_pool else None
            elements.append(
                SiteElement(
                    element_id=f"s{index:03d}f{f}",
                    kind=ElementKind.IFRAME,
                    target=target,
                    campaign=campaign,
                    is_dynamic=bool(ad_pool),
                )
            )
        sites.append(
            SiteSpec(
                index=index,
                domain=domain,
                elements=tuple(elements),
                is_tracker_page=is_tracker_page,
            )
        )

    # Route at least one decorated navigation at each multipurpose tracker's
    # public page so its FQDN is observed as an endpoint in confirmed paths.
    uid_pool = [tid for tid in tracker_ids if trackers[tid].behavior in _UID_BEHAVIORS]
    for page_offset, (tid, _) in enumerate(public_pages):
        # A tracker routing its own campaign at its own page never crosses a
        # registered-domain boundary, so pick a different smuggler.
        pool = [other for other in uid_pool if other != tid]
        if not pool:
            break
        host_site = rng.randrange(config.n_sites)
        campaign = rng.choice(pool)
        target_index = len(site_domains) + page_offset
        site = sites[host_site]
        extra = SiteElement(
            element_id=f"s{host_site:03d}mp{page_offset}",
            kind=ElementKind.ANCHOR,
            target=target_index,
            campaign=campaign,
            is_dynamic=False,
        )
        sites[host_site] = SiteSpec(
            index=site.index,
            domain=site.domain,
            elements=site.elements + (extra,),
            is_tracker_page=site.is_tracker_page,
        )

    fingerprinters = sorted(
        {
            site.domain
            for site in sites
            for e in site.elements
            if e.campaign is not None
            and trackers[e.campaign].behavior is TrackerBehavior.FINGERPRINT_UID
        }
    )

    return World(
        config=config,
        campaign_id=campaign_id,
        sites=tuple(sites),
        trackers=trackers,
        n_regular_sites=len(site_domains),
        fingerprinter_domains=tuple(fingerprinters),
    )


# ---------------------------------------------------------------------------
# Ground truth


@dataclass(frozen=True)
class TruthToken:
    walk_id: str
    step_index: int
    name: str
    source: str
    context_domain: str
    values: Mapping[str, str]  # crawler id -> value
    behavior: str
    tracker_id: str
    expected_verdict: str
    expected_filter_reason: str | None
    expected_certainty: str | None
    expected_segment: str | None
    truth_is_uid: bool
    multi_profile: bool

    def key(self) -> tuple:
        return (self.walk_id, str(self.step_index), self.name, self.source, self.context_domain)

    def to_dict(self) -> dict:
        return {
            "walk_id": self.walk_id,
            "step_index": self.step_index,
            "name": self.name,
            "source": self.source,
            "context_domain": self.context_domain,
            "values": dict(sorted(self.values.items())),
            "behavior": self.behavior,
            "tracker_id": self.tracker_id,
            "expected_verdict": self.expected_verdict,
            "expected_filter_reason": self.expected_filter_reason,
            "expected_certainty": self.expected_certainty,
            "expected_segment": self.expected_segment,
            "truth_is_uid": self.truth_is_uid,
            "multi_profile": self.multi_profile,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TruthToken":
        return cls(
            walk_id=raw["walk_id"],
            step_index=int(raw["step_index"]),
            name=raw["name"],
            source=raw["source"],
            context_domain=raw["context_domain"],
            values=dict(raw["values"]),
            behavior=raw["behavior"],
            tracker_id=raw["tracker_id"],
            expected_verdict=raw["expected_verdict"],
            expected_filter_reason=raw.get("expected_filter_reason"),
            expected_certainty=raw.get("expected_certainty"),
            expected_segment=raw.get("expected_segment"),
            truth_is_uid=bool(raw["truth_is_uid"]),
            multi_profile=bool(raw["multi_profile"]),
        )


@dataclass
class GroundTruth:
    campaign_id: str
    tokens: list[TruthToken]
    redirector_labels: dict[str, str]
    fingerprinter_domains: list[str]
    uid_param_names: list[str]
    unique_url_paths: int
    unique_url_paths_with_smuggling: int
    unique_domain_paths_with_smuggling: int
    leaks: list[dict]

    def to_json(self) -> str:
        payload = {
            "campaign_id": self.campaign_id,
            "tokens": [t.to_dict() for t in self.tokens],
            "redirector_labels": dict(sorted(self.redirector_labels.items())),
            "fingerprinter_domains": sorted(self.fingerprinter_domains),
            "uid_param_names": sorted(self.uid_param_names),
            "unique_url_paths": self.unique_url_paths,
            "unique_url_paths_with_smuggling": self.unique_url_paths_with_smuggling,
            "unique_domain_paths_with_smuggling": self.unique_domain_paths_with_smuggling,
            "leaks": sorted(self.leaks, key=lambda d: (d["value"], d["domain"], d["mode"])),
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        raw = json.loads(text)
        return cls(
            campaign_id=raw["campaign_id"],
            tokens=[TruthToken.from_dict(t) for t in raw["tokens"]],
            redirector_labels=dict(raw["redirector_labels"]),
            fingerprinter_domains=list(raw["fingerprinter_domains"]),
            uid_param_names=list(raw["uid_param_names"]),
            unique_url_paths=int(raw["unique_url_paths"]),
            unique_url_paths_with_smuggling=int(raw["unique_url_paths_with_smuggling"]),
            unique_domain_paths_with_smuggling=int(raw["unique_domain_paths_with_smuggling"]),
            leaks=list(raw["leaks"]),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "GroundTruth":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Walk execution


def _canonical_profile(crawler: CrawlerId) -> str:
    if crawler in (CrawlerId.SAFARI1, CrawlerId.SAFARI1R):
        return "profile-a"
    return "profile-b" if crawler is CrawlerId.SAFARI2 else "profile-c"


def _token_value(
    world: World,
    tracker: TrackerSpec,
    crawler: CrawlerId,
    walk: int,
    visit_ordinal: int,
) -> str:
    seed = world.config.seed
    profile = _canonical_profile(crawler)
    behavior = tracker.behavior
    if behavior in _UID_BEHAVIORS:
        return _digest(seed, "uid", tracker.tracker_id, profile, walk)
    if behavior is TrackerBehavior.FINGERPRINT_UID:
        return _digest(seed, "fp", tracker.tracker_id, walk)
    if behavior is TrackerBehavior.CONSTANT_TOKEN:
        return _digest(seed, "const", tracker.tracker_id)
    if behavior is TrackerBehavior.PER_VISIT_SESSION_ID:
        return _digest(seed, "sess", tracker.tracker_id, profile, walk, visit_ordinal)
    if behavior is TrackerBehavior.TIMESTAMP_TOKEN:
        low, high = 978307200, 2051222400
        span = high - low
        offset = int(_digest(seed, "ts", tracker.tracker_id, profile, walk), 16) % span
        return str(low + offset)
    raise SimulationError(f"behavior {behavior} carries no token")


def _chain_urls(
    tracker: TrackerSpec | None,
    dest_domain: str,
    step: int,
    value: str | None,
) -> list[str]:
    """Navigation chain: redirector hops then the destination URL."""
    chain: list[str] = []
    if tracker is None:
        return [f"https://{dest_domain}/l{step}"]
    decorated = set(tracker.decorated_hops())
    for hop_index, host in enumerate(tracker.redirector_fqdns, start=1):
        url = f"https://{host}/r"
        if hop_index in decorated and value is not None:
            url += f"?{tracker.param_name}={value}"
        chain.append(url)
    dest_hop = tracker.n_redirectors + 1
    dest_url = f"https://{dest_domain}/l{step}"
    if dest_hop in decorated and value is not None:
        dest_url += f"?{tracker.param_name}={value}"
    chain.append(dest_url)
    return chain


def _expected_static_certainty(members: Sequence[CrawlerId], identical_pair: bool) -> str:
    others = [c for c in members if c not in (CrawlerId.SAFARI1, CrawlerId.SAFARI1R)]
    has_pair = (
        CrawlerId.SAFARI1 in members and CrawlerId.SAFARI1R in members and identical_pair
    )
    if has_pair and others:
        return "TwoIdenticalPlusDifferent"
    if has_pair:
        return "TwoIdenticalOnly"
    profiles = {_canonical_profile(c) for c in members}
    if len(profiles) >= 2:
        return "DifferentProfilesOnly"
    return "OneProfileOnly"


def _path_key(page_url: str, chain: Sequence[str]) -> tuple[str, ...]:
    hops = [normalize_url(page_url)]
    for url in chain:
        normalized = normalize_url(url)
        if normalized != hops[-1]:
            hops.append(normalized)
    if len(hops) == 1:
        hops.append(normalize_url(chain[-1]))
    return tuple(hops)


def _element_descriptor(
    element: SiteElement, dest_domain: str, step: int, crawler_index: int
) -> ElementDescriptor:
    y_shift = 37.0 * crawler_index  # dynamic layout renders at different heights
    if element.kind is ElementKind.ANCHOR:
        return ElementDescriptor(
            kind=ElementKind.ANCHOR,
            property_names=frozenset({"href", "id", "class"}),
            bounding_box=(40.0, 120.0 + y_shift, 240.0, 32.0),
            xpath=f"/html/body/div[1]/a[{element.element_id}]",
            href=f"https://{dest_domain}/l{step}",
        )
    return ElementDescriptor(
        kind=ElementKind.IFRAME,
        property_names=frozenset({"src", "width", "height"}),
        bounding_box=(10.0, 300.0 + y_shift, 300.0, 250.0),
        xpath=f"/html/body/div[2]/iframe[{element.element_id}]",
        href=None,
    )


def run_walks(
    world: World, fleet: Mapping[CrawlerId, CrawlerIdentity] | None = None
) -> tuple[CrawlRecordSet, GroundTruth]:
    """Execute every seeded walk and assemble records plus ground truth.

    Browser state is fresh at the start of each walk and retained across its
    steps. The repeat crawler replays Safari1's choices and ad resolutions
    immediately after it; dynamic ad slots resolve independently per primary
    crawler visit. A landing disagreement among the three primaries ends the
    walk, with the final step's records still emitted.
    """
    config = world.config
    fleet = dict(fleet) if fleet is not None else default_fleet()
    rules = world.suffix_rules()

    records: list[StepRecord] = []
    truth_tokens: list[TruthToken] = []
    truth_leaks: list[dict] = []
    confirmed_paths: list[tuple[tuple[str, ...], tuple[str, ...]]] = []  # (fqdns, domains)
    all_path_keys: set[tuple[str, ...]] = set()
    smuggling_path_keys: set[tuple[str, ...]] = set()
    smuggling_domain_keys: set[tuple[str, ...]] = set()
    uid_param_names: set[str] = set()

    ad_pool = [
        tid for tid, t in world.trackers.items() if t.behavior in AD_BEHAVIORS
    ]

    for walk in range(config.walks):
        walk_id = f"{world.campaign_id}-w{walk:04d}"
        rng = random.Random(int(_digest(config.seed, "walk", walk, n=16), 16))
        cookie_jar: dict[tuple[CrawlerId, str], dict[str, Cookie]] = {}
        storage_jar: dict[tuple[CrawlerId, str], dict[str, LocalStorageItem]] = {}
        visit_counter = 0

        site_index = rng.randrange(world.n_regular_sites)
        page_urls = {
            crawler: f"https://{world.sites[site_index].domain}/" for crawler in _CRAWL_ORDER
        }
        timestamp = _WALK_EPOCH_MS + walk * 3_600_000

        for step in range(config.steps_per_walk):
            site = world.sites[site_index]
            if not site.elements:
                break
            iframes = [e for e in site.elements if e.kind is ElementKind.IFRAME]
            anchors = [e for e in site.elements if e.kind is ElementKind.ANCHOR]
            if iframes and (not anchors or rng.random() < config.iframe_preference):
                element = rng.choice(iframes)
            else:
                element = rng.choice(anchors)

            resolutions: dict[CrawlerId, tuple[str | None, int]] = {}
            for crawler in _PRIMARIES:
                rotated = element.is_dynamic and rng.random() < config.dynamic_ad_probability
                if rotated and ad_pool:
                    tracker_id = rng.choice(ad_pool)
                    target = rng.randrange(world.n_regular_sites)
                    while target == site_index:
                        target = (target + 1) % world.n_regular_sites
                    resolutions[crawler] = (tracker_id, target)
                else:
                    resolutions[crawler] = (element.campaign, element.target)
            resolutions[CrawlerId.SAFARI1R] = resolutions[CrawlerId.SAFARI1]

            site_domain = registered_domain(site.domain, rules)
            instances: dict[str, dict] = {}
            landings: dict[CrawlerId, str] = {}
            next_urls: dict[CrawlerId, str] = {}

            for crawler_index, crawler in enumerate(_CRAWL_ORDER):
                tracker_id, target = resolutions[crawler]
                tracker = world.trackers.get(tracker_id) if tracker_id else None
                dest_site = world.sites[target]
                visit_counter += 1

                value: str | None = None
                if tracker is not None and tracker.behavior is not TrackerBehavior.BENIGN_REDIRECT:
                    value = _token_value(world, tracker, crawler, walk, visit_counter)

                # First-party storage the tracker writes on the originator.
                # Wrapped trackers nest the id in a JSON blob; the pipeline
                # must dig it out and the group key still uses the innermost
                # pair's name.
                jar_key = (crawler, site_domain)
                cookies = cookie_jar.setdefault(jar_key, {})
                stored = storage_jar.setdefault(jar_key, {})
                if tracker is not None and tracker.uses_storage and value is not None:
                    expiry_days = 1 + int(_digest(config.seed, "exp", tracker.tracker_id, walk), 16) % 400
                    stored_name, stored_value = tracker.param_name, value
                    if tracker.json_wrapped:
                        stored_name = f"{tracker.param_name}_state"
                        stored_value = json.dumps(
                            {tracker.param_name: value, "v": 2}, sort_keys=True
                        )
                    if tracker.storage_kind == "cookie":
                        cookies[stored_name] = Cookie(
                            name=stored_name,
                            value=stored_value,
                            domain=site_domain,
                            expiry=timestamp // 1000 + expiry_days * 86400,
                        )
                    else:
                        stored[stored_name] = LocalStorageItem(
                            origin=f"https://{site.domain}",
                            name=stored_name,
                            value=stored_value,
                        )

                # Per-visit site noise: never rides a navigation URL.
                cookies["pvid"] = Cookie(
                    name="pvid",
                    value=_digest(config.seed, "noise", site.index, crawler.value, walk, step),
                    domain=site_domain,
                    expiry=timestamp // 1000 + 3600,
                )

                chain = _chain_urls(tracker, dest_site.domain, step, value)
                landing = chain[-1].split("/")[2]
                landings[crawler] = landing
                # Sites canonicalize their landing URL, so the next step's
                # originator page carries no leftover decoration.
                next_urls[crawler] = chain[-1].split("?")[0]

                requests = [
                    WebRequest(url=url, is_navigation=True, timestamp=timestamp + 10 * i)
                    for i, url in enumerate(chain)
                ]
                requests.append(
                    WebRequest(
                        url="https://cdn.assets.test/app.js?v=1.4.2",
                        is_navigation=False,
                        timestamp=timestamp + 200,
                        frame_url=chain[-1],
                    )
                )
                if (
                    tracker is not None
                    and tracker.leak_fqdn is not None
                    and value is not None
                ):
                    requests.append(
                        WebRequest(
                            url=f"https://{tracker.leak_fqdn}/beacon?d={value}",
                            is_navigation=False,
                            timestamp=timestamp + 300,
                            frame_url=chain[-1],
                        )
                    )
                    requests.append(
                        WebRequest(
                            url=f"https://{tracker.leak_fqdn}/collect?ref={quote(chain[-1], safe='')}",
                            is_navigation=False,
                            timestamp=timestamp + 310,
                            frame_url=chain[-1],
                        )
                    )

                # The destination may store the UID under its own domain,
                # in the same shape the originator write used.
                if (
                    tracker is not None
                    and value is not None
                    and tracker.plan is CarryPlan.FULL
                ):
                    dest_domain = registered_domain(dest_site.domain, rules)
                    if tracker.storage_kind == "cookie":
                        cookie_jar.setdefault((crawler, dest_domain), {})[
                            stored_name
                        ] = Cookie(
                            name=stored_name,
                            value=stored_value,
                            domain=dest_domain,
                            expiry=timestamp // 1000 + 86400,
                        )
                    else:
                        storage_jar.setdefault((crawler, dest_domain), {})[
                            stored_name
                        ] = LocalStorageItem(
                            origin=f"https://{dest_site.domain}",
                            name=stored_name,
                            value=stored_value,
                        )

                records.append(
                    StepRecord(
                        walk_id=walk_id,
                        step_index=step,
                        crawler=fleet[crawler],
                        page_url=page_urls[crawler],
                        cookies=tuple(cookies.values()),
                        local_storage=tuple(stored.values()),
                        requests=tuple(requests),
                        navigation_chain=tuple(chain),
                        clicked_element=_element_descriptor(
                            element, dest_site.domain, step, crawler_index
                        ),
                        landing_fqdn=landing,
                    )
                )

                path_key = _path_key(page_urls[crawler], chain)
                all_path_keys.add(path_key)

                if tracker is not None and tracker.behavior is not TrackerBehavior.BENIGN_REDIRECT:
                    instance = instances.setdefault(
                        tracker.tracker_id,
                        {
                            "tracker": tracker,
                            "members": [],
                            "values": {},
                            "paths": {},
                            "chains": {},
                        },
                    )
                    instance["members"].append(crawler)
                    instance["values"][crawler.value] = value
                    instance["paths"][crawler] = path_key
                    instance["chains"][crawler] = (page_urls[crawler], tuple(chain))

            for tracker_id, instance in instances.items():
                tracker: TrackerSpec = instance["tracker"]
                members: list[CrawlerId] = instance["members"]
                values: dict[str, str] = instance["values"]
                behavior = tracker.behavior

                if tracker.uses_storage:
                    source = "Cookie" if tracker.storage_kind == "cookie" else "LocalStorage"
                    context_domain = site_domain
                else:
                    source = "QueryParam"
                    context_domain = tracker.domain

                s1 = values.get(CrawlerId.SAFARI1.value)
                s1r = values.get(CrawlerId.SAFARI1R.value)
                identical_pair = s1 is not None and s1 == s1r
                profiles = {_canonical_profile(c) for c in members}
                multi_profile = len(profiles) >= 2

                expected_filter = None
                if behavior in _UID_BEHAVIORS:
                    expected = "Uid" if len(members) >= 2 else "NeedsReview"
                    truth_is_uid = True
                elif behavior is TrackerBehavior.PER_VISIT_SESSION_ID:
                    expected = "SessionId"
                    truth_is_uid = False
                elif behavior is TrackerBehavior.CONSTANT_TOKEN:
                    expected = "SharedAcrossUsers"
                    truth_is_uid = False
                elif behavior is TrackerBehavior.TIMESTAMP_TOKEN:
                    expected = "FilteredNonUid"
                    expected_filter = "Timestamp"
                    truth_is_uid = False
                else:  # FINGERPRINT_UID
                    expected = "SharedAcrossUsers" if multi_profile else "NeedsReview"
                    truth_is_uid = True

                expected_certainty = None
                if expected in ("Uid", "NeedsReview"):
                    expected_certainty = _expected_static_certainty(members, identical_pair)
                segment = tracker.expected_segment()

                truth_tokens.append(
                    TruthToken(
                        walk_id=walk_id,
                        step_index=step,
                        name=tracker.param_name,
                        source=source,
                        context_domain=context_domain,
                        values=dict(values),
                        behavior=behavior.value,
                        tracker_id=tracker.tracker_id,
                        expected_verdict=expected,
                        expected_filter_reason=expected_filter,
                        expected_certainty=expected_certainty,
                        expected_segment=segment.value if segment else None,
                        truth_is_uid=truth_is_uid,
                        multi_profile=multi_profile,
                    )
                )

                if expected == "Uid":
                    uid_param_names.add(tracker.param_name)
                    for crawler in members:
                        smuggling_path_keys.add(instance["paths"][crawler])
                        page_url, chain = instance["chains"][crawler]
                        fqdns = tuple(u.split("/")[2] for u in (page_url, *chain))
                        domains = tuple(registered_domain(h, rules) for h in fqdns)
                        smuggling_domain_keys.add(domains)
                        confirmed_paths.append((fqdns, domains))
                    if tracker.leak_fqdn is not None:
                        leak_domain = registered_domain(tracker.leak_fqdn, rules)
                        for crawler in members:
                            leak_value = values[crawler.value]
                            for mode in ("DirectParam", "FullUrlEmbed"):
                                truth_leaks.append(
                                    {
                                        "value": leak_value,
                                        "domain": leak_domain,
                                        "mode": mode,
                                    }
                                )

            timestamp += 30_000
            primary_landings = {landings[c] for c in _PRIMARIES}
            if len(primary_landings) > 1:
                break  # walk terminated; this step's records are retained
            site_index = resolutions[CrawlerId.SAFARI1][1]
            page_urls = dict(next_urls)

    labels = _label_redirectors(confirmed_paths)
    unique_leaks = {(d["value"], d["domain"], d["mode"]) for d in truth_leaks}

    truth = GroundTruth(
        campaign_id=world.campaign_id,
        tokens=truth_tokens,
        redirector_labels=labels,
        fingerprinter_domains=list(world.fingerprinter_domains),
        uid_param_names=sorted(uid_param_names),
        unique_url_paths=len(all_path_keys),
        unique_url_paths_with_smuggling=len(smuggling_path_keys & all_path_keys),
        unique_domain_paths_with_smuggling=len(smuggling_domain_keys),
        leaks=[
            {"value": v, "domain": d, "mode": m} for v, d, m in sorted(unique_leaks)
        ],
    )
    return CrawlRecordSet(steps=tuple(records)), truth


def _label_redirectors(
    confirmed_paths: list[tuple[tuple[str, ...], tuple[str, ...]]]
) -> dict[str, str]:
    """Dedicated-or-multipurpose labels derived directly from emitted paths."""
    unique: dict[tuple[str, ...], tuple[str, ...]] = {}
    for fqdns, domains in confirmed_paths:
        unique.setdefault(domains, fqdns)

    endpoints: set[str] = set()
    for domains, fqdns in unique.items():
        endpoints.add(fqdns[0])
        endpoints.add(fqdns[-1])

    originators: dict[str, set[str]] = {}
    destinations: dict[str, set[str]] = {}
    for domains, fqdns in unique.items():
        for host in fqdns[1:-1]:
            originators.setdefault(host, set()).add(domains[0])
            destinations.setdefault(host, set()).add(domains[-1])

    labels = {}
    for host in originators:
        dedicated = (
            len(originators[host]) >= 2
            and len(destinations[host]) >= 2
            and host not in endpoints
        )
        labels[host] = "Dedicated" if dedicated else "MultiPurpose"
    return labels


# ---------------------------------------------------------------------------
# Oracle comparison


@dataclass
class ConfusionReport:
    campaign_id: str
    matrix: dict[str, dict[str, int]]
    uid_true_positives: int
    uid_false_positives: int
    uid_false_negatives: int
    precision: float
    recall: float
    disagreements: list[dict]

    def to_dict(self) -> dict:
        return {
            "campaign_id": self.campaign_id,
            "matrix": self.matrix,
            "uid_true_positives": self.uid_true_positives,
            "uid_false_positives": self.uid_false_positives,
            "uid_false_negatives": self.uid_false_negatives,
            "precision": self.precision,
            "recall": self.recall,
            "disagreements": self.disagreements,
        }


def oracle_compare(
    group_outcomes: Mapping[tuple, object],
    truth: GroundTruth,
    campaign_id: str,
    review_threshold: float = 0.5,
) -> ConfusionReport:
    """Confusion matrix and Uid precision/recall against ground truth.

    A pipeline group with verdict NeedsReview counts as Uid when its review
    score is below the threshold. Pipeline groups that match no truth entry
    count as false positives when they claim a Uid.
    """
    if campaign_id != truth.campaign_id:
        raise SimulationError(
            f"campaign mismatch: records {campaign_id!r} vs truth {truth.campaign_id!r}"
        )

    def effective(outcome) -> str:
        verdict = outcome.verdict.value if hasattr(outcome.verdict, "value") else str(outcome.verdict)
        if (
            verdict == "NeedsReview"
            and outcome.review_score is not None
            and outcome.review_score < review_threshold
        ):
            return "Uid"
        return verdict

    matrix: dict[str, dict[str, int]] = {}
    disagreements: list[dict] = []
    tp = fp = fn = 0

    truth_keys = set()
    for token in truth.tokens:
        truth_keys.add(token.key())
        outcome = group_outcomes.get(token.key())
        predicted = effective(outcome) if outcome is not None else "NotDetected"
        truth_effective = (
            "Uid"
            if token.expected_verdict == "NeedsReview" and token.truth_is_uid
            else token.expected_verdict
        )
        matrix.setdefault(truth_effective, {}).setdefault(predicted, 0)
        matrix[truth_effective][predicted] += 1

        predicted_uid = predicted == "Uid"
        if token.truth_is_uid and predicted_uid:
            tp += 1
        elif token.truth_is_uid and not predicted_uid:
            fn += 1
            disagreements.append(
                {"key": list(token.key()), "truth": "Uid", "predicted": predicted}
            )
        elif not token.truth_is_uid and predicted_uid:
            fp += 1
            disagreements.append(
                {"key": list(token.key()), "truth": token.expected_verdict, "predicted": predicted}
            )
        elif predicted != token.expected_verdict:
            disagreements.append(
                {"key": list(token.key()), "truth": token.expected_verdict, "predicted": predicted}
            )

    for key, outcome in group_outcomes.items():
        if key in truth_keys:
            continue
        predicted = effective(outcome)
        matrix.setdefault("NotInTruth", {}).setdefault(predicted, 0)
        matrix["NotInTruth"][predicted] += 1
        if predicted == "Uid":
            fp += 1
            disagreements.append({"key": list(key), "truth": "NotInTruth", "predicted": "Uid"})

    precision = tp / (tp + fp) if (tp + fp) else 1.0
    recall = tp / (tp + fn) if (tp + fn) else 1.0
    return ConfusionReport(
        campaign_id=campaign_id,
        matrix=matrix,
        uid_true_positives=tp,
        uid_false_positives=fp,
        uid_false_negatives=fn,
        precision=precision,
        recall=recall,
        disagreements=disagreements,
    )


def write_suffix_rules(path: str | Path) -> None:
    Path(path).write_text(
        "// synthetic namespace for simulator worlds\n"
        + "\n".join(SIMULATOR_SUFFIX_RULES)
        + "\n",
        encoding="utf-8",
    )
