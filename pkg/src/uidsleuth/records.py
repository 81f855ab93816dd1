"""Crawl-record data model shared by the pipeline, controller and simulator.

The on-disk contract is JSON Lines: one StepRecord object per line, fields as
named here plus a ``schema_version`` integer (currently 1), UTF-8 with LF line
endings. The simulator produces this format and the pipeline consumes it; a
real crawler would target the same contract.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .domains import DomainError, fqdn

SCHEMA_VERSION = 1


class RecordFormatError(ValueError):
    """A record container or line that cannot be parsed."""


class CrawlerId(str, Enum):
    SAFARI1 = "Safari1"
    SAFARI2 = "Safari2"
    CHROME3 = "Chrome3"
    SAFARI1R = "Safari1R"


# The three crawlers that submit elements and vote on landings; the repeat
# crawler only replays.
PRIMARY_CRAWLERS = (CrawlerId.SAFARI1, CrawlerId.SAFARI2, CrawlerId.CHROME3)


@dataclass(frozen=True)
class CrawlerIdentity:
    """A crawler and the simulated-user profile it carries.

    Safari1 and Safari1R simulate the same user and must share a profile_id;
    every other pair has distinct profiles.
    """

    crawler_id: CrawlerId
    profile_id: str


def default_fleet(prefix: str = "profile") -> dict[CrawlerId, CrawlerIdentity]:
    return {
        CrawlerId.SAFARI1: CrawlerIdentity(CrawlerId.SAFARI1, f"{prefix}-a"),
        CrawlerId.SAFARI2: CrawlerIdentity(CrawlerId.SAFARI2, f"{prefix}-b"),
        CrawlerId.CHROME3: CrawlerIdentity(CrawlerId.CHROME3, f"{prefix}-c"),
        CrawlerId.SAFARI1R: CrawlerIdentity(CrawlerId.SAFARI1R, f"{prefix}-a"),
    }


@dataclass(frozen=True)
class Cookie:
    name: str
    value: str
    domain: str
    expiry: int | None = None  # epoch seconds; never consulted by classification


@dataclass(frozen=True)
class LocalStorageItem:
    origin: str
    name: str
    value: str


@dataclass(frozen=True)
class WebRequest:
    url: str
    is_navigation: bool
    timestamp: int  # milliseconds since epoch
    frame_url: str | None = None


class ElementKind(str, Enum):
    ANCHOR = "Anchor"
    IFRAME = "Iframe"


@dataclass(frozen=True)
class ElementDescriptor:
    """A clickable page element as reported to the sync controller."""

    kind: ElementKind
    property_names: frozenset[str]
    bounding_box: tuple[float, float, float, float]  # x, y, width, height
    xpath: str
    href: str | None = None  # anchors only

    def to_dict(self) -> dict:
        out: dict = {
            "kind": self.kind.value,
            "property_names": sorted(self.property_names),
            "bounding_box": list(self.bounding_box),
            "xpath": self.xpath,
        }
        if self.href is not None:
            out["href"] = self.href
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ElementDescriptor":
        box = raw["bounding_box"]
        if len(box) != 4:
            raise RecordFormatError(f"bounding_box must have 4 entries, got {box!r}")
        return cls(
            kind=ElementKind(raw["kind"]),
            property_names=frozenset(raw["property_names"]),
            bounding_box=tuple(float(v) for v in box),
            xpath=raw["xpath"],
            href=raw.get("href"),
        )


@dataclass(frozen=True)
class StepRecord:
    """Everything one crawler captured for one step of one walk."""

    walk_id: str
    step_index: int
    crawler: CrawlerIdentity
    page_url: str
    cookies: tuple[Cookie, ...] = ()
    local_storage: tuple[LocalStorageItem, ...] = ()
    requests: tuple[WebRequest, ...] = ()
    navigation_chain: tuple[str, ...] = ()
    clicked_element: ElementDescriptor | None = None
    landing_fqdn: str = ""

    def to_dict(self) -> dict:
        out: dict = {
            "schema_version": SCHEMA_VERSION,
            "walk_id": self.walk_id,
            "step_index": self.step_index,
            "crawler": {
                "crawler_id": self.crawler.crawler_id.value,
                "profile_id": self.crawler.profile_id,
            },
            "page_url": self.page_url,
            "cookies": [
                {"name": c.name, "value": c.value, "domain": c.domain}
                | ({"expiry": c.expiry} if c.expiry is not None else {})
                for c in self.cookies
            ],
            "local_storage": [
                {"origin": s.origin, "name": s.name, "value": s.value}
                for s in self.local_storage
            ],
            "requests": [
                {
                    "url": r.url,
                    "is_navigation": r.is_navigation,
                    "timestamp": r.timestamp,
                }
                | ({"frame_url": r.frame_url} if r.frame_url is not None else {})
                for r in self.requests
            ],
            "navigation_chain": list(self.navigation_chain),
            "landing_fqdn": self.landing_fqdn,
        }
        if self.clicked_element is not None:
            out["clicked_element"] = self.clicked_element.to_dict()
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "StepRecord":
        version = raw.get("schema_version")
        if version != SCHEMA_VERSION:
            raise RecordFormatError(f"unsupported schema_version {version!r}")
        try:
            crawler = CrawlerIdentity(
                crawler_id=CrawlerId(raw["crawler"]["crawler_id"]),
                profile_id=raw["crawler"]["profile_id"],
            )
            return cls(
                walk_id=raw["walk_id"],
                step_index=int(raw["step_index"]),
                crawler=crawler,
                page_url=raw["page_url"],
                cookies=tuple(
                    Cookie(c["name"], c["value"], c["domain"], c.get("expiry"))
                    for c in raw.get("cookies", [])
                ),
                local_storage=tuple(
                    LocalStorageItem(s["origin"], s["name"], s["value"])
                    for s in raw.get("local_storage", [])
                ),
                requests=tuple(
                    WebRequest(
                        url=r["url"],
                        is_navigation=bool(r["is_navigation"]),
                        timestamp=int(r["timestamp"]),
                        frame_url=r.get("frame_url"),
                    )
                    for r in raw.get("requests", [])
                ),
                navigation_chain=tuple(raw.get("navigation_chain", [])),
                clicked_element=(
                    ElementDescriptor.from_dict(raw["clicked_element"])
                    if raw.get("clicked_element") is not None
                    else None
                ),
                landing_fqdn=raw.get("landing_fqdn", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, RecordFormatError):
                raise
            raise RecordFormatError(f"bad step record: {exc}") from exc


@dataclass(frozen=True)
class ValidationIssue:
    kind: str
    walk_id: str
    step_index: int | None
    detail: str


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, kind: str, walk_id: str, step_index: int | None, detail: str) -> None:
        self.issues.append(ValidationIssue(kind, walk_id, step_index, detail))

    def __str__(self) -> str:
        if self.ok:
            return "record set valid"
        return "\n".join(
            f"{i.kind} walk={i.walk_id} step={i.step_index}: {i.detail}"
            for i in self.issues
        )


@dataclass
class CrawlRecordSet:
    """One crawl campaign: walks x steps x crawlers."""

    steps: tuple[StepRecord, ...]

    def __iter__(self) -> Iterator[StepRecord]:
        return iter(self.steps)

    def __len__(self) -> int:
        return len(self.steps)

    def by_walk_step(self) -> dict[tuple[str, int], dict[CrawlerId, StepRecord]]:
        grouped: dict[tuple[str, int], dict[CrawlerId, StepRecord]] = {}
        for record in self.steps:
            grouped.setdefault((record.walk_id, record.step_index), {})[
                record.crawler.crawler_id
            ] = record
        return grouped

    def walk_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for record in self.steps:
            seen.setdefault(record.walk_id, None)
        return list(seen)

    def campaign_id(self) -> str | None:
        """Campaign identifier encoded as the walk-id prefix, when present."""
        for record in self.steps:
            if "-w" in record.walk_id:
                return record.walk_id.rsplit("-w", 1)[0]
        return None

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for record in self.steps:
                fh.write(json.dumps(record.to_dict(), sort_keys=True))
                fh.write("\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "CrawlRecordSet":
        records = []
        try:
            with open(path, "r", encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        records.append(StepRecord.from_dict(json.loads(line)))
                    except (json.JSONDecodeError, RecordFormatError) as exc:
                        raise RecordFormatError(f"line {lineno}: {exc}") from exc
        except OSError as exc:
            raise RecordFormatError(f"cannot read {path}: {exc}") from exc
        return cls(steps=tuple(records))


def _is_absolute(url: str) -> bool:
    try:
        fqdn(url)
        return True
    except DomainError:
        return False


def validate_record_set(record_set: CrawlRecordSet | Iterable[StepRecord]) -> ValidationReport:
    """Check schema invariants without mutating the input.

    Flags steps where not all four crawlers reported (the set is "aligned" at
    a (walk, step) only when they did), non-monotonic step indices within a
    (walk, crawler), unparsable URLs, landing/chain disagreement, and profile
    identity violations.
    """
    steps = tuple(record_set)
    report = ValidationReport()

    profiles: dict[CrawlerId, set[str]] = {}
    last_index: dict[tuple[str, CrawlerId], int] = {}
    grouped: dict[tuple[str, int], set[CrawlerId]] = {}

    for record in steps:
        cid = record.crawler.crawler_id
        profiles.setdefault(cid, set()).add(record.crawler.profile_id)
        grouped.setdefault((record.walk_id, record.step_index), set()).add(cid)

        key = (record.walk_id, cid)
        if key in last_index and record.step_index <= last_index[key]:
            report.add(
                "non-monotonic-step",
                record.walk_id,
                record.step_index,
                f"{cid.value} step {record.step_index} after {last_index[key]}",
            )
        last_index[key] = record.step_index

        if record.step_index < 0:
            report.add("bad-step-index", record.walk_id, record.step_index, "negative step index")
        if not _is_absolute(record.page_url):
            report.add("unparsable-url", record.walk_id, record.step_index, f"page_url {record.page_url!r}")
        for url in record.navigation_chain:
            if not _is_absolute(url):
                report.add("unparsable-url", record.walk_id, record.step_index, f"chain hop {url!r}")
        for request in record.requests:
            if not _is_absolute(request.url):
                report.add("unparsable-url", record.walk_id, record.step_index, f"request {request.url!r}")
        if record.navigation_chain and _is_absolute(record.navigation_chain[-1]):
            landing = fqdn(record.navigation_chain[-1])
            if landing != record.landing_fqdn:
                report.add(
                    "landing-mismatch",
                    record.walk_id,
                    record.step_index,
                    f"landing_fqdn {record.landing_fqdn!r} != chain end {landing!r}",
                )

    for (walk_id, step_index), present in sorted(grouped.items()):
        missing = [c.value for c in CrawlerId if c not in present]
        if missing:
            report.add(
                "unaligned",
                walk_id,
                step_index,
                "missing crawlers: " + ", ".join(missing),
            )

    shared = profiles.get(CrawlerId.SAFARI1, set()) | profiles.get(CrawlerId.SAFARI1R, set())
    if (
        CrawlerId.SAFARI1 in profiles
        and CrawlerId.SAFARI1R in profiles
        and len(shared) > 1
    ):
        report.add("profile-invariant", "*", None, "Safari1 and Safari1R use different profiles")
    for a in (CrawlerId.SAFARI2, CrawlerId.CHROME3):
        if profiles.get(a, set()) & shared:
            report.add("profile-invariant", "*", None, f"{a.value} shares a profile with Safari1")
    if profiles.get(CrawlerId.SAFARI2, set()) & profiles.get(CrawlerId.CHROME3, set()):
        report.add("profile-invariant", "*", None, "Safari2 and Chrome3 share a profile")

    return report
