"""The UID decision procedure.

Candidates are aligned across the four crawlers, then judged: values shared
by two simulated users cannot be UIDs, values that change when the same user
returns are session IDs, and the survivors pass programmatic filters. What
remains is a UID when seen on two or more crawlers, and a review-queue item
when confined to one. Two values are ever "the same" only when byte-equal;
no similarity metric and no cookie-lifetime rule is applied anywhere.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .records import CrawlerId
from .tokens import Token, TokenSource
from .transfers import CandidateCase, TransferSegment
from .wordlike import score_word_likeness

DEFAULT_MIN_TOKEN_LENGTH = 8

# Plausibility window for epoch timestamps: 2001-01-01 .. 2035-01-01,
# in seconds, and the same window in milliseconds.
TIMESTAMP_WINDOW_SECONDS = (978307200, 2051222400)

_DATE_PATTERNS = (
    re.compile(r"^\d{4}-\d{2}-\d{2}([T ]\d{2}:\d{2}(:\d{2}(\.\d+)?)?(Z|[+-]\d{2}:?\d{2})?)?$"),
    re.compile(r"^\d{1,2}[/.]\d{1,2}[/.]\d{4}$"),
    re.compile(r"^\d{4}[/.]\d{1,2}[/.]\d{1,2}$"),
    re.compile(r"^(19[7-9]\d|20[0-3]\d)(0\d|1[0-2])([0-2]\d|3[01])$"),  # compact YYYYMMDD
)

_URL_SCHEME_RE = re.compile(r"^[a-z][a-z0-9+.-]*://", re.IGNORECASE)


class Verdict(str, Enum):
    UID = "Uid"
    SESSION_ID = "SessionId"
    SHARED_ACROSS_USERS = "SharedAcrossUsers"
    FILTERED_NON_UID = "FilteredNonUid"
    NEEDS_REVIEW = "NeedsReview"


class FilterReason(str, Enum):
    TIMESTAMP = "Timestamp"
    DATE_STRING = "DateString"
    URL_LIKE = "UrlLike"
    TOO_SHORT = "TooShort"
    WORD_LIKE = "WordLike"


@dataclass(frozen=True)
class TokenClass:
    verdict: Verdict
    filter_reason: FilterReason | None = None

    def __post_init__(self) -> None:
        if (self.filter_reason is not None) != (self.verdict is Verdict.FILTERED_NON_UID):
            raise ValueError("filter_reason is set exactly when verdict is FilteredNonUid")


class Certainty(str, Enum):
    TWO_IDENTICAL_PLUS_DIFFERENT = "TwoIdenticalPlusDifferent"
    DIFFERENT_PROFILES_ONLY = "DifferentProfilesOnly"
    TWO_IDENTICAL_ONLY = "TwoIdenticalOnly"
    ONE_PROFILE_ONLY = "OneProfileOnly"


@dataclass(frozen=True)
class GroupKey:
    """Alignment scope: one logical token at one step, in one storage context."""

    name: str
    source: TokenSource
    context_domain: str
    walk_id: str
    step_index: int

    def as_tuple(self) -> tuple[str, str, str, str, str]:
        return (self.walk_id, str(self.step_index), self.name, self.source.value, self.context_domain)


@dataclass
class AlignedGroup:
    """One token name aligned across crawlers, with each crawler's value.

    value_profiles records, per member value, every profile that observed that
    value anywhere in the record set; it carries the cross-name links needed
    by the shared-across-users rule.
    """

    key: GroupKey
    members: dict[CrawlerId, str]
    profiles: dict[CrawlerId, str]
    cases: tuple[CandidateCase, ...] = ()
    value_profiles: dict[str, frozenset[str]] = field(default_factory=dict)

    def profiles_for(self, value: str) -> frozenset[str]:
        linked = self.value_profiles.get(value, frozenset())
        own = frozenset(
            self.profiles[c] for c, v in self.members.items() if v == value
        )
        return linked | own

    def distinct_profile_count(self) -> int:
        return len(set(self.profiles.values()))


@dataclass(frozen=True)
class ClassifiedUid:
    group: AlignedGroup
    token_class: TokenClass
    certainty: Certainty
    segment: TransferSegment | None = None
    review_score: float | None = None

    def effective_uid(self, review_threshold: float = 0.5) -> bool:
        if self.token_class.verdict is Verdict.UID:
            return True
        return (
            self.token_class.verdict is Verdict.NEEDS_REVIEW
            and self.review_score is not None
            and self.review_score < review_threshold
        )


def align_tokens(
    candidates: Iterable[CandidateCase],
    value_profile_index: Mapping[str, frozenset[str]] | None = None,
) -> list[AlignedGroup]:
    """Group candidate cases by (name, source, context domain, walk, step).

    When two crawlers report the same key, the first value per crawler wins;
    the optional index links values observed elsewhere under other names so
    the discard rule keyed on value still sees them.
    """
    groups: dict[GroupKey, AlignedGroup] = {}
    order: list[GroupKey] = []
    for case in candidates:
        key = GroupKey(
            name=case.token.name,
            source=case.token.source,
            context_domain=case.context_domain,
            walk_id=case.walk_id,
            step_index=case.step_index,
        )
        crawler = CrawlerId(case.crawler_id)
        group = groups.get(key)
        if group is None:
            group = AlignedGroup(key=key, members={}, profiles={}, cases=())
            groups[key] = group
            order.append(key)
        if crawler not in group.members:
            group.members[crawler] = case.token.value
            group.profiles[crawler] = canonical_profile(crawler)
        group.cases = group.cases + (case,)

    result = []
    for key in order:
        group = groups[key]
        if value_profile_index is not None:
            group.value_profiles = {
                v: value_profile_index.get(v, frozenset()) for v in set(group.members.values())
            }
        result.append(group)
    return result


def canonical_profile(crawler: CrawlerId) -> str:
    """Canonical profile label per crawler role; Safari1R repeats Safari1's user.

    Classification only needs the profile equivalence classes, so both the
    group members and the record-set-wide value index use these labels rather
    than whatever profile_id strings a crawler emitted.
    """
    if crawler in (CrawlerId.SAFARI1, CrawlerId.SAFARI1R):
        return "profile-a"
    return "profile-b" if crawler is CrawlerId.SAFARI2 else "profile-c"


def _shared_across_profiles(group: AlignedGroup) -> bool:
    for value in set(group.members.values()):
        if len(group.profiles_for(value)) >= 2:
            return True
    return False


def apply_programmatic_filters(
    token: Token, min_length: int = DEFAULT_MIN_TOKEN_LENGTH
) -> TokenClass:
    """Drop values that cannot be UIDs: timestamps, dates, URLs, short strings.

    Cookie expirations are never consulted.
    """
    value = token.value
    if value.isdigit():
        number = int(value)
        low, high = TIMESTAMP_WINDOW_SECONDS
        if low <= number <= high or low * 1000 <= number <= high * 1000:
            return TokenClass(Verdict.FILTERED_NON_UID, FilterReason.TIMESTAMP)
    for pattern in _DATE_PATTERNS:
        if pattern.match(value):
            return TokenClass(Verdict.FILTERED_NON_UID, FilterReason.DATE_STRING)
    if _URL_SCHEME_RE.match(value) and "://" in value and len(value.split("://", 1)[1]) > 0:
        return TokenClass(Verdict.FILTERED_NON_UID, FilterReason.URL_LIKE)
    if len(value) < min_length:
        return TokenClass(Verdict.FILTERED_NON_UID, FilterReason.TOO_SHORT)
    return TokenClass(Verdict.UID)


def _filter_members(group: AlignedGroup, min_length: int) -> TokenClass | None:
    for crawler in sorted(group.members, key=lambda c: c.value):
        token = Token(name=group.key.name, value=group.members[crawler], source=group.key.source)
        outcome = apply_programmatic_filters(token, min_length)
        if outcome.verdict is Verdict.FILTERED_NON_UID:
            return outcome
    return None


def classify_static(
    group: AlignedGroup, min_length: int = DEFAULT_MIN_TOKEN_LENGTH
) -> TokenClass:
    """Verdict for a group present on all four crawlers."""
    required = {CrawlerId.SAFARI1, CrawlerId.SAFARI2, CrawlerId.CHROME3, CrawlerId.SAFARI1R}
    if set(group.members) != required:
        raise ValueError("static classification requires all four crawlers")
    if _shared_across_profiles(group):
        return TokenClass(Verdict.SHARED_ACROSS_USERS)
    if group.members[CrawlerId.SAFARI1] != group.members[CrawlerId.SAFARI1R]:
        return TokenClass(Verdict.SESSION_ID)
    filtered = _filter_members(group, min_length)
    if filtered is not None:
        return filtered
    return TokenClass(Verdict.UID)


def classify_dynamic(
    group: AlignedGroup, min_length: int = DEFAULT_MIN_TOKEN_LENGTH
) -> TokenClass:
    """Verdict for a group present on one to three crawlers.

    Absence of the repeat crawler is treated as no evidence, not as a
    mismatch.
    """
    if not 1 <= len(group.members) <= 3:
        raise ValueError("dynamic classification requires 1..3 crawlers")
    if _shared_across_profiles(group):
        return TokenClass(Verdict.SHARED_ACROSS_USERS)
    s1, s1r = group.members.get(CrawlerId.SAFARI1), group.members.get(CrawlerId.SAFARI1R)
    if s1 is not None and s1r is not None and s1 != s1r:
        return TokenClass(Verdict.SESSION_ID)
    filtered = _filter_members(group, min_length)
    if filtered is not None:
        return filtered
    if len(group.members) >= 2:
        return TokenClass(Verdict.UID)
    return TokenClass(Verdict.NEEDS_REVIEW)


def classify_group(
    group: AlignedGroup, min_length: int = DEFAULT_MIN_TOKEN_LENGTH
) -> tuple[TokenClass, float | None]:
    """Route a group to the static or dynamic rules; score review items."""
    if len(group.members) == 4:
        outcome = classify_static(group, min_length)
    else:
        outcome = classify_dynamic(group, min_length)
    score = None
    if outcome.verdict is Verdict.NEEDS_REVIEW:
        value = next(iter(group.members.values()))
        score = score_word_likeness(value)
    return outcome, score


def certainty_category(group: AlignedGroup) -> Certainty:
    """Which crawler combination observed a retained group."""
    members = group.members
    s1, s1r = members.get(CrawlerId.SAFARI1), members.get(CrawlerId.SAFARI1R)
    identical_pair = s1 is not None and s1r is not None and s1 == s1r
    others = {c for c in members if c not in (CrawlerId.SAFARI1, CrawlerId.SAFARI1R)}
    if identical_pair and others:
        return Certainty.TWO_IDENTICAL_PLUS_DIFFERENT
    if identical_pair and not others:
        return Certainty.TWO_IDENTICAL_ONLY
    if group.distinct_profile_count() >= 2:
        return Certainty.DIFFERENT_PROFILES_ONLY
    return Certainty.ONE_PROFILE_ONLY
