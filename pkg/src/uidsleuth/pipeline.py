"""End-to-end analysis: records in, classified UIDs and reports out.

Per (walk, step, crawler): reconstruct the navigation path, extract token
observations, and detect cross-context transfers. Candidates are then aligned
per (walk, step) across crawlers, classified, and aggregated into campaign
metrics, redirector labels, leak reports and blocklists.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping

from .classify import (
    AlignedGroup,
    Certainty,
    ClassifiedUid,
    Verdict,
    align_tokens,
    canonical_profile,
    certainty_category,
    classify_group,
)
from .domains import SuffixRules
from .records import CrawlerId, CrawlRecordSet, StepRecord
from .redirectors import (
    SmugglerLabel,
    classify_redirectors,
    redirector_frequency_table,
    unique_domain_paths,
)
from .reporting import (
    CampaignReport,
    smuggling_path_keys,
    unique_url_path_keys,
)
from .tokens import extract_step_tokens
from .transfers import (
    CandidateCase,
    LeakReport,
    NavigationPath,
    TransferError,
    build_navigation_path,
    classify_transfer_segment,
    detect_third_party_leaks,
    find_cross_context_transfers,
    mark_via_dedicated,
)

# Crawler preference when one representative case per group is needed.
_CRAWLER_ORDER = {
    CrawlerId.SAFARI1: 0,
    CrawlerId.SAFARI2: 1,
    CrawlerId.CHROME3: 2,
    CrawlerId.SAFARI1R: 3,
}


@dataclass(frozen=True)
class PipelineOptions:
    min_token_length: int = 8
    max_depth: int = 8
    include_fragments: bool = False
    review_threshold: float = 0.5
    jobs: int = 1


@dataclass
class GroupOutcome:
    """Classification outcome for one aligned group, keyed for evaluation."""

    verdict: Verdict
    certainty: Certainty | None
    review_score: float | None
    members: tuple[str, ...]


@dataclass
class AnalysisResult:
    campaign_id: str
    classified: list[ClassifiedUid]
    group_outcomes: dict[tuple, GroupOutcome]
    redirector_labels: dict[str, SmugglerLabel]
    leaks: list[LeakReport]
    report: CampaignReport

    def retained(self) -> list[ClassifiedUid]:
        return self.classified


def _walk_candidates(
    records: list[StepRecord],
    rules: SuffixRules,
    options: PipelineOptions,
) -> tuple[list[CandidateCase], dict[str, set[str]]]:
    """Candidates and per-value profile sightings for one walk's records."""
    cases: list[CandidateCase] = []
    value_profiles: dict[str, set[str]] = {}
    for record in records:
        observations = extract_step_tokens(
            record,
            rules,
            max_depth=options.max_depth,
            include_fragments=options.include_fragments,
        )
        profile = canonical_profile(record.crawler.crawler_id)
        for obs in observations:
            value_profiles.setdefault(obs.token.value, set()).add(profile)
        if not record.navigation_chain:
            continue
        try:
            path = build_navigation_path(record)
        except TransferError:
            continue
        cases.extend(
            find_cross_context_transfers(
                observations, path, rules, max_depth=options.max_depth
            )
        )
    return cases, value_profiles


def analyze_record_set(
    record_set: CrawlRecordSet,
    rules: SuffixRules,
    options: PipelineOptions = PipelineOptions(),
) -> AnalysisResult:
    by_walk: dict[str, list[StepRecord]] = {}
    for record in record_set:
        by_walk.setdefault(record.walk_id, []).append(record)
    walk_ids = list(by_walk)

    if options.jobs > 1 and len(walk_ids) > 1:
        with ThreadPoolExecutor(max_workers=options.jobs) as pool:
            partials = list(
                pool.map(
                    lambda wid: _walk_candidates(by_walk[wid], rules, options),
                    walk_ids,
                )
            )
    else:
        partials = [_walk_candidates(by_walk[wid], rules, options) for wid in walk_ids]

    all_cases: list[CandidateCase] = []
    value_profiles: dict[str, set[str]] = {}
    for cases, profiles in partials:
        all_cases.extend(cases)
        for value, seen in profiles.items():
            value_profiles.setdefault(value, set()).update(seen)
    value_index: Mapping[str, frozenset[str]] = {
        value: frozenset(seen) for value, seen in value_profiles.items()
    }

    groups = align_tokens(all_cases, value_index)

    classified: list[ClassifiedUid] = []
    group_outcomes: dict[tuple, GroupOutcome] = {}
    for group in groups:
        outcome, score = classify_group(group, options.min_token_length)
        certainty = None
        if outcome.verdict in (Verdict.UID, Verdict.NEEDS_REVIEW):
            certainty = certainty_category(group)
            segment = classify_transfer_segment(_representative_case(group))
            classified.append(
                ClassifiedUid(
                    group=group,
                    token_class=outcome,
                    certainty=certainty,
                    segment=segment,
                    review_score=score,
                )
            )
        group_outcomes[group.key.as_tuple()] = GroupOutcome(
            verdict=outcome.verdict,
            certainty=certainty,
            review_score=score,
            members=tuple(sorted(c.value for c in group.members)),
        )

    uid_paths = _confirmed_paths(classified)
    labels = classify_redirectors(uid_paths, rules)
    dedicated = frozenset(h for h, l in labels.items() if l is SmugglerLabel.DEDICATED)

    final: list[ClassifiedUid] = []
    for item in classified:
        case = _representative_case(item.group)
        segment = mark_via_dedicated(case, item.segment, dedicated)
        final.append(
            ClassifiedUid(
                group=item.group,
                token_class=item.token_class,
                certainty=item.certainty,
                segment=segment,
                review_score=item.review_score,
            )
        )

    leaks = _collect_leaks(record_set, final, rules, options)
    report = _build_report(record_set, final, group_outcomes, labels, leaks, rules)
    return AnalysisResult(
        campaign_id=record_set.campaign_id() or "",
        classified=final,
        group_outcomes=group_outcomes,
        redirector_labels=labels,
        leaks=leaks,
        report=report,
    )


def _representative_case(group: AlignedGroup) -> CandidateCase:
    return min(
        group.cases,
        key=lambda c: _CRAWLER_ORDER.get(CrawlerId(c.crawler_id), 99),
    )


def _confirmed_paths(classified: list[ClassifiedUid]) -> list[NavigationPath]:
    paths: list[NavigationPath] = []
    seen: set[tuple[str, ...]] = set()
    for item in classified:
        if item.token_class.verdict is not Verdict.UID:
            continue
        for case in item.group.cases:
            key = case.path.url_key()
            if key not in seen:
                seen.add(key)
                paths.append(case.path)
    return paths


def _collect_leaks(
    record_set: CrawlRecordSet,
    classified: list[ClassifiedUid],
    rules: SuffixRules,
    options: PipelineOptions,
) -> list[LeakReport]:
    steps = record_set.by_walk_step()
    leaks: list[LeakReport] = []
    seen: set[tuple[str, str, str]] = set()
    for item in classified:
        if item.token_class.verdict is not Verdict.UID:
            continue
        key = (item.group.key.walk_id, item.group.key.step_index)
        step_records = steps.get(key, {})
        for crawler, value in item.group.members.items():
            record = step_records.get(crawler)
            if record is None or len(value) < options.min_token_length:
                continue
            for leak in detect_third_party_leaks(
                record,
                value,
                rules,
                min_value_length=options.min_token_length,
                max_depth=options.max_depth,
            ):
                dedup = (leak.uid_value, leak.third_party_domain, leak.mode.value)
                if dedup not in seen:
                    seen.add(dedup)
                    leaks.append(leak)
    return leaks


def _build_report(
    record_set: CrawlRecordSet,
    classified: list[ClassifiedUid],
    group_outcomes: dict[tuple, GroupOutcome],
    labels: dict[str, SmugglerLabel],
    leaks: list[LeakReport],
    rules: SuffixRules,
) -> CampaignReport:
    all_keys = unique_url_path_keys(record_set)
    smuggling_keys = smuggling_path_keys(classified) & all_keys
    rate = len(smuggling_keys) / len(all_keys) if all_keys else 0.0

    uid_paths = _confirmed_paths(classified)
    domain_paths = unique_domain_paths(uid_paths, rules)

    certainty_table = {c.value: 0 for c in Certainty}
    for item in classified:
        certainty_table[item.certainty.value] += 1

    segment_histogram: dict[str, int] = {}
    for item in classified:
        if item.segment is None:
            continue
        suffix = "dedicated" if item.segment.via_dedicated else "other"
        key = f"{item.segment.category.value}:{suffix}"
        segment_histogram[key] = segment_histogram.get(key, 0) + 1

    frequency = redirector_frequency_table(uid_paths, rules)
    redirector_table = [
        {
            "fqdn": host,
            "count": count,
            "percent": round(percent, 1),
            "label": labels.get(host, SmugglerLabel.MULTI_PURPOSE).value,
        }
        for host, count, percent in frequency
    ]

    leak_counts: dict[tuple[str, str], int] = {}
    for leak in leaks:
        key = (leak.third_party_domain, leak.mode.value)
        leak_counts[key] = leak_counts.get(key, 0) + 1
    leak_table = [
        {"third_party_domain": domain, "mode": mode, "count": count}
        for (domain, mode), count in sorted(
            leak_counts.items(), key=lambda kv: (-kv[1], kv[0])
        )
    ]

    verdict_counts: dict[str, int] = {}
    for outcome in group_outcomes.values():
        verdict_counts[outcome.verdict.value] = verdict_counts.get(outcome.verdict.value, 0) + 1

    return CampaignReport(
        campaign_id=record_set.campaign_id() or "",
        unique_url_paths=len(all_keys),
        unique_url_paths_with_smuggling=len(smuggling_keys),
        unique_domain_paths_with_smuggling=len(domain_paths),
        smuggling_rate=rate,
        certainty_table=certainty_table,
        segment_histogram=segment_histogram,
        redirector_table=redirector_table,
        leak_table=leak_table,
        retained_groups=len(classified),
        verdict_counts=verdict_counts,
    )
