"""Campaign metrics, the two-proportion z-test, and report/blocklist emission.

Reports serialize as canonical JSON (sorted keys, stable floats) so a seeded
run has a stable digest; blocklists are plain text with '#' comments.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .classify import Certainty, ClassifiedUid, Verdict
from .domains import SuffixRules
from .records import CrawlRecordSet
from .redirectors import SmugglerLabel
from .transfers import TransferError, build_navigation_path


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class ZTestResult:
    z: float
    p_two_sided: float
    p1: float
    p2: float
    pooled: float


def normal_sf(z: float) -> float:
    """Standard normal survival function via the complementary error function."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def two_proportion_z_test(x1: int, n1: int, x2: int, n2: int) -> ZTestResult:
    """Pooled two-proportion z-test with a two-sided p-value."""
    if n1 <= 0 or n2 <= 0:
        raise AnalysisError("sample sizes must be positive")
    if not (0 <= x1 <= n1 and 0 <= x2 <= n2):
        raise AnalysisError("counts must lie within their sample sizes")
    pooled = (x1 + x2) / (n1 + n2)
    if pooled in (0.0, 1.0):
        raise AnalysisError("degenerate pooled proportion")
    p1, p2 = x1 / n1, x2 / n2
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    z = (p1 - p2) / se
    return ZTestResult(
        z=z,
        p_two_sided=2.0 * normal_sf(abs(z)),
        p1=p1,
        p2=p2,
        pooled=pooled,
    )


@dataclass
class CampaignReport:
    campaign_id: str
    unique_url_paths: int
    unique_url_paths_with_smuggling: int
    unique_domain_paths_with_smuggling: int
    smuggling_rate: float
    certainty_table: dict[str, int]
    segment_histogram: dict[str, int]
    redirector_table: list[dict]
    leak_table: list[dict]
    retained_groups: int
    verdict_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "campaign_id": self.campaign_id,
            "unique_url_paths": self.unique_url_paths,
            "unique_url_paths_with_smuggling": self.unique_url_paths_with_smuggling,
            "unique_domain_paths_with_smuggling": self.unique_domain_paths_with_smuggling,
            "smuggling_rate": round(self.smuggling_rate, 10),
            "certainty_table": self.certainty_table,
            "segment_histogram": self.segment_histogram,
            "redirector_table": self.redirector_table,
            "leak_table": self.leak_table,
            "retained_groups": self.retained_groups,
            "verdict_counts": self.verdict_counts,
        }


def unique_url_path_keys(record_set: CrawlRecordSet) -> set[tuple[str, ...]]:
    """Distinct full-URL navigation path keys across every crawler and step."""
    keys: set[tuple[str, ...]] = set()
    for record in record_set:
        if not record.navigation_chain:
            continue
        try:
            keys.add(build_navigation_path(record).url_key())
        except TransferError:
            continue
    return keys


def smuggling_rate(
    record_set: CrawlRecordSet, classified: Sequence[ClassifiedUid]
) -> float:
    """Fraction of unique URL paths carrying at least one confirmed UID."""
    all_keys = unique_url_path_keys(record_set)
    if not all_keys:
        raise AnalysisError("no unique URL paths in record set")
    smuggling = smuggling_path_keys(classified)
    return len(smuggling & all_keys) / len(all_keys)


def smuggling_path_keys(classified: Sequence[ClassifiedUid]) -> set[tuple[str, ...]]:
    keys: set[tuple[str, ...]] = set()
    for item in classified:
        if item.token_class.verdict is not Verdict.UID:
            continue
        for case in item.group.cases:
            keys.add(case.path.url_key())
    return keys


@dataclass(frozen=True)
class FingerprintAnalysis:
    fingerprinting_multi: int
    fingerprinting_total: int
    other_multi: int
    other_total: int
    proportion_fingerprinting: float
    proportion_other: float
    ztest: ZTestResult


def fingerprinting_origin_analysis(
    classified: Sequence[ClassifiedUid],
    fingerprinter_domains: set[str],
    rules: SuffixRules,
) -> FingerprintAnalysis:
    """Split retained cases by whether their originator is a known fingerprinter,
    then compare the share observed on multiple crawlers across the two groups.
    """
    fp_multi = fp_total = other_multi = other_total = 0
    normalized = {d.strip().lower() for d in fingerprinter_domains}
    for item in classified:
        if item.token_class.verdict not in (Verdict.UID, Verdict.NEEDS_REVIEW):
            continue
        if not item.group.cases:
            continue
        origin = item.group.cases[0].path.domain_path(rules)[0]
        multi = len(item.group.members) >= 2
        if origin in normalized:
            fp_total += 1
            fp_multi += int(multi)
        else:
            other_total += 1
            other_multi += int(multi)
    if fp_total == 0:
        raise AnalysisError("empty fingerprinting partition")
    if other_total == 0:
        raise AnalysisError("empty non-fingerprinting partition")
    ztest = two_proportion_z_test(fp_multi, fp_total, other_multi, other_total)
    return FingerprintAnalysis(
        fingerprinting_multi=fp_multi,
        fingerprinting_total=fp_total,
        other_multi=other_multi,
        other_total=other_total,
        proportion_fingerprinting=fp_multi / fp_total,
        proportion_other=other_multi / other_total,
        ztest=ztest,
    )


def load_domain_map(path: str | Path) -> dict[str, str]:
    """domain,label rows (CSV) or 'domain label'; '#' comments allowed."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read domain map {path}: {exc}") from exc
    mapping: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "," in line:
            domain, _, label = line.partition(",")
        else:
            domain, _, label = line.partition(" ")
        domain, label = domain.strip().lower(), label.strip()
        if domain and label:
            mapping[domain] = label
    return mapping


def domain_breakdown(
    classified: Sequence[ClassifiedUid],
    mapping: dict[str, str],
    rules: SuffixRules,
) -> dict:
    """Pass-through aggregation against a user-supplied domain map.

    Counts each registered domain once per role, however often it recurs, and
    reports whatever the external map says about it. The map is external
    data; domains it does not cover land in "unknown".
    """
    originators: set[str] = set()
    destinations: set[str] = set()
    for item in classified:
        if item.token_class.verdict is not Verdict.UID:
            continue
        for case in item.group.cases:
            path = case.path.domain_path(rules)
            originators.add(path[0])
            destinations.add(path[-1])

    def tally(domains: set[str]) -> dict[str, int]:
        counts: dict[str, int] = {}
        for domain in domains:
            label = mapping.get(domain, "unknown")
            counts[label] = counts.get(label, 0) + 1
        return dict(sorted(counts.items()))

    return {
        "source": "external data",
        "originators": tally(originators),
        "destinations": tally(destinations),
    }


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    os.replace(tmp, path)


def emit_blocklists(
    classified: Sequence[ClassifiedUid],
    redirector_labels: dict[str, SmugglerLabel],
    param_list_path: str | Path,
    redirector_list_path: str | Path,
) -> None:
    """Write the query-parameter-name and redirector-domain blocklists.

    The parameter list holds the names under which confirmed UIDs rode query
    parameters; the redirector list holds dedicated smugglers uncommented,
    with multi-purpose smugglers in a commented section.
    """
    names: set[str] = set()
    for item in classified:
        if item.token_class.verdict is not Verdict.UID:
            continue
        for case in item.group.cases:
            names.update(case.hop_param_names)

    param_lines = ["# query parameter names observed transferring UIDs"]
    param_lines.extend(sorted(names))
    _atomic_write(Path(param_list_path), "\n".join(param_lines) + "\n")

    dedicated = sorted(h for h, l in redirector_labels.items() if l is SmugglerLabel.DEDICATED)
    multi = sorted(h for h, l in redirector_labels.items() if l is SmugglerLabel.MULTI_PURPOSE)
    redirector_lines = ["# dedicated smuggling redirectors"]
    redirector_lines.extend(dedicated)
    redirector_lines.append("# multi-purpose smugglers (blocklisting may break sign-in or shortener flows)")
    redirector_lines.extend(f"# {host}" for host in multi)
    _atomic_write(Path(redirector_list_path), "\n".join(redirector_lines) + "\n")


def render_text_report(report: CampaignReport) -> str:
    lines = [
        f"campaign {report.campaign_id}",
        f"unique URL paths:                    {report.unique_url_paths}",
        f"unique URL paths with smuggling:     {report.unique_url_paths_with_smuggling}",
        f"unique domain paths with smuggling:  {report.unique_domain_paths_with_smuggling}",
        f"smuggling rate:                      {100.0 * report.smuggling_rate:.1f}%",
        "",
        "crawler combinations for retained tokens:",
    ]
    for category in Certainty:
        lines.append(f"  {category.value:<28} {report.certainty_table.get(category.value, 0)}")
    lines.append("")
    lines.append("transfer segments (category, via dedicated smuggler):")
    for key in sorted(report.segment_histogram):
        lines.append(f"  {key:<40} {report.segment_histogram[key]}")
    lines.append("")
    lines.append("top redirectors by unique domain paths:")
    for row in report.redirector_table[:30]:
        lines.append(
            f"  {row['fqdn']:<40} {row['count']:>5}  {row['percent']:.1f}%  {row['label']}"
        )
    if report.leak_table:
        lines.append("")
        lines.append("third parties receiving UIDs from destination pages:")
        for row in report.leak_table[:30]:
            lines.append(f"  {row['third_party_domain']:<40} {row['mode']:<14} {row['count']:>5}")
    return "\n".join(lines) + "\n"


def emit_report(
    report: CampaignReport, json_path: str | Path, text_path: str | Path | None = None
) -> None:
    payload = json.dumps(report.to_dict(), sort_keys=True, indent=2)
    _atomic_write(Path(json_path), payload + "\n")
    if text_path is not None:
        _atomic_write(Path(text_path), render_text_report(report))


def export_review_queue(
    classified: Sequence[ClassifiedUid], path: str | Path
) -> int:
    """CSV of single-crawler tokens awaiting review, likeliest false positives first."""
    rows = []
    for item in classified:
        if item.token_class.verdict is not Verdict.NEEDS_REVIEW:
            continue
        value = next(iter(item.group.members.values()))
        path_summary = ""
        if item.group.cases:
            domains = item.group.cases[0].path
            path_summary = " -> ".join(
                [domains.originator] + list(domains.redirectors) + [domains.destination]
            )
        rows.append(
            {
                "walk_id": item.group.key.walk_id,
                "step_index": item.group.key.step_index,
                "name": item.group.key.name,
                "value": value,
                "certainty": item.certainty.value,
                "review_score": f"{item.review_score:.4f}" if item.review_score is not None else "",
                "path_summary": path_summary,
            }
        )
    rows.sort(key=lambda r: (-float(r["review_score"] or 0.0), r["walk_id"], r["step_index"]))
    out = Path(path)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=[
                "walk_id",
                "step_index",
                "name",
                "value",
                "certainty",
                "review_score",
                "path_summary",
            ],
        )
        writer.writeheader()
        writer.writerows(rows)
    return len(rows)
