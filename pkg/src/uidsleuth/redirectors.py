"""Redirector labeling and blocklist coverage.

A redirector FQDN with no apparent purpose in confirmed smuggling paths
besides carrying identifiers (multiple originator domains, multiple
destination domains, never itself an endpoint) is a dedicated smuggler;
everything else that smuggles is multi-purpose. All counting is per unique
domain path so repeat crawls of one path never inflate a redirector.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

from .domains import SuffixRules, fqdn, registered_domain
from .transfers import NavigationPath


class SmugglerLabel(str, Enum):
    DEDICATED = "Dedicated"
    MULTI_PURPOSE = "MultiPurpose"


@dataclass(frozen=True)
class RedirectorProfile:
    fqdn: str
    originator_domains: frozenset[str]
    destination_domains: frozenset[str]
    seen_as_endpoint: bool
    path_count: int


@dataclass(frozen=True)
class CoverageResult:
    covered: int
    uncovered: int
    fraction_uncovered: float


def unique_domain_paths(
    paths: Iterable[NavigationPath], rules: SuffixRules
) -> dict[tuple[str, ...], NavigationPath]:
    """First representative path per distinct registered-domain sequence."""
    unique: dict[tuple[str, ...], NavigationPath] = {}
    for path in paths:
        unique.setdefault(path.domain_path(rules), path)
    return unique


def build_redirector_profiles(
    paths: Iterable[NavigationPath], rules: SuffixRules
) -> dict[str, RedirectorProfile]:
    unique = unique_domain_paths(paths, rules)

    endpoint_fqdns: set[str] = set()
    for path in unique.values():
        endpoint_fqdns.add(fqdn(path.originator))
        endpoint_fqdns.add(fqdn(path.destination))

    originators: dict[str, set[str]] = {}
    destinations: dict[str, set[str]] = {}
    counts: dict[str, int] = {}
    for key, path in unique.items():
        origin_domain, dest_domain = key[0], key[-1]
        seen_here: set[str] = set()
        for hop in path.redirectors:
            host = fqdn(hop)
            originators.setdefault(host, set()).add(origin_domain)
            destinations.setdefault(host, set()).add(dest_domain)
            if host not in seen_here:
                counts[host] = counts.get(host, 0) + 1
                seen_here.add(host)

    return {
        host: RedirectorProfile(
            fqdn=host,
            originator_domains=frozenset(originators[host]),
            destination_domains=frozenset(destinations[host]),
            seen_as_endpoint=host in endpoint_fqdns,
            path_count=counts[host],
        )
        for host in originators
    }


def classify_redirectors(
    paths: Iterable[NavigationPath], rules: SuffixRules
) -> dict[str, SmugglerLabel]:
    """Label every redirector FQDN in the given UID-confirmed paths."""
    labels: dict[str, SmugglerLabel] = {}
    for host, profile in build_redirector_profiles(paths, rules).items():
        dedicated = (
            len(profile.originator_domains) >= 2
            and len(profile.destination_domains) >= 2
            and not profile.seen_as_endpoint
        )
        labels[host] = SmugglerLabel.DEDICATED if dedicated else SmugglerLabel.MULTI_PURPOSE
    return labels


def load_domain_list(path: str | Path) -> set[str]:
    """One domain per line; '#' comments and blank lines allowed."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read domain list {path}: {exc}") from exc
    domains = set()
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip().lower()
        if line:
            domains.add(line)
    return domains


def blocklist_coverage(
    dedicated: Iterable[str], external_list: set[str], rules: SuffixRules
) -> CoverageResult:
    """How many dedicated smugglers an external tracker list already covers.

    An FQDN counts as covered when any of its dot-aligned parent suffixes,
    including its registered domain, appears in the list; tracker lists are
    usually registered-domain granular while observations are FQDNs.
    """
    normalized = {d.strip().lower().rstrip(".") for d in external_list}
    covered = 0
    uncovered = 0
    for host in dedicated:
        host = host.lower().rstrip(".")
        labels = host.split(".")
        suffixes = {".".join(labels[i:]) for i in range(len(labels))}
        suffixes.add(registered_domain(host, rules))
        if suffixes & normalized:
            covered += 1
        else:
            uncovered += 1
    total = covered + uncovered
    fraction = uncovered / total if total else 0.0
    return CoverageResult(covered=covered, uncovered=uncovered, fraction_uncovered=fraction)


def redirector_frequency_table(
    paths: Iterable[NavigationPath], rules: SuffixRules
) -> list[tuple[str, int, float]]:
    """Redirectors ranked by the number of unique domain paths they appear in."""
    unique = unique_domain_paths(paths, rules)
    total = len(unique)
    counts: dict[str, int] = {}
    for path in unique.values():
        for host in {fqdn(hop) for hop in path.redirectors}:
            counts[host] = counts.get(host, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [
        (host, count, (100.0 * count / total) if total else 0.0)
        for host, count in ranked
    ]
