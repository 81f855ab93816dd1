"""URL and hostname primitives: FQDN extraction, public-suffix matching, normalization.

Registered-domain resolution follows the standard public-suffix matching
algorithm (plain, wildcard and exception rules) against a caller-supplied
rule snapshot, so results are reproducible regardless of when a crawl ran.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable
from urllib.parse import urlsplit, urlunsplit

_LABEL_RE = re.compile(r"^[a-z0-9_]([a-z0-9_-]*[a-z0-9_])?$")
_IPV4_RE = re.compile(r"^\d{1,3}(?:\.\d{1,3}){3}$")
_PCT_ESCAPE_RE = re.compile(r"%[0-9a-fA-F]{2}")

DEFAULT_PORTS = {"http": 80, "https": 443, "ws": 80, "wss": 443, "ftp": 21}


class DomainError(ValueError):
    """A hostname or URL that cannot be interpreted."""


@dataclass(frozen=True)
class SuffixRules:
    """A public-suffix rule snapshot.

    Rules use the familiar one-per-line format: plain suffixes ("co.uk"),
    wildcards ("*.ck") and exceptions ("!www.ck"). Comment lines starting
    with "//" or "#" and blank lines are ignored when loading.
    """

    rules: frozenset[str]

    def __post_init__(self) -> None:
        if not self.rules:
            raise ValueError("suffix rule set must not be empty")

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "SuffixRules":
        rules = set()
        for raw in lines:
            line = raw.strip()
            if not line or line.startswith("//") or line.startswith("#"):
                continue
            rules.add(line.lower())
        return cls(frozenset(rules))

    @classmethod
    def from_file(cls, path: str | Path) -> "SuffixRules":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DomainError(f"cannot read suffix rules from {path}: {exc}") from exc
        return cls.from_lines(text.splitlines())

    def public_suffix_length(self, labels: list[str]) -> int:
        """Number of labels in the public suffix of a host split into labels.

        Exception rules take priority over everything; otherwise the longest
        matching plain or wildcard rule prevails; with no match at all the
        last label is the suffix (the implicit "*" rule).
        """
        n = len(labels)
        for i in range(n):
            if "!" + ".".join(labels[i:]) in self.rules:
                return n - i - 1
        for i in range(n):
            if ".".join(labels[i:]) in self.rules:
                return n - i
            if i + 1 < n and "*." + ".".join(labels[i + 1 :]) in self.rules:
                return n - i
        return 1


def is_ip_literal(host: str) -> bool:
    if ":" in host:
        return True
    if _IPV4_RE.match(host):
        return all(int(part) <= 255 for part in host.split("."))
    return False


def _validate_labels(host: str) -> list[str]:
    labels = host.split(".")
    for label in labels:
        if not label:
            raise DomainError(f"empty label in hostname {host!r}")
        if len(label) > 63 or not _LABEL_RE.match(label):
            raise DomainError(f"malformed hostname label {label!r} in {host!r}")
    return labels


def registered_domain(host: str, rules: SuffixRules) -> str:
    """Resolve a host to its registered domain (public suffix plus one label).

    IP literals and single-label hosts are their own registered domain, and a
    host that is itself a public suffix is returned unchanged: degenerate
    inputs must not abort analysis.
    """
    host = host.strip().rstrip(".").lower()
    if not host:
        raise DomainError("empty hostname")
    if is_ip_literal(host):
        return host
    labels = _validate_labels(host)
    if len(labels) == 1:
        return host
    suffix_len = rules.public_suffix_length(labels)
    if suffix_len >= len(labels):
        return host
    return ".".join(labels[len(labels) - suffix_len - 1 :])


def fqdn(url: str) -> str:
    """Return the lowercased host of an absolute URL, port stripped."""
    try:
        parts = urlsplit(url)
        host = parts.hostname
    except ValueError as exc:
        raise DomainError(f"unparsable URL {url!r}: {exc}") from exc
    if not parts.scheme or host is None or host == "":
        raise DomainError(f"not an absolute URL: {url!r}")
    return host.rstrip(".")


def normalize_url(url: str) -> str:
    """Canonical form used for all URL comparisons.

    Lowercases scheme and host, strips default ports, and upper-cases the hex
    digits of percent escapes. Path, query and fragment are otherwise left
    untouched.
    """
    try:
        parts = urlsplit(url)
        host = parts.hostname
        port = parts.port
    except ValueError as exc:
        raise DomainError(f"unparsable URL {url!r}: {exc}") from exc
    if not parts.scheme or host is None or host == "":
        raise DomainError(f"not an absolute URL: {url!r}")
    scheme = parts.scheme.lower()
    host = host.rstrip(".")
    if ":" in host:
        host = f"[{host}]"
    netloc = host
    if port is not None and port != DEFAULT_PORTS.get(scheme):
        netloc = f"{netloc}:{port}"
    if parts.username:
        cred = parts.username if parts.password is None else f"{parts.username}:{parts.password}"
        netloc = f"{cred}@{netloc}"

    def _upper(match: re.Match[str]) -> str:
        return match.group(0).upper()

    path = _PCT_ESCAPE_RE.sub(_upper, parts.path)
    query = _PCT_ESCAPE_RE.sub(_upper, parts.query)
    fragment = _PCT_ESCAPE_RE.sub(_upper, parts.fragment)
    return urlunsplit((scheme, netloc, path, query, fragment))
