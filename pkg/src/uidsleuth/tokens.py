"""Recursive decomposition of stored values and query parameters into leaf tokens.

Values are parsed repeatedly, trying at each level: JSON (objects and arrays
yield child name-value pairs), query-string-shaped splitting, and
percent-decoding (re-examined when decoding changed the value). Whatever
parses no further is a leaf token. Names are never decomposed, only values.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable
from urllib.parse import parse_qsl, unquote, urlsplit

from .domains import DomainError, SuffixRules, fqdn, registered_domain
from .records import CrawlerIdentity, StepRecord

DEFAULT_MAX_DEPTH = 8

# Characters that may legally appear in a query component. A query-shaped
# split additionally requires at least one '&'-separated pair boundary so that
# opaque payloads containing a stray '=' (base64 padding and the like) are not
# shredded into bogus pairs.
_QUERY_CHARS_RE = re.compile(r"^[A-Za-z0-9\-._~!$&'()*+,;=:@/?%]+$")


class TokenSource(str, Enum):
    COOKIE = "Cookie"
    LOCAL_STORAGE = "LocalStorage"
    QUERY_PARAM = "QueryParam"


class DecodeStep(str, Enum):
    JSON_FIELD = "JsonField"
    URL_DECODED = "UrlDecoded"
    QUERY_PAIR = "QueryPair"


@dataclass(frozen=True)
class Token:
    """A leaf value plus the innermost name it was found under."""

    name: str
    value: str
    source: TokenSource
    decode_path: tuple[DecodeStep, ...] = ()


@dataclass(frozen=True)
class TokenObservation:
    """One sighting of a token: which crawler saw it, where, and on what step."""

    token: Token
    crawler: CrawlerIdentity
    walk_id: str
    step_index: int
    context_url: str
    context_registered_domain: str


def parse_query(url: str) -> list[tuple[str, str]]:
    """Decoded name-value pairs from the query component of an absolute URL.

    Repeated names are preserved in order; the fragment is ignored.
    """
    try:
        parts = urlsplit(url)
    except ValueError as exc:
        raise DomainError(f"unparsable URL {url!r}: {exc}") from exc
    if not parts.scheme or not parts.netloc:
        raise DomainError(f"not an absolute URL: {url!r}")
    return parse_qsl(parts.query, keep_blank_values=True)


def _query_shaped_pairs(value: str) -> list[tuple[str, str]] | None:
    """Split k1=v1&k2=v2 shapes; None when the value is not query-shaped."""
    if "&" not in value or "=" not in value:
        return None
    if not _QUERY_CHARS_RE.match(value):
        return None
    segments = value.split("&")
    pairs = []
    for segment in segments:
        if "=" not in segment:
            return None
        name, _, val = segment.partition("=")
        pairs.append((name, val))
    return pairs


def decompose_value(
    name: str,
    value: str,
    max_depth: int = DEFAULT_MAX_DEPTH,
    *,
    source: TokenSource = TokenSource.QUERY_PARAM,
) -> list[Token]:
    """Decompose one name-value pair into leaf tokens.

    Unparsable content at any level is emitted as a leaf; empty values are
    dropped. Terminates because depth is bounded and percent-decoding only
    re-enters when it strictly shrank the value.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    out: list[Token] = []
    _expand(name, value, (), source, max_depth, out)
    return out


def _emit(name: str, value: str, path: tuple, source: TokenSource, out: list[Token]) -> None:
    if value:
        out.append(Token(name=name, value=value, source=source, decode_path=path))


def _expand(
    name: str,
    value: str,
    path: tuple,
    source: TokenSource,
    max_depth: int,
    out: list[Token],
) -> None:
    if not value:
        return
    if len(path) >= max_depth:
        _emit(name, value, path, source, out)
        return

    if value[0] in "{[":
        try:
            parsed = json.loads(value)
        except ValueError:
            parsed = None
        if isinstance(parsed, (dict, list)):
            _expand_json(name, parsed, path + (DecodeStep.JSON_FIELD,), source, max_depth, out)
            return

    # Split query shapes before percent-decoding: encoded '&' or '=' inside a
    # pair value must not change the pair structure, exactly as in standard
    # query-string parsing.
    pairs = _query_shaped_pairs(value)
    if pairs is not None:
        for child_name, child_value in pairs:
            _expand(
                child_name or name,
                child_value,
                path + (DecodeStep.QUERY_PAIR,),
                source,
                max_depth,
                out,
            )
        return

    decoded = unquote(value)
    if decoded != value and decoded:
        _expand(name, decoded, path + (DecodeStep.URL_DECODED,), source, max_depth, out)
        return

    _emit(name, value, path, source, out)


def _expand_json(
    name: str,
    obj: dict | list,
    path: tuple,
    source: TokenSource,
    max_depth: int,
    out: list[Token],
) -> None:
    """Walk parsed JSON; children inherit the name of the innermost pair."""
    items: Iterable[tuple[str, object]]
    if isinstance(obj, dict):
        items = ((str(k), v) for k, v in obj.items())
    else:
        items = ((name, v) for v in obj)
    for child_name, child in items:
        if isinstance(child, (dict, list)):
            if len(path) >= max_depth:
                _emit(child_name, json.dumps(child, sort_keys=True), path, source, out)
            else:
                _expand_json(
                    child_name, child, path + (DecodeStep.JSON_FIELD,), source, max_depth, out
                )
        elif child is None:
            continue
        else:
            child_value = child if isinstance(child, str) else json.dumps(child)
            _expand(child_name, child_value, path, source, max_depth, out)


def _fragment_pairs(url: str) -> list[tuple[str, str]]:
    fragment = urlsplit(url).fragment
    if not fragment or "=" not in fragment:
        return []
    return parse_qsl(fragment, keep_blank_values=True)


def extract_step_tokens(
    step: StepRecord,
    rules: SuffixRules,
    *,
    max_depth: int = DEFAULT_MAX_DEPTH,
    include_fragments: bool = False,
) -> list[TokenObservation]:
    """All token observations for one step record.

    Sources: every cookie value, every local-storage value, every query
    parameter of every navigation-chain hop, and every query parameter of
    every captured request URL. Fragment components are only parsed when
    ``include_fragments`` is set.
    """
    observations: list[TokenObservation] = []

    def _add(tokens: Iterable[Token], context_url: str) -> None:
        try:
            context_domain = registered_domain(fqdn(context_url), rules)
        except DomainError:
            return
        for token in tokens:
            observations.append(
                TokenObservation(
                    token=token,
                    crawler=step.crawler,
                    walk_id=step.walk_id,
                    step_index=step.step_index,
                    context_url=context_url,
                    context_registered_domain=context_domain,
                )
            )

    for cookie in step.cookies:
        _add(
            decompose_value(cookie.name, cookie.value, max_depth, source=TokenSource.COOKIE),
            step.page_url,
        )
    for item in step.local_storage:
        _add(
            decompose_value(item.name, item.value, max_depth, source=TokenSource.LOCAL_STORAGE),
            step.page_url,
        )

    def _add_url_params(url: str) -> None:
        try:
            pairs = parse_query(url)
        except DomainError:
            return
        if include_fragments:
            pairs = pairs + _fragment_pairs(url)
        for name, value in pairs:
            _add(
                decompose_value(name, value, max_depth, source=TokenSource.QUERY_PARAM),
                url,
            )

    for hop in step.navigation_chain:
        _add_url_params(hop)
    for request in step.requests:
        _add_url_params(request.url)

    return observations
