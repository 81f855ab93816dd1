"""Shared fixtures: a pinned suffix-rule snapshot and record builders."""

from __future__ import annotations

import pytest

from uidsleuth.domains import SuffixRules
from uidsleuth.records import (
    Cookie,
    CrawlerId,
    CrawlerIdentity,
    LocalStorageItem,
    StepRecord,
    WebRequest,
    default_fleet,
)

FIXTURE_RULES = (
    "com",
    "net",
    "org",
    "io",
    "uk",
    "co.uk",
    "ru",
    "test",
    "example",
    "*.ck",
    "!www.ck",
)


@pytest.fixture(scope="session")
def rules() -> SuffixRules:
    return SuffixRules.from_lines(FIXTURE_RULES)


@pytest.fixture(scope="session")
def fleet() -> dict[CrawlerId, CrawlerIdentity]:
    return default_fleet()


def make_step(
    crawler: CrawlerIdentity,
    page_url: str = "https://origin.test/",
    chain: tuple[str, ...] = (),
    cookies: tuple[Cookie, ...] = (),
    local_storage: tuple[LocalStorageItem, ...] = (),
    requests: tuple[WebRequest, ...] = (),
    walk_id: str = "walk-1",
    step_index: int = 0,
) -> StepRecord:
    landing = ""
    if chain:
        landing = chain[-1].split("/")[2].split(":")[0].lower()
    return StepRecord(
        walk_id=walk_id,
        step_index=step_index,
        crawler=crawler,
        page_url=page_url,
        cookies=cookies,
        local_storage=local_storage,
        requests=requests,
        navigation_chain=chain,
        clicked_element=None,
        landing_fqdn=landing,
    )
