"""Toolkit for detecting user identifiers smuggled across site boundaries.

Ingests synchronized multi-crawler crawl records, finds identifiers carried
across registered-domain boundaries in navigation query parameters, separates
true UIDs from session IDs and harmless values, labels the redirectors
involved, and emits machine-readable blocklists. A crawler-synchronization
controller and a deterministic synthetic-web simulator make the whole
pipeline testable offline.
"""

__version__ = "0.1.0"

from .classify import (  # noqa: F401
    AlignedGroup,
    Certainty,
    ClassifiedUid,
    FilterReason,
    GroupKey,
    TokenClass,
    Verdict,
    align_tokens,
    apply_programmatic_filters,
    certainty_category,
    classify_dynamic,
    classify_static,
)
from .domains import DomainError, SuffixRules, fqdn, normalize_url, registered_domain  # noqa: F401
from .pipeline import AnalysisResult, PipelineOptions, analyze_record_set  # noqa: F401
from .records import (  # noqa: F401
    CrawlRecordSet,
    CrawlerId,
    CrawlerIdentity,
    StepRecord,
    validate_record_set,
)
from .redirectors import SmugglerLabel, blocklist_coverage, classify_redirectors  # noqa: F401
from .reporting import two_proportion_z_test  # noqa: F401
from .simulator import GroundTruth, TrackerBehavior, WorldConfig, generate_world, oracle_compare, run_walks  # noqa: F401
from .tokens import Token, TokenObservation, decompose_value, extract_step_tokens, parse_query  # noqa: F401
from .transfers import (  # noqa: F401
    CandidateCase,
    LeakReport,
    NavigationPath,
    SegmentCategory,
    TransferSegment,
    build_navigation_path,
    classify_transfer_segment,
    detect_third_party_leaks,
    find_cross_context_transfers,
)
from .wordlike import score_word_likeness  # noqa: F401
