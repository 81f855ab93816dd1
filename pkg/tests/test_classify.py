import itertools

import pytest
from hypothesis import given, strategies as st

from uidsleuth.classify import (
    AlignedGroup,
    Certainty,
    FilterReason,
    Verdict,
    align_tokens,
    apply_programmatic_filters,
    certainty_category,
    classify_dynamic,
    classify_group,
    classify_static,
    canonical_profile,
)
from uidsleuth.records import CrawlerId
from uidsleuth.tokens import Token, TokenSource
from uidsleuth.transfers import (
    CandidateCase,
    NavigationPath,
    OriginKind,
)
from uidsleuth.wordlike import score_word_likeness

S1, S2, C3, S1R = (
    CrawlerId.SAFARI1,
    CrawlerId.SAFARI2,
    CrawlerId.CHROME3,
    CrawlerId.SAFARI1R,
)

_PATH = NavigationPath(
    originator="https://a.test/",
    redirectors=("https://r.t0.test/x",),
    destination="https://b.test/y",
)


def make_case(crawler: CrawlerId, value: str, name="uid", walk="w1", step=0):
    return CandidateCase(
        token=Token(name=name, value=value, source=TokenSource.QUERY_PARAM),
        path=_PATH,
        crossing_hops=(0, 1, 2),
        origin_kind=OriginKind.STORAGE_ON_ORIGINATOR,
        walk_id=walk,
        step_index=step,
        crawler_id=crawler.value,
        context_domain="a.test",
        hop_param_names=frozenset({name}),
    )


def make_group(values: dict[CrawlerId, str], name="uid", links=None) -> AlignedGroup:
    cases = [make_case(c, v, name=name) for c, v in values.items()]
    groups = align_tokens(cases, links)
    assert len(groups) == 1
    return groups[0]


class TestAlignTokens:
    def test_same_name_on_all_four_is_one_group(self):
        group = make_group({S1: "a1b2c3d4e5", S2: "f6a7b8c9d0", C3: "11223344aa", S1R: "a1b2c3d4e5"})
        assert len(group.members) == 4

    def test_singleton_group(self):
        group = make_group({C3: "a1b2c3d4e5"})
        assert set(group.members) == {C3}

    def test_groups_split_by_key(self):
        cases = [
            make_case(S1, "a1b2c3d4e5", name="uid"),
            make_case(S2, "f6a7b8c9d0", name="other"),
        ]
        assert len(align_tokens(cases)) == 2

    def test_value_links_cross_names(self):
        # The same value under different names on different profiles is
        # discardable through the value index even when names differ.
        index = {"a1b2c3d4e5": frozenset({"profile-a", "profile-b"})}
        group = make_group({S1: "a1b2c3d4e5"}, links=index)
        outcome = classify_dynamic(group)
        assert outcome.verdict is Verdict.SHARED_ACROSS_USERS


class TestClassifyStatic:
    def test_shared_across_users(self):
        group = make_group({S1: "aaaa1111bb", S2: "aaaa1111bb", C3: "cccc2222dd", S1R: "aaaa1111bb"})
        assert classify_static(group).verdict is Verdict.SHARED_ACROSS_USERS

    def test_session_id(self):
        group = make_group({S1: "aaaa1111bb", S2: "bbbb2222cc", C3: "cccc3333dd", S1R: "dddd4444ee"})
        assert classify_static(group).verdict is Verdict.SESSION_ID

    def test_uid_survives(self):
        group = make_group({S1: "aaaa1111bb", S2: "bbbb2222cc", C3: "cccc3333dd", S1R: "aaaa1111bb"})
        assert classify_static(group).verdict is Verdict.UID

    def test_requires_all_four(self):
        group = make_group({S1: "aaaa1111bb", S2: "bbbb2222cc"})
        with pytest.raises(ValueError):
            classify_static(group)


class TestClassifyDynamic:
    def test_same_value_two_profiles_discarded(self):
        group = make_group({S1: "eeee5555ff", C3: "eeee5555ff"})
        assert classify_dynamic(group).verdict is Verdict.SHARED_ACROSS_USERS

    def test_repeat_crawler_disagreement_is_session(self):
        group = make_group({S1: "aaaa1111bb", S1R: "bbbb2222cc"}, name="sid")
        assert classify_dynamic(group).verdict is Verdict.SESSION_ID

    def test_lone_crawler_goes_to_review(self):
        group = make_group({C3: "f3a9c2d87b1e4c0a"})
        assert classify_dynamic(group).verdict is Verdict.NEEDS_REVIEW

    def test_two_distinct_profiles_different_values_is_uid(self):
        group = make_group({S2: "aaaa1111bb", C3: "bbbb2222cc"})
        assert classify_dynamic(group).verdict is Verdict.UID

    def test_repeat_pair_agreement_is_uid(self):
        group = make_group({S1: "aaaa1111bb", S1R: "aaaa1111bb"})
        assert classify_dynamic(group).verdict is Verdict.UID

    def test_missing_repeat_crawler_is_no_evidence(self):
        # Absence of Safari1R never discards by itself.
        group = make_group({S1: "aaaa1111bb", C3: "bbbb2222cc"})
        assert classify_dynamic(group).verdict is Verdict.UID


class TestProgrammaticFilters:
    def _token(self, value):
        return Token(name="t", value=value, source=TokenSource.QUERY_PARAM)

    def test_epoch_seconds_timestamp(self):
        # Oracle: 1667347200 lies inside the 2001..2035 epoch-seconds window.
        outcome = apply_programmatic_filters(self._token("1667347200"))
        assert outcome.verdict is Verdict.FILTERED_NON_UID
        assert outcome.filter_reason is FilterReason.TIMESTAMP

    def test_epoch_millis_timestamp(self):
        outcome = apply_programmatic_filters(self._token("1667347200123"))
        assert outcome.filter_reason is FilterReason.TIMESTAMP

    def test_all_digit_non_timestamp_passes(self):
        outcome = apply_programmatic_filters(self._token("99999999999999999999"))
        assert outcome.verdict is Verdict.UID

    def test_iso_date(self):
        outcome = apply_programmatic_filters(self._token("2022-11-01T12:00:00Z"))
        assert outcome.filter_reason is FilterReason.DATE_STRING

    def test_slash_date(self):
        outcome = apply_programmatic_filters(self._token("11/01/2022"))
        assert outcome.filter_reason is FilterReason.DATE_STRING

    def test_url_like(self):
        outcome = apply_programmatic_filters(self._token("https://example.com/p?x=1"))
        assert outcome.filter_reason is FilterReason.URL_LIKE

    def test_too_short(self):
        outcome = apply_programmatic_filters(self._token("abc123"), min_length=8)
        assert outcome.filter_reason is FilterReason.TOO_SHORT

    def test_min_length_configurable(self):
        assert apply_programmatic_filters(self._token("abc123"), min_length=6).verdict is Verdict.UID

    def test_hex_string_passes(self):
        assert apply_programmatic_filters(self._token("f3a9c2d87b1e4c0a")).verdict is Verdict.UID


class TestWordLikeness:
    def test_delimited_words_score_high(self):
        assert score_word_likeness("share_button") >= 0.8

    def test_locale_tag_scores_high(self):
        assert score_word_likeness("en-US") >= 0.8

    def test_hex_identifier_scores_low(self):
        assert score_word_likeness("9f8e7d6c5b4a") <= 0.2

    def test_concatenated_words_score_high(self):
        assert score_word_likeness("sweetmagnolias") >= 0.8

    def test_domain_shaped_scores_high(self):
        assert score_word_likeness("cdn.tracker.com") >= 0.8

    def test_phrase_with_unknown_words(self):
        assert score_word_likeness("dental_internal_whitepaper_topic") >= 0.8

    def test_bounded(self):
        for value in ("", "x", "a-b", "123", "."):
            assert 0.0 <= score_word_likeness(value) <= 1.0


class TestCertainty:
    def test_identical_pair_plus_different(self):
        group = make_group({S1: "aaaa1111bb", S1R: "aaaa1111bb", C3: "bbbb2222cc"})
        assert certainty_category(group) is Certainty.TWO_IDENTICAL_PLUS_DIFFERENT

    def test_different_profiles_only(self):
        group = make_group({S2: "aaaa1111bb", C3: "bbbb2222cc"})
        assert certainty_category(group) is Certainty.DIFFERENT_PROFILES_ONLY

    def test_identical_pair_only(self):
        group = make_group({S1: "aaaa1111bb", S1R: "aaaa1111bb"})
        assert certainty_category(group) is Certainty.TWO_IDENTICAL_ONLY

    def test_one_profile_only(self):
        group = make_group({C3: "aaaa1111bb"})
        assert certainty_category(group) is Certainty.ONE_PROFILE_ONLY

    def test_all_four_crawlers(self):
        group = make_group({S1: "aaaa1111bb", S2: "bbbb2222cc", C3: "cccc3333dd", S1R: "aaaa1111bb"})
        assert certainty_category(group) is Certainty.TWO_IDENTICAL_PLUS_DIFFERENT


class TestInvariants:
    def test_order_independence(self):
        values = {S1: "aaaa1111bb", S2: "bbbb2222cc", C3: "cccc3333dd", S1R: "aaaa1111bb"}
        verdicts = set()
        for ordering in itertools.permutations(values.items()):
            cases = [make_case(c, v) for c, v in ordering]
            (group,) = align_tokens(cases)
            verdicts.add(classify_group(group)[0].verdict)
        assert verdicts == {Verdict.UID}

    def test_shared_beats_timestamp(self):
        # A value that is both shared across users and timestamp-shaped is
        # reported as shared; rule precedence is fixed.
        group = make_group({S1: "1667347200", S2: "1667347200", C3: "1667347200", S1R: "1667347200"})
        assert classify_static(group).verdict is Verdict.SHARED_ACROSS_USERS

    def test_session_beats_filters(self):
        group = make_group({S1: "1667347200", S2: "1667347201", C3: "1667347202", S1R: "1667347203"})
        assert classify_static(group).verdict is Verdict.SESSION_ID

    def test_exact_match_discipline(self):
        # Near-identical values are different values; no similarity metric.
        group = make_group({S1: "aaaa1111bb", S2: "aaaa1111bc", C3: "cccc3333dd", S1R: "aaaa1111bb"})
        assert classify_static(group).verdict is Verdict.UID

    @given(
        st.dictionaries(
            st.sampled_from([S1, S2, C3, S1R]),
            st.text(alphabet="abcdef0123456789", min_size=10, max_size=12),
            min_size=1,
            max_size=4,
        )
    )
    def test_classify_group_total(self, values):
        (group,) = align_tokens([make_case(c, v) for c, v in values.items()])
        outcome, score = classify_group(group)
        assert outcome.verdict in set(Verdict)
        if outcome.verdict is Verdict.NEEDS_REVIEW:
            assert score is not None and 0.0 <= score <= 1.0


class TestCanonicalProfiles:
    def test_repeat_crawler_shares_profile(self):
        assert canonical_profile(S1) == canonical_profile(S1R)
        assert len({canonical_profile(c) for c in (S1, S2, C3)}) == 3
