from __future__ import annotations

import random
from collections import deque
from datetime import date, datetime, timedelta, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smsintel.analysis import (
    AccountCategory,
    Campaign,
    ReporterStats,
    SenderKind,
    SpamMessage,
    StopwordLanguageDetector,
    blacklist_hit_rate,
    classify_sender,
    cluster_campaigns,
    cross_language,
    load_service_map,
    mask_template,
    message_from_dict,
    message_to_dict,
    quarter_of,
    reporter_stats,
    tag_reply_stats,
    template_groups,
    time_series,
    victim_service_names,
)
from smsintel.corpus import ImageRef, TweetRecord

UTC = timezone.utc


def msg(message_id, urls=(), language="en", text="hello there", day=1, tags=()):
    return SpamMessage(
        message_id=message_id,
        text=text,
        report_date=date(2021, 6, day),
        language=language,
        urls=list(urls),
        tagged_accounts=list(tags),
    )


class TestClassifySender:
    def test_alpha_sender_id(self):
        identity = classify_sender("Reserve")
        assert identity.kind is SenderKind.ALPHA_SENDER_ID
        assert identity.normalized == "Reserve"

    def test_regular_number_with_formatting(self):
        identity = classify_sender("+31 6 1234 5678")
        assert identity.kind is SenderKind.REGULAR_NUMBER
        assert identity.normalized == "+31612345678"

    def test_short_code(self):
        assert classify_sender("565656").kind is SenderKind.SHORT_CODE

    def test_parenthesized_number(self):
        identity = classify_sender("(0800) 123-456")
        assert identity.kind is SenderKind.REGULAR_NUMBER
        assert identity.normalized == "0800123456"

    def test_seven_digit_boundary(self):
        assert classify_sender("123456").kind is SenderKind.SHORT_CODE
        assert classify_sender("1234567").kind is SenderKind.REGULAR_NUMBER

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            classify_sender("   ")

    @given(st.text(min_size=1, max_size=24).filter(lambda s: s.strip()))
    @settings(max_examples=120)
    def test_total_and_exclusive(self, raw):
        identity = classify_sender(raw)
        assert identity.kind in set(SenderKind)
        assert identity.normalized


def bfs_components(messages) -> list[set[str]]:
    """Brute-force oracle: connected components of the shares-a-URL graph."""
    ids = [m.message_id for m in messages]
    by_id = {m.message_id: set(m.urls) for m in messages}
    seen: set[str] = set()
    components = []
    for start in ids:
        if start in seen:
            continue
        component = {start}
        queue = deque([start])
        seen.add(start)
        while queue:
            current = queue.popleft()
            for other in ids:
                if other in seen:
                    continue
                if by_id[current] & by_id[other]:
                    seen.add(other)
                    component.add(other)
                    queue.append(other)
        components.append(component)
    return components


class TestClusterCampaigns:
    def test_transitive_merge(self):
        messages = [
            msg("A", urls=["u1"]),
            msg("B", urls=["u1", "u2"]),
            msg("C", urls=["u2"]),
        ]
        clusters, campaigns = cluster_campaigns(messages)
        assert clusters == [{"A", "B", "C"}]
        assert len(campaigns) == 1
        assert campaigns[0].member_message_ids == {"A", "B", "C"}
        assert campaigns[0].shared_urls == {"u1", "u2"}

    def test_disjoint_urls_give_singletons(self):
        messages = [msg(f"m{i}", urls=[f"u{i}"]) for i in range(4)]
        clusters, campaigns = cluster_campaigns(messages)
        assert len(clusters) == 4
        assert campaigns == []

    def test_message_without_urls_is_singleton(self):
        messages = [msg("A", urls=["u1"]), msg("B", urls=["u1"]), msg("C")]
        clusters, campaigns = cluster_campaigns(messages)
        assert {"C"} in clusters
        assert len(campaigns) == 1

    def test_languages_are_union_of_members(self):
        messages = [
            msg("A", urls=["u"], language="en"),
            msg("B", urls=["u"], language="nl"),
        ]
        _, [campaign] = cluster_campaigns(messages)
        assert campaign.languages == {"en", "nl"}

    def _random_instance(self, rng, n_messages=60, n_urls=20):
        messages = []
        for i in range(n_messages):
            urls = rng.sample(range(n_urls), k=rng.randint(0, 3))
            messages.append(msg(f"m{i:03d}", urls=[f"u{u}" for u in urls]))
        return messages

    def test_matches_bfs_oracle_on_random_instances(self):
        rng = random.Random(99)
        for _ in range(30):
            messages = self._random_instance(rng)
            clusters, _ = cluster_campaigns(messages)
            expected = bfs_components(messages)
            assert sorted(map(sorted, clusters)) == sorted(map(sorted, expected))

    def test_permutation_invariant(self):
        rng = random.Random(5)
        messages = self._random_instance(rng)
        clusters, campaigns = cluster_campaigns(messages)
        shuffled = messages[:]
        rng.shuffle(shuffled)
        clusters2, campaigns2 = cluster_campaigns(shuffled)
        assert sorted(map(sorted, clusters)) == sorted(map(sorted, clusters2))
        assert [c.member_message_ids for c in campaigns] == [
            c.member_message_ids for c in campaigns2
        ]

    def test_partition_covers_all_messages(self):
        rng = random.Random(13)
        messages = self._random_instance(rng)
        clusters, _ = cluster_campaigns(messages)
        flattened = [m for cluster in clusters for m in cluster]
        assert sorted(flattened) == sorted(m.message_id for m in messages)


class TestCrossLanguage:
    def make_campaign(self, languages):
        return Campaign(1, {"a", "b"}, {"u"}, set(languages))

    def test_multi_language_included(self):
        campaigns = [self.make_campaign({"en", "fr", "de", "es"})]
        assert cross_language(campaigns) == campaigns

    def test_single_language_excluded(self):
        assert cross_language([self.make_campaign({"en"})]) == []

    def test_unknown_language_does_not_count(self):
        assert cross_language([self.make_campaign({"en", "und"})]) == []
        assert cross_language([self.make_campaign({"en", "und", "nl"})]) != []


class TestTemplates:
    def test_masking(self):
        masked = mask_template("Pay Rs 5000 at http://x.co/ab12 before 10/12/2021")
        assert "{AMT}" in masked and "{URL}" in masked
        assert "5000" not in masked
        assert "##/##/####" in masked

    def test_same_template_different_amounts_and_urls(self):
        a = msg("a", text="Dear customer your card points worth Rs 4200 expire today, convert at bit.ly/x1")
        b = msg("b", text="Dear customer your card points worth Rs 9100 expire today, convert at bit.ly/zz9")
        groups = template_groups([a, b])
        assert any(len(g) == 2 for g in groups)

    def test_identical_texts_grouped(self):
        a, b = msg("a", text="same text"), msg("b", text="same text")
        assert any(len(g) == 2 for g in template_groups([a, b]))

    def test_disjoint_texts_separate(self):
        a = msg("a", text="completely different words here")
        b = msg("b", text="nothing shared at all between")
        groups = template_groups([a, b])
        assert all(len(g) == 1 for g in groups)


class TestReporterStats:
    def tweet(self, author, n):
        return TweetRecord(
            tweet_id=f"t{author}-{n}",
            text="scam sms",
            created_at=datetime(2021, 1, 1, tzinfo=UTC),
            author_id=author,
            conversation_id=f"c{author}-{n}",
            attachments=(ImageRef(f"i{author}{n}", "x.png", 10, 10),),
        )

    def test_all_single(self):
        tweets = [self.tweet(f"a{i}", 0) for i in range(10)]
        stats = reporter_stats(tweets)
        assert stats.fraction_single == 1.0

    def test_nine_of_ten_single(self):
        tweets = [self.tweet(f"a{i}", 0) for i in range(9)]
        tweets += [self.tweet("heavy", n) for n in range(6)]
        stats = reporter_stats(tweets)
        assert stats.fraction_single == 0.9
        assert stats.author_counts["heavy"] == 6
        assert stats.fraction_under_five == 0.9
        assert stats.fraction_over_fifty == 0.0

    def test_empty_input(self):
        stats = reporter_stats([])
        assert stats == ReporterStats({}, None, None, None)


class TestTagReplyStats:
    BASE = datetime(2021, 3, 1, 12, 0, 0, tzinfo=UTC)

    def tweet(self, n, tags, conversation):
        return TweetRecord(
            tweet_id=f"t{n}",
            text="scam sms",
            created_at=self.BASE,
            author_id=f"a{n}",
            conversation_id=conversation,
            attachments=(ImageRef(f"i{n}", "x.png", 10, 10),),
            tagged_accounts=tuple(tags),
        )

    def test_day_30_counts_day_31_does_not(self):
        tweets = [self.tweet(1, ["BankCo"], "c1"), self.tweet(2, ["BankCo"], "c2")]
        replies = [
            ("c1", "BankCo", self.BASE + timedelta(days=30)),
            ("c2", "BankCo", self.BASE + timedelta(days=31)),
        ]
        [stats] = tag_reply_stats(tweets, replies)
        assert stats.tag_count == 2
        assert stats.replied_count == 1
        assert stats.reply_rate == 0.5

    def test_never_replied(self):
        tweets = [self.tweet(1, ["Ghost"], "c1")]
        [stats] = tag_reply_stats(tweets, [("c1", "SomeoneElse", self.BASE)])
        assert stats.reply_rate == 0.0

    def test_reply_in_other_conversation_ignored(self):
        tweets = [self.tweet(1, ["BankCo"], "c1")]
        replies = [("c-other", "BankCo", self.BASE + timedelta(days=1))]
        [stats] = tag_reply_stats(tweets, replies)
        assert stats.replied_count == 0

    def test_reply_before_tweet_ignored(self):
        tweets = [self.tweet(1, ["BankCo"], "c1")]
        replies = [("c1", "BankCo", self.BASE - timedelta(days=1))]
        [stats] = tag_reply_stats(tweets, replies)
        assert stats.replied_count == 0

    def test_replied_never_exceeds_tagged(self):
        tweets = [self.tweet(n, ["BankCo"], f"c{n}") for n in range(5)]
        replies = [(f"c{n}", "BankCo", self.BASE + timedelta(days=1)) for n in range(5)]
        replies *= 3  # duplicate replies must not inflate the count
        [stats] = tag_reply_stats(tweets, replies)
        assert stats.replied_count <= stats.tag_count == 5

    def test_table_shape_and_ordering(self):
        tweets = [self.tweet(1, ["Busy", "Quiet"], "c1"), self.tweet(2, ["Busy"], "c2")]
        stats = tag_reply_stats(tweets, [])
        assert [(s.handle, s.tag_count) for s in stats] == [("Busy", 2), ("Quiet", 1)]


class TestTimeSeries:
    def test_single_bucket(self):
        messages = [msg(f"m{i}", day=1) for i in range(3)]
        for m in messages:
            m.report_date = date(2021, 11, 10 + 2 * int(m.message_id[1]))
        rows = time_series(messages)
        assert [(r.bucket, r.key, r.count) for r in rows] == [("2021Q4", "en", 3)]

    def test_quarter_boundary(self):
        a, b = msg("a"), msg("b")
        a.report_date = date(2021, 3, 31)
        b.report_date = date(2021, 4, 1)
        rows = time_series([a, b])
        assert [r.bucket for r in rows] == ["2021Q1", "2021Q2"]

    def test_empty(self):
        assert time_series([]) == []

    def test_quarter_of(self):
        assert quarter_of(date(2021, 1, 1)) == "2021Q1"
        assert quarter_of(date(2021, 12, 31)) == "2021Q4"

    def test_counts_sum_per_group(self):
        messages = [msg(f"m{i}", language="en" if i % 2 else "nl", day=1 + i % 3) for i in range(9)]
        rows = time_series(messages)
        by_lang: dict[str, int] = {}
        for row in rows:
            by_lang[row.key] = by_lang.get(row.key, 0) + row.count
        assert by_lang["en"] == sum(1 for m in messages if m.language == "en")
        assert by_lang["nl"] == sum(1 for m in messages if m.language == "nl")

    def test_service_grouping_counts_distinct_services(self):
        service_map = {"BankCo": "Bank Co", "BankCoHelp": "Bank Co"}
        a = msg("a", tags=["BankCo", "BankCoHelp"])  # both map to one service
        b = msg("b", tags=["BankCo"])
        c = msg("c", tags=["Unmapped"])
        rows = time_series([a, b, c], key="service", service_map=service_map)
        assert [(r.key, r.count) for r in rows] == [("Bank Co", 2)]

    def test_service_requires_map(self):
        with pytest.raises(ValueError):
            time_series([], key="service")


class TestLanguageDetector:
    def test_bundled_profiles(self):
        detector = StopwordLanguageDetector.bundled()
        assert detector.detect_language("Please verify your account now, it is urgent") == "en"
        assert detector.detect_language("Betaal nu uw rekening via deze link om blokkering te voorkomen") == "nl"
        assert detector.detect_language("Su cuenta ha sido bloqueada, complete la verificación ahora") == "es"
        assert detector.detect_language("Dapatkan pinjaman dana dengan cepat, hubungi kami segera") == "id"

    def test_unknown_fallback(self):
        detector = StopwordLanguageDetector.bundled()
        assert detector.detect_language("zzz qqq xxx") == "und"
        assert detector.detect_language("") == "und"


class TestServiceMapAndPhones:
    def test_bundled_service_map(self):
        service_map = load_service_map()
        assert service_map["SafePayBank"].category is AccountCategory.VICTIM_SERVICE
        names = victim_service_names(service_map)
        assert "SafePayBank" in names
        assert "CyberPolice" not in names  # law enforcement is not a victim service

    def test_blacklist_hit_rate(self):
        class StubBlacklist:
            def is_listed(self, number):
                return number.endswith("7")

        numbers = [f"+3161234567{d}" for d in range(10)]
        assert blacklist_hit_rate(numbers, StubBlacklist()) == 0.1
        with pytest.raises(ValueError):
            blacklist_hit_rate([], StubBlacklist())

    def test_fixture_phone_clients(self, tmp_path):
        from smsintel.analysis import FixtureBlacklist, FixturePhoneLookup

        lookup_file = tmp_path / "phones.json"
        lookup_file.write_text(
            '{"+31612345678": {"country": "NL", "carrier": "KTel", "line_type": "mobile"}}'
        )
        lookup = FixturePhoneLookup(lookup_file)
        info = lookup.lookup("+31612345678")
        assert info is not None and (info.country, info.line_type) == ("NL", "mobile")
        assert lookup.lookup("+10000000000") is None

        blacklist_file = tmp_path / "blocked.json"
        blacklist_file.write_text('["+31612345678"]')
        client = FixtureBlacklist(blacklist_file)
        assert blacklist_hit_rate(["+31612345678", "+4470000"], client) == 0.5


class TestMessageSerde:
    def test_round_trip(self):
        original = msg("m1", urls=["http://a.b/c"], tags=["BankCo"])
        original.sender_raw = "+31 6 1234"
        original.category = "fraud"
        again = message_from_dict(message_to_dict(original))
        assert again == original
