"""Message analytics: sender typing, campaign clustering, reporting stats."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Protocol, Sequence

from .corpus import TweetRecord, parse_rfc3339

logger = logging.getLogger(__name__)

REPLY_WINDOW_DAYS = 30
TEMPLATE_SIMILARITY = 0.8
UNKNOWN_LANGUAGE = "und"

_SENDER_STRIP_RE = re.compile(r"[ \-()]")
_DIGITS_RE = re.compile(r"\+?\d+")
_MASK_URL_RE = re.compile(
    r"https?://\S+|(?:[\w-]+\.)+[a-z]{2,}(?:/\S*)?", re.IGNORECASE
)
_MASK_AMOUNT_RE = re.compile(
    r"(?:[$€£₹]|\b(?:rs|rp|eur|usd|gbp|inr|idr)\b\.?)\s?\d[\d.,]*",
    re.IGNORECASE,
)
_TOKEN_RE = re.compile(r"[\W_]+")  # splits on anything non-alphanumeric


class SenderKind(Enum):
    REGULAR_NUMBER = "regular_number"
    SHORT_CODE = "short_code"
    ALPHA_SENDER_ID = "alpha_sender_id"


@dataclass(frozen=True)
class SenderIdentity:
    raw: str
    kind: SenderKind
    normalized: str


def classify_sender(raw: str) -> SenderIdentity:
    """Type a raw sender string as number, short code, or alphanumeric ID.

    Spaces, dashes, and parentheses are stripped first. A '+'-optional digit
    string of up to 6 digits is a short code and 7 or more a regular number;
    anything else is an alphanumeric sender ID kept verbatim.
    """
    trimmed = raw.strip()
    if not trimmed:
        raise ValueError("sender string is empty after trimming")
    stripped = _SENDER_STRIP_RE.sub("", trimmed)
    if _DIGITS_RE.fullmatch(stripped):
        digits = len(stripped.lstrip("+"))
        kind = SenderKind.REGULAR_NUMBER if digits >= 7 else SenderKind.SHORT_CODE
        return SenderIdentity(raw=raw, kind=kind, normalized=stripped)
    return SenderIdentity(raw=raw, kind=SenderKind.ALPHA_SENDER_ID, normalized=trimmed)


@dataclass
class SpamMessage:
    """The pipeline's central record: one extracted SMS spam message."""

    message_id: str
    text: str
    report_date: date
    language: str = UNKNOWN_LANGUAGE
    sender_raw: Optional[str] = None
    urls: list[str] = field(default_factory=list)
    source_tweet_id: str = ""
    author_id: str = ""
    tagged_accounts: list[str] = field(default_factory=list)
    category: Optional[str] = None


def message_to_dict(message: SpamMessage) -> dict:
    return {
        "message_id": message.message_id,
        "text": message.text,
        "report_date": message.report_date.isoformat(),
        "language": message.language,
        "sender_raw": message.sender_raw,
        "urls": list(message.urls),
        "source_tweet_id": message.source_tweet_id,
        "author_id": message.author_id,
        "tagged_accounts": list(message.tagged_accounts),
        "category": message.category,
    }


def message_from_dict(obj: dict) -> SpamMessage:
    return SpamMessage(
        message_id=str(obj["message_id"]),
        text=str(obj["text"]),
        report_date=date.fromisoformat(obj["report_date"]),
        language=str(obj.get("language", UNKNOWN_LANGUAGE)),
        sender_raw=obj.get("sender_raw"),
        urls=[str(u) for u in obj.get("urls", [])],
        source_tweet_id=str(obj.get("source_tweet_id", "")),
        author_id=str(obj.get("author_id", "")),
        tagged_accounts=[str(h) for h in obj.get("tagged_accounts", [])],
        category=obj.get("category"),
    )


class UnionFind:
    """Disjoint-set forest with path compression and union by rank."""

    def __init__(self) -> None:
        self.parent: dict[str, str] = {}
        self.rank: dict[str, int] = {}

    def find(self, x: str) -> str:
        if x not in self.parent:
            self.parent[x] = x
            self.rank[x] = 0
            return x
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x: str, y: str) -> None:
        rx, ry = self.find(x), self.find(y)
        if rx == ry:
            return
        if self.rank[rx] < self.rank[ry]:
            rx, ry = ry, rx
        self.parent[ry] = rx
        if self.rank[rx] == self.rank[ry]:
            self.rank[rx] += 1


@dataclass
class Campaign:
    """A cluster of two or more messages linked by shared URLs."""

    campaign_id: int
    member_message_ids: set[str]
    shared_urls: set[str]
    languages: set[str]


def cluster_campaigns(
    messages: Sequence[SpamMessage],
) -> tuple[list[set[str]], list[Campaign]]:
    """Merge messages into clusters whenever they share a URL, to fixpoint.

    Returns the full partition (message_id sets, singletons included) and
    the campaigns, i.e. clusters with at least two members. Both are ordered
    by their smallest member id, which makes the result independent of input
    order.
    """
    uf = UnionFind()
    url_owner: dict[str, str] = {}
    for message in messages:
        uf.find(message.message_id)
        for url in message.urls:
            if url in url_owner:
                uf.union(url_owner[url], message.message_id)
            else:
                url_owner[url] = message.message_id
    components: dict[str, set[str]] = defaultdict(set)
    for message in messages:
        components[uf.find(message.message_id)].add(message.message_id)
    clusters = sorted(components.values(), key=min)
    by_id = {message.message_id: message for message in messages}
    campaigns: list[Campaign] = []
    for cluster in clusters:
        if len(cluster) < 2:
            continue
        members = [by_id[mid] for mid in cluster]
        campaigns.append(
            Campaign(
                campaign_id=len(campaigns) + 1,
                member_message_ids=set(cluster),
                shared_urls={url for m in members for url in m.urls},
                languages={m.language for m in members},
            )
        )
    return clusters, campaigns


def cross_language(campaigns: Iterable[Campaign]) -> list[Campaign]:
    """Campaigns spanning at least two identified languages; "und" never counts."""
    return [
        c for c in campaigns if len(c.languages - {UNKNOWN_LANGUAGE}) >= 2
    ]


def mask_template(text: str) -> str:
    """Blind the variable parts of a message: URLs, amounts, then digits."""
    masked = _MASK_URL_RE.sub("{URL}", text)
    masked = _MASK_AMOUNT_RE.sub("{AMT}", masked)
    return re.sub(r"\d", "#", masked)


def _jaccard(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def template_groups(
    messages: Sequence[SpamMessage], similarity: float = TEMPLATE_SIMILARITY
) -> list[list[SpamMessage]]:
    """Single-linkage grouping by token Jaccard similarity of masked texts."""
    token_sets = [set(mask_template(m.text).split()) for m in messages]
    uf = UnionFind()
    for i, message in enumerate(messages):
        uf.find(message.message_id)
        for j in range(i):
            if _jaccard(token_sets[i], token_sets[j]) >= similarity:
                uf.union(messages[j].message_id, message.message_id)
    grouped: dict[str, list[SpamMessage]] = defaultdict(list)
    for message in messages:
        grouped[uf.find(message.message_id)].append(message)
    return sorted(grouped.values(), key=lambda g: min(m.message_id for m in g))


@dataclass
class ReporterStats:
    """Reports-per-author histogram with headline concentration fractions."""

    author_counts: dict[str, int]
    fraction_single: Optional[float]
    fraction_under_five: Optional[float]
    fraction_over_fifty: Optional[float]


def reporter_stats(tweets: Sequence[TweetRecord]) -> ReporterStats:
    counts = Counter(t.author_id for t in tweets)
    n_authors = len(counts)
    if n_authors == 0:
        return ReporterStats({}, None, None, None)
    return ReporterStats(
        author_counts=dict(counts),
        fraction_single=sum(1 for c in counts.values() if c == 1) / n_authors,
        fraction_under_five=sum(1 for c in counts.values() if c < 5) / n_authors,
        fraction_over_fifty=sum(1 for c in counts.values() if c > 50) / n_authors,
    )


class Reply(NamedTuple):
    conversation_id: str
    author_id: str
    created_at: datetime


@dataclass
class TagStats:
    handle: str
    tag_count: int
    replied_count: int

    @property
    def reply_rate(self) -> float:
        return self.replied_count / self.tag_count if self.tag_count else 0.0


def tag_reply_stats(
    tweets: Sequence[TweetRecord],
    replies: Iterable[tuple[str, str, datetime]],
    window_days: int = REPLY_WINDOW_DAYS,
) -> list[TagStats]:
    """Per tagged handle: how many tweets tagged it and how many it answered.

    A tweet counts as replied when the handle's account posted in the same
    conversation no later than ``window_days`` days (inclusive) after the
    tweet. Results are ordered by tag count descending, then handle.
    """
    by_conversation: dict[str, list[Reply]] = defaultdict(list)
    for item in replies:
        reply = Reply(*item)
        by_conversation[reply.conversation_id].append(reply)
    tag_counts: Counter[str] = Counter()
    replied_counts: Counter[str] = Counter()
    for tweet in tweets:
        deadline = tweet.created_at + timedelta(days=window_days)
        conversation = by_conversation.get(tweet.conversation_id, [])
        for handle in tweet.tagged_accounts:
            tag_counts[handle] += 1
            if any(
                r.author_id.lower() == handle.lower()
                and tweet.created_at <= r.created_at <= deadline
                for r in conversation
            ):
                replied_counts[handle] += 1
    stats = [
        TagStats(handle=h, tag_count=n, replied_count=replied_counts[h])
        for h, n in tag_counts.items()
    ]
    stats.sort(key=lambda s: (-s.tag_count, s.handle))
    return stats


def read_replies(path: str | Path) -> list[Reply]:
    """NDJSON replies: ``{"conversation_id", "author_id", "created_at"}``."""
    out: list[Reply] = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(
                Reply(
                    conversation_id=str(obj["conversation_id"]),
                    author_id=str(obj["author_id"]),
                    created_at=parse_rfc3339(obj["created_at"]),
                )
            )
    return out


def quarter_of(day: date) -> str:
    return f"{day.year}Q{(day.month - 1) // 3 + 1}"


class BucketCount(NamedTuple):
    bucket: str
    key: str
    count: int


def time_series(
    messages: Sequence[SpamMessage],
    key: str = "language",
    service_map: Optional[dict[str, str]] = None,
) -> list[BucketCount]:
    """Quarterly counts grouped by language or by tagged victim service.

    With ``key="service"`` each message counts once per distinct mapped
    service among its tagged handles; unmapped handles are ignored. Rows are
    ordered by bucket ascending, then count descending, then key.
    """
    if key not in ("language", "service"):
        raise ValueError(f"unsupported group key: {key!r}")
    if key == "service" and service_map is None:
        raise ValueError("service grouping requires a handle-to-service map")
    counts: Counter[tuple[str, str]] = Counter()
    for message in messages:
        bucket = quarter_of(message.report_date)
        if key == "language":
            counts[(bucket, message.language)] += 1
        else:
            assert service_map is not None
            services = {
                service_map[h] for h in message.tagged_accounts if h in service_map
            }
            for service in services:
                counts[(bucket, service)] += 1
    rows = [BucketCount(bucket, group, n) for (bucket, group), n in counts.items()]
    rows.sort(key=lambda r: (r.bucket, -r.count, r.key))
    return rows


class LanguageDetector(Protocol):
    def detect_language(self, text: str) -> str: ...


class StopwordLanguageDetector:
    """Tiny language identifier scoring high-frequency-word profile hits.

    The best-scoring language wins when it collects at least ``min_hits``
    matches; otherwise the text stays "und". Ties resolve alphabetically.
    """

    def __init__(self, profiles: dict[str, Iterable[str]], min_hits: int = 2):
        self._profiles = {
            lang: frozenset(w.lower() for w in words)
            for lang, words in profiles.items()
        }
        self._min_hits = min_hits

    @classmethod
    def bundled(cls) -> "StopwordLanguageDetector":
        text = (
            resources.files("smsintel.data")
            .joinpath("language_profiles.json")
            .read_text(encoding="utf-8")
        )
        return cls(json.loads(text))

    @classmethod
    def from_file(cls, path: str | Path) -> "StopwordLanguageDetector":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def detect_language(self, text: str) -> str:
        tokens = [t for t in _TOKEN_RE.split(text.lower()) if t]
        best_lang = UNKNOWN_LANGUAGE
        best_score = self._min_hits - 1
        for lang in sorted(self._profiles):
            score = sum(1 for t in tokens if t in self._profiles[lang])
            if score > best_score:
                best_lang, best_score = lang, score
        return best_lang


class AccountCategory(Enum):
    VICTIM_SERVICE = "victim_service"
    LAW_ENFORCEMENT = "law_enforcement"
    CARRIER = "carrier"
    INDIVIDUAL = "individual"
    ANTI_SPAM = "anti_spam"
    OTHER = "other"


@dataclass(frozen=True)
class ServiceEntry:
    handle: str
    name: str
    category: AccountCategory


def load_service_map(path: Optional[str | Path] = None) -> dict[str, ServiceEntry]:
    """Curated handle-to-organization map; falls back to the bundled file."""
    if path is None:
        text = (
            resources.files("smsintel.data")
            .joinpath("service_handles.json")
            .read_text(encoding="utf-8")
        )
    else:
        text = Path(path).read_text(encoding="utf-8")
    raw = json.loads(text)
    return {
        handle: ServiceEntry(
            handle=handle,
            name=str(entry["name"]),
            category=AccountCategory(entry["category"]),
        )
        for handle, entry in raw.items()
    }


def victim_service_names(service_map: dict[str, ServiceEntry]) -> dict[str, str]:
    """Handle-to-name projection restricted to victim services."""
    return {
        handle: entry.name
        for handle, entry in service_map.items()
        if entry.category is AccountCategory.VICTIM_SERVICE
    }


@dataclass(frozen=True)
class PhoneInfo:
    number: str
    country: str
    carrier: str
    line_type: str


class PhoneLookupClient(Protocol):
    def lookup(self, number: str) -> Optional[PhoneInfo]: ...


class BlacklistClient(Protocol):
    def is_listed(self, number: str) -> bool: ...


class FixturePhoneLookup:
    """Phone metadata from a JSON file: ``{number: {country, carrier, line_type}}``."""

    def __init__(self, path: str | Path):
        self._data = json.loads(Path(path).read_text(encoding="utf-8"))

    def lookup(self, number: str) -> Optional[PhoneInfo]:
        entry = self._data.get(number)
        if entry is None:
            return None
        return PhoneInfo(
            number=number,
            country=str(entry.get("country", "")),
            carrier=str(entry.get("carrier", "")),
            line_type=str(entry.get("line_type", "")),
        )


class FixtureBlacklist:
    """Blocklist membership from a JSON file: a list of numbers."""

    def __init__(self, path: str | Path):
        self._listed = set(json.loads(Path(path).read_text(encoding="utf-8")))

    def is_listed(self, number: str) -> bool:
        return number in self._listed


def blacklist_hit_rate(numbers: Sequence[str], client: BlacklistClient) -> float:
    if not numbers:
        raise ValueError("blacklist_hit_rate requires at least one number")
    return sum(1 for n in numbers if client.is_listed(n)) / len(numbers)
