"""Tweet corpus ingestion: NDJSON parsing, query matching, windowing, dedup."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import IO, Iterable, Iterator, Optional, Protocol

logger = logging.getLogger(__name__)

DEFAULT_KEYWORDS = frozenset(
    {"malicious", "spam", "phish", "phishing", "smish", "scam", "fraud"}
)
DEFAULT_ANCHOR = "sms"

_TOKEN_RE = re.compile(r"[\W_]+")  # splits on anything non-alphanumeric
_WS_RE = re.compile(r"\s+")


def tokenize(text: str) -> list[str]:
    """Case-fold and split on any non-alphanumeric character."""
    return [t for t in _TOKEN_RE.split(text.lower()) if t]


def parse_rfc3339(value: str) -> datetime:
    """Parse an RFC 3339 timestamp and normalize it to UTC.

    Naive timestamps are treated as already being UTC.
    """
    raw = value.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    parsed = datetime.fromisoformat(raw)
    if parsed.tzinfo is None:
        return parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def format_rfc3339(value: datetime) -> str:
    return value.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class ImageRef:
    """A tweet attachment; ``location`` may be a pre-fetched path or a URL."""

    image_id: str
    location: str
    width_px: int
    height_px: int

    def __post_init__(self) -> None:
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError(f"image {self.image_id!r}: non-positive dimensions")


@dataclass(frozen=True)
class TweetRecord:
    """One collected tweet with its attachments and tagging metadata."""

    tweet_id: str
    text: str
    created_at: datetime
    author_id: str
    conversation_id: str
    attachments: tuple[ImageRef, ...] = ()
    tagged_accounts: tuple[str, ...] = ()
    source_agent: str = ""
    geo_country: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.tweet_id:
            raise ValueError("tweet_id must be non-empty")
        if self.created_at.tzinfo is None:
            raise ValueError(f"tweet {self.tweet_id}: created_at must be tz-aware")
        handles = list(self.tagged_accounts)
        if any(h.startswith("@") for h in handles):
            raise ValueError(f"tweet {self.tweet_id}: tagged accounts carry '@'")
        if len(set(handles)) != len(handles):
            raise ValueError(f"tweet {self.tweet_id}: duplicate tagged accounts")
        image_ids = [a.image_id for a in self.attachments]
        if len(set(image_ids)) != len(image_ids):
            raise ValueError(f"tweet {self.tweet_id}: duplicate attachment ids")


@dataclass(frozen=True)
class QuerySpec:
    """Keyword query: an anchor token plus at least one topical keyword."""

    keyword_set: frozenset[str] = DEFAULT_KEYWORDS
    anchor_token: str = DEFAULT_ANCHOR
    require_images: bool = True

    def __post_init__(self) -> None:
        if not self.keyword_set:
            raise ValueError("keyword_set must be non-empty")
        if not self.anchor_token:
            raise ValueError("anchor_token must be non-empty")


def build_query_string(q: QuerySpec) -> str:
    """Render a QuerySpec in search-API syntax, for live search adapters."""
    keywords = " OR ".join(sorted(q.keyword_set))
    parts = [f"({keywords})", q.anchor_token]
    if q.require_images:
        parts.append("has: images")
    return " ".join(parts)


@dataclass
class SkippedLine:
    line_no: int
    reason: str


@dataclass
class ParseResult:
    records: list[TweetRecord] = field(default_factory=list)
    skips: list[SkippedLine] = field(default_factory=list)


def record_from_dict(obj: dict) -> TweetRecord:
    attachments = tuple(
        ImageRef(
            image_id=str(a["image_id"]),
            location=str(a.get("location", "")),
            width_px=int(a["width_px"]),
            height_px=int(a["height_px"]),
        )
        for a in obj.get("attachments", [])
    )
    return TweetRecord(
        tweet_id=str(obj["tweet_id"]),
        text=str(obj["text"]),
        created_at=parse_rfc3339(str(obj["created_at"])),
        author_id=str(obj.get("author_id", "")),
        conversation_id=str(obj.get("conversation_id", "")),
        attachments=attachments,
        tagged_accounts=tuple(str(h) for h in obj.get("tagged_accounts", [])),
        source_agent=str(obj.get("source_agent", "")),
        geo_country=obj.get("geo_country"),
    )


def record_to_dict(record: TweetRecord) -> dict:
    return {
        "tweet_id": record.tweet_id,
        "text": record.text,
        "created_at": format_rfc3339(record.created_at),
        "author_id": record.author_id,
        "conversation_id": record.conversation_id,
        "attachments": [
            {
                "image_id": a.image_id,
                "location": a.location,
                "width_px": a.width_px,
                "height_px": a.height_px,
            }
            for a in record.attachments
        ],
        "tagged_accounts": list(record.tagged_accounts),
        "source_agent": record.source_agent,
        "geo_country": record.geo_country,
    }


def parse_corpus(stream: IO[bytes] | IO[str] | Iterable[str]) -> ParseResult:
    """Parse newline-delimited JSON tweet records.

    Lines that fail to parse or violate record invariants are skipped and
    recorded with their 1-based line number; parsing continues. Unique
    tweet ids are enforced within one stream.
    """
    result = ParseResult()
    seen_ids: set[str] = set()
    for line_no, raw in enumerate(stream, start=1):
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            record = record_from_dict(obj)
            if record.tweet_id in seen_ids:
                raise ValueError(f"duplicate tweet_id {record.tweet_id!r}")
            seen_ids.add(record.tweet_id)
        except (ValueError, KeyError, TypeError) as exc:
            logger.warning("skipping corpus line %d: %s", line_no, exc)
            result.skips.append(SkippedLine(line_no, str(exc)))
            continue
        result.records.append(record)
    return result


def matches_query(record: TweetRecord, q: QuerySpec) -> bool:
    """Whole-token query match: anchor present, >=1 keyword, images if required."""
    tokens = set(tokenize(record.text))
    if q.anchor_token not in tokens:
        return False
    if not (q.keyword_set & tokens):
        return False
    if q.require_images and not record.attachments:
        return False
    return True


def filter_window(
    records: Iterable[TweetRecord], start: datetime, end: datetime
) -> list[TweetRecord]:
    """Keep records with start <= created_at <= end (both ends inclusive)."""
    if start > end:
        raise ValueError(f"window start {start} is after end {end}")
    return [r for r in records if start <= r.created_at <= end]


def normalize_message_text(text: str) -> str:
    """Trim and collapse internal whitespace runs; case is preserved."""
    return _WS_RE.sub(" ", text.strip())


def dedup_messages(texts: Iterable[str]) -> list[str]:
    """First occurrence of each whitespace-normalized text, in stable order."""
    seen: set[str] = set()
    out: list[str] = []
    for text in texts:
        normalized = normalize_message_text(text)
        if normalized not in seen:
            seen.add(normalized)
            out.append(normalized)
    return out


@dataclass
class SearchPage:
    records: list[TweetRecord]
    next_token: Optional[str]


class SearchClient(Protocol):
    """API-shaped tweet search; adapters may be live or fixture-backed."""

    def search(
        self,
        query: QuerySpec,
        window: tuple[datetime, datetime],
        pagination_token: Optional[str] = None,
    ) -> SearchPage: ...


class FixtureSearchClient:
    """Search adapter over a local corpus; paginates like the remote API."""

    def __init__(self, records: Iterable[TweetRecord], page_size: int = 100):
        if page_size <= 0:
            raise ValueError("page_size must be positive")
        self._records = list(records)
        self._page_size = page_size

    def search(
        self,
        query: QuerySpec,
        window: tuple[datetime, datetime],
        pagination_token: Optional[str] = None,
    ) -> SearchPage:
        matching = [
            r
            for r in filter_window(self._records, window[0], window[1])
            if matches_query(r, query)
        ]
        offset = int(pagination_token) if pagination_token else 0
        page = matching[offset : offset + self._page_size]
        next_offset = offset + self._page_size
        next_token = str(next_offset) if next_offset < len(matching) else None
        return SearchPage(records=page, next_token=next_token)


def search_all(
    client: SearchClient, query: QuerySpec, window: tuple[datetime, datetime]
) -> Iterator[TweetRecord]:
    """Drain a paginated search client."""
    token: Optional[str] = None
    while True:
        page = client.search(query, window, token)
        yield from page.records
        if page.next_token is None:
            return
        token = page.next_token


def record_from_api_payload(obj: dict) -> TweetRecord:
    """Map one remote search-API tweet object onto a TweetRecord."""
    attachments = tuple(
        ImageRef(
            image_id=str(m["media_key"]),
            location=str(m.get("url", "")),
            width_px=int(m.get("width", 1)),
            height_px=int(m.get("height", 1)),
        )
        for m in obj.get("media", [])
        if m.get("type", "photo") == "photo"
    )
    tagged = tuple(
        dict.fromkeys(
            str(mention["username"]).lstrip("@")
            for mention in obj.get("entities", {}).get("mentions", [])
        )
    )
    return TweetRecord(
        tweet_id=str(obj["id"]),
        text=str(obj["text"]),
        created_at=parse_rfc3339(str(obj["created_at"])),
        author_id=str(obj.get("author_id", "")),
        conversation_id=str(obj.get("conversation_id", obj["id"])),
        attachments=attachments,
        tagged_accounts=tagged,
        source_agent=str(obj.get("source", "")),
        geo_country=obj.get("geo", {}).get("country_code"),
    )


class HttpSearchClient:
    """Live search adapter; reads its bearer token from ``TWEET_API_TOKEN``.

    Pagination, windowing, and the rendered keyword query mirror the fixture
    adapter so callers can swap one for the other.
    """

    TOKEN_ENV = "TWEET_API_TOKEN"

    def __init__(self, base_url: str, page_size: int = 100, timeout: float = 30.0):
        import os

        token = os.environ.get(self.TOKEN_ENV)
        if not token:
            raise RuntimeError(f"set {self.TOKEN_ENV} to use the live search client")
        self._base_url = base_url.rstrip("/")
        self._token = token
        self._page_size = page_size
        self._timeout = timeout

    def search(
        self,
        query: QuerySpec,
        window: tuple[datetime, datetime],
        pagination_token: Optional[str] = None,
    ) -> SearchPage:
        import urllib.parse
        import urllib.request

        params = {
            "query": build_query_string(query),
            "start_time": format_rfc3339(window[0]),
            "end_time": format_rfc3339(window[1]),
            "max_results": str(self._page_size),
        }
        if pagination_token:
            params["next_token"] = pagination_token
        request = urllib.request.Request(
            f"{self._base_url}/search?{urllib.parse.urlencode(params)}",
            headers={"Authorization": f"Bearer {self._token}"},
        )
        with urllib.request.urlopen(request, timeout=self._timeout) as response:
            payload = json.loads(response.read().decode("utf-8"))
        records = [record_from_api_payload(o) for o in payload.get("data", [])]
        return SearchPage(
            records=records, next_token=payload.get("meta", {}).get("next_token")
        )
