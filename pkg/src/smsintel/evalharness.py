"""Anti-spam evaluation harness: test-set construction, chunked delivery
simulation, and detection / blocking / mis-alarm rate arithmetic."""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

logger = logging.getLogger(__name__)

TWITTER_N = 100
HISTORICAL_N = 50
ADS_N = 75
FRAUD_N = 75
TESTSET_N = TWITTER_N + HISTORICAL_N

SEGMENT_LIMIT = 160
TAG_PREFIX_LEN = 7  # six digits plus one space
DELIVERY_WINDOW_S = 300
SCORE_CUTOFF = 0.5

_TAG_RE = re.compile(r"^[0-9]{6}$")
_SEGMENT_TAG_RE = re.compile(r"^([0-9]{6}) ")


class Category(Enum):
    ADS = "ads"
    FRAUD = "fraud"


class Source(Enum):
    TWITTER = "twitter"
    HISTORICAL = "historical"


class Truth(Enum):
    SPAM = "spam"
    BENIGN = "benign"


@dataclass(frozen=True)
class TestMessage:
    __test__ = False  # keep pytest from collecting the domain type

    tag_id: str
    text: str
    category: Optional[Category]
    source: Source
    truth: Truth = Truth.SPAM

    def __post_init__(self) -> None:
        if not _TAG_RE.match(self.tag_id):
            raise ValueError(f"tag_id must be exactly 6 digits, got {self.tag_id!r}")
        if self.truth is Truth.SPAM and self.category is None:
            raise ValueError(f"spam message {self.tag_id} needs a category")


@dataclass(frozen=True)
class PoolMessage:
    text: str
    category: Category


class InfeasibleTestSetError(ValueError):
    """The pools cannot satisfy the source and category marginals."""


def _pool_split(pool: Sequence[PoolMessage]) -> tuple[list[PoolMessage], list[PoolMessage]]:
    ads = [m for m in pool if m.category is Category.ADS]
    fraud = [m for m in pool if m.category is Category.FRAUD]
    return ads, fraud


def build_testset(
    twitter_pool: Sequence[PoolMessage],
    historical_pool: Sequence[PoolMessage],
    seed: int,
) -> list[TestMessage]:
    """Draw a 150-message spam test set: 100 Twitter-reported plus 50
    historical, balanced to exactly 75 ads and 75 fraud overall.

    The per-source category split is a free variable chosen at random within
    the feasible range; everything is driven by the seed, including the
    unique 6-digit tag ids. Raises InfeasibleTestSetError naming the binding
    constraint when the pools cannot satisfy the marginals.
    """
    t_ads, t_fraud = _pool_split(twitter_pool)
    h_ads, h_fraud = _pool_split(historical_pool)

    # twitter_ads = a implies twitter_fraud = 100 - a, historical_ads = 75 - a,
    # historical_fraud = a - 25; feasibility is an interval on a.
    lower_bounds = {
        "the historical source quota": ADS_N - HISTORICAL_N,
        "the historical ads pool": ADS_N - len(h_ads),
        "the twitter fraud pool": TWITTER_N - len(t_fraud),
    }
    upper_bounds = {
        "the overall ads quota": ADS_N,
        "the twitter ads pool": len(t_ads),
        "the historical fraud pool": ADS_N - HISTORICAL_N + len(h_fraud),
    }
    lo_reason, lo = max(lower_bounds.items(), key=lambda kv: kv[1])
    hi_reason, hi = min(upper_bounds.items(), key=lambda kv: kv[1])
    if lo > hi:
        raise InfeasibleTestSetError(
            f"cannot satisfy {TWITTER_N}/{HISTORICAL_N} by source and "
            f"{ADS_N}/{FRAUD_N} by category: {lo_reason} forces twitter-ads >= {lo} "
            f"but {hi_reason} allows at most {hi}"
        )

    rng = random.Random(seed)
    twitter_ads_n = rng.randint(lo, hi)
    picks = [
        (rng.sample(t_ads, twitter_ads_n), Source.TWITTER),
        (rng.sample(t_fraud, TWITTER_N - twitter_ads_n), Source.TWITTER),
        (rng.sample(h_ads, ADS_N - twitter_ads_n), Source.HISTORICAL),
        (rng.sample(h_fraud, twitter_ads_n - (ADS_N - HISTORICAL_N)), Source.HISTORICAL),
    ]
    tag_ids = [f"{v:06d}" for v in rng.sample(range(10**6), TESTSET_N)]
    testset: list[TestMessage] = []
    for chosen, source in picks:
        for item in chosen:
            testset.append(
                TestMessage(
                    tag_id=tag_ids[len(testset)],
                    text=item.text,
                    category=item.category,
                    source=source,
                )
            )
    return testset


def chunk_message(message: TestMessage, limit: int = SEGMENT_LIMIT) -> list[str]:
    """Split into SMS segments of at most ``limit`` code points.

    The first segment starts with the 6-digit tag and a space; stripping
    that prefix and concatenating the segments reproduces the text exactly.
    """
    if limit <= TAG_PREFIX_LEN:
        raise ValueError(f"limit must exceed {TAG_PREFIX_LEN}, got {limit}")
    prefix = message.tag_id + " "
    head_room = limit - TAG_PREFIX_LEN
    segments = [prefix + message.text[:head_room]]
    rest = message.text[head_room:]
    for start in range(0, len(rest), limit):
        segments.append(rest[start : start + limit])
    return segments


@dataclass(frozen=True)
class SentMessage:
    message: TestMessage
    sent_at: datetime


@dataclass(frozen=True)
class DeliveryEvent:
    receiver_id: str
    observed_tag_id: str
    observed_at: datetime


class DeliveryStatus(Enum):
    DELIVERED = "delivered"
    BLOCKED = "blocked"


def match_deliveries(
    sent: Sequence[SentMessage],
    events: Sequence[DeliveryEvent],
    window_s: int = DELIVERY_WINDOW_S,
) -> tuple[dict[str, DeliveryStatus], list[DeliveryEvent]]:
    """Mark each sent message Delivered when any receiver saw its tag within
    the window (inclusive), Blocked otherwise. Events whose tag matches no
    sent message come back as orphans rather than failing the run."""
    sent_tags = {s.message.tag_id for s in sent}
    orphans = [e for e in events if e.observed_tag_id not in sent_tags]
    if orphans:
        logger.warning("%d delivery events matched no sent message", len(orphans))
    by_tag: dict[str, list[DeliveryEvent]] = {}
    for event in events:
        by_tag.setdefault(event.observed_tag_id, []).append(event)
    status: dict[str, DeliveryStatus] = {}
    for item in sent:
        deadline = item.sent_at + timedelta(seconds=window_s)
        seen = any(
            e.observed_at <= deadline for e in by_tag.get(item.message.tag_id, [])
        )
        status[item.message.tag_id] = (
            DeliveryStatus.DELIVERED if seen else DeliveryStatus.BLOCKED
        )
    return status, orphans


class Outcome(Enum):
    FLAGGED_SPAM = "flagged_spam"
    PASSED_BENIGN = "passed_benign"
    ERROR = "error"


@dataclass(frozen=True)
class ServiceVerdict:
    service_name: str
    tag_id: str
    outcome: Outcome
    raw_score: Optional[float] = None


def score_to_verdict(score: float, cutoff: float = SCORE_CUTOFF) -> Outcome:
    """Flag at or above the cutoff (inclusive)."""
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score out of [0,1]: {score}")
    if not 0.0 <= cutoff <= 1.0:
        raise ValueError(f"cutoff out of [0,1]: {cutoff}")
    return Outcome.FLAGGED_SPAM if score >= cutoff else Outcome.PASSED_BENIGN


_LABEL_OUTCOMES = {
    "spam": Outcome.FLAGGED_SPAM,
    "flagged": Outcome.FLAGGED_SPAM,
    "ham": Outcome.PASSED_BENIGN,
    "benign": Outcome.PASSED_BENIGN,
    "ok": Outcome.PASSED_BENIGN,
}


class AntiSpamClient(Protocol):
    """Content-based spam check returning a score in [0,1] or a text label."""

    service_name: str

    def check(self, text: str) -> float | str: ...


class FixtureAntiSpamClient:
    """Scripted verdicts keyed by exact message text, with a default."""

    def __init__(
        self,
        service_name: str,
        verdicts: dict[str, float | str],
        default: float | str = 0.0,
    ):
        self.service_name = service_name
        self._verdicts = dict(verdicts)
        self._default = default

    def check(self, text: str) -> float | str:
        return self._verdicts.get(text, self._default)


def load_antispam_fixtures(path: str | Path) -> list[FixtureAntiSpamClient]:
    """JSON list of ``{"service_name", "default", "verdicts": {text: score|label}}``."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        FixtureAntiSpamClient(
            service_name=str(entry["service_name"]),
            verdicts=entry.get("verdicts", {}),
            default=entry.get("default", 0.0),
        )
        for entry in data
    ]


def run_service(
    client: AntiSpamClient,
    messages: Sequence[TestMessage],
    cutoff: float = SCORE_CUTOFF,
) -> list[ServiceVerdict]:
    """Check every message; client failures become Error verdicts."""
    verdicts: list[ServiceVerdict] = []
    for message in messages:
        try:
            result = client.check(message.text)
        except Exception as exc:
            logger.warning("%s failed on %s: %s", client.service_name, message.tag_id, exc)
            verdicts.append(
                ServiceVerdict(client.service_name, message.tag_id, Outcome.ERROR)
            )
            continue
        if isinstance(result, str):
            outcome = _LABEL_OUTCOMES.get(result.lower(), Outcome.ERROR)
            verdicts.append(
                ServiceVerdict(client.service_name, message.tag_id, outcome)
            )
        else:
            score = float(result)
            verdicts.append(
                ServiceVerdict(
                    client.service_name,
                    message.tag_id,
                    score_to_verdict(score, cutoff),
                    raw_score=score,
                )
            )
    return verdicts


def format_percent(fraction: float, decimals: int = 0) -> str:
    """Half-up percentage rendering, e.g. 143/150 -> ``95%``."""
    quantum = Decimal(1).scaleb(-decimals)
    value = (Decimal(str(fraction)) * 100).quantize(quantum, rounding=ROUND_HALF_UP)
    return f"{value}%"


@dataclass
class SplitCounts:
    hits: int = 0
    total: int = 0

    @property
    def fraction(self) -> float:
        return self.hits / self.total if self.total else 0.0

    def __str__(self) -> str:
        return f"{self.hits}/{self.total}"


@dataclass
class ServiceReport:
    """One service's hit counts overall, by source, and by category."""

    service_name: str
    overall: SplitCounts = field(default_factory=SplitCounts)
    by_source: dict[Source, SplitCounts] = field(
        default_factory=lambda: {s: SplitCounts() for s in Source}
    )
    by_category: dict[Category, SplitCounts] = field(
        default_factory=lambda: {c: SplitCounts() for c in Category}
    )
    errors: int = 0

    @property
    def display_percent(self) -> str:
        return format_percent(self.overall.fraction)

    def _tally(self, message: TestMessage, hit: bool) -> None:
        buckets = [self.overall, self.by_source[message.source]]
        if message.category is not None:
            buckets.append(self.by_category[message.category])
        for bucket in buckets:
            bucket.total += 1
            if hit:
                bucket.hits += 1


@dataclass
class EvalReport:
    services: list[ServiceReport]
    orphan_tag_ids: list[str] = field(default_factory=list)


def detection_report(
    verdicts: Sequence[ServiceVerdict], testset: Sequence[TestMessage]
) -> EvalReport:
    """Detection rates per service over the spam test set.

    Error verdicts count as not flagged but are reported separately; verdicts
    whose tag is unknown are returned as orphans.
    """
    by_tag = {m.tag_id: m for m in testset}
    reports: dict[str, ServiceReport] = {}
    orphans: list[str] = []
    for verdict in verdicts:
        message = by_tag.get(verdict.tag_id)
        if message is None:
            logger.warning(
                "verdict for unknown tag %s from %s",
                verdict.tag_id,
                verdict.service_name,
            )
            orphans.append(verdict.tag_id)
            continue
        report = reports.setdefault(
            verdict.service_name, ServiceReport(verdict.service_name)
        )
        if verdict.outcome is Outcome.ERROR:
            report.errors += 1
        report._tally(message, verdict.outcome is Outcome.FLAGGED_SPAM)
    ordered = [reports[name] for name in sorted(reports)]
    return EvalReport(services=ordered, orphan_tag_ids=orphans)


def blocking_report(
    delivery: dict[str, DeliveryStatus],
    testset: Sequence[TestMessage],
    service_name: str,
) -> ServiceReport:
    """Blocked-message counts in the same table shape as detection rates."""
    report = ServiceReport(service_name)
    for message in testset:
        status = delivery.get(message.tag_id)
        if status is None:
            continue
        report._tally(message, status is DeliveryStatus.BLOCKED)
    return report


def mis_alarm_rate(
    verdicts: Sequence[ServiceVerdict], benign: Sequence[TestMessage]
) -> float:
    """Fraction of benign messages a service falsely flagged."""
    if not benign:
        raise ValueError("mis_alarm_rate requires a non-empty benign set")
    benign_tags = {m.tag_id for m in benign}
    flagged = sum(
        1
        for v in verdicts
        if v.tag_id in benign_tags and v.outcome is Outcome.FLAGGED_SPAM
    )
    return flagged / len(benign)


class SmsSender(Protocol):
    """Bulk-SMS wire API: submit one segment to one destination."""

    def send(self, to: str, body: str) -> str: ...


class HttpSmsSender:
    """Live bulk-SMS adapter; reads its API key from ``BULK_SMS_API_KEY``.

    Posts ``{"to": ..., "body": ...}`` to the configured endpoint and returns
    the provider message id. Only ever used behind an explicit opt-in flag;
    the default transport is the simulated carrier.
    """

    KEY_ENV = "BULK_SMS_API_KEY"

    def __init__(self, endpoint: str, timeout: float = 30.0):
        import os

        key = os.environ.get(self.KEY_ENV)
        if not key:
            raise RuntimeError(f"set {self.KEY_ENV} to use the live SMS sender")
        self._endpoint = endpoint
        self._key = key
        self._timeout = timeout

    def send(self, to: str, body: str) -> str:
        import urllib.request

        payload = json.dumps({"to": to, "body": body}).encode("utf-8")
        request = urllib.request.Request(
            self._endpoint,
            data=payload,
            headers={"Content-Type": "application/json", "x-api-key": self._key},
            method="POST",
        )
        with urllib.request.urlopen(request, timeout=self._timeout) as response:
            return str(json.loads(response.read().decode("utf-8")).get("message_id", ""))


class SimulatedCarrier:
    """Offline carrier: reassembles tagged segments into messages, applies
    scripted drop rules, and appends delivery events to an inbox.

    Messages whose full text is in ``drop_texts`` never produce an event.
    Delivered messages reach one seeded-random receiver after ``latency_s``.
    The clock starts at ``start_at`` and advances one second per segment.
    """

    def __init__(
        self,
        receivers: Sequence[str] = ("receiver-1", "receiver-2", "receiver-3", "receiver-4"),
        latency_s: int = 10,
        drop_texts: Iterable[str] = (),
        seed: int = 0,
        start_at: datetime = datetime(2022, 1, 1, tzinfo=timezone.utc),
    ):
        if not receivers:
            raise ValueError("carrier needs at least one receiver")
        self.receivers = list(receivers)
        self.latency = timedelta(seconds=latency_s)
        self.drop_texts = set(drop_texts)
        self.inbox: list[DeliveryEvent] = []
        self.now = start_at
        self._rng = random.Random(seed)
        self._pending: Optional[tuple[str, list[str], datetime]] = None
        self._sent_counter = 0

    @classmethod
    def from_file(cls, path: str | Path, seed: int = 0) -> "SimulatedCarrier":
        config = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            receivers=config.get(
                "receivers", ["receiver-1", "receiver-2", "receiver-3", "receiver-4"]
            ),
            latency_s=int(config.get("latency_s", 10)),
            drop_texts=config.get("drop_texts", []),
            seed=seed,
        )

    def send(self, to: str, body: str) -> str:
        self._sent_counter += 1
        tag_match = _SEGMENT_TAG_RE.match(body)
        if tag_match:
            self.flush()
            self._pending = (tag_match.group(1), [body[TAG_PREFIX_LEN:]], self.now)
        elif self._pending is not None:
            self._pending[1].append(body)
        self.now += timedelta(seconds=1)
        return f"sim-{self._sent_counter:06d}"

    def flush(self) -> None:
        """Finalize the in-flight message, emitting its event unless dropped."""
        if self._pending is None:
            return
        tag, parts, sent_at = self._pending
        self._pending = None
        text = "".join(parts)
        if text in self.drop_texts:
            return
        receiver = self.receivers[self._rng.randrange(len(self.receivers))]
        self.inbox.append(
            DeliveryEvent(
                receiver_id=receiver,
                observed_tag_id=tag,
                observed_at=sent_at + self.latency,
            )
        )


def send_testset(
    messages: Sequence[TestMessage],
    carrier: SimulatedCarrier,
    destination: str = "receiver-group",
    limit: int = SEGMENT_LIMIT,
) -> list[SentMessage]:
    """Chunk and submit every message, recording first-segment send times."""
    sent: list[SentMessage] = []
    for message in messages:
        sent_at = carrier.now
        for segment in chunk_message(message, limit):
            carrier.send(destination, segment)
        sent.append(SentMessage(message=message, sent_at=sent_at))
    carrier.flush()
    return sent


def message_to_record(message: TestMessage) -> dict:
    return {
        "tag_id": message.tag_id,
        "text": message.text,
        "category": message.category.value if message.category else None,
        "source": message.source.value,
        "truth": message.truth.value,
    }


def message_from_record(obj: dict) -> TestMessage:
    return TestMessage(
        tag_id=str(obj["tag_id"]),
        text=str(obj["text"]),
        category=Category(obj["category"]) if obj.get("category") else None,
        source=Source(obj["source"]),
        truth=Truth(obj.get("truth", "spam")),
    )


def read_pool(path: str | Path) -> list[PoolMessage]:
    """NDJSON pool: ``{"text": str, "category": "ads" | "fraud"}`` per line."""
    pool: list[PoolMessage] = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            obj = json.loads(line)
            pool.append(
                PoolMessage(text=str(obj["text"]), category=Category(obj["category"]))
            )
    return pool
