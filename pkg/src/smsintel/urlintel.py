"""URL extraction, redirect resolution, and threat-verdict aggregation."""

from __future__ import annotations

import json
import logging
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence
from urllib.parse import urljoin, urlsplit, urlunsplit

logger = logging.getLogger(__name__)

DEFAULT_MAX_HOPS = 10
DEFAULT_ENGINES_TOTAL = 83
THREAT_CATEGORIES = ("malicious", "malware", "phishing")

_SCHEME_URL_RE = re.compile(r"https?://[^\s<>\"']+", re.IGNORECASE)
_BARE_URL_RE = re.compile(
    r"(?:[a-z0-9](?:[a-z0-9-]*[a-z0-9])?\.)+[a-z]{2,}(?::\d+)?(?:/[^\s<>\"']*)?",
    re.IGNORECASE,
)
_TRAILING_PUNCT = ".,;:)]}\"'"
_SCHEME_RE = re.compile(r"^[a-zA-Z][a-zA-Z0-9+.-]*:")


def _with_scheme(url: str) -> str:
    """Default bare URLs to http; keep non-hierarchical schemes untouched."""
    if "://" in url:
        return url
    m = _SCHEME_RE.match(url)
    if m and not url[m.end() : m.end() + 1].isdigit():
        return url  # mailto:, tel:, and friends stay host-less
    return "http://" + url


def _load_data_lines(name: str) -> list[str]:
    text = resources.files("smsintel.data").joinpath(name).read_text(encoding="utf-8")
    return [
        line.strip().lower()
        for line in text.splitlines()
        if line.strip() and not line.startswith("#")
    ]


def default_tld_suffixes() -> frozenset[str]:
    """Bundled public-suffix-style list used to spot bare (scheme-less) URLs."""
    return frozenset(_load_data_lines("tld_suffixes.txt"))


def load_tld_suffixes(path: str | Path) -> frozenset[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return frozenset(
        ln.strip().lower() for ln in lines if ln.strip() and not ln.startswith("#")
    )


def default_shorteners() -> frozenset[str]:
    """Bundled hosts of the URL shortening services seen most in spam."""
    return frozenset(_load_data_lines("url_shorteners.txt"))


@dataclass(frozen=True)
class ExtractedUrl:
    raw: str
    normalized: str
    source_message_id: str = ""


def normalize_url(url: str) -> str:
    """Conservative URL identity: lowercase scheme/host, drop default ports
    and a lone trailing slash; path case and query strings are preserved."""
    parts = urlsplit(_with_scheme(url))
    scheme = parts.scheme.lower()
    host = (parts.hostname or "").lower()
    port = parts.port
    if port is not None and not (
        (scheme == "http" and port == 80) or (scheme == "https" and port == 443)
    ):
        host = f"{host}:{port}"
    path = parts.path
    if path == "/":
        path = ""
    return urlunsplit((scheme, host, path, parts.query, parts.fragment))


def _strip_trailing_punct(candidate: str) -> str:
    return candidate.rstrip(_TRAILING_PUNCT)


def _bare_host_qualifies(candidate: str, suffixes: frozenset[str]) -> bool:
    host = candidate.split("/", 1)[0].split(":", 1)[0]
    labels = host.lower().split(".")
    return len(labels) >= 2 and labels[-1] in suffixes


def extract_urls(
    text: str,
    source_message_id: str = "",
    suffixes: Optional[frozenset[str]] = None,
) -> list[ExtractedUrl]:
    """Find http(s) URLs plus bare domain paths whose final host label is a
    known suffix; trailing punctuation is stripped, duplicates kept once."""
    if suffixes is None:
        suffixes = default_tld_suffixes()
    found: list[ExtractedUrl] = []
    seen: set[str] = set()
    covered: list[tuple[int, int]] = []

    def add(raw: str) -> None:
        if not raw:
            return
        normalized = normalize_url(raw)
        if urlsplit(normalized).hostname and normalized not in seen:
            seen.add(normalized)
            found.append(ExtractedUrl(raw, normalized, source_message_id))

    matches: list[tuple[int, str]] = []
    for m in _SCHEME_URL_RE.finditer(text):
        covered.append(m.span())
        matches.append((m.start(), _strip_trailing_punct(m.group())))
    for m in _BARE_URL_RE.finditer(text):
        if any(start <= m.start() < end for start, end in covered):
            continue
        candidate = _strip_trailing_punct(m.group())
        if _bare_host_qualifies(candidate, suffixes):
            matches.append((m.start(), candidate))
    for _, raw in sorted(matches, key=lambda item: item[0]):
        add(raw)
    return found


def fqdn_of(url: str) -> str:
    """Lowercased host with any port stripped; IP literals pass through."""
    host = urlsplit(_with_scheme(url)).hostname
    if not host:
        raise ValueError(f"URL has no host: {url!r}")
    return host


def is_shortener(fqdn: str, shorteners: Optional[frozenset[str]] = None) -> bool:
    if shorteners is None:
        shorteners = default_shorteners()
    return fqdn.lower() in shorteners


def shortener_share(
    urls: Sequence[str], shorteners: Optional[frozenset[str]] = None
) -> float:
    if not urls:
        raise ValueError("shortener_share requires at least one URL")
    if shorteners is None:
        shorteners = default_shorteners()
    hits = sum(1 for url in urls if is_shortener(fqdn_of(url), shorteners))
    return hits / len(urls)


class Termination(Enum):
    NO_MORE_REDIRECTS = "no_more_redirects"
    MAX_HOPS = "max_hops"
    LOOP_DETECTED = "loop_detected"
    NETWORK_ERROR = "network_error"
    TIMEOUT = "timeout"


@dataclass
class UrlResolution:
    """A followed redirect chain; chain[0] is the requested URL."""

    chain: list[str]
    final_status: int | str
    terminated_by: Termination

    @property
    def hop_count(self) -> int:
        return len(self.chain) - 1

    @property
    def final_url(self) -> Optional[str]:
        """The landing URL, only when the chain ended on a real response."""
        if self.terminated_by is Termination.NO_MORE_REDIRECTS:
            return self.chain[-1]
        return None


class RedirectClient(Protocol):
    """One HTTP round trip without following redirects."""

    def head_or_get(
        self, url: str, timeout: Optional[float] = None
    ) -> tuple[int, Optional[str]]: ...


def resolve(
    url: str,
    client: RedirectClient,
    max_hops: int = DEFAULT_MAX_HOPS,
    per_hop_timeout: Optional[float] = None,
) -> UrlResolution:
    """Follow 3xx Location redirects until they stop, cap out, loop, or fail.

    Relative Location values are resolved against the current URL. Network
    failures come back encoded in ``terminated_by`` rather than raised.
    """
    chain = [url]
    while True:
        try:
            status, location = client.head_or_get(chain[-1], timeout=per_hop_timeout)
        except TimeoutError:
            return UrlResolution(chain, Termination.TIMEOUT.value, Termination.TIMEOUT)
        except Exception as exc:
            logger.debug("fetch failed for %s: %s", chain[-1], exc)
            return UrlResolution(
                chain, Termination.NETWORK_ERROR.value, Termination.NETWORK_ERROR
            )
        if not (300 <= status < 400) or location is None:
            return UrlResolution(chain, status, Termination.NO_MORE_REDIRECTS)
        if len(chain) - 1 >= max_hops:
            return UrlResolution(chain, status, Termination.MAX_HOPS)
        next_url = urljoin(chain[-1], location)
        if next_url in chain:
            chain.append(next_url)
            return UrlResolution(chain, status, Termination.LOOP_DETECTED)
        chain.append(next_url)


class _NoRedirect(urllib.request.HTTPRedirectHandler):
    def redirect_request(self, req, fp, code, msg, headers, newurl):  # noqa: N802
        return None


class HttpClient:
    """Live adapter: HEAD with a GET fallback, never auto-following redirects."""

    def __init__(self, user_agent: str = "smsintel/0.1"):
        self._opener = urllib.request.build_opener(_NoRedirect())
        self._user_agent = user_agent

    def _request(
        self, url: str, method: str, timeout: Optional[float]
    ) -> tuple[int, Optional[str]]:
        request = urllib.request.Request(
            url, method=method, headers={"User-Agent": self._user_agent}
        )
        try:
            with self._opener.open(request, timeout=timeout or 30.0) as response:
                return response.status, response.headers.get("Location")
        except urllib.error.HTTPError as err:
            return err.code, err.headers.get("Location")
        except urllib.error.URLError as err:
            if isinstance(err.reason, TimeoutError):
                raise TimeoutError(str(err)) from err
            raise

    def head_or_get(
        self, url: str, timeout: Optional[float] = None
    ) -> tuple[int, Optional[str]]:
        status, location = self._request(url, "HEAD", timeout)
        if status == 405:
            return self._request(url, "GET", timeout)
        return status, location


def resolution_to_dict(resolution: UrlResolution) -> dict:
    return {
        "chain": list(resolution.chain),
        "final_status": resolution.final_status,
        "hop_count": resolution.hop_count,
        "terminated_by": resolution.terminated_by.value,
    }


def resolution_from_dict(obj: dict) -> UrlResolution:
    return UrlResolution(
        chain=[str(u) for u in obj["chain"]],
        final_status=obj["final_status"],
        terminated_by=Termination(obj["terminated_by"]),
    )


def read_resolution_cache(path: str | Path) -> dict[str, UrlResolution]:
    """NDJSON resolution cache keyed by requested URL; makes reruns network-free."""
    cache: dict[str, UrlResolution] = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            resolution = resolution_from_dict(json.loads(line))
            cache[resolution.chain[0]] = resolution
    return cache


def write_resolution_cache(
    resolutions: Iterable[UrlResolution], path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for resolution in resolutions:
            handle.write(
                json.dumps(resolution_to_dict(resolution), ensure_ascii=False) + "\n"
            )


@dataclass(frozen=True)
class ThreatReport:
    """Per-subject engine verdicts; a missing lookup is a zero-positive report."""

    subject: str
    engine_positives: int
    engines_total: int = DEFAULT_ENGINES_TOTAL
    categories: frozenset[str] = frozenset()
    first_flag_date: Optional[date] = None

    def __post_init__(self) -> None:
        if not 0 <= self.engine_positives <= self.engines_total:
            raise ValueError(
                f"{self.subject!r}: positives {self.engine_positives} outside "
                f"[0, {self.engines_total}]"
            )


class ThreatClient(Protocol):
    def lookup(self, subject: str) -> Optional[ThreatReport]: ...


def threat_report_from_dict(obj: dict) -> ThreatReport:
    flag_date = obj.get("first_flag_date")
    return ThreatReport(
        subject=str(obj["subject"]),
        engine_positives=int(obj["positives"]),
        engines_total=int(obj.get("total", DEFAULT_ENGINES_TOTAL)),
        categories=frozenset(obj.get("categories", [])),
        first_flag_date=date.fromisoformat(flag_date) if flag_date else None,
    )


def threat_report_to_dict(report: ThreatReport) -> dict:
    return {
        "subject": report.subject,
        "positives": report.engine_positives,
        "total": report.engines_total,
        "categories": sorted(report.categories),
        "first_flag_date": (
            report.first_flag_date.isoformat() if report.first_flag_date else None
        ),
    }


class HttpThreatClient:
    """Live threat lookups; reads its API key from ``THREAT_API_KEY``.

    The endpoint is expected to answer ``GET {base_url}/report?subject=...``
    with the same JSON shape the NDJSON fixture uses, or 404 for no report.
    """

    KEY_ENV = "THREAT_API_KEY"

    def __init__(self, base_url: str, timeout: float = 30.0):
        import os

        key = os.environ.get(self.KEY_ENV)
        if not key:
            raise RuntimeError(f"set {self.KEY_ENV} to use the live threat client")
        self._base_url = base_url.rstrip("/")
        self._key = key
        self._timeout = timeout

    def lookup(self, subject: str) -> Optional[ThreatReport]:
        import urllib.parse
        import urllib.request

        query = urllib.parse.urlencode({"subject": subject})
        request = urllib.request.Request(
            f"{self._base_url}/report?{query}", headers={"x-api-key": self._key}
        )
        try:
            with urllib.request.urlopen(request, timeout=self._timeout) as response:
                return threat_report_from_dict(json.loads(response.read().decode("utf-8")))
        except urllib.error.HTTPError as err:
            if err.code == 404:
                return None
            raise


class FixtureThreatClient:
    """Threat lookups served from an NDJSON fixture keyed by subject."""

    def __init__(self, path: str | Path):
        self._by_subject: dict[str, ThreatReport] = {}
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                report = threat_report_from_dict(json.loads(line))
                self._by_subject[report.subject] = report

    def lookup(self, subject: str) -> Optional[ThreatReport]:
        return self._by_subject.get(subject)


def enrich_subjects(
    subjects: Sequence[str], client: ThreatClient
) -> list[ThreatReport]:
    """Look up every subject; missing ones become empty zero-positive reports
    so they still count in aggregate denominators."""
    reports = []
    for subject in subjects:
        report = client.lookup(subject)
        if report is None:
            report = ThreatReport(subject=subject, engine_positives=0)
        reports.append(report)
    return reports


@dataclass
class ThreatSummary:
    count: int
    vt_fractions: dict[int, float] = field(default_factory=dict)
    category_fractions: dict[str, float] = field(default_factory=dict)


def aggregate_threat(
    reports: Sequence[ThreatReport], k_thresholds: Iterable[int] = (1, 5)
) -> ThreatSummary:
    """Fractions of subjects flagged by at least k engines, and per category."""
    n = len(reports)
    summary = ThreatSummary(count=n)
    for k in sorted(set(k_thresholds)):
        hits = sum(1 for r in reports if r.engine_positives >= k)
        summary.vt_fractions[k] = hits / n if n else 0.0
    for category in THREAT_CATEGORIES:
        hits = sum(1 for r in reports if category in r.categories)
        summary.category_fractions[category] = hits / n if n else 0.0
    return summary


@dataclass(frozen=True)
class TimelinessPair:
    """First social report date vs. first threat-intel flag date."""

    date_twitter: date
    date_vt: date

    @property
    def t_gap_days(self) -> int:
        return (self.date_vt - self.date_twitter).days


def timeliness(
    pairs: Sequence[TimelinessPair], thresholds: Iterable[int] = (-7, -1, 0, 1, 7)
) -> dict[int, float]:
    """For each threshold d, the fraction of pairs with a gap of >= d days."""
    if not pairs:
        raise ValueError("timeliness requires at least one pair")
    return {
        d: sum(1 for p in pairs if p.t_gap_days >= d) / len(pairs)
        for d in sorted(set(thresholds))
    }
