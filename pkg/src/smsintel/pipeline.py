"""File-based pipeline stages behind the CLI.

Each stage reads the previous stage's NDJSON, writes the next one under the
output directory, and refreshes ``manifest.json``. Outputs are sorted on
stable record ids before writing, so a rerun over unchanged inputs with the
same seed reproduces the output tree byte for byte (fixture mode keeps even
the manifest timestamp deterministic).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

from . import analysis, classifier, corpus, evalharness, reporting, screenshot, urlintel

logger = logging.getLogger(__name__)

EPOCH_TIMESTAMP = "1970-01-01T00:00:00Z"

COLLECTED_FILE = "collected.ndjson"
SMS_TWEETS_FILE = "sms_tweets.ndjson"
ANALYSES_FILE = "analyses.ndjson"
MODEL_FILE = "model.json"
SPAM_TWEETS_FILE = "spam_tweets.ndjson"
MESSAGES_FILE = "messages.ndjson"
RESOLVED_MESSAGES_FILE = "messages_resolved.ndjson"
RESOLUTIONS_FILE = "resolutions_used.ndjson"
THREAT_FILE = "threat_reports.ndjson"
CAMPAIGNS_FILE = "campaigns.ndjson"
MANIFEST_FILE = "manifest.json"


class ConfigError(Exception):
    """Bad configuration; the CLI maps this to exit code 2."""


class InputError(Exception):
    """Missing or unreadable stage input; the CLI maps this to exit code 1."""


@dataclass
class PipelineConfig:
    corpus_path: Optional[str] = None
    detections_path: Optional[str] = None
    ocr_path: Optional[str] = None
    labels_path: Optional[str] = None
    threat_path: Optional[str] = None
    resolutions_path: Optional[str] = None
    replies_path: Optional[str] = None
    eval_twitter_pool: Optional[str] = None
    eval_historical_pool: Optional[str] = None
    benign_pool: Optional[str] = None
    antispam_path: Optional[str] = None
    carrier_path: Optional[str] = None
    data_dir: Optional[str] = None
    tld_file: Optional[str] = None
    out_dir: str = "out"
    seed: int = 0
    jobs: int = 1
    overlap_threshold: float = screenshot.DEFAULT_OVERLAP_THRESHOLD
    iou_match: float = screenshot.DEFAULT_IOU_MATCH
    score_cutoff: float = evalharness.SCORE_CUTOFF
    max_hops: int = urlintel.DEFAULT_MAX_HOPS
    window_from: Optional[str] = None
    window_to: Optional[str] = None
    live_urls: bool = False
    live_sends: bool = False
    bulk_sms_endpoint: Optional[str] = None
    delivery_events_path: Optional[str] = None
    keywords: Optional[str] = None
    anchor_token: Optional[str] = None
    require_images: bool = True

    def validate(self) -> None:
        if not 0.0 < self.overlap_threshold <= 1.0:
            raise ConfigError(f"overlap_threshold out of (0,1]: {self.overlap_threshold}")
        if not 0.0 < self.iou_match <= 1.0:
            raise ConfigError(f"iou_match out of (0,1]: {self.iou_match}")
        if not 0.0 <= self.score_cutoff <= 1.0:
            raise ConfigError(f"score_cutoff out of [0,1]: {self.score_cutoff}")
        if self.max_hops < 0:
            raise ConfigError(f"max_hops must be non-negative: {self.max_hops}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be at least 1: {self.jobs}")
        if self.window_from and self.window_to:
            if corpus.parse_rfc3339(self.window_from) > corpus.parse_rfc3339(self.window_to):
                raise ConfigError("window start is after window end")

    def query_spec(self) -> corpus.QuerySpec:
        keyword_set = (
            frozenset(k.strip().lower() for k in self.keywords.split(",") if k.strip())
            if self.keywords
            else corpus.DEFAULT_KEYWORDS
        )
        return corpus.QuerySpec(
            keyword_set=keyword_set,
            anchor_token=(self.anchor_token or corpus.DEFAULT_ANCHOR).lower(),
            require_images=self.require_images,
        )

    def snapshot(self) -> dict:
        """Config as written to the manifest; output location is excluded so
        runs into different directories stay comparable."""
        snap = {}
        for f in fields(self):
            if f.name in ("out_dir", "jobs"):
                continue
            snap[f.name] = getattr(self, f.name)
        return snap


_BOOL_KEYS = {"live_urls", "live_sends", "require_images"}
_INT_KEYS = {"seed", "jobs", "max_hops"}
_FLOAT_KEYS = {"overlap_threshold", "iou_match", "score_cutoff"}


def load_config(path: str | Path) -> PipelineConfig:
    """Parse the flat ``key = value`` config file.

    Relative paths are resolved against the config file's directory. Unknown
    keys are a configuration error.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    known = {f.name for f in fields(PipelineConfig)}
    values: dict = {}
    base = path.parent
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{line_no}: expected key = value")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
        if key in _BOOL_KEYS:
            values[key] = value.lower() in ("1", "true", "yes", "on")
        elif key in _INT_KEYS:
            values[key] = int(value)
        elif key in _FLOAT_KEYS:
            values[key] = float(value)
        elif key.endswith(("_path", "_pool", "_dir", "_file")) or key == "out_dir":
            values[key] = str((base / value).resolve()) if value else None
        else:
            values[key] = value
    return PipelineConfig(**values)


def _require(path: Optional[str], what: str, stage: str) -> Path:
    if not path:
        raise InputError(f"stage {stage!r} needs {what}, but none is configured")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"stage {stage!r} input missing: {what} at {p}")
    return p


def _out(config: PipelineConfig, name: str) -> Path:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / name


def _prior(config: PipelineConfig, name: str, stage: str) -> Path:
    p = Path(config.out_dir) / name
    if not p.is_file():
        raise InputError(f"stage {stage!r} requires {name} from an earlier stage")
    return p


def _write_ndjson(path: Path, objects: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for obj in objects:
            handle.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")


def _read_ndjson(path: Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                out.append(json.loads(line))
    return out


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _manifest_timestamp(config: PipelineConfig) -> str:
    env = os.environ.get("SOURCE_DATE_EPOCH")
    if env:
        stamp = datetime.fromtimestamp(int(env), tz=timezone.utc)
        return stamp.strftime("%Y-%m-%dT%H:%M:%SZ")
    if not (config.live_urls or config.live_sends):
        return EPOCH_TIMESTAMP  # fixture mode stays fully deterministic
    return datetime.now(tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _update_manifest(
    config: PipelineConfig,
    stage_counts: dict[str, int],
    inputs: dict[str, Path],
) -> None:
    manifest_path = _out(config, MANIFEST_FILE)
    manifest = {"config": {}, "inputs": {}, "stages": {}, "generated_at": ""}
    if manifest_path.is_file():
        manifest.update(json.loads(manifest_path.read_text(encoding="utf-8")))
    manifest["config"] = config.snapshot()
    for label, path in inputs.items():
        manifest["inputs"][label] = _sha256(path)
    manifest["stages"].update(stage_counts)
    manifest["generated_at"] = _manifest_timestamp(config)
    reporting.write_json(manifest_path, manifest)


def _map_records(items, fn: Callable, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def run_ingest(config: PipelineConfig) -> int:
    """Corpus -> collected tweets matching the keyword query and the window."""
    source = _require(config.corpus_path, "a corpus NDJSON file", "ingest")
    with open(source, encoding="utf-8") as handle:
        parsed = corpus.parse_corpus(handle)
    if parsed.skips:
        logger.info("ingest skipped %d malformed corpus lines", len(parsed.skips))
    records = parsed.records
    if config.window_from or config.window_to:
        start = corpus.parse_rfc3339(config.window_from or "1970-01-01T00:00:00Z")
        end = corpus.parse_rfc3339(config.window_to or "9999-12-31T23:59:59Z")
        records = corpus.filter_window(records, start, end)
    query = config.query_spec()
    collected = [r for r in records if corpus.matches_query(r, query)]
    collected.sort(key=lambda r: r.tweet_id)
    _write_ndjson(_out(config, COLLECTED_FILE), [corpus.record_to_dict(r) for r in collected])
    _update_manifest(config, {"collected_tweets": len(collected)}, {"corpus": source})
    return len(collected)


def run_extract(config: PipelineConfig) -> int:
    """Detect SMS cells on every attachment and assemble message text."""
    collected_path = _prior(config, COLLECTED_FILE, "extract")
    detections = _require(config.detections_path, "a detection fixture", "extract")
    ocr_file = _require(config.ocr_path, "an OCR fixture", "extract")
    detector = screenshot.FixtureDetector(detections)
    ocr = screenshot.FixtureOcr(ocr_file)
    tweets = [corpus.record_from_dict(o) for o in _read_ndjson(collected_path)]

    def analyze(item: tuple[str, corpus.ImageRef]) -> dict:
        tweet_id, image = item
        result = screenshot.analyze_screenshot(
            image.image_id,
            detector.detect(image),
            ocr.ocr(image),
            config.overlap_threshold,
        )
        return {
            "tweet_id": tweet_id,
            "image_id": result.image_id,
            "cell_count": len(result.cells),
            "messages": [{"cell_index": c, "text": t} for c, t in result.messages],
            "sender_raw": result.sender_raw,
        }

    images = [(t.tweet_id, img) for t in tweets for img in t.attachments]
    analyses = _map_records(images, analyze, config.jobs)
    analyses.sort(key=lambda a: (a["tweet_id"], a["image_id"]))
    sms_tweet_ids = {a["tweet_id"] for a in analyses if a["cell_count"] > 0}
    sms_tweets = [t for t in tweets if t.tweet_id in sms_tweet_ids]
    _write_ndjson(_out(config, ANALYSES_FILE), analyses)
    _write_ndjson(
        _out(config, SMS_TWEETS_FILE), [corpus.record_to_dict(t) for t in sms_tweets]
    )
    _update_manifest(
        config,
        {"sms_image_tweets": len(sms_tweets)},
        {"detections": detections, "ocr": ocr_file},
    )
    return len(sms_tweets)


def run_classify_train(config: PipelineConfig) -> int:
    """Train the report classifier from the labeled NDJSON corpus."""
    labels = _require(config.labels_path, "a labeled training file", "classify-train")
    data = classifier.read_labeled(labels)
    balanced = classifier.oversample(data)
    model = classifier.train(
        balanced, classifier.TrainConfig(seed=config.seed)
    )
    classifier.save_model(model, _out(config, MODEL_FILE))
    _update_manifest(config, {}, {"labels": labels})
    return len(balanced)


def run_classify(config: PipelineConfig) -> int:
    """Keep the tweets the classifier marks as genuine spam reports, then
    materialize deduplicated messages from their screenshot analyses."""
    sms_path = _prior(config, SMS_TWEETS_FILE, "classify")
    analyses_path = _prior(config, ANALYSES_FILE, "classify")
    model_path = _prior(config, MODEL_FILE, "classify")
    model = classifier.load_model(model_path)
    translator = classifier.IdentityTranslator()
    tweets = [corpus.record_from_dict(o) for o in _read_ndjson(sms_path)]
    spam_tweets = [
        t
        for t in tweets
        if classifier.predict(model, translator.translate(t.text, "en"))[0]
        is classifier.Label.SPAM_REPORT
    ]
    spam_tweets.sort(key=lambda t: t.tweet_id)
    _write_ndjson(
        _out(config, SPAM_TWEETS_FILE), [corpus.record_to_dict(t) for t in spam_tweets]
    )

    spam_ids = {t.tweet_id for t in spam_tweets}
    by_tweet = {t.tweet_id: t for t in spam_tweets}
    detector_lang = (
        analysis.StopwordLanguageDetector.from_file(
            Path(config.data_dir) / "language_profiles.json"
        )
        if config.data_dir
        and (Path(config.data_dir) / "language_profiles.json").is_file()
        else analysis.StopwordLanguageDetector.bundled()
    )
    suffixes = (
        urlintel.load_tld_suffixes(config.tld_file)
        if config.tld_file
        else urlintel.default_tld_suffixes()
    )

    candidates: list[analysis.SpamMessage] = []
    for entry in _read_ndjson(analyses_path):
        if entry["tweet_id"] not in spam_ids:
            continue
        tweet = by_tweet[entry["tweet_id"]]
        for message in entry["messages"]:
            message_id = f"{entry['tweet_id']}/{entry['image_id']}/{message['cell_index']}"
            text = message["text"]
            candidates.append(
                analysis.SpamMessage(
                    message_id=message_id,
                    text=text,
                    report_date=tweet.created_at.date(),
                    language=detector_lang.detect_language(text),
                    sender_raw=entry.get("sender_raw"),
                    urls=[
                        u.normalized
                        for u in urlintel.extract_urls(text, message_id, suffixes)
                    ],
                    source_tweet_id=tweet.tweet_id,
                    author_id=tweet.author_id,
                    tagged_accounts=list(tweet.tagged_accounts),
                )
            )

    # Duplicate reports collapse to one message dated by its first report.
    candidates.sort(key=lambda m: (m.report_date, m.message_id))
    deduped: dict[str, analysis.SpamMessage] = {}
    for message in candidates:
        key = corpus.normalize_message_text(message.text)
        if key not in deduped:
            message.text = key
            deduped[key] = message
    messages = sorted(deduped.values(), key=lambda m: m.message_id)
    _write_ndjson(
        _out(config, MESSAGES_FILE), [analysis.message_to_dict(m) for m in messages]
    )
    message_tweets = {m.source_tweet_id for m in messages}
    _update_manifest(
        config,
        {
            "spam_reporting_tweets": len(spam_tweets),
            "message_tweets": len(message_tweets),
            "messages_total": len(messages),
        },
        {},
    )
    return len(messages)


def run_resolve_urls(config: PipelineConfig) -> int:
    """Swap raw URLs for their final landing URLs.

    Fixture mode answers only from the resolution cache; --live-urls lets
    cache misses go out through the HTTP client.
    """
    messages_path = _prior(config, MESSAGES_FILE, "resolve-urls")
    cache: dict[str, urlintel.UrlResolution] = {}
    if config.resolutions_path:
        cache_path = _require(config.resolutions_path, "a resolution cache", "resolve-urls")
        cache = urlintel.read_resolution_cache(cache_path)
    messages = [analysis.message_from_dict(o) for o in _read_ndjson(messages_path)]
    client = urlintel.HttpClient() if config.live_urls else None
    used: dict[str, urlintel.UrlResolution] = {}
    for message in messages:
        final_urls = []
        for url in message.urls:
            resolution = cache.get(url)
            if resolution is None and client is not None:
                resolution = urlintel.resolve(url, client, config.max_hops)
                cache[url] = resolution
            if resolution is not None:
                used[url] = resolution
            final = resolution.final_url if resolution else None
            final_urls.append(urlintel.normalize_url(final) if final else url)
        message.urls = final_urls
    _write_ndjson(
        _out(config, RESOLVED_MESSAGES_FILE),
        [analysis.message_to_dict(m) for m in messages],
    )
    urlintel.write_resolution_cache(
        [used[key] for key in sorted(used)], _out(config, RESOLUTIONS_FILE)
    )
    _update_manifest(config, {}, {})
    return len(used)


def run_enrich(config: PipelineConfig) -> int:
    """Attach threat-intel reports to every final URL and FQDN."""
    messages_path = _prior(config, RESOLVED_MESSAGES_FILE, "enrich")
    threat_path = _require(config.threat_path, "a threat-report fixture", "enrich")
    client = urlintel.FixtureThreatClient(threat_path)
    messages = [analysis.message_from_dict(o) for o in _read_ndjson(messages_path)]
    urls = sorted({u for m in messages for u in m.urls})
    fqdns = sorted({urlintel.fqdn_of(u) for u in urls})
    reports = urlintel.enrich_subjects(urls + fqdns, client)
    _write_ndjson(
        _out(config, THREAT_FILE),
        [urlintel.threat_report_to_dict(r) for r in reports],
    )
    _update_manifest(config, {}, {"threat": threat_path})
    return len(reports)


def run_cluster(config: PipelineConfig) -> int:
    """Group messages into URL-sharing campaigns."""
    messages_path = _prior(config, RESOLVED_MESSAGES_FILE, "cluster")
    messages = [analysis.message_from_dict(o) for o in _read_ndjson(messages_path)]
    _, campaigns = analysis.cluster_campaigns(messages)
    rows = [
        {
            "campaign_id": c.campaign_id,
            "member_message_ids": sorted(c.member_message_ids),
            "shared_urls": sorted(c.shared_urls),
            "languages": sorted(c.languages),
        }
        for c in campaigns
    ]
    _write_ndjson(_out(config, CAMPAIGNS_FILE), rows)
    _update_manifest(config, {"campaigns": len(campaigns)}, {})
    return len(campaigns)


def _stats_dir(config: PipelineConfig) -> Path:
    path = Path(config.out_dir) / "stats"
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_stats(config: PipelineConfig) -> int:
    """Emit the analytics tables as CSV plus JSON, with trend figures."""
    messages_path = _prior(config, RESOLVED_MESSAGES_FILE, "stats")
    messages = [analysis.message_from_dict(o) for o in _read_ndjson(messages_path)]
    stats_dir = _stats_dir(config)
    service_map = analysis.load_service_map(
        Path(config.data_dir) / "service_handles.json"
        if config.data_dir and (Path(config.data_dir) / "service_handles.json").is_file()
        else None
    )

    lang_rows = analysis.time_series(messages, key="language")
    reporting.write_csv(
        stats_dir / "time_series_language.csv",
        ["quarter", "language", "count"],
        lang_rows,
    )
    reporting.write_json(
        stats_dir / "time_series_language.json",
        [row._asdict() for row in lang_rows],
    )
    reporting.plot_quarterly_trends(
        lang_rows, stats_dir / "trends_language.png", "Messages per quarter by language"
    )

    service_rows = analysis.time_series(
        messages, key="service", service_map=analysis.victim_service_names(service_map)
    )
    reporting.write_csv(
        stats_dir / "time_series_service.csv",
        ["quarter", "service", "count"],
        service_rows,
    )
    reporting.write_json(
        stats_dir / "time_series_service.json",
        [row._asdict() for row in service_rows],
    )
    reporting.plot_quarterly_trends(
        service_rows,
        stats_dir / "trends_service.png",
        "Reports per quarter by victim service",
    )

    sender_kinds = {kind.value: 0 for kind in analysis.SenderKind}
    for message in messages:
        if message.sender_raw:
            sender_kinds[analysis.classify_sender(message.sender_raw).kind.value] += 1
    reporting.write_csv(
        stats_dir / "sender_kinds.csv",
        ["kind", "count"],
        sorted(sender_kinds.items()),
    )
    reporting.write_json(stats_dir / "sender_kinds.json", sender_kinds)

    # Shortener usage is a property of the URLs as reported, pre-resolution.
    raw_messages_path = Path(config.out_dir) / MESSAGES_FILE
    share_source = (
        [analysis.message_from_dict(o) for o in _read_ndjson(raw_messages_path)]
        if raw_messages_path.is_file()
        else messages
    )
    raw_urls = [u for m in share_source for u in m.urls]
    share = urlintel.shortener_share(raw_urls) if raw_urls else 0.0
    reporting.write_json(
        stats_dir / "shortener_share.json",
        {"urls_total": len(raw_urls), "shortener_fraction": share},
    )

    threat_payload = {}
    threat_out = Path(config.out_dir) / THREAT_FILE
    if threat_out.is_file():
        reports = [
            urlintel.threat_report_from_dict(o) for o in _read_ndjson(threat_out)
        ]
        url_set = {u for m in messages for u in m.urls}
        url_reports = [r for r in reports if r.subject in url_set]
        fqdn_reports = [r for r in reports if r.subject not in url_set]
        header = ["group", "count", "vt_ge_1", "vt_ge_5", "malicious", "malware", "phishing"]
        rows = []
        for group, group_reports in (("urls", url_reports), ("fqdns", fqdn_reports)):
            summary = urlintel.aggregate_threat(group_reports)
            rows.append(
                [
                    group,
                    summary.count,
                    summary.vt_fractions[1],
                    summary.vt_fractions[5],
                    summary.category_fractions["malicious"],
                    summary.category_fractions["malware"],
                    summary.category_fractions["phishing"],
                ]
            )
            threat_payload[group] = {
                "count": summary.count,
                "vt_fractions": summary.vt_fractions,
                "category_fractions": summary.category_fractions,
            }
        reporting.write_csv(stats_dir / "threat_summary.csv", header, rows)
        reporting.write_json(stats_dir / "threat_summary.json", threat_payload)

        first_report: dict[str, analysis.SpamMessage] = {}
        for message in sorted(messages, key=lambda m: (m.report_date, m.message_id)):
            for url in message.urls:
                first_report.setdefault(url, message)
        pairs = [
            urlintel.TimelinessPair(
                date_twitter=first_report[r.subject].report_date,
                date_vt=r.first_flag_date,
            )
            for r in url_reports
            if r.engine_positives >= 1
            and r.first_flag_date is not None
            and r.subject in first_report
        ]
        if pairs:
            gaps = urlintel.timeliness(pairs)
            reporting.write_csv(
                stats_dir / "timeliness.csv",
                ["threshold_days", "fraction"],
                sorted(gaps.items()),
            )
            reporting.write_json(
                stats_dir / "timeliness.json",
                {"pairs": len(pairs), "fractions": {str(k): v for k, v in gaps.items()}},
            )

    spam_tweets_path = Path(config.out_dir) / SPAM_TWEETS_FILE
    if spam_tweets_path.is_file():
        tweets = [corpus.record_from_dict(o) for o in _read_ndjson(spam_tweets_path)]
        stats = analysis.reporter_stats(tweets)
        reporting.write_json(
            stats_dir / "reporter_stats.json",
            {
                "authors": len(stats.author_counts),
                "fraction_single": stats.fraction_single,
                "fraction_under_five": stats.fraction_under_five,
                "fraction_over_fifty": stats.fraction_over_fifty,
            },
        )
        reporting.write_csv(
            stats_dir / "reporter_counts.csv",
            ["author_id", "reports"],
            sorted(stats.author_counts.items()),
        )
        if config.replies_path:
            replies = analysis.read_replies(
                _require(config.replies_path, "a replies file", "stats")
            )
            tag_rows = analysis.tag_reply_stats(tweets, replies)
            reporting.write_csv(
                stats_dir / "tag_reply.csv",
                ["handle", "tag_count", "replied_count", "reply_rate"],
                [[t.handle, t.tag_count, t.replied_count, t.reply_rate] for t in tag_rows],
            )
            reporting.write_json(
                stats_dir / "tag_reply.json",
                [
                    {
                        "handle": t.handle,
                        "tag_count": t.tag_count,
                        "replied_count": t.replied_count,
                        "reply_rate": t.reply_rate,
                    }
                    for t in tag_rows
                ],
            )

    campaigns_path = Path(config.out_dir) / CAMPAIGNS_FILE
    if campaigns_path.is_file():
        campaign_rows = _read_ndjson(campaigns_path)
        multilingual = [
            c
            for c in campaign_rows
            if len(set(c["languages"]) - {analysis.UNKNOWN_LANGUAGE}) >= 2
        ]
        reporting.write_json(
            stats_dir / "campaign_summary.json",
            {
                "campaigns": len(campaign_rows),
                "cross_language": len(multilingual),
                "cross_language_ids": [c["campaign_id"] for c in multilingual],
            },
        )

    groups = analysis.template_groups(messages)
    reporting.write_json(
        stats_dir / "template_groups.json",
        [
            {"size": len(g), "message_ids": sorted(m.message_id for m in g)}
            for g in groups
            if len(g) >= 2
        ],
    )

    _update_manifest(config, {}, {})
    return len(messages)


def run_eval(config: PipelineConfig) -> int:
    """Drive the anti-spam evaluation harness against fixture services."""
    twitter_pool_path = _require(
        config.eval_twitter_pool, "a twitter-reported eval pool", "eval"
    )
    historical_pool_path = _require(
        config.eval_historical_pool, "a historical eval pool", "eval"
    )
    antispam_path = _require(config.antispam_path, "an anti-spam fixture", "eval")
    eval_dir = Path(config.out_dir) / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)

    testset = evalharness.build_testset(
        evalharness.read_pool(twitter_pool_path),
        evalharness.read_pool(historical_pool_path),
        seed=config.seed,
    )
    _write_ndjson(
        eval_dir / "testset.ndjson",
        [evalharness.message_to_record(m) for m in testset],
    )

    clients = evalharness.load_antispam_fixtures(antispam_path)
    verdicts: list[evalharness.ServiceVerdict] = []
    for client in clients:
        verdicts.extend(evalharness.run_service(client, testset, config.score_cutoff))
    _write_ndjson(
        eval_dir / "verdicts.ndjson",
        [
            {
                "service_name": v.service_name,
                "tag_id": v.tag_id,
                "outcome": v.outcome.value,
                "raw_score": v.raw_score,
            }
            for v in verdicts
        ],
    )
    report = evalharness.detection_report(verdicts, testset)
    reporting.write_csv(
        eval_dir / "detection_rates.csv",
        reporting.SERVICE_REPORT_HEADER,
        reporting.service_report_rows(report.services),
    )
    reporting.write_json(
        eval_dir / "detection_rates.json",
        reporting.service_report_payload(report.services),
    )
    reporting.plot_service_rates(
        report.services,
        eval_dir / "detection_rates.png",
        "Anti-spam services: spam detected",
        "detection rate",
    )

    sent: list[evalharness.SentMessage] = []
    events: list[evalharness.DeliveryEvent] = []
    carrier_name = "simulated-carrier"
    if config.live_sends:
        # explicit opt-in path: real sends, delivery events from an external log
        if not config.bulk_sms_endpoint:
            raise ConfigError("live sends require bulk_sms_endpoint to be configured")
        sender = evalharness.HttpSmsSender(config.bulk_sms_endpoint)
        carrier_name = "bulk-sms-endpoint"
        for message in testset:
            sent_at = datetime.now(tz=timezone.utc)
            for segment in evalharness.chunk_message(message):
                sender.send("receiver-group", segment)
            sent.append(evalharness.SentMessage(message, sent_at))
        if config.delivery_events_path:
            events_path = _require(
                config.delivery_events_path, "a delivery event log", "eval"
            )
            events = [
                evalharness.DeliveryEvent(
                    receiver_id=str(o["receiver_id"]),
                    observed_tag_id=str(o["observed_tag_id"]),
                    observed_at=corpus.parse_rfc3339(o["observed_at"]),
                )
                for o in _read_ndjson(events_path)
            ]
    elif config.carrier_path:
        carrier = evalharness.SimulatedCarrier.from_file(
            _require(config.carrier_path, "a carrier fixture", "eval"), seed=config.seed
        )
        sent = evalharness.send_testset(testset, carrier)
        events = carrier.inbox
        _write_ndjson(
            eval_dir / "delivery_events.ndjson",
            [
                {
                    "receiver_id": e.receiver_id,
                    "observed_tag_id": e.observed_tag_id,
                    "observed_at": corpus.format_rfc3339(e.observed_at),
                }
                for e in events
            ],
        )
    if sent and (events or not config.live_sends):
        delivery, _ = evalharness.match_deliveries(sent, events)
        blocking = evalharness.blocking_report(delivery, testset, carrier_name)
        reporting.write_csv(
            eval_dir / "blocking_rates.csv",
            reporting.SERVICE_REPORT_HEADER,
            reporting.service_report_rows([blocking]),
        )
        reporting.write_json(
            eval_dir / "blocking_rates.json",
            reporting.service_report_payload([blocking]),
        )
        reporting.plot_service_rates(
            [blocking],
            eval_dir / "blocking_rates.png",
            "Bulk delivery: spam blocked",
            "blocking rate",
        )
    elif config.live_sends:
        logger.info("no delivery event log configured; blocking rates skipped")

    if config.benign_pool:
        benign_path = _require(config.benign_pool, "a benign pool", "eval")
        benign = [
            evalharness.TestMessage(
                tag_id=f"{900000 + i:06d}",
                text=str(obj["text"]),
                category=None,
                source=evalharness.Source.HISTORICAL,
                truth=evalharness.Truth.BENIGN,
            )
            for i, obj in enumerate(_read_ndjson(benign_path))
        ]
        rows = []
        payload = {}
        for client in clients:
            benign_verdicts = evalharness.run_service(client, benign, config.score_cutoff)
            rate = evalharness.mis_alarm_rate(benign_verdicts, benign)
            rows.append([client.service_name, evalharness.format_percent(rate, 2), len(benign)])
            payload[client.service_name] = {"rate": rate, "benign_total": len(benign)}
        reporting.write_csv(
            eval_dir / "mis_alarm.csv", ["service", "mis_alarm_rate", "benign_total"], rows
        )
        reporting.write_json(eval_dir / "mis_alarm.json", payload)

    _update_manifest(
        config,
        {"eval_testset": len(testset)},
        {
            "eval_twitter_pool": twitter_pool_path,
            "eval_historical_pool": historical_pool_path,
            "antispam": antispam_path,
        },
    )
    return len(testset)


def eval_configured(config: PipelineConfig) -> bool:
    return bool(
        config.eval_twitter_pool and config.eval_historical_pool and config.antispam_path
    )


def run_all(config: PipelineConfig) -> None:
    """Chain every stage in pipeline order; eval runs when its inputs exist."""
    run_ingest(config)
    run_extract(config)
    run_classify_train(config)
    run_classify(config)
    run_resolve_urls(config)
    run_enrich(config)
    run_cluster(config)
    run_stats(config)
    if eval_configured(config):
        run_eval(config)
    else:
        logger.info("eval inputs not configured; skipping eval stage")
