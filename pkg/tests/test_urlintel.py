from __future__ import annotations

import threading
from datetime import date
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from smsintel.urlintel import (
    ExtractedUrl,
    FixtureThreatClient,
    HttpClient,
    Termination,
    ThreatReport,
    TimelinessPair,
    UrlResolution,
    aggregate_threat,
    default_shorteners,
    enrich_subjects,
    extract_urls,
    fqdn_of,
    is_shortener,
    normalize_url,
    read_resolution_cache,
    resolve,
    shortener_share,
    timeliness,
    write_resolution_cache,
)


class ScriptedClient:
    """Mock redirect client: url -> (status, location)."""

    def __init__(self, responses: dict[str, tuple[int, str | None]]):
        self.responses = responses
        self.calls: list[str] = []

    def head_or_get(self, url, timeout=None):
        self.calls.append(url)
        return self.responses[url]


class TestExtractUrls:
    def test_bare_shortener_path(self):
        urls = extract_urls("Donate: bit.ly/3ipuQPr")
        assert [u.normalized for u in urls] == ["http://bit.ly/3ipuQPr"]
        assert urls[0].raw == "bit.ly/3ipuQPr"

    def test_no_url_like_substring(self):
        assert extract_urls("call me tomorrow at noon") == []

    def test_trailing_punctuation_stripped(self):
        urls = extract_urls("visit https://a.example/x.")
        assert [u.normalized for u in urls] == ["https://a.example/x"]

    def test_duplicates_kept_once(self):
        urls = extract_urls("go http://a.com/x then http://a.com/x again")
        assert len(urls) == 1

    def test_order_of_appearance(self):
        urls = extract_urls("first b.com/1 then https://a.com/2")
        assert [u.normalized for u in urls] == ["http://b.com/1", "https://a.com/2"]

    def test_unknown_suffix_not_extracted(self):
        assert extract_urls("see example.zzzz/path") == []

    def test_raw_occurs_verbatim_in_text(self):
        text = 'Alert: https://x.com/a, (bit.ly/b2) and "t.co/c".'
        for found in extract_urls(text):
            assert found.raw in text

    def test_source_message_id_carried(self):
        [u] = extract_urls("x.co/q", source_message_id="m9")
        assert u == ExtractedUrl("x.co/q", "http://x.co/q", "m9")

    def test_normalization_rules(self):
        assert normalize_url("HTTP://A.B/") == "http://a.b"
        assert normalize_url("http://a.b:80/p") == "http://a.b/p"
        assert normalize_url("https://a.b:443/p?q=1") == "https://a.b/p?q=1"
        assert normalize_url("https://a.b:8443/p") == "https://a.b:8443/p"
        assert normalize_url("a.b/Path") == "http://a.b/Path"


class TestShorteners:
    def test_known_shortener(self):
        assert is_shortener("bit.ly")

    def test_regular_domain(self):
        assert not is_shortener("example.com")

    def test_case_insensitive(self):
        assert is_shortener("BIT.LY")

    def test_default_set_has_twenty_hosts(self):
        assert len(default_shorteners()) == 20

    def test_share(self):
        urls = ["http://bit.ly/a", "http://x.co/b"] + [
            f"http://site{i}.com/x" for i in range(6)
        ]
        assert shortener_share(urls) == 0.25
        assert shortener_share(["http://bit.ly/a"]) == 1.0
        assert shortener_share(["http://plain.com/a"]) == 0.0
        with pytest.raises(ValueError):
            shortener_share([])


class TestFqdn:
    def test_host_with_subdomain(self):
        assert fqdn_of("https://5d6986714c90.ngrok.io/sbiban/") == "5d6986714c90.ngrok.io"

    def test_ip_literal(self):
        assert fqdn_of("http://217.138.118.54") == "217.138.118.54"

    def test_case_folding(self):
        assert fqdn_of("HTTP://A.B/") == "a.b"

    def test_port_stripped(self):
        assert fqdn_of("http://a.b:8080/x") == "a.b"

    def test_hostless_rejected(self):
        with pytest.raises(ValueError):
            fqdn_of("mailto:user@example.com")

    def test_idempotent_through_reconstruction(self):
        for url in ("https://Sub.Host.io:444/p?q", "http://1.2.3.4/x", "bit.ly/q"):
            host = fqdn_of(url)
            assert fqdn_of("http://" + host + "/") == host


class TestResolve:
    def test_two_hop_chain(self):
        client = ScriptedClient(
            {
                "http://a/": (301, "http://b/"),
                "http://b/": (302, "http://c/"),
                "http://c/": (200, None),
            }
        )
        result = resolve("http://a/", client)
        assert result.chain == ["http://a/", "http://b/", "http://c/"]
        assert result.hop_count == 2
        assert result.terminated_by is Termination.NO_MORE_REDIRECTS
        assert result.final_status == 200
        assert result.final_url == "http://c/"

    def test_direct_200(self):
        client = ScriptedClient({"http://a/": (200, None)})
        result = resolve("http://a/", client)
        assert result.chain == ["http://a/"]
        assert result.hop_count == 0

    def test_loop_detection(self):
        client = ScriptedClient(
            {"http://a/": (302, "http://b/"), "http://b/": (302, "http://a/")}
        )
        result = resolve("http://a/", client)
        assert result.chain == ["http://a/", "http://b/", "http://a/"]
        assert result.terminated_by is Termination.LOOP_DETECTED
        assert result.chain[-1] in result.chain[:-1]
        assert result.final_url is None

    def test_relative_location_resolved(self):
        client = ScriptedClient(
            {
                "http://h.com/a": (302, "/b"),
                "http://h.com/b": (302, "c"),
                "http://h.com/c": (200, None),
            }
        )
        result = resolve("http://h.com/a", client)
        assert result.chain == ["http://h.com/a", "http://h.com/b", "http://h.com/c"]

    def test_max_hops_cap(self):
        responses = {f"http://u{i}/": (302, f"http://u{i + 1}/") for i in range(30)}
        client = ScriptedClient(responses)
        result = resolve("http://u0/", client, max_hops=10)
        assert result.terminated_by is Termination.MAX_HOPS
        assert result.hop_count == 10
        assert len(result.chain) == 11

    def test_redirect_without_location_terminates(self):
        client = ScriptedClient({"http://a/": (302, None)})
        result = resolve("http://a/", client)
        assert result.terminated_by is Termination.NO_MORE_REDIRECTS
        assert result.final_status == 302

    def test_timeout_and_network_error_encoded(self):
        class Exploding:
            def __init__(self, exc):
                self.exc = exc

            def head_or_get(self, url, timeout=None):
                raise self.exc

        timed_out = resolve("http://a/", Exploding(TimeoutError("slow")))
        assert timed_out.terminated_by is Termination.TIMEOUT
        failed = resolve("http://a/", Exploding(ConnectionError("refused")))
        assert failed.terminated_by is Termination.NETWORK_ERROR
        assert failed.chain == ["http://a/"]

    def test_cache_round_trip(self, tmp_path):
        resolutions = [
            UrlResolution(["http://a/", "http://b/"], 200, Termination.NO_MORE_REDIRECTS),
            UrlResolution(["http://x/"], "timeout", Termination.TIMEOUT),
        ]
        path = tmp_path / "cache.ndjson"
        write_resolution_cache(resolutions, path)
        cache = read_resolution_cache(path)
        assert cache["http://a/"].final_url == "http://b/"
        assert cache["http://x/"].terminated_by is Termination.TIMEOUT


class _RedirectHandler(BaseHTTPRequestHandler):
    """Scripted redirect topology for exercising the live HTTP client."""

    def _respond(self):
        path = self.path
        if path.startswith("/chain/"):
            n = int(path.rsplit("/", 1)[1])
            if n == 0:
                self.send_response(200)
                self.end_headers()
            else:
                self.send_response(302)
                self.send_header("Location", f"/chain/{n - 1}")
                self.end_headers()
        elif path == "/loop/a":
            self.send_response(301)
            self.send_header("Location", "/loop/b")
            self.end_headers()
        elif path == "/loop/b":
            self.send_response(301)
            self.send_header("Location", "/loop/a")
            self.end_headers()
        else:
            self.send_response(404)
            self.end_headers()

    do_GET = _respond
    do_HEAD = _respond

    def log_message(self, *args):  # keep test output quiet
        pass


@pytest.fixture(scope="module")
def redirect_server():
    server = HTTPServer(("127.0.0.1", 0), _RedirectHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestHttpClientAgainstLocalServer:
    def test_chains_of_zero_to_five_hops(self, redirect_server):
        client = HttpClient()
        for hops in range(6):
            result = resolve(f"{redirect_server}/chain/{hops}", client)
            assert result.terminated_by is Termination.NO_MORE_REDIRECTS
            assert result.hop_count == hops
            assert result.final_status == 200
            assert result.chain[-1] == f"{redirect_server}/chain/0"

    def test_loop_detected_on_two_cycle(self, redirect_server):
        result = resolve(f"{redirect_server}/loop/a", HttpClient())
        assert result.terminated_by is Termination.LOOP_DETECTED
        assert result.chain[-1] == result.chain[0]

    def test_max_hops_fires_at_ten(self, redirect_server):
        result = resolve(f"{redirect_server}/chain/30", HttpClient(), max_hops=10)
        assert result.terminated_by is Termination.MAX_HOPS
        assert result.hop_count == 10


class TestHttpThreatClient:
    def test_requires_api_key_env(self, monkeypatch):
        from smsintel.urlintel import HttpThreatClient

        monkeypatch.delenv(HttpThreatClient.KEY_ENV, raising=False)
        with pytest.raises(RuntimeError, match="THREAT_API_KEY"):
            HttpThreatClient("https://ti.example")

    def test_lookup_against_scripted_server(self, monkeypatch):
        import json as jsonlib
        from smsintel.urlintel import HttpThreatClient

        class _TiHandler(BaseHTTPRequestHandler):
            def do_GET(self):
                if "subject=http%3A%2F%2Fbad.example%2Fx" in self.path:
                    body = jsonlib.dumps(
                        {
                            "subject": "http://bad.example/x",
                            "positives": 6,
                            "total": 83,
                            "categories": ["phishing"],
                            "first_flag_date": "2021-03-04",
                        }
                    ).encode()
                    self.send_response(200)
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                else:
                    self.send_response(404)
                    self.end_headers()

            def log_message(self, *args):
                pass

        server = HTTPServer(("127.0.0.1", 0), _TiHandler)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        monkeypatch.setenv(HttpThreatClient.KEY_ENV, "test-key")
        try:
            client = HttpThreatClient(f"http://127.0.0.1:{server.server_port}")
            report = client.lookup("http://bad.example/x")
            assert report is not None
            assert report.engine_positives == 6
            assert report.first_flag_date == date(2021, 3, 4)
            assert client.lookup("http://unknown.example/") is None
        finally:
            server.shutdown()


class TestThreatAggregation:
    def test_hand_counted_fractions(self):
        reports = [
            ThreatReport(f"u{i}", positives)
            for i, positives in enumerate([0, 1, 5, 7])
        ]
        summary = aggregate_threat(reports)
        assert summary.vt_fractions[1] == 0.75
        assert summary.vt_fractions[5] == 0.5

    def test_all_zero(self):
        reports = [ThreatReport(f"u{i}", 0) for i in range(4)]
        summary = aggregate_threat(reports)
        assert all(v == 0.0 for v in summary.vt_fractions.values())
        assert all(v == 0.0 for v in summary.category_fractions.values())

    def test_categories_counted_by_presence(self):
        reports = [
            ThreatReport("a", 6, categories=frozenset({"phishing", "malicious"})),
            ThreatReport("b", 2, categories=frozenset({"phishing"})),
            ThreatReport("c", 0),
            ThreatReport("d", 0),
        ]
        summary = aggregate_threat(reports)
        assert summary.category_fractions["phishing"] == 0.5
        assert summary.category_fractions["malicious"] == 0.25
        assert summary.category_fractions["malware"] == 0.0

    def test_antitone_in_k(self):
        reports = [ThreatReport(f"u{i}", i % 9) for i in range(40)]
        summary = aggregate_threat(reports, k_thresholds=(1, 3, 5, 8))
        values = [summary.vt_fractions[k] for k in (1, 3, 5, 8)]
        assert values == sorted(values, reverse=True)

    def test_missing_lookups_count_in_denominator(self):
        client = FixtureThreatClient.__new__(FixtureThreatClient)
        client._by_subject = {"known": ThreatReport("known", 6)}
        reports = enrich_subjects(["known", "unknown-a", "unknown-b", "unknown-c"], client)
        summary = aggregate_threat(reports)
        assert summary.count == 4
        assert summary.vt_fractions[5] == 0.25

    def test_positives_bounds_enforced(self):
        with pytest.raises(ValueError):
            ThreatReport("u", 90)
        with pytest.raises(ValueError):
            ThreatReport("u", -1)


class TestTimeliness:
    def test_same_day(self):
        pair = TimelinessPair(date(2021, 5, 1), date(2021, 5, 1))
        fractions = timeliness([pair], thresholds=(0, 1))
        assert fractions == {0: 1.0, 1: 0.0}

    def test_hand_counted_gaps(self):
        base = date(2021, 1, 10)
        pairs = [
            TimelinessPair(base, date(2021, 1, 8)),   # -2
            TimelinessPair(base, date(2021, 1, 10)),  # 0
            TimelinessPair(base, date(2021, 1, 18)),  # +8
        ]
        fractions = timeliness(pairs, thresholds=(-1, 1, 7))
        assert fractions[-1] == pytest.approx(2 / 3)
        assert fractions[1] == pytest.approx(1 / 3)
        assert fractions[7] == pytest.approx(1 / 3)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            timeliness([])

    def test_antitone_across_thresholds(self):
        base = date(2021, 1, 10)
        pairs = [
            TimelinessPair(base, base.replace(day=10 + d) if d >= 0 else date(2021, 1, 10 + d))
            for d in (-7, -3, -1, 0, 0, 1, 2, 7, 14, 20)
        ]
        fractions = timeliness(pairs)
        ordered = [fractions[d] for d in (-7, -1, 0, 1, 7)]
        assert ordered == sorted(ordered, reverse=True)
