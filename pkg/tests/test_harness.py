import json
import threading
from fractions import Fraction
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from longctx.errors import ConfigurationError, EndpointError, IntegrityError
from longctx.evalgen import EvalCase, emit
from longctx.harness import (
    DEFAULT_BUCKET_THRESHOLDS,
    EndpointConfig,
    ResponseRecord,
    aggregate,
    heatmap_export,
    normalize,
    read_responses,
    run,
    score_all,
    score_case,
)


class MockHandler(BaseHTTPRequestHandler):
    """Scripted chat-completions endpoint.

    Echoes the passkey stated in the prompt; per-path behaviors simulate
    failures. The class-level counters let tests assert retry behavior.
    """

    hits = {}
    fail_first_n = 0  # per-case transient 500s before succeeding
    require_token = None

    def log_message(self, *args):
        pass

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        prompt = body["messages"][0]["content"]
        case_key = prompt[:64]
        n = MockHandler.hits.get(case_key, 0)
        MockHandler.hits[case_key] = n + 1

        if MockHandler.require_token is not None:
            auth = self.headers.get("Authorization", "")
            if auth != f"Bearer {MockHandler.require_token}":
                self.send_response(401)
                self.end_headers()
                return
        if self.path.endswith("/broken/chat/completions"):
            payload = {"unexpected": "shape"}
        elif n < MockHandler.fail_first_n:
            self.send_response(500)
            self.end_headers()
            return
        else:
            # answer with any 6-digit run found in the prompt
            digits = [w.strip(".") for w in prompt.split() if w.strip(".").isdigit()]
            answer = digits[0] if digits else "i do not know"
            payload = {"choices": [{"message": {"content": f"The pass key is {answer}."}}]}
        blob = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)


@pytest.fixture()
def mock_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), MockHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    MockHandler.hits = {}
    MockHandler.fail_first_n = 0
    MockHandler.require_token = None
    yield f"http://127.0.0.1:{server.server_address[1]}/v1"
    server.shutdown()


def make_cases(n=6):
    cases = []
    for i in range(n):
        key = str(100000 + i)
        cases.append(
            EvalCase(
                case_id=f"case-{i:03d}",
                task="passkey_single",
                target_length=1000 * (i + 1),
                depth_fractions=[i / max(n - 1, 1)],
                needles=[{"key": "pass key", "value": key}],
                prompt=f"Some filler text. The pass key is {key}. What is the pass key?",
                gold=[key],
            )
        )
    return cases


def config(url, **kw):
    defaults = dict(base_url=url, model_id="mock", max_concurrency=3,
                    retries=2, backoff_base=0.01, request_timeout=10.0)
    defaults.update(kw)
    return EndpointConfig(**defaults)


class TestRun:
    def test_all_cases_answered_and_ordered(self, mock_server, tmp_path):
        cases = make_cases()
        case_file = tmp_path / "cases.jsonl"
        emit(cases, case_file)
        out = tmp_path / "resp.jsonl"
        summary = run(case_file, config(mock_server), out)
        assert summary == {"cases": 6, "requested": 6, "skipped": 0, "errors": 0}
        recs = read_responses(out)
        assert sorted(recs) == [c.case_id for c in cases]
        ids_in_file = [json.loads(l)["case_id"] for l in out.read_text().splitlines()]
        assert ids_in_file == sorted(ids_in_file)
        for case in cases:
            assert case.gold[0] in recs[case.case_id].response_text

    def test_resume_skips_done(self, mock_server, tmp_path):
        cases = make_cases()
        case_file = tmp_path / "cases.jsonl"
        emit(cases, case_file)
        out = tmp_path / "resp.jsonl"
        run(case_file, config(mock_server), out)
        first = out.read_bytes()
        MockHandler.hits = {}
        summary = run(case_file, config(mock_server), out, resume=True)
        assert summary["requested"] == 0 and summary["skipped"] == 6
        assert MockHandler.hits == {}  # no network traffic on full resume
        # latency fields differ run to run, so idempotence is on content
        assert out.read_bytes() == first

    def test_partial_resume(self, mock_server, tmp_path):
        cases = make_cases()
        case_file = tmp_path / "cases.jsonl"
        emit(cases, case_file)
        out = tmp_path / "resp.jsonl"
        run(case_file, config(mock_server), out)
        lines = out.read_text().splitlines()
        out.write_text("\n".join(lines[:3]) + "\n")  # drop the last three
        summary = run(case_file, config(mock_server), out, resume=True)
        assert summary["requested"] == 3 and summary["skipped"] == 3
        assert len(read_responses(out)) == 6

    def test_retry_recovers_from_transient_500(self, mock_server, tmp_path):
        MockHandler.fail_first_n = 2
        cases = make_cases(2)
        case_file = tmp_path / "cases.jsonl"
        emit(cases, case_file)
        out = tmp_path / "resp.jsonl"
        summary = run(case_file, config(mock_server), out)
        assert summary["errors"] == 0
        assert all(n == 3 for n in MockHandler.hits.values())

    def test_exhausted_retries_yield_error_records(self, mock_server, tmp_path):
        MockHandler.fail_first_n = 100
        cases = make_cases(2)
        case_file = tmp_path / "cases.jsonl"
        emit(cases, case_file)
        out = tmp_path / "resp.jsonl"
        with pytest.raises(EndpointError):
            run(case_file, config(mock_server), out)
        recs = read_responses(out)
        assert all(r.status == "error" for r in recs.values())
        assert all(r.error_kind == "http_status:500" for r in recs.values())

    def test_bad_schema_error_kind(self, mock_server, tmp_path):
        cases = make_cases(1)
        case_file = tmp_path / "cases.jsonl"
        emit(cases, case_file)
        out = tmp_path / "resp.jsonl"
        url = mock_server.rsplit("/v1", 1)[0] + "/broken"
        with pytest.raises(EndpointError):
            run(case_file, config(url), out)
        recs = read_responses(out)
        assert recs["case-000"].error_kind == "bad_response_schema"

    def test_transport_error_kind(self, tmp_path):
        cases = make_cases(1)
        case_file = tmp_path / "cases.jsonl"
        emit(cases, case_file)
        out = tmp_path / "resp.jsonl"
        cfg = config("http://127.0.0.1:9", retries=0)
        with pytest.raises(EndpointError):
            run(case_file, cfg, out)
        rec = read_responses(out)["case-000"]
        assert rec.error_kind.startswith("transport:")

    def test_bearer_token_sent(self, mock_server, tmp_path, monkeypatch):
        MockHandler.require_token = "sk-test"
        monkeypatch.setenv("MOCK_API_KEY", "sk-test")
        cases = make_cases(1)
        case_file = tmp_path / "cases.jsonl"
        emit(cases, case_file)
        out = tmp_path / "resp.jsonl"
        summary = run(case_file, config(mock_server, auth_env_var="MOCK_API_KEY"), out)
        assert summary["errors"] == 0

    def test_missing_auth_env_fails_fast(self, tmp_path, monkeypatch):
        monkeypatch.delenv("MISSING_KEY_VAR", raising=False)
        cases = make_cases(1)
        case_file = tmp_path / "cases.jsonl"
        emit(cases, case_file)
        cfg = config("http://127.0.0.1:9", auth_env_var="MISSING_KEY_VAR")
        with pytest.raises(ConfigurationError):
            run(case_file, cfg, tmp_path / "resp.jsonl")

    def test_duplicate_case_ids_rejected(self, tmp_path):
        cases = make_cases(2)
        cases[1].case_id = cases[0].case_id
        case_file = tmp_path / "cases.jsonl"
        emit(cases, case_file)
        with pytest.raises(IntegrityError):
            run(case_file, config("http://127.0.0.1:9"), tmp_path / "r.jsonl")


class TestScoring:
    def test_exact_recall_fractions(self):
        case = make_cases(1)[0]
        case.gold = ["111111", "222222", "333333"]
        rec = ResponseRecord(case.case_id, "found 111111 and 333333 here")
        assert score_case(case, rec) == Fraction(2, 3)

    def test_whitespace_normalization(self):
        case = make_cases(1)[0]
        rec = ResponseRecord(case.case_id, "the\n key :  100000 \t end")
        assert normalize(rec.response_text) == "the key : 100000 end"
        assert score_case(case, rec) == Fraction(1)

    def test_error_scores_zero(self):
        case = make_cases(1)[0]
        rec = ResponseRecord(case.case_id, "", status="error", error_kind="x")
        assert score_case(case, rec) == Fraction(0)

    def test_id_mismatch(self):
        case = make_cases(1)[0]
        with pytest.raises(IntegrityError):
            score_case(case, ResponseRecord("other"))

    def test_score_all_missing_response(self):
        cases = make_cases(2)
        responses = {cases[0].case_id: ResponseRecord(cases[0].case_id, "x")}
        with pytest.raises(IntegrityError):
            score_all(cases, responses)


class TestAggregate:
    def per_case(self):
        rows = []
        for i, (length, score) in enumerate(
            [(100_000, 1), (100_000, 0), (400_000, 1), (900_000, 0), (2_000_000, 1)]
        ):
            rows.append(
                {"case_id": f"c{i}", "target_length": length, "depth": 0.5,
                 "score": Fraction(score)}
            )
        return rows

    def test_bucket_membership_is_at_most_threshold(self):
        report = aggregate(self.per_case())
        assert report.bucket_averages[131072] == Fraction(1, 2)
        assert report.bucket_averages[524288] == Fraction(2, 3)
        assert report.bucket_averages[1048576] == Fraction(1, 2)
        assert report.overall == Fraction(3, 5)

    def test_default_thresholds_present(self):
        report = aggregate(self.per_case())
        assert report.thresholds == DEFAULT_BUCKET_THRESHOLDS

    def test_empty_bucket_omitted(self):
        rows = [{"case_id": "c", "target_length": 300_000, "depth": 0.5,
                 "score": Fraction(1)}]
        report = aggregate(rows)
        assert 131072 not in report.bucket_averages
        assert report.bucket_averages[524288] == Fraction(1)

    def test_matches_bruteforce(self):
        rows = self.per_case()
        report = aggregate(rows)
        for t in report.thresholds:
            member = [r["score"] for r in rows if r["target_length"] <= t]
            if member:
                assert report.bucket_averages[t] == sum(member) / len(member)

    def test_empty_input(self):
        with pytest.raises(ConfigurationError):
            aggregate([])


class TestHeatmap:
    def test_shape_and_values(self, tmp_path):
        rows = []
        for length in (100, 200):
            for depth in (0.0, 1.0):
                rows.append({"case_id": f"c{length}{depth}", "target_length": length,
                             "depth": depth, "score": Fraction(1, 3)})
        report = aggregate(rows)
        path = tmp_path / "heat.tsv"
        heatmap_export(report, path)
        lines = path.read_text().splitlines()
        assert lines[0].split("\t") == ["depth\\length", "100", "200"]
        assert len(lines) == 3  # header + 2 depth rows
        assert lines[1].split("\t") == ["0.0000", "0.3333", "0.3333"]
